"""Error-bound formulas, geometry estimates and the minimax packing machinery.

Rate formulas follow the constant-one convention: wherever a bound hides
an absolute constant, ``constant`` defaults to 1.  Logarithms are natural.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .dense import RngStream
from .errors import TnlassoError
from .norms import Regime, op_norm_1to2, tnorm_upper


def _require_nonneg(**values):
    for name, v in values.items():
        if not (v >= 0 and math.isfinite(v)):
            raise ValueError(f"{name} must be a finite nonnegative number, got {v!r}")


def _require_pos(**values):
    for name, v in values.items():
        if not (v > 0 and math.isfinite(v)):
            raise ValueError(f"{name} must be a finite positive number, got {v!r}")


# --------------------------------------------------------------------------
# closed-form bounds


def eval_prop1_bound(alpha, sigma, theta, gamma_cap, R, zeta):
    """``4 a^2 theta + 4 a s Gamma + 2 pi a s sqrt(2 ln(2/zeta) (theta + R^2))``."""
    _require_nonneg(alpha=alpha, sigma=sigma, theta=theta, gamma_cap=gamma_cap, R=R)
    if not 0.0 < zeta < 1.0:
        raise ValueError("zeta must lie in (0, 1)")
    return (4.0 * alpha**2 * theta
            + 4.0 * alpha * sigma * gamma_cap
            + 2.0 * math.pi * alpha * sigma * math.sqrt(2.0 * math.log(2.0 / zeta) * (theta + R**2)))


def eval_thm2_rate(alpha, sigma, d1, d2, L, r, constant=1.0, log_ld2=None, log_dsum=None):
    """Sketching error rate

        (alpha^2 / d1) * max(1, sigma sqrt(L ln(L d2)) / alpha)
                       * sqrt(r (d1 + d2) ln^4(d1 + d2) / (L d2))

    times ``constant``.  ``log_ld2`` and ``log_dsum`` override ``ln(L d2)``
    and ``ln(d1 + d2)``, which makes the pure power-law dependence on
    ``L`` visible.
    """
    _require_pos(alpha=alpha, d1=d1, d2=d2, L=L, r=r)
    _require_nonneg(sigma=sigma)
    lld = math.log(L * d2) if log_ld2 is None else log_ld2
    lds = math.log(d1 + d2) if log_dsum is None else log_dsum
    noise = max(1.0, sigma * math.sqrt(L * lld) / alpha)
    return constant * (alpha**2 / d1) * noise * math.sqrt(r * (d1 + d2) * lds**4 / (L * d2))


@dataclass
class MinimaxValue:
    value: float
    value_many_measurements: float | None
    conditions_met: bool
    warning: str = ""


def minimax_conditions(alpha, sigma, d1, d2, r):
    """Parameter window ``48 a^2 / (d1 v d2) <= a^2 r <= s^2 d1 d2 / 128``."""
    low = 48.0 * alpha**2 / max(d1, d2)
    mid = alpha**2 * r
    high = sigma**2 * d1 * d2 / 128.0
    return low <= mid <= high


def eval_minimax_lower(alpha, sigma, L, d1, d2, r):
    """Minimax lower bound on the squared Frobenius risk per row:

        alpha^2 / (16 d1) * min(1, (sigma sqrt(L) / alpha) sqrt(r (d1 + d2) / (L d2)))

    The simplified form used when ``L d2 > r (d1 + d2)`` is reported as
    ``value_many_measurements`` (``None`` otherwise).  Parameters outside
    the validity window are still evaluated but flagged.
    """
    _require_pos(alpha=alpha, sigma=sigma, L=L, d1=d1, d2=d2, r=r)
    ratio = math.sqrt(r * (d1 + d2) / (L * d2))
    snr_term = sigma * math.sqrt(L) / alpha
    value = alpha**2 / (16.0 * d1) * min(1.0, snr_term * ratio)
    many = None
    if L * d2 > r * (d1 + d2):
        many = alpha**2 / (16.0 * d1) * ratio * min(1.0, snr_term)
    ok = minimax_conditions(alpha, sigma, d1, d2, r)
    warning = "" if ok else "parameters outside the window where the lower bound is proven"
    return MinimaxValue(value, many, ok, warning)


# --------------------------------------------------------------------------
# packing set, KL divergence, Fano


def packing_log_target(d1, d2, r, gamma):
    """Natural log of the packing size ``exp(r (d1 v d2) / (16 gamma^2))``."""
    return r * max(d1, d2) / (16.0 * gamma**2)


def packing_target(d1, d2, r, gamma):
    """``ceil(exp(r (d1 v d2) / (16 gamma^2)))`` as an exact integer."""
    x = packing_log_target(d1, d2, r, gamma)
    if x > 700:
        return math.inf
    return math.ceil(math.exp(x))


def packing_block_rows(r, gamma):
    b = r / gamma**2
    B = round(b)
    if B < 1 or abs(b - B) > 1e-9 * max(1.0, b):
        raise ValueError(f"r / gamma^2 = {b} must be a positive integer")
    return B


@dataclass
class PackingSet:
    matrices: list
    gamma: float
    alpha: float
    r: int
    B: int
    d1: int
    d2: int
    log_target: float
    min_sep_sq: float
    mean_sep_sq: float
    max_sep_sq: float
    redraws: int

    @property
    def target(self):
        return packing_target(self.d1, self.d2, self.r, self.gamma)

    def stats(self):
        return {"count": len(self.matrices), "gamma": self.gamma, "alpha": self.alpha,
                "r": self.r, "B": self.B, "d1": self.d1, "d2": self.d2,
                "log_target": self.log_target, "min_sep_sq": self.min_sep_sq,
                "mean_sep_sq": self.mean_sep_sq, "max_sep_sq": self.max_sep_sq,
                "required_sep_sq": self.gamma**2 * self.alpha**2 * self.d2 / 2.0,
                "redraws": self.redraws}


class PackingError(TnlassoError):
    def __init__(self, achieved, required):
        super().__init__(f"packing separation {achieved:.6g} below required {required:.6g}")
        self.achieved = achieved
        self.required = required


def _pairwise_sq(mats):
    """Squared distances of all unordered pairs, from explicit differences."""
    flat = np.stack([m.ravel() for m in mats])
    out = [np.sum((flat[i + 1:] - flat[i]) ** 2, axis=1) for i in range(len(flat) - 1)]
    return np.concatenate(out) if out else np.zeros(0)


def build_packing(d1, d2, r, gamma, alpha, count, rng, max_redraws=10):
    """Random sign matrices, entries ``+-gamma alpha / sqrt(d1)``, whose rows
    repeat with period ``B = r / gamma^2``.

    The whole set is redrawn (at most ``max_redraws`` times) until its
    minimum pairwise squared distance reaches ``gamma^2 alpha^2 d2 / 2``.
    """
    _require_pos(gamma=gamma, alpha=alpha)
    B = packing_block_rows(r, gamma)
    if B > min(d1, d2):
        raise ValueError("need r <= gamma^2 min(d1, d2)")
    if count < 1 or count > packing_target(d1, d2, r, gamma):
        raise ValueError("count must lie between 1 and the packing target size")
    entry = gamma * alpha / math.sqrt(d1)
    required = gamma**2 * alpha**2 * d2 / 2.0
    period = np.arange(d1) % B
    best_min = -math.inf
    for attempt in range(max_redraws + 1):
        draw = rng.child(f"draw{attempt}")
        mats = [entry * draw.signs((B, d2))[period] for _ in range(count)]
        seps = _pairwise_sq(mats) if count > 1 else np.array([math.inf])
        smin = float(seps.min())
        best_min = max(best_min, smin)
        if smin >= required:
            finite = seps[np.isfinite(seps)]
            return PackingSet(mats, gamma, alpha, r, B, d1, d2,
                              packing_log_target(d1, d2, r, gamma), smin,
                              float(finite.mean()) if finite.size else math.inf,
                              float(finite.max()) if finite.size else math.inf, attempt)
    raise PackingError(best_min, required)


def minimax_gamma_sq(alpha, sigma, d1, d2, r):
    """``gamma^2`` used in the lower-bound argument: 1 when the noise is large
    enough, ``sqrt(sigma^2 r (d1 v d2) / (128 alpha^2 d2))`` otherwise."""
    x = sigma**2 * r * max(d1, d2) / (128.0 * alpha**2 * d2)
    return 1.0 if x >= 1.0 else math.sqrt(x)


def kl_divergence(ens, Mj, Mj2, sigma):
    """``||A(Mj - Mj2)||^2 / (2 sigma^2)`` for the realised ensemble."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    v = ens.apply(np.asarray(Mj, dtype=float) - np.asarray(Mj2, dtype=float))
    return float(v @ v) / (2.0 * sigma**2)


def expected_kl(ens, Mj, Mj2, sigma):
    """KL divergence averaged over the random draw of the ensemble."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    D = np.asarray(Mj, dtype=float) - np.asarray(Mj2, dtype=float)
    return ens.expected_sq_norm(D) / (2.0 * sigma**2)


def fano_lower(packing, ens, sigma):
    """``max(0, 1 - (mean pairwise expected KL + ln 2) / ln(target size))``."""
    mats = packing.matrices
    if len(mats) < 2:
        raise ValueError("need at least two matrices")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    seps = _pairwise_sq(mats)
    if np.any(seps == 0.0):
        raise ValueError("packing contains identical matrices")
    mean_kl = ens.expected_gain * float(seps.mean()) / (2.0 * sigma**2)
    return max(0.0, 1.0 - (mean_kl + math.log(2.0)) / packing.log_target)


# --------------------------------------------------------------------------
# geometry of the constraint set


@dataclass
class GeometryEstimate:
    theta_hat: float = 0.0
    gamma_hat: float = 0.0
    gamma_se: float = 0.0
    R: float = 0.0
    R_upper: float = 0.0
    samples: int = 0
    trials: int = 0
    ascent_iters: int = 0
    seed: int = 0
    extra: dict = field(default_factory=dict)

    def to_record(self):
        return {k: getattr(self, k) for k in
                ("theta_hat", "gamma_hat", "gamma_se", "R", "R_upper",
                 "samples", "trials", "ascent_iters", "seed")}


def _into_ball(M, spec):
    """Scale ``M`` onto the boundary of a certified inner region of the ball."""
    up = tnorm_upper(M, spec)
    if up == 0.0:
        return M
    return M * (spec.alpha / up)


def _truncate(M, r):
    # inner loop of the ascent: LAPACK rather than the Jacobi routine
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    k = min(r, len(s))
    return (U[:, :k] * s[:k]) @ Vt[:k]


def _candidate(d1, d2, spec, rng):
    r = int(rng.integers(1, spec.rank_param + 1))
    r = min(r, d1, d2)
    U = rng.normal((d1, r))
    V = rng.normal((d2, r))
    if spec.kind is Regime.MAX:
        # flat factors reach further into the entrywise ball
        U, V = np.sign(U) + 0.1 * U, np.sign(V) + 0.1 * V
    return _into_ball(U @ V.T, spec)


def _ascend(M, value_and_grad, spec, iters, step):
    """Gradient ascent with rank truncation; steps that do not improve are
    rejected and the step is halved."""
    val, grad = value_and_grad(M)
    for _ in range(iters):
        trial = _into_ball(_truncate(M + step * grad, spec.rank_param), spec)
        tval, tgrad = value_and_grad(trial)
        if tval > val:
            M, val, grad = trial, tval, tgrad
            step *= 1.5
        else:
            step *= 0.5
            if step < 1e-12:
                break
    return M, val


def theta_objective(ens, M):
    """``| w sum_k <A_k, M>^2 - ||M||_F^2 |`` with the ensemble's isotropy weight."""
    v = ens.apply(M)
    return abs(ens.isotropy_weight * float(v @ v) - float(np.sum(M * M)))


def estimate_theta(ens, spec, samples=16, ascent_iters=30, rng=None):
    """Lower estimate of the deviation ``sup | w ||A(M)||^2 - ||M||_F^2 |``
    over the ball ``tnorm(M, spec) <= spec.alpha``.

    Every evaluated point is certified to lie in the ball, so the result is
    a lower bound on the supremum.  Candidate ``i`` comes from its own
    child stream, so the estimate never decreases as ``samples`` grows.
    """
    rng = rng or RngStream(0, "theta")
    w = ens.isotropy_weight

    def value_and_grad(M):
        v = ens.apply(M)
        dev = w * float(v @ v) - float(np.sum(M * M))
        g = 2.0 * (w * ens.adjoint(v) - M)
        return abs(dev), (g if dev >= 0 else -g)

    best = 0.0
    for i in range(samples):
        M0 = _candidate(ens.d1, ens.d2, spec, rng.child(f"cand{i}"))
        fro = math.sqrt(float(np.sum(M0 * M0))) or 1.0
        _, val = _ascend(M0, value_and_grad, spec, ascent_iters, 0.1 * fro)
        best = max(best, val)
    return best


def _gamma_one(X, spec, samples, ascent_iters, rng):
    def value_and_grad(M):
        return float(np.sum(X * M)), X

    starts = [_into_ball(_truncate(X, spec.rank_param), spec)]
    if spec.kind is Regime.MIXED:
        norms = np.sqrt(np.sum(X * X, axis=0))
        starts.append(_into_ball(X / np.maximum(norms, 1e-300), spec))
    else:
        starts.append(_into_ball(np.sign(X), spec))
    for i in range(samples):
        starts.append(_candidate(X.shape[0], X.shape[1], spec, rng.child(f"cand{i}")))
    best = 0.0
    for k, M0 in enumerate(starts):
        if not np.any(M0):
            continue
        # the functional is odd, so the better sign is free
        if float(np.sum(X * M0)) < 0:
            M0 = -M0
        fro = math.sqrt(float(np.sum(M0 * M0)))
        _, val = _ascend(M0, value_and_grad, spec, ascent_iters,
                         0.1 * fro / max(math.sqrt(float(np.sum(X * X))), 1e-300))
        best = max(best, val)
    return best


def estimate_gamma(ens, spec, trials=8, samples=8, ascent_iters=30, rng=None):
    """Mean over Gaussian draws ``g`` of a lower estimate of the dual norm
    of ``sum_k g_k A_k``, with its standard error.

    The dual norm is evaluated through its variational form as a maximum
    of ``<X, M>`` over certified members ``M`` of the ball.
    """
    rng = rng or RngStream(0, "gamma")
    vals = []
    for t in range(trials):
        g = rng.child(f"g{t}").normal(ens.n)
        X = ens.adjoint(g)
        vals.append(_gamma_one(X, spec, samples, ascent_iters, rng.child(f"search{t}")))
    vals = np.asarray(vals)
    se = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
    return float(vals.mean()), se


def estimate_R(spec, d1, d2, samples=0, rng=None):
    """Frobenius radius of the ball ``tnorm(M, spec) <= spec.alpha``.

    Returns ``(lower, upper)``.  The upper value is the closed-form cap
    ``sqrt(d2) alpha`` (mixed) or ``sqrt(d1 d2) alpha`` (max); the lower
    value is the best certified member found, which includes a rank-one
    matrix attaining the cap.
    """
    a = spec.alpha
    if spec.kind is Regime.MIXED:
        upper = math.sqrt(d2) * a
        # unit vector times the all-ones row: every column has norm alpha and
        # the factor product is alpha, so the point is in the ball
        extremal = np.outer(np.full(d1, 1.0 / math.sqrt(d1)), np.ones(d2)) * a
    else:
        upper = math.sqrt(d1 * d2) * a
        extremal = np.full((d1, d2), a)
    cands = [extremal]
    if samples:
        rng = rng or RngStream(0, "radius")
        cands += [_candidate(d1, d2, spec, rng.child(f"cand{i}")) for i in range(samples)]
    lower = 0.0
    for M in cands:
        if tnorm_upper(M, spec) <= a * (1 + 1e-12):
            lower = max(lower, float(np.linalg.norm(M)))
    return lower, upper


def estimate_geometry(ens, spec, samples=16, trials=8, ascent_iters=30, seed=0):
    rng = RngStream(seed, "geometry")
    theta = estimate_theta(ens, spec, samples, ascent_iters, rng.child("theta"))
    gamma, se = estimate_gamma(ens, spec, trials, samples, ascent_iters, rng.child("gamma"))
    lo, hi = estimate_R(spec, ens.d1, ens.d2)
    return GeometryEstimate(theta, gamma, se, lo, hi, samples, trials, ascent_iters, seed)


def spikiness(M):
    """``sqrt(d2) ||M||_{1->2} / ||M||_F``; between 1 and ``sqrt(d2)``."""
    M = np.asarray(M, dtype=float)
    fro = float(np.linalg.norm(M))
    if fro == 0.0:
        raise ValueError("spikiness of the zero matrix is undefined")
    return math.sqrt(M.shape[1]) * op_norm_1to2(M) / fro


__all__ = [
    "eval_prop1_bound", "eval_thm2_rate", "eval_minimax_lower", "MinimaxValue",
    "minimax_conditions", "packing_target", "packing_log_target", "PackingSet",
    "PackingError", "build_packing", "minimax_gamma_sq", "kl_divergence", "expected_kl",
    "fano_lower", "GeometryEstimate", "estimate_theta", "estimate_gamma", "estimate_R",
    "estimate_geometry", "spikiness", "theta_objective",
]
