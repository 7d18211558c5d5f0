"""Least squares over a tensor-norm ball.

``solve_lasso`` minimises ``||y - A(M)||^2`` subject to ``tnorm(M) <= alpha``.

Two methods are available:

``"lift"``
    The factorization-norm constraint is written as a PSD block matrix with
    ``M`` as its off-diagonal block and budgeted diagonal, which makes the
    whole problem convex.  It is solved by ADMM between the PSD cone (plus
    the least-squares term) and the budget/column constraints.  Every few
    iterations a point that is feasible *by certificate* is extracted from
    the PSD iterate, and the best such point is what gets reported.

``"factored"``
    Projected gradient on ``M = U V^T`` with backtracking, used when the
    lifted matrix would be too large to eigendecompose cheaply.

Both start from (or compare against) ``M = 0``, which is always feasible.
"""

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .dense import RngStream, as_matrix
from .errors import SolverError
from .measurements import SKETCHING
from .norms import NormBallSpec, Regime, inf_norm, op_norm_1to2, tnorm_certify
from .sdp import MAX, MIXED, GroupLayout, certified_upper, psd_project

LIFT_MAX_DIM = 128


@dataclass
class SolverConfig:
    max_outer_iters: int = 20000
    step_rule: str = "backtracking"
    feas_tol: float = 1e-5
    factor_rank: int | None = None
    restarts: int = 1
    seed: int = 0
    method: str = "auto"
    tol: float = 1e-8
    check_every: int = 25
    verify: bool = True

    def __post_init__(self):
        if self.feas_tol <= 0 or self.tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.step_rule not in ("fixed", "backtracking"):
            raise ValueError(f"unknown step rule {self.step_rule!r}")
        if self.method not in ("auto", "lift", "factored"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.restarts < 1 or self.max_outer_iters < 1:
            raise ValueError("restarts and max_outer_iters must be >= 1")


@dataclass
class SolveReport:
    M_hat: np.ndarray
    objective_trace: list = field(default_factory=list)
    feasibility_trace: list = field(default_factory=list)
    final_feasibility: float = 0.0
    iterations: int = 0
    wall_time: float = 0.0
    seed: int = 0
    method: str = ""
    converged: bool = True

    @property
    def objective(self):
        return self.objective_trace[-1]

    def to_record(self):
        return {
            "M_hat": self.M_hat.ravel(order="F").tolist(),
            "shape": list(self.M_hat.shape),
            "objective_trace": list(self.objective_trace),
            "final_feasibility": self.final_feasibility,
            "iterations": self.iterations,
            "wall_time": self.wall_time,
            "seed": self.seed,
            "method": self.method,
            "converged": self.converged,
        }

    def trace_rows(self):
        """``(iter, objective, feasibility)`` triples for CSV export."""
        feas = self.feasibility_trace or [math.nan] * len(self.objective_trace)
        return [(i, o, f) for i, (o, f) in enumerate(zip(self.objective_trace, feas))]


def objective(ens, y, M):
    r = np.asarray(y, dtype=float) - ens.apply(M)
    return float(r @ r)


def project_column_ball(M, alpha):
    """Scale every column of ``M`` to Euclidean norm at most ``alpha``."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    M = as_matrix(M)
    norms = np.sqrt(np.sum(M * M, axis=0))
    factor = np.ones_like(norms)
    big = norms > alpha
    factor[big] = alpha / norms[big]
    return M * factor


def clip_entries(M, alpha):
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    return np.clip(as_matrix(M), -alpha, alpha)


def _row_norms(A):
    return np.sqrt(np.sum(A * A, axis=1))


def factor_surrogate(U, V, kind):
    """Factor product bounding the mixed- or max-norm of ``U V^T``."""
    kind = Regime.parse(kind)
    rv = float(_row_norms(V).max(initial=0.0))
    if kind is Regime.MIXED:
        return float(np.linalg.norm(U)) * rv
    return float(_row_norms(U).max(initial=0.0)) * rv


def enforce_factor_budget(U, V, budget, spec_kind):
    """Bring the factor product of ``(U, V)`` within ``budget``.

    Inputs already within budget are returned as they are.  Otherwise the
    pair is balanced (``s U``, ``V / s``) so both factors carry the same
    weight and then each factor is shrunk to ``sqrt(budget)``: the whole of
    ``U`` (mixed) or its long rows (max), and the long rows of ``V``.
    """
    if budget <= 0:
        raise ValueError("budget must be positive")
    kind = Regime.parse(spec_kind)
    U = np.asarray(U, dtype=float)
    V = np.asarray(V, dtype=float)
    if factor_surrogate(U, V, kind) <= budget:
        return U, V
    a = float(np.linalg.norm(U)) if kind is Regime.MIXED else float(_row_norms(U).max())
    b = float(_row_norms(V).max())
    if a == 0.0 or b == 0.0:
        return U, V
    s = math.sqrt(b / a)
    U, V = U * s, V / s
    cap = math.sqrt(budget)
    if kind is Regime.MIXED:
        nu = float(np.linalg.norm(U))
        if nu > cap:
            U = U * (cap / nu)
    else:
        ru = _row_norms(U)
        U = U * np.minimum(1.0, cap / np.maximum(ru, 1e-300))[:, None]
    rv = _row_norms(V)
    V = V * np.minimum(1.0, cap / np.maximum(rv, 1e-300))[:, None]
    return U, V


class _GramSolver:
    """Solves ``(coef A*A + rho I) P = R`` using the block structure of ``A*A``."""

    def __init__(self, ens):
        self.ens = ens
        if ens.kind == SKETCHING:
            d1, d2 = ens.d1, ens.d2
            G = np.zeros((d2, d1, d1))
            B = ens.vectors * ens.scale
            for j in range(d2):
                Bj = B[:, ens.cols == j]
                G[j] = Bj @ Bj.T
            w, E = np.linalg.eigh(G)
            self.w = np.maximum(w, 0.0)
            self.E = E
            self.top = float(self.w.max(initial=0.0))
        else:
            counts = np.zeros((ens.d1, ens.d2))
            np.add.at(counts, (ens.rows, ens.cols), 1.0)
            self.diag = ens.scale**2 * counts
            self.top = float(self.diag.max(initial=0.0))

    def solve(self, R, coef, rho):
        if self.ens.kind == SKETCHING:
            Rt = R.T  # (d2, d1)
            c = np.einsum("jab,ja->jb", self.E, Rt) / (coef * self.w + rho)
            return np.einsum("jab,jb->ja", self.E, c).T
        return R / (coef * self.diag + rho)


def _base_norm(M, kind):
    return op_norm_1to2(M) if kind is Regime.MIXED else inf_norm(M)


def _project_base(M, kind, radius):
    if kind is Regime.MIXED:
        return project_column_ball(M, radius)
    return clip_entries(M, radius)


class _Best:
    """Running best certified-feasible point and its monotone trace."""

    def __init__(self, ens, y, d1, d2):
        self.ens, self.y = ens, y
        self.M = np.zeros((d1, d2))
        self.value = float(y @ y)
        self.feas = 0.0
        self.trace = [self.value]
        self.feas_trace = [0.0]

    def offer(self, M, feas):
        val = objective(self.ens, self.y, M)
        if val < self.value:
            self.M, self.value, self.feas = M, val, feas
        self.trace.append(self.value)
        self.feas_trace.append(self.feas)


def _solve_lift(ens, y, spec, cfg, best):
    kind = spec.kind
    d1, d2 = ens.d1, ens.d2
    n = d1 + d2
    layout = GroupLayout(MIXED if kind is Regime.MIXED else MAX, d1, d2)
    root_r = math.sqrt(spec.rank_param)
    alpha = spec.alpha

    gram = _GramSolver(ens)
    if gram.top == 0.0:
        return 0, True
    coef = 2.0 / gram.top
    yt = y / alpha
    rhs0 = coef * ens.adjoint(yt)

    X = np.zeros((n, n))
    Y = np.zeros((n, n))
    Lam = np.zeros((n, n))
    P = np.zeros((d1, d2))
    Q = np.zeros((d1, d2))
    Lp = np.zeros((d1, d2))
    rho = 1.0
    diag = np.diag_indices(n)
    it = 0
    converged = False
    while it < cfg.max_outer_iters:
        for _ in range(cfg.check_every):
            it += 1
            X = psd_project(Y - Lam)
            P = gram.solve(rhs0 + rho * (Q - Lp), coef, rho)
            T = X + Lam
            Tp = P + Lp
            Y_old, Q_old = Y, Q
            Q = _project_base((2.0 * T[:d1, d1:] + Tp) / 3.0, kind, 1.0)
            Y = T.copy()
            Y[:d1, d1:] = Q
            Y[d1:, :d1] = Q.T
            Y[diag] = layout.project_budget(np.diag(T).copy(), root_r)
            Lam += X - Y
            Lp += P - Q

        r_pri = math.sqrt(np.sum((X - Y) ** 2) + np.sum((P - Q) ** 2))
        r_dual = rho * math.sqrt(np.sum((Y - Y_old) ** 2) + np.sum((Q - Q_old) ** 2))

        _offer_lift_candidates(best, X, Q, layout, kind, root_r, alpha)

        scale_p = max(1.0, math.sqrt(np.sum(X * X)))
        scale_d = max(1.0, rho * math.sqrt(np.sum(Lam * Lam) + np.sum(Lp * Lp)))
        if r_pri <= cfg.tol * scale_p and r_dual <= cfg.tol * scale_d:
            converged = True
            break

        if r_pri > 10.0 * r_dual:
            rho *= 2.0
            Lam /= 2.0
            Lp /= 2.0
        elif r_dual > 10.0 * r_pri:
            rho /= 2.0
            Lam *= 2.0
            Lp *= 2.0
    return it, converged


def _offer_lift_candidates(best, X, Q, layout, kind, root_r, alpha):
    d1 = layout.d1
    # the off-diagonal block of a PSD matrix has factor norm at most the
    # balanced diagonal value, with no repair needed
    MX = X[:d1, d1:]
    a, b = layout.side_values(X[:d1, :d1], X[d1:, d1:])
    cands = []
    if a > 0 and b > 0:
        fn = math.sqrt(a * b)
        base = _base_norm(MX, kind)
        c = min(1.0, root_r / fn, 1.0 / base if base > 0 else 1.0)
        cands.append((c * MX, max(fn / root_r, base) * c))
    ub = certified_upper(X, Q, layout)[0]
    if math.isfinite(ub) and ub > 0:
        c = min(1.0, root_r / ub)
        cands.append((c * Q, max(ub / root_r, _base_norm(Q, kind)) * c))
    for M, feas in cands:
        best.offer(alpha * M, feas)


def _solve_factored(ens, y, spec, cfg, best, rng):
    kind = spec.kind
    d1, d2 = ens.d1, ens.d2
    alpha = spec.alpha
    budget = math.sqrt(spec.rank_param) * alpha
    k = cfg.factor_rank or min(spec.rank_param + 2, d1, d2)
    k = min(k, d1, d2)
    lip = 2.0 * ens.gram_bound()
    if lip == 0.0:
        return 0, True

    def f(U, V):
        return objective(ens, y, U @ V.T)

    def project(U, V):
        if kind is Regime.MIXED:
            cn = np.sqrt(np.sum((U @ V.T) ** 2, axis=0))
            V = V * np.minimum(1.0, alpha / np.maximum(cn, 1e-300))[:, None]
            U, V = enforce_factor_budget(U, V, budget, kind)
        else:
            U, V = enforce_factor_budget(U, V, budget, kind)
            m = inf_norm(U @ V.T)
            if m > alpha:
                U = U * (alpha / m)
        return U, V

    scale0 = 1e-3 * math.sqrt(alpha)
    U = scale0 * rng.normal((d1, k))
    V = scale0 * rng.normal((d2, k))
    U, V = project(U, V)
    val = f(U, V)
    it = 0
    converged = False
    step_base = 1.0 / lip
    while it < cfg.max_outer_iters:
        it += 1
        M = U @ V.T
        G = 2.0 * ens.adjoint(ens.apply(M) - y)
        gU, gV = G @ V, G.T @ U
        eta = step_base / max(1.0, float(np.sum(U * U) + np.sum(V * V)))
        accepted = False
        for _ in range(40 if cfg.step_rule == "backtracking" else 1):
            Un, Vn = project(U - eta * gU, V - eta * gV)
            vn = f(Un, Vn)
            if vn <= val:
                accepted = True
                break
            eta /= 2.0
        if not accepted:
            converged = True
            break
        rel = (val - vn) / max(val, 1e-300)
        U, V, val = Un, Vn, vn
        if it % cfg.check_every == 0:
            best.offer(U @ V.T, factor_surrogate(U, V, kind) / budget)
        if rel < cfg.tol:
            converged = True
            break
    best.offer(U @ V.T, factor_surrogate(U, V, kind) / budget)
    return it, converged


def solve_lasso(ens, y, spec, cfg=None):
    """Minimise ``||y - A(M)||^2`` over ``tnorm(M, spec) <= spec.alpha``.

    The returned point is feasible by construction and, when
    ``cfg.verify`` is set, its feasibility is re-checked independently with
    the SDP characterization.  ``final_feasibility`` is a certified upper
    bound on ``tnorm(M_hat) / alpha``.
    """
    cfg = cfg or SolverConfig()
    if not isinstance(spec, NormBallSpec):
        raise TypeError("spec must be a NormBallSpec")
    y = np.asarray(y, dtype=float)
    if y.shape != (ens.n,):
        raise ValueError(f"y must have length {ens.n}")
    start = time.perf_counter()
    best = _Best(ens, y, ens.d1, ens.d2)
    method = cfg.method
    if method == "auto":
        method = "lift" if ens.d1 + ens.d2 <= LIFT_MAX_DIM else "factored"

    iterations, converged = 0, True
    if np.any(y):
        if method == "lift":
            iterations, converged = _solve_lift(ens, y, spec, cfg, best)
        else:
            root = RngStream(cfg.seed, "estimator")
            for i in range(cfg.restarts):
                it, conv = _solve_factored(ens, y, spec, cfg, best, root.child(f"restart{i}"))
                iterations += it
                converged = converged and conv

    feas = best.feas
    if cfg.verify and np.any(best.M):
        ok, upper = tnorm_certify(best.M, spec, spec.alpha * (1.0 + cfg.feas_tol))
        feas = upper / spec.alpha
        if not ok:
            raise SolverError(f"estimate fails the feasibility check ({feas:.8f})",
                              gap=feas - 1.0, iterations=iterations, partial=best.M)
    return SolveReport(M_hat=best.M, objective_trace=best.trace,
                       feasibility_trace=best.feas_trace, final_feasibility=feas,
                       iterations=iterations, wall_time=time.perf_counter() - start,
                       seed=cfg.seed, method=method, converged=converged)
