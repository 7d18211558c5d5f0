"""Operator norms, factorization norms and the two regularizers built from them.

The mixed regime ball is ``max(||M||_{1->2}, ||M||_mixed / sqrt(r)) <= alpha``
and the max regime ball is ``max(||M||_inf, ||M||_max / sqrt(r)) <= alpha``.
"""

import enum
import math
from dataclasses import dataclass

import numpy as np

from .dense import RngStream, as_matrix, svd
from .errors import SolverError
from .factored import factor_norm_factored
from .sdp import MAX, MIXED, factor_norm_sdp

SDP_DIM_THRESHOLD = 64


class Regime(enum.Enum):
    MIXED = "mixed"
    MAX = "max"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).lower().replace("-", "_")
        aliases = {"mixed": cls.MIXED, "mixed_regime": cls.MIXED, "mixedregime": cls.MIXED,
                   "max": cls.MAX, "max_regime": cls.MAX, "maxregime": cls.MAX}
        if key not in aliases:
            raise ValueError(f"unknown regime {value!r}")
        return aliases[key]


@dataclass(frozen=True)
class NormBallSpec:
    kind: Regime
    alpha: float
    rank_param: int

    def __post_init__(self):
        object.__setattr__(self, "kind", Regime.parse(self.kind))
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise ValueError("alpha must be a positive finite number")
        if int(self.rank_param) != self.rank_param or self.rank_param < 1:
            raise ValueError("rank_param must be a positive integer")
        object.__setattr__(self, "rank_param", int(self.rank_param))

    def with_alpha(self, alpha):
        return NormBallSpec(self.kind, alpha, self.rank_param)

    def to_dict(self):
        return {"kind": self.kind.value, "alpha": self.alpha, "rank_param": self.rank_param}


def op_norm_1to2(M):
    """Largest Euclidean column norm."""
    A = as_matrix(M)
    if A.size == 0:
        return 0.0
    return float(np.sqrt(np.max(np.sum(A * A, axis=0))))


def inf_norm(M):
    """Largest entry magnitude."""
    A = as_matrix(M)
    if A.size == 0:
        return 0.0
    return float(np.max(np.abs(A)))


def mixed_norm_sdp(M, tol=1e-6, **kwargs):
    M = as_matrix(M)
    return factor_norm_sdp(M, MIXED, tol=tol, base_lower=op_norm_1to2(M), **kwargs)


def max_norm_sdp(M, tol=1e-6, **kwargs):
    M = as_matrix(M)
    return factor_norm_sdp(M, MAX, tol=tol, base_lower=inf_norm(M), **kwargs)


def mixed_norm_factored(M, rank_cap=None, restarts=8, rng=None):
    return factor_norm_factored(M, MIXED, rank_cap=rank_cap, restarts=restarts, rng=rng)[0]


def max_norm_factored(M, rank_cap=None, restarts=8, rng=None):
    return factor_norm_factored(M, MAX, rank_cap=rank_cap, restarts=restarts, rng=rng)[0]


def svd_factor_bound(M, kind):
    """Cheap upper bound on a factorization norm.

    Evaluates the factor product of ``(P S^t, Q S^(1-t))`` from the SVD for a
    few exponents ``t`` and keeps the smallest.
    """
    A = as_matrix(M)
    if not np.any(A):
        return 0.0
    P, s, Q = np.linalg.svd(A, full_matrices=False)
    best = np.inf
    for t in (0.0, 0.25, 0.5, 0.75, 1.0):
        U = P * s**t
        V = Q.T * s ** (1.0 - t)
        rv = np.max(np.sum(V * V, axis=1))
        ru = np.sum(U * U) if kind == MIXED else np.max(np.sum(U * U, axis=1))
        best = min(best, math.sqrt(ru * rv))
    return float(best)


def tnorm_upper(M, spec):
    """Fast upper bound on ``tnorm(M, spec)`` from closed-form pieces."""
    spec_kind = Regime.parse(spec.kind)
    A = as_matrix(M)
    if spec_kind is Regime.MIXED:
        base, kind = op_norm_1to2(A), MIXED
    else:
        base, kind = inf_norm(A), MAX
    return max(base, svd_factor_bound(A, kind) / math.sqrt(spec.rank_param))


@dataclass
class TnormResult:
    value: float
    base_norm: float
    factor_norm: float
    method: str
    upper_bound_only: bool


def tnorm_detail(M, spec, tol=1e-6, threshold=SDP_DIM_THRESHOLD, rng=None):
    """Regularizer value with provenance of the factorization-norm term.

    Up to ``threshold`` in both dimensions the SDP value is used; above it
    the factored value is reported and flagged as an upper bound.
    """
    A = as_matrix(M)
    kind = Regime.parse(spec.kind)
    if kind is Regime.MIXED:
        base, fkind = op_norm_1to2(A), MIXED
    else:
        base, fkind = inf_norm(A), MAX
    if base == 0.0:
        return TnormResult(0.0, 0.0, 0.0, "zero", False)
    if max(A.shape) <= threshold:
        fn = factor_norm_sdp(A, fkind, tol=tol, base_lower=base).value
        method, flag = "sdp", False
    else:
        rng = rng or RngStream(0, "tnorm")
        fn = factor_norm_factored(A, fkind, rng=rng)[0]
        method, flag = "factored", True
    value = max(base, fn / math.sqrt(spec.rank_param))
    return TnormResult(float(value), float(base), float(fn), method, flag)


def tnorm(M, spec, tol=1e-6, threshold=SDP_DIM_THRESHOLD):
    return tnorm_detail(M, spec, tol=tol, threshold=threshold).value


def tnorm_certify(M, spec, bound, tol=1e-6, threshold=SDP_DIM_THRESHOLD):
    """Certified upper bound on ``tnorm(M, spec)``, computed only as far as
    needed to decide whether it is at most ``bound``.

    Returns ``(ok, upper)``.  Above ``threshold`` the factored value is used.
    """
    A = as_matrix(M)
    kind = Regime.parse(spec.kind)
    base, fkind = (op_norm_1to2(A), MIXED) if kind is Regime.MIXED else (inf_norm(A), MAX)
    if base > bound:
        return False, base
    if base == 0.0:
        return True, 0.0
    root = math.sqrt(spec.rank_param)
    if max(A.shape) <= threshold:
        try:
            fn = factor_norm_sdp(A, fkind, tol=tol, base_lower=base,
                                 accept_below=bound * root).value
        except SolverError as err:
            fn = err.partial.value
    else:
        fn = factor_norm_factored(A, fkind, rng=RngStream(0, "tnorm"))[0]
    upper = max(base, fn / root)
    return upper <= bound, float(upper)


@dataclass
class SandwichReport:
    op_1to2: float
    mixed: float
    inf: float
    max: float
    mixed_lower_ok: bool
    mixed_upper_ok: bool
    max_lower_ok: bool
    max_upper_ok: bool

    @property
    def all_ok(self):
        return self.mixed_lower_ok and self.mixed_upper_ok and self.max_lower_ok and self.max_upper_ok


def check_rank_sandwich(M, r, tol=1e-6):
    """Check ``a <= f(M) <= sqrt(r) a`` for both factorization norms.

    ``a`` is the column norm for the mixed-norm and the entry norm for the
    max-norm; ``tol`` is relative to the quantity being compared.  The
    caller asserts ``rank(M) <= r``.
    """
    A = as_matrix(M)
    if r < 1:
        raise ValueError("r must be >= 1")
    s = svd(A)[1]
    if s[0] > 0 and np.sum(s > 1e-8 * s[0]) > r:
        raise ValueError("matrix rank exceeds r")
    col, ent = op_norm_1to2(A), inf_norm(A)
    mixed = mixed_norm_sdp(A, tol=tol).value
    mx = max_norm_sdp(A, tol=tol).value
    root = math.sqrt(r)
    return SandwichReport(
        op_1to2=col, mixed=mixed, inf=ent, max=mx,
        mixed_lower_ok=col <= mixed * (1 + tol),
        mixed_upper_ok=mixed <= root * col * (1 + tol),
        max_lower_ok=ent <= mx * (1 + tol),
        max_upper_ok=mx <= root * ent * (1 + tol),
    )
