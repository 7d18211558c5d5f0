"""ADMM solver for the factorization-norm semidefinite programs.

Both factorization norms of a d1 x d2 matrix ``M`` are the value of

    minimize    max_g  sum_{i in g} diag(W)_i
    subject to  W = [[W1, M], [M^T, W2]]  PSD,

where the diagonal of ``W`` is partitioned into groups ``g``:

* mixed-norm: one group holding all of ``diag(W1)`` (so the first term is
  ``trace(W1)``) and a singleton for every entry of ``diag(W2)``;
* max-norm: singletons everywhere, i.e. ``max(||diag W1||_inf, ||diag W2||_inf)``.

The nonsmooth objective is the epigraph ``t >= sum_{i in g} W_ii`` folded
into a proximal step, and the PSD constraint is handled by projection
through a full eigendecomposition.

Every returned value is a certified upper bound (a feasible point is
reconstructed from the iterate) and the solver also builds a dual feasible
point, giving a certified lower bound.  Iteration stops once the relative
gap between the two is at most ``tol``.
"""

from dataclasses import dataclass

import numpy as np

from .dense import as_matrix
from .errors import SolverError

MIXED = "mixed"
MAX = "max"

# residual balancing for the ADMM penalty
BALANCE_RATIO = 2.0
BALANCE_STEP = 1.2


@dataclass
class SdpSolution:
    """Result of a factorization-norm SDP.

    ``value`` equals ``max(h1(W1), h2(W2))`` at the returned ``W1, W2``,
    which are balanced so that both terms agree; ``[[W1, M], [M^T, W2]]``
    is PSD by construction.  ``lower`` is a certified lower bound on the
    optimum and ``gap = (value - lower) / value``.
    """

    value: float
    W1: np.ndarray
    W2: np.ndarray
    gap: float
    lower: float
    iterations: int
    kind: str


def psd_project(S):
    S = 0.5 * (S + S.T)
    w, Q = np.linalg.eigh(S)
    w = np.maximum(w, 0.0)
    return (Q * w) @ Q.T


class GroupLayout:
    """Partition of the ``d1 + d2`` diagonal entries into objective groups."""

    def __init__(self, kind, d1, d2):
        if kind not in (MIXED, MAX):
            raise ValueError(f"unknown norm kind {kind!r}")
        self.kind, self.d1, self.d2 = kind, d1, d2
        if kind == MIXED:
            gid = np.concatenate([np.zeros(d1, int), 1 + np.arange(d2)])
        else:
            gid = np.arange(d1 + d2)
        self.gid = gid
        self.ngroups = int(gid.max()) + 1
        self.size = np.bincount(gid, minlength=self.ngroups).astype(float)
        # groups living on the W1 side of the block matrix
        self.side1 = np.zeros(self.ngroups, bool)
        self.side1[np.unique(gid[:d1])] = True

    def sums(self, x):
        return np.bincount(self.gid, weights=x, minlength=self.ngroups)

    def prox(self, v, rho):
        """prox of ``x -> max_g sum_{i in g} x_i`` with weight ``1/rho``."""
        s = self.sums(v)
        q = self.size
        order = np.argsort(-s, kind="stable")
        ss, qq = s[order], q[order]
        num = np.cumsum(rho * ss / qq) - 1.0
        den = np.cumsum(rho / qq)
        tau_k = num / den
        nxt = np.append(ss[1:], -np.inf)
        k = int(np.argmax(tau_k >= nxt))
        tau = tau_k[k]
        w = np.maximum(0.0, rho * (s - tau) / q)
        return v - w[self.gid] / rho

    def project_budget(self, v, budget):
        """Euclidean projection onto ``{x : sum_{i in g} x_i <= budget for all g}``."""
        excess = np.maximum(self.sums(v) - budget, 0.0) / self.size
        return v - excess[self.gid]

    def side_values(self, W1, W2):
        """The two terms of the objective at a feasible block matrix."""
        d = np.concatenate([np.diag(W1), np.diag(W2)])
        sums = self.sums(d)
        return float(sums[self.side1].max()), float(sums[~self.side1].max())


def certified_upper(X, M, layout):
    """Feasible point and value from an approximately feasible PSD ``X``.

    ``X`` is PSD but its off-diagonal block only approximates ``M``.  Adding
    ``eps * I`` with ``eps = ||M - X12||_2`` restores PSD-ness of the block
    matrix with ``M`` in the corner; the two diagonal blocks are then
    rebalanced so both objective terms coincide.
    """
    d1 = layout.d1
    E = M - X[:d1, d1:]
    eps = float(np.linalg.norm(E, 2)) * (1.0 + 1e-12) if np.any(E) else 0.0
    W1 = X[:d1, :d1] + eps * np.eye(d1)
    W2 = X[d1:, d1:] + eps * np.eye(layout.d2)
    a, b = layout.side_values(W1, W2)
    if a <= 0.0 or b <= 0.0:
        return np.inf, W1, W2
    t = np.sqrt(b / a)
    W1, W2 = t * W1, W2 / t
    return float(np.sqrt(a * b)), W1, W2


def certified_lower(S, M, layout):
    """Lower bound from an approximate dual PSD matrix ``S``.

    The dual program is  max -2<S12, M>  over PSD ``S`` whose diagonal blocks
    are diagonal and constant on every group, normalised so the group
    weights sum to one.  ``S`` is coerced onto that structure (group-wise max
    of its diagonal, then a uniform shift to restore PSD-ness) and the
    weights of the two sides are balanced.
    """
    d1 = layout.d1
    S12 = S[:d1, d1:]
    num = -2.0 * float(np.sum(S12 * M))
    if num <= 0.0:
        return 0.0
    diag = np.diag(S).copy()
    w = np.full(layout.ngroups, -np.inf)
    np.maximum.at(w, layout.gid, diag)
    D = w[layout.gid]
    T = np.zeros_like(S)
    T[:d1, d1:] = S12
    T[d1:, :d1] = S12.T
    T[np.diag_indices_from(T)] = D
    lam = float(np.linalg.eigvalsh(T)[0])
    shift = max(0.0, -lam) * (1.0 + 1e-12) + 1e-300
    w = w + shift
    if np.any(w < 0):
        w = np.maximum(w, 0.0)
    c1 = float(w[layout.side1].sum())
    c2 = float(w[~layout.side1].sum())
    if c1 <= 0.0 or c2 <= 0.0:
        return 0.0
    return num / (2.0 * np.sqrt(c1 * c2))


def factor_norm_sdp(M, kind, tol=1e-6, max_iter=200000, check_every=25, base_lower=0.0,
                    accept_below=None):
    """Solve the mixed- or max-norm SDP for ``M`` by ADMM.

    Parameters
    ----------
    M : array_like
        d1 x d2 matrix.
    kind : {"mixed", "max"}
    tol : float
        Target relative gap between the certified upper and lower bounds.
    base_lower : float
        Any known lower bound (e.g. the matching operator norm); it is
        folded into the certificate.
    accept_below : float, optional
        Stop as soon as the certified upper bound is at most this value,
        whatever the gap.  Useful when only membership in a ball matters.

    Raises
    ------
    SolverError
        When the gap is still above ``tol`` after ``max_iter`` iterations;
        ``err.gap`` is the last certified gap and ``err.partial`` the best
        feasible :class:`SdpSolution` found.
    """
    M = as_matrix(M)
    d1, d2 = M.shape
    layout = GroupLayout(kind, d1, d2)
    scale = float(np.abs(M).max())
    if scale == 0.0:
        return SdpSolution(0.0, np.zeros((d1, d1)), np.zeros((d2, d2)), 0.0, 0.0, 0, kind)
    Mt = M / scale
    lower = base_lower / scale
    accept = -np.inf if accept_below is None else accept_below / scale

    # warm start from the balanced SVD factorisation
    P, s, Qt = np.linalg.svd(Mt, full_matrices=False)
    F = np.vstack([P * np.sqrt(s), Qt.T * np.sqrt(s)])
    X = F @ F.T
    Lam = np.zeros_like(X)
    rho = 1.0
    n = d1 + d2
    diag_idx = np.diag_indices(n)

    best = None
    best_ub = np.inf
    it = 0
    gap = np.inf
    while it < max_iter:
        for _ in range(check_every):
            it += 1
            T = X - Lam
            Z = T
            Z[:d1, d1:] = Mt
            Z[d1:, :d1] = Mt.T
            Z[diag_idx] = layout.prox(np.diag(T).copy(), rho)
            X_old = X
            X = psd_project(Z + Lam)
            R = Z - X
            Lam = Lam + R
        r_pri = np.linalg.norm(R)
        r_dual = rho * np.linalg.norm(X - X_old)

        ub, W1, W2 = certified_upper(X, Mt, layout)
        if ub < best_ub:
            best_ub, best = ub, (W1, W2)
        lower = max(lower, certified_lower(-rho * Lam, Mt, layout))
        gap = (best_ub - lower) / best_ub
        if gap <= tol or best_ub <= accept:
            break

        if r_pri > BALANCE_RATIO * r_dual:
            rho *= BALANCE_STEP
            Lam /= BALANCE_STEP
        elif r_dual > BALANCE_RATIO * r_pri:
            rho /= BALANCE_STEP
            Lam *= BALANCE_STEP

    W1, W2 = best
    sol = SdpSolution(best_ub * scale, W1 * scale, W2 * scale, max(gap, 0.0),
                      lower * scale, it, kind)
    if gap > tol and best_ub > accept:
        raise SolverError(f"{kind}-norm SDP stopped at gap {gap:.2e} after {it} iterations",
                          gap=gap, iterations=it, partial=sol)
    return sol
