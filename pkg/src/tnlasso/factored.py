"""Factored upper bounds for the mixed- and max-norm.

A factorisation ``M = U V^T`` with ``V = G C``, ``G = [Q | N]`` (``Q`` an
orthonormal basis of the row space of ``M``) and ``U = [M Q, 0] C^{-T}``
satisfies ``U V^T = M`` identically for every invertible ``C`` and every
``N``.  Every factorisation with ``V`` of full column rank arises this way,
so minimising the factor product over ``(N, C)`` is an unconstrained
problem.  The nonsmooth max over row norms is replaced by a p-norm whose
exponent is increased over rounds; the value reported is always the exact
factor product at the final point and therefore an upper bound on the norm.
"""

import numpy as np
from scipy.optimize import minimize

from .dense import as_matrix, svd
from .errors import FactorizationError
from .sdp import MAX, MIXED

_P_SCHEDULE = (8.0, 32.0, 128.0, 512.0, 2048.0)


def _log_pnorm(s, p):
    """log of the l_p norm of ``s >= 0`` and its gradient w.r.t. ``s``."""
    m = s.max()
    if m <= 0.0:
        return -np.inf, np.zeros_like(s)
    z = (s / m) ** p
    tot = z.sum()
    val = np.log(m) + np.log(tot) / p
    grad = z / (s * tot)
    grad[s <= 0.0] = 0.0
    return val, grad


class _Problem:
    def __init__(self, M, kind, k):
        U0, s, V0 = svd(M)
        rank = int(np.sum(s > 1e-12 * s[0]))
        if k < rank:
            raise FactorizationError(f"rank_cap {k} is below rank(M) = {rank}")
        self.M = M
        self.kind = kind
        self.d1, self.d2 = M.shape
        self.rank = rank
        self.k = k
        self.s = s[:rank]
        self.Q = V0[:, :rank]
        self.B = np.zeros((self.d1, k))
        self.B[:, :rank] = M @ self.Q

    def unpack(self, x):
        d2, k, rho = self.d2, self.k, self.rank
        nN = d2 * (k - rho)
        N = x[:nN].reshape(d2, k - rho)
        C = x[nN:].reshape(k, k)
        return N, C

    def factors(self, x):
        N, C = self.unpack(x)
        G = np.hstack([self.Q, N])
        Cinv_T = np.linalg.inv(C).T
        U = self.B @ Cinv_T
        V = G @ C
        return U, V, G, C, Cinv_T

    def value(self, U, V):
        rv = np.max(np.sum(V * V, axis=1))
        if self.kind == MIXED:
            return float(np.sqrt(np.sum(U * U) * rv))
        ru = np.max(np.sum(U * U, axis=1))
        return float(np.sqrt(ru * rv))

    def smooth(self, x, p):
        try:
            U, V, G, C, Cinv_T = self.factors(x)
        except np.linalg.LinAlgError:
            return np.inf, np.zeros_like(x)
        sv = np.sum(V * V, axis=1)
        fv, gv = _log_pnorm(sv, p)
        GV = 2.0 * gv[:, None] * V
        if self.kind == MIXED:
            fro = np.sum(U * U)
            fu = np.log(fro)
            GU = 2.0 * U / fro
        else:
            su = np.sum(U * U, axis=1)
            fu, gu = _log_pnorm(su, p)
            GU = 2.0 * gu[:, None] * U
        f = fu + fv
        if not np.isfinite(f):
            return np.inf, np.zeros_like(x)
        gC = -Cinv_T @ GU.T @ U + G.T @ GV
        gN = (GV @ C.T)[:, self.rank:]
        return f, np.concatenate([gN.ravel(), gC.ravel()])

    def start(self, rng, jitter):
        k, rho = self.k, self.rank
        C = np.eye(k)
        C[:rho, :rho] = np.diag(np.sqrt(self.s))
        N = np.zeros((self.d2, k - rho))
        if k > rho:
            N = 0.1 * np.sqrt(self.s.mean()) * rng.normal((self.d2, k - rho))
        if jitter:
            C = C @ (np.eye(k) + jitter * rng.normal((k, k)))
            N = N + jitter * np.sqrt(self.s.mean()) * rng.normal(N.shape)
        return np.concatenate([N.ravel(), C.ravel()])


def factor_norm_factored(M, kind, rank_cap=None, restarts=8, rng=None, maxiter=300):
    """Best factor product ``||U||_F ||V^T||_{1->2}`` (mixed) or
    ``||U^T||_{1->2} ||V^T||_{1->2}`` (max) over locally optimised
    factorisations; an upper bound on the corresponding norm.

    Returns ``(value, U, V)`` with ``U @ V.T`` equal to ``M`` to rounding.
    """
    M = as_matrix(M)
    if kind not in (MIXED, MAX):
        raise ValueError(f"unknown norm kind {kind!r}")
    d1, d2 = M.shape
    if not np.any(M):
        return 0.0, np.zeros((d1, 1)), np.zeros((d2, 1))
    k = d2 if rank_cap is None else min(int(rank_cap), d2)
    prob = _Problem(M, kind, k)
    if rng is None:
        from .dense import RngStream
        rng = RngStream(0, "factored")

    best = (np.inf, None, None)
    for trial in range(max(1, restarts)):
        x = prob.start(rng, 0.0 if trial == 0 else 0.3)
        if x.size > 0 and prob.k > 0:
            for p in _P_SCHEDULE:
                res = minimize(prob.smooth, x, args=(p,), jac=True, method="L-BFGS-B",
                               options={"maxiter": maxiter, "gtol": 1e-10, "ftol": 1e-14})
                if np.all(np.isfinite(res.x)):
                    x = res.x
        try:
            U, V, *_ = prob.factors(x)
        except np.linalg.LinAlgError:
            continue
        val = prob.value(U, V)
        resid = np.linalg.norm(U @ V.T - M)
        if resid > 1e-8 * max(1.0, np.linalg.norm(M)):
            continue
        if val < best[0]:
            best = (val, U, V)
    if best[1] is None:
        raise FactorizationError("no restart produced an exact factorisation")
    return best
