"""Independent reference solutions built on cvxpy, for tests only."""

import cvxpy as cp
import numpy as np


def _lift(M):
    d1, d2 = M.shape
    Z = cp.Variable((d1 + d2, d1 + d2), PSD=True)
    return Z, [Z[:d1, d1:] == M]


def mixed_norm(M):
    """``min t`` s.t. the lift is PSD, trace of the top block <= t, bottom diagonal <= t."""
    M = np.asarray(M, dtype=float)
    d1 = M.shape[0]
    Z, cons = _lift(M)
    t = cp.Variable()
    cons += [cp.trace(Z[:d1, :d1]) <= t, cp.diag(Z[d1:, d1:]) <= t]
    cp.Problem(cp.Minimize(t), cons).solve(solver=cp.CLARABEL)
    return float(t.value)


def max_norm(M):
    M = np.asarray(M, dtype=float)
    Z, cons = _lift(M)
    t = cp.Variable()
    cons += [cp.diag(Z) <= t]
    cp.Problem(cp.Minimize(t), cons).solve(solver=cp.CLARABEL)
    return float(t.value)


def lasso(ens, y, kind, alpha, r):
    """Optimal value of the constrained least-squares program."""
    d1, d2 = ens.d1, ens.d2
    Z = cp.Variable((d1 + d2, d1 + d2), PSD=True)
    M = Z[:d1, d1:]
    A = np.stack([ens.dense(k).ravel(order="F") for k in range(ens.n)])
    resid = y - A @ cp.vec(M, order="F")
    budget = np.sqrt(r) * alpha
    if kind == "mixed":
        cons = [cp.norm(M, 2, axis=0) <= alpha, cp.trace(Z[:d1, :d1]) <= budget,
                cp.diag(Z[d1:, d1:]) <= budget]
    else:
        cons = [cp.abs(M) <= alpha, cp.diag(Z) <= budget]
    prob = cp.Problem(cp.Minimize(cp.sum_squares(resid)), cons)
    prob.solve(solver=cp.CLARABEL)
    return float(prob.value), np.asarray(M.value)
