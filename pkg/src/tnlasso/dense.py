"""Dense linear algebra and seeded randomness.

Matrices are plain ``float64`` numpy arrays.  Whenever a matrix is filled
from a flat stream of numbers, or flattened into one, the order is
column-major: ``vec(M)`` stacks the columns of ``M`` vertically.
"""

import hashlib

import numpy as np

from .errors import RankDeficiencyError, SvdConvergenceError

__all__ = [
    "RngStream",
    "as_matrix",
    "vec",
    "unvec",
    "svd",
    "spectral_norm",
    "matrix_rank",
    "gaussian_matrix",
    "random_rank_r",
]

_EPS = np.finfo(float).eps


def as_matrix(M):
    """Return ``M`` as a finite 2-D float64 array (copy-free when possible)."""
    A = np.asarray(M, dtype=float)
    if A.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    return A


def vec(M):
    return np.asarray(M, dtype=float).ravel(order="F")


def unvec(v, rows, cols):
    return np.asarray(v, dtype=float).reshape((rows, cols), order="F")


class RngStream:
    """Labelled, seeded random stream backed by a Philox counter generator.

    Two streams with the same ``(seed, label)`` produce the same draws in
    the same order on every platform.  Different labels give independent
    streams, so experiment legs ("b", "eta", "g", "packing", ...) never
    perturb each other.

    A stream is single-owner state; use :meth:`child` to hand an
    independent stream to another component.
    """

    def __init__(self, seed, label="root"):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        self.seed = seed
        self.label = str(label)
        digest = hashlib.blake2b(self.label.encode("utf-8"), digest_size=16).digest()
        entropy = [seed, int.from_bytes(digest, "little")]
        self._gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, label={self.label!r})"

    def child(self, name):
        """Fresh stream keyed by ``(seed, label/name)``; independent of draws made here."""
        return RngStream(self.seed, f"{self.label}/{name}")

    @property
    def generator(self):
        return self._gen

    def normal(self, size=None):
        return self._gen.standard_normal(size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size=size)

    def signs(self, size):
        return np.where(self._gen.integers(0, 2, size=size) == 1, 1.0, -1.0)

    def permutation(self, n):
        return self._gen.permutation(n)


def gaussian_matrix(rows, cols, rng):
    """``rows x cols`` matrix of i.i.d. N(0, 1) draws, filled column by column."""
    if rows < 1 or cols < 1:
        raise ValueError("rows and cols must be >= 1")
    return unvec(rng.normal(rows * cols), rows, cols)


def _round_robin(n):
    """Rounds of disjoint index pairs covering every pair once (circle method)."""
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        pairs = [(players[i], players[m - 1 - i]) for i in range(m // 2)]
        pairs = [(min(p, q), max(p, q)) for p, q in pairs if p < n and q < n]
        if pairs:
            rounds.append((np.array([p for p, _ in pairs]), np.array([q for _, q in pairs])))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def _complete_orthonormal(U, good):
    """Replace the columns of ``U`` not flagged ``good`` by an orthonormal completion."""
    m, k = U.shape
    basis = [U[:, j] for j in range(k) if good[j]]
    out = U.copy()
    candidates = iter(np.eye(m))
    for j in range(k):
        if good[j]:
            continue
        for e in candidates:
            w = e.copy()
            for _ in range(2):
                for b in basis:
                    w -= (b @ w) * b
            nw = np.linalg.norm(w)
            if nw > 1e-6:
                w /= nw
                basis.append(w)
                out[:, j] = w
                break
    return out


def svd(M, tol=1e-12, max_sweeps=100):
    """Thin SVD by one-sided (Hestenes) Jacobi rotations.

    Returns ``U`` (m x k), ``s`` (k, descending) and ``V`` (n x k) with
    ``k = min(m, n)`` such that ``M = U @ diag(s) @ V.T``.  Columns are
    orthogonalised in parallel round-robin order; a sweep ends when every
    pair has relative inner product below ``tol``.

    Raises
    ------
    SvdConvergenceError
        If the rotations have not converged after ``max_sweeps`` sweeps.
    """
    A = as_matrix(M)
    m, n = A.shape
    if m < n:
        V, s, U = svd(A.T, tol=tol, max_sweeps=max_sweeps)
        return U, s, V

    W = A.copy()
    V = np.eye(n)
    scale = np.linalg.norm(W)
    if scale == 0.0:
        return np.eye(m, n), np.zeros(n), np.eye(n)
    floor = (_EPS * scale) ** 2
    rounds = _round_robin(n)

    converged = n == 1
    off = 0.0
    sweeps = 0
    while not converged:
        if sweeps >= max_sweeps:
            raise SvdConvergenceError(sweeps, off)
        sweeps += 1
        off = 0.0
        for p, q in rounds:
            wp, wq = W[:, p], W[:, q]
            a = np.einsum("ij,ij->j", wp, wp)
            b = np.einsum("ij,ij->j", wq, wq)
            g = np.einsum("ij,ij->j", wp, wq)
            live = (a > floor) & (b > floor)
            rel = np.zeros_like(g)
            rel[live] = np.abs(g[live]) / np.sqrt(a[live] * b[live])
            off = max(off, float(rel.max(initial=0.0)))
            act = rel > tol
            if not act.any():
                continue
            p, q, a, b, g = p[act], q[act], a[act], b[act], g[act]
            zeta = (b - a) / (2.0 * g)
            t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            c = 1.0 / np.sqrt(1.0 + t * t)
            sn = c * t
            wp, wq = W[:, p], W[:, q]
            W[:, p], W[:, q] = c * wp - sn * wq, sn * wp + c * wq
            vp, vq = V[:, p], V[:, q]
            V[:, p], V[:, q] = c * vp - sn * vq, sn * vp + c * vq
        converged = off <= tol

    s = np.linalg.norm(W, axis=0)
    order = np.argsort(-s, kind="stable")
    s, W, V = s[order], W[:, order], V[:, order]
    cutoff = max(m, n) * _EPS * s[0] * 16
    good = s > cutoff
    U = np.zeros((m, n))
    U[:, good] = W[:, good] / s[good]
    if not good.all():
        U = _complete_orthonormal(U, good)
    return U, s, V


def spectral_norm(M):
    A = as_matrix(M)
    if A.size == 0:
        return 0.0
    return float(svd(A)[1][0])


def matrix_rank(M, rtol=1e-8):
    """Number of singular values at or above ``rtol`` times the largest."""
    s = svd(M)[1]
    if s[0] == 0.0:
        return 0
    return int(np.sum(s >= rtol * s[0]))


def random_rank_r(d1, d2, r, rng):
    """Gaussian-factor product ``U @ V.T`` with U: d1 x r, V: d2 x r.

    The result is checked to have rank exactly ``r`` (smallest retained
    singular value at least 1e-8 of the largest).  A deficient draw is
    redrawn once before giving up.
    """
    if not 1 <= r <= min(d1, d2):
        raise ValueError(f"need 1 <= r <= min(d1, d2), got r={r}")
    for _ in range(2):
        U = gaussian_matrix(d1, r, rng)
        V = gaussian_matrix(d2, r, rng)
        M = U @ V.T
        s = svd(M)[1]
        if s[r - 1] >= 1e-8 * s[0]:
            return M
    raise RankDeficiencyError(f"rank-{r} draw was deficient twice")
