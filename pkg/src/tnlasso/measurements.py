"""Local linear measurement ensembles and additive Gaussian noise.

Two ensembles are provided.  In the sketching ensemble measurement ``k``
reads column ``k mod d2`` of the matrix through a Gaussian vector ``b_k``
scaled by ``1/sqrt(L)``.  In the completion ensemble it reads one uniformly
sampled entry scaled by ``sqrt(d1 d2)``.  Neither is ever materialised as a
stack of dense ``d1 x d2`` matrices.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .dense import RngStream, as_matrix, gaussian_matrix

SKETCHING = "sketching"
COMPLETION = "completion"


@dataclass(frozen=True, eq=False)
class MeasurementEnsemble:
    kind: str
    d1: int
    d2: int
    n: int
    rows: np.ndarray = field(repr=False)
    cols: np.ndarray = field(repr=False)
    vectors: np.ndarray = field(repr=False)
    scale: float
    seed: int
    label: str
    L: int = 0
    with_replacement: bool = True

    @property
    def isotropy_weight(self):
        """Weight ``w`` with ``E[w * sum_k <A_k, M>^2] = ||M||_F^2``."""
        return 1.0 / self.expected_gain

    def _check(self, M):
        M = as_matrix(M)
        if M.shape != (self.d1, self.d2):
            raise ValueError(f"expected a {self.d1}x{self.d2} matrix, got {M.shape}")
        return M

    def apply(self, M):
        """Vector of ``<A_k, M>`` for ``k = 0..n-1``."""
        M = self._check(M)
        if self.kind == SKETCHING:
            return self.scale * np.einsum("ik,ik->k", self.vectors, M[:, self.cols])
        return self.scale * M[self.rows, self.cols]

    def adjoint(self, z):
        """``sum_k z_k A_k`` as a dense ``d1 x d2`` matrix."""
        z = np.asarray(z, dtype=float)
        if z.shape != (self.n,):
            raise ValueError(f"expected a vector of length {self.n}, got shape {z.shape}")
        out = np.zeros((self.d1, self.d2))
        if self.kind == SKETCHING:
            contrib = self.vectors * (self.scale * z)
            np.add.at(out.T, self.cols, contrib.T)
        else:
            np.add.at(out, (self.rows, self.cols), self.scale * z)
        return out

    def dense(self, k):
        """Measurement matrix ``A_k``; for tests and debugging only."""
        A = np.zeros((self.d1, self.d2))
        if self.kind == SKETCHING:
            A[:, self.cols[k]] = self.scale * self.vectors[:, k]
        else:
            A[self.rows[k], self.cols[k]] = self.scale
        return A

    def gram_bound(self):
        """Largest eigenvalue of ``A* A`` (exact, via per-column blocks)."""
        if self.kind == SKETCHING:
            best = 0.0
            for j in range(self.d2):
                Bj = self.vectors[:, self.cols == j]
                if Bj.size:
                    best = max(best, float(np.linalg.eigvalsh(Bj @ Bj.T)[-1]))
            return self.scale**2 * best
        counts = np.bincount(self.rows * self.d2 + self.cols, minlength=self.d1 * self.d2)
        return self.scale**2 * float(counts.max())

    @property
    def expected_gain(self):
        """``E sum_k <A_k, D>^2 / ||D||_F^2`` over the random draw of the ensemble."""
        return 1.0 if self.kind == SKETCHING else float(self.n)

    def expected_sq_norm(self, D):
        return self.expected_gain * float(np.sum(np.asarray(D, dtype=float) ** 2))

    def scaled(self, factor):
        """Same ensemble with every ``A_k`` multiplied by ``factor``."""
        return _replace(self, scale=self.scale * factor)

    def permuted(self, perm):
        perm = np.asarray(perm)
        return _replace(self, rows=self.rows[perm] if self.rows.size else self.rows,
                        cols=self.cols[perm],
                        vectors=self.vectors[:, perm] if self.vectors.size else self.vectors)

    def snr(self, M0, sigma):
        """``||M0||_F^2 / (n sigma^2)``; for sketching ``n = L d2``."""
        fro = float(np.sum(np.asarray(M0) ** 2))
        if sigma == 0:
            return math.inf
        return fro / (self.n * sigma**2)

    def to_record(self):
        rec = {"kind": self.kind, "d1": self.d1, "d2": self.d2, "n": self.n,
               "seed": self.seed, "label": self.label}
        if self.kind == SKETCHING:
            rec["L"] = self.L
            rec["cols"] = self.cols.tolist()
        else:
            rec["with_replacement"] = self.with_replacement
            rec["rows"] = self.rows.tolist()
            rec["cols"] = self.cols.tolist()
        return rec

    @classmethod
    def from_record(cls, rec):
        rng = RngStream(rec["seed"], rec["label"])
        if rec["kind"] == SKETCHING:
            ens = build_sketching(rec["d1"], rec["d2"], rec["L"], rng)
        elif rec["kind"] == COMPLETION:
            ens = build_completion(rec["d1"], rec["d2"], rec["n"], rng,
                                   with_replacement=rec.get("with_replacement", True))
        else:
            raise ValueError(f"unknown ensemble kind {rec['kind']!r}")
        if ens.cols.tolist() != list(rec["cols"]) or (
                "rows" in rec and ens.rows.tolist() != list(rec["rows"])):
            raise ValueError("record index schedule does not match its seed")
        return ens


def _replace(ens, **changes):
    fields = {k: getattr(ens, k) for k in ens.__dataclass_fields__}
    fields.update(changes)
    return MeasurementEnsemble(**fields)


def build_sketching(d1, d2, L, rng):
    """``L d2`` sketches; measurement ``k`` reads column ``k mod d2``."""
    if min(d1, d2, L) < 1:
        raise ValueError("d1, d2 and L must be >= 1")
    n = L * d2
    B = gaussian_matrix(d1, n, rng.child("b"))
    cols = np.arange(n) % d2
    return MeasurementEnsemble(SKETCHING, d1, d2, n, np.zeros(0, int), cols, B,
                               1.0 / math.sqrt(L), rng.seed, rng.label, L=L)


def build_completion(d1, d2, n, rng, with_replacement=True):
    """``n`` entry samples scaled by ``sqrt(d1 d2)``.

    ``with_replacement=False`` draws distinct entries (requires
    ``n <= d1 d2``); with ``n = d1 d2`` every entry is observed once.  This
    mode is a debugging aid and not the i.i.d. sampling model.
    """
    if min(d1, d2, n) < 1:
        raise ValueError("d1, d2 and n must be >= 1")
    idx_rng = rng.child("idx")
    if with_replacement:
        flat = idx_rng.integers(0, d1 * d2, size=n)
    else:
        if n > d1 * d2:
            raise ValueError("without replacement needs n <= d1 * d2")
        flat = idx_rng.permutation(d1 * d2)[:n]
    rows, cols = np.divmod(np.asarray(flat, dtype=np.int64), d2)
    return MeasurementEnsemble(COMPLETION, d1, d2, n, rows, cols, np.zeros((0, 0)),
                               math.sqrt(d1 * d2), rng.seed, rng.label,
                               with_replacement=with_replacement)


@dataclass(frozen=True)
class NoiseSpec:
    sigma: float
    seed: int = 0


def add_noise(y, spec):
    """``y + eta`` with ``eta`` i.i.d. N(0, sigma^2) from the ``eta`` stream of ``spec.seed``."""
    y = np.asarray(y, dtype=float)
    if spec.sigma < 0:
        raise ValueError("sigma must be >= 0")
    if spec.sigma == 0:
        return y.copy()
    return y + spec.sigma * RngStream(spec.seed, "eta").normal(y.shape)
