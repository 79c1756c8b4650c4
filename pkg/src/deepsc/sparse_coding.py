"""Orthogonal Matching Pursuit over unit-norm dictionaries.

Two code paths compute the same greedy pursuit: :func:`omp` handles one
signal with a plain least-squares re-fit and is kept simple on purpose;
:func:`encode_batch` runs all signals of a batch in lock-step with incremental
QR factors of the selected atoms. Both pick the atom with the largest absolute correlation
(lowest index on ties) and stop early when the residual drops to the
tolerance or the selected atoms become numerically rank deficient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .patchlab import PatchMatrix

NORM_TOL = 1e-10
RANK_TOL = 1e-10
DEFAULT_REL_TOL = 1e-12
CHUNK = 4096


@dataclass(frozen=True, eq=False)
class Dictionary:
    """``dim x atoms`` matrix whose columns have unit Euclidean norm."""

    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2 or values.size == 0:
            raise ValueError("dictionary must be a non-empty 2-D matrix")
        if not np.all(np.isfinite(values)):
            raise ValueError("dictionary contains non-finite entries")
        norms = np.linalg.norm(values, axis=0)
        if np.any(np.abs(norms - 1.0) > NORM_TOL):
            raise ValueError("dictionary atoms must have unit norm")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_columns(cls, columns: np.ndarray) -> "Dictionary":
        """Normalize the columns of ``columns`` (none may be zero)."""
        columns = np.asarray(columns, dtype=np.float64)
        norms = np.linalg.norm(columns, axis=0)
        if np.any(norms == 0):
            raise ValueError("cannot normalize a zero atom")
        return cls(columns / norms)

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    @property
    def atoms(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True, eq=False)
class SparseCode:
    """Sparse coefficients, one CSC column per signal.

    Every stored entry is a selected atom, so an explicit zero coefficient
    still counts towards the support.
    """

    matrix: sp.csc_matrix

    @property
    def atoms(self) -> int:
        return self.matrix.shape[0]

    @property
    def count(self) -> int:
        return self.matrix.shape[1]

    def column(self, i: int) -> list[tuple[int, float]]:
        m = self.matrix
        lo, hi = m.indptr[i], m.indptr[i + 1]
        return [(int(k), float(c)) for k, c in zip(m.indices[lo:hi], m.data[lo:hi])]

    def support_sizes(self) -> np.ndarray:
        return np.diff(self.matrix.indptr)

    def to_dense(self) -> np.ndarray:
        return self.matrix.toarray()

    @classmethod
    def from_dense(cls, dense: np.ndarray) -> "SparseCode":
        return cls(sp.csc_matrix(np.asarray(dense, dtype=np.float64)))

    @classmethod
    def from_supports(cls, atoms: int, supports: np.ndarray, coefs: np.ndarray) -> "SparseCode":
        """Build from ``count x s`` index/coefficient arrays padded with -1."""
        count = supports.shape[0]
        valid = supports >= 0
        indptr = np.concatenate([[0], np.cumsum(valid.sum(axis=1))])
        rows = supports[valid]
        data = coefs[valid]
        # canonical CSC wants sorted indices within a column
        order = np.lexsort((rows, np.repeat(np.arange(count), valid.sum(axis=1))))
        return cls(sp.csc_matrix((data[order], rows[order], indptr), shape=(atoms, count)))


def _check_sparsity(dictionary: Dictionary, sparsity: int) -> None:
    if not 1 <= sparsity <= min(dictionary.dim, dictionary.atoms):
        raise ValueError(
            f"sparsity {sparsity} out of range 1..{min(dictionary.dim, dictionary.atoms)}"
        )


def omp(dictionary: Dictionary, signal, sparsity: int, residual_tol: float | None = None):
    """Greedy OMP for a single signal.

    Returns ``(atom indices, coefficients)`` in selection order. The
    coefficients are the least-squares fit on the final support.
    ``residual_tol`` defaults to ``1e-12 * ||signal||``.
    """
    A = dictionary.values
    y = np.asarray(signal, dtype=np.float64).ravel()
    if y.shape[0] != dictionary.dim:
        raise ValueError(f"signal length {y.shape[0]} != dictionary dim {dictionary.dim}")
    _check_sparsity(dictionary, sparsity)
    if residual_tol is None:
        residual_tol = DEFAULT_REL_TOL * np.linalg.norm(y)

    support: list[int] = []
    coefs = np.zeros(0)
    residual = y
    while len(support) < sparsity and np.linalg.norm(residual) > residual_tol:
        corr = np.abs(A.T @ residual)
        corr[support] = -1.0
        k = int(np.argmax(corr))
        trial = support + [k]
        sv = np.linalg.svd(A[:, trial], compute_uv=False)
        if sv[-1] < RANK_TOL * sv[0]:
            break
        support = trial
        coefs = np.linalg.lstsq(A[:, support], y, rcond=None)[0]
        residual = y - A[:, support] @ coefs
    return np.array(support, dtype=np.int64), coefs


def encode_matrix(dictionary: Dictionary, Y: np.ndarray, sparsity: int, residual_tol=None) -> SparseCode:
    """Batch OMP on a raw ``dim x count`` matrix.

    ``residual_tol`` may be a scalar or a per-column array; by default it is
    ``1e-12`` times each column's norm.
    """
    A = dictionary.values
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim != 2 or Y.shape[0] != dictionary.dim:
        raise ValueError(f"signal dim {Y.shape[0]} != dictionary dim {dictionary.dim}")
    _check_sparsity(dictionary, sparsity)
    m = Y.shape[1]
    if residual_tol is None:
        tol = DEFAULT_REL_TOL * np.linalg.norm(Y, axis=0)
    else:
        tol = np.broadcast_to(np.asarray(residual_tol, dtype=np.float64), (m,))
    supports = np.full((m, sparsity), -1, dtype=np.int64)
    coefs = np.zeros((m, sparsity))
    # fixed-size column blocks bound the per-signal QR storage
    for lo in range(0, m, CHUNK):
        hi = min(lo + CHUNK, m)
        supports[lo:hi], coefs[lo:hi] = _omp_block(A, Y[:, lo:hi], sparsity, tol[lo:hi])
    return SparseCode.from_supports(dictionary.atoms, supports, coefs)


def _omp_block(A: np.ndarray, Y: np.ndarray, sparsity: int, tol: np.ndarray):
    m = Y.shape[1]
    supports = np.full((m, sparsity), -1, dtype=np.int64)
    coefs = np.zeros((m, sparsity))
    # per signal: orthonormal basis Q of the selected atoms and A_S = Q R
    Q = np.zeros((m, A.shape[0], sparsity))
    R = np.zeros((m, sparsity, sparsity))
    residual = Y.copy()
    active = np.linalg.norm(residual, axis=0) > tol
    for step in range(sparsity):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        corr = np.abs(A.T @ residual[:, idx])
        if step:
            corr[supports[idx, :step].T, np.arange(idx.size)] = -1.0
        picks = np.argmax(corr, axis=0)
        a = A[:, picks].T  # len(idx) x n
        Qi = Q[idx, :, :step]
        # Gram-Schmidt twice keeps Q orthonormal to working precision
        r1 = np.einsum("bnk,bn->bk", Qi, a)
        v = a - np.einsum("bnk,bk->bn", Qi, r1)
        r2 = np.einsum("bnk,bn->bk", Qi, v)
        v -= np.einsum("bnk,bk->bn", Qi, r2)
        Ri = R[idx, : step + 1, : step + 1].copy()
        Ri[:, :step, step] = r1 + r2
        Ri[:, step, step] = np.linalg.norm(v, axis=1)
        # singular values of R equal those of the selected atoms
        S = np.linalg.svd(Ri, compute_uv=False)
        ok = S[:, -1] >= RANK_TOL * S[:, 0]
        # rank-deficient signals keep their previous fit and stop
        active[idx[~ok]] = False
        idx, picks, v, Ri = idx[ok], picks[ok], v[ok], Ri[ok]
        if idx.size == 0:
            break
        Q[idx, :, step] = v / Ri[:, step, step][:, None]
        R[idx, : step + 1, : step + 1] = Ri
        supports[idx, step] = picks
        Qk = Q[idx, :, : step + 1]
        qty = np.einsum("bnk,nb->bk", Qk, Y[:, idx])
        coefs[idx, : step + 1] = np.linalg.solve(Ri, qty[:, :, None])[:, :, 0]
        residual[:, idx] = Y[:, idx] - np.einsum("bnk,bk->nb", Qk, qty)
        active[idx] = np.linalg.norm(residual[:, idx], axis=0) > tol[idx]
    return supports, coefs


def encode_batch(dictionary: Dictionary, patches: PatchMatrix, sparsity: int, residual_tol=None) -> SparseCode:
    """OMP-encode every column of ``patches``."""
    if patches.dim != dictionary.dim:
        raise ValueError(f"patch dim {patches.dim} != dictionary dim {dictionary.dim}")
    return encode_matrix(dictionary, patches.values, sparsity, residual_tol)


def synthesize(matrix: np.ndarray, code: SparseCode) -> np.ndarray:
    """``matrix @ code`` as a dense array."""
    if code.atoms != matrix.shape[1]:
        raise ValueError(f"code has {code.atoms} atoms, dictionary has {matrix.shape[1]}")
    return np.asarray((code.matrix.T @ matrix.T).T)


def reconstruct(dictionary: Dictionary, code: SparseCode, like: PatchMatrix | None = None) -> PatchMatrix:
    """Synthesize ``A @ X``; origins (and removed means) are copied from ``like``."""
    values = synthesize(dictionary.values, code)
    if like is None:
        return PatchMatrix(values)
    if like.count != code.count:
        raise ValueError("source patch count does not match code")
    return like.with_values(values)
