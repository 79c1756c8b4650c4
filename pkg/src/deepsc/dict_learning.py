"""Single-layer dictionary training: OMP coding alternated with K-SVD."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .patchlab import PatchMatrix
from .sparse_coding import Dictionary, SparseCode, encode_batch, synthesize

log = logging.getLogger(__name__)


class UnusedAtomPolicy(enum.Enum):
    REPLACE_WITH_WORST_PATCH = "replace"
    KEEP = "keep"


@dataclass(frozen=True)
class TrainConfig:
    sparsity: int
    iterations: int = 20
    unused_atom_policy: UnusedAtomPolicy = UnusedAtomPolicy.REPLACE_WITH_WORST_PATCH
    # the shipped policies are deterministic; kept so randomized ones fit in
    rng_seed: int = 0

    def __post_init__(self):
        if self.sparsity < 1:
            raise ValueError("sparsity must be >= 1")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")


class TrainResult(NamedTuple):
    dictionary: Dictionary
    code: SparseCode
    error_trace: list


def residual_norm(dictionary: Dictionary, patches: PatchMatrix, code: SparseCode) -> float:
    return float(np.linalg.norm(patches.values - synthesize(dictionary.values, code)))


def ksvd_update_step(
    dictionary: Dictionary,
    patches: PatchMatrix,
    code: SparseCode,
    policy: UnusedAtomPolicy = UnusedAtomPolicy.REPLACE_WITH_WORST_PATCH,
) -> tuple[Dictionary, SparseCode]:
    """One K-SVD sweep over the atoms in index order with supports held fixed.

    Each used atom and its coefficient row become the best rank-1
    approximation of the residual restricted to the signals using it.
    Unused atoms are either kept or replaced by the normalized patch with
    the largest current residual (lowest index on ties, each patch at most
    once per sweep).
    """
    if patches.dim != dictionary.dim:
        raise ValueError(f"patch dim {patches.dim} != dictionary dim {dictionary.dim}")
    if code.atoms != dictionary.atoms or code.count != patches.count:
        raise ValueError("code shape does not match dictionary/patches")

    Y = patches.values
    A = dictionary.values.copy()
    csc = code.matrix.copy()
    csc.sort_indices()
    col_of_entry = np.repeat(np.arange(code.count), np.diff(csc.indptr))
    X = np.zeros((code.atoms, code.count))
    X[csc.indices, col_of_entry] = csc.data
    users = csc.tocsr()
    R = Y - A @ X
    err = np.einsum("ij,ij->j", R, R)
    taken = np.zeros(code.count, dtype=bool)

    for k in range(dictionary.atoms):
        S = users.indices[users.indptr[k] : users.indptr[k + 1]]
        if S.size == 0:
            if policy is UnusedAtomPolicy.REPLACE_WITH_WORST_PATCH:
                _replace_unused(A, k, Y, err, taken)
            continue
        E = R[:, S] + np.outer(A[:, k], X[k, S])
        if not np.any(E):
            continue
        atom = _top_left_singular(E)
        if atom @ A[:, k] < 0:
            atom = -atom
        A[:, k] = atom
        coefs = atom @ E
        X[k, S] = coefs
        R[:, S] = E - np.outer(atom, coefs)
        err[S] = np.einsum("ij,ij->j", R[:, S], R[:, S])

    csc.data = X[csc.indices, col_of_entry]
    return Dictionary(A), SparseCode(csc)


def _top_left_singular(E: np.ndarray) -> np.ndarray:
    """Unit leading left singular vector of ``E``, via the smaller Gram matrix."""
    n, m = E.shape
    if m >= n:
        _, V = np.linalg.eigh(E @ E.T)
        u = V[:, -1]
    else:
        _, V = np.linalg.eigh(E.T @ E)
        u = E @ V[:, -1]
    return u / np.linalg.norm(u)


def _replace_unused(A: np.ndarray, k: int, Y: np.ndarray, err: np.ndarray, taken: np.ndarray) -> None:
    masked = np.where(taken, -1.0, err)
    worst = int(np.argmax(masked))
    norm = np.linalg.norm(Y[:, worst])
    if masked[worst] <= 0 or norm == 0:
        return
    A[:, k] = Y[:, worst] / norm
    taken[worst] = True


def train(patches: PatchMatrix, init: Dictionary, config: TrainConfig) -> TrainResult:
    """Alternate OMP coding and K-SVD sweeps for ``config.iterations`` rounds.

    ``error_trace[i]`` is the Frobenius residual right after the coding
    stage of round ``i``; the returned code is re-encoded against the final
    dictionary.
    """
    if patches.dim != init.dim:
        raise ValueError(f"patch dim {patches.dim} != dictionary dim {init.dim}")
    if config.sparsity > min(init.dim, init.atoms):
        raise ValueError(f"sparsity {config.sparsity} exceeds min(dim, atoms)")
    dictionary = init
    trace = []
    for it in range(config.iterations):
        code = encode_batch(dictionary, patches, config.sparsity)
        trace.append(residual_norm(dictionary, patches, code))
        log.debug("iteration %d residual %.6g", it, trace[-1])
        dictionary, code = ksvd_update_step(dictionary, patches, code, config.unused_atom_policy)
    code = encode_batch(dictionary, patches, config.sparsity)
    return TrainResult(dictionary, code, trace)
