"""Initial dictionaries: random baselines, data patches, overcomplete DCT,
and the deterministic best-patches selector.

All seeded constructions draw from ``numpy.random.default_rng(seed)``
(PCG64), so a seed reproduces the same dictionary on every platform.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .patchlab import PatchMatrix
from .sparse_coding import Dictionary


class InitKind(enum.Enum):
    UNIFORM = "uniform"
    RANDOM = "random"
    RANDOM_PATCH_SUBSET = "randperm"
    DCT = "dct"
    BEST_PATCHES = "best"

    @classmethod
    def parse(cls, name: str) -> "InitKind":
        aliases = {"random-perm": "randperm", "random_patch_subset": "randperm",
                   "best-patches": "best", "best_patches": "best"}
        name = aliases.get(name.lower(), name.lower())
        try:
            return cls(name)
        except ValueError:
            valid = ", ".join(k.value for k in cls)
            raise ValueError(f"unknown init strategy {name!r} (expected one of {valid})") from None


@dataclass(frozen=True)
class InitStrategy:
    kind: InitKind
    seed: int = 0


def _check_dims(dim: int, atoms: int) -> None:
    if dim < 1 or atoms < 1:
        raise ValueError("dictionary dim and atom count must be >= 1")


def uniform_dict(dim: int, atoms: int, seed: int) -> Dictionary:
    """Atoms drawn uniformly from the unit sphere (normalized Gaussian draws)."""
    _check_dims(dim, atoms)
    rng = np.random.default_rng(seed)
    return Dictionary.from_columns(rng.standard_normal((dim, atoms)))


def random_dict(dim: int, atoms: int, seed: int) -> Dictionary:
    """I.i.d. Uniform[0, 1) entries, columns normalized afterwards."""
    _check_dims(dim, atoms)
    rng = np.random.default_rng(seed)
    return Dictionary.from_columns(rng.random((dim, atoms)))


def random_patch_subset(patches: PatchMatrix, atoms: int, seed: int) -> Dictionary:
    """Normalize ``atoms`` distinct patches picked by a seeded shuffle.

    Zero patches are skipped over in shuffle order.
    """
    _check_dims(patches.dim, atoms)
    if patches.count < atoms:
        raise ValueError(f"need at least {atoms} patches, got {patches.count}")
    norms = np.linalg.norm(patches.values, axis=0)
    order = np.random.default_rng(seed).permutation(patches.count)
    chosen = order[norms[order] > 0][:atoms]
    if len(chosen) < atoms:
        raise ValueError(f"only {len(chosen)} nonzero patches, need {atoms}")
    return Dictionary(patches.values[:, chosen] / norms[chosen])


def _isqrt_exact(value: int, what: str) -> int:
    root = math.isqrt(value)
    if root * root != value:
        raise ValueError(f"{what} {value} is not a perfect square")
    return root


def dct_dict(dim: int, atoms: int) -> Dictionary:
    """Overcomplete separable 2-D DCT (``dim = p**2``, ``atoms = q**2``, q >= p).

    The 1-D factor is ``cos(pi * i * j / q)`` with the mean removed from every
    column except the first; the 2-D dictionary is its Kronecker square.
    """
    p = _isqrt_exact(dim, "dim")
    q = _isqrt_exact(atoms, "atom count")
    if q < p:
        raise ValueError(f"DCT needs sqrt(atoms) >= sqrt(dim), got {q} < {p}")
    one_d = np.cos(np.pi * np.outer(np.arange(p), np.arange(q)) / q)
    one_d[:, 1:] -= one_d[:, 1:].mean(axis=0)
    return Dictionary.from_columns(np.kron(one_d, one_d))


def best_patch_counts(patches: PatchMatrix, chunk_bytes: int = 64 << 20) -> np.ndarray:
    """Per-patch count of how many other patches pick it as their 1-sparse fit.

    Each nonzero patch is coded with one atom against all other normalized
    nonzero patches (its own column excluded); ties go to the lower index.
    """
    Y = patches.values
    norms = np.linalg.norm(Y, axis=0)
    nonzero = np.flatnonzero(norms > 0)
    atoms = Y[:, nonzero] / norms[nonzero]
    counts = np.zeros(patches.count, dtype=np.int64)
    chunk = max(1, chunk_bytes // (8 * max(1, len(nonzero))))
    for start in range(0, len(nonzero), chunk):
        block = np.arange(start, min(start + chunk, len(nonzero)))
        corr = np.abs(atoms.T @ Y[:, nonzero[block]])
        corr[block, np.arange(len(block))] = -1.0
        pick = np.argmax(corr, axis=0)
        picked = corr[pick, np.arange(len(block))] >= 0
        counts += np.bincount(nonzero[pick[picked]], minlength=patches.count)
    return counts


def best_patches(patches: PatchMatrix, atoms: int) -> tuple[np.ndarray, Dictionary]:
    """Deterministically pick the ``atoms`` most frequently chosen patches.

    Returns the selected column indices (by count, descending, then index)
    and the dictionary of those normalized patches.
    """
    _check_dims(patches.dim, atoms)
    norms = np.linalg.norm(patches.values, axis=0)
    nonzero = np.flatnonzero(norms > 0)
    if patches.count < atoms or len(nonzero) < atoms:
        raise ValueError(f"only {len(nonzero)} nonzero patches, need {atoms}")
    counts = best_patch_counts(patches)
    order = nonzero[np.lexsort((nonzero, -counts[nonzero]))]
    chosen = order[:atoms]
    return chosen, Dictionary(patches.values[:, chosen] / norms[chosen])


def initial_dictionary(strategy: InitStrategy, patches: PatchMatrix, atoms: int) -> Dictionary:
    """Build the starting dictionary for ``patches`` with ``atoms`` columns."""
    kind = strategy.kind
    if kind is InitKind.UNIFORM:
        return uniform_dict(patches.dim, atoms, strategy.seed)
    if kind is InitKind.RANDOM:
        return random_dict(patches.dim, atoms, strategy.seed)
    if kind is InitKind.RANDOM_PATCH_SUBSET:
        return random_patch_subset(patches, atoms, strategy.seed)
    if kind is InitKind.DCT:
        return dct_dict(patches.dim, atoms)
    return best_patches(patches, atoms)[1]
