import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deepsc.patchlab import PatchMatrix
from deepsc.sparse_coding import (
    Dictionary,
    SparseCode,
    encode_batch,
    encode_matrix,
    omp,
    reconstruct,
)


def random_dictionary(rng, n, k):
    return Dictionary.from_columns(rng.standard_normal((n, k)))


def orthonormal(rng, n):
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return Dictionary(q / np.linalg.norm(q, axis=0))


def test_dictionary_rejects_non_unit_columns():
    with pytest.raises(ValueError, match="unit norm"):
        Dictionary(np.array([[1.0, 2.0], [0.0, 0.0]]))
    with pytest.raises(ValueError):
        Dictionary.from_columns(np.zeros((3, 1)))


def test_omp_single_scaled_atom():
    rng = np.random.default_rng(0)
    d = random_dictionary(rng, 8, 20)
    support, coefs = omp(d, 3 * d.values[:, 7], 1)
    assert support.tolist() == [7]
    assert coefs[0] == pytest.approx(3.0, abs=1e-12)


def test_omp_zero_signal_is_empty():
    d = random_dictionary(np.random.default_rng(1), 6, 9)
    support, coefs = omp(d, np.zeros(6), 3)
    assert support.size == 0 and coefs.size == 0
    assert encode_matrix(d, np.zeros((6, 4)), 3).matrix.nnz == 0


def test_omp_orthonormal_expansion():
    rng = np.random.default_rng(2)
    d = orthonormal(rng, 6)
    y = rng.standard_normal(6)
    support, coefs = omp(d, y, 6)
    proj = d.values.T @ y
    assert sorted(support.tolist()) == list(range(6))
    assert np.allclose(coefs, proj[support], atol=1e-12)
    # greedy order follows decreasing projection magnitude
    assert support.tolist() == np.argsort(-np.abs(proj), kind="stable").tolist()


def test_omp_tie_breaks_to_lowest_index():
    d = Dictionary(np.eye(3))
    support, _ = omp(d, np.array([1.0, 1.0, 1.0]), 1)
    assert support.tolist() == [0]
    code = encode_matrix(d, np.array([[0.0], [2.0], [2.0]]), 1)
    assert code.column(0) == [(1, 2.0)]


def test_omp_errors():
    d = Dictionary(np.eye(3))
    with pytest.raises(ValueError):
        omp(d, np.ones(4), 1)
    with pytest.raises(ValueError):
        omp(d, np.ones(3), 4)
    with pytest.raises(ValueError):
        omp(d, np.ones(3), 0)


def test_rank_guard_stops_on_duplicate_atoms():
    a = np.array([1.0, 0.0, 0.0])
    d = Dictionary(np.stack([a, a, [0.0, 1.0, 0.0]], axis=1))
    y = np.array([2.0, 1.0, 0.5])
    # picks 0 (tie with its copy), then 2; the copy of atom 0 would make the fit singular
    support, _ = omp(d, y, 3)
    assert support.tolist() == [0, 2]
    assert sorted(k for k, _ in encode_matrix(d, y[:, None], 3).column(0)) == [0, 2]


def test_batch_matches_single_signal_path():
    rng = np.random.default_rng(4)
    d = random_dictionary(rng, 10, 25)
    Y = rng.standard_normal((10, 40))
    code = encode_matrix(d, Y, 4)
    for i in range(Y.shape[1]):
        support, coefs = omp(d, Y[:, i], 4)
        got = dict(code.column(i))
        assert sorted(got) == sorted(support.tolist())
        for k, c in zip(support, coefs):
            assert got[int(k)] == pytest.approx(c, rel=1e-9, abs=1e-9)


def test_batch_of_atoms_exact():
    rng = np.random.default_rng(5)
    d = random_dictionary(rng, 8, 12)
    patches = PatchMatrix(d.values[:, [3, 0, 11]], np.array([[0, 0], [0, 1], [0, 2]]))
    code = encode_batch(d, patches, 1)
    rec = reconstruct(d, code, patches)
    assert np.allclose(rec.values, patches.values, atol=1e-14)
    assert np.array_equal(rec.origins, patches.origins)


def test_reconstruct_examples():
    rng = np.random.default_rng(6)
    d = random_dictionary(rng, 5, 7)
    empty = SparseCode.from_dense(np.zeros((7, 3)))
    assert np.array_equal(reconstruct(d, empty).values, np.zeros((5, 3)))
    pick = np.zeros((7, 2))
    pick[2, 0] = pick[5, 1] = 1.0
    assert np.array_equal(reconstruct(d, SparseCode.from_dense(pick)).values, d.values[:, [2, 5]])
    q = orthonormal(rng, 5)
    Y = rng.standard_normal((5, 9))
    assert np.allclose(reconstruct(q, encode_matrix(q, Y, 5)).values, Y, atol=1e-10)
    with pytest.raises(ValueError):
        reconstruct(d, SparseCode.from_dense(np.zeros((6, 1))))


def test_encoding_is_deterministic():
    rng = np.random.default_rng(7)
    d = random_dictionary(rng, 16, 64)
    Y = rng.standard_normal((16, 300))
    a, b = encode_matrix(d, Y, 3), encode_matrix(d, Y, 3)
    assert (a.matrix != b.matrix).nnz == 0


def test_residual_tolerance_stops_early():
    d = Dictionary(np.eye(4))
    y = np.array([[5.0], [0.01], [0.0], [0.0]])
    code = encode_matrix(d, y, 3, residual_tol=0.1)
    assert code.column(0) == [(0, 5.0)]


@settings(max_examples=1000, deadline=None)
@given(
    n=st.integers(2, 12),
    extra=st.integers(0, 20),
    s=st.integers(1, 6),
    seed=st.integers(0, 2**32 - 1),
)
def test_omp_residual_orthogonal_to_selected_atoms(n, extra, s, seed):
    rng = np.random.default_rng(seed)
    k = n + extra
    s = min(s, n)
    d = random_dictionary(rng, n, k)
    y = rng.standard_normal(n) * rng.uniform(0.01, 100)
    support, coefs = omp(d, y, s)
    assert support.size <= s and len(set(support.tolist())) == support.size
    r = y - d.values[:, support] @ coefs
    assert np.all(np.abs(d.values[:, support].T @ r) <= 1e-8 * np.linalg.norm(y))


@settings(max_examples=200, deadline=None)
@given(n=st.integers(2, 10), k=st.integers(2, 24), seed=st.integers(0, 2**32 - 1))
def test_omp_residual_monotone(n, k, seed):
    rng = np.random.default_rng(seed)
    d = random_dictionary(rng, n, k)
    y = rng.standard_normal(n)
    norms = []
    for s in range(1, min(n, k) + 1):
        support, coefs = omp(d, y, s)
        norms.append(np.linalg.norm(y - d.values[:, support] @ coefs))
    assert all(b <= a + 1e-12 for a, b in zip(norms, norms[1:]))


@settings(max_examples=100, deadline=None)
@given(n=st.integers(3, 10), s=st.integers(1, 3), seed=st.integers(0, 2**32 - 1))
def test_span_of_orthogonal_atoms_recovered(n, s, seed):
    rng = np.random.default_rng(seed)
    q = orthonormal(rng, n).values
    extra = rng.standard_normal((n, 4))
    d = Dictionary.from_columns(np.concatenate([q, extra], axis=1))
    chosen = rng.choice(n, size=min(s, n), replace=False)
    y = q[:, chosen] @ rng.uniform(1, 2, size=chosen.size)
    support, coefs = omp(d, y, n)
    if set(chosen.tolist()) <= set(support.tolist()):
        assert np.linalg.norm(y - d.values[:, support] @ coefs) <= 1e-8 * np.linalg.norm(y)
