import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from boundary_rl.linalg import jacobi_eigh, min_eigenvalue


def test_examples():
    assert min_eigenvalue(np.zeros((3, 3))) == 0.0
    assert min_eigenvalue(np.eye(4)) == pytest.approx(1.0)
    assert min_eigenvalue(np.array([[2.0, 1.0], [1.0, 2.0]])) == pytest.approx(1.0, abs=1e-14)


@given(st.integers(1, 12).flatmap(
    lambda n: arrays(float, (n, n), elements=st.floats(-100, 100))))
def test_matches_lapack(M):
    A = 0.5 * (M + M.T)
    vals, vecs = jacobi_eigh(A)
    ref = np.linalg.eigvalsh(A)
    scale = max(1.0, np.abs(ref).max())
    np.testing.assert_allclose(np.sort(vals), ref, atol=1e-10 * scale)
    np.testing.assert_allclose(vecs @ np.diag(vals) @ vecs.T, A, atol=1e-9 * scale)
    np.testing.assert_allclose(vecs.T @ vecs, np.eye(len(A)), atol=1e-10)


def test_tiny_and_huge_entries():
    A = np.array([[1e-200, 1e-310], [1e-310, 2e-200]])
    assert np.all(np.isfinite(jacobi_eigh(A)[0]))
    B = np.array([[1e150, 1.0], [1.0, -1e150]])
    vals = np.sort(jacobi_eigh(B)[0])
    np.testing.assert_allclose(vals, [-1e150, 1e150])


def test_psd_gram_is_nonnegative():
    rng = np.random.default_rng(3)
    D = rng.normal(size=(7, 4))
    assert min_eigenvalue(D.T @ D) >= -1e-12
