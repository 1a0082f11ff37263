import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gems.linalg import (
    as_matrix,
    covariance,
    flat_cosine,
    frobenius_norm,
    load_matrix,
    save_matrix,
    svd,
    truncated_basis,
)


def _random(rng, m, n):
    return rng.standard_normal((m, n))


def test_svd_reconstruction_and_orthonormality(rng):
    for _ in range(20):
        m = int(rng.integers(1, 20))
        n = int(rng.integers(1, 20))
        a = _random(rng, m, n)
        res = svd(a)
        p = min(m, n)
        assert res.u.shape == (m, p)
        assert res.v.shape == (n, p)
        recon = res.u @ np.diag(res.sigma) @ res.v.T
        assert np.linalg.norm(recon - a) <= 1e-8 * max(1.0, np.linalg.norm(a))
        assert np.linalg.norm(res.u.T @ res.u - np.eye(p)) <= 1e-10 * max(1, p)
        assert np.linalg.norm(res.v.T @ res.v - np.eye(p)) <= 1e-10 * max(1, p)
        assert np.all(np.diff(res.sigma) <= 1e-12)
        assert np.all(res.sigma >= 0)


def test_svd_matches_lapack_singular_values(rng):
    for _ in range(10):
        a = _random(rng, 12, 7)
        got = svd(a).sigma
        want = np.linalg.svd(a, compute_uv=False)
        assert np.allclose(got, want, atol=1e-10)


def test_svd_sign_convention(rng):
    a = _random(rng, 9, 9)
    res = svd(a)
    for j in range(9):
        k = int(np.argmax(np.abs(res.u[:, j])))
        assert res.u[k, j] >= 0.0


def test_svd_rank_deficient_keeps_orthonormal_u():
    a = np.zeros((5, 5))
    a[0, 0] = 3.0  # rank 1
    res = svd(a)
    assert np.linalg.norm(res.u.T @ res.u - np.eye(5)) <= 1e-10
    recon = res.u @ np.diag(res.sigma) @ res.v.T
    assert np.linalg.norm(recon - a) <= 1e-8


def test_svd_determinism(rng):
    a = _random(rng, 16, 16)
    r1 = svd(a)
    r2 = svd(a.copy())
    assert np.array_equal(r1.u, r2.u)
    assert np.array_equal(r1.sigma, r2.sigma)
    assert np.array_equal(r1.v, r2.v)


def test_truncated_basis_full_rank_identity(rng):
    a = _random(rng, 6, 9)
    u = truncated_basis(a, 6)
    assert np.linalg.norm(u @ u.T - np.eye(6)) <= 1e-10


def test_truncated_basis_matches_eigendecomposition_oracle():
    rng = np.random.default_rng(123)
    a = rng.standard_normal((4, 4))
    u = truncated_basis(a, 2)
    # independent oracle: eigendecomposition of a @ a.T
    evals, evecs = np.linalg.eigh(a @ a.T)
    order = np.argsort(-evals)
    oracle = evecs[:, order[:2]]
    for j in range(2):
        k = int(np.argmax(np.abs(oracle[:, j])))
        if oracle[k, j] < 0:
            oracle[:, j] = -oracle[:, j]
    assert np.linalg.norm(u - oracle) <= 1e-8


def test_truncated_basis_projector_properties(rng):
    a = _random(rng, 10, 10)
    u = truncated_basis(a, 3)
    p = u @ u.T
    assert np.linalg.norm(p @ p - p) <= 1e-10
    assert np.linalg.norm(p - p.T) <= 1e-12


def test_truncated_basis_exact_capture(rng):
    # rank-2 matrix is fully captured by its rank-2 basis
    x = _random(rng, 8, 2)
    y = _random(rng, 2, 8)
    a = x @ y
    u = truncated_basis(a, 2)
    assert np.linalg.norm(u @ u.T @ a - a) <= 1e-8 * np.linalg.norm(a)


def test_truncated_basis_rejects_bad_rank(rng):
    a = _random(rng, 4, 4)
    with pytest.raises(ValueError):
        truncated_basis(a, 0)
    with pytest.raises(ValueError):
        truncated_basis(a, 5)


def test_covariance_scalar_oracle():
    rng = np.random.default_rng(5)
    f = rng.standard_normal((4, 6))
    got = covariance(f)
    want = np.zeros((4, 4))
    for i in range(4):
        for j in range(4):
            for c in range(6):
                want[i, j] += f[i, c] * f[j, c]
    assert np.allclose(got, want, atol=1e-12)
    assert np.linalg.norm(got - got.T) <= 1e-12


def test_flat_cosine_and_norm(rng):
    a = _random(rng, 3, 5)
    assert abs(flat_cosine(a, a) - 1.0) <= 1e-12
    assert abs(flat_cosine(a, -a) + 1.0) <= 1e-12
    assert abs(frobenius_norm(a) - np.linalg.norm(a)) <= 1e-12
    with pytest.raises(ValueError, match="degenerate"):
        flat_cosine(a, np.zeros_like(a))


def test_as_matrix_validation():
    with pytest.raises(ValueError, match="ndim"):
        as_matrix(np.zeros(3))
    with pytest.raises(ValueError, match="non-finite"):
        as_matrix(np.array([[1.0, np.nan]]))


def test_matrix_serialization_round_trip(rng):
    a = _random(rng, 7, 3).astype(np.float32).astype(np.float64)
    buf = io.BytesIO()
    save_matrix(a, buf)
    buf.seek(0)
    b = load_matrix(buf)
    assert np.array_equal(a, b)
    # byte identity of re-serialization
    buf2 = io.BytesIO()
    save_matrix(b, buf2)
    assert buf.getvalue() == buf2.getvalue()


def test_matrix_serialization_truncation_errors():
    buf = io.BytesIO(b'{"rows":2,"cols":2,"dtype":"f32"}\n\x00\x00')
    with pytest.raises(ValueError, match="truncated"):
        load_matrix(buf)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 2**32 - 1))
def test_svd_property_reconstruction(m, n, seed):
    a = np.random.default_rng(seed).standard_normal((m, n))
    res = svd(a)
    recon = res.u @ np.diag(res.sigma) @ res.v.T
    assert np.linalg.norm(recon - a) <= 1e-8 * max(1.0, np.linalg.norm(a))
