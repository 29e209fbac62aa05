import numpy as np
import pytest

from roadprior import template_space as ts
from roadprior.errors import DataError, DimensionMismatch, OutOfRange, RankDeficientWarning
from roadprior.template_space import ElementMatrix


def power_svd(A, k, iters=2000):
    """Top-k singular triplets by power iteration with deflation."""
    A = np.array(A, dtype=float)
    us, ss = [], []
    R = A.copy()
    for i in range(k):
        v = np.ones(A.shape[1]) / np.sqrt(A.shape[1]) + 0.01 * np.arange(A.shape[1])
        for _ in range(iters):
            v = R.T @ (R @ v)
            v /= np.linalg.norm(v)
        u = R @ v
        s = np.linalg.norm(u)
        u /= s
        us.append(u)
        ss.append(s)
        R = R - s * np.outer(u, v)
    return np.column_stack(us), np.array(ss)


def same_up_to_sign(U, V, atol):
    for k in range(U.shape[1]):
        s = np.sign(U[:, k] @ V[:, k])
        np.testing.assert_allclose(U[:, k], s * V[:, k], atol=atol)


# 4 elements of dimension 6, one per column
FIXTURE = np.array(
    [
        [1.0, 2.0, 0.5, -1.0],
        [0.0, 1.0, 3.0, 2.0],
        [4.0, -2.0, 1.0, 0.0],
        [1.5, 0.5, -0.5, 2.5],
        [-1.0, 3.0, 2.0, 1.0],
        [2.0, 0.0, 1.0, -3.0],
    ]
)


def test_diagonal_fixture():
    A = np.zeros((4, 2))
    A[0, 0], A[1, 1] = 3.0, 2.0
    sp = ts.fit(ElementMatrix(A), 2)
    np.testing.assert_allclose(sp.singular_values[:2], [3, 2])
    same_up_to_sign(sp.basis, np.eye(4)[:, :2], 1e-15)
    assert sp.explained_variance(1) == pytest.approx(9 / 13, abs=1e-15)
    assert sp.explained_variance(2) == 1.0


def test_repeated_column_rank_collapse():
    col = np.arange(1.0, 7.0)
    with pytest.warns(RankDeficientWarning):
        sp = ts.fit(ElementMatrix(np.column_stack([col, col])), 2)
    assert sp.singular_values[1] <= 1e-10
    assert sp.rank == 1


@pytest.mark.parametrize("method", ["svd", "gram"])
def test_fixture_matches_power_iteration_oracle(method):
    U, s = power_svd(FIXTURE, 2)
    sp = ts.fit(ElementMatrix(FIXTURE), 2, method=method)
    np.testing.assert_allclose(sp.singular_values[:2], s, rtol=1e-9)
    same_up_to_sign(sp.basis, U, 1e-9)


def test_gram_and_svd_paths_agree(corpus_matrix):
    a = ts.fit(corpus_matrix, 20, method="gram")
    b = ts.fit(corpus_matrix, 20, method="svd")
    np.testing.assert_allclose(a.singular_values, b.singular_values, rtol=1e-8)
    np.testing.assert_allclose(a.basis, b.basis, atol=1e-7)


def test_gram_accumulation_partition_independent(corpus_matrix):
    full = ts.gram_matrix(corpus_matrix.data)
    for chunk in (1, 7, 64, 1000):
        np.testing.assert_allclose(ts.gram_matrix(corpus_matrix.data, chunk), full, rtol=0, atol=1e-9)


def test_orthonormal_basis(corpus_space):
    U = corpus_space.basis
    assert np.max(np.abs(U.T @ U - np.eye(U.shape[1]))) < 1e-10
    s = corpus_space.singular_values
    assert np.all(np.diff(s) <= 0)
    assert corpus_space.M <= min(corpus_space.N, len(s))


def test_fit_rejects_large_rank():
    with pytest.raises(OutOfRange, match="min\\(N, L\\)"):
        ts.fit(ElementMatrix(FIXTURE), 5)


def test_fit_is_bitwise_repeatable(corpus_matrix):
    a = ts.fit(corpus_matrix, 20)
    b = ts.fit(corpus_matrix, 20)
    assert a.basis.tobytes() == b.basis.tobytes()
    assert a.singular_values.tobytes() == b.singular_values.tobytes()
    # sign convention: largest-magnitude entry of each column is positive
    idx = np.argmax(np.abs(a.basis), axis=0)
    assert np.all(a.basis[idx, np.arange(a.M)] > 0)


# ---------------------------------------------------------------- projection


def test_project_basis_column_and_null(corpus_space):
    u1 = corpus_space.basis[:, 0]
    c = corpus_space.project(u1)
    np.testing.assert_allclose(c, np.eye(20)[0], atol=1e-12)
    # a vector orthogonal to span(U_M)
    r = np.random.default_rng(3).normal(size=40)
    r -= corpus_space.basis @ (corpus_space.basis.T @ r)
    np.testing.assert_allclose(corpus_space.project(r), 0, atol=1e-12)


def test_projection_is_least_squares(corpus_space, rng):
    U = corpus_space.basis
    for _ in range(10):
        r = rng.normal(size=40) * 10
        c_ls, *_ = np.linalg.lstsq(U, r, rcond=None)
        np.testing.assert_allclose(corpus_space.project(r), c_ls, atol=1e-10)


def test_reconstruct_zero_and_idempotence(corpus_space, rng):
    assert np.array_equal(corpus_space.reconstruct(np.zeros(20)), np.zeros(40))
    c = corpus_space.project(rng.normal(size=40))
    np.testing.assert_allclose(corpus_space.project(corpus_space.reconstruct(c)), c, atol=1e-10)


def test_dimension_mismatch(corpus_space):
    with pytest.raises(DimensionMismatch):
        corpus_space.project(np.zeros(38))
    with pytest.raises(DimensionMismatch):
        corpus_space.reconstruct(np.zeros(19))


def test_error_identity(corpus_matrix, corpus_space):
    direct = ts.reconstruction_error(corpus_space, corpus_matrix)
    tail = np.sum(corpus_space.singular_values[20:] ** 2)
    assert abs(direct - tail) <= 1e-8 * tail


def test_per_element_residual_is_orthogonal_component(corpus_matrix, corpus_space):
    A = corpus_matrix.data
    U = corpus_space.basis
    for j in range(0, A.shape[1], 37):
        a = A[:, j]
        approx = corpus_space.reconstruct(corpus_space.project(a))
        assert abs(approx @ (a - approx)) < 1e-9 * max(1.0, a @ a)
        # ||a||^2 = ||c||^2 + ||residual||^2
        c = U.T @ a
        assert abs(np.linalg.norm(a - approx) ** 2 - (a @ a - c @ c)) < 1e-9 * (a @ a)


def test_rank_m_optimal_against_random_bases():
    rng = np.random.default_rng(7)
    A = rng.normal(size=(10, 30)) * np.linspace(5, 0.5, 10)[:, None]
    matrix = ElementMatrix(A)
    sp = ts.fit(matrix, 3)
    best = ts.reconstruction_error(sp, matrix)
    assert best == pytest.approx(np.sum(sp.singular_values[3:] ** 2), rel=1e-10)
    for _ in range(100):
        Q, _ = np.linalg.qr(rng.normal(size=(10, 3)))
        R = A - Q @ (Q.T @ A)
        assert best <= np.sum(R * R) + 1e-12


def test_explained_variance(corpus_space):
    assert corpus_space.explained_variance(corpus_space.rank) == pytest.approx(1.0, abs=1e-15)
    # frozen from the seed-0, 100-frame synthetic corpus
    assert corpus_space.explained_variance(20) == pytest.approx(0.9999904424705829, rel=1e-10)
    with pytest.raises(OutOfRange):
        corpus_space.explained_variance(0)
    with pytest.raises(OutOfRange):
        corpus_space.explained_variance(corpus_space.rank + 1)


def test_centering_flag(corpus):
    m = ElementMatrix.from_records(corpus, center=True)
    assert m.mean_removed and m.mean is not None
    np.testing.assert_allclose(m.data.mean(axis=1), 0, atol=1e-10)
    sp = ts.fit(m, 20)
    e = corpus[0].elements[0].vector
    approx = sp.reconstruct(sp.project(e))
    assert np.linalg.norm(approx - e) < 1.0
    assert sp.mean_removed


# ---------------------------------------------------------------- loss


def test_shape_space_loss(corpus_space, rng):
    t = rng.uniform(-10, 10, size=40)
    assert ts.shape_space_loss(corpus_space, t, t) == 0.0
    u1 = corpus_space.basis[:, 0]
    assert ts.shape_space_loss(corpus_space, t + u1, t) == pytest.approx(1.0, abs=1e-12)
    p = rng.uniform(-10, 10, size=40)
    U = corpus_space.basis
    want = sum(abs(sum(U[i, k] * (p[i] - t[i]) for i in range(40))) for k in range(20))
    assert ts.shape_space_loss(corpus_space, p, t) == pytest.approx(want, abs=1e-12)
    with pytest.raises(DimensionMismatch):
        ts.shape_space_loss(corpus_space, p[:10], t)


# ---------------------------------------------------------------- files


def test_save_load_round_trip(tmp_path, corpus_space):
    path = tmp_path / "t.json"
    ts.save(corpus_space, path)
    back = ts.load(path)
    assert np.array_equal(back.basis, corpus_space.basis)
    assert np.array_equal(back.singular_values, corpus_space.singular_values)
    assert back.source_fingerprint == corpus_space.source_fingerprint


def test_load_rejects_non_orthonormal(tmp_path, corpus_space):
    d = corpus_space.to_dict()
    d["basis"][0] += 1e-6
    with pytest.raises(DataError, match="orthonormal"):
        ts.TemplateSpace.from_dict(d)


def test_fingerprint_tracks_data(corpus_matrix):
    other = ElementMatrix(corpus_matrix.data[:, :-1], corpus_matrix.class_labels[:-1])
    assert other.fingerprint() != corpus_matrix.fingerprint()
