import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st
from sklearn.metrics import silhouette_score

import qpicell.analyze as an
from oracles import jacobi_eigh, kmo_longhand, silhouette_loops
from qpicell.analyze import (PCAModel, StabilityTrace, align_eigenvectors, explained_variance, kmo,
                             pca, project, silhouette, stability_curve, standardize)
from qpicell.errors import (DegenerateColumnError, DegenerateInputError, InsufficientRowsError,
                            InvalidInputError, SingularMatrixError)


def align_signs(U, V):
    return U * np.where(np.sum(U * V, axis=0) < 0, -1.0, 1.0)


# ---------------------------------------------------------------- standardize


def test_standardize_examples(rng):
    np.testing.assert_allclose(standardize(np.array([[1.0], [3.0]])), [[-1.0], [1.0]])
    D = rng.normal(3, 5, (30, 4))
    Z = standardize(D)
    assert np.max(np.abs(Z.mean(axis=0))) < 1e-12
    np.testing.assert_allclose(Z.std(axis=0), 1.0, rtol=1e-12)
    np.testing.assert_allclose(standardize(Z), Z, atol=1e-12)
    for j in range(4):
        col = D[:, j]
        m = sum(col) / len(col)
        s = (sum((c - m) ** 2 for c in col) / len(col)) ** 0.5
        np.testing.assert_allclose(Z[:, j], (col - m) / s, rtol=1e-12)


def test_standardize_errors():
    D = np.array([[1.0, 2.0], [1.0, 3.0], [1.0, 4.0]])
    with pytest.raises(DegenerateColumnError) as exc:
        standardize(D, names=["flat", "ok"])
    assert exc.value.column == "flat" and "flat" in str(exc.value)
    with pytest.raises(InsufficientRowsError):
        standardize(np.ones((1, 3)))
    with pytest.raises(InvalidInputError):
        standardize(np.array([[1.0, np.inf], [2.0, 3.0]]))


# ---------------------------------------------------------------- pca


def test_pca_perfectly_correlated_pair():
    x = np.arange(10.0)
    m = pca(np.column_stack([x, 2 * x + 1]))
    np.testing.assert_allclose(m.eigenvalues, [2.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(m.eigenvectors[:, 0], [2 ** -0.5, 2 ** -0.5], atol=1e-12)
    scores = project(m.standardize(np.column_stack([x, 2 * x + 1])), m, 2)
    np.testing.assert_allclose(scores[:, 1], 0.0, atol=1e-12)
    assert explained_variance(m, 1) == pytest.approx(1.0)


def test_pca_single_column():
    m = pca(np.arange(5.0)[:, None])
    np.testing.assert_allclose(m.eigenvalues, [1.0])


def test_pca_vs_jacobi(rng):
    for _ in range(5):
        D = rng.normal(size=(20, 6)) @ rng.normal(size=(6, 6))
        m = pca(D)
        Z = standardize(D)
        vals, vecs = jacobi_eigh(Z.T @ Z / 20)
        np.testing.assert_allclose(m.eigenvalues, vals, atol=1e-10)
        np.testing.assert_allclose(m.eigenvectors, align_signs(vecs, m.eigenvectors), atol=1e-8)


def test_pca_invariants(rng):
    D = rng.normal(size=(50, 7)) @ rng.normal(size=(7, 7))
    m = pca(D)
    U, mu = m.eigenvectors, m.eigenvalues
    np.testing.assert_allclose(U.T @ U, np.eye(7), atol=1e-10)
    assert np.all(np.diff(mu) <= 0) and np.all(mu >= 0)
    assert m.explained_fraction.sum() == pytest.approx(1.0, abs=1e-12)
    Z = standardize(D)
    C = Z.T @ Z / 50
    assert np.max(np.abs(C @ U - U * mu)) < 1e-8
    for k in range(7):
        j = np.argmax(np.abs(U[:, k]))
        assert U[j, k] > 0
    again = pca(D)
    assert again.eigenvectors.tobytes() == U.tobytes()


def test_pca_sign_convention_ignores_solver_signs(rng, monkeypatch):
    D = rng.normal(size=(40, 5)) @ rng.normal(size=(5, 5))
    ref = pca(D)
    real = an._eigh

    def flipped(C):
        mu, U = real(C)
        return mu, -U

    monkeypatch.setattr(an, "_eigh", flipped)
    assert pca(D).eigenvectors.tobytes() == ref.eigenvectors.tobytes()


def test_pca_warns_when_wide(rng):
    with pytest.warns(UserWarning):
        pca(rng.normal(size=(4, 6)))


def test_pca_rejects_nonfinite():
    with pytest.raises(InvalidInputError):
        pca(np.array([[1.0, np.nan], [2.0, 1.0], [0.0, 3.0]]))


def test_project_and_explained(rng):
    D = rng.normal(size=(25, 4))
    m = pca(D)
    Z = m.standardize(D)
    S = project(Z, m, 4)
    np.testing.assert_allclose(np.linalg.norm(S, axis=1), np.linalg.norm(Z, axis=1), rtol=1e-12)
    np.testing.assert_allclose(project(Z, m, 2), Z @ m.eigenvectors[:, :2], rtol=1e-14)
    assert explained_variance(m, 4) == pytest.approx(1.0)
    assert explained_variance(m, 2) == pytest.approx(m.eigenvalues[:2].sum() / m.eigenvalues.sum())
    with pytest.raises(InvalidInputError):
        project(Z, m, 0)
    with pytest.raises(InvalidInputError):
        explained_variance(m, 5)


# ---------------------------------------------------------------- stability


def test_stability_duplicated_rows_give_zero(rng):
    # appending an exact copy of the data leaves the correlation matrix unchanged
    D = rng.normal(size=(15, 4)) @ rng.normal(size=(4, 4))
    U = pca(D).eigenvectors
    V = align_eigenvectors(pca(np.vstack([D, D])).eigenvectors, U)
    assert np.linalg.norm(V - U) / np.linalg.norm(U) < 1e-12

    def fit_dup(X):
        # each step adds a row and its twin, so every prefix is a duplicated copy
        return pca(np.vstack([X, X]))

    tr = stability_curve(D, 6, fit=fit_dup)
    np.testing.assert_allclose(tr.s_values, stability_curve(D, 6).s_values, atol=1e-10)


def test_stability_scale_invariant_to_duplication(rng):
    D = rng.normal(size=(30, 3)) @ rng.normal(size=(3, 3))
    base = stability_curve(D, 5)
    rep = np.repeat(D, 3, axis=0)

    def fit_every_third(X):
        # refit on the prefix of the tripled data that holds the same rows
        return pca(rep[:3 * len(X)])

    tr = stability_curve(D, 5, fit=fit_every_third)
    np.testing.assert_allclose(tr.s_values, base.s_values, atol=1e-10)
    assert np.all(base.s_values >= 0)


def test_stability_invariant_to_solver_signs(rng):
    D = rng.normal(size=(40, 4)) @ rng.normal(size=(4, 4))
    base = stability_curve(D, 6)
    flip_rng = np.random.default_rng(5)

    def adversarial(X):
        m = pca(X)
        signs = flip_rng.choice([-1.0, 1.0], size=m.eigenvectors.shape[1])
        return PCAModel(m.column_means, m.column_stds, m.eigenvectors * signs, m.eigenvalues)

    other = stability_curve(D, 6, fit=adversarial)
    np.testing.assert_allclose(other.s_values, base.s_values, atol=1e-12)


def test_stability_errors(rng):
    D = rng.normal(size=(20, 5))
    with pytest.raises(InsufficientRowsError):
        stability_curve(D, 4)
    with pytest.raises(InsufficientRowsError):
        stability_curve(D, 20)


def test_settled_after():
    tr = StabilityTrace(np.arange(10, 16), np.array([0.1, 0.004, 0.02, 0.001, 0.002, 0.0]))
    assert tr.settled_after(0.005) == 13
    assert StabilityTrace(np.arange(3), np.zeros(3)).settled_after() == 0
    assert StabilityTrace(np.arange(3), np.ones(3)).settled_after() == 3


def test_align_eigenvectors():
    U = np.eye(3)
    V = -np.eye(3)
    np.testing.assert_array_equal(align_eigenvectors(V, U), U)


# ---------------------------------------------------------------- kmo


def test_kmo_two_columns_exactly_half():
    rng = np.random.default_rng(3)
    for r in np.linspace(-0.95, 0.95, 20):
        if abs(r) < 1e-9:
            continue
        x = rng.normal(size=200)
        y = r * x + np.sqrt(1 - r * r) * rng.normal(size=200)
        res = kmo(np.column_stack([x, y]))
        assert res.overall == pytest.approx(0.5, abs=1e-12)
        np.testing.assert_allclose(res.per_variable, 0.5, atol=1e-12)


def test_kmo_collinear_raises(rng):
    x = rng.normal(size=(50, 3))
    D = np.column_stack([x, x[:, 0] - 2 * x[:, 1]])
    with pytest.raises(SingularMatrixError):
        kmo(D)


def test_kmo_vs_longhand():
    rng = np.random.default_rng(50)
    D = rng.normal(size=(50, 5)) @ rng.normal(size=(5, 5))
    res = kmo(D)
    overall, per = kmo_longhand(D)
    assert res.overall == pytest.approx(overall, rel=1e-10)
    np.testing.assert_allclose(res.per_variable, per, rtol=1e-10)
    assert 0 <= res.overall <= 1 and np.all((per >= 0) & (per <= 1))


def test_kmo_needs_two_columns(rng):
    with pytest.raises(InvalidInputError):
        kmo(rng.normal(size=(10, 1)))


# ---------------------------------------------------------------- silhouette


def test_silhouette_far_blobs(rng):
    X = np.vstack([rng.normal(0, 0.1, (50, 2)), rng.normal(100, 0.1, (50, 2))])
    labels = ["a"] * 50 + ["b"] * 50
    assert silhouette(X, labels) > 0.95


def test_silhouette_shuffled_labels_near_zero():
    rng = np.random.default_rng(8)
    X = rng.normal(size=(200, 2))
    labels = rng.permutation(["a", "b", "c"] * 66 + ["a", "b"])
    assert abs(silhouette(X, labels)) < 0.1


def test_silhouette_matches_sklearn_and_loops(rng):
    X = rng.normal(size=(60, 3))
    X[:20] += 2
    labels = np.array([0] * 20 + [1] * 25 + [2] * 15)
    s = silhouette(X, labels)
    assert s == pytest.approx(silhouette_score(X, labels), abs=1e-10)
    assert s == pytest.approx(silhouette_loops(X, list(labels)), abs=1e-10)


def test_silhouette_singleton_cluster_scores_zero():
    X = np.array([[0.0], [0.1], [5.0]])
    labels = ["a", "a", "b"]
    assert silhouette(X, labels) == pytest.approx(silhouette_loops(X, labels), abs=1e-12)
    assert silhouette(X, labels) == pytest.approx(silhouette_score(X, labels), abs=1e-12)


def test_silhouette_errors(rng):
    with pytest.raises(DegenerateInputError):
        silhouette(rng.normal(size=(5, 2)), ["a"] * 5)
    with pytest.raises(InvalidInputError):
        silhouette(rng.normal(size=(5, 2)), ["a", "b"])


@given(st.integers(0, 2**31 - 1), st.integers(2, 4))
def test_silhouette_property_vs_sklearn(seed, k):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(30, 2))
    labels = np.arange(30) % k
    assert silhouette(X, labels) == pytest.approx(silhouette_score(X, labels), abs=1e-10)
