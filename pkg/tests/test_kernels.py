import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sketchkm import KernelSpec, cross_gram, gram, gram_rows, kernel_eval, output_matrix
from sketchkm.kernels import kernel_expansion, median_heuristic

SPECS = [KernelSpec.gaussian(0.7), KernelSpec.polynomial(3, 1.0), KernelSpec.polynomial(2, 0.0)]


def test_gaussian_self_similarity_is_one():
    assert kernel_eval(KernelSpec.gaussian(1.0), [0.3, -2.0], [0.3, -2.0]) == 1.0


def test_polynomial_homogeneous_value():
    assert kernel_eval(KernelSpec.polynomial(2, 0.0), [1, 0], [1, 1]) == 1.0


def test_gaussian_hand_value():
    v = kernel_eval(KernelSpec.gaussian(2.0), [0.0], [2.0])
    assert v == pytest.approx(math.exp(-2.0), abs=1e-15)
    assert v == pytest.approx(0.135335, abs=1e-6)


def test_sobolev_value_and_domain():
    k = KernelSpec.sobolev()
    assert kernel_eval(k, [0.2], [0.7]) == pytest.approx(1.2)
    with pytest.raises(ValueError):
        kernel_eval(k, [1.5], [0.2])
    with pytest.raises(ValueError):
        gram(k, np.zeros((3, 2)))


@pytest.mark.parametrize("bad", [0.0, -1.0])
def test_nonpositive_bandwidth_rejected(bad):
    with pytest.raises(ValueError):
        KernelSpec.gaussian(bad)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        kernel_eval(KernelSpec.gaussian(1.0), [1.0, 2.0], [1.0])


def test_gram_identical_rows_all_ones():
    K = gram(KernelSpec.gaussian(0.5), np.tile([[1.0, 2.0, 3.0]], (4, 1)))
    assert np.array_equal(K, np.ones((4, 4)))


@pytest.mark.parametrize("spec", SPECS)
def test_gram_single_point(spec):
    x = np.array([[0.3, 0.4]])
    assert gram(spec, x).shape == (1, 1)
    assert gram(spec, x)[0, 0] == pytest.approx(kernel_eval(spec, x[0], x[0]))


def test_linear_kernel_on_identity():
    assert np.array_equal(gram(KernelSpec.polynomial(1, 0.0), np.eye(2)), np.eye(2))


@pytest.mark.parametrize("spec", SPECS)
def test_gram_symmetric_psd_and_entrywise(spec, rng):
    X = rng.standard_normal((30, 3))
    K = gram(spec, X)
    assert np.max(np.abs(K - K.T)) == 0.0
    w = np.linalg.eigvalsh(K)
    assert w.min() >= -1e-8 * w.max()
    for i, j in [(0, 0), (3, 17), (29, 5)]:
        assert K[i, j] == pytest.approx(kernel_eval(spec, X[i], X[j]), rel=1e-12)


def test_gaussian_diagonal_bounded_by_one(rng):
    K = gram(KernelSpec.gaussian(0.3), rng.standard_normal((40, 4)))
    assert np.max(np.diag(K)) == 1.0
    assert K.max() <= 1.0


@pytest.mark.parametrize("spec", SPECS)
def test_gram_rows_matches_full(spec, rng):
    X = rng.standard_normal((25, 3))
    K = gram(spec, X)
    assert np.array_equal(gram_rows(spec, X, np.arange(25)), K)
    assert gram_rows(spec, X, []).shape == (0, 25)
    assert np.array_equal(gram_rows(spec, X, [2])[0], K[2])
    idx = rng.integers(0, 25, 10)
    assert np.array_equal(gram_rows(spec, X, idx), K[idx])


def test_gram_rows_out_of_range():
    with pytest.raises(IndexError):
        gram_rows(KernelSpec.gaussian(1.0), np.zeros((3, 1)), [3])


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 40), st.integers(1, 4), st.integers(0, 2**31))
def test_gram_rows_property(n, q, seed):
    r = np.random.default_rng(seed)
    X = r.standard_normal((n, q))
    spec = KernelSpec.gaussian(float(r.uniform(0.1, 5)))
    idx = r.integers(0, n, size=r.integers(0, n + 1))
    assert np.array_equal(gram_rows(spec, X, idx), gram(spec, X)[idx])


def test_cross_gram_shape_and_consistency(rng):
    A, B = rng.standard_normal((5, 2)), rng.standard_normal((7, 2))
    C = cross_gram(KernelSpec.gaussian(1.0), A, B)
    assert C.shape == (5, 7)
    assert C[1, 4] == pytest.approx(kernel_eval(KernelSpec.gaussian(1.0), A[1], B[4]))


def test_kernel_expansion_matches_dense(rng):
    spec = KernelSpec.gaussian(1.3)
    X, B = rng.standard_normal((9, 3)), rng.standard_normal((6, 3))
    coef = rng.standard_normal((6, 2))
    out = kernel_expansion(spec, X, B, coef)
    assert np.allclose(out, cross_gram(spec, X, B) @ coef, rtol=1e-13, atol=1e-13)
    assert kernel_expansion(spec, X, B, coef[:, 0]).shape == (9,)


def test_median_heuristic_positive(rng):
    assert median_heuristic(rng.standard_normal((50, 2))) > 0


def test_kernelspec_roundtrip():
    for spec in SPECS + [KernelSpec.sobolev()]:
        assert KernelSpec.from_dict(spec.to_dict()) == spec


# ---------------------------------------------------------------- output matrices

def test_identity_output_matrix_exact():
    assert np.array_equal(output_matrix("identity", d=4).M, np.eye(4))


def test_quantile_gaussian_gamma_zero_all_ones():
    M = output_matrix("quantile_gaussian", gamma=0.0, taus=[0.1, 0.5, 0.9]).M
    assert np.array_equal(M, np.ones((3, 3)))


def test_quantile_gaussian_value():
    M = output_matrix("quantile_gaussian", gamma=1.0, taus=[0.1, 0.9]).M
    assert M[0, 1] == pytest.approx(math.exp(-0.64), abs=1e-15)
    assert M[0, 1] == pytest.approx(0.527292, abs=1e-6)


@pytest.mark.parametrize("taus", [[0.5, 0.2], [0.0, 0.5], [0.3, 1.0]])
def test_quantile_gaussian_bad_levels(taus):
    with pytest.raises(ValueError):
        output_matrix("quantile_gaussian", gamma=1.0, taus=taus)


def _path_graph(d):
    P = np.zeros((d, d))
    for i in range(d - 1):
        P[i, i + 1] = P[i + 1, i] = 1
    return P


def test_graph_mix_mu_zero_identity():
    assert np.array_equal(output_matrix("graph_laplacian_mix", adjacency=_path_graph(4), mu=0.0).M,
                          np.eye(4))


def test_graph_mix_formula_and_pd():
    P = _path_graph(4)
    M = output_matrix("graph_laplacian_mix", adjacency=P, mu=0.4).M
    L = np.diag(P.sum(1)) - P
    assert np.allclose(M @ (0.4 * L + 0.6 * np.eye(4)), np.eye(4), atol=1e-12)
    assert np.linalg.eigvalsh(M).min() > 0


def test_graph_mix_singular_at_mu_one():
    P = np.zeros((3, 3))
    with pytest.raises(np.linalg.LinAlgError):
        output_matrix("graph_laplacian_mix", adjacency=P, mu=1.0)


def test_graph_mix_rejects_bad_adjacency():
    P = _path_graph(3)
    P[0, 0] = 1
    with pytest.raises(ValueError):
        output_matrix("graph_laplacian_mix", adjacency=P, mu=0.5)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.floats(0, 50), st.integers(0, 2**31))
def test_output_matrices_psd(d, gamma, seed):
    r = np.random.default_rng(seed)
    taus = np.sort(r.uniform(0.01, 0.99, d))
    if np.any(np.diff(taus) <= 0):
        return
    M = output_matrix("quantile_gaussian", gamma=gamma, taus=taus).M
    assert np.allclose(M, M.T)
    assert np.linalg.eigvalsh(M).min() >= -1e-10
    A = np.triu((r.random((d, d)) < 0.5).astype(float), 1)
    G = output_matrix("graph_laplacian_mix", adjacency=A + A.T, mu=float(r.uniform(0, 0.99))).M
    assert np.linalg.eigvalsh(G).min() >= -1e-10


def test_decomposable_gram_blocks(rng):
    X = rng.standard_normal((4, 2))
    K = gram(KernelSpec.gaussian(1.0), X)
    M = output_matrix("quantile_gaussian", gamma=2.0, taus=[0.2, 0.5, 0.8]).M
    big = np.kron(K, M)
    for i in range(4):
        for j in range(4):
            assert np.array_equal(big[3 * i:3 * i + 3, 3 * j:3 * j + 3], K[i, j] * M)
