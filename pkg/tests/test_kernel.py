import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qtube.kernel import (KernelExpansion, KernelSpec, expansion_eval, gram, kappa, kernel_eval,
                          kernel_matrix, rkhs_norm_sq)

# exp(-1/2), evaluated with mpmath at 30 digits
EXP_MINUS_HALF = 0.6065306597126334

KERNELS = [KernelSpec("gaussian", 0.2), KernelSpec("gaussian", 1.0),
           KernelSpec("polynomial", degree=3, offset=1.0), KernelSpec("linear")]

points = st.lists(st.floats(0, 1), min_size=2, max_size=2).map(np.array)


def test_spec_validation():
    with pytest.raises(ValueError):
        KernelSpec("gaussian", 0.0)
    with pytest.raises(ValueError):
        KernelSpec("polynomial", degree=0)
    with pytest.raises(ValueError):
        KernelSpec("polynomial", degree=2, offset=-1)
    with pytest.raises(ValueError):
        KernelSpec("laplace")


def test_spec_roundtrip():
    for spec in KERNELS:
        assert KernelSpec.from_dict(spec.to_dict()) == spec


def test_gaussian_same_point_is_one():
    assert kernel_eval(KernelSpec(), [0.3, 0.7], [0.3, 0.7]) == 1.0


def test_linear_dot_product():
    assert kernel_eval(KernelSpec("linear"), [1, 2], [3, -1]) == 1.0


def test_gaussian_unit_distance():
    val = kernel_eval(KernelSpec("gaussian", 1.0), [0.0, 0.0], [0.6, 0.8])
    assert val == pytest.approx(EXP_MINUS_HALF, abs=1e-15)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        kernel_eval(KernelSpec(), [0.1, 0.2], [0.1])
    with pytest.raises(ValueError):
        kernel_matrix(KernelSpec(), np.zeros((3, 2)), np.zeros((3, 1)))
    f = KernelExpansion(np.zeros((2, 2)), [1.0, 1.0])
    with pytest.raises(ValueError):
        expansion_eval(f, [0.1])


def test_single_point_gram():
    np.testing.assert_array_equal(gram(KernelSpec(), [[0.4]]).entries, [[1.0]])


@pytest.mark.parametrize("spec", KERNELS)
def test_gram_exactly_symmetric(spec):
    X = np.random.default_rng(1).random((30, 2))
    G = gram(spec, X).entries
    np.testing.assert_array_equal(G, G.T)


def test_gram_eigenvalues_nonnegative():
    X = np.random.default_rng(2).random((10, 1))
    assert np.linalg.eigvalsh(gram(KernelSpec(), X).entries).min() >= -1e-8


def test_gram_jitter():
    X = np.random.default_rng(3).random((5, 1))
    g0, g1 = gram(KernelSpec(), X), gram(KernelSpec(), X, jitter=1e-6)
    np.testing.assert_allclose(g1.entries - g0.entries, 1e-6 * np.eye(5), atol=1e-18)
    np.testing.assert_allclose(g1.raw, g0.entries, rtol=0, atol=1e-15)
    with pytest.raises(ValueError):
        gram(KernelSpec(), X, jitter=-1.0)


def test_gram_entries_match_kernel_eval():
    X = np.random.default_rng(4).random((6, 3))
    spec = KernelSpec("polynomial", degree=2, offset=0.5)
    G = gram(spec, X).entries
    for i in range(6):
        for j in range(6):
            assert G[i, j] == pytest.approx(kernel_eval(spec, X[i], X[j]), rel=1e-14)


@pytest.mark.parametrize("spec", KERNELS)
@pytest.mark.parametrize("m", [64, 512])
def test_cholesky_after_jitter(spec, m):
    X = np.random.default_rng(m).random((m, 2))
    np.linalg.cholesky(gram(spec, X, jitter=1e-10).entries)


def test_zero_coeffs_evaluate_to_zero():
    f = KernelExpansion(np.random.default_rng(0).random((4, 1)), np.zeros(4))
    assert expansion_eval(f, [0.3]) == 0.0
    assert rkhs_norm_sq(f) == 0.0


def test_single_center_reproduces():
    f = KernelExpansion([[0.25]], [1.0])
    assert expansion_eval(f, [0.25]) == 1.0
    g = KernelExpansion([[0.25]], [-3.0])
    assert rkhs_norm_sq(g) == pytest.approx(9.0, abs=1e-15)


def test_two_centers_direct_sum():
    # reference computed with mpmath at 30 digits:
    # 0.7*exp(-(0.55-0.1)^2/0.08) - 1.3*exp(-(0.55-0.8)^2/0.08)
    f = KernelExpansion([[0.1], [0.8]], [0.7, -1.3], KernelSpec("gaussian", 0.2))
    assert expansion_eval(f, [0.55]) == pytest.approx(-0.5394917142003392, abs=1e-14)


def test_norm_matches_spectral_recomposition():
    rng = np.random.default_rng(5)
    X, c = rng.random((8, 2)), rng.normal(size=8)
    spec = KernelSpec("gaussian", 0.5)
    w, V = np.linalg.eigh(gram(spec, X).entries)
    ref = float(np.sum(w * (V.T @ c) ** 2))
    assert rkhs_norm_sq(KernelExpansion(X, c, spec)) == pytest.approx(ref, abs=1e-10)


@pytest.mark.parametrize("spec", KERNELS)
def test_reproducing_consistency(spec):
    x0 = np.array([0.3, 0.9])
    f = KernelExpansion(x0[None, :], [1.0], spec)
    a, b, c = expansion_eval(f, x0), kernel_eval(spec, x0, x0), rkhs_norm_sq(f)
    assert a == pytest.approx(b, rel=1e-14) and b == pytest.approx(c, rel=1e-14)


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(KERNELS), st.integers(1, 6), st.integers(0, 2**32 - 1), points)
def test_cauchy_schwarz(spec, m, seed, x):
    rng = np.random.default_rng(seed)
    f = KernelExpansion(rng.random((m, 2)), rng.normal(size=m), spec)
    bound = np.sqrt(rkhs_norm_sq(f)) * np.sqrt(kernel_eval(spec, x, x))
    assert abs(expansion_eval(f, x)) <= bound + 1e-9


@settings(max_examples=40)
@given(st.sampled_from(KERNELS), points, points)
def test_kernel_symmetric(spec, x, z):
    assert kernel_eval(spec, x, z) == kernel_eval(spec, z, x)


def test_expansion_call_is_chunked_consistently():
    rng = np.random.default_rng(6)
    f = KernelExpansion(rng.random((5, 1)), rng.normal(size=5))
    X = rng.random((100, 1))
    np.testing.assert_allclose(f(X, chunk=7), f(X), rtol=0, atol=1e-15)


def test_expansion_roundtrip():
    rng = np.random.default_rng(7)
    f = KernelExpansion(rng.random((3, 2)), rng.normal(size=3), KernelSpec("polynomial", degree=2))
    g = KernelExpansion.from_dict(f.to_dict())
    np.testing.assert_array_equal(g.coeffs, f.coeffs)
    np.testing.assert_array_equal(g.centers, f.centers)
    assert g.kernel == f.kernel


def test_kappa():
    assert kappa(KernelSpec(), np.random.default_rng(0).random((5, 1))) == 1.0
    assert kappa(KernelSpec("linear"), [[3.0, 4.0], [0.0, 1.0]]) == pytest.approx(5.0)
