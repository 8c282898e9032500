import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qtube.kernel import KernelExpansion
from qtube.loss import LossSpec
from qtube.models import (ConditionalModel, Dataset, Design, conditional_density, conditional_risk,
                          conditional_risk_many, default_center, noise_certificate,
                          noise_expectation, noise_type, sample_dataset, target)

# Reference values from mpmath at 30 digits.
GAUSS_01_SECOND_MOMENT = 0.009112563609353919      # truncated N(0, 0.1^2) on [-1/4, 1/4]
POWER_HALF_RISK = 0.03863892840104443              # phi=1/2, q=1.5, eps=0.05, shift 0.03

MODELS = [ConditionalModel("power", 1.0), ConditionalModel("power", 0.5),
          ConditionalModel("gaussian_truncated", 0.1), ConditionalModel("uniform", 0.2),
          ConditionalModel("uniform", 0.5)]


def _name(m):
    return f"{m.kind}-{m.param}"


def test_invalid_models():
    with pytest.raises(ValueError):
        ConditionalModel("laplace", 1.0)
    with pytest.raises(ValueError):
        ConditionalModel("power", 0.0)
    with pytest.raises(ValueError):
        ConditionalModel("uniform", 0.7)


def test_default_center_sup_norm():
    f = default_center()
    grid = np.linspace(0, 1, 100_001)[:, None]
    assert np.max(np.abs(f(grid))) == pytest.approx(0.25, abs=1e-9)


@pytest.mark.parametrize("m", MODELS, ids=_name)
def test_density_integrates_to_one(m):
    mass = noise_expectation(m, lambda u, rows: np.ones_like(u), [np.zeros(1)])[0]
    assert mass == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("m", MODELS, ids=_name)
def test_cdf_quantile_inverse(m):
    p = np.linspace(0.01, 0.99, 41)
    np.testing.assert_allclose(m.noise_cdf(m.noise_quantile(p)), p, atol=1e-10)


@pytest.mark.parametrize("m", MODELS, ids=_name)
def test_noise_is_symmetric(m):
    u = np.linspace(-0.3, 0.3, 61)
    np.testing.assert_array_equal(m.noise_pdf(u), m.noise_pdf(-u))


def test_closed_form_moments():
    power = ConditionalModel("power", 1.0)   # density 16|u| on [-1/4, 1/4]
    m2 = noise_expectation(power, lambda u, rows: u * u, [np.zeros(1)])[0]
    assert m2 == pytest.approx(1 / 32, rel=1e-9)
    gauss = ConditionalModel("gaussian_truncated", 0.1)
    m2 = noise_expectation(gauss, lambda u, rows: u * u, [np.zeros(1)])[0]
    assert m2 == pytest.approx(GAUSS_01_SECOND_MOMENT, rel=1e-9)


def test_uniform_absolute_risk_closed_form():
    m = ConditionalModel("uniform", 0.2)
    s = np.array([0.0, 0.05, -0.15, 0.3])
    got = conditional_risk_many(m, np.zeros(4), s, LossSpec(1.0))
    h = 0.2
    ref = np.where(np.abs(s) <= h, (h * h + s * s) / (2 * h), np.abs(s))
    np.testing.assert_allclose(got, ref, rtol=1e-9)


def test_tube_risk_matches_reference():
    m = ConditionalModel("power", 0.5)
    got = conditional_risk_many(m, np.zeros(1), np.array([0.03]), LossSpec(1.5, 0.05))[0]
    assert got == pytest.approx(POWER_HALF_RISK, rel=1e-9)


@pytest.mark.parametrize("m", MODELS, ids=_name)
def test_batched_matches_adaptive(m):
    rng = np.random.default_rng(0)
    X = rng.random((5, 1))
    c = m.center(X)
    ts = rng.uniform(-0.4, 0.4, 5)
    for spec in (LossSpec(1.0), LossSpec(1.5, 0.05), LossSpec(3.0, 0.1)):
        batch = conditional_risk_many(m, c, ts, spec)
        single = [conditional_risk(m, X[i], ts[i], spec) for i in range(5)]
        np.testing.assert_allclose(batch, single, rtol=1e-8, atol=1e-11)


@pytest.mark.parametrize("m", MODELS, ids=_name)
def test_noise_type_certificate(m):
    assert noise_certificate(m, n_x=5, n_s=10) >= -1e-8


def test_noise_type_constants():
    nt = noise_type(ConditionalModel("power", 1.0))
    assert (nt.w, nt.a, nt.b) == (2.0, 0.25, 8.0)
    assert math.isinf(nt.p)
    assert nt.bound_norm == pytest.approx(1 / (8 * 0.25 ** 2))
    nt = noise_type(ConditionalModel("uniform", 0.2))
    assert (nt.w, nt.a) == (1.0, 0.2)
    assert nt.b == pytest.approx(2.5)
    nt = noise_type(ConditionalModel("gaussian_truncated", 0.1))
    assert nt.renorm < 1 and nt.w == 1.0


@settings(max_examples=15, deadline=None)
@given(st.sampled_from(MODELS), st.floats(0, 1), st.sampled_from([1.5, 2.0, 3.0]),
       st.sampled_from([0.01, 0.05, 0.1, 0.25, 0.5]))
def test_target_perturbation_bound(m, x, q, eps):
    x = np.array([[x]])
    t0 = target(m, x, LossSpec(q))
    t1 = target(m, x, LossSpec(q, eps))
    assert abs(t1 - t0) <= eps + 1e-7


@pytest.mark.parametrize("m", MODELS, ids=_name)
def test_target_is_center_for_symmetric_noise(m):
    x = np.array([[0.37]])
    for spec in (LossSpec(1.0), LossSpec(2.0), LossSpec(1.5, 0.05)):
        assert target(m, x, spec) == pytest.approx(m.center(x)[0], abs=1e-7)


def test_center_is_clamped():
    big = KernelExpansion([[0.5]], [5.0])
    m = ConditionalModel("uniform", 0.4, big)
    assert m.center(np.array([[0.5]]))[0] == pytest.approx(0.1)


def test_sample_dataset_deterministic_and_bounded():
    m = ConditionalModel("power", 1.0)
    a, b = sample_dataset(m, None, 200, seed=3), sample_dataset(m, None, 200, seed=3)
    np.testing.assert_array_equal(a.ys, b.ys)
    assert np.all(np.abs(a.ys) <= 0.5)
    assert np.all(np.abs(a.ys - m.center(a.xs)) <= m.halfwidth + 1e-15)
    c = sample_dataset(m, None, 200, seed=4)
    assert not np.array_equal(a.ys, c.ys)


def test_sample_dataset_validation():
    m = ConditionalModel("power", 1.0)
    with pytest.raises(ValueError):
        sample_dataset(m, Design(2), 10)
    with pytest.raises(ValueError):
        sample_dataset(m, None, 0)
    with pytest.raises(ValueError):
        Design(0)


def test_dataset_csv_roundtrip():
    d = sample_dataset(ConditionalModel("uniform", 0.2, dim=2), None, 17, seed=1)
    e = Dataset.from_csv(d.to_csv())
    np.testing.assert_array_equal(d.xs, e.xs)
    np.testing.assert_array_equal(d.ys, e.ys)
    with pytest.raises(ValueError):
        Dataset.from_csv("a,b\n1,2\n")


def test_model_dict_roundtrip():
    for m in MODELS:
        m2 = ConditionalModel.from_dict(m.to_dict())
        X = np.linspace(0, 1, 11)[:, None]
        np.testing.assert_array_equal(m2.center(X), m.center(X))
        assert (m2.kind, m2.param) == (m.kind, m.param)
    with pytest.raises(ValueError):
        ConditionalModel.from_dict({"kind": "power", "phi": 1.0, "extra": 1})


def test_conditional_density_shifts_by_center():
    m = ConditionalModel("uniform", 0.2)
    x = np.array([0.4])
    c = m.center(x[None, :])[0]
    assert conditional_density(m, x, c + 0.1) == pytest.approx(2.5)
    assert conditional_density(m, x, c + 0.3) == 0.0
