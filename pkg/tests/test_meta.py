import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trimeta import MetaDataset, Study, dsl_fit, fixed_effect_fit, i_squared, pooled_fit
from trimeta.errors import InputError
from trimeta.meta import pooled_batch


def _ds(pairs):
    return MetaDataset.from_arrays([p[0] for p in pairs], [p[1] for p in pairs])


def test_fixed_single_study():
    fit = fixed_effect_fit(_ds([(0.26, 0.3827)]))
    assert fit.theta_hat == pytest.approx(0.26)
    assert fit.se_theta == pytest.approx(0.3827)
    assert fit.tau2 == 0.0


def test_fixed_equal_weights():
    fit = fixed_effect_fit(_ds([(1.0, 1.0), (3.0, 1.0)]))
    assert fit.theta_hat == pytest.approx(2.0)
    assert fit.se_theta == pytest.approx(1 / math.sqrt(2))


def test_fixed_cdp_inverse_variance_mean(cdp):
    # plain-loop reference computation
    num = den = 0.0
    for s in cdp:
        num += s.effect / (s.se * s.se)
        den += 1.0 / (s.se * s.se)
    fit = fixed_effect_fit(cdp)
    assert fit.theta_hat == pytest.approx(num / den, rel=1e-13)
    assert fit.se_theta == pytest.approx(den**-0.5, rel=1e-13)


def test_dsl_cdp_reference_values(cdp):
    fit = dsl_fit(cdp)
    assert abs(fit.theta_hat - 0.378) <= 0.002
    assert abs(fit.se_theta - 0.138) <= 0.002
    assert abs(fit.tau - 0.339) <= 0.003
    assert abs(fit.i2 - 67.5) <= 0.3


def test_dsl_identical_studies():
    fit = dsl_fit(_ds([(0.5, 0.2)] * 5))
    assert fit.q_stat == pytest.approx(0.0, abs=1e-12)
    assert fit.tau2 == 0.0
    assert fit.theta_hat == pytest.approx(0.5)


def test_dsl_two_studies_hand_value():
    fit = dsl_fit(_ds([(0.0, 1.0), (4.0, 1.0)]))
    assert fit.q_stat == pytest.approx(8.0)
    assert fit.tau2 == pytest.approx(7.0)
    assert fit.i2 == pytest.approx(87.5)
    assert i_squared(8.0, 2) == pytest.approx(87.5)


def test_i_squared_boundaries():
    assert i_squared(4.0, 5) == 0.0
    assert i_squared(0.0, 5) == 0.0
    assert i_squared(2.0, 5) == 0.0


def test_dsl_needs_two():
    with pytest.raises(InputError):
        dsl_fit(_ds([(1.0, 1.0)]))


def test_dataset_validation():
    with pytest.raises(InputError):
        Study("a", 1.0, 0.0)
    with pytest.raises(InputError):
        Study("a", math.nan, 1.0)
    with pytest.raises(InputError):
        MetaDataset((Study("a", 1.0, 1.0), Study("a", 2.0, 1.0)))
    ds = MetaDataset.from_arrays([1, 2], [1, 1])
    with pytest.raises(ValueError):
        ds.effects[0] = 5.0


def test_fit_invariants(cdp):
    for model in ("fixed", "dsl"):
        fit = pooled_fit(cdp, model)
        assert fit.weights.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(fit.weights >= 0)
        assert fit.weights @ cdp.effects == pytest.approx(fit.theta_hat, rel=1e-12)
        assert 0 <= fit.i2 <= 100
    assert pooled_fit(cdp, "fixed").tau2 == 0.0


datasets = st.integers(2, 25).flatmap(
    lambda n: st.tuples(
        st.lists(st.floats(-5, 5), min_size=n, max_size=n),
        st.lists(st.floats(0.05, 2.0), min_size=n, max_size=n),
    )
)


@settings(max_examples=100, deadline=None)
@given(datasets, st.floats(-10, 10), st.floats(0.1, 10))
def test_dsl_shift_scale_equivariance(data, shift, scale):
    y, s = np.array(data[0]), np.array(data[1])
    base = dsl_fit(MetaDataset.from_arrays(y, s))
    moved = dsl_fit(MetaDataset.from_arrays(scale * y + shift, scale * s))
    assert moved.theta_hat == pytest.approx(scale * base.theta_hat + shift, abs=1e-9 * (1 + abs(shift) + scale))
    assert moved.se_theta == pytest.approx(scale * base.se_theta, rel=1e-9)
    assert moved.tau2 == pytest.approx(scale**2 * base.tau2, rel=1e-8, abs=1e-12 * scale**2)
    assert moved.q_stat == pytest.approx(base.q_stat, rel=1e-8, abs=1e-10)


@settings(max_examples=60, deadline=None)
@given(datasets)
def test_dsl_permutation_invariance(data):
    y, s = np.array(data[0]), np.array(data[1])
    perm = np.random.default_rng(len(y)).permutation(len(y))
    a = dsl_fit(MetaDataset.from_arrays(y, s))
    b = dsl_fit(MetaDataset.from_arrays(y[perm], s[perm]))
    assert b.theta_hat == pytest.approx(a.theta_hat, rel=1e-12, abs=1e-14)
    assert b.tau2 == pytest.approx(a.tau2, rel=1e-9, abs=1e-14)


def test_batch_matches_scalar():
    rng = np.random.default_rng(11)
    y = rng.normal(size=(50, 8))
    s = rng.uniform(0.1, 1.0, size=(50, 8))
    for model in ("fixed", "dsl"):
        theta, tau2 = pooled_batch(y, 1 / s**2, model=model)
        for r in range(50):
            fit = pooled_fit(MetaDataset.from_arrays(y[r], s[r]), model)
            assert theta[r] == pytest.approx(fit.theta_hat, rel=1e-10, abs=1e-12)
            assert tau2[r] == pytest.approx(fit.tau2, rel=1e-8, abs=1e-12)
