import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qarb.bubbles import (
    BubbleType, ClaimSpec, RadonNikodymWeight, TauSpec, asset_bubble, bubble_discounted_stats,
    bubble_type_classify, claim_bubble_stats, claim_fundamental_value,
    discount_factors, fundamental_value_assets, starred_mean_by_resampling,
)
from qarb.errors import InconsistentSpec, InsufficientPaths, NegativeWeight, PayoffOverflow
from qarb.sde import InitialSpec, TimeGrid, deterministic_model, gbm_model, simulate_sde


def gbm_ensemble(m=20000, seed=1, mu=0.0, sigma=0.2, n=1, steps=20):
    return simulate_sde(gbm_model([mu] * n, sigma), InitialSpec(("point", 1.0), ("point", 1.0)),
                        TimeGrid(0.0, 1.0 / steps, steps), m, seed)


def test_deterministic_prices_exact():
    ens = simulate_sde(deterministic_model([0.0]), InitialSpec(("point", 1.0), ("point", 2.5)),
                       TimeGrid(0.0, 0.1, 10), 50, 0)
    fv = fundamental_value_assets(ens, RadonNikodymWeight.one(), 0.0, 1.0, 0.0)
    assert fv.value[0] == 2.5 and fv.stderr[0] == 0
    # constant rate and dividends: discount e^{-r} and left-sum cash flow
    fv = fundamental_value_assets(ens, RadonNikodymWeight.one(), 0.05, 1.0, 0.0, dividend_rate=0.1)
    disc = np.exp(-0.05 * 0.1 * np.arange(10))
    assert fv.value[0] == pytest.approx(2.5 * np.exp(-0.05) + 0.1 * 0.1 * 2.5 * disc.sum(), rel=1e-13)


def test_martingale_fundamental_value():
    ens = gbm_ensemble()
    fv = fundamental_value_assets(ens, RadonNikodymWeight.one(), 0.0, 1.0, 0.0)
    assert abs(fv.value[0] - 1.0) < 3 * fv.stderr[0]


def test_uniform_starred_mean_and_bubble():
    rng = np.random.default_rng(3)
    u = rng.random((100000, 1))
    phi = RadonNikodymWeight(lambda s: 2 * s[:, 0])
    z = phi(u) * u[:, 0]
    assert z.mean() == pytest.approx(2 / 3, abs=3 * z.std() / np.sqrt(z.size))
    st = bubble_discounted_stats(u, phi)
    assert abs(st.mean.value[0] + 1 / 6) < 3 * st.mean.stderr[0]
    assert abs(st.variance.value[0] - 5 / 36) < 3 * st.variance.stderr[0]


def test_bubble_identity_and_shift():
    ens = gbm_ensemble(2000)
    phi = RadonNikodymWeight.one()
    fv = fundamental_value_assets(ens, phi, 0.01, 1.0, 0.0)
    b = asset_bubble(ens, [1.3], phi, 0.01, 1.0, 0.0)
    assert b.value[0] + fv.value[0] == 1.3
    b2 = asset_bubble(ens, [1.3 + 0.25], phi, 0.01, 1.0, 0.0)
    assert b2.value[0] - b.value[0] == pytest.approx(0.25, abs=1e-15)


def test_stats_trivial_cases():
    rng = np.random.default_rng(0)
    x = rng.random((5000, 2))
    st = bubble_discounted_stats(x, RadonNikodymWeight(lambda s: np.ones(len(s))))
    np.testing.assert_allclose(st.mean.value, 0, atol=1e-15)
    np.testing.assert_allclose(st.variance.value, 2 * x.var(0), rtol=1e-12)
    st = bubble_discounted_stats(np.full((10, 1), 0.7), np.ones(10))
    assert st.mean.value[0] == pytest.approx(0, abs=1e-15) and st.variance.value[0] == pytest.approx(0, abs=1e-15)
    with pytest.raises(InsufficientPaths):
        bubble_discounted_stats(np.ones((1, 1)), np.ones(1))
    with pytest.raises(NegativeWeight):
        bubble_discounted_stats(x, -np.ones(5000))


def test_stats_mean_is_difference_of_means():
    rng = np.random.default_rng(9)
    x = rng.lognormal(size=(3000, 2))
    w = rng.random(3000) * 2
    st = bubble_discounted_stats(x, w)
    np.testing.assert_allclose(st.mean.value, x.mean(0) - (w[:, None] * x).mean(0), rtol=1e-12)


def test_weight_validation_and_normalize():
    phi = RadonNikodymWeight(lambda s: s[:, 0] - 0.5)
    with pytest.raises(NegativeWeight):
        phi(np.array([[0.1]]))
    p = RadonNikodymWeight(lambda s: 3 * s[:, 0]).normalized(np.array([[1.0], [3.0]]))
    assert p(np.array([[1.0], [3.0]])).mean() == pytest.approx(1.0)


def test_resampling_agrees_with_weighting():
    rng = np.random.default_rng(11)
    z = rng.random(50000)
    w = 2 * z
    a = np.mean(w * z)
    sa = np.std(w * z) / np.sqrt(z.size)
    b = starred_mean_by_resampling(z, w, rng)
    assert abs(a - b.value) < 3 * np.hypot(sa, b.stderr)


def test_claim_constant_and_identity():
    ens = gbm_ensemble(5000)
    one = RadonNikodymWeight.one()
    c = ClaimSpec.from_registry("constant", strike=2.0)
    v = claim_fundamental_value(ens, c, one, 0.03, 0.0)
    assert v.value == pytest.approx(2.0 * np.exp(-0.03 * 1.0), rel=1e-12)
    ident = claim_fundamental_value(ens, ClaimSpec.from_registry("identity"), one, 0.03, 0.0)
    fv = fundamental_value_assets(ens, one, 0.03, 1.0, 0.0)
    assert ident.value == pytest.approx(fv.value[0], rel=1e-13)


def test_claim_linearity():
    ens = gbm_ensemble(4000)
    phi = RadonNikodymWeight(lambda s: s[:, 0]).normalized(ens.d[:, -1])
    g1, g2 = (lambda s: np.maximum(s - 1, 0)), (lambda s: s**2)
    a, b = 0.7, -1.9
    mix = claim_fundamental_value(ens, ClaimSpec(lambda s: a * g1(s) + b * g2(s), 1.0), phi, 0.02, 0.0)
    v1 = claim_fundamental_value(ens, ClaimSpec(g1, 1.0), phi, 0.02, 0.0)
    v2 = claim_fundamental_value(ens, ClaimSpec(g2, 1.0), phi, 0.02, 0.0)
    assert mix.value == pytest.approx(a * v1.value + b * v2.value, rel=1e-12)


def test_claim_overflow():
    ens = gbm_ensemble(100)
    with pytest.raises(PayoffOverflow):
        claim_fundamental_value(ens, ClaimSpec(lambda s: np.exp(1e3 * s), 1.0), RadonNikodymWeight.one(), 0, 0)


def test_claim_bubble_stats_examples():
    g = np.full(100, 0.4)
    v = np.full(100, 1.0)
    st = claim_bubble_stats(g, np.ones(100), v)
    assert st.mean.value == pytest.approx(0.6) and st.variance.value == pytest.approx(0, abs=1e-15)
    rng = np.random.default_rng(2)
    x = rng.random(1000)
    st = claim_bubble_stats(x, np.ones(1000), x)
    assert st.mean.value == pytest.approx(0, abs=1e-14)
    lin = bubble_discounted_stats(x[:, None], np.ones(1000))
    assert st.variance.value == pytest.approx(lin.variance.value[0], rel=1e-12)


@pytest.mark.parametrize("tau,kind", [
    (TauSpec.defective(0.3), BubbleType.TYPE1),
    (TauSpec.geometric(0.2), BubbleType.TYPE2),
    (TauSpec.fixed(2.0), BubbleType.TYPE3),
])
def test_bubble_types(tau, kind):
    assert bubble_type_classify(tau) is kind


def test_bubble_type_inconsistent():
    with pytest.raises(InconsistentSpec):
        bubble_type_classify(TauSpec(0.3, True, 1.0))
    with pytest.raises(InconsistentSpec):
        bubble_type_classify(TauSpec(1.5, False))


@settings(max_examples=20, deadline=None)
@given(st.floats(0.0, 0.2), st.floats(0.1, 0.9))
def test_discount_factor_constant_rate(r, tau):
    ens = simulate_sde(deterministic_model([0.0]), InitialSpec(("point", 1.0), ("point", 1.0)),
                       TimeGrid(0.0, 0.1, 10), 3, 0)
    tau = round(tau, 1)
    np.testing.assert_allclose(discount_factors(ens, r, 0.0, tau), np.exp(-r * tau), rtol=1e-12)
