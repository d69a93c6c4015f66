import math

import numpy as np
import pytest

import oracle_values as ov
from suppressor_lab import analytic as an
from suppressor_lab import empirical as em
from suppressor_lab.errors import DegeneratePathError, ParameterError
from suppressor_lab.model import GenParams, bayes_rule, sample_dataset

CFG = em.EstimatorConfig()
QUICK = em.EstimatorConfig.quick()


def ref():
    return GenParams.from_variances(*ov.REF)


def zero_c():
    return GenParams.from_variances(0.0, 0.8, 0.5)


@pytest.fixture(scope="module")
def ref_data():
    return sample_dataset(ref(), CFG.n_samples, 1234)


@pytest.fixture(scope="module")
def zero_data():
    return sample_dataset(zero_c(), CFG.n_samples, 4321)


def test_config_validation():
    for bad in (dict(n_samples=0), dict(lime_n=0), dict(bin_width=0.0), dict(lime_kernel_width=-1.0),
                dict(n_batches=1), dict(tolerance_scale=0.5)):
        with pytest.raises(ParameterError):
            em.EstimatorConfig(**bad)
    assert QUICK.n_samples == CFG.n_samples // 10
    assert QUICK.abs_tol(an.PFI) == pytest.approx(CFG.abs_tol(an.PFI) * math.sqrt(10))
    assert QUICK.abs_tol(an.GRADIENT) == CFG.abs_tol(an.GRADIENT)


def test_derive_seed_is_stable_and_keyed():
    assert em.derive_seed(1, "a") == em.derive_seed(1, "a")
    assert em.derive_seed(1, "a") != em.derive_seed(1, "b")
    assert em.derive_seed(1, "a") != em.derive_seed(2, "a")


def test_pattern(ref_data, zero_data):
    assert em.est_pattern(zero_c(), CFG, zero_data).e2 == pytest.approx(0.0, abs=0.01)
    est = em.est_pattern(ref(), CFG, ref_data)
    assert est.e2 == pytest.approx(0.0, abs=0.01)
    # sample covariance estimates the covariance form
    assert est.e1 == pytest.approx(ov.PATTERN_COVARIANCE_E1, abs=0.01)
    assert est.source == "empirical" and est.std_error is not None


def test_pattern_small_sample_warns():
    est = em.est_pattern(ref(), em.EstimatorConfig(n_samples=200))
    assert est.warning is not None


def test_pixel_flip(ref_data, zero_data):
    assert em.est_pixel_flip(zero_c(), CFG, zero_data).e2 == pytest.approx(0.0, abs=0.02)
    assert em.est_pixel_flip(ref(), CFG, ref_data).feature_scores == pytest.approx(ov.PIXEL_FLIP, abs=0.02)
    rule = bayes_rule(ref())
    both = em.est_masked_loss_difference(ref(), CFG, {1, 2}, ref_data)
    assert both.value == pytest.approx(1.0 - an.expected_squared_error(ref(), rule.w), abs=0.02)


def test_pfi(ref_data, zero_data):
    assert em.est_pfi(zero_c(), CFG, zero_data).feature_scores == pytest.approx((2.0, 0.0), abs=0.03)
    assert em.est_pfi(ref(), CFG, ref_data).feature_scores == pytest.approx(ov.PFI, abs=0.03)
    p = ref()
    w1, w2 = bayes_rule(p).w
    both = em.est_permuted_loss(p, CFG, {1, 2}, ref_data)
    assert both.value == pytest.approx(1 + w1**2 * (p.s1sq + 1) + w2**2 * p.s2sq, abs=0.03)


def test_pd(ref_data, zero_data):
    assert em.est_pd(ref(), CFG, 2, 1.0, ref_data).value == pytest.approx(ov.W2, abs=0.01)
    assert em.est_pd(zero_c(), CFG, 2, 3.0, zero_data).value == pytest.approx(0.0, abs=0.01)
    assert em.est_pd(ref(), CFG, 1, 0.0, ref_data).value == pytest.approx(0.0, abs=0.01)
    with pytest.raises(ParameterError):
        em.est_pd(ref(), CFG, 3, 0.0, ref_data)


def test_mplot(ref_data):
    assert em.est_mplot(ref(), CFG, 2, 1.0, ref_data).value == pytest.approx(0.0, abs=0.02)
    assert em.est_mplot(ref(), CFG, 1, 0.0, ref_data).value == pytest.approx(0.0, abs=0.02)
    assert em.est_mplot(ref(), CFG, 1, 1.0, ref_data).value == pytest.approx(ov.MPLOT_E1_AT_1, abs=0.02)


def test_shapley_enumeration_three_players():
    # glove game: player 1 holds a left glove, players 2 and 3 right gloves
    def v(s):
        return 1.0 if 1 in s and (2 in s or 3 in s) else 0.0

    phi = em.shapley_values(v, 3)
    assert phi == pytest.approx((2 / 3, 1 / 6, 1 / 6), abs=1e-15)
    assert sum(phi) == pytest.approx(v(frozenset({1, 2, 3})))


def test_shapley_estimators(ref_data):
    p = ref()
    marg = em.est_shapley(p, CFG, "marginal", (0.0, 0.0), ref_data)
    assert marg.feature_scores == pytest.approx((0.0, 0.0), abs=0.02)
    cond = em.est_shapley(p, CFG, "conditional", (1.0, 0.0), ref_data)
    assert cond.feature_scores == pytest.approx(ov.SHAP_CONDITIONAL_AT_1_0, abs=0.03)
    single = em.est_shapley(p, CFG, "r2_single")
    assert single.e2 == pytest.approx(0.0, abs=1e-12)
    three = em.est_shapley(p, CFG, "r2_three_model")
    assert three.feature_scores == pytest.approx(ov.SHAPLEY_R2_THREE, abs=1e-12)
    with pytest.raises(ParameterError):
        em.est_shapley(p, CFG, "kernel")
    with pytest.raises(ParameterError):
        em.est_shapley(p, CFG, "marginal")


def test_integrated_gradients():
    rule = bayes_rule(ref())
    est = em.est_integrated_gradients(rule.decision, (1.0, 1.0), (0.0, 0.0), CFG)
    assert est.feature_scores == pytest.approx(an.integrated_gradients_linear(rule, (1.0, 1.0)).feature_scores, abs=1e-10)
    r0 = bayes_rule(zero_c())
    assert em.est_integrated_gradients(r0.decision, (1.0, 1.0), (0.0, 1.0), CFG).e2 == pytest.approx(0.0, abs=1e-10)
    with pytest.raises(DegeneratePathError):
        em.est_integrated_gradients(rule.decision, (1.0, 1.0), (1.0, 1.0), CFG)


def test_counterfactual():
    r0 = bayes_rule(zero_c())
    assert em.est_counterfactual(r0.decision, (1.0, 1.0), CFG).x_star == pytest.approx((0.0, 1.0), abs=1e-4)
    rule = bayes_rule(ref())
    cf = em.est_counterfactual(rule.decision, (1.0, 0.0), CFG)
    assert cf.x_star == pytest.approx(ov.COUNTERFACTUAL_X_STAR_AT_1_0, abs=1e-4)
    on = (-rule.w2, rule.w1)
    assert em.est_counterfactual(rule.decision, on, CFG).x_star == pytest.approx(on, abs=1e-6)


def test_firm(ref_data, zero_data):
    est = em.est_firm(ref(), CFG, ref_data)
    assert est.e2 == pytest.approx(0.0, abs=0.02)
    assert est.e1 == pytest.approx(ov.FIRM_E1, abs=0.02)
    assert est.e1 >= ov.FIRM_BOUND - 0.02
    assert em.est_firm(zero_c(), CFG, zero_data).e1 == pytest.approx(math.sqrt(1.8), abs=0.02)


def test_lime():
    r0 = bayes_rule(zero_c())
    assert em.est_lime(r0.decision, (0.3, -2.0), CFG).e2 == pytest.approx(0.0, abs=0.02)
    rule = bayes_rule(ref())
    coef = np.array(em.est_lime(rule.decision, (1.0, 0.0), CFG).feature_scores)
    assert coef @ rule.w / np.linalg.norm(coef) >= 0.99
    flat = em.est_lime(lambda z: np.zeros(len(z)), (1.0, 0.0), CFG)
    assert flat.feature_scores == pytest.approx((0.0, 0.0), abs=1e-10)


def test_pattern_attribution(ref_data):
    est = em.est_pattern_attribution(ref(), CFG, ref_data)
    assert est.e2 == pytest.approx(0.0, abs=0.01)
    assert est.e1 == pytest.approx(ov.ALPHA, abs=0.01)
    leak = GenParams.from_variances(0.8, 0.8, 0.5, 0.1)
    est_leak = em.est_pattern_attribution(leak, CFG)
    assert est_leak.e2 == pytest.approx(bayes_rule(leak).w2 * 0.1, abs=0.01)


def test_gradient_by_finite_differences():
    rule = bayes_rule(ref())
    assert em.est_gradient(rule.decision, (0.4, -1.0), CFG).feature_scores == pytest.approx(ov.W, abs=1e-8)


@pytest.mark.parametrize(
    "call",
    [
        lambda cfg: em.est_pfi(ref(), cfg).feature_scores,
        lambda cfg: em.est_shapley(ref(), cfg, "conditional", (1.0, 0.0)).feature_scores,
        lambda cfg: em.est_lime(bayes_rule(ref()).decision, (1.0, 0.0), cfg).feature_scores,
        lambda cfg: em.est_firm(ref(), cfg).feature_scores,
    ],
    ids=["pfi", "shap_conditional", "lime", "firm"],
)
def test_determinism(call):
    assert call(QUICK) == call(em.EstimatorConfig.quick())


@pytest.mark.parametrize(
    "method,call",
    [
        ("pfi", lambda cfg: em.est_pfi(ref(), cfg)),
        ("pattern", lambda cfg: em.est_pattern(ref(), cfg)),
        ("firm", lambda cfg: em.est_firm(ref(), cfg)),
        ("shap_marginal", lambda cfg: em.est_shapley(ref(), cfg, "marginal", (1.0, 1.0))),
    ],
)
def test_seed_spread_matches_standard_error(method, call):
    runs = [call(QUICK.with_seed(s)) for s in range(10)]
    for j in range(2):
        values = np.array([r.feature_scores[j] for r in runs])
        se = np.mean([r.std_error[j] for r in runs])
        assert values.max() - values.min() < 8 * se + 1e-12, method
