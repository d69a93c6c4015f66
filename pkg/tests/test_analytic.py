import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats

import oracle_values as ov
from suppressor_lab import analytic as an
from suppressor_lab.empirical import r2_value_function, shapley_values
from suppressor_lab.errors import DegeneratePathError, ParameterError
from suppressor_lab.model import GenParams, bayes_rule, h_function

corr = st.floats(-0.95, 0.95)
var = st.floats(0.05, 3.0)
coord = st.floats(-5.0, 5.0)

GRID = [
    GenParams.from_variances(c, a, b)
    for c in (-0.8, -0.4, 0.0, 0.4, 0.8)
    for a in (0.1, 0.5, 0.8, 1.0)
    for b in (0.1, 0.5, 0.9)
]


def ref():
    return GenParams.from_variances(*ov.REF)


def test_method_catalogue():
    assert len(an.METHODS) == 15
    assert set(an.GLOBAL_METHODS) | set(an.LOCAL_METHODS) == set(an.METHODS)
    assert not set(an.GLOBAL_METHODS) & set(an.LOCAL_METHODS)


def test_attribution_validation():
    with pytest.raises(ParameterError):
        an.Attribution("saliency", (1.0, 0.0))
    with pytest.raises(ParameterError):
        an.Attribution(an.PD, (1.0, 0.0), scope="local")
    with pytest.raises(ParameterError):
        an.Attribution(an.PD, (1.0, 0.0), scope="global", locus=(0.0, 0.0))
    with pytest.raises(ParameterError):
        an.Attribution(an.PFI, (float("nan"), 0.0))
    a = an.Attribution(an.PFI, (1, -0.0))
    assert a.feature_scores == (1.0, 0.0) and math.copysign(1.0, a.e2) == 1.0


def test_gradient():
    assert an.gradient_attrib(bayes_rule(GenParams.from_variances(0.0, 0.8, 0.5))).feature_scores == (1.0, 0.0)
    g = an.gradient_attrib(bayes_rule(ref()))
    assert g.feature_scores == pytest.approx(ov.W, abs=1e-8)
    r = an.gradient_attrib(bayes_rule(GenParams.from_variances(*ov.RANKING)))
    assert (r.e1, r.e2) == pytest.approx(ov.RANKING_W, abs=1e-8)
    assert abs(r.e2) > abs(r.e1)


def test_pattern_reduced_form():
    assert an.pattern_attrib(GenParams.from_variances(0.0, 0.8, 0.5)).feature_scores == pytest.approx((0.8, 0.0))
    p = an.pattern_attrib(ref())
    assert p.e1 == pytest.approx(ov.PATTERN_REDUCED_E1, abs=1e-14)
    assert p.e2 == 0.0


def test_pattern_covariance_form_exceeds_reduced_by_alpha():
    cov = an.pattern_covariance_form(ref())
    assert cov.e1 == pytest.approx(ov.PATTERN_COVARIANCE_E1, abs=1e-14)
    assert abs(cov.e2) < 1e-15
    for p in GRID:
        assert an.pattern_covariance_form(p).e1 - an.pattern_attrib(p).e1 == pytest.approx(p.alpha, abs=1e-13)


def test_expected_squared_error_examples():
    p0 = GenParams.from_variances(0.0, 0.8, 0.5)
    assert an.expected_squared_error(p0, (1.0, 0.0)) == pytest.approx(0.8, abs=1e-15)
    assert an.expected_squared_error(ref(), (0.3, -2.0), {1, 2}) == 1.0
    with pytest.raises(ParameterError):
        an.expected_squared_error(ref(), (1.0, 0.0), {3})


def test_expected_squared_error_against_samples():
    from suppressor_lab.model import sample_dataset

    p = ref()
    rule = bayes_rule(p)
    ds = sample_dataset(p, 1_000_000, 77)
    mse = np.mean((ds.y - rule.decision(ds.x)) ** 2)
    assert mse == pytest.approx(an.expected_squared_error(p, rule.w), abs=0.01)


def test_pixel_flip_and_pfi_values():
    assert an.pixel_flip_attrib(ref()).feature_scores == pytest.approx(ov.PIXEL_FLIP, abs=1e-14)
    assert an.pfi_attrib(ref()).feature_scores == pytest.approx(ov.PFI, abs=1e-14)
    p0 = GenParams.from_variances(0.0, 0.8, 0.5)
    assert an.pfi_attrib(p0).feature_scores == (2.0, 0.0)
    assert an.pixel_flip_attrib(p0).e2 == 0.0


@given(corr, var, var)
def test_pixel_flip_matches_reduced_form(c, s1sq, s2sq):
    p = GenParams.from_variances(c, s1sq, s2sq)
    a = p.alpha
    pf = an.pixel_flip_attrib(p)
    assert pf.e1 == pytest.approx(2 * a - a * a + a * a * s1sq * (2 * c * c - 1), abs=1e-12)
    assert pf.e2 == pytest.approx(a * a * c * c * s1sq, abs=1e-12)


@given(corr, var, var)
def test_pfi_pixel_flip_coupling(c, s1sq, s2sq):
    p = GenParams.from_variances(c, s1sq, s2sq)
    pf, pfi = an.pixel_flip_attrib(p), an.pfi_attrib(p)
    assert abs(pfi.e2 - 2 * pf.e2) <= 1e-12
    assert abs(pfi.e1 - pfi.e2 - 2 * p.alpha) <= 1e-12


@given(corr, var, var)
def test_pfi_matches_permuted_error_difference(c, s1sq, s2sq):
    p = GenParams.from_variances(c, s1sq, s2sq)
    w = (p.alpha, -p.alpha * p.k)
    base = an.expected_squared_error(p, w)
    pfi = an.pfi_attrib(p)
    assert an.expected_permuted_error(p, w, {1}) - base == pytest.approx(pfi.e1, abs=1e-12)
    assert an.expected_permuted_error(p, w, {2}) - base == pytest.approx(pfi.e2, abs=1e-12)


@given(corr, var, var)
def test_even_in_correlation(c, s1sq, s2sq):
    p, q = GenParams.from_variances(c, s1sq, s2sq), GenParams.from_variances(-c, s1sq, s2sq)
    assert an.pixel_flip_attrib(p).e2 == an.pixel_flip_attrib(q).e2
    assert an.pfi_attrib(p).e2 == an.pfi_attrib(q).e2


def test_even_in_correlation_firm():
    for p in GRID[:12]:
        q = GenParams.from_variances(-p.c, p.s1sq, p.s2sq)
        assert an.firm_attrib(p).e1 == pytest.approx(an.firm_attrib(q).e1, abs=1e-12)


def test_pd_and_mplot():
    p = ref()
    assert float(an.pd_function(p, 2, 1.0)) == pytest.approx(ov.W2, abs=1e-15)
    assert float(an.pd_function(GenParams.from_variances(0.0, 0.8, 0.5), 2, 3.0)) == 0.0
    assert float(an.pd_function(p, 1, 0.0)) == 0.0
    assert float(an.mplot_function(p, 1, 1.0)) == pytest.approx(ov.MPLOT_E1_AT_1, abs=1e-14)
    assert float(an.mplot_function(p, 1, 0.0)) == 0.0
    assert np.all(an.mplot_function(p, 2, np.linspace(-4, 4, 9)) == 0.0)
    with pytest.raises(ParameterError):
        an.pd_function(p, 0, 1.0)
    with pytest.raises(ParameterError):
        an.mplot_function(p, 3, 1.0)


def test_mplot_is_conditional_mean_of_rule():
    # E[f | X1 = x1] = w1*x1 + w2*E[X2 | X1 = x1], integrating the posterior explicitly
    p = ref()
    rule = bayes_rule(p)
    for x1 in (-2.0, -0.3, 0.7, 1.5):
        pos = stats.norm.pdf(x1, 1.0, p.s1)
        neg = stats.norm.pdf(x1, -1.0, p.s1)
        eta1_mean = (pos * (x1 - 1.0) + neg * (x1 + 1.0)) / (pos + neg)
        e_x2 = p.c * p.s2 / p.s1 * eta1_mean
        assert float(an.mplot_function(p, 1, x1)) == pytest.approx(rule.w1 * x1 + rule.w2 * e_x2, abs=1e-12)


def test_r2_shapley():
    three = an.shapley_r2_three_model(ref())
    assert three.feature_scores == pytest.approx(ov.SHAPLEY_R2_THREE, abs=1e-14)
    assert an.shapley_r2_three_model(GenParams.from_variances(0.0, 0.8, 0.5)).e2 == 0.0
    single = an.shapley_r2_single_model(ref())
    assert single.e1 == pytest.approx(ov.SHAPLEY_R2_SINGLE_E1, abs=1e-14)
    assert single.e2 == 0.0
    assert an.shapley_r2_single_model(GenParams.from_variances(0.0, 0.8, 0.5)).e1 == pytest.approx(1 / math.sqrt(1.8))


@given(corr, var, var)
def test_r2_shapley_closed_forms_equal_enumeration(c, s1sq, s2sq):
    p = GenParams.from_variances(c, s1sq, s2sq)
    for three, closed in ((True, an.shapley_r2_three_model), (False, an.shapley_r2_single_model)):
        values = shapley_values(r2_value_function(p, three))
        assert values == pytest.approx(closed(p).feature_scores, abs=1e-10)
    three = an.shapley_r2_three_model(p)
    assert three.e1 + three.e2 == pytest.approx(p.alpha / math.sqrt(s1sq + 1), abs=1e-12)


def test_shap_examples():
    p = ref()
    assert an.shap_marginal(p, (0.0, 0.0)).feature_scores == (0.0, 0.0)
    assert an.shap_marginal(p, (1.0, 1.0)).feature_scores == pytest.approx(ov.W, abs=1e-8)
    assert an.shap_conditional(GenParams.from_variances(0.0, 0.8, 0.5), (1.0, 5.0)).feature_scores == (1.0, 0.0)
    cond = an.shap_conditional(p, (1.0, 0.0))
    assert cond.feature_scores == pytest.approx(ov.SHAP_CONDITIONAL_AT_1_0, abs=1e-14)
    assert cond.e1 + cond.e2 == pytest.approx(ov.ALPHA, abs=1e-14)


@given(corr, var, var, coord, coord)
def test_shap_efficiency(c, s1sq, s2sq, x1, x2):
    p = GenParams.from_variances(c, s1sq, s2sq)
    fx = float(bayes_rule(p).decision((x1, x2)))
    for attr in (an.shap_marginal(p, (x1, x2)), an.shap_conditional(p, (x1, x2))):
        assert abs(attr.e1 + attr.e2 - fx) <= 1e-10


@given(corr, var, var, coord, coord)
def test_shap_conditional_equals_enumeration(c, s1sq, s2sq, x1, x2):
    p = GenParams.from_variances(c, s1sq, s2sq)
    rule = bayes_rule(p)
    e_x2 = p.c * p.s2 / p.s1 * float(h_function(p, x1))
    worth = {
        frozenset(): 0.0,
        frozenset({1}): rule.w1 * x1 + rule.w2 * e_x2,
        frozenset({2}): rule.w1 * p.k * x2 + rule.w2 * x2,
        frozenset({1, 2}): float(rule.decision((x1, x2))),
    }
    assert shapley_values(worth.__getitem__) == pytest.approx(an.shap_conditional(p, (x1, x2)).feature_scores, abs=1e-10)


def test_counterfactual_examples():
    r0 = bayes_rule(GenParams.from_variances(0.0, 0.8, 0.5))
    assert an.counterfactual_closest(r0, (1.0, 1.0)).x_star == pytest.approx((0.0, 1.0), abs=1e-15)
    rule = bayes_rule(ref())
    cf = an.counterfactual_closest(rule, (1.0, 0.0))
    assert cf.x_star == pytest.approx(ov.COUNTERFACTUAL_X_STAR_AT_1_0, abs=1e-14)
    assert abs(float(rule.decision(cf.x_star))) <= 1e-10
    assert cf.distance == pytest.approx(abs(float(rule.decision((1.0, 0.0)))), abs=1e-14)
    on = (-rule.w2, rule.w1)
    cf_on = an.counterfactual_closest(rule, on)
    assert cf_on.x_star == pytest.approx(on, abs=1e-15) and cf_on.distance == pytest.approx(0.0, abs=1e-15)


@given(corr, var, var, coord, coord)
def test_counterfactual_invariants(c, s1sq, s2sq, x1, x2):
    rule = bayes_rule(GenParams.from_variances(c, s1sq, s2sq))
    cf = an.counterfactual_closest(rule, (x1, x2))
    assert abs(float(rule.decision(cf.x_star))) <= 1e-10
    d1, d2 = cf.delta
    assert abs(d1 * rule.w2 - d2 * rule.w1) <= 1e-10
    assert cf.displacement == (-d1, -d2)


def test_counterfactual_is_closest_boundary_point():
    rng = np.random.default_rng(3)
    rule = bayes_rule(ref())
    t = rng.uniform(-20, 20, 10_000)
    boundary = np.column_stack((-rule.w2 * t, rule.w1 * t))
    for xi in rng.normal(0, 2, (100, 2)):
        cf = an.counterfactual_closest(rule, tuple(xi))
        assert cf.distance <= np.min(np.linalg.norm(boundary - xi, axis=1)) + 1e-12


def test_reduced_counterfactual_misses_boundary():
    rule = bayes_rule(ref())
    reduced = an.counterfactual_reduced_form(ref(), (1.0, 0.0))
    assert abs(float(rule.decision(reduced))) > 1e-3


def test_counterfactual_attribution_moves_suppressor():
    a = an.counterfactual_attrib(bayes_rule(ref()), (1.0, 0.0))
    assert a.scope == "local" and abs(a.e2) > 0.1


def test_firm_values():
    p = ref()
    f = an.firm_attrib(p)
    assert f.e1 == pytest.approx(ov.FIRM_E1, abs=1e-8)
    assert f.e2 == 0.0
    assert an.firm_lower_bound(p) == pytest.approx(ov.FIRM_BOUND, abs=1e-14)
    assert f.e1 >= an.firm_lower_bound(p)
    p0 = GenParams.from_variances(0.0, 0.8, 0.5)
    assert an.firm_attrib(p0).e1 == pytest.approx(math.sqrt(1.8), abs=1e-8)


def test_firm_against_samples():
    from suppressor_lab.model import sample_dataset

    p = ref()
    ds = sample_dataset(p, 1_000_000, 8)
    g = p.alpha * (ds.x1 - p.c**2 * h_function(p, ds.x1))
    assert g.std() == pytest.approx(an.firm_attrib(p).e1, abs=0.005)


def test_firm_bound_on_grid():
    for p in GRID:
        assert an.firm_attrib(p).e1 >= an.firm_lower_bound(p)


def test_integrated_gradients():
    rule = bayes_rule(ref())
    ig = an.integrated_gradients_linear(rule, (1.0, 1.0))
    assert ig.feature_scores == pytest.approx(ov.W, abs=1e-8)
    assert ig.e1 + ig.e2 == pytest.approx(float(rule.decision((1.0, 1.0))), abs=1e-15)
    r0 = bayes_rule(GenParams.from_variances(0.0, 0.8, 0.5))
    assert an.integrated_gradients_linear(r0, (1.0, 1.0), (0.0, 1.0)).e2 == 0.0
    with pytest.raises(DegeneratePathError):
        an.integrated_gradients_linear(rule, (0.5, 0.5), (0.5, 0.5))


def test_integrated_gradients_equals_path_quadrature():
    rule = bayes_rule(ref())
    x, x0 = np.array([1.3, -0.4]), np.array([0.2, 0.5])
    for j in range(2):
        grad_j = rule.w[j]  # constant along the path
        integral = integrate.quad(lambda a: grad_j, 0.0, 1.0)[0]
        assert an.integrated_gradients_linear(rule, tuple(x), tuple(x0)).feature_scores[j] == pytest.approx(
            (x[j] - x0[j]) * integral, abs=1e-12)


@given(corr, var, var, coord, coord, coord, coord)
def test_integrated_gradients_completeness(c, s1sq, s2sq, x1, x2, b1, b2):
    if (x1, x2) == (b1, b2):
        return
    rule = bayes_rule(GenParams.from_variances(c, s1sq, s2sq))
    ig = an.integrated_gradients_linear(rule, (x1, x2), (b1, b2))
    assert abs(ig.e1 + ig.e2 - float(rule.decision((x1, x2)) - rule.decision((b1, b2)))) <= 1e-10


def test_reduced_integrated_gradients_is_reported_separately():
    reduced = an.integrated_gradients_reduced_form(ref(), (1.0, 1.0))
    assert len(reduced) == 2 and all(math.isfinite(v) for v in reduced)


def test_pattern_attribution():
    p = ref()
    a = an.pattern_attribution_dtd(p)
    assert a.e1 == pytest.approx(ov.ALPHA, abs=1e-15)
    assert a.e2 == 0.0
    leak = GenParams.from_variances(0.8, 0.8, 0.5, 0.1)
    rule = bayes_rule(leak)
    a_leak = an.pattern_attribution_dtd(leak)
    assert a_leak.e2 == pytest.approx(rule.w2 * 0.1, abs=1e-15) and a_leak.e2 != 0.0


def test_lime_reference_direction():
    assert an.lime_reference_direction(bayes_rule(GenParams.from_variances(0.0, 0.8, 0.5))) == (1.0, 0.0)
    d = an.lime_reference_direction(bayes_rule(ref()))
    assert d == pytest.approx(ov.W, abs=1e-8)
    assert math.hypot(*d) == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("method", an.METHODS)
def test_dispatcher_covers_every_method(method):
    a = an.attribute(method, ref(), x=(1.0, 1.0))
    assert a.method == method
    assert a.scope == ("local" if method in an.LOCAL_METHODS else "global")


def test_dispatcher_errors():
    with pytest.raises(ParameterError):
        an.attribute("occlusion", ref())
    with pytest.raises(ParameterError):
        an.attribute(an.SHAP_MARGINAL, ref())


@pytest.mark.parametrize("fn", [an.pattern_attrib, an.pfi_attrib, an.firm_attrib, an.shapley_r2_single_model])
def test_base_model_required(fn):
    with pytest.raises(ParameterError):
        fn(GenParams.from_variances(0.8, 0.8, 0.5, 0.1))


def test_zero_and_nonzero_sets_on_grid():
    for p in GRID:
        if p.c == 0.0:
            continue
        rule = bayes_rule(p)
        assert an.pattern_attrib(p).e2 == 0.0
        assert an.mplot_attrib(p, (1.0, 1.0)).e2 == 0.0
        assert an.shapley_r2_single_model(p).e2 == 0.0
        assert an.firm_attrib(p).e2 == 0.0
        assert an.pattern_attribution_dtd(p).e2 == 0.0
        assert an.gradient_attrib(rule).e2 != 0.0
        assert an.pixel_flip_attrib(p).e2 != 0.0
        assert an.shap_marginal(p, (1.0, 1.0)).e2 != 0.0
        assert an.counterfactual_attrib(rule, (1.0, 0.0)).e2 != 0.0
