"""Closed-form importance scores of XAI methods on the suppressor model.

Global methods depend on the parameters only; local methods also take an
instance ``x``.  All functions are exact given :class:`GenParams`, except
FIRM, whose variance term is integrated numerically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Tuple

import numpy as np
from scipy import integrate
from scipy.special import expit

from .errors import DegeneratePathError, NumericalError, ParameterError
from .model import BayesLinearRule, GenParams, Point, bayes_rule, h_function

GRADIENT = "gradient"
PATTERN = "pattern"
PIXEL_FLIP = "pixel_flip"
PFI = "pfi"
PD = "pd"
MPLOT = "mplot"
SHAPLEY_R2_THREE = "shapley_r2_three_model"
SHAPLEY_R2_SINGLE = "shapley_r2_single_model"
SHAP_MARGINAL = "shap_marginal"
SHAP_CONDITIONAL = "shap_conditional"
COUNTERFACTUAL = "counterfactual"
FIRM = "firm"
INTEGRATED_GRADIENTS = "integrated_gradients"
LIME = "lime"
PATTERN_ATTRIBUTION = "pattern_attribution"

GLOBAL_METHODS = (
    GRADIENT,
    PATTERN,
    PIXEL_FLIP,
    PFI,
    SHAPLEY_R2_THREE,
    SHAPLEY_R2_SINGLE,
    FIRM,
    PATTERN_ATTRIBUTION,
)
LOCAL_METHODS = (
    PD,
    MPLOT,
    SHAP_MARGINAL,
    SHAP_CONDITIONAL,
    COUNTERFACTUAL,
    INTEGRATED_GRADIENTS,
    LIME,
)
METHODS = GLOBAL_METHODS + LOCAL_METHODS

FIRM_QUAD_ATOL = 1e-8
FIRM_QUAD_HALFWIDTH = 10.0  # in units of s1
# request a tenth of FIRM_QUAD_ATOL; the abserr check then trips only on real failures
_QUAD_OPTS = dict(epsabs=FIRM_QUAD_ATOL / 10, epsrel=1e-12, limit=200, full_output=1)


@dataclass(frozen=True)
class Attribution:
    """Importance scores ``(e1, e2)`` produced by one method."""

    method: str
    feature_scores: Tuple[float, float]
    scope: str = "global"
    locus: Optional[Point] = None
    source: str = "analytic"
    std_error: Optional[Tuple[float, float]] = None
    warning: Optional[str] = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ParameterError(f"unknown method {self.method!r}")
        if self.scope not in ("global", "local"):
            raise ParameterError(f"scope must be 'global' or 'local', got {self.scope!r}")
        if (self.scope == "local") != (self.locus is not None):
            raise ParameterError("locus must be given exactly for local attributions")
        scores = tuple(float(v) + 0.0 for v in self.feature_scores)  # drop signed zeros
        if len(scores) != 2 or not all(math.isfinite(v) for v in scores):
            raise ParameterError(f"feature scores must be two finite reals, got {self.feature_scores!r}")
        object.__setattr__(self, "feature_scores", scores)
        if self.locus is not None:
            object.__setattr__(self, "locus", (float(self.locus[0]), float(self.locus[1])))

    @property
    def e1(self) -> float:
        return self.feature_scores[0]

    @property
    def e2(self) -> float:
        return self.feature_scores[1]


@dataclass(frozen=True)
class CounterfactualResult:
    x_star: Point
    distance: float
    delta: Point
    converged: bool = True

    @property
    def displacement(self) -> Point:
        """Shift ``x* - xi`` an instance must undergo to reach the boundary."""
        return (-self.delta[0], -self.delta[1])


def _global(method, e1, e2):
    return Attribution(method, (e1, e2), scope="global")


def _local(method, x, e1, e2):
    return Attribution(method, (e1, e2), scope="local", locus=(x[0], x[1]))


def _weights(params: GenParams) -> Tuple[float, float]:
    # Bayes weights as functions of k alone; defined at |c| = 1 as the limit
    return params.alpha, -params.alpha * params.k


def gradient_attrib(rule: BayesLinearRule) -> Attribution:
    return _global(GRADIENT, rule.w1, rule.w2)


def pattern_attrib(params: GenParams) -> Attribution:
    """Activation pattern in the reduced form ``(alpha*s1**2*(1-c**2), 0)``."""
    params.require_base_model("pattern_attrib")
    return _global(PATTERN, params.alpha * params.s1sq * (1.0 - params.c**2), 0.0)


def pattern_covariance_form(params: GenParams) -> Attribution:
    """Activation pattern computed directly as ``Cov(x, x) @ w``.

    ``Cov(x, x) = a a^T + Sigma`` includes the signal variance, so the first
    entry is ``alpha*(1 + s1**2*(1-c**2))`` and exceeds the reduced form by
    ``alpha``.  This is the quantity a sample covariance converges to.
    """
    params.require_base_model("pattern_covariance_form")
    a = params.pattern
    cov_x = np.outer(a, a) + params.cov
    e = cov_x @ np.array(_weights(params))
    return _global(PATTERN, e[0], e[1])


def expected_squared_error(params: GenParams, w, zero_mask: Iterable[int] = ()) -> float:
    """``E[(Y - f(x))**2]`` for ``f(x) = w1*x1 + w2*x2`` with masked weights set to zero."""
    params.require_base_model("expected_squared_error")
    w1, w2 = (float(v) for v in w)
    mask = set(zero_mask)
    if not mask <= {1, 2}:
        raise ParameterError(f"mask entries must be feature indices 1 or 2, got {sorted(mask)!r}")
    if 1 in mask:
        w1 = 0.0
    if 2 in mask:
        w2 = 0.0
    s1, s2, c = params.s1, params.s2, params.c
    return 1.0 - 2.0 * w1 + w1 * w1 * (s1 * s1 + 1.0) + w2 * w2 * s2 * s2 + 2.0 * w1 * w2 * c * s1 * s2


def expected_permuted_error(params: GenParams, w, permuted: Iterable[int] = ()) -> float:
    """``E[(Y - f(pi_S(x)))**2]`` with each column in ``permuted`` shuffled independently.

    A permuted column keeps its marginal moments but loses its covariance
    with ``Y`` and with every other column.
    """
    params.require_base_model("expected_permuted_error")
    w1, w2 = (float(v) for v in w)
    perm = set(permuted)
    if not perm <= {1, 2}:
        raise ParameterError(f"permuted entries must be feature indices 1 or 2, got {sorted(perm)!r}")
    s1, s2, c = params.s1, params.s2, params.c
    cross_y = 0.0 if 1 in perm else w1  # E[Y f]; Cov(X2, Y) = 0
    cross_x = 0.0 if perm else 2.0 * w1 * w2 * c * s1 * s2
    return 1.0 - 2.0 * cross_y + w1 * w1 * (s1 * s1 + 1.0) + w2 * w2 * s2 * s2 + cross_x


def pixel_flip_attrib(params: GenParams) -> Attribution:
    """Loss increase when one weight is zeroed."""
    w = _weights(params)
    base = expected_squared_error(params, w)
    e1 = expected_squared_error(params, w, {1}) - base
    e2 = expected_squared_error(params, w, {2}) - base
    return _global(PIXEL_FLIP, e1, e2)


def pfi_attrib(params: GenParams) -> Attribution:
    params.require_base_model("pfi_attrib")
    a2c2s1 = params.alpha**2 * params.c**2 * params.s1sq
    return _global(PFI, 2.0 * params.alpha + 2.0 * a2c2s1, 2.0 * a2c2s1)


def _feature(feature: int) -> int:
    if feature not in (1, 2):
        raise ParameterError(f"feature index must be 1 or 2, got {feature!r}")
    return feature


def pd_function(params: GenParams, feature: int, value):
    """Partial dependence of ``f`` on one feature, the other marginalised."""
    params.require_base_model("pd_function")
    w1, w2 = _weights(params)
    value = np.asarray(value, dtype=float)
    return w1 * value if _feature(feature) == 1 else w2 * value


def mplot_function(params: GenParams, feature: int, value):
    """Conditional expectation ``E[f(X) | X_feature = value]``."""
    params.require_base_model("mplot_function")
    value = np.asarray(value, dtype=float)
    if _feature(feature) == 1:
        return params.alpha * value - params.alpha * params.c**2 * h_function(params, value)
    return np.zeros_like(value)


def shapley_r2_three_model(params: GenParams) -> Attribution:
    """Shapley shares of R^2 with separately fitted univariate sub-models."""
    params.require_base_model("shapley_r2_three_model")
    root = math.sqrt(params.s1sq + 1.0)
    return _global(SHAPLEY_R2_THREE, (params.alpha + 1.0) / (2.0 * root), (params.alpha - 1.0) / (2.0 * root))


def shapley_r2_single_model(params: GenParams) -> Attribution:
    params.require_base_model("shapley_r2_single_model")
    return _global(SHAPLEY_R2_SINGLE, params.alpha / math.sqrt(params.s1sq + 1.0), 0.0)


def shap_marginal(params: GenParams, x: Point) -> Attribution:
    params.require_base_model("shap_marginal")
    w1, w2 = _weights(params)
    return _local(SHAP_MARGINAL, x, w1 * x[0], w2 * x[1])


def shap_conditional(params: GenParams, x: Point) -> Attribution:
    params.require_base_model("shap_conditional")
    a, c = params.alpha, params.c
    shared = 0.5 * a * c * c * float(h_function(params, x[0]))
    drift = 0.5 * a * params.k * x[1]
    return _local(SHAP_CONDITIONAL, x, a * x[0] - shared - drift, shared - drift)


def counterfactual_closest(rule: BayesLinearRule, xi: Point) -> CounterfactualResult:
    """Euclidean projection of ``xi`` onto the hyperplane ``f(x) = 0``."""
    xi_arr = np.asarray(xi, dtype=float)
    w = rule.w
    margin = float(rule.decision(xi_arr)) / float(w @ w)
    x_star = xi_arr - margin * w
    delta = xi_arr - x_star
    return CounterfactualResult(
        x_star=(float(x_star[0]), float(x_star[1])),
        distance=float(np.hypot(delta[0], delta[1])),
        delta=(float(delta[0]), float(delta[1])),
    )


def counterfactual_reduced_form(params: GenParams, xi: Point) -> Point:
    """Closed-form counterfactual expression in reduced form, kept for comparison.

    It does not land on the decision boundary in general; see
    :func:`counterfactual_closest` for the projection actually used.
    """
    b, k = params.beta, params.k
    return (b * (xi[0] - xi[1] * k), b * k * (xi[1] * k + xi[0]))


def counterfactual_attrib(rule: BayesLinearRule, xi: Point) -> Attribution:
    """Counterfactual read as an attribution: the per-feature displacement ``x* - xi``."""
    cf = counterfactual_closest(rule, xi)
    dx, dy = cf.displacement
    return _local(COUNTERFACTUAL, xi, dx, dy)


def firm_lower_bound(params: GenParams) -> float:
    return 0.5 * params.alpha * (2.0 * float(expit(2.0 / params.s1sq)) - 1.0)


def _firm_variance(params: GenParams) -> float:
    c2 = params.c**2
    s1 = params.s1

    def g(x):
        return x - c2 * float(h_function(params, x))

    moments = []
    for mean in (1.0, -1.0):
        lo, hi = mean - FIRM_QUAD_HALFWIDTH * s1, mean + FIRM_QUAD_HALFWIDTH * s1
        density = lambda x, m=mean: math.exp(-0.5 * ((x - m) / s1) ** 2) / (s1 * math.sqrt(2.0 * math.pi))
        first = integrate.quad(lambda x: g(x) * density(x), lo, hi, **_QUAD_OPTS)
        second = integrate.quad(lambda x: g(x) ** 2 * density(x), lo, hi, **_QUAD_OPTS)
        for value, err, info, *rest in (first, second):
            if rest or err > FIRM_QUAD_ATOL:
                raise NumericalError(
                    "FIRM quadrature did not converge",
                    component_mean=mean,
                    abserr=err,
                    evaluations=info.get("neval"),
                    quad_message=rest[0] if rest else None,
                )
        moments.append((first[0], second[0]))
    mean_g = 0.5 * (moments[0][0] + moments[1][0])
    mean_g2 = 0.5 * (moments[0][1] + moments[1][1])
    return mean_g2 - mean_g**2


def firm_attrib(params: GenParams) -> Attribution:
    """Standard deviation of ``E[f | X_j]``, by quadrature for feature 1.

    ``E[f | X2]`` is identically zero, so feature 2 scores exactly 0.
    """
    params.require_base_model("firm_attrib")
    e1 = params.alpha * math.sqrt(max(_firm_variance(params), 0.0))
    return _global(FIRM, e1, 0.0)


def integrated_gradients_linear(rule: BayesLinearRule, x: Point, baseline: Point = (0.0, 0.0)) -> Attribution:
    """Straight-line integrated gradients; exact for a linear rule."""
    if x[0] == baseline[0] and x[1] == baseline[1]:
        raise DegeneratePathError("instance coincides with the baseline")
    return _local(
        INTEGRATED_GRADIENTS,
        x,
        rule.w1 * (x[0] - baseline[0]),
        rule.w2 * (x[1] - baseline[1]),
    )


def integrated_gradients_reduced_form(params: GenParams, x: Point, baseline: Point = (0.0, 0.0)) -> Tuple[float, float]:
    """Quadratic reduced-form expression for integrated gradients, kept for comparison."""
    a, k = params.alpha, params.k
    return (0.5 * a * (x[0] ** 2 - baseline[0] ** 2), -0.5 * a * k * (x[1] ** 2 - baseline[1] ** 2))


def signal_pattern(params: GenParams) -> Tuple[float, float]:
    """``Cov(x, y) / Var(y)`` under the generative model; equals ``(1, epsilon)``."""
    var_y = 1.0
    return 1.0 / var_y, params.epsilon / var_y


def pattern_attribution_dtd(params: GenParams, rule: Optional[BayesLinearRule] = None) -> Attribution:
    """PatternAttribution for a single linear layer: ``w * a`` elementwise."""
    rule = bayes_rule(params) if rule is None else rule
    a1, a2 = signal_pattern(params)
    return _global(PATTERN_ATTRIBUTION, rule.w1 * a1, rule.w2 * a2)


def lime_reference_direction(rule: BayesLinearRule) -> Tuple[float, float]:
    """Direction LIME surrogate weights should be proportional to."""
    norm = math.hypot(rule.w1, rule.w2)
    return rule.w1 / norm, rule.w2 / norm


def lime_attrib(rule: BayesLinearRule, x: Point) -> Attribution:
    d1, d2 = lime_reference_direction(rule)
    return _local(LIME, x, d1, d2)


def pd_attrib(params: GenParams, x: Point) -> Attribution:
    return _local(PD, x, float(pd_function(params, 1, x[0])), float(pd_function(params, 2, x[1])))


def mplot_attrib(params: GenParams, x: Point) -> Attribution:
    return _local(MPLOT, x, float(mplot_function(params, 1, x[0])), float(mplot_function(params, 2, x[1])))


def attribute(method: str, params: GenParams, x: Optional[Point] = None, baseline: Point = (0.0, 0.0)) -> Attribution:
    """Dispatch to the closed form for ``method``; local methods need ``x``."""
    if method not in METHODS:
        raise ParameterError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    if method in LOCAL_METHODS and x is None:
        raise ParameterError(f"method {method!r} is local and needs an instance x")
    if method == GRADIENT:
        return gradient_attrib(bayes_rule(params))
    if method == PATTERN:
        return pattern_attrib(params)
    if method == PIXEL_FLIP:
        return pixel_flip_attrib(params)
    if method == PFI:
        return pfi_attrib(params)
    if method == SHAPLEY_R2_THREE:
        return shapley_r2_three_model(params)
    if method == SHAPLEY_R2_SINGLE:
        return shapley_r2_single_model(params)
    if method == FIRM:
        return firm_attrib(params)
    if method == PATTERN_ATTRIBUTION:
        return pattern_attribution_dtd(params)
    if method == PD:
        return pd_attrib(params, x)
    if method == MPLOT:
        return mplot_attrib(params, x)
    if method == SHAP_MARGINAL:
        return shap_marginal(params, x)
    if method == SHAP_CONDITIONAL:
        return shap_conditional(params, x)
    if method == COUNTERFACTUAL:
        return counterfactual_attrib(bayes_rule(params), x)
    if method == INTEGRATED_GRADIENTS:
        return integrated_gradients_linear(bayes_rule(params), x, baseline)
    return lime_attrib(bayes_rule(params), x)
