"""Black-box estimators for each attribution method.

The estimators touch the model only through evaluations of ``f`` on
sampled data (and, for gradient-based methods, finite differences), so they
serve as independent checks on the closed forms in :mod:`.analytic`.

Standard errors come from batch means: the sample is split into
``n_batches`` equal parts, the statistic is recomputed on every part, and the
spread of the part estimates is scaled to the full sample size.
"""

from __future__ import annotations

import itertools
import math
import zlib
from dataclasses import dataclass, replace
from typing import Callable, Dict, FrozenSet, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import trapezoid

from . import analytic as an
from .analytic import Attribution, CounterfactualResult
from .errors import DegeneratePathError, NumericalError, ParameterError
from .model import BayesLinearRule, GenParams, LabeledDataset, Point, bayes_rule, sample_dataset

DEFAULT_SEED = 0xC0FFEE
GN_MAX_STEPS = 8

# absolute tolerances at full sample size; quick mode scales them
ABS_TOL: Dict[str, float] = {
    an.GRADIENT: 1e-8,
    an.PATTERN: 0.01,
    an.PIXEL_FLIP: 0.02,
    an.PFI: 0.03,
    an.PD: 0.01,
    an.MPLOT: 0.02,
    an.SHAPLEY_R2_THREE: 1e-12,
    an.SHAPLEY_R2_SINGLE: 1e-12,
    an.SHAP_MARGINAL: 0.02,
    an.SHAP_CONDITIONAL: 0.03,
    an.COUNTERFACTUAL: 1e-4,
    an.FIRM: 0.02,
    an.INTEGRATED_GRADIENTS: 1e-10,
    an.LIME: 0.02,
    an.PATTERN_ATTRIBUTION: 0.01,
}
# methods whose error is Monte-Carlo noise, so quick mode may loosen them
STOCHASTIC = frozenset(
    {an.PATTERN, an.PIXEL_FLIP, an.PFI, an.PD, an.MPLOT, an.SHAP_MARGINAL, an.SHAP_CONDITIONAL, an.FIRM, an.LIME, an.PATTERN_ATTRIBUTION}
)

VALUE_FUNCTIONS = ("r2_three_model", "r2_single", "marginal", "conditional")


@dataclass(frozen=True)
class EstimatorConfig:
    n_samples: int = 1_000_000
    n_loss_samples: int = 100_000
    seed: int = DEFAULT_SEED
    bin_width: float = 0.05
    lime_kernel_width: float = 1.0
    lime_n: int = 10_000
    quadrature_nodes: int = 1000
    n_batches: int = 20
    tolerance_scale: float = 1.0
    fd_step: float = 1e-4

    def __post_init__(self):
        for name in ("n_samples", "n_loss_samples", "lime_n", "quadrature_nodes"):
            if int(getattr(self, name)) < 1:
                raise ParameterError(f"{name} must be at least 1")
        if self.n_batches < 2:
            raise ParameterError("n_batches must be at least 2")
        if self.quadrature_nodes < 2:
            raise ParameterError("quadrature_nodes must be at least 2")
        if self.bin_width <= 0 or self.lime_kernel_width <= 0:
            raise ParameterError("bin width and kernel width must be positive")
        if self.tolerance_scale < 1.0:
            raise ParameterError("tolerance_scale below 1 would tighten the declared tolerances")

    @classmethod
    def quick(cls, seed: int = DEFAULT_SEED) -> "EstimatorConfig":
        """Ten times fewer samples, tolerances widened by sqrt(10)."""
        return cls(
            n_samples=100_000,
            n_loss_samples=10_000,
            lime_n=1_000,
            seed=seed,
            tolerance_scale=math.sqrt(10.0),
        )

    def with_seed(self, seed: int) -> "EstimatorConfig":
        return replace(self, seed=seed)

    def abs_tol(self, method: str) -> float:
        tol = ABS_TOL[method]
        return tol * self.tolerance_scale if method in STOCHASTIC else tol

    def snapshot(self) -> dict:
        return {name: getattr(self, name) for name in self.__dataclass_fields__}


@dataclass(frozen=True)
class Estimate:
    value: float
    std_error: float
    n_used: int
    warning: Optional[str] = None


def derive_seed(seed: int, *keys) -> int:
    """Child seed for a labelled sub-stream; string keys are hashed."""
    spawn = tuple(zlib.crc32(k.encode()) if isinstance(k, str) else int(k) for k in keys)
    state = np.random.SeedSequence(int(seed), spawn_key=spawn).generate_state(1, np.uint64)
    return int(state[0])


def _rng(cfg: EstimatorConfig, *keys) -> np.random.Generator:
    return np.random.default_rng(derive_seed(cfg.seed, *keys))


def _dataset(params, cfg, tag, n, data):
    if data is not None:
        return data
    return sample_dataset(params, n, derive_seed(cfg.seed, tag))


def _batched(stat, n_batches, *arrays):
    """Full-sample statistic and its batch-means standard error."""
    full = np.asarray(stat(*arrays), dtype=float)
    parts = [np.array_split(a, n_batches) for a in arrays]
    per_batch = np.array([np.asarray(stat(*chunk), dtype=float) for chunk in zip(*parts)])
    per_batch = per_batch[np.isfinite(per_batch.reshape(len(per_batch), -1)).all(axis=1)]
    se = _batch_se(per_batch) if len(per_batch) >= 2 else np.full_like(full, np.nan)
    return full, se


def _batch_se(per_batch):
    return per_batch.std(axis=0, ddof=1) / math.sqrt(len(per_batch))


def _batch_ids(n, n_batches):
    """Batch index of each record under ``np.array_split(range(n), n_batches)``."""
    sizes = [len(part) for part in np.array_split(np.empty(n), n_batches)]
    return np.repeat(np.arange(n_batches), sizes)


def _budget_warning(method, cfg, se):
    if np.any(~np.isfinite(se)):
        return "standard error unavailable"
    if np.any(3.0 * np.asarray(se) > cfg.abs_tol(method)):
        return "sample size too small for the declared tolerance"
    return None


def _global_estimate(method, values, se, cfg):
    return Attribution(
        method,
        (values[0], values[1]),
        scope="global",
        source="empirical",
        std_error=(float(se[0]), float(se[1])),
        warning=_budget_warning(method, cfg, se),
    )


def _local_estimate(method, x, values, se, cfg):
    return Attribution(
        method,
        (values[0], values[1]),
        scope="local",
        locus=(x[0], x[1]),
        source="empirical",
        std_error=(float(se[0]), float(se[1])),
        warning=_budget_warning(method, cfg, se),
    )


def _scalar(method, value, se, n, cfg):
    return Estimate(float(value), float(se), int(n), _budget_warning(method, cfg, np.array([se])))


def _fx(rule: BayesLinearRule, x1, x2):
    return rule.w1 * x1 + rule.w2 * x2 + rule.b


def est_gradient(model: Callable, x: Point, cfg: EstimatorConfig) -> Attribution:
    """Central finite-difference gradient of ``model`` at ``x``."""
    h = cfg.fd_step
    x = np.asarray(x, dtype=float)
    probes = np.array([x + [h, 0], x - [h, 0], x + [0, h], x - [0, h]])
    out = np.asarray(model(probes), dtype=float)
    grad = ((out[0] - out[1]) / (2 * h), (out[2] - out[3]) / (2 * h))
    return Attribution(an.GRADIENT, grad, source="empirical", std_error=(0.0, 0.0))


def est_pattern(params: GenParams, cfg: EstimatorConfig, data: Optional[LabeledDataset] = None) -> Attribution:
    """Sample covariance between each feature and the model output."""
    ds = _dataset(params, cfg, an.PATTERN, cfg.n_samples, data)
    rule = bayes_rule(params)
    f = rule.decision(ds.x)

    def stat(x, f):
        xc = x - x.mean(axis=0)
        return xc.T @ (f - f.mean()) / (len(f) - 1)

    values, se = _batched(stat, cfg.n_batches, ds.x, f)
    return _global_estimate(an.PATTERN, values, se, cfg)


def est_masked_loss_difference(params: GenParams, cfg: EstimatorConfig, mask, data=None) -> Estimate:
    """Mean increase of squared error when the weights in ``mask`` are zeroed."""
    ds = _dataset(params, cfg, an.PIXEL_FLIP, cfg.n_loss_samples, data)
    rule = bayes_rule(params)
    w1 = 0.0 if 1 in mask else rule.w1
    w2 = 0.0 if 2 in mask else rule.w2
    y = ds.y.astype(float)
    diff = (y - w1 * ds.x1 - w2 * ds.x2) ** 2 - (y - rule.decision(ds.x)) ** 2
    return _scalar(an.PIXEL_FLIP, diff.mean(), diff.std(ddof=1) / math.sqrt(len(diff)), len(diff), cfg)


def est_pixel_flip(params: GenParams, cfg: EstimatorConfig, data: Optional[LabeledDataset] = None) -> Attribution:
    params.require_base_model("est_pixel_flip")
    ds = _dataset(params, cfg, an.PIXEL_FLIP, cfg.n_loss_samples, data)
    ests = [est_masked_loss_difference(params, cfg, {j}, ds) for j in (1, 2)]
    return _global_estimate(
        an.PIXEL_FLIP, [e.value for e in ests], np.array([e.std_error for e in ests]), cfg
    )


def _permuted_losses(rule, x, y, columns, rng):
    xp = x.copy()
    for j in sorted(columns):
        xp[:, j - 1] = rng.permutation(x[:, j - 1])
    return (y - rule.decision(xp)) ** 2


def est_permuted_loss(params: GenParams, cfg: EstimatorConfig, columns, data=None) -> Estimate:
    """``E[(Y - f(pi_S(x)))**2]`` with every listed column shuffled independently."""
    ds = _dataset(params, cfg, an.PFI, cfg.n_loss_samples, data)
    rule = bayes_rule(params)
    rng = _rng(cfg, an.PFI, "loss", *sorted(columns))
    y = ds.y.astype(float)

    def stat(x, y):
        return _permuted_losses(rule, x, y, columns, rng).mean()

    value, se = _batched(stat, cfg.n_batches, ds.x, y)
    return _scalar(an.PFI, value, se, len(y), cfg)


def est_pfi(params: GenParams, cfg: EstimatorConfig, data: Optional[LabeledDataset] = None) -> Attribution:
    """Permutation feature importance with a literal shuffle of one column."""
    params.require_base_model("est_pfi")
    ds = _dataset(params, cfg, an.PFI, cfg.n_loss_samples, data)
    rule = bayes_rule(params)
    rng = _rng(cfg, an.PFI, "shuffle")
    y = ds.y.astype(float)

    def stat(x, y):
        base = ((y - rule.decision(x)) ** 2).mean()
        return [_permuted_losses(rule, x, y, {j}, rng).mean() - base for j in (1, 2)]

    values, se = _batched(stat, cfg.n_batches, ds.x, y)
    return _global_estimate(an.PFI, values, se, cfg)


def est_pd(params: GenParams, cfg: EstimatorConfig, feature: int, value: float, data=None) -> Estimate:
    """Average of ``f`` with one feature pinned and the other drawn from its marginal."""
    params.require_base_model("est_pd")
    if feature not in (1, 2):
        raise ParameterError(f"feature index must be 1 or 2, got {feature!r}")
    ds = _dataset(params, cfg, an.PD, cfg.n_samples, data)
    rule = bayes_rule(params)
    if feature == 1:
        out = _fx(rule, value, ds.x2)
    else:
        out = _fx(rule, ds.x1, value)
    return _scalar(an.PD, out.mean(), out.std(ddof=1) / math.sqrt(len(out)), len(out), cfg)


def _conditional_mean(rule, x, feature, value, bin_width):
    """Mean of ``f(x_S = value, X_C)`` over samples with ``X_S`` in the bin around ``value``."""
    col = x[:, feature - 1]
    other = x[np.abs(col - value) <= 0.5 * bin_width, 2 - feature]
    if feature == 1:
        out = _fx(rule, value, other)
    else:
        out = _fx(rule, other, value)
    return out


def est_mplot(params: GenParams, cfg: EstimatorConfig, feature: int, value: float, data=None) -> Estimate:
    """Binned conditional mean of the model output, rejection-sampled."""
    params.require_base_model("est_mplot")
    if feature not in (1, 2):
        raise ParameterError(f"feature index must be 1 or 2, got {feature!r}")
    ds = _dataset(params, cfg, an.MPLOT, cfg.n_samples, data)
    out = _conditional_mean(bayes_rule(params), ds.x, feature, value, cfg.bin_width)
    if len(out) < 2:
        raise NumericalError("too few samples in the conditioning bin", feature=feature, value=value, accepted=len(out))
    return _scalar(an.MPLOT, out.mean(), out.std(ddof=1) / math.sqrt(len(out)), len(out), cfg)


def shapley_values(value: Callable[[FrozenSet[int]], float], n_players: int = 2) -> Tuple[float, ...]:
    """Exact Shapley values by enumerating every coalition.

    ``value`` maps a frozenset of 1-based player indices to its worth.
    """
    players = range(1, n_players + 1)
    cache: Dict[FrozenSet[int], float] = {}

    def v(s):
        if s not in cache:
            cache[s] = float(value(s))
        return cache[s]

    out = []
    for j in players:
        others = [p for p in players if p != j]
        total = 0.0
        for size in range(len(others) + 1):
            weight = math.factorial(size) * math.factorial(n_players - size - 1) / math.factorial(n_players)
            for subset in itertools.combinations(others, size):
                s = frozenset(subset)
                total += weight * (v(s | {j}) - v(s))
        out.append(total)
    return tuple(out)


def _population_correlations(params: GenParams) -> Tuple[float, float]:
    # Pearson correlation of each feature with Y from second moments
    var_y = 1.0
    r1 = 1.0 / math.sqrt((params.s1sq + 1.0) * var_y)
    r2 = params.epsilon / math.sqrt((params.s2sq + params.epsilon**2) * var_y)
    return r1, r2


def r2_value_function(params: GenParams, three_models: bool):
    """R^2 shares ``sum_{j in S} w_j r_j`` with optional univariate sub-models.

    With ``three_models`` the singleton coalitions use the optimal univariate
    rules ``f{1} = x1`` and ``f{2} = 0 * x2`` instead of the bivariate weights.
    """
    rule = bayes_rule(params)
    r = _population_correlations(params)
    w = (rule.w1, rule.w2)
    sub = (1.0, 0.0)

    def value(s):
        if not s:
            return 0.0
        if three_models and len(s) == 1:
            (j,) = s
            return sub[j - 1] * r[j - 1]
        return sum(w[j - 1] * r[j - 1] for j in s)

    return value


def est_shapley(
    params: GenParams,
    cfg: EstimatorConfig,
    value_function: str,
    x: Optional[Point] = None,
    data: Optional[LabeledDataset] = None,
) -> Attribution:
    """Shapley values by explicit coalition enumeration.

    ``r2_three_model`` and ``r2_single`` use population correlations, so the
    result is exact.  ``marginal`` and ``conditional`` estimate each
    coalition's worth from samples; the empty coalition is worth 0.
    """
    if value_function not in VALUE_FUNCTIONS:
        raise ParameterError(f"value function must be one of {VALUE_FUNCTIONS}, got {value_function!r}")
    if value_function in ("r2_three_model", "r2_single"):
        method = an.SHAPLEY_R2_THREE if value_function == "r2_three_model" else an.SHAPLEY_R2_SINGLE
        values = shapley_values(r2_value_function(params, value_function == "r2_three_model"))
        return Attribution(method, values, source="empirical", std_error=(0.0, 0.0))

    if x is None:
        raise ParameterError(f"value function {value_function!r} needs an instance x")
    params.require_base_model("est_shapley")
    rule = bayes_rule(params)
    x1, x2 = float(x[0]), float(x[1])
    fx = float(_fx(rule, x1, x2))

    # worth of {1} averages f(x1, X2) over all records (marginal) or over the
    # records whose X1 falls in the bin around x1 (conditional); same for {2}
    if value_function == "marginal":
        method = an.SHAP_MARGINAL
        ds = _dataset(params, cfg, method, cfg.n_samples, data)
        m1 = m2 = np.ones(len(ds), dtype=bool)
    else:
        method = an.SHAP_CONDITIONAL
        ds = _dataset(params, cfg, method, cfg.n_samples, data)
        m1 = np.abs(ds.x1 - x1) <= 0.5 * cfg.bin_width
        m2 = np.abs(ds.x2 - x2) <= 0.5 * cfg.bin_width
    f1 = _fx(rule, x1, ds.x2[m1])
    f2 = _fx(rule, ds.x1[m2], x2)
    if len(f1) == 0 or len(f2) == 0:
        raise NumericalError("empty conditioning bin", x=(x1, x2), bin_width=cfg.bin_width)

    def shapley_pair(v1, v2):
        worth = {frozenset(): 0.0, frozenset({1}): v1, frozenset({2}): v2, frozenset({1, 2}): fx}
        return shapley_values(worth.__getitem__)

    values = np.array(shapley_pair(f1.mean(), f2.mean()))
    # batches are cut by record index, as array_split would cut them
    batch = _batch_ids(len(ds), cfg.n_batches)
    n1 = np.bincount(batch[m1], minlength=cfg.n_batches)
    n2 = np.bincount(batch[m2], minlength=cfg.n_batches)
    t1 = np.bincount(batch[m1], weights=f1, minlength=cfg.n_batches)
    t2 = np.bincount(batch[m2], weights=f2, minlength=cfg.n_batches)
    ok = (n1 > 0) & (n2 > 0)
    per_batch = np.array([shapley_pair(a, b) for a, b in zip(t1[ok] / n1[ok], t2[ok] / n2[ok])])
    se = _batch_se(per_batch) if len(per_batch) >= 2 else np.full(2, np.nan)
    return _local_estimate(method, (x1, x2), values, se, cfg)


def _fd_gradient(model, pts, h):
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    e1 = np.array([h, 0.0])
    e2 = np.array([0.0, h])
    g1 = (np.asarray(model(pts + e1)) - np.asarray(model(pts - e1))) / (2 * h)
    g2 = (np.asarray(model(pts + e2)) - np.asarray(model(pts - e2))) / (2 * h)
    return np.column_stack((g1, g2))


def est_integrated_gradients(
    model: Callable, x: Point, baseline: Point, cfg: EstimatorConfig
) -> Attribution:
    """Trapezoid rule along the straight path, gradients by central differences."""
    x_arr = np.asarray(x, dtype=float)
    base = np.asarray(baseline, dtype=float)
    if np.array_equal(x_arr, base):
        raise DegeneratePathError("instance coincides with the baseline")
    t = np.linspace(0.0, 1.0, cfg.quadrature_nodes)
    path = base + t[:, None] * (x_arr - base)
    grads = _fd_gradient(model, path, cfg.fd_step)
    integral = trapezoid(grads, t, axis=0)
    values = (x_arr - base) * integral
    return _local_estimate(an.INTEGRATED_GRADIENTS, x, values, np.zeros(2), cfg)


def est_counterfactual(model: Callable, xi: Point, cfg: EstimatorConfig) -> CounterfactualResult:
    """Quadratic-penalty search for the closest point with ``f(x) = 0``.

    The penalty weight grows tenfold from 1 to 1e8; each stage is a
    Gauss-Newton solve warm-started from the previous stage.
    Stops early once ``|f(x)| < 1e-8``.
    """
    xi_arr = np.asarray(xi, dtype=float)
    h = cfg.fd_step

    def fval(p):
        return float(np.asarray(model(p[None, :]))[0])

    x = xi_arr.copy()
    for lam in 10.0 ** np.arange(0, 9):
        if abs(fval(x)) < 1e-8:
            break
        # Gauss-Newton on |x - xi|^2 + lam*f(x)^2; exact in one step when f is linear
        for _ in range(GN_MAX_STEPS):
            g = _fd_gradient(model, x, h)[0]
            grad = 2.0 * (x - xi_arr) + 2.0 * lam * fval(x) * g
            hess = 2.0 * np.eye(2) + 2.0 * lam * np.outer(g, g)
            step = np.linalg.solve(hess, grad)
            x = x - step
            if np.max(np.abs(step)) <= 1e-15 * max(1.0, np.max(np.abs(x))):
                break
    residual = abs(fval(x))
    delta = xi_arr - x
    return CounterfactualResult(
        x_star=(float(x[0]), float(x[1])),
        distance=float(np.hypot(delta[0], delta[1])),
        delta=(float(delta[0]), float(delta[1])),
        converged=residual < 1e-8,
    )


def _binned_std_of_means(values, keys):
    """Bias-corrected standard deviation of per-bin means, weighted by bin mass.

    The between-bin variance of estimated means is inflated by the sampling
    noise of each mean; that excess, ``sum_b var_b / n``, is subtracted.
    """
    _, inv, counts = np.unique(keys, return_inverse=True, return_counts=True)
    n = len(values)
    sums = np.bincount(inv, weights=values)
    sq = np.bincount(inv, weights=values * values)
    means = sums / counts
    grand = values.mean()
    between = np.sum(counts * (means - grand) ** 2) / n
    multi = counts > 1
    within = (sq[multi] - counts[multi] * means[multi] ** 2) / (counts[multi] - 1)
    noise = np.sum(within) / n
    return math.sqrt(max(between - noise, 0.0))


def est_firm(params: GenParams, cfg: EstimatorConfig, data: Optional[LabeledDataset] = None) -> Attribution:
    """Standard deviation of binned conditional means of ``f``, for each feature."""
    params.require_base_model("est_firm")
    ds = _dataset(params, cfg, an.FIRM, cfg.n_samples, data)
    f = bayes_rule(params).decision(ds.x)
    keys = np.floor(ds.x / cfg.bin_width).astype(np.int64)

    def stat(f, keys):
        return [_binned_std_of_means(f, keys[:, 0]), _binned_std_of_means(f, keys[:, 1])]

    values, se = _batched(stat, cfg.n_batches, f, keys)
    return _global_estimate(an.FIRM, values, se, cfg)


def est_lime(model: Callable, xi: Point, cfg: EstimatorConfig, rng_key: Sequence = ()) -> Attribution:
    """Weighted least-squares linear surrogate around ``xi``.

    Perturbations are drawn from ``N(xi, I)`` and weighted by
    ``exp(-||z - xi||**2 / width**2)``.  Returns the surrogate slopes.
    """
    xi_arr = np.asarray(xi, dtype=float)
    rng = _rng(cfg, an.LIME, *rng_key)
    z = xi_arr + rng.standard_normal((cfg.lime_n, 2))
    target = np.asarray(model(z), dtype=float)
    d2 = np.sum((z - xi_arr) ** 2, axis=1)
    weights = np.exp(-d2 / cfg.lime_kernel_width**2)

    def stat(z, target, weights):
        sw = np.sqrt(weights)
        design = np.column_stack((np.ones(len(z)), z - xi_arr)) * sw[:, None]
        coef, *_ = np.linalg.lstsq(design, target * sw, rcond=None)
        return coef[1:]

    values, se = _batched(stat, cfg.n_batches, z, target, weights)
    return _local_estimate(an.LIME, xi, values, se, cfg)


def est_pattern_attribution(
    params: GenParams, cfg: EstimatorConfig, data: Optional[LabeledDataset] = None
) -> Attribution:
    """Sample signal pattern ``Cov(x, y) / Var(y)`` times the weights, elementwise."""
    ds = _dataset(params, cfg, an.PATTERN_ATTRIBUTION, cfg.n_samples, data)
    rule = bayes_rule(params)
    w = rule.w

    def stat(x, y):
        yc = y - y.mean()
        a = (x - x.mean(axis=0)).T @ yc / (yc @ yc)
        return w * a

    values, se = _batched(stat, cfg.n_batches, ds.x, ds.y.astype(float))
    return _global_estimate(an.PATTERN_ATTRIBUTION, values, se, cfg)
