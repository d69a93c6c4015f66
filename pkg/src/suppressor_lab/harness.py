"""Parameter sweeps that pit each closed form against its estimator.

A sweep walks a grid of ``(c, s1**2, s2**2)`` points.  At every point it
evaluates all methods analytically and empirically, records one row per
(method, feature[, instance]), and finally classifies each method as
suppressor-nullifying or suppressor-attributing from the analytic values.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import analytic as an
from . import empirical as em
from .errors import NumericalError, ParameterError
from .model import GenParams, LabeledDataset, Point, bayes_rule, sample_dataset

log = logging.getLogger(__name__)

NULLIFYING = "suppressor-nullifying"
ATTRIBUTING = "suppressor-attributing"
UNDETERMINED = "undetermined"

# analytic |e2| below this counts as an exact zero
ZERO_THRESHOLD = 1e-10

FIXED_PANEL: Tuple[Point, ...] = ((1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, 0.0), (0.0, 1.0))
N_RANDOM_INSTANCES = 10

ROW_FIELDS = (
    "grid_index",
    "c",
    "s1sq",
    "s2sq",
    "epsilon",
    "method",
    "feature",
    "x1",
    "x2",
    "analytic",
    "empirical",
    "std_error",
    "abs_tol",
    "tolerance",
    "passed",
    "error",
)


def instance_panel(seed: int = em.DEFAULT_SEED, n_random: int = N_RANDOM_INSTANCES) -> Tuple[Point, ...]:
    """Fixed witness points plus ``n_random`` seeded points uniform on ``[-1, 1]**2``.

    The square stays inside the bulk of the data for every default grid
    point, so conditioning bins around an instance are never empty.
    """
    rng = np.random.default_rng(em.derive_seed(seed, "instances"))
    extra = tuple((float(a), float(b)) for a, b in rng.uniform(-1.0, 1.0, (n_random, 2)))
    return FIXED_PANEL + extra


@dataclass(frozen=True)
class SweepGrid:
    c_values: Tuple[float, ...]
    s1sq_values: Tuple[float, ...]
    s2sq_values: Tuple[float, ...]
    epsilon: float = 0.0
    instance_points: Tuple[Point, ...] = FIXED_PANEL
    baseline: Point = (0.0, 0.0)

    def __post_init__(self):
        for name in ("c_values", "s1sq_values", "s2sq_values", "instance_points"):
            if len(getattr(self, name)) == 0:
                raise ParameterError(f"{name} must not be empty")
        # validate every point eagerly
        self.points()

    @classmethod
    def default(cls, seed: int = em.DEFAULT_SEED) -> "SweepGrid":
        return cls(
            c_values=(-0.8, -0.4, 0.0, 0.4, 0.8),
            s1sq_values=(0.1, 0.5, 0.8, 1.0),
            s2sq_values=(0.1, 0.5, 0.9),
            instance_points=instance_panel(seed),
        )

    @classmethod
    def named(cls, name: str, seed: int = em.DEFAULT_SEED) -> "SweepGrid":
        base = cls.default(seed)
        if name == "default":
            return base
        if name == "zero-c":
            return cls(c_values=(0.0,), s1sq_values=base.s1sq_values, s2sq_values=base.s2sq_values,
                       instance_points=base.instance_points)
        if name == "single":
            return cls(c_values=(0.8,), s1sq_values=(0.8,), s2sq_values=(0.5,), instance_points=base.instance_points)
        raise ParameterError(f"unknown grid {name!r}; choose default, zero-c or single")

    def points(self) -> List[GenParams]:
        return [
            GenParams.from_variances(c, s1sq, s2sq, self.epsilon)
            for c, s1sq, s2sq in itertools.product(self.c_values, self.s1sq_values, self.s2sq_values)
        ]

    def snapshot(self) -> dict:
        # round-trips through JSON as nested lists
        return json.loads(json.dumps(asdict(self)))


@dataclass
class ReportRow:
    grid_index: int
    c: float
    s1sq: float
    s2sq: float
    epsilon: float
    method: str
    feature: int
    x1: Optional[float] = None
    x2: Optional[float] = None
    analytic: Optional[float] = None
    empirical: Optional[float] = None
    std_error: Optional[float] = None
    abs_tol: Optional[float] = None
    tolerance: Optional[float] = None
    passed: Optional[bool] = None
    error: Optional[str] = None

    def passes_at(self, n_sigma: float) -> Optional[bool]:
        """Agreement when the statistical band is ``n_sigma`` standard errors."""
        if self.analytic is None or self.empirical is None:
            return None
        band = max(n_sigma * (self.std_error or 0.0), self.abs_tol or 0.0)
        return abs(self.analytic - self.empirical) <= band


@dataclass
class SweepReport:
    rows: List[ReportRow]
    verdicts: Dict[str, str]
    meta: dict = field(default_factory=dict)

    def compared_rows(self) -> List[ReportRow]:
        return [r for r in self.rows if r.passed is not None]

    def pass_fraction(self, n_sigma: float = 3.0) -> float:
        rows = self.compared_rows()
        if not rows:
            return float("nan")
        return sum(bool(r.passes_at(n_sigma)) for r in rows) / len(rows)

    def to_dict(self) -> dict:
        return {
            "meta": self.meta,
            "rows": [_clean(asdict(r)) for r in self.rows],
            "verdicts": dict(sorted(self.verdicts.items())),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, allow_nan=False) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\r\n")
        writer.writerow(ROW_FIELDS)
        for r in self.rows:
            d = _clean(asdict(r))
            writer.writerow(["" if d[k] is None else _fmt(d[k]) for k in ROW_FIELDS])
        return buf.getvalue()


def _clean(d: dict) -> dict:
    return {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in d.items()}


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _finish(row: ReportRow, cfg: em.EstimatorConfig) -> ReportRow:
    if row.analytic is not None and row.empirical is not None:
        row.abs_tol = cfg.abs_tol(row.method)
        se = row.std_error if row.std_error is not None and math.isfinite(row.std_error) else 0.0
        row.tolerance = max(3.0 * se, row.abs_tol)
        row.passed = abs(row.analytic - row.empirical) <= row.tolerance
    return row


def _pair_rows(base, method, analytic, empirical, cfg, x=None):
    rows = []
    for j in (1, 2):
        row = ReportRow(**base, method=method, feature=j)
        if x is not None:
            row.x1, row.x2 = float(x[0]), float(x[1])
        if analytic is not None:
            row.analytic = float(analytic[j - 1])
        if empirical is not None:
            row.empirical = float(empirical[0][j - 1])
            row.std_error = float(empirical[1][j - 1])
        rows.append(_finish(row, cfg))
    return rows


def _error_rows(base, method, exc, x=None):
    rows = []
    for j in (1, 2):
        row = ReportRow(**base, method=method, feature=j, error=f"{type(exc).__name__}: {exc}")
        if x is not None:
            row.x1, row.x2 = float(x[0]), float(x[1])
        rows.append(row)
    return rows


def _attr_pair(a: an.Attribution):
    return a.feature_scores, a.std_error or (0.0, 0.0)


def _evaluate_point(index: int, params: GenParams, grid: SweepGrid, cfg: em.EstimatorConfig):
    """All rows and diagnostics for one grid point."""
    base = dict(grid_index=index, **params.as_variances())
    pcfg = cfg.with_seed(em.derive_seed(cfg.seed, "grid", index))
    rows: List[ReportRow] = []
    diagnostics: List[dict] = []

    def guarded(method, fn, x=None):
        try:
            rows.extend(fn())
        except (ParameterError, NumericalError, np.linalg.LinAlgError) as exc:
            log.debug("row error %s at grid %d: %s", method, index, exc)
            rows.extend(_error_rows(base, method, exc, x))

    cache = {}

    def rule():
        if "rule" not in cache:
            cache["rule"] = bayes_rule(params)
        return cache["rule"]

    # one draw per grid point feeds every sampling estimator; the loss-based
    # ones use its prefix, which is what a shorter draw with the same seed gives
    def data(n=pcfg.n_samples):
        if "data" not in cache:
            cache["data"] = sample_dataset(params, pcfg.n_samples, em.derive_seed(pcfg.seed, "data"))
        full = cache["data"]
        return full if n >= len(full) else LabeledDataset(full.x[:n], full.y[:n], full.seed, params)

    guarded(an.GRADIENT, lambda: _pair_rows(
        base, an.GRADIENT, an.gradient_attrib(rule()).feature_scores,
        _attr_pair(em.est_gradient(rule(), (0.0, 0.0), pcfg)), pcfg))

    def pattern_rows():
        cov_form = an.pattern_covariance_form(params)
        reduced = an.pattern_attrib(params)
        diagnostics.append({
            "grid_index": index,
            "kind": "pattern_reduced_vs_covariance",
            "reduced_e1": reduced.e1,
            "covariance_e1": cov_form.e1,
            "gap": cov_form.e1 - reduced.e1,
        })
        return _pair_rows(base, an.PATTERN, cov_form.feature_scores, _attr_pair(em.est_pattern(params, pcfg, data())), pcfg)

    guarded(an.PATTERN, pattern_rows)
    guarded(an.PIXEL_FLIP, lambda: _pair_rows(
        base, an.PIXEL_FLIP, an.pixel_flip_attrib(params).feature_scores,
        _attr_pair(em.est_pixel_flip(params, pcfg, data(pcfg.n_loss_samples))), pcfg))
    guarded(an.PFI, lambda: _pair_rows(
        base, an.PFI, an.pfi_attrib(params).feature_scores, _attr_pair(em.est_pfi(params, pcfg, data(pcfg.n_loss_samples))), pcfg))
    guarded(an.SHAPLEY_R2_THREE, lambda: _pair_rows(
        base, an.SHAPLEY_R2_THREE, an.shapley_r2_three_model(params).feature_scores,
        _attr_pair(em.est_shapley(params, pcfg, "r2_three_model")), pcfg))
    guarded(an.SHAPLEY_R2_SINGLE, lambda: _pair_rows(
        base, an.SHAPLEY_R2_SINGLE, an.shapley_r2_single_model(params).feature_scores,
        _attr_pair(em.est_shapley(params, pcfg, "r2_single")), pcfg))

    def firm_rows():
        analytic = an.firm_attrib(params)
        bound = an.firm_lower_bound(params)
        diagnostics.append({"grid_index": index, "kind": "firm_lower_bound", "e1": analytic.e1, "bound": bound,
                            "holds": analytic.e1 >= bound})
        return _pair_rows(base, an.FIRM, analytic.feature_scores, _attr_pair(em.est_firm(params, pcfg, data())), pcfg)

    guarded(an.FIRM, firm_rows)
    guarded(an.PATTERN_ATTRIBUTION, lambda: _pair_rows(
        base, an.PATTERN_ATTRIBUTION, an.pattern_attribution_dtd(params).feature_scores,
        _attr_pair(em.est_pattern_attribution(params, pcfg, data())), pcfg))

    for i, x in enumerate(grid.instance_points):
        def pd_rows(x=x):
            ds = data()
            ests = [em.est_pd(params, pcfg, j, x[j - 1], ds) for j in (1, 2)]
            return _pair_rows(base, an.PD, an.pd_attrib(params, x).feature_scores,
                              ([e.value for e in ests], [e.std_error for e in ests]), pcfg, x)

        def mplot_rows(x=x):
            ds = data()
            ests = [em.est_mplot(params, pcfg, j, x[j - 1], ds) for j in (1, 2)]
            return _pair_rows(base, an.MPLOT, an.mplot_attrib(params, x).feature_scores,
                              ([e.value for e in ests], [e.std_error for e in ests]), pcfg, x)

        def shap_rows(x=x, vf="marginal", method=an.SHAP_MARGINAL, closed=an.shap_marginal):
            est = em.est_shapley(params, pcfg, vf, x, data())
            return _pair_rows(base, method, closed(params, x).feature_scores, _attr_pair(est), pcfg, x)

        def cf_rows(x=x):
            analytic = an.counterfactual_closest(rule(), x)
            numeric = em.est_counterfactual(rule(), x, pcfg)
            reduced = an.counterfactual_reduced_form(params, x)
            diagnostics.append({
                "grid_index": index,
                "kind": "counterfactual_reduced_residual",
                "x1": x[0],
                "x2": x[1],
                "reduced_x_star": list(reduced),
                "reduced_f": float(rule().decision(reduced)),
                "projection_f": float(rule().decision(analytic.x_star)),
                "optimizer_converged": numeric.converged,
            })
            return _pair_rows(base, an.COUNTERFACTUAL, analytic.displacement, (numeric.displacement, (0.0, 0.0)),
                              pcfg, x)

        def ig_rows(x=x):
            analytic = an.integrated_gradients_linear(rule(), x, grid.baseline)
            reduced = an.integrated_gradients_reduced_form(params, x, grid.baseline)
            diagnostics.append({
                "grid_index": index,
                "kind": "integrated_gradients_reduced_form",
                "x1": x[0],
                "x2": x[1],
                "path_integral": list(analytic.feature_scores),
                "reduced": list(reduced),
            })
            est = em.est_integrated_gradients(rule(), x, grid.baseline, pcfg)
            return _pair_rows(base, an.INTEGRATED_GRADIENTS, analytic.feature_scores, _attr_pair(est), pcfg, x)

        def lime_rows(x=x, i=i):
            est = em.est_lime(rule(), x, pcfg, rng_key=(i,))
            coef = np.array(est.feature_scores)
            norm = float(np.hypot(*coef))
            if norm == 0.0:
                raise NumericalError("LIME surrogate has zero slope", x=x)
            se = np.array(est.std_error) / norm
            return _pair_rows(base, an.LIME, an.lime_reference_direction(rule()), (coef / norm, se), pcfg, x)

        guarded(an.PD, pd_rows, x)
        guarded(an.MPLOT, mplot_rows, x)
        guarded(an.SHAP_MARGINAL, shap_rows, x)
        guarded(an.SHAP_CONDITIONAL,
                lambda x=x: shap_rows(x, "conditional", an.SHAP_CONDITIONAL, an.shap_conditional), x)
        guarded(an.COUNTERFACTUAL, cf_rows, x)
        guarded(an.INTEGRATED_GRADIENTS, ig_rows, x)
        guarded(an.LIME, lime_rows, x)

    return index, rows, diagnostics


def classify_methods(rows: Sequence[ReportRow]) -> Dict[str, str]:
    """Verdict per method from analytic feature-2 scores at ``c != 0``."""
    worst: Dict[str, Optional[float]] = {m: None for m in an.METHODS}
    for r in rows:
        if r.feature != 2 or r.c == 0.0 or r.analytic is None:
            continue
        prev = worst[r.method]
        worst[r.method] = abs(r.analytic) if prev is None else max(prev, abs(r.analytic))
    verdicts = {}
    for m, value in worst.items():
        if value is None:
            verdicts[m] = UNDETERMINED
        else:
            verdicts[m] = NULLIFYING if value < ZERO_THRESHOLD else ATTRIBUTING
    return verdicts


def run_sweep(
    grid: SweepGrid,
    cfg: em.EstimatorConfig,
    workers: int = 1,
    timestamp: Optional[str] = None,
) -> SweepReport:
    """Evaluate every method at every grid point.

    Grid points are independent; with ``workers > 1`` they run in separate
    processes and are merged back in grid order, so the report does not
    depend on scheduling.  ``timestamp`` is copied into the metadata when
    given and omitted otherwise, keeping repeated runs byte-identical.
    """
    points = grid.points()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_evaluate_point, range(len(points)), points,
                                    itertools.repeat(grid), itertools.repeat(cfg)))
    else:
        results = [_evaluate_point(i, p, grid, cfg) for i, p in enumerate(points)]
    results.sort(key=lambda t: t[0])

    rows: List[ReportRow] = []
    diagnostics: List[dict] = []
    for _, point_rows, point_diag in results:
        rows.extend(sorted(point_rows, key=lambda r: r.method))  # stable: keeps instance order
        diagnostics.extend(point_diag)

    meta = {
        "seed": cfg.seed,
        "config": cfg.snapshot(),
        "grid": grid.snapshot(),
        "n_rows": len(rows),
        "n_errors": sum(r.error is not None for r in rows),
        "pass_fraction_3sigma": _nan_to_none(SweepReport(rows, {}).pass_fraction(3.0)),
        "pass_fraction_4sigma": _nan_to_none(SweepReport(rows, {}).pass_fraction(4.0)),
        "diagnostics": diagnostics,
    }
    if timestamp is not None:
        meta["timestamp"] = timestamp
    return SweepReport(rows=rows, verdicts=classify_methods(rows), meta=meta)


def _nan_to_none(v):
    return None if isinstance(v, float) and not math.isfinite(v) else v


def ranking_check(params: GenParams) -> dict:
    """Does the suppressor weight exceed twice the signal weight?"""
    rule = bayes_rule(params)
    ratio = abs(rule.w2) / abs(rule.w1)
    return {
        **params.as_variances(),
        "w1": rule.w1,
        "w2": rule.w2,
        "ratio": ratio,
        "suppressor_ranked_twice": bool(abs(rule.w2) > 2.0 * abs(rule.w1)),
    }
