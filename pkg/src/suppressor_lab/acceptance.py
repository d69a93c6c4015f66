"""Acceptance suite: every criterion as one or more named pass/fail checks.

The textual report is deterministic for a fixed seed.  Wall-clock timings
decide the runtime checks but are only logged, never written into the
report, so two runs with the same seed produce identical bytes.
"""

from __future__ import annotations

import hashlib
import logging
import math
import time
from dataclasses import dataclass
from typing import Callable, List, Tuple

import numpy as np

from . import analytic as an
from . import empirical as em
from . import figures as fg
from .harness import SweepGrid, SweepReport, run_sweep
from .model import GenParams, bayes_rule

log = logging.getLogger(__name__)

RANKING_PARAMS = (-0.8, 1.0, 0.15)
ZERO_TOL = 1e-10
NONZERO_MIN = 1e-3
N_AXIOM_CASES = 1000
FULL_SWEEP_LIMIT = 600.0
QUICK_SWEEP_LIMIT = 60.0
FIGURE_LIMIT = 30.0


@dataclass(frozen=True)
class CheckResult:
    criterion: int
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.criterion}.{self.name}: {self.detail}"


@dataclass
class AcceptanceOutcome:
    results: List[CheckResult]
    sweep: SweepReport

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def failed(self) -> List[CheckResult]:
        return [r for r in self.results if not r.passed]

    def report(self) -> str:
        lines = [r.line() for r in self.results]
        n_fail = len(self.failed())
        lines.append(f"{len(self.results) - n_fail}/{len(self.results)} checks passed")
        return "\n".join(lines) + "\n"


def _timed(label: str, fn: Callable):
    t0 = time.perf_counter()
    out = fn()
    elapsed = time.perf_counter() - t0
    log.info("%s took %.3f s", label, elapsed)
    return out, elapsed


def _grid_points(grid: SweepGrid, min_abs_c: float = 0.0):
    return [p for p in grid.points() if abs(p.c) >= min_abs_c]


def criterion_1() -> List[CheckResult]:
    params = GenParams.from_variances(*RANKING_PARAMS)
    rule = bayes_rule(params)
    # best of several repetitions; a single call is dominated by timer noise
    best = min(_timed("bayes weights", lambda: bayes_rule(params))[1] for _ in range(5))
    w1, w2 = abs(rule.w1), abs(rule.w2)
    return [
        CheckResult(1, "w2_range", 0.88 <= w2 <= 0.92, f"|w2|={w2:.6f} in [0.88, 0.92]"),
        CheckResult(1, "w1_range", 0.41 <= w1 <= 0.45, f"|w1|={w1:.6f} in [0.41, 0.45]"),
        CheckResult(1, "suppressor_twice_signal", w2 > 2.0 * w1, f"|w2|/|w1|={w2 / w1:.6f} > 2"),
        CheckResult(1, "runtime", best < 1e-3, "weights computed in under 1 ms"),
    ]


def criterion_2(grid: SweepGrid) -> List[CheckResult]:
    def compute():
        worst = {}
        for p in grid.points():
            scores = {
                an.PATTERN: [an.pattern_attrib(p).e2],
                an.MPLOT: [an.mplot_attrib(p, x).e2 for x in grid.instance_points],
                an.SHAPLEY_R2_SINGLE: [an.shapley_r2_single_model(p).e2],
                an.FIRM: [an.firm_attrib(p).e2],
                an.PATTERN_ATTRIBUTION: [an.pattern_attribution_dtd(p).e2],
            }
            for m, vals in scores.items():
                worst[m] = max(worst.get(m, 0.0), max(abs(v) for v in vals))
        return worst

    worst, elapsed = _timed("zero-attribution set", compute)
    out = [
        CheckResult(2, f"zero_e2.{m}", v < ZERO_TOL, f"max |e2| over grid = {v:.3e} < {ZERO_TOL:.0e}")
        for m, v in worst.items()
    ]
    out.append(CheckResult(2, "runtime", elapsed < 1.0, "zero-attribution set evaluated in under 1 s"))
    return out


def _nonzero_e2(p: GenParams) -> dict:
    rule = bayes_rule(p)
    cf = an.counterfactual_closest(rule, (1.0, 0.0))
    return {
        an.GRADIENT: an.gradient_attrib(rule).e2,
        an.PIXEL_FLIP: an.pixel_flip_attrib(p).e2,
        an.PFI: an.pfi_attrib(p).e2,
        an.PD: an.pd_attrib(p, (1.0, 1.0)).e2,
        an.SHAP_MARGINAL: an.shap_marginal(p, (1.0, 1.0)).e2,
        an.SHAP_CONDITIONAL: an.shap_conditional(p, (1.0, 0.0)).e2,
        an.INTEGRATED_GRADIENTS: an.integrated_gradients_linear(rule, (1.0, 1.0)).e2,
        an.COUNTERFACTUAL: cf.displacement[1],
        an.LIME: an.lime_reference_direction(rule)[1],
    }


def criterion_3(grid: SweepGrid) -> List[CheckResult]:
    def compute():
        smallest = {}
        where = {}
        for p in _grid_points(grid, 0.4):
            for m, v in _nonzero_e2(p).items():
                if abs(v) < smallest.get(m, math.inf):
                    smallest[m] = abs(v)
                    where[m] = p
        return smallest, where

    (smallest, where), elapsed = _timed("nonzero-attribution set", compute)
    out = []
    for m, v in smallest.items():
        p = where[m]
        out.append(CheckResult(
            3, f"nonzero_e2.{m}", v > NONZERO_MIN,
            f"min |e2| over |c|>=0.4 = {v:.3e} at (c={p.c:g}, s1sq={p.s1sq:.3g}, s2sq={p.s2sq:.3g})",
        ))
    out.append(CheckResult(3, "runtime", elapsed < 1.0, "nonzero-attribution set evaluated in under 1 s"))
    return out


def criterion_4(sweep: SweepReport, elapsed: float, quick: bool) -> List[CheckResult]:
    rows = sweep.rows
    n = len(rows)
    errors = sum(r.error is not None for r in rows)
    # rows whose evaluation failed count against the pass rate
    ok3 = sum(bool(r.passes_at(3.0)) for r in rows)
    ok4 = sum(bool(r.passes_at(4.0)) for r in rows)
    limit = QUICK_SWEEP_LIMIT if quick else FULL_SWEEP_LIMIT
    return [
        CheckResult(4, "pass_3sigma", n > 0 and ok3 >= 0.95 * n, f"{ok3}/{n} rows within 3 SE or abs tol (need >= 95%)"),
        CheckResult(4, "pass_4sigma", n > 0 and ok4 == n, f"{ok4}/{n} rows within 4 SE or abs tol, {errors} errors"),
        CheckResult(4, "runtime", elapsed < limit, f"sweep finished within {limit:g} s"),
    ]


def criterion_5(grid: SweepGrid, seed: int) -> List[CheckResult]:
    rng = np.random.default_rng(em.derive_seed(seed, "axioms"))
    cs = rng.uniform(-0.95, 0.95, N_AXIOM_CASES)
    s1sq = rng.uniform(0.05, 2.0, N_AXIOM_CASES)
    s2sq = rng.uniform(0.05, 2.0, N_AXIOM_CASES)
    xs = rng.normal(0.0, 2.0, (N_AXIOM_CASES, 2))
    bases = rng.normal(0.0, 1.0, (N_AXIOM_CASES, 2))

    shap_err = ig_err = 0.0
    for c, a, b, x, x0 in zip(cs, s1sq, s2sq, xs, bases):
        p = GenParams.from_variances(c, a, b)
        rule = bayes_rule(p)
        x = (float(x[0]), float(x[1]))
        x0 = (float(x0[0]), float(x0[1]))
        fx = float(rule.decision(x))
        for attr in (an.shap_marginal(p, x), an.shap_conditional(p, x)):
            shap_err = max(shap_err, abs(attr.e1 + attr.e2 - fx))
        ig = an.integrated_gradients_linear(rule, x, x0)
        ig_err = max(ig_err, abs(ig.e1 + ig.e2 - (fx - float(rule.decision(x0)))))

    id_err = 0.0
    bound_gap = math.inf
    for p in grid.points():
        pf, pfi = an.pixel_flip_attrib(p), an.pfi_attrib(p)
        id_err = max(id_err, abs(pfi.e2 - 2.0 * pf.e2), abs(pfi.e1 - pfi.e2 - 2.0 * p.alpha))
        bound_gap = min(bound_gap, an.firm_attrib(p).e1 - an.firm_lower_bound(p))

    return [
        CheckResult(5, "shap_efficiency", shap_err <= 1e-10,
                    f"max |e1+e2-f(x)| = {shap_err:.3e} over {N_AXIOM_CASES} cases (marginal and conditional)"),
        CheckResult(5, "ig_completeness", ig_err <= 1e-10,
                    f"max |e1+e2-(f(x)-f(x'))| = {ig_err:.3e} over {N_AXIOM_CASES} cases"),
        CheckResult(5, "pfi_pixel_flip_identities", id_err <= 1e-12,
                    f"max identity residual over grid = {id_err:.3e}"),
        CheckResult(5, "firm_lower_bound", bound_gap >= 0.0,
                    f"min (FIRM e1 - bound) over grid = {bound_gap:.6f}"),
    ]


def criterion_6(grid: SweepGrid, sweep: SweepReport) -> List[CheckResult]:
    """Closed-form projection properties, plus optimizer agreement read from the sweep."""
    f_err = par_err = 0.0
    min_move = math.inf
    for p in grid.points():
        rule = bayes_rule(p)
        for xi in grid.instance_points:
            cf = an.counterfactual_closest(rule, xi)
            d1, d2 = cf.displacement
            f_err = max(f_err, abs(float(rule.decision(cf.x_star))))
            par_err = max(par_err, abs(d1 * rule.w2 - d2 * rule.w1))
            if abs(p.c) >= 0.4:
                min_move = min(min_move, abs(d2))

    # displacement rows differ by exactly x*_opt - x*
    rows = [r for r in sweep.rows if r.method == an.COUNTERFACTUAL]
    missing = sum(r.analytic is None or r.empirical is None for r in rows)
    opt_err = max((abs(r.analytic - r.empirical) for r in rows if r.empirical is not None), default=math.inf)
    short = sum(not d["optimizer_converged"] for d in sweep.meta.get("diagnostics", [])
                if d["kind"] == "counterfactual_reduced_residual")
    return [
        CheckResult(6, "on_boundary", f_err <= 1e-10, f"max |f(x*)| = {f_err:.3e}"),
        CheckResult(6, "parallel_to_w", par_err <= 1e-10, f"max |d1*w2 - d2*w1| = {par_err:.3e}"),
        CheckResult(6, "optimizer_agreement", missing == 0 and opt_err <= 1e-4,
                    f"max |x*_opt - x*| = {opt_err:.3e} over {len(rows) // 2} runs, "
                    f"{short} stopped at the last penalty stage"),
        CheckResult(6, "suppressor_displaced", min_move > ZERO_TOL,
                    f"min |x*_2 - xi_2| over |c|>=0.4 panel = {min_move:.3e}"),
    ]


def _fig3_checks(table: fg.FigureTable) -> List[CheckResult]:
    idx = {name: i for i, name in enumerate(table.columns)}
    values = {}
    for r in table.rows:
        values[(r[idx["method"]], r[idx["s1sq"]], r[idx["c"]], r[idx["feature"]])] = r[idx["value"]]

    odd = 0.0
    at_zero = 0.0
    order_fail = {an.PIXEL_FLIP: [], an.PFI: []}
    for (m, s1sq, c, j), v in values.items():
        if j != 2:
            continue
        odd = max(odd, abs(v - values[(m, s1sq, -c + 0.0, 2)]))
        if c == 0.0:
            at_zero = max(at_zero, abs(v))
        e1 = values[(m, s1sq, c, 1)]
        if not e1 > v:
            order_fail[m].append((c, s1sq, e1, v))

    out = [
        CheckResult(7, "fig3_e2_even", odd <= 1e-12, f"max |e2(c) - e2(-c)| = {odd:.3e}"),
        CheckResult(7, "fig3_e2_zero_at_c0", at_zero <= ZERO_TOL, f"max |e2| at c=0 = {at_zero:.3e}"),
    ]
    for m, fails in order_fail.items():
        if fails:
            c, s1sq, e1, e2 = fails[0]
            detail = f"{len(fails)} points with e1 <= e2, first at c={c:g}, s1sq={s1sq:g}: e1={e1:.3e}, e2={e2:.3e}"
        else:
            detail = "e1 > e2 at every point"
        out.append(CheckResult(7, f"fig3_e1_gt_e2.{m}", not fails, detail))
    return out


def _fig2_checks(table: fg.FigureTable) -> List[CheckResult]:
    err = 0.0
    for row in table.select(kind="boundary"):
        k = row["c"] * math.sqrt(row["s1sq"]) / math.sqrt(row["s2sq"])
        a = 1.0 / math.sqrt(1.0 + k * k)
        err = max(err, abs(row["w1"] - a), abs(row["w2"] + a * k), abs(row["b"]))
    return [CheckResult(7, "fig2_boundary", err <= 1e-12, f"max coefficient deviation = {err:.3e}")]


def emit_all_figures(seed: int) -> dict:
    return {fid: fg.emit_figure_data(fid, seed=seed) for fid in fg.FIGURE_IDS}


def criterion_7(tables: dict, elapsed: float) -> List[CheckResult]:
    out = _fig3_checks(tables["fig3"]) + _fig2_checks(tables["fig2"])
    out.append(CheckResult(7, "runtime", elapsed < FIGURE_LIMIT, f"all figure tables emitted within {FIGURE_LIMIT:g} s"))
    return out


def _digest(sweep: SweepReport, tables: dict) -> str:
    h = hashlib.sha256(sweep.to_json().encode())
    for fid in sorted(tables):
        h.update(tables[fid].to_csv().encode())
    return h.hexdigest()


def criterion_8(first: str, second: str) -> List[CheckResult]:
    return [CheckResult(8, "rerun_identical", first == second,
                        f"sweep and figure outputs sha256 {first[:16]} vs rerun {second[:16]}")]


def run_acceptance(
    cfg: em.EstimatorConfig,
    quick: bool = False,
    grid: SweepGrid = None,
    workers: int = 1,
) -> AcceptanceOutcome:
    """Evaluate every criterion; failures are reported, never raised."""
    grid = grid or SweepGrid.default(cfg.seed)
    results: List[CheckResult] = []
    results += criterion_1()
    results += criterion_2(grid)
    results += criterion_3(grid)
    sweep, sweep_time = _timed("sweep", lambda: run_sweep(grid, cfg, workers=workers))
    results += criterion_4(sweep, sweep_time, quick)
    results += criterion_5(grid, cfg.seed)
    results += criterion_6(grid, sweep)
    tables, fig_time = _timed("figures", lambda: emit_all_figures(cfg.seed))
    results += criterion_7(tables, fig_time)

    # a second, independent pass over everything stochastic
    rerun, _ = _timed("rerun", lambda: (run_sweep(grid, cfg, workers=workers), emit_all_figures(cfg.seed)))
    results += criterion_8(_digest(sweep, tables), _digest(*rerun))
    return AcceptanceOutcome(results=results, sweep=sweep)


def summary_table(outcome: AcceptanceOutcome) -> List[Tuple[int, bool]]:
    """Per-criterion verdict: a criterion passes when all its checks do."""
    by = {}
    for r in outcome.results:
        by[r.criterion] = by.get(r.criterion, True) and r.passed
    return sorted(by.items())
