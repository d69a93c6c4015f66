"""Tidy tables behind each reproduced figure.

Every figure is emitted as one long-format table, one observation per
row.  Column order is fixed per figure id (see ``COLUMNS``).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import analytic as an
from . import empirical as em
from .errors import ParameterError
from .model import GenParams, Point, bayes_rule, sample_dataset

FIGURE_IDS = ("fig2", "fig3", "fig4", "fig5", "figA6", "figA7")

COLUMNS = {
    "fig2": ("c", "s1sq", "s2sq", "kind", "index", "x1", "x2", "y", "w1", "w2", "b"),
    "fig3": ("c", "s1sq", "s2sq", "method", "feature", "value"),
    "fig4": ("c", "s1sq", "s2sq", "kind", "feature", "x", "value"),
    "fig5": ("c", "s1sq", "s2sq", "quantity", "feature", "value"),
}
COLUMNS["figA6"] = COLUMNS["fig3"]
COLUMNS["figA7"] = COLUMNS["fig3"]

PANEL_C = (0.8, 0.0, -0.8)
PANEL_S1SQ = 0.8
PANEL_S2SQ = 0.5
S1SQ_FAMILY = (0.1, 0.3, 0.5, 0.8, 1.0)
WIDE_S2SQ = (0.1, 0.9)
DEFAULT_XI: Point = (1.0, 0.0)
N_SCATTER = 500
CURVE_X = tuple(np.round(np.linspace(-3.0, 3.0, 61), 12))


def c_grid(n: int = 41) -> Tuple[float, ...]:
    # rounded so that the grid is exactly symmetric about zero
    return tuple(float(v) + 0.0 for v in np.round(np.linspace(-1.0, 1.0, n), 12))


@dataclass(frozen=True)
class FigureTable:
    figure_id: str
    columns: Tuple[str, ...]
    rows: Tuple[tuple, ...]

    def column(self, name: str) -> List:
        i = self.columns.index(name)
        return [r[i] for r in self.rows]

    def select(self, **where) -> List[dict]:
        out = []
        for r in self.rows:
            d = dict(zip(self.columns, r))
            if all(d[k] == v for k, v in where.items()):
                out.append(d)
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\r\n")
        writer.writerow(self.columns)
        for r in self.rows:
            writer.writerow(["" if v is None else repr(v) if isinstance(v, float) else v for v in r])
        return buf.getvalue()


def _curves(s1sq_family: Iterable[float], s2sq: float, cs: Sequence[float], methods: Sequence[str]):
    funcs = {an.PIXEL_FLIP: an.pixel_flip_attrib, an.PFI: an.pfi_attrib}
    rows = []
    for s1sq in s1sq_family:
        for c in cs:
            params = GenParams.from_variances(c, s1sq, s2sq)
            for m in methods:
                a = funcs[m](params)
                rows.append((c, float(s1sq), float(s2sq), m, 1, a.e1))
                rows.append((c, float(s1sq), float(s2sq), m, 2, a.e2))
    return rows


def _fig2(seed: int, n: int):
    rows = []
    for c in PANEL_C:
        params = GenParams.from_variances(c, PANEL_S1SQ, PANEL_S2SQ)
        rule = bayes_rule(params)
        base = (c, PANEL_S1SQ, PANEL_S2SQ)
        rows.append(base + ("boundary", None, None, None, None, rule.w1, rule.w2, rule.b))
        ds = sample_dataset(params, n, em.derive_seed(seed, "fig2", c))
        for i, (x1, x2, y) in enumerate(ds.records()):
            rows.append(base + ("sample", i, x1, x2, y, None, None, None))
    return rows


def _fig4(seed: int, n: int):
    rows = []
    for c in PANEL_C:
        params = GenParams.from_variances(c, PANEL_S1SQ, PANEL_S2SQ)
        rule = bayes_rule(params)
        base = (c, PANEL_S1SQ, PANEL_S2SQ)
        xs = np.array(CURVE_X)
        for j in (1, 2):
            for kind, fn in (("pd", an.pd_function), ("mplot", an.mplot_function)):
                values = np.asarray(fn(params, j, xs), dtype=float)
                rows.extend(base + (kind, j, float(x), float(v) + 0.0) for x, v in zip(xs, values))
        ds = sample_dataset(params, n, em.derive_seed(seed, "fig4", c))
        fx = rule.decision(ds.x)
        for j in (1, 2):
            rows.extend(base + ("prediction", j, float(x), float(v)) for x, v in zip(ds.x[:, j - 1], fx))
    return rows


def _fig5(xi: Point):
    params = GenParams.from_variances(0.8, PANEL_S1SQ, PANEL_S2SQ)
    rule = bayes_rule(params)
    cf = an.counterfactual_closest(rule, xi)
    base = (params.c, PANEL_S1SQ, PANEL_S2SQ)
    rows = []
    for name, vec in (("xi", xi), ("x_star", cf.x_star), ("displacement", cf.displacement), ("w", (rule.w1, rule.w2))):
        rows.extend(base + (name, j, float(vec[j - 1]) + 0.0) for j in (1, 2))
    return rows


def emit_figure_data(
    figure_id: str,
    seed: int = em.DEFAULT_SEED,
    s1sq_family: Sequence[float] = S1SQ_FAMILY,
    c_values: Optional[Sequence[float]] = None,
    xi: Point = DEFAULT_XI,
    n_points: int = N_SCATTER,
) -> FigureTable:
    """Build the table for ``figure_id``.

    fig3 holds faithfulness (pixel flipping) and PFI curves over ``c`` at
    ``s2**2 = 0.5``; figA6 repeats the faithfulness curves and figA7 the PFI
    curves at ``s2**2`` in {0.1, 0.9}.
    """
    if figure_id not in FIGURE_IDS:
        raise ParameterError(f"unknown figure id {figure_id!r}; choose one of {', '.join(FIGURE_IDS)}")
    if len(s1sq_family) == 0:
        raise ParameterError("s1sq family must not be empty")
    cs = c_grid() if c_values is None else tuple(float(c) for c in c_values)

    if figure_id == "fig2":
        rows = _fig2(seed, n_points)
    elif figure_id == "fig3":
        rows = _curves(s1sq_family, 0.5, cs, (an.PIXEL_FLIP, an.PFI))
    elif figure_id in ("figA6", "figA7"):
        method = an.PIXEL_FLIP if figure_id == "figA6" else an.PFI
        rows = [r for s2sq in WIDE_S2SQ for r in _curves(s1sq_family, s2sq, cs, (method,))]
    elif figure_id == "fig4":
        rows = _fig4(seed, n_points)
    else:
        rows = _fig5(xi)
    return FigureTable(figure_id, COLUMNS[figure_id], tuple(rows))
