"""Report container, log-log fits and file output.

Every file is first written to a temporary sibling and then renamed into
place, so a failed run never leaves a half-written output behind.
"""

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field

RESULT_COLUMNS = (
    "d1", "d2", "r", "L_or_n", "sigma", "alpha", "mu", "snr", "trial",
    "err_fro_sq", "err_norm", "rate_thm2", "minimax_lb", "seed", "wall_ms",
)
PLOT_COLUMNS = ("figure", "series", "x", "y")

FILE_NAMES = {"csv": "results.csv", "json": "report.json", "plotdata": "plotdata.csv"}


@dataclass
class ExperimentReport:
    experiment: str
    columns: tuple = RESULT_COLUMNS
    rows: list = field(default_factory=list)
    cells: list = field(default_factory=list)
    fits: list = field(default_factory=list)
    plot: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    diagnostics: list = field(default_factory=list)
    traces: list = field(default_factory=list)
    csv_name: str = "results.csv"

    @property
    def failed(self):
        return len(self.failures)

    def to_dict(self):
        return {
            "experiment": self.experiment,
            "columns": list(self.columns),
            "rows": self.rows,
            "cells": self.cells,
            "fits": self.fits,
            "failures": self.failures,
            "diagnostics": self.diagnostics,
            "config": self.config,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(experiment=data["experiment"], columns=tuple(data["columns"]),
                   rows=data["rows"], cells=data.get("cells", []), fits=data.get("fits", []),
                   failures=data.get("failures", []), config=data.get("config", {}),
                   diagnostics=data.get("diagnostics", []))


def fit_slope(xs, ys):
    """Least-squares line through ``(ln x, ln y)``; returns ``(slope, intercept, r2)``."""
    xs = [float(x) for x in xs]
    ys = [float(y) for y in ys]
    if len(xs) != len(ys):
        raise ValueError("xs and ys differ in length")
    if len(xs) < 3:
        raise ValueError("need at least three points")
    if min(xs) <= 0 or min(ys) <= 0:
        raise ValueError("log-log fit needs positive values")
    lx = [math.log(x) for x in xs]
    ly = [math.log(y) for y in ys]
    n = len(lx)
    mx, my = sum(lx) / n, sum(ly) / n
    sxx = sum((a - mx) ** 2 for a in lx)
    if sxx == 0:
        raise ValueError("xs must not all be equal")
    sxy = sum((a - mx) * (b - my) for a, b in zip(lx, ly))
    slope = sxy / sxx
    intercept = my - slope * mx
    syy = sum((b - my) ** 2 for b in ly)
    resid = sum((b - intercept - slope * a) ** 2 for a, b in zip(lx, ly))
    r2 = 1.0 if syy == 0 else 1.0 - resid / syy
    return slope, intercept, r2


def _cell_text(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _csv_text(columns, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_cell_text(row.get(c)) for c in columns])
    return buf.getvalue()


def render(report, fmt):
    """Text of one output format: ``csv``, ``json`` or ``plotdata``."""
    if fmt == "csv":
        return _csv_text(report.columns, report.rows)
    if fmt == "json":
        return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    if fmt == "plotdata":
        return _csv_text(PLOT_COLUMNS, report.plot)
    raise ValueError(f"unknown format {fmt!r}")


def render_traces(report):
    """Solver traces as CSV text: ``cell,trial,iter,objective,feasibility``."""
    rows = [{"cell": c, "trial": t, "iter": i, "objective": o, "feasibility": f}
            for c, t, trace in report.traces for i, o, f in trace]
    return _csv_text(("cell", "trial", "iter", "objective", "feasibility"), rows)


def read_csv_rows(path):
    """Rows of a results CSV as dicts of strings (blank cells read as ``""``)."""
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _write_atomic(texts):
    """Write ``{path: text}``; all temporaries exist before any rename."""
    staged = []
    try:
        for path, text in texts.items():
            directory = os.path.dirname(os.path.abspath(path))
            fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
            staged.append((tmp, path))
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
    except BaseException:
        for tmp, _ in staged:
            if os.path.exists(tmp):
                os.unlink(tmp)
        raise
    for tmp, path in staged:
        os.replace(tmp, path)


def emit(report, formats, out_dir):
    """Write the requested formats into ``out_dir`` and return their paths."""
    if isinstance(formats, str):
        formats = [formats]
    os.makedirs(out_dir, exist_ok=True)
    names = dict(FILE_NAMES, csv=report.csv_name)
    texts = {}
    for fmt in formats:
        if fmt not in names:
            raise ValueError(f"unknown format {fmt!r}")
        texts[os.path.join(out_dir, names[fmt])] = render(report, fmt)
    if report.traces:
        texts[os.path.join(out_dir, "traces.csv")] = render_traces(report)
    _write_atomic(texts)
    return list(texts)
