"""Grid expansion and the per-row work of each experiment kind.

Each grid cell and trial gets its own seed hashed from the master seed, so
adding cells to a config leaves the draws of existing cells unchanged.
Rows are computed independently (optionally in worker processes) and
sorted by ``(cell, trial)`` before the report is assembled.
"""

import hashlib
import itertools
import math
import statistics
import time
import traceback
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from ..bounds import (build_packing, eval_minimax_lower, eval_thm2_rate, estimate_R,
                      estimate_gamma, estimate_theta, fano_lower, minimax_gamma_sq,
                      packing_block_rows, spikiness)
from ..dense import RngStream, matrix_rank, random_rank_r
from ..errors import TnlassoError
from ..estimator import SolverConfig, solve_lasso
from ..measurements import NoiseSpec, add_noise, build_completion, build_sketching
from ..norms import NormBallSpec, check_rank_sandwich, tnorm
from .output import RESULT_COLUMNS, ExperimentReport, fit_slope

NORM_COLUMNS = ("d1", "d2", "r", "trial", "op_1to2", "mixed", "inf", "max",
                "mixed_ratio", "max_ratio", "ok", "seed", "wall_ms")
GEOMETRY_COLUMNS = ("d1", "d2", "r", "L_or_n", "regime", "alpha", "trial", "theta_hat",
                    "gamma_hat", "gamma_se", "R", "R_upper", "seed", "wall_ms")
MINIMAX_COLUMNS = ("d1", "d2", "r", "L", "sigma", "alpha", "minimax_lb",
                   "minimax_lb_many", "conditions_met", "gamma_sq", "rate_thm2")
PACKING_COLUMNS = ("d1", "d2", "r", "gamma", "alpha", "sigma", "L", "trial", "count",
                   "block_rows", "log_target", "min_sep_sq", "required_sep_sq",
                   "mean_sep_sq", "alphabet_ok", "fro_ok", "max_rank", "fano_lower",
                   "seed", "wall_ms")


def cell_seed(master, cell, trial):
    """64-bit seed for one (cell, trial), hashed from the master seed."""
    h = hashlib.blake2b(f"{master}:{cell}:{trial}".encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little")


def control_spikiness(M, target, tol=0.05, max_iter=200):
    """Rescale the columns of ``M`` so its spikiness is within ``tol`` of ``target``.

    Column norms ``c_j`` are mapped to ``c_j ** t``; ``t = 0`` makes them
    uniform (spikiness 1) and ``t = 1`` leaves ``M`` unchanged, and larger
    ``t`` concentrates energy on the heaviest column.  ``t`` is found by
    bisection and the Frobenius norm is preserved.  Column scaling does not
    change the rank.
    """
    M = np.asarray(M, dtype=float)
    d2 = M.shape[1]
    if not 1.0 <= target <= math.sqrt(d2):
        raise ValueError(f"spikiness target must lie in [1, sqrt(d2)], got {target}")
    norms = np.linalg.norm(M, axis=0)
    if np.any(norms == 0):
        raise ValueError("spikiness control needs nonzero columns")
    fro = float(np.linalg.norm(M))
    logn = np.log(norms / norms.max())

    def reshaped(t):
        X = M * np.exp((t - 1.0) * logn)
        return X * (fro / np.linalg.norm(X))

    def close(X):
        return abs(spikiness(X) - target) <= tol * target

    lo, hi = 0.0, 1.0
    while spikiness(reshaped(hi)) < target:
        lo, hi = hi, 2.0 * hi
        if hi > 1e6:
            raise ValueError(f"spikiness {target} is out of reach for this matrix")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        X = reshaped(mid)
        if close(X):
            return X
        if spikiness(X) < target:
            lo = mid
        else:
            hi = mid
    X = reshaped(0.5 * (lo + hi))
    if not close(X):
        raise ValueError(f"could not reach spikiness {target}")
    return X


def _grid(spec):
    """``[(cell, params)]`` in a fixed order."""
    exp = spec.experiment
    alphas = [None] if spec.alpha == "exact" else spec.alpha
    if exp == "recovery-sweep":
        counts = [None] if spec.full_coverage else spec.measurement_counts
        axes = itertools.product(spec.d1, spec.d2, spec.r, counts, spec.sigma, alphas,
                                 spec.mu or [None])
        keys = ("d1", "d2", "r", "count", "sigma", "alpha", "mu")
    elif exp == "norm-check":
        axes = itertools.product(spec.d1, spec.d2, spec.r)
        keys = ("d1", "d2", "r")
    elif exp == "theta-gamma":
        axes = itertools.product(spec.d1, spec.d2, spec.r, spec.measurement_counts, alphas)
        keys = ("d1", "d2", "r", "count", "alpha")
    elif exp == "minimax":
        axes = itertools.product(spec.d1, spec.d2, spec.r, spec.L, spec.sigma, alphas)
        keys = ("d1", "d2", "r", "count", "sigma", "alpha")
    else:
        axes = itertools.product(spec.d1, spec.d2, spec.r, spec.gamma, alphas, spec.sigma, spec.L)
        keys = ("d1", "d2", "r", "gamma", "alpha", "sigma", "count")
    return [(i, dict(zip(keys, vals))) for i, vals in enumerate(axes)]


def _trials(spec):
    if spec.experiment == "minimax":
        return 1
    if spec.experiment == "norm-check":
        return spec.count
    return spec.trials


def _ms(start):
    return round(1000.0 * (time.perf_counter() - start), 3)


# -- per-row work -----------------------------------------------------------


def _ensemble(spec, p, rng):
    d1, d2 = p["d1"], p["d2"]
    if spec.ensemble == "sketching":
        return build_sketching(d1, d2, p["count"], rng)
    if spec.full_coverage:
        return build_completion(d1, d2, d1 * d2, rng, with_replacement=False)
    return build_completion(d1, d2, p["count"], rng)


def _recovery_row(spec, p, trial, seed):
    start = time.perf_counter()
    d1, d2, r, sigma = p["d1"], p["d2"], p["r"], p["sigma"]
    rng = RngStream(seed, "trial")
    M0 = random_rank_r(d1, d2, r, rng.child("truth"))
    if p["mu"] is not None:
        M0 = control_spikiness(M0, p["mu"])
    alpha = p["alpha"]
    if alpha is None:
        alpha = tnorm(M0, NormBallSpec(spec.regime, 1.0, r))
    ball = NormBallSpec(spec.regime, alpha, r)
    ens = _ensemble(spec, p, rng.child("ensemble"))
    y = add_noise(ens.apply(M0), NoiseSpec(sigma, seed))
    cfg = SolverConfig(max_outer_iters=spec.solver_max_iters, tol=spec.solver_tol,
                       method=spec.solver_method, seed=seed)
    rep = solve_lasso(ens, y, ball, cfg)
    fro0 = float(np.sum(M0 * M0))
    err = float(np.sum((rep.M_hat - M0) ** 2))
    count = p["count"] if p["count"] is not None else ens.n
    rate = minimax = None
    if spec.ensemble == "sketching" and spec.regime == "mixed":
        rate = eval_thm2_rate(alpha, sigma, d1, d2, count, r)
        if sigma > 0:
            minimax = eval_minimax_lower(alpha, sigma, count, d1, d2, r).value
    row = {"d1": d1, "d2": d2, "r": r, "L_or_n": count, "sigma": sigma, "alpha": alpha,
           "mu": spikiness(M0), "snr": ens.snr(M0, sigma), "trial": trial,
           "err_fro_sq": err, "err_norm": err / fro0, "rate_thm2": rate,
           "minimax_lb": minimax, "seed": seed, "wall_ms": _ms(start)}
    diag = {"iterations": rep.iterations, "converged": rep.converged, "method": rep.method,
            "final_feasibility": rep.final_feasibility, "objective": rep.objective}
    return row, diag, rep


def _norm_row(spec, p, trial, seed):
    start = time.perf_counter()
    M = random_rank_r(p["d1"], p["d2"], p["r"], RngStream(seed, "norm-check"))
    rep = check_rank_sandwich(M, p["r"], tol=spec.tol)
    row = {"d1": p["d1"], "d2": p["d2"], "r": p["r"], "trial": trial,
           "op_1to2": rep.op_1to2, "mixed": rep.mixed, "inf": rep.inf, "max": rep.max,
           "mixed_ratio": rep.mixed / rep.op_1to2, "max_ratio": rep.max / rep.inf,
           "ok": rep.all_ok, "seed": seed, "wall_ms": _ms(start)}
    return row, {}, None


def _geometry_row(spec, p, trial, seed):
    start = time.perf_counter()
    d1, d2 = p["d1"], p["d2"]
    rng = RngStream(seed, "geometry")
    ball = NormBallSpec(spec.regime, p["alpha"], p["r"])
    ens = _ensemble(spec, p, rng.child("ensemble"))
    theta = estimate_theta(ens, ball, spec.samples, spec.ascent_iters, rng.child("theta"))
    gamma, se = estimate_gamma(ens, ball, samples=spec.samples,
                               ascent_iters=spec.ascent_iters, rng=rng.child("gamma"))
    lo, hi = estimate_R(ball, d1, d2)
    row = {"d1": d1, "d2": d2, "r": p["r"], "L_or_n": p["count"], "regime": spec.regime,
           "alpha": p["alpha"], "trial": trial, "theta_hat": theta, "gamma_hat": gamma,
           "gamma_se": se, "R": lo, "R_upper": hi, "seed": seed, "wall_ms": _ms(start)}
    return row, {}, None


def _minimax_row(spec, p, trial, seed):
    d1, d2, r, L, sigma, alpha = (p[k] for k in ("d1", "d2", "r", "count", "sigma", "alpha"))
    mm = eval_minimax_lower(alpha, sigma, L, d1, d2, r)
    row = {"d1": d1, "d2": d2, "r": r, "L": L, "sigma": sigma, "alpha": alpha,
           "minimax_lb": mm.value, "minimax_lb_many": mm.value_many_measurements,
           "conditions_met": mm.conditions_met,
           "gamma_sq": minimax_gamma_sq(alpha, sigma, d1, d2, r),
           "rate_thm2": eval_thm2_rate(alpha, sigma, d1, d2, L, r)}
    return row, {"warning": mm.warning} if mm.warning else {}, None


def _packing_row(spec, p, trial, seed):
    start = time.perf_counter()
    d1, d2, r, gamma, alpha, sigma, L = (
        p[k] for k in ("d1", "d2", "r", "gamma", "alpha", "sigma", "count"))
    rng = RngStream(seed, "packing")
    pack = build_packing(d1, d2, r, gamma, alpha, spec.count, rng.child("set"))
    entry = gamma * alpha / math.sqrt(d1)
    target_fro = gamma**2 * alpha**2 * d2
    alphabet_ok = all(np.all(np.abs(m) == entry) for m in pack.matrices)
    fro_ok = all(abs(float(np.sum(m * m)) - target_fro) <= 1e-12 * target_fro
                 for m in pack.matrices)
    fano = None
    if spec.count >= 2:
        ens = build_sketching(d1, d2, L, rng.child("ensemble"))
        fano = fano_lower(pack, ens, sigma)
    stats = pack.stats()
    row = {"d1": d1, "d2": d2, "r": r, "gamma": gamma, "alpha": alpha, "sigma": sigma, "L": L,
           "trial": trial, "count": stats["count"], "block_rows": packing_block_rows(r, gamma),
           "log_target": stats["log_target"], "min_sep_sq": stats["min_sep_sq"],
           "required_sep_sq": stats["required_sep_sq"], "mean_sep_sq": stats["mean_sep_sq"],
           "alphabet_ok": alphabet_ok, "fro_ok": fro_ok,
           "max_rank": max(matrix_rank(m) for m in pack.matrices),
           "fano_lower": fano, "seed": seed, "wall_ms": _ms(start)}
    return row, {"redraws": pack.redraws}, None


_ROW_FUNCS = {
    "recovery-sweep": (_recovery_row, RESULT_COLUMNS, "results.csv"),
    "norm-check": (_norm_row, NORM_COLUMNS, "norms.csv"),
    "theta-gamma": (_geometry_row, GEOMETRY_COLUMNS, "geometry.csv"),
    "minimax": (_minimax_row, MINIMAX_COLUMNS, "minimax.csv"),
    "packing-verify": (_packing_row, PACKING_COLUMNS, "packing.csv"),
}


def _run_task(task):
    spec, cell, trial, params, keep_traces = task
    func = _ROW_FUNCS[spec.experiment][0]
    seed = cell_seed(spec.seed, cell, trial)
    try:
        row, diag, rep = func(spec, params, trial, seed)
    except (TnlassoError, ValueError, ArithmeticError, np.linalg.LinAlgError) as err:
        return {"cell": cell, "trial": trial, "seed": seed, "params": params,
                "error": f"{type(err).__name__}: {err}",
                "detail": traceback.format_exc(limit=3)}
    out = {"cell": cell, "trial": trial, "row": row, "diag": diag}
    if keep_traces and rep is not None:
        out["trace"] = rep.trace_rows()
    return out


# -- report assembly --------------------------------------------------------


def _failure_row(columns, res):
    p = res["params"]
    row = {c: None for c in columns}
    for key in ("d1", "d2", "r", "sigma", "alpha", "gamma"):
        if key in row and key in p:
            row[key] = p[key]
    for key in ("L_or_n", "L"):
        if key in row:
            row[key] = p.get("count")
    row["trial"] = res["trial"]
    row["seed"] = res["seed"]
    return row


def _series_label(row, keys):
    return ",".join(f"{k}={row[k]}" for k in keys)


def _summarize_recovery(report, ok_rows):
    groups = {}
    for row in ok_rows:
        key = (row["d1"], row["d2"], row["r"], row["L_or_n"], row["sigma"], row["_alpha_key"],
               row["_mu_key"])
        groups.setdefault(key, []).append(row)
    curves = {}
    for key, rows in groups.items():
        errs = [x["err_fro_sq"] for x in rows]
        norms = [x["err_norm"] for x in rows]
        first = rows[0]
        n_meas = first["L_or_n"] * first["d2"] if report.config["ensemble"] == "sketching" \
            else first["L_or_n"]
        cell = {"d1": first["d1"], "d2": first["d2"], "r": first["r"],
                "L_or_n": first["L_or_n"], "sigma": first["sigma"], "alpha_rule": key[5],
                "mu_target": key[6], "trials": len(rows), "measurements": n_meas,
                "mean_err_fro_sq": statistics.fmean(errs),
                "median_err_fro_sq": statistics.median(errs),
                "mean_err_norm": statistics.fmean(norms),
                "median_err_norm": statistics.median(norms),
                "mean_mu": statistics.fmean(x["mu"] for x in rows),
                "mean_snr": statistics.fmean(x["snr"] for x in rows),
                "mean_rate_thm2": None, "mean_minimax_lb": None}
        if first["rate_thm2"] is not None:
            cell["mean_rate_thm2"] = statistics.fmean(x["rate_thm2"] for x in rows)
        if first["minimax_lb"] is not None:
            cell["mean_minimax_lb"] = statistics.fmean(x["minimax_lb"] for x in rows)
        report.cells.append(cell)
        label = _series_label(cell, ("d1", "d2", "r", "sigma")) + \
            f",alpha={key[5]},mu={key[6]}"
        curves.setdefault(label, []).append(cell)
    for label, cells in curves.items():
        cells.sort(key=lambda c: c["measurements"])
        for c in cells:
            report.plot.append({"figure": "error_vs_measurements", "series": label,
                                "x": c["measurements"], "y": c["mean_err_fro_sq"]})
            for col, name in (("mean_rate_thm2", "rate"), ("mean_minimax_lb", "minimax")):
                if c[col] is not None:
                    report.plot.append({"figure": "error_vs_measurements",
                                        "series": f"{name}:{label}",
                                        "x": c["measurements"], "y": c[col]})
        xs = [c["measurements"] for c in cells]
        ys = [c["mean_err_fro_sq"] for c in cells]
        if len(set(xs)) >= 3 and min(ys) > 0:
            slope, intercept, r2 = fit_slope(xs, ys)
            report.fits.append({"series": label, "x": "measurements", "y": "mean_err_fro_sq",
                                "slope": slope, "intercept": intercept, "r2": r2,
                                "points": len(xs)})


def _summarize_geometry(report, ok_rows):
    groups = {}
    for row in ok_rows:
        groups.setdefault((row["d1"], row["d2"], row["r"], row["alpha"], row["L_or_n"]),
                          []).append(row)
    for key, rows in sorted(groups.items()):
        label = f"d1={key[0]},d2={key[1]},r={key[2]},alpha={key[3]}"
        for name in ("theta_hat", "gamma_hat"):
            report.plot.append({"figure": f"{name}_vs_measurements", "series": label,
                                "x": key[4], "y": statistics.fmean(x[name] for x in rows)})


def _summarize_minimax(report, ok_rows):
    for row in ok_rows:
        label = _series_label(row, ("d1", "d2", "r", "sigma", "alpha"))
        report.plot.append({"figure": "minimax_vs_L", "series": label, "x": row["L"],
                            "y": row["minimax_lb"]})
        report.plot.append({"figure": "minimax_vs_L", "series": f"rate:{label}",
                            "x": row["L"], "y": row["rate_thm2"]})


def _summarize_packing(report, ok_rows):
    for row in ok_rows:
        label = _series_label(row, ("d1", "d2", "r", "gamma", "alpha"))
        report.plot.append({"figure": "packing_separation", "series": label,
                            "x": row["trial"], "y": row["min_sep_sq"] / row["required_sep_sq"]})


def _check_row_failures(exp, row):
    """Rows that ran but violate the property they verify."""
    if exp == "norm-check" and not row["ok"]:
        return "norm sandwich violated"
    if exp == "packing-verify" and not (row["alphabet_ok"] and row["fro_ok"]
                                        and row["max_rank"] <= row["r"]):
        return "packing property violated"
    return None


def run(spec, jobs=1, timing=False, keep_traces=False):
    """Run every (cell, trial) of ``spec`` and assemble an :class:`ExperimentReport`."""
    _, columns, csv_name = _ROW_FUNCS[spec.experiment]
    grid = _grid(spec)
    tasks = [(spec, cell, trial, params, keep_traces)
             for cell, params in grid for trial in range(_trials(spec))]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_task, tasks))
    else:
        results = [_run_task(t) for t in tasks]
    results.sort(key=lambda res: (res["cell"], res["trial"]))

    report = ExperimentReport(spec.experiment, columns=columns, config=spec.to_dict(),
                              csv_name=csv_name)
    params_by_cell = dict(grid)
    ok_rows, traces = [], []
    for res in results:
        if "error" in res:
            report.rows.append(_failure_row(columns, res))
            report.failures.append({k: res[k] for k in ("cell", "trial", "seed", "error")})
            continue
        row = res["row"]
        if not timing and "wall_ms" in row:
            row["wall_ms"] = None
        report.rows.append(row)
        problem = _check_row_failures(spec.experiment, row)
        if problem:
            report.failures.append({"cell": res["cell"], "trial": res["trial"],
                                    "seed": row.get("seed"), "error": problem})
        p = params_by_cell[res["cell"]]
        ok_rows.append(dict(row, _alpha_key="exact" if p.get("alpha") is None else p["alpha"],
                            _mu_key=p.get("mu")))
        if "trace" in res:
            traces.append((res["cell"], res["trial"], res["trace"]))
    if spec.experiment == "recovery-sweep":
        _summarize_recovery(report, ok_rows)
    elif spec.experiment == "theta-gamma":
        _summarize_geometry(report, ok_rows)
    elif spec.experiment == "minimax":
        _summarize_minimax(report, ok_rows)
    elif spec.experiment == "packing-verify":
        _summarize_packing(report, ok_rows)
    report.diagnostics = [{"cell": r["cell"], "trial": r["trial"], **r["diag"]}
                          for r in results if r.get("diag")]
    report.traces = traces
    return report
