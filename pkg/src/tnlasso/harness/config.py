"""Experiment configuration files.

A config is one JSON object with flat keys.  Keys common to every
experiment:

    experiment   one of norm-check, recovery-sweep, theta-gamma, minimax,
                 packing-verify
    seed         master seed (unsigned 64-bit), default 0
    trials       repetitions per grid cell, default 1
    d1, d2, r    lists of positive integers (a scalar is read as a
                 one-element list); the grid is their Cartesian product

Recovery sweeps and single solves also read

    ensemble     sketching | completion
    regime       mixed | max
    L            list of sketches per column (sketching)
    n            list of sample counts (completion)
    sigma        list of noise levels
    alpha        "exact" (alpha = tnorm of the ground truth) or a list of
                 numbers; other experiments default to 1.0
    mu           optional list of target spikiness values
    full_coverage        completion only: sample every entry once
    solver_method        auto | lift | factored
    solver_max_iters     iteration cap
    solver_tol           stopping tolerance

theta-gamma reads ``L``, ``samples``, ``ascent_iters``, ``regime`` and
``alpha``; minimax reads ``L``, ``sigma`` and ``alpha``; packing-verify
reads ``gamma``, ``alpha``, ``count``, ``sigma`` and ``L``; norm-check reads
``count`` and ``tol``.
"""

import json
import math
from dataclasses import dataclass, field

from ..errors import ConfigError

EXPERIMENTS = ("norm-check", "recovery-sweep", "theta-gamma", "minimax", "packing-verify")

_KNOWN = {
    "experiment", "seed", "trials", "d1", "d2", "r", "ensemble", "regime", "L", "n",
    "sigma", "alpha", "mu", "full_coverage", "solver_method", "solver_max_iters",
    "solver_tol", "samples", "ascent_iters", "gamma", "count", "tol", "out",
}


@dataclass
class ExperimentSpec:
    experiment: str
    seed: int = 0
    trials: int = 1
    d1: list = field(default_factory=lambda: [16])
    d2: list = field(default_factory=lambda: [16])
    r: list = field(default_factory=lambda: [2])
    ensemble: str = "sketching"
    regime: str = "mixed"
    L: list = field(default_factory=lambda: [4])
    n: list = field(default_factory=list)
    sigma: list = field(default_factory=lambda: [0.0])
    alpha: object = "exact"
    mu: list = field(default_factory=list)
    full_coverage: bool = False
    solver_method: str = "auto"
    solver_max_iters: int = 20000
    solver_tol: float = 1e-8
    samples: int = 16
    ascent_iters: int = 30
    gamma: list = field(default_factory=lambda: [1.0])
    count: int = 8
    tol: float = 1e-6
    out: str = "out"

    @property
    def measurement_counts(self):
        """``L`` values for sketching, ``n`` values for completion."""
        return self.L if self.ensemble == "sketching" else self.n

    def to_dict(self):
        # the output directory is where a run is written, not part of what it computes
        return {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "out"}


def _as_list(value, name, kind=int, positive=True, allow_zero=False):
    items = value if isinstance(value, list) else [value]
    if not items:
        raise ConfigError(f"{name} must not be empty")
    out = []
    for v in items:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"{name} entries must be numbers, got {v!r}")
        if kind is int and v != int(v):
            raise ConfigError(f"{name} entries must be integers, got {v!r}")
        v = kind(v)
        if not math.isfinite(v):
            raise ConfigError(f"{name} entries must be finite")
        if positive and not (v > 0 or (allow_zero and v == 0)):
            raise ConfigError(f"{name} entries must be positive, got {v!r}")
        out.append(v)
    return out


def _positive_int(value, name):
    if isinstance(value, bool) or not isinstance(value, int) or value < 1:
        raise ConfigError(f"{name} must be a positive integer, got {value!r}")
    return value


def parse_config(data, seed=None, out=None, experiment=None):
    """Validate a config mapping and return an :class:`ExperimentSpec`.

    ``seed`` and ``out`` override the corresponding keys.  ``experiment``
    supplies the kind when the file omits it and must agree when it does not.
    """
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(data) - _KNOWN
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    exp = data.get("experiment", experiment)
    if experiment is not None and exp != experiment:
        raise ConfigError(f"config describes a {exp} experiment, expected {experiment}")
    if exp not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {', '.join(EXPERIMENTS)}")
    spec = ExperimentSpec(experiment=exp)

    master = data.get("seed", 0) if seed is None else seed
    if isinstance(master, bool) or not isinstance(master, int) or not 0 <= master < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    spec.seed = master
    spec.trials = _positive_int(data.get("trials", 1), "trials")
    for key in ("d1", "d2", "r"):
        if key in data:
            setattr(spec, key, _as_list(data[key], key))

    spec.ensemble = data.get("ensemble", "sketching")
    if spec.ensemble not in ("sketching", "completion"):
        raise ConfigError("ensemble must be sketching or completion")
    spec.regime = data.get("regime", "mixed")
    if spec.regime not in ("mixed", "max"):
        raise ConfigError("regime must be mixed or max")
    if "L" in data:
        spec.L = _as_list(data["L"], "L")
    if "n" in data:
        spec.n = _as_list(data["n"], "n")
    if "sigma" in data:
        spec.sigma = _as_list(data["sigma"], "sigma", float, allow_zero=True)
    elif exp in ("minimax", "packing-verify"):
        spec.sigma = [1.0]
    if "mu" in data and data["mu"] is not None:
        spec.mu = _as_list(data["mu"], "mu", float)
        if any(m < 1 for m in spec.mu):
            raise ConfigError("mu targets must be at least 1")
    # "exact" needs a ground truth, which only recovery sweeps draw
    alpha = data.get("alpha", "exact" if exp == "recovery-sweep" else 1.0)
    if alpha == "exact" and exp != "recovery-sweep":
        raise ConfigError(f"alpha must be numeric for {exp}")
    if alpha != "exact":
        alpha = _as_list(alpha, "alpha", float)
    spec.alpha = alpha
    spec.full_coverage = bool(data.get("full_coverage", False))
    spec.solver_method = data.get("solver_method", "auto")
    if spec.solver_method not in ("auto", "lift", "factored"):
        raise ConfigError("solver_method must be auto, lift or factored")
    spec.solver_max_iters = _positive_int(data.get("solver_max_iters", 20000), "solver_max_iters")
    spec.solver_tol = _as_list(data.get("solver_tol", 1e-8), "solver_tol", float)[0]
    spec.samples = _positive_int(data.get("samples", 16), "samples")
    spec.ascent_iters = _positive_int(data.get("ascent_iters", 30), "ascent_iters")
    if "gamma" in data:
        spec.gamma = _as_list(data["gamma"], "gamma", float)
    spec.count = _positive_int(data.get("count", 8), "count")
    spec.tol = _as_list(data.get("tol", 1e-6), "tol", float)[0]
    spec.out = out if out is not None else data.get("out", "out")

    if exp in ("recovery-sweep", "minimax", "theta-gamma") and spec.ensemble == "completion" \
            and not spec.n and not spec.full_coverage:
        raise ConfigError("completion experiments need n")
    if exp == "minimax" and spec.ensemble == "completion":
        raise ConfigError("minimax formulas apply to the sketching ensemble")
    if exp in ("minimax", "packing-verify") and any(s == 0 for s in spec.sigma):
        raise ConfigError(f"{exp} needs positive sigma values")
    if spec.full_coverage and spec.ensemble != "completion":
        raise ConfigError("full_coverage applies to completion only")
    return spec


def load_config(path, seed=None, out=None, experiment=None):
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"config {path} is not valid JSON: {err}") from err
    return parse_config(data, seed=seed, out=out, experiment=experiment)
