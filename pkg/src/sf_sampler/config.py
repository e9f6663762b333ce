"""Experiment configuration: strict parsing of TOML/JSON config files.

The schema is small and flat (a handful of named blocks); unknown sections
or keys are hard errors so typos never silently fall back to defaults.  The
same document structure round-trips through the provenance JSON written
next to every run, and the CLI accepts that JSON directly.
"""

from __future__ import annotations

import json
import math
import sys
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .drift import ALL_MODES, DriftConfig, TERMINAL_POLICIES
from .integrator import RunConfig, TimeGrid
from .targets import (
    EpsilonTarget,
    GaussianParams,
    TargetSpec,
    TriangularKdeParams,
    make_gaussian_mixture_target,
    make_gaussian_target,
    make_triangular_kde_target,
)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending entry when known."""

    def __init__(self, message: str, key: Optional[str] = None):
        super().__init__(message)
        self.key = key


_NUMBER = (int, float)

# section -> key -> (type check, description)
_SCHEMA: dict[str, dict[str, tuple]] = {
    "target": {
        "name": (str, "catalog target name"),
        "epsilon": (_NUMBER, "mixture regularization level in [0, 1)"),
        "mean": ((int, float, list), "gaussian mean (scalar or vector)"),
        "variance": (_NUMBER, "gaussian variance"),
        "dim": (int, "dimension when mean is scalar"),
        "weights": (list, "mixture weights"),
        "means": (list, "mixture component means"),
        "centers": (list, "kde kernel centers"),
        "bandwidth": (_NUMBER, "kde bandwidth"),
    },
    "grid": {
        "T": (_NUMBER, "horizon"),
        "n": (int, "step count"),
        "n_list": (list, "step counts for sweeps"),
        "eps_list": (list, "epsilon values for sweeps"),
    },
    "drift": {
        "mode": (str, f"one of {ALL_MODES}"),
        "mc_batch": (int, "Monte Carlo batch size M"),
        "terminal_policy": (str, f"one of {TERMINAL_POLICIES}"),
        "clamp": ((str, int, float), "'auto', 'off' or a positive number"),
        "oracle_order": (int, "Gauss-Hermite order for the oracle mode"),
    },
    "run": {
        "ensemble_size": (int, "number of independent paths K"),
        "master_seed": (int, "64-bit master seed"),
        "out_dir": (str, "output directory"),
        "formats": (list, "subset of ['csv', 'bin']"),
        "record_paths": (bool, "store full trajectories"),
    },
    "metrics": {
        "reference_size": (int, "reference sample size (0 disables metrics)"),
        "bins": (int, "histogram bins for the TV distance"),
        "sliced_directions": (int, "projections for sliced W1 (d > 2)"),
        "bootstrap": (int, "bootstrap replicates for mc_se"),
    },
    "oracle_check": {
        "t_points": (int, "time-grid points in [0, T)"),
        "y_points": (int, "space-grid points"),
        "y_lo": (_NUMBER, "space grid lower edge"),
        "y_hi": (_NUMBER, "space grid upper edge"),
        "t_list": (list, "explicit time points (may include T)"),
        "mc_batch": (int, "Monte Carlo batch size for the check"),
        "batches": (int, "independent batches per grid point"),
    },
    "probe": {
        "box_lo": (_NUMBER, "probe box lower edge"),
        "box_hi": (_NUMBER, "probe box upper edge"),
        "pairs": (int, "number of sampled pairs"),
        "seed": (int, "probe seed"),
    },
}

_REQUIRED = {
    "target": ("name",),
    "grid": ("T",),
    "run": ("ensemble_size", "master_seed"),
}

_TARGET_NAMES = ("gaussian", "gaussian_mixture", "triangular_kde")


@dataclass(eq=False)
class ExperimentConfig:
    raw: dict
    target: TargetSpec | EpsilonTarget = field(repr=False, default=None)
    run: RunConfig = None
    n_list: list = field(default_factory=list)
    eps_list: list = field(default_factory=list)
    out_dir: str = "out"
    formats: tuple = ("csv",)
    metrics: dict = field(default_factory=dict)
    oracle_check: dict = field(default_factory=dict)
    probe: dict = field(default_factory=dict)

    @property
    def base_target(self) -> TargetSpec:
        return self.target.base if isinstance(self.target, EpsilonTarget) else self.target


def parse_config_file(path: str) -> dict:
    text_path = str(path)
    if text_path.endswith(".json"):
        with open(text_path, "rb") as fh:
            doc = json.load(fh)
        # accept a provenance file: the config document is under "config"
        if isinstance(doc.get("config"), dict) and "target" in doc["config"]:
            doc = doc["config"]
        return doc
    if text_path.endswith(".toml"):
        with open(text_path, "rb") as fh:
            return tomllib.load(fh)
    raise ConfigError(f"config file must end in .toml or .json, got {text_path!r}")


def _check_schema(doc: dict) -> None:
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a table of sections")
    for section, content in doc.items():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section {section!r}", key=section)
        if not isinstance(content, dict):
            raise ConfigError(f"section {section!r} must be a table", key=section)
        allowed = _SCHEMA[section]
        for key, value in content.items():
            if key not in allowed:
                raise ConfigError(
                    f"unknown key {section}.{key!r}"
                    f" (known keys: {sorted(allowed)})",
                    key=key,
                )
            want, desc = allowed[key]
            want_tuple = want if isinstance(want, tuple) else (want,)
            if isinstance(value, bool) and bool not in want_tuple:
                raise ConfigError(
                    f"{section}.{key} must be {desc}, got boolean", key=key
                )
            if not isinstance(value, want):
                raise ConfigError(
                    f"{section}.{key} must be {desc}, got {type(value).__name__}",
                    key=key,
                )
    for section, keys in _REQUIRED.items():
        if section not in doc:
            raise ConfigError(f"missing required section [{section}]", key=section)
        for key in keys:
            if key not in doc[section]:
                raise ConfigError(f"missing required key {section}.{key}", key=key)


def _build_target(doc: dict) -> TargetSpec | EpsilonTarget:
    tsec = doc["target"]
    name = tsec["name"]
    horizon = float(doc["grid"]["T"])
    if name not in _TARGET_NAMES:
        raise ConfigError(
            f"unknown target name {name!r} (catalog: {_TARGET_NAMES})", key="name"
        )
    if name == "gaussian":
        if "variance" not in tsec:
            raise ConfigError("gaussian target requires target.variance", key="variance")
        mean = tsec.get("mean", 0.0)
        if isinstance(mean, _NUMBER) and "dim" in tsec:
            mean = [float(mean)] * int(tsec["dim"])
        base = make_gaussian_target(
            GaussianParams(mean=np.atleast_1d(np.asarray(mean, dtype=float)),
                           variance=float(tsec["variance"])),
            horizon,
        )
    elif name == "gaussian_mixture":
        if "weights" not in tsec or "means" not in tsec:
            raise ConfigError(
                "gaussian_mixture target requires target.weights and target.means",
                key="weights" if "weights" not in tsec else "means",
            )
        comps = list(zip([float(w) for w in tsec["weights"]], tsec["means"]))
        base = make_gaussian_mixture_target(comps, horizon)
    else:
        if "centers" not in tsec or "bandwidth" not in tsec:
            raise ConfigError(
                "triangular_kde target requires target.centers and target.bandwidth",
                key="centers" if "centers" not in tsec else "bandwidth",
            )
        base = make_triangular_kde_target(
            TriangularKdeParams(
                centers=np.asarray(tsec["centers"], dtype=float),
                bandwidth=float(tsec["bandwidth"]),
            ),
            horizon,
        )
    eps = float(tsec.get("epsilon", 0.0))
    if not (0.0 <= eps < 1.0):
        raise ConfigError(f"target.epsilon must lie in [0, 1), got {eps}", key="epsilon")
    return EpsilonTarget(base=base, epsilon=eps) if eps > 0.0 else base


def _build_drift(doc: dict, epsilon: float) -> DriftConfig:
    dsec = doc.get("drift", {})
    clamp = dsec.get("clamp", "auto")
    if clamp == "off":
        clamp = None
    elif isinstance(clamp, _NUMBER) and not isinstance(clamp, bool):
        clamp = float(clamp)
    elif clamp != "auto":
        raise ConfigError(
            f"drift.clamp must be 'auto', 'off' or a positive number, got {clamp!r}",
            key="clamp",
        )
    try:
        return DriftConfig(
            mode=dsec.get("mode", "gradient_ratio"),
            mc_batch=int(dsec.get("mc_batch", 256)),
            epsilon=epsilon,
            terminal_policy=dsec.get("terminal_policy", "analytic_limit"),
            clamp=clamp,
            oracle_order=int(dsec.get("oracle_order", 64)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc), key="mode") from exc


def load_config(path: str) -> ExperimentConfig:
    """Parse, validate and materialize a configuration file."""
    doc = parse_config_file(path)
    _check_schema(doc)
    target = _build_target(doc)
    eps = target.epsilon if isinstance(target, EpsilonTarget) else 0.0

    gsec = doc["grid"]
    if "n" not in gsec and "n_list" not in gsec:
        raise ConfigError("grid requires n or n_list", key="n")
    n_list = [int(v) for v in gsec.get("n_list", [])]
    if "n" in gsec:
        if int(gsec["n"]) < 1:
            raise ConfigError("grid.n must be >= 1", key="n")
        if not n_list:
            n_list = [int(gsec["n"])]
    if not n_list:
        raise ConfigError("grid.n_list must be non-empty", key="n_list")
    eps_list = [float(v) for v in gsec.get("eps_list", [])] or [eps]
    for e in eps_list:
        if not (0.0 <= e < 1.0):
            raise ConfigError(f"grid.eps_list entries must lie in [0, 1), got {e}",
                              key="eps_list")

    rsec = doc["run"]
    formats = tuple(rsec.get("formats", ["csv"]))
    for f in formats:
        if f not in ("csv", "bin"):
            raise ConfigError(f"run.formats entries must be 'csv' or 'bin', got {f!r}",
                              key="formats")

    drift = _build_drift(doc, eps)
    try:
        run = RunConfig(
            grid=TimeGrid(n=n_list[0], T=float(gsec["T"])),
            ensemble_size=int(rsec["ensemble_size"]),
            master_seed=int(rsec["master_seed"]),
            drift=drift,
            record_paths=bool(rsec.get("record_paths", False)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    msec = doc.get("metrics", {})
    metrics = {
        "reference_size": int(msec.get("reference_size", 0)),
        "bins": int(msec.get("bins", 50)),
        "sliced_directions": int(msec.get("sliced_directions", 32)),
        "bootstrap": int(msec.get("bootstrap", 200)),
    }
    osec = doc.get("oracle_check", {})
    oracle_check = {
        "t_points": int(osec.get("t_points", 10)),
        "y_points": int(osec.get("y_points", 10)),
        "y_lo": float(osec.get("y_lo", -4.0)),
        "y_hi": float(osec.get("y_hi", 4.0)),
        "t_list": [float(v) for v in osec.get("t_list", [])],
        "mc_batch": int(osec.get("mc_batch", 4096)),
        "batches": int(osec.get("batches", 10)),
    }
    psec = doc.get("probe", {})
    probe = {
        "box_lo": float(psec.get("box_lo", -5.0)),
        "box_hi": float(psec.get("box_hi", 5.0)),
        "pairs": int(psec.get("pairs", 4000)),
        "seed": int(psec.get("seed", 0)),
    }
    if not (probe["box_lo"] < probe["box_hi"]):
        raise ConfigError("probe box must satisfy box_lo < box_hi", key="box_lo")

    if not math.isclose(run.grid.T, target.horizon if isinstance(target, TargetSpec)
                        else target.base.horizon, rel_tol=1e-12):
        raise ConfigError("grid.T must match the target horizon", key="T")

    return ExperimentConfig(
        raw=doc,
        target=target,
        run=run,
        n_list=n_list,
        eps_list=eps_list,
        out_dir=rsec.get("out_dir", "out"),
        formats=formats,
        metrics=metrics,
        oracle_check=oracle_check,
        probe=probe,
    )


def find_key_line(path: str, key: Optional[str]) -> Optional[int]:
    """Best-effort line anchor for a config error: first line containing the
    offending key token."""
    if not key:
        return None
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if key in line:
                    return lineno
    except OSError:
        return None
    return None
