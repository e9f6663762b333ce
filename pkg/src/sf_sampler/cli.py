"""Batch command-line front-end.

Subcommands::

    sf-sampler sample       --config cfg.toml [--out DIR] [--threads K] [--format csv|bin|both]
    sf-sampler sweep        --config cfg.toml [...]
    sf-sampler oracle-check --config cfg.toml [...]
    sf-sampler probe        --config cfg.toml [...]

Exit codes: 0 success, 2 invalid configuration or usage, 3 runtime
degeneracy (more than 1% of paths flagged; outputs are still written).
All randomness flows from the config's master seed; ``--threads`` only
changes scheduling, never results.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
import traceback
import warnings

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, find_key_line, load_config
from .diagnostics import MetricsReport, compute_metrics, probe_a2, probe_a4
from .drift import drift_exact_gaussian, drift_mc, drift_terminal
from .integrator import (
    IncompatibleDriftError,
    em_run,
    em_sweep,
    write_sample_bin,
    write_sample_csv,
)
from .quadrature import quadrature_drift
from .targets import GaussianParams

# environment noise, not actionable for batch users
warnings.filterwarnings("ignore", message=".*TBB.*")

_REFERENCE_SALT = 0x5F5E5F


class DegenerateRunError(RuntimeError):
    pass


def _reference_sample(cfg: ExperimentConfig, size: int) -> np.ndarray:
    base = cfg.base_target
    if base.sampler is None:
        raise ConfigError(
            f"target {base.name!r} has no exact sampler; set metrics.reference_size = 0"
        )
    rng = np.random.default_rng(
        np.random.SeedSequence([cfg.run.master_seed, _REFERENCE_SALT])
    )
    return base.sampler(rng, size)


def _write_provenance(cfg: ExperimentConfig, out_dir: str, extra: dict) -> None:
    doc = {
        "version": __version__,
        "seed": cfg.run.master_seed,
        "target": cfg.base_target.name,
        "config": cfg.raw,
        **extra,
    }
    with open(os.path.join(out_dir, "provenance.json"), "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _degeneracy_fraction(ens) -> float:
    return float(np.mean(ens.flags.any_flagged))


def cmd_sample(cfg: ExperimentConfig, out_dir: str, threads: int, formats) -> int:
    ens = em_run(cfg.target, cfg.run, threads=threads)
    os.makedirs(out_dir, exist_ok=True)
    if "csv" in formats:
        write_sample_csv(os.path.join(out_dir, "sample.csv"), ens)
    if "bin" in formats:
        write_sample_bin(os.path.join(out_dir, "sample.bin"), ens)

    report = None
    if cfg.metrics["reference_size"] > 0:
        ref = _reference_sample(cfg, cfg.metrics["reference_size"])
        report = compute_metrics(
            ens.terminal,
            ref,
            target=cfg.base_target,
            bins=cfg.metrics["bins"],
            n_boot=cfg.metrics["bootstrap"],
            seed=cfg.run.master_seed,
            sliced_directions=cfg.metrics["sliced_directions"],
            n=cfg.run.grid.n,
            epsilon=cfg.run.drift.epsilon,
            M=cfg.run.drift.mc_batch,
        )
        with open(os.path.join(out_dir, "metrics.csv"), "w", encoding="utf-8") as fh:
            fh.write(MetricsReport.csv_header() + "\n" + report.to_csv_row() + "\n")
        with open(os.path.join(out_dir, "metrics.json"), "w", encoding="utf-8") as fh:
            fh.write(report.to_json() + "\n")

    _write_provenance(cfg, out_dir, {"command": "sample", "formats": list(formats)})
    frac = _degeneracy_fraction(ens)
    if frac > 0.01:
        raise DegenerateRunError(
            f"{100.0 * frac:.1f}% of paths hit degenerate or clamped drift "
            "evaluations; outputs were written"
        )
    print(f"wrote {cfg.run.ensemble_size} samples to {out_dir}")
    return 0


def cmd_sweep(cfg: ExperimentConfig, out_dir: str, threads: int, formats) -> int:
    os.makedirs(out_dir, exist_ok=True)
    ref = None
    if cfg.metrics["reference_size"] > 0:
        ref = _reference_sample(cfg, cfg.metrics["reference_size"])

    rows = []
    worst = 0.0
    for n, eps, ens in em_sweep(
        cfg.base_target, cfg.run, cfg.n_list, cfg.eps_list, threads=threads
    ):
        worst = max(worst, _degeneracy_fraction(ens))
        if ref is not None:
            report = compute_metrics(
                ens.terminal,
                ref,
                target=cfg.base_target,
                bins=cfg.metrics["bins"],
                n_boot=cfg.metrics["bootstrap"],
                seed=cfg.run.master_seed,
                sliced_directions=cfg.metrics["sliced_directions"],
                n=n,
                epsilon=eps,
                M=cfg.run.drift.mc_batch,
            )
            rows.append(report.to_csv_row())
        if "csv" in formats or "bin" in formats:
            cell_dir = os.path.join(out_dir, f"cell_n{n}_eps{eps:g}")
            os.makedirs(cell_dir, exist_ok=True)
            if "csv" in formats:
                write_sample_csv(os.path.join(cell_dir, "sample.csv"), ens)
            if "bin" in formats:
                write_sample_bin(os.path.join(cell_dir, "sample.bin"), ens)

    if rows:
        with open(os.path.join(out_dir, "sweep_metrics.csv"), "w", encoding="utf-8") as fh:
            fh.write(MetricsReport.csv_header() + "\n")
            fh.write("\n".join(rows) + "\n")
    _write_provenance(cfg, out_dir, {"command": "sweep"})
    if worst > 0.01:
        raise DegenerateRunError(
            f"worst cell had {100.0 * worst:.1f}% flagged paths; outputs were written"
        )
    print(f"swept {len(cfg.n_list) * len(cfg.eps_list)} cells into {out_dir}")
    return 0


def cmd_oracle_check(cfg: ExperimentConfig, out_dir: str, threads: int, formats) -> int:
    base = cfg.base_target
    if base.dim != 1:
        raise ConfigError("oracle-check runs on 1D targets")
    drift_cfg = cfg.run.drift
    oc = cfg.oracle_check
    horizon = base.horizon
    eps = drift_cfg.epsilon

    t_values = oc["t_list"] or list(
        np.linspace(0.0, horizon, oc["t_points"], endpoint=False)
    )
    for t in t_values:
        if not (0.0 <= t <= horizon):
            raise ConfigError(f"oracle_check time {t} outside [0, T]", key="t_list")
        if t == horizon and drift_cfg.mode != "gradient_ratio":
            raise ConfigError(
                "the terminal time requires gradient_ratio mode "
                "(the score-free estimator has no t = T limit)",
                key="t_list",
            )
    y_values = np.linspace(oc["y_lo"], oc["y_hi"], oc["y_points"])
    mcfg = dataclasses.replace(drift_cfg, mc_batch=oc["mc_batch"])
    gparams = None
    if base.kernel_id == "gaussian":
        gparams = GaussianParams(
            mean=base.kernel_params["mean"], variance=base.kernel_params["variance"]
        )

    os.makedirs(out_dir, exist_ok=True)
    lines = ["t,y,oracle,oracle_converged,exact,mc_mean,mc_sd,abs_err,passed"]
    all_pass = True
    sqrt_m = math.sqrt(oc["mc_batch"])
    for t in t_values:
        for y in y_values:
            point = np.array([y])
            if t == horizon:
                est_vals = np.array(
                    [drift_terminal(base, mcfg, point).value[0]] * oc["batches"]
                )
                oracle = quadrature_drift(
                    base, horizon * (1.0 - 1e-9), point, epsilon=eps
                )
            else:
                oracle = quadrature_drift(base, t, point, epsilon=eps)
                est_vals = np.empty(oc["batches"])
                for r in range(oc["batches"]):
                    ss = np.random.SeedSequence(
                        [cfg.run.master_seed, int(1e6 * t), int(1e6 * (y + 1e6)), r]
                    )
                    noise = np.random.default_rng(ss).standard_normal((oc["mc_batch"], 1))
                    est_vals[r] = drift_mc(base, mcfg, t, point, noise).value[0]
            exact = (
                drift_exact_gaussian(gparams, horizon, t, point)[0]
                if gparams is not None and eps == 0.0
                else float("nan")
            )
            mean = float(est_vals.mean())
            sd = float(est_vals.std(ddof=1)) * sqrt_m  # per-sample sd
            err = abs(mean - oracle.value[0])
            gate = 5.0 * sd / sqrt_m
            if not oracle.converged:
                gate += 1e-4 * (1.0 + abs(oracle.value[0]))  # kink tolerance
            if t == horizon:
                # analytic terminal value vs quadrature at T - 1e-9
                gate += 1e-6 * (1.0 + abs(oracle.value[0]))
            passed = bool(err <= gate + 1e-300)
            all_pass &= passed
            lines.append(
                f"{float(t)!r},{float(y)!r},{float(oracle.value[0])!r},"
                f"{int(oracle.converged)},{float(exact)!r},{mean!r},{sd!r},"
                f"{float(err)!r},{int(passed)}"
            )
    with open(os.path.join(out_dir, "oracle_check.csv"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    _write_provenance(cfg, out_dir, {"command": "oracle-check", "all_pass": all_pass})
    if not all_pass:
        raise DegenerateRunError("oracle-check gate failed at one or more grid points")
    print(f"oracle-check passed on {len(t_values)}x{len(y_values)} grid")
    return 0


def cmd_probe(cfg: ExperimentConfig, out_dir: str, threads: int, formats) -> int:
    base = cfg.base_target
    p = cfg.probe
    region = (p["box_lo"], p["box_hi"])
    res2 = probe_a2(base, region, p["pairs"], p["seed"])
    res4 = probe_a4(base, region, p["pairs"], p["seed"] + 1)
    doc = {
        "target": base.name,
        "box": [p["box_lo"], p["box_hi"]],
        "pairs": p["pairs"],
        "lipschitz_logphi_est": res2.lipschitz_logphi_est,
        "lipschitz_max_at": [float(v) for v in res2.max_attained_at],
        "excluded_pairs": res2.excluded_pairs,
        "a4_ratio_est": res4.a4_ratio_est,
        "a4_max_at": [float(v) for v in res4.max_attained_at],
        "certified_lipschitz_logphi": base.lipschitz_log_phi,
        "a2_certified": base.a2_certified,
    }
    print(json.dumps(doc, indent=2, sort_keys=True))
    return 0


_COMMANDS = {
    "sample": cmd_sample,
    "sweep": cmd_sweep,
    "oracle-check": cmd_oracle_check,
    "probe": cmd_probe,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sf-sampler",
        description="Diffusion-bridge sampler: simulate, sweep, and check.",
    )
    parser.add_argument("--version", action="version", version=f"sf-sampler {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="TOML or JSON config file")
        sp.add_argument("--out", default=None, help="output directory (overrides config)")
        sp.add_argument(
            "--threads",
            type=int,
            default=0,
            help="worker threads, 0 = auto; never changes results",
        )
        sp.add_argument("--format", choices=["csv", "bin", "both"], default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        out_dir = args.out if args.out is not None else cfg.out_dir
        if args.format is None:
            formats = cfg.formats
        elif args.format == "both":
            formats = ("csv", "bin")
        else:
            formats = (args.format,)
        return _COMMANDS[args.command](cfg, out_dir, args.threads, formats)
    except ConfigError as exc:
        line = find_key_line(args.config, exc.key)
        anchor = f"{args.config}:{line}: " if line else f"{args.config}: "
        print(f"{anchor}{exc}", file=sys.stderr)
        return 2
    except (IncompatibleDriftError, FileNotFoundError) as exc:
        print(f"{args.config}: {exc}", file=sys.stderr)
        return 2
    except DegenerateRunError as exc:
        print(f"runtime degeneracy: {exc}", file=sys.stderr)
        return 3
    except Exception:  # contract: exit codes are exactly {0, 2, 3}
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
