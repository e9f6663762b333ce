"""Euler-Maruyama integration of the bridge SDE over an ensemble of paths.

Each path starts at the origin and evolves by

    Y_{i+1} = Y_i + b(t_i, Y_i) h + sqrt(h) Z_{i+1},   t_i = i T / n,

with the drift estimated afresh at every (path, step) and the driving noise
``Z_{i+1}`` drawn independently of it.  The drift is only ever evaluated at
the interior times ``t_0 .. t_{n-1}``; under the ``analytic_limit`` terminal
policy the final step substitutes the closed-form limit of the estimator at
the horizon, which removes the variance blow-up of the score-free mode near
``t = T``.

All randomness is addressed by absolute (path, step, slot) counters derived
from the run's master seed, so ensembles are bit-identical for any worker
count and any scheduling order.  Catalog targets with a compiled kernel run
fused (see ``_kernels``); everything else takes the vectorized NumPy path in
fixed path blocks.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import _rng
from .drift import (
    DriftConfig,
    MC_MODES,
    drift_exact_gaussian,
    mc_batch,
    resolve_clamp,
    terminal_batch,
)
from .quadrature import oracle_drift_batch
from .targets import EpsilonTarget, GaussianParams, TargetSpec

Array = np.ndarray

# Paths are processed in fixed blocks; the partition is part of the stream
# layout only for scheduling, never for the noise itself.
PATH_BLOCK = 4096


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_i = i T / n on [0, T]."""

    n: int
    T: float

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"step count must be >= 1, got {self.n}")
        if not (self.T > 0.0 and math.isfinite(self.T)):
            raise ValueError(f"horizon must be a positive real, got {self.T}")

    @property
    def h(self) -> float:
        return self.T / self.n

    @property
    def times(self) -> Array:
        return np.linspace(0.0, self.T, self.n + 1)


@dataclass(frozen=True)
class RunConfig:
    grid: TimeGrid
    ensemble_size: int
    master_seed: int
    drift: DriftConfig = field(default_factory=DriftConfig)
    record_paths: bool = False

    def __post_init__(self):
        if self.ensemble_size < 1:
            raise ValueError(f"ensemble_size must be >= 1, got {self.ensemble_size}")


@dataclass(eq=False)
class PathFlags:
    """Per-path event counters."""

    degenerate: Array  # drift batches with every weight at zero (eps = 0)
    clamped: Array  # drift evaluations capped by the norm clamp

    @property
    def any_flagged(self) -> Array:
        return (self.degenerate > 0) | (self.clamped > 0)


@dataclass(eq=False)
class Ensemble:
    terminal: Array  # (K, d)
    flags: PathFlags
    provenance: dict
    paths: Optional[Array] = None  # (K, n+1, d) when recorded


class IncompatibleDriftError(ValueError):
    """Drift configuration cannot run against this target."""


def _resolve_target(
    target: Union[TargetSpec, EpsilonTarget], cfg: RunConfig
) -> Tuple[TargetSpec, float]:
    if isinstance(target, EpsilonTarget):
        eps = target.epsilon
        if cfg.drift.epsilon not in (0.0, eps):
            raise IncompatibleDriftError(
                f"conflicting epsilon: target carries {eps}, drift config has "
                f"{cfg.drift.epsilon}"
            )
        return target.base, eps
    return target, cfg.drift.epsilon


def _validate(base: TargetSpec, eps: float, cfg: RunConfig) -> None:
    drift = cfg.drift
    if not math.isclose(cfg.grid.T, base.horizon, rel_tol=1e-12):
        raise IncompatibleDriftError(
            f"grid horizon T={cfg.grid.T:g} differs from target horizon "
            f"{base.horizon:g}"
        )
    if eps > 0.0 and not base.is_effectively_normalized:
        raise IncompatibleDriftError("epsilon > 0 requires a normalized target")
    if drift.mode == "gradient_ratio" and base.grad_log_rho is None:
        raise IncompatibleDriftError("gradient_ratio drift requires grad_log_rho")
    if drift.mode == "exact_gaussian" and base.kernel_id != "gaussian":
        raise IncompatibleDriftError("exact_gaussian drift requires a catalog Gaussian target")
    if drift.mode == "oracle":
        if base.dim > 2:
            raise IncompatibleDriftError("oracle drift supports dim <= 2")
        if base.grad_log_rho is None:
            raise IncompatibleDriftError("oracle drift requires grad_log_rho")
    if (
        drift.mode in MC_MODES
        and drift.terminal_policy == "analytic_limit"
        and base.grad_log_rho is None
    ):
        raise IncompatibleDriftError(
            "analytic_limit terminal policy requires grad_log_rho; "
            "use terminal_policy='last_interior' for gradient-free targets"
        )


def _provenance(base: TargetSpec, eps: float, cfg: RunConfig, path: str) -> dict:
    from . import __version__

    return {
        "version": __version__,
        "target": base.name,
        "epsilon": eps,
        "n": cfg.grid.n,
        "T": cfg.grid.T,
        "ensemble_size": cfg.ensemble_size,
        "master_seed": cfg.master_seed,
        "drift": dataclasses.asdict(cfg.drift),
        "execution_path": path,
    }


def _auto_threads(threads: int) -> int:
    if threads < 0:
        raise ValueError(f"threads must be >= 0, got {threads}")
    return threads if threads > 0 else min(os.cpu_count() or 1, 8)


# ---------------------------------------------------------------------------
# compiled dispatch
# ---------------------------------------------------------------------------

def _try_fused(base, eps, cfg, clamp, threads):
    from . import _kernels

    if cfg.record_paths or base.dim != 1:
        return None
    drift = cfg.drift
    run_key = _rng.run_key_from_seed(cfg.master_seed)
    K = cfg.ensemble_size
    terminal = np.empty(K)
    degenerate = np.zeros(K, dtype=np.int64)
    clamped = np.zeros(K, dtype=np.int64)
    clamp_val = float(clamp) if clamp is not None else 0.0

    import numba as nb

    old = nb.get_num_threads()
    nb.set_num_threads(max(1, min(threads, old if old > 0 else 1, os.cpu_count() or 1)))
    try:
        if base.kernel_id == "triangular_kde" and drift.mode == "stein":
            params = base.kernel_params
            amax = max(params["lo"] ** 2, params["hi"] ** 2) / (2.0 * base.horizon)
            pack = _kernels.exp_poly_coefficients(amax)
            if pack is None:
                cexp, coef, use_poly = 0.0, np.zeros(1), False
            else:
                cexp, coef = pack
                use_poly = True
            _kernels.em_kde_stein(
                run_key,
                cfg.grid.n,
                base.horizon,
                drift.mc_batch,
                eps,
                params["centers"],
                params["bandwidth"],
                coef,
                cexp,
                use_poly,
                clamp_val,
                drift.terminal_policy == "analytic_limit",
                terminal,
                degenerate,
                clamped,
            )
        elif base.kernel_id == "gauss_mixture_vt" and drift.mode == "oracle":
            from .quadrature import gauss_hermite_rule

            rule = gauss_hermite_rule(drift.oracle_order)
            params = base.kernel_params
            _kernels.em_mixture_oracle(
                run_key,
                cfg.grid.n,
                base.horizon,
                params["weights"],
                params["means"][:, 0].copy(),
                rule.nodes,
                rule.log_weights,
                eps,
                clamp_val,
                terminal,
                clamped,
            )
        else:
            return None
    finally:
        nb.set_num_threads(old)

    return Ensemble(
        terminal=terminal[:, None],
        flags=PathFlags(degenerate=degenerate, clamped=clamped),
        provenance=_provenance(base, eps, cfg, "fused"),
    )


# ---------------------------------------------------------------------------
# generic vectorized path
# ---------------------------------------------------------------------------

def _run_block(base, eps, cfg, clamp, run_key, p0, p1, terminal, degenerate, clamped, paths):
    grid = cfg.grid
    drift = cfg.drift
    d = base.dim
    n = grid.n
    h = grid.h
    sqh = math.sqrt(h)
    size = p1 - p0

    pbase = _rng.path_base_np(run_key, np.arange(p0, p1, dtype=np.uint64))
    y = np.zeros((size, d))
    if paths is not None:
        paths[p0:p1, 0, :] = 0.0

    ecfg = dataclasses.replace(drift, epsilon=eps)
    gauss = None
    if drift.mode == "exact_gaussian":
        gauss = GaussianParams(
            mean=base.kernel_params["mean"], variance=base.kernel_params["variance"]
        )

    for i in range(n):
        t_i = i * h
        assert t_i < grid.T  # the scheme never evaluates the drift at T
        last = i == n - 1
        if drift.mode == "exact_gaussian":
            b = drift_exact_gaussian(gauss, grid.T, t_i, y)
        elif drift.mode == "oracle":
            b = oracle_drift_batch(base, t_i, y, drift.oracle_order, epsilon=eps)
        elif last and drift.terminal_policy == "analytic_limit":
            out = terminal_batch(base, eps, y)
            b = out["value"]
            degenerate[p0:p1] += out["degenerate"]
        else:
            counters = _rng.drift_noise_counters(pbase, i, d, drift.mc_batch)
            noise = _rng.normals_from_counters(counters)
            out = mc_batch(base, ecfg, t_i, y, noise, clamp=clamp)
            b = out["value"]
            degenerate[p0:p1] += out["degenerate"]
            clamped[p0:p1] += out["clamped"]
        b_is_capped = drift.mode in MC_MODES and not (
            last and drift.terminal_policy == "analytic_limit"
        )
        if clamp is not None and not b_is_capped:
            # mc_batch clamps internally; every other branch is capped here
            norms = np.linalg.norm(b, axis=1)
            over = norms > clamp
            if np.any(over):
                b = np.where(over[:, None], b * (clamp / norms)[:, None], b)
                clamped[p0:p1] += over

        z = _rng.normals_from_counters(_rng.driving_counters(pbase, i, d))
        y = y + b * h + sqh * z
        if paths is not None:
            paths[p0:p1, i + 1, :] = y

    terminal[p0:p1] = y


def _run_numpy(base, eps, cfg, clamp, threads):
    K = cfg.ensemble_size
    d = base.dim
    run_key = _rng.run_key_from_seed(cfg.master_seed)
    terminal = np.empty((K, d))
    degenerate = np.zeros(K, dtype=np.int64)
    clamped = np.zeros(K, dtype=np.int64)
    paths = np.empty((K, cfg.grid.n + 1, d)) if cfg.record_paths else None

    # cap the block so (block, mc_batch, d) noise stays modest
    block = PATH_BLOCK
    if cfg.drift.mode in MC_MODES:
        block = max(64, min(block, (1 << 23) // max(1, cfg.drift.mc_batch * d)))
    bounds = [(p, min(p + block, K)) for p in range(0, K, block)]

    def work(span):
        _run_block(
            base, eps, cfg, clamp, run_key, span[0], span[1], terminal, degenerate, clamped, paths
        )

    if threads <= 1 or len(bounds) == 1:
        for span in bounds:
            work(span)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, bounds))

    ens = Ensemble(
        terminal=terminal,
        flags=PathFlags(degenerate=degenerate, clamped=clamped),
        provenance=_provenance(base, eps, cfg, "numpy"),
    )
    ens.paths = paths
    return ens


def em_run(
    target: Union[TargetSpec, EpsilonTarget], cfg: RunConfig, threads: int = 0
) -> Ensemble:
    """Simulate the ensemble and return terminal samples.

    ``threads`` is a scheduling knob only (0 = auto); results are
    bit-identical for every value.
    """
    base, eps = _resolve_target(target, cfg)
    _validate(base, eps, cfg)
    clamp = resolve_clamp(dataclasses.replace(cfg.drift, epsilon=eps), base)
    nthreads = _auto_threads(threads)

    fused = _try_fused(base, eps, cfg, clamp, nthreads)
    if fused is not None:
        return fused
    return _run_numpy(base, eps, cfg, clamp, nthreads)


def cell_seed(master_seed: int, n: int, epsilon: float) -> int:
    """Deterministic per-cell seed for sweeps, derived from (seed, n, eps)."""
    eps_bits = int(np.float64(epsilon).view(np.uint64))
    return int(
        np.random.SeedSequence([master_seed, n, eps_bits]).generate_state(1, np.uint64)[0]
    )


def em_sweep(
    target: Union[TargetSpec, EpsilonTarget],
    base_cfg: RunConfig,
    n_values: Sequence[int],
    eps_values: Sequence[float],
    threads: int = 0,
    sink: Optional[Callable[[int, float, Ensemble], None]] = None,
) -> List[Tuple[int, float, Ensemble]]:
    """Run the (n, eps) cross product with independent per-cell seeds."""
    if len(n_values) == 0 or len(eps_values) == 0:
        raise ValueError("n_values and eps_values must be non-empty")
    base = target.base if isinstance(target, EpsilonTarget) else target
    results = []
    for n in n_values:
        for eps in eps_values:
            cfg = dataclasses.replace(
                base_cfg,
                grid=TimeGrid(n=int(n), T=base.horizon),
                master_seed=cell_seed(base_cfg.master_seed, int(n), float(eps)),
                drift=dataclasses.replace(base_cfg.drift, epsilon=float(eps)),
            )
            ens = em_run(base, cfg, threads=threads)
            if sink is not None:
                sink(int(n), float(eps), ens)
            results.append((int(n), float(eps), ens))
    return results


# ---------------------------------------------------------------------------
# terminal-sample serialization
# ---------------------------------------------------------------------------

def write_sample_csv(path, ensemble: Ensemble) -> None:
    """CSV: provenance comment, column names, one row per path."""
    from . import __version__

    prov = ensemble.provenance
    term = ensemble.terminal
    d = term.shape[1]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(
            f"# sf-sampler v{__version__} seed={prov['master_seed']} "
            f"target={prov['target']}\n"
        )
        fh.write(",".join(f"y{k + 1}" for k in range(d)) + "\n")
        for row in term:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def write_sample_bin(path, ensemble: Ensemble) -> None:
    """Binary: one JSON header line, then row-major little-endian float64."""
    prov = ensemble.provenance
    term = ensemble.terminal
    header = {
        "format": "sf-sampler-bin",
        "version": prov["version"],
        "dtype": "<f8",
        "shape": list(term.shape),
        "seed": prov["master_seed"],
        "target": prov["target"],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(np.ascontiguousarray(term, dtype="<f8").tobytes())


def read_sample_bin(path) -> Tuple[dict, Array]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        data = np.frombuffer(fh.read(), dtype="<f8").reshape(header["shape"])
    return header, data
