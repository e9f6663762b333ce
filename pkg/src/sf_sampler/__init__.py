"""Diffusion-bridge sampler with Euler-Maruyama discretization and
distribution-distance diagnostics."""

__version__ = "0.1.0"

from .drift import (
    DriftConfig,
    DriftEstimate,
    drift_bound_epsilon,
    drift_exact_gaussian,
    drift_mc,
    drift_terminal,
    resolve_clamp,
)
from .diagnostics import (
    ConditionProbeResult,
    MetricsReport,
    compute_metrics,
    fit_convergence,
    moment_errors,
    probe_a2,
    probe_a4,
    sliced_w1,
    trend_non_increasing,
    tv_histogram,
    w1_1d,
)
from .integrator import (
    Ensemble,
    RunConfig,
    TimeGrid,
    cell_seed,
    em_run,
    em_sweep,
    read_sample_bin,
    write_sample_bin,
    write_sample_csv,
)
from .quadrature import (
    QuadratureRule,
    gauss_hermite_rule,
    gh_expectation,
    quadrature_drift,
)
from .targets import (
    EpsilonTarget,
    GaussianParams,
    TargetSpec,
    TriangularKdeParams,
    log_phi,
    log_phi_epsilon,
    make_gaussian_mixture_target,
    make_gaussian_target,
    make_triangular_kde_target,
    with_log_offset,
)

__all__ = [
    "__version__",
    "ConditionProbeResult",
    "DriftConfig",
    "DriftEstimate",
    "Ensemble",
    "EpsilonTarget",
    "GaussianParams",
    "MetricsReport",
    "QuadratureRule",
    "RunConfig",
    "TargetSpec",
    "TimeGrid",
    "TriangularKdeParams",
    "cell_seed",
    "compute_metrics",
    "drift_bound_epsilon",
    "drift_exact_gaussian",
    "drift_mc",
    "drift_terminal",
    "em_run",
    "em_sweep",
    "fit_convergence",
    "gauss_hermite_rule",
    "gh_expectation",
    "log_phi",
    "log_phi_epsilon",
    "make_gaussian_mixture_target",
    "make_gaussian_target",
    "make_triangular_kde_target",
    "moment_errors",
    "probe_a2",
    "probe_a4",
    "quadrature_drift",
    "read_sample_bin",
    "resolve_clamp",
    "sliced_w1",
    "tv_histogram",
    "trend_non_increasing",
    "w1_1d",
    "with_log_offset",
    "write_sample_bin",
    "write_sample_csv",
]
