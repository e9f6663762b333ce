"""Monte Carlo estimators of the bridge drift b(t, y) = grad log h(t, y).

Here ``h(t, y) = E[phi(y + sqrt(T - t) Z)]`` with ``Z`` standard normal, so
the drift is a ratio of two Gaussian-smoothed integrals.  Both are estimated
from the same batch of ``M`` normal draws with self-normalized log-space
weights:

* ``gradient_ratio`` uses ``grad E[phi] = E[phi * grad log phi]`` and needs
  the score of the target (valid a.e. for piecewise-smooth densities).
* ``stein`` uses Gaussian integration by parts,
  ``grad E[phi(y + sqrt(s) Z)] = E[Z phi] / sqrt(s)``, and needs no gradient;
  its variance grows like ``1/(T - t)``, which is why the terminal step of
  the integrator switches to the analytic limit.

The regularized drift divides by ``(1 - eps) E[phi] + eps`` instead, keeping
the estimate bounded for compactly supported targets.

Normalization constants never enter: the weights are a softmax of the
batch's ``log phi`` values with the target's ``log_offset`` excluded by
construction, so rescaling the density leaves every estimate bit-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .targets import GaussianParams, TargetSpec, _check_points

Array = np.ndarray

MC_MODES = ("gradient_ratio", "stein")
ALL_MODES = ("gradient_ratio", "stein", "exact_gaussian", "oracle")
TERMINAL_POLICIES = ("analytic_limit", "last_interior")

# Safety clamp applied outside certified hypotheses (see resolve_clamp).
DEFAULT_CLAMP = 1.0e4


@dataclass(frozen=True)
class DriftConfig:
    """Estimator configuration.

    ``mode`` selects the estimator: the two Monte Carlo modes above, plus
    ``exact_gaussian`` (closed form, Gaussian targets) and ``oracle``
    (fixed-order Gauss-Hermite quadrature, dim <= 2) for separating
    discretization error from estimation error.

    ``clamp`` caps the drift norm: a positive float, None (off), or "auto"
    (off for eps > 0 and for certified-Lipschitz targets, else 1e4).
    """

    mode: str = "gradient_ratio"
    mc_batch: int = 256
    epsilon: float = 0.0
    terminal_policy: str = "analytic_limit"
    clamp: Union[float, str, None] = "auto"
    oracle_order: int = 64

    def __post_init__(self):
        if self.mode not in ALL_MODES:
            raise ValueError(f"unknown drift mode {self.mode!r}; expected one of {ALL_MODES}")
        if self.mc_batch < 1:
            raise ValueError(f"mc_batch must be >= 1, got {self.mc_batch}")
        if not (0.0 <= self.epsilon < 1.0):
            raise ValueError(f"epsilon must lie in [0, 1), got {self.epsilon}")
        if self.terminal_policy not in TERMINAL_POLICIES:
            raise ValueError(
                f"unknown terminal_policy {self.terminal_policy!r}; "
                f"expected one of {TERMINAL_POLICIES}"
            )
        if isinstance(self.clamp, str):
            if self.clamp != "auto":
                raise ValueError(f"clamp must be a positive float, None or 'auto', got {self.clamp!r}")
        elif self.clamp is not None and not (self.clamp > 0.0):
            raise ValueError(f"clamp must be positive when set, got {self.clamp}")
        if self.oracle_order < 2:
            raise ValueError(f"oracle_order must be >= 2, got {self.oracle_order}")


@dataclass(frozen=True, eq=False)
class DriftEstimate:
    """One drift evaluation plus estimator diagnostics.

    ``ess_fraction`` is ``(sum w)^2 / (M sum w^2)`` of the phi-weights, the
    usual effective-sample-size fraction of a self-normalized estimator.
    ``degenerate`` is set only when every weight vanished with eps = 0
    (the value is then zero).
    """

    value: Array
    log_denominator: float
    ess_fraction: float
    degenerate: bool


def resolve_clamp(cfg: DriftConfig, target: TargetSpec) -> Optional[float]:
    """Materialize the "auto" clamp policy for a given target."""
    if cfg.clamp == "auto":
        if cfg.epsilon > 0.0 or target.a2_certified or cfg.mode in ("exact_gaussian", "oracle"):
            return None
        return DEFAULT_CLAMP
    return cfg.clamp


def _log_phi_raw(target: TargetSpec, u: Array) -> Array:
    # log phi without the normalization offset; shared by all weight code so
    # that density rescaling cancels exactly.  The dimension constant stays:
    # the regularized rescaling needs the absolute magnitude of E[phi].
    t = target.horizon
    quad = 0.5 * np.sum(u * u, axis=-1) / t
    const = 0.5 * target.dim * math.log(2.0 * math.pi * t)
    return target.log_rho(u) + quad + const


def mc_batch(
    target: TargetSpec,
    cfg: DriftConfig,
    t: float,
    points: Array,
    noise: Array,
    clamp: Optional[float] = None,
) -> dict:
    """Vectorized drift estimate at ``points`` (B, d) with ``noise`` (B, M, d).

    Returns a dict of per-point arrays: value (B, d), log_denominator (B,),
    ess_fraction (B,), degenerate (B,), clamped (B,).  This is the engine
    behind both :func:`drift_mc` and the generic integrator path.
    """
    horizon = target.horizon
    s = horizon - t
    sq = math.sqrt(s)
    b_pts, m_batch, d = noise.shape
    u = points[:, None, :] + sq * noise  # (B, M, d)

    logw = _log_phi_raw(target, u)  # (B, M)
    lmax = np.max(logw, axis=1)
    finite = lmax > -np.inf
    with np.errstate(invalid="ignore"):
        w = np.where(finite[:, None], np.exp(logw - lmax[:, None]), 0.0)
    sw = np.sum(w, axis=1)

    if cfg.mode == "gradient_ratio":
        g = target.grad_log_rho(u) + u / horizon  # grad log phi at the nodes
        num = np.einsum("bm,bmd->bd", w, g)
    else:  # stein
        num = np.einsum("bm,bmd->bd", w, noise) / sq

    with np.errstate(invalid="ignore", divide="ignore"):
        value = np.where(finite[:, None], num / sw[:, None], 0.0)

    eps = cfg.epsilon
    with np.errstate(divide="ignore"):
        log_bbar = np.where(finite, lmax + np.log(sw) - math.log(m_batch), -np.inf)
    if eps > 0.0:
        log_num = math.log1p(-eps) + log_bbar
        log_den = np.logaddexp(log_num, math.log(eps))
        scale = np.exp(log_num - log_den)
        value = value * scale[:, None]
        degenerate = np.zeros(b_pts, dtype=bool)
    else:
        log_den = log_bbar
        degenerate = ~finite

    with np.errstate(invalid="ignore", divide="ignore"):
        sw2 = np.sum(w * w, axis=1)
        ess = np.where(finite, sw * sw / (m_batch * np.maximum(sw2, 1e-300)), 0.0)

    clamped = np.zeros(b_pts, dtype=bool)
    if clamp is not None:
        norms = np.linalg.norm(value, axis=1)
        clamped = norms > clamp
        if np.any(clamped):
            value = np.where(
                clamped[:, None], value * (clamp / np.maximum(norms, 1e-300))[:, None], value
            )

    return {
        "value": value,
        "log_denominator": log_den,
        "ess_fraction": ess,
        "degenerate": degenerate,
        "clamped": clamped,
    }


def drift_mc(
    target: TargetSpec, cfg: DriftConfig, t: float, y, noise
) -> DriftEstimate:
    """Monte Carlo drift estimate at one point from caller-supplied noise.

    Args:
        target: The target density.
        cfg: Estimator configuration; ``cfg.mode`` must be a Monte Carlo
            mode and ``cfg.mc_batch`` must match ``len(noise)``.
        t: Time in ``[0, T)``; the terminal time has its own operation.
        y: Point of evaluation, shape ``(d,)``.
        noise: ``M`` standard-normal vectors, shape ``(M, d)``.  The caller
            owns the randomness; this function is pure.
    """
    if cfg.mode not in MC_MODES:
        raise ValueError(
            f"drift_mc handles Monte Carlo modes {MC_MODES}, got {cfg.mode!r}"
        )
    horizon = target.horizon
    if not (0.0 <= t < horizon):
        raise ValueError(
            f"drift_mc requires 0 <= t < T={horizon:g}, got t={t!r} "
            "(use drift_terminal for the terminal time)"
        )
    y = _check_points(target, np.atleast_1d(y))
    noise = np.asarray(noise, dtype=float)
    if noise.ndim != 2 or noise.shape != (cfg.mc_batch, target.dim):
        raise ValueError(
            f"noise must have shape (mc_batch, dim) = ({cfg.mc_batch}, {target.dim}), "
            f"got {noise.shape}"
        )
    if cfg.mode == "gradient_ratio" and target.grad_log_rho is None:
        raise ValueError("gradient_ratio mode requires target.grad_log_rho")
    if cfg.epsilon > 0.0 and not target.is_effectively_normalized:
        raise ValueError("epsilon > 0 requires a normalized target")

    clamp = None if cfg.clamp == "auto" else cfg.clamp
    out = mc_batch(target, cfg, t, y[None, :], noise[None, :, :], clamp=clamp)
    return DriftEstimate(
        value=out["value"][0],
        log_denominator=float(out["log_denominator"][0]),
        ess_fraction=float(out["ess_fraction"][0]),
        degenerate=bool(out["degenerate"][0]),
    )


def terminal_batch(target: TargetSpec, epsilon: float, points: Array) -> dict:
    """Vectorized analytic terminal drift at ``points`` (B, d).

    At ``t = T`` the smoothing disappears and the drift is the score of phi:
    ``grad phi / phi`` for eps = 0, and
    ``(1 - eps) grad phi / ((1 - eps) phi + eps)`` for eps > 0, evaluated in
    log space.
    """
    if target.grad_log_rho is None:
        raise ValueError("the analytic terminal drift requires target.grad_log_rho")
    horizon = target.horizon
    lp = _log_phi_raw(target, points)  # offset-free; eps > 0 requires normalized
    finite = lp > -np.inf
    g = np.where(
        finite[:, None], target.grad_log_rho(points) + points / horizon, 0.0
    )
    if epsilon > 0.0:
        log_num = math.log1p(-epsilon) + lp
        with np.errstate(invalid="ignore"):
            log_den = np.logaddexp(log_num, math.log(epsilon))
            factor = np.where(finite, np.exp(log_num - log_den), 0.0)
        value = factor[:, None] * g
        degenerate = np.zeros(points.shape[0], dtype=bool)
    else:
        log_den = lp
        value = g
        degenerate = ~finite
    return {"value": value, "log_denominator": log_den, "degenerate": degenerate}


def drift_terminal(target: TargetSpec, cfg: DriftConfig, y) -> DriftEstimate:
    """Analytic terminal-time drift (the t -> T limit of the estimator)."""
    if cfg.terminal_policy != "analytic_limit":
        raise ValueError(
            "drift_terminal is only meaningful under terminal_policy='analytic_limit'"
        )
    if cfg.epsilon > 0.0 and not target.is_effectively_normalized:
        raise ValueError("epsilon > 0 requires a normalized target")
    y = _check_points(target, np.atleast_1d(y))
    out = terminal_batch(target, cfg.epsilon, y[None, :])
    return DriftEstimate(
        value=out["value"][0],
        log_denominator=float(out["log_denominator"][0]),
        ess_fraction=1.0,
        degenerate=bool(out["degenerate"][0]),
    )


def drift_exact_gaussian(params: GaussianParams, horizon: float, t: float, y) -> Array:
    """Closed-form drift for an isotropic Gaussian target.

    Completing the square in the smoothed ratio gives

        b(t, y) = (m - (1 - s2/T) y) / (s2 + (1 - s2/T) (T - t)),

    valid on all of ``[0, T]`` (the denominator stays positive).  At
    ``s2 = T`` this is the constant ``m / T``; at ``t = T`` it reduces to
    the score of phi.
    """
    T = float(horizon)
    if not (0.0 <= t <= T):
        raise ValueError(f"t must lie in [0, T={T:g}], got {t}")
    y = np.asarray(y, dtype=float)
    s2 = params.variance
    kappa = 1.0 - s2 / T
    return (params.mean - kappa * y) / (s2 + kappa * (T - t))


def drift_bound_epsilon(c1: float, epsilon: float) -> float:
    """Uniform bound on the regularized drift implied by the relative-
    Lipschitz constant ``c1``: ``c1 (1 - eps)/eps + 2 c1``."""
    if not (c1 > 0.0):
        raise ValueError(f"c1 must be positive, got {c1}")
    if not (0.0 < epsilon < 1.0):
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    return c1 * (1.0 - epsilon) / epsilon + 2.0 * c1


def mc_weight_variance_time_floor(variance: float, horizon: float) -> float:
    """Earliest time at which the estimator's weights have finite variance.

    For an isotropic Gaussian target, ``phi(u)`` grows like
    ``exp(u^2 (s2 - T) / (2 T s2))``.  When ``s2 > T`` the smoothing
    expectation exists at every ``t``, but ``E[phi^2]`` under the proposal
    ``N(y, T - t)`` diverges once ``T - t >= T s2 / (2 (s2 - T))``: the
    plain Monte Carlo estimate then leaves its CLT regime (slow, visibly
    biased at finite M, collapsing ``ess_fraction``).  Oracle-agreement
    checks restrict their grids to ``t`` above this floor; for ``s2 <= T``
    the floor is zero.
    """
    if variance <= horizon:
        return 0.0
    s_max = horizon * variance / (2.0 * (variance - horizon))
    return max(0.0, horizon - s_max)
