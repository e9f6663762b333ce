"""Target distributions and the log-domain ratio against the reference heat kernel.

A target is a density ``rho`` on R^d together with the time horizon ``T`` of
the bridge.  The central quantity everywhere downstream is

    log phi(y) = log rho(y) + |y|^2 / (2T) + (d/2) log(2 pi T),

the log-ratio of the target to a centred Gaussian of variance ``T``.  All
arithmetic stays in log space: ``phi`` itself overflows for moderately large
``|y|``, while ``log phi`` is tame.  Densities with compact support signal
"outside the support" with ``log rho = -inf`` rather than raising, because
Monte Carlo perturbations routinely land there.

Evaluators must be vectorized over leading axes: ``log_rho`` maps an
``(..., d)`` array to ``(...)``, ``grad_log_rho`` maps ``(..., d)`` to
``(..., d)``.  They must be pure functions (no internal state), so they can
be called concurrently from any number of workers.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

Array = np.ndarray

_SUPPORT_HINTS = ("full", "compact")


@dataclass(frozen=True, eq=False)
class TargetSpec:
    """A sampling target: log-density, optional score, and bridge horizon.

    Args:
        dim: Dimension ``d`` of the state space.
        horizon: Bridge horizon ``T > 0``.
        log_rho: Vectorized log-density, possibly unnormalized.  Must return
            finite values or ``-inf`` (never ``+inf``/NaN) on finite input.
        grad_log_rho: Optional vectorized gradient of ``log_rho``.  Must be
            finite everywhere: where the density vanishes its value never
            enters any estimate, but a NaN there would poison the weighted
            sums (the catalog targets return 0 outside their support).
        support_hint: ``"full"`` or ``"compact"``.
        name: Human-readable label used in provenance and CSV headers.
        normalized: Whether ``log_rho`` integrates to one.  The epsilon
            mixture requires a normalized base density.
        log_offset: Additive constant carried alongside ``log_rho``.  Kept
            out of the callable so that ratio computations drop it exactly;
            only :func:`log_phi` adds it back.
        a2_certified: True when ``log phi`` is known globally Lipschitz.
        lipschitz_log_phi: Certified Lipschitz constant of ``log phi`` when
            one is known (e.g. catalog mixtures), else None.
        mean / cov: Analytic moments when available (used by diagnostics).
        sampler: Exact sampler ``(rng, size) -> (size, d)`` when available.
        kernel_id / kernel_params: Dispatch tag and parameter block for the
            compiled integrator fast path; None for user-supplied targets.
    """

    dim: int
    horizon: float
    log_rho: Callable[[Array], Array]
    grad_log_rho: Optional[Callable[[Array], Array]] = None
    support_hint: str = "full"
    name: str = "custom"
    normalized: bool = True
    log_offset: float = 0.0
    a2_certified: bool = False
    lipschitz_log_phi: Optional[float] = None
    mean: Optional[Array] = None
    cov: Optional[Array] = None
    sampler: Optional[Callable[[np.random.Generator, int], Array]] = None
    kernel_id: Optional[str] = None
    kernel_params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")
        if not (self.horizon > 0.0 and math.isfinite(self.horizon)):
            raise ValueError(f"horizon must be a positive real, got {self.horizon}")
        if self.support_hint not in _SUPPORT_HINTS:
            raise ValueError(
                f"support_hint must be one of {_SUPPORT_HINTS}, got {self.support_hint!r}"
            )

    @property
    def is_effectively_normalized(self) -> bool:
        return self.normalized and self.log_offset == 0.0


@dataclass(frozen=True, eq=False)
class EpsilonTarget:
    """Mixture ``(1 - eps) rho + eps G_T`` with ``G_T`` the reference Gaussian.

    The mixture keeps ``phi_eps = (1 - eps) phi + eps`` bounded away from
    zero, which is what makes compactly supported targets integrable by the
    sampler.  At ``eps = 0`` it reduces exactly to the base target; at
    ``eps = 1`` it would be the reference Gaussian itself (excluded).
    """

    base: TargetSpec
    epsilon: float

    def __post_init__(self):
        if not (0.0 <= self.epsilon < 1.0):
            raise ValueError(f"epsilon must lie in [0, 1), got {self.epsilon}")
        if not self.base.is_effectively_normalized:
            raise ValueError(
                "epsilon mixture requires a normalized base density: "
                f"target {self.base.name!r} is flagged unnormalized"
            )

    @property
    def dim(self) -> int:
        return self.base.dim

    @property
    def horizon(self) -> float:
        return self.base.horizon


@dataclass(frozen=True)
class GaussianParams:
    """Isotropic Gaussian N(mean, variance * I)."""

    mean: Array
    variance: float

    def __post_init__(self):
        object.__setattr__(self, "mean", np.atleast_1d(np.asarray(self.mean, dtype=float)))
        if not (self.variance > 0.0):
            raise ValueError(f"variance must be positive, got {self.variance}")


@dataclass(frozen=True)
class TriangularKdeParams:
    """1D triangular-kernel density estimate: centers and bandwidth.

    The density is ``(1/(m h0)) sum_j (1 - |x - x_j|/h0)_+``; each kernel
    carries mass ``1/m`` and the support is the union of the intervals
    ``[x_j - h0, x_j + h0]``.
    """

    centers: Array
    bandwidth: float

    def __post_init__(self):
        centers = np.atleast_1d(np.asarray(self.centers, dtype=float))
        if centers.size < 1:
            raise ValueError("need at least one kernel center")
        object.__setattr__(self, "centers", centers)
        if not (self.bandwidth > 0.0):
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")


# ---------------------------------------------------------------------------
# log phi
# ---------------------------------------------------------------------------

def _check_points(target, y) -> Array:
    y = np.asarray(y, dtype=float)
    if y.ndim == 0 or y.shape[-1] != target.dim:
        raise ValueError(
            f"points have trailing dimension {y.shape[-1] if y.ndim else 0}, "
            f"target {target.name!r} has dim {target.dim}"
        )
    return y


def log_phi(target: TargetSpec, y) -> Array:
    """log of rho(y) / g_T(y) where g_T is the centred Gaussian heat kernel.

    Returns ``-inf`` where the density vanishes.  Unnormalized targets shift
    the result by their (unknown) log normalization constant plus any
    explicit ``log_offset``.
    """
    y = _check_points(target, y)
    t = target.horizon
    d = target.dim
    quad = 0.5 * np.sum(y * y, axis=-1) / t
    const = 0.5 * d * math.log(2.0 * math.pi * t) + target.log_offset
    return target.log_rho(y) + quad + const


def log_phi_epsilon(etarget: EpsilonTarget, y) -> Array:
    """log((1 - eps) phi(y) + eps), finite everywhere for eps > 0."""
    eps = etarget.epsilon
    if eps == 0.0:
        return log_phi(etarget.base, y)
    lp = log_phi(etarget.base, y)
    return np.logaddexp(math.log1p(-eps) + lp, math.log(eps))


def with_log_offset(target: TargetSpec, delta: float) -> TargetSpec:
    """Rescale the density by ``exp(delta)`` without touching the callable.

    The offset lives in metadata, so every ratio computed downstream (drift
    weights, score) is exactly unchanged; only :func:`log_phi` reflects it.
    The result is flagged unnormalized.
    """
    return dataclasses.replace(
        target,
        log_offset=target.log_offset + float(delta),
        normalized=False,
        name=f"{target.name}*e^{delta:g}",
    )


# ---------------------------------------------------------------------------
# catalog
# ---------------------------------------------------------------------------

def make_gaussian_target(params: GaussianParams, horizon: float) -> TargetSpec:
    """Normalized isotropic Gaussian with exact score and exact sampler.

    ``log phi`` for this target is the quadratic
    ``-|y-m|^2/(2 s2) + |y|^2/(2T) + const``; it is globally Lipschitz only
    in the degenerate case ``s2 == T`` (then ``log phi = m.y/T + const``).
    The metadata records that honestly: ``a2_certified`` is set only for
    ``s2 == T``, and ``phi_bounded_below`` (``s2 >= T``) marks targets whose
    ratio is bounded away from zero.
    """
    m = params.mean
    s2 = float(params.variance)
    d = m.size
    t = float(horizon)
    log_norm = -0.5 * d * math.log(2.0 * math.pi * s2)

    def log_rho(y, _m=m, _s2=s2, _c=log_norm):
        diff = y - _m
        return -0.5 * np.sum(diff * diff, axis=-1) / _s2 + _c

    def grad_log_rho(y, _m=m, _s2=s2):
        return -(y - _m) / _s2

    def sampler(rng, size, _m=m, _s2=s2, _d=d):
        return _m + math.sqrt(_s2) * rng.standard_normal((size, _d))

    certified = math.isclose(s2, t, rel_tol=1e-12)
    return TargetSpec(
        dim=d,
        horizon=t,
        log_rho=log_rho,
        grad_log_rho=grad_log_rho,
        support_hint="full",
        name=f"gaussian(m={np.array2string(m, separator=',')},s2={s2:g})",
        normalized=True,
        a2_certified=certified,
        lipschitz_log_phi=(float(np.linalg.norm(m)) / t) if certified else None,
        mean=m.copy(),
        cov=s2 * np.eye(d),
        sampler=sampler,
        kernel_id="gaussian",
        kernel_params={"mean": m.copy(), "variance": s2, "phi_bounded_below": s2 >= t},
    )


def make_gaussian_mixture_target(
    components: Sequence[tuple[float, Array]], horizon: float
) -> TargetSpec:
    """Mixture of Gaussians whose common variance equals the horizon.

    With every component variance pinned to ``T``, ``log phi`` is a
    log-sum-exp of affine functions of ``y`` and therefore globally
    Lipschitz with constant ``max_k |m_k| / T`` -- the catalog's certified
    well-behaved family.

    Args:
        components: Sequence of ``(weight, mean)`` pairs; weights positive,
            summing to one.
        horizon: Bridge horizon ``T`` (also the component variance).
    """
    if len(components) == 0:
        raise ValueError("mixture needs at least one component")
    weights = np.asarray([w for w, _ in components], dtype=float)
    means = np.stack([np.atleast_1d(np.asarray(m, dtype=float)) for _, m in components])
    if np.any(weights <= 0.0):
        raise ValueError("mixture weights must be positive")
    if not math.isclose(float(weights.sum()), 1.0, rel_tol=0, abs_tol=1e-12):
        raise ValueError(f"mixture weights must sum to 1, got {weights.sum()!r}")
    t = float(horizon)
    d = means.shape[1]
    log_w = np.log(weights)
    log_norm = -0.5 * d * math.log(2.0 * math.pi * t)

    def _log_comps(y):
        # (..., k): log w_k + log N(y; m_k, T I)
        diff = y[..., None, :] - means  # (..., k, d)
        return log_w + log_norm - 0.5 * np.sum(diff * diff, axis=-1) / t

    def log_rho(y):
        lc = _log_comps(y)
        mx = np.max(lc, axis=-1)
        return mx + np.log(np.sum(np.exp(lc - mx[..., None]), axis=-1))

    def grad_log_rho(y):
        lc = _log_comps(y)
        mx = np.max(lc, axis=-1, keepdims=True)
        w = np.exp(lc - mx)
        w /= np.sum(w, axis=-1, keepdims=True)
        # sum_k p_k * (-(y - m_k)/T)
        return -(y - np.sum(w[..., None] * means, axis=-2)) / t

    def sampler(rng, size):
        idx = rng.choice(weights.size, size=size, p=weights)
        return means[idx] + math.sqrt(t) * rng.standard_normal((size, d))

    mean = weights @ means
    cov = t * np.eye(d) + (means - mean).T @ (weights[:, None] * (means - mean))
    c0 = float(np.max(np.linalg.norm(means, axis=1))) / t
    return TargetSpec(
        dim=d,
        horizon=t,
        log_rho=log_rho,
        grad_log_rho=grad_log_rho,
        support_hint="full",
        name=f"gauss_mixture(k={weights.size})",
        normalized=True,
        a2_certified=True,
        lipschitz_log_phi=c0,
        mean=mean,
        cov=cov,
        sampler=sampler,
        kernel_id="gauss_mixture_vt",
        kernel_params={"weights": weights.copy(), "means": means.copy()},
    )


def make_triangular_kde_target(params: TriangularKdeParams, horizon: float) -> TargetSpec:
    """1D triangular-kernel density estimate with compact support.

    The score is defined piecewise; at kinks (kernel centers, support edges)
    the left derivative is returned so runs stay reproducible.  Outside the
    support ``log_rho`` is ``-inf`` and the score is reported as zero (its
    value there never matters: the weights vanish).
    """
    centers = params.centers
    h0 = float(params.bandwidth)
    m = centers.size
    t = float(horizon)
    lo = float(centers.min() - h0)
    hi = float(centers.max() + h0)

    def _hats(x):
        # (..., m) kernel values at scalar points x: (1 - |x - c|/h0)_+
        return np.maximum(0.0, 1.0 - np.abs(x[..., None] - centers) / h0)

    def log_rho(y):
        x = y[..., 0]
        dens = np.sum(_hats(x), axis=-1) / (m * h0)
        with np.errstate(divide="ignore"):
            return np.log(dens)

    def grad_log_rho(y):
        x = y[..., 0]
        s = x[..., None] - centers
        inside = (s > -h0) & (s <= h0)  # left-derivative convention at edges
        slope = np.where(s <= 0.0, 1.0, -1.0) / h0
        num = np.sum(np.where(inside, slope, 0.0), axis=-1)
        den = np.sum(_hats(x), axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            g = np.where(den > 0.0, num / den, 0.0)
        return g[..., None]

    def sampler(rng, size):
        # inverse CDF: pick a kernel, invert the triangular CDF on [-1, 1]
        j = rng.integers(0, m, size=size)
        v = rng.random(size)
        s = np.where(v < 0.5, np.sqrt(2.0 * v) - 1.0, 1.0 - np.sqrt(2.0 * (1.0 - v)))
        return (centers[j] + h0 * s)[:, None]

    mean = np.array([float(centers.mean())])
    var = float(np.mean((centers - mean[0]) ** 2) + h0 * h0 / 6.0)
    return TargetSpec(
        dim=1,
        horizon=t,
        log_rho=log_rho,
        grad_log_rho=grad_log_rho,
        support_hint="compact",
        name=f"triangular_kde(m={m},h0={h0:g})",
        normalized=True,
        a2_certified=False,
        mean=mean,
        cov=np.array([[var]]),
        sampler=sampler,
        kernel_id="triangular_kde",
        kernel_params={"centers": centers.copy(), "bandwidth": h0, "lo": lo, "hi": hi},
    )
