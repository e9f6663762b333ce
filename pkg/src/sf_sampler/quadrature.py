"""Gauss-Hermite oracle for the smoothed ratio h(t, y) and its drift.

After the substitution ``u = y + sqrt(T - t) z`` the smoothed ratio is a
plain standard-normal expectation, so probabilists' Gauss-Hermite quadrature
evaluates it with spectral accuracy for smooth targets.  This module is the
independent high-accuracy route against which the Monte Carlo drift and the
closed-form Gaussian drift are checked; it supports dim 1 and 2 (tensorized
nodes), which is all the oracle role needs.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .targets import TargetSpec, _check_points, log_phi

Array = np.ndarray


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """1D Gauss-Hermite rule normalized to the standard normal measure.

    ``log_weights`` carries the extreme-tail weights exactly even where the
    linear ``weights`` underflow to zero; all internal accumulation is a
    log-sum-exp over ``log_weights``.
    """

    nodes: Array
    weights: Array
    order: int
    log_weights: Array = None

    def __post_init__(self):
        if self.order < 2:
            raise ValueError(f"order must be >= 2, got {self.order}")
        if self.log_weights is None:
            with np.errstate(divide="ignore"):
                object.__setattr__(self, "log_weights", np.log(self.weights))


def _christoffel_log_weights(nodes: Array) -> Array:
    """Exact log Christoffel numbers 1 / sum_k p_k(x)^2 at the given nodes.

    The orthonormal-polynomial recurrence is run with per-node scale
    carrying, so weights far below the double underflow threshold come out
    with full relative precision.
    """
    order = nodes.size
    x = nodes
    p_prev = np.ones_like(x)  # p_0
    p_curr = x.copy()  # p_1
    log_scale = np.zeros_like(x)
    ssq = p_prev**2 + p_curr**2
    for k in range(1, order - 1):
        p_next = (x * p_curr - math.sqrt(k) * p_prev) / math.sqrt(k + 1)
        p_prev, p_curr = p_curr, p_next
        ssq += p_curr * p_curr
        mag = np.abs(p_curr)
        big = mag > 1e100
        if np.any(big):
            scale = np.where(big, mag, 1.0)
            p_prev = p_prev / scale
            p_curr = p_curr / scale
            ssq = ssq / (scale * scale)
            log_scale += np.log(scale)
    logw = -(2.0 * log_scale + np.log(ssq))
    # normalize to a probability measure in log space
    mx = logw.max()
    logw -= mx + math.log(np.sum(np.exp(logw - mx)))
    return logw


@functools.lru_cache(maxsize=32)
def _gh_nodes_weights(order: int):
    if order <= 256:
        # polynomial recurrence: machine-precision weights, but it
        # overflows internally somewhere past order 256
        import numpy.polynomial.hermite_e as hermite_e

        nodes, weights = hermite_e.hermegauss(order)
        weights = weights / weights.sum()
        with np.errstate(divide="ignore"):
            log_weights = np.log(weights)
    else:
        # Golub-Welsch nodes (stable at any order) plus Christoffel
        # log-weights: the eigenvector route loses the extreme tails to
        # underflow, which matters for integrands growing there
        j = np.zeros((order, order))
        off = np.sqrt(np.arange(1, order))
        j[np.arange(order - 1), np.arange(1, order)] = off
        j[np.arange(1, order), np.arange(order - 1)] = off
        nodes = np.linalg.eigvalsh(j)
        log_weights = _christoffel_log_weights(nodes)
        weights = np.exp(log_weights)
    for arr in (nodes, weights, log_weights):
        arr.setflags(write=False)
    return nodes, weights, log_weights


def gauss_hermite_rule(order: int) -> QuadratureRule:
    """Rule of given order; weights sum to one, exact for polynomials of
    degree up to ``2 * order - 1`` under N(0, 1)."""
    if order < 2:
        raise ValueError(f"order must be >= 2, got {order}")
    nodes, weights, log_weights = _gh_nodes_weights(int(order))
    return QuadratureRule(nodes=nodes, weights=weights, order=order, log_weights=log_weights)


class GhExpectation(NamedTuple):
    log_h: float
    grad_log_h: Array
    degenerate: bool


class QuadratureDrift(NamedTuple):
    value: Array
    converged: bool
    order_used: int
    log_h: float


def _tensor_nodes(rule: QuadratureRule, dim: int):
    lw = rule.log_weights
    if dim == 1:
        return rule.nodes[:, None], lw
    nx, ny = np.meshgrid(rule.nodes, rule.nodes, indexing="ij")
    nodes = np.stack([nx.ravel(), ny.ravel()], axis=1)
    logw = (lw[:, None] + lw[None, :]).ravel()
    return nodes, logw


def _kink_breakpoints(target: TargetSpec):
    """Sorted kink locations for compact 1D catalog targets, else None."""
    if target.dim != 1 or target.kernel_id != "triangular_kde":
        return None
    c = np.asarray(target.kernel_params["centers"], dtype=float)
    h0 = float(target.kernel_params["bandwidth"])
    return np.unique(np.concatenate([c - h0, c, c + h0]))


@functools.lru_cache(maxsize=32)
def _legendre(order: int):
    nodes, weights = np.polynomial.legendre.leggauss(order)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def _panel_nodes(breakpoints: Array, order: int):
    """Composite Gauss-Legendre nodes over the support panels.

    Between consecutive kinks the integrand is smooth, so per-panel
    Legendre quadrature restores spectral accuracy that tail-weighted
    Gauss-Hermite loses on kinked compact integrands.  Returns absolute
    nodes (P, 1) and the log of the du-weights.
    """
    x, w = _legendre(order)
    mids = 0.5 * (breakpoints[1:] + breakpoints[:-1])
    half = 0.5 * (breakpoints[1:] - breakpoints[:-1])
    u = (mids[:, None] + half[:, None] * x).ravel()
    logw = np.log(np.outer(half, w)).ravel()
    return u[:, None], logw


def _log_normal_kernel(u: Array, y: Array, s: float) -> Array:
    # log N(u; y, s I) summed over the trailing axis
    d = u.shape[-1]
    diff = u - y
    return -0.5 * np.sum(diff * diff, axis=-1) / s - 0.5 * d * math.log(2.0 * math.pi * s)


def gh_expectation(
    target: TargetSpec, t: float, y, rule: QuadratureRule
) -> GhExpectation:
    """Quadrature estimate of (log h, grad log h) at one point.

    ``log h`` is a log-sum-exp over nodes of ``log phi + log weight``; the
    gradient reuses the same weights on ``grad log phi`` (the gradient-ratio
    form), so it needs the target's score.  Compact 1D catalog targets are
    integrated with per-panel Legendre nodes between their kinks
    (``rule.order`` is then the per-panel order); everything else uses
    Gauss-Hermite in the noise variable.
    """
    if target.dim > 2:
        raise ValueError("gauss-hermite oracle supports dim 1 and 2 only")
    if target.grad_log_rho is None:
        raise ValueError("gh_expectation requires target.grad_log_rho")
    horizon = target.horizon
    if not (0.0 <= t < horizon):
        raise ValueError(f"requires 0 <= t < T={horizon:g}, got t={t!r}")
    y = _check_points(target, np.atleast_1d(y))
    s = horizon - t

    breakpoints = _kink_breakpoints(target)
    if breakpoints is not None:
        u, logw = _panel_nodes(breakpoints, rule.order)
        logw = logw + _log_normal_kernel(u, y, s)
    else:
        nodes, logw = _tensor_nodes(rule, target.dim)
        u = y + math.sqrt(s) * nodes  # (P, d)
    lp = log_phi(target, u)
    terms = logw + lp
    mx = float(np.max(terms))
    if mx == -np.inf:
        return GhExpectation(log_h=-np.inf, grad_log_h=np.zeros(target.dim), degenerate=True)
    w = np.exp(terms - mx)
    sw = float(np.sum(w))
    log_h = mx + math.log(sw)
    g = target.grad_log_rho(u) + u / horizon
    grad = (w @ g) / sw
    return GhExpectation(log_h=log_h, grad_log_h=grad, degenerate=False)


def quadrature_drift(
    target: TargetSpec,
    t: float,
    y,
    order: int = 64,
    epsilon: float = 0.0,
    tol: float = 1e-9,
    max_order: int = 1024,
) -> QuadratureDrift:
    """Drift at (t, y) with order escalation.

    Doubles the rule order until two successive gradients agree within
    ``tol`` (sup norm) or ``max_order`` is reached; non-convergence (kinked
    integrands at small ``T - t``) is reported through the flag rather than
    raised.  With ``epsilon > 0`` the exact regularized rescaling is applied
    using the quadrature value of ``h``.
    """
    if epsilon > 0.0 and not target.is_effectively_normalized:
        raise ValueError("epsilon > 0 requires a normalized target")
    prev = None
    res = None
    cur_order = order
    converged = False
    while True:
        res = gh_expectation(target, t, y, gauss_hermite_rule(cur_order))
        if prev is not None and not res.degenerate:
            if float(np.max(np.abs(res.grad_log_h - prev))) < tol:
                converged = True
                break
        prev = res.grad_log_h
        if cur_order >= max_order:
            break
        cur_order = min(2 * cur_order, max_order)

    value = res.grad_log_h
    if epsilon > 0.0:
        if res.log_h == -np.inf:
            value = np.zeros(target.dim)
        else:
            log_num = math.log1p(-epsilon) + res.log_h
            scale = math.exp(log_num - np.logaddexp(log_num, math.log(epsilon)))
            value = value * scale
    return QuadratureDrift(
        value=value, converged=converged, order_used=cur_order, log_h=res.log_h
    )


def oracle_drift_batch(
    target: TargetSpec, t: float, points: Array, order: int, epsilon: float = 0.0
) -> Array:
    """Fixed-order quadrature drift at many points (B, d) -> (B, d).

    The integrator's "oracle" mode calls this once per step; no escalation,
    the order is part of the run configuration.
    """
    if target.dim > 2:
        raise ValueError("gauss-hermite oracle supports dim 1 and 2 only")
    rule = gauss_hermite_rule(order)
    horizon = target.horizon
    breakpoints = _kink_breakpoints(target)
    if breakpoints is not None:
        u0, logw0 = _panel_nodes(breakpoints, order)
        u = np.broadcast_to(u0, (points.shape[0],) + u0.shape)
        logw = logw0 + _log_normal_kernel(u, points[:, None, :], horizon - t)
        lp = log_phi(target, u) + logw  # (B, P)
    else:
        nodes, logw = _tensor_nodes(rule, target.dim)
        u = points[:, None, :] + math.sqrt(horizon - t) * nodes  # (B, P, d)
        lp = log_phi(target, u) + logw  # (B, P)
    mx = np.max(lp, axis=1)
    finite = mx > -np.inf
    with np.errstate(invalid="ignore"):
        w = np.where(finite[:, None], np.exp(lp - mx[:, None]), 0.0)
    sw = np.sum(w, axis=1)
    g = target.grad_log_rho(u) + u / horizon
    with np.errstate(invalid="ignore", divide="ignore"):
        value = np.where(
            finite[:, None], np.einsum("bp,bpd->bd", w, g) / sw[:, None], 0.0
        )
    if epsilon > 0.0:
        with np.errstate(divide="ignore"):
            log_h = np.where(finite, mx + np.log(sw), -np.inf)
        log_num = math.log1p(-epsilon) + log_h
        scale = np.where(finite, np.exp(log_num - np.logaddexp(log_num, math.log(epsilon))), 0.0)
        value = value * scale[:, None]
    return value
