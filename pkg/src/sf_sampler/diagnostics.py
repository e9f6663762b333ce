"""Distribution distances, regularity probes, and convergence-trend fits.

The sampler's contract is distributional, so the diagnostics quantify how
far the terminal ensemble sits from a reference sample of the target:
1D Wasserstein-1 (exact on empirical distributions, sliced for d > 2),
histogram total variation (a lower bound of the true TV restricted to the
bin algebra), and moment errors against analytic moments.

Condition probes estimate the two regularity constants used by the theory
gates -- the Lipschitz constant of ``log phi`` and the relative-Lipschitz
ratio of ``phi`` -- as maxima over sampled pairs.  These are lower bounds by
construction; they detect violations, they never certify.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .targets import TargetSpec, log_phi

Array = np.ndarray

METRICS_CSV_COLUMNS = (
    "n",
    "epsilon",
    "K",
    "M",
    "w1",
    "mc_se",
    "tv_hist",
    "mean_err_max",
    "cov_err",
)


# ---------------------------------------------------------------------------
# distances
# ---------------------------------------------------------------------------

def w1_1d(sample_a, sample_b) -> float:
    """Exact Wasserstein-1 distance between two 1D empirical distributions.

    Equal sizes reduce to the mean absolute difference of the order
    statistics; unequal sizes integrate the CDF gap over the merged support,
    which is the same quantile-function integral.
    """
    a = np.asarray(sample_a, dtype=float).ravel()
    b = np.asarray(sample_b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("w1_1d requires non-empty samples")
    if a.size == b.size:
        return float(np.mean(np.abs(np.sort(a) - np.sort(b))))
    merged = np.concatenate([a, b])
    order = np.argsort(merged, kind="stable")
    xs = merged[order]
    from_a = order < a.size
    ca = np.cumsum(from_a) / a.size
    cb = np.cumsum(~from_a) / b.size
    return float(np.sum(np.abs(ca[:-1] - cb[:-1]) * np.diff(xs)))


def sliced_w1(sample_a, sample_b, directions: int = 32, seed: int = 0) -> float:
    """Mean 1D Wasserstein distance over fixed random projections (d > 1)."""
    a = np.atleast_2d(np.asarray(sample_a, dtype=float))
    b = np.atleast_2d(np.asarray(sample_b, dtype=float))
    d = a.shape[1]
    if d == 1:
        return w1_1d(a[:, 0], b[:, 0])
    rng = np.random.default_rng(np.random.SeedSequence([seed, d, directions]))
    dirs = rng.standard_normal((directions, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return float(np.mean([w1_1d(a @ u, b @ u) for u in dirs]))


def tv_histogram(sample_a, sample_b, bins=50) -> float:
    """Histogram total variation (1/2) sum |p_a - p_b| on a common binning.

    ``bins`` is a count or explicit edges (per axis for d = 2); the binning
    is built to cover both samples.  This is a lower bound of the true total
    variation distance restricted to the bin algebra.
    """
    a = np.atleast_2d(np.asarray(sample_a, dtype=float).T).T
    b = np.atleast_2d(np.asarray(sample_b, dtype=float).T).T
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if a.shape[0] < 10 or b.shape[0] < 10:
        raise ValueError("tv_histogram requires at least 10 samples per distribution")
    d = a.shape[1]
    if d > 2:
        raise ValueError("tv_histogram supports d <= 2 (product bins)")

    def _edges(col_a, col_b, spec):
        if np.ndim(spec) > 0:
            return np.asarray(spec, dtype=float)
        lo = min(col_a.min(), col_b.min())
        hi = max(col_a.max(), col_b.max())
        pad = 1e-9 * max(1.0, abs(lo), abs(hi))
        return np.linspace(lo - pad, hi + pad, int(spec) + 1)

    if d == 1:
        edges = _edges(a[:, 0], b[:, 0], bins)
        pa, _ = np.histogram(a[:, 0], bins=edges)
        pb, _ = np.histogram(b[:, 0], bins=edges)
    else:
        spec = bins if isinstance(bins, (tuple, list)) and len(bins) == 2 else (bins, bins)
        ex = _edges(a[:, 0], b[:, 0], spec[0])
        ey = _edges(a[:, 1], b[:, 1], spec[1])
        pa, _, _ = np.histogram2d(a[:, 0], a[:, 1], bins=(ex, ey))
        pb, _, _ = np.histogram2d(b[:, 0], b[:, 1], bins=(ex, ey))
    pa = pa / a.shape[0]
    pb = pb / b.shape[0]
    return float(0.5 * np.sum(np.abs(pa - pb)))


def moment_errors(sample, target: TargetSpec) -> Tuple[Array, float]:
    """Componentwise mean error and covariance Frobenius error vs analytic
    moments."""
    if target.mean is None or target.cov is None:
        raise ValueError(f"target {target.name!r} has no analytic moments")
    x = np.atleast_2d(np.asarray(sample, dtype=float))
    mean_err = np.abs(x.mean(axis=0) - target.mean)
    if x.shape[0] > 1:
        cov = np.cov(x.T).reshape(target.cov.shape)
    else:
        cov = np.zeros_like(target.cov)
    cov_err = float(np.linalg.norm(cov - target.cov))
    return mean_err, cov_err


def bootstrap_w1_se(
    sample, reference, n_boot: int = 200, seed: int = 0, max_reference: Optional[int] = None
) -> float:
    """Bootstrap standard error of ``w1_1d(sample, reference)``.

    The candidate sample is resampled with replacement; the reference is
    held fixed (its own fluctuation is second order when it is the larger
    sample) and may be deterministically subsampled to ``max_reference``
    points to keep the 200 replicates cheap -- that inflates the estimate
    slightly, i.e. errs on the conservative side.
    """
    a = np.asarray(sample, dtype=float).ravel()
    ref = np.asarray(reference, dtype=float).ravel()
    rng = np.random.default_rng(np.random.SeedSequence([seed, a.size, ref.size]))
    cap = max_reference if max_reference is not None else a.size
    if ref.size > cap:
        ref = ref[rng.choice(ref.size, size=cap, replace=False)]
    vals = np.empty(n_boot)
    for r in range(n_boot):
        idx = rng.integers(0, a.size, size=a.size)
        vals[r] = w1_1d(a[idx], ref)
    return float(vals.std(ddof=1))


# ---------------------------------------------------------------------------
# condition probes
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ConditionProbeResult:
    """Empirical lower bound for a regularity constant.

    Exactly one of the two estimates is set by each probe; ``sample_points``
    counts the pairs actually used (pairs hitting a vanishing density are
    excluded and counted separately).
    """

    lipschitz_logphi_est: Optional[float]
    a4_ratio_est: Optional[float]
    sample_points: int
    max_attained_at: Array
    excluded_pairs: int = 0


_PROBE_SCALES = (1e-3, 1e-1, 1.0)


def _probe_seed(rng) -> int:
    if isinstance(rng, (int, np.integer)):
        return int(rng)
    return int(np.random.default_rng(rng).integers(0, 2**63))


def _probe_pairs(target, region, pairs, seed):
    # counter-addressed randomness: pair i is a pure function of (seed, i),
    # so a larger `pairs` extends the same stream (prefix property)
    from . import _rng

    region = np.asarray(region, dtype=float)
    if region.ndim == 1:
        lo = np.full(target.dim, region[0])
        hi = np.full(target.dim, region[1])
    else:
        lo, hi = region[:, 0], region[:, 1]
    d = target.dim
    base = _rng.mix64_np(np.asarray([seed], dtype=np.uint64))[0]
    with np.errstate(over="ignore"):
        counters = (
            base
            + np.arange(pairs, dtype=np.uint64)[:, None] * _rng.PATH_STRIDE
            + np.arange(2 * d, dtype=np.uint64)
        )
        u = _rng._uniform01_np(_rng.mix64_np(counters[:, :d]))
        x = lo + u * (hi - lo)
        direction = _rng.normals_from_counters(counters[:, d:] + _rng.GOLDEN)
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    scales = np.array(_PROBE_SCALES)[np.arange(pairs) % len(_PROBE_SCALES)]
    y = x + scales[:, None] * direction
    return x, y


def probe_a2(target: TargetSpec, region, pairs: int, rng) -> ConditionProbeResult:
    """Max of |log phi(x) - log phi(y)| / |x - y| over sampled pairs.

    Pairs are drawn at separations 1e-3, 1e-1 and 1 inside the box; pairs
    where the density vanishes are excluded and counted.  The estimate is a
    lower bound for the true Lipschitz constant of ``log phi``.
    """
    if pairs < 1000:
        raise ValueError(f"probe needs at least 1000 pairs, got {pairs}")
    x, y = _probe_pairs(target, region, pairs, _probe_seed(rng))
    lx = log_phi(target, x)
    ly = log_phi(target, y)
    ok = np.isfinite(lx) & np.isfinite(ly)
    dist = np.linalg.norm(x - y, axis=1)
    with np.errstate(invalid="ignore"):
        ratio = np.where(ok, np.abs(lx - ly) / dist, -np.inf)
    best = int(np.argmax(ratio))
    return ConditionProbeResult(
        lipschitz_logphi_est=float(max(ratio[best], 0.0)),
        a4_ratio_est=None,
        sample_points=int(ok.sum()),
        max_attained_at=x[best].copy(),
        excluded_pairs=int((~ok).sum()),
    )


def probe_a4(target: TargetSpec, region, pairs: int, rng) -> ConditionProbeResult:
    """Max of |phi(x) - phi(y)| / ((1 + phi(x) + phi(y)) |x - y|), computed
    in log space so large phi never overflows.  Vanishing densities are fine
    here (phi = 0 is admissible); the estimate lower-bounds the relative-
    Lipschitz constant."""
    if pairs < 1000:
        raise ValueError(f"probe needs at least 1000 pairs, got {pairs}")
    x, y = _probe_pairs(target, region, pairs, _probe_seed(rng))
    la = log_phi(target, x)
    lb = log_phi(target, y)
    hi = np.maximum(la, lb)
    lo = np.minimum(la, lb)
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        # log |phi(x) - phi(y)| = hi + log1p(-exp(lo - hi))
        diff = lo - hi
        log_num = np.where(
            np.isfinite(hi),
            hi + np.where(diff < 0.0, np.log1p(-np.exp(np.minimum(diff, -1e-300))), -np.inf),
            -np.inf,
        )
        # log (1 + phi(x) + phi(y))
        m0 = np.maximum(hi, 0.0)
        log_den = m0 + np.log(
            np.exp(-m0)
            + np.where(np.isfinite(la), np.exp(la - m0), 0.0)
            + np.where(np.isfinite(lb), np.exp(lb - m0), 0.0)
        )
        ratio = np.exp(log_num - log_den) / np.linalg.norm(x - y, axis=1)
    ratio = np.where(np.isfinite(ratio), ratio, 0.0)
    best = int(np.argmax(ratio))
    return ConditionProbeResult(
        lipschitz_logphi_est=None,
        a4_ratio_est=float(ratio[best]),
        sample_points=int(pairs),
        max_attained_at=x[best].copy(),
    )


# ---------------------------------------------------------------------------
# trend fitting
# ---------------------------------------------------------------------------

def fit_convergence(series: Sequence) -> Tuple[float, float, Tuple[float, float]]:
    """Ordinary least squares of log(metric) on log(x).

    Accepts (x, metric) or (x, metric, se) tuples; the se entries are
    carried by callers for gating, not used in the fit.  Returns
    (slope, intercept, slope 95% CI from the residual variance).
    """
    if len(series) < 3:
        raise ValueError("fit_convergence needs at least 3 points")
    xs = np.array([row[0] for row in series], dtype=float)
    ys = np.array([row[1] for row in series], dtype=float)
    if np.any(xs <= 0.0) or np.any(ys <= 0.0):
        raise ValueError("fit_convergence requires positive x and metric values")
    lx = np.log(xs)
    ly = np.log(ys)
    n = lx.size
    mx = lx.mean()
    sxx = np.sum((lx - mx) ** 2)
    slope = float(np.sum((lx - mx) * (ly - ly.mean())) / sxx)
    intercept = float(ly.mean() - slope * mx)
    resid = ly - (intercept + slope * lx)
    if n > 2:
        s2 = float(np.sum(resid**2) / (n - 2))
        se = math.sqrt(s2 / sxx)
    else:
        se = 0.0
    return slope, intercept, (slope - 1.96 * se, slope + 1.96 * se)


def trend_non_increasing(values, ses, factor: float = 2.0) -> bool:
    """True when consecutive values never increase by more than ``factor``
    combined standard errors."""
    values = np.asarray(values, dtype=float)
    ses = np.asarray(ses, dtype=float)
    for i in range(values.size - 1):
        slack = factor * math.hypot(ses[i], ses[i + 1])
        if values[i + 1] > values[i] + slack:
            return False
    return True


# ---------------------------------------------------------------------------
# metrics report
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class MetricsReport:
    """Distances of one terminal ensemble to its reference sample."""

    w1: float
    tv_hist: float
    mean_err: Array
    cov_err: float
    mc_se: float
    n: int
    epsilon: float
    K: int
    M: int

    def to_csv_row(self) -> str:
        vals = {
            "n": self.n,
            "epsilon": repr(float(self.epsilon)),
            "K": self.K,
            "M": self.M,
            "w1": repr(float(self.w1)),
            "mc_se": repr(float(self.mc_se)),
            "tv_hist": repr(float(self.tv_hist)),
            "mean_err_max": repr(float(np.max(self.mean_err))),
            "cov_err": repr(float(self.cov_err)),
        }
        return ",".join(str(vals[c]) for c in METRICS_CSV_COLUMNS)

    @staticmethod
    def csv_header() -> str:
        return ",".join(METRICS_CSV_COLUMNS)

    def to_json(self) -> str:
        d = dataclasses.asdict(self)
        d["mean_err"] = [float(v) for v in np.atleast_1d(self.mean_err)]
        return json.dumps(d, sort_keys=True)


def compute_metrics(
    sample,
    reference,
    target: Optional[TargetSpec] = None,
    bins=50,
    n_boot: int = 200,
    seed: int = 0,
    sliced_directions: int = 32,
    n: int = 0,
    epsilon: float = 0.0,
    M: int = 0,
) -> MetricsReport:
    """Assemble a MetricsReport for a terminal sample against a reference.

    For d > 2 the Wasserstein distance is sliced over fixed directions and
    the histogram TV is the maximum over coordinate marginals (both remain
    valid lower-bound witnesses).
    """
    x = np.atleast_2d(np.asarray(sample, dtype=float))
    ref = np.atleast_2d(np.asarray(reference, dtype=float))
    d = x.shape[1]
    if d == 1:
        w1 = w1_1d(x[:, 0], ref[:, 0])
        se = bootstrap_w1_se(x[:, 0], ref[:, 0], n_boot=n_boot, seed=seed)
        tv = tv_histogram(x, ref, bins=bins)
    elif d == 2:
        w1 = sliced_w1(x, ref, directions=sliced_directions, seed=seed)
        se = bootstrap_w1_se(x @ np.ones(2) / math.sqrt(2), ref @ np.ones(2) / math.sqrt(2),
                             n_boot=n_boot, seed=seed)
        tv = tv_histogram(x, ref, bins=bins)
    else:
        w1 = sliced_w1(x, ref, directions=sliced_directions, seed=seed)
        se = bootstrap_w1_se(x[:, 0], ref[:, 0], n_boot=n_boot, seed=seed)
        tv = max(
            tv_histogram(x[:, j], ref[:, j], bins=bins) for j in range(d)
        )
    if target is not None and target.mean is not None and target.cov is not None:
        mean_err, cov_err = moment_errors(x, target)
    else:
        mean_err, cov_err = np.full(d, np.nan), float("nan")
    return MetricsReport(
        w1=float(w1),
        tv_hist=float(tv),
        mean_err=mean_err,
        cov_err=cov_err,
        mc_se=float(se),
        n=int(n),
        epsilon=float(epsilon),
        K=int(x.shape[0]),
        M=int(M),
    )
