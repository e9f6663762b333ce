"""Counter-based random number streams shared by the compiled and vectorized paths.

Every normal variate consumed by the integrator is a pure function of
``(run_key, path_index, step_index, slot)``, so results never depend on how
paths are scheduled across workers.  The generator is SplitMix64 applied to an
affine counter, feeding a 256-layer ziggurat for the standard normal.

Two implementations of the same stream live here: scalar ``@njit`` functions
used inside the compiled integrator kernels, and a vectorized NumPy mirror
used by the generic integrator path and by tests.  They are bit-identical;
``tests/test_rng.py`` enforces this.
"""

from __future__ import annotations

import math

import numba as nb
import numpy as np

U64 = np.uint64

# SplitMix64 increment and finalizer constants.
GOLDEN = U64(0x9E3779B97F4A7C15)
MIX_A = U64(0xBF58476D1CE4E5B9)
MIX_B = U64(0x94D049BB133111EB)
SUBSTREAM_XOR = U64(0xD1B54A32D192ED03)

# Stream layout: one counter slot block per (path, step).
# slot 0 is reserved, slot 1..d drive the Euler step, slots 1+d.. feed the
# drift estimator.  Steps are offset by MIX_A (odd, so injective mod 2^64).
PATH_STRIDE = GOLDEN
STEP_STRIDE = MIX_A

_TWO52_INV = 1.0 / 9007199254740992.0  # 2^-52

ZIGGURAT_R = 3.6541528853610088


def _build_ziggurat_tables():
    # 256 equal-area layers for f(x) = exp(-x^2/2), x >= 0.  Layer 0 is the
    # base strip (rectangle [0,R] plus the tail); layers 1..255 stack above.
    from math import erfc, exp, log, sqrt, pi

    r = ZIGGURAT_R
    v = r * exp(-0.5 * r * r) + sqrt(pi / 2.0) * erfc(r / sqrt(2.0))
    x = np.zeros(257)
    x[1] = r
    for i in range(1, 256):
        val = exp(-0.5 * x[i] * x[i]) + v / x[i]
        x[i + 1] = sqrt(-2.0 * log(min(val, 1.0)))
    x[256] = 0.0
    f = np.exp(-0.5 * x[1:257] ** 2)  # f[i-1] = exp(-x_i^2/2)
    two52 = float(1 << 52)
    x0_virtual = v / f[0]
    w = np.empty(256)
    k = np.empty(256, dtype=np.uint64)
    w[0] = x0_virtual / two52
    k[0] = np.uint64(int((x[1] / x0_virtual) * two52))
    w[1:] = x[1:256] / two52
    k[1:] = ((x[2:257] / x[1:256]) * two52).astype(np.uint64)
    return w, k, f.copy()


W_TAB, K_TAB, F_TAB = _build_ziggurat_tables()


# ---------------------------------------------------------------------------
# scalar (numba) side
# ---------------------------------------------------------------------------

@nb.njit(nb.uint64(nb.uint64), inline="always", cache=True)
def mix64(z):
    z = (z ^ (z >> U64(30))) * MIX_A
    z = (z ^ (z >> U64(27))) * MIX_B
    return z ^ (z >> U64(31))


@nb.njit(nb.float64(nb.uint64), inline="always", cache=True)
def uniform01(h):
    # top 53 bits, offset to the open interval (0, 1)
    return (np.float64(h >> U64(11)) + 0.5) * _TWO52_INV


@nb.njit(nb.float64(nb.uint64), inline="always", cache=True)
def normal_from_counter(counter):
    """Standard normal draw addressed by an absolute 64-bit counter.

    The common path consumes a single hash.  Rejections (edge of a layer,
    base tail) consume a sub-stream derived from the first hash, so the draw
    stays a pure function of ``counter``.
    """
    h = mix64(counter)
    i = np.int64(h & U64(255))
    sign = 1.0 if (h & U64(256)) == U64(0) else -1.0
    j = h >> U64(12)
    x = np.float64(j) * W_TAB[i]
    if j < K_TAB[i]:
        return sign * x
    state = h ^ SUBSTREAM_XOR
    if i == 0:
        # tail beyond R: Marsaglia's exact tail sampler
        while True:
            state += GOLDEN
            a = uniform01(mix64(state))
            state += GOLDEN
            b = uniform01(mix64(state))
            t = -math.log(a) / ZIGGURAT_R
            if -2.0 * math.log(b) > t * t:
                return sign * (ZIGGURAT_R + t)
    else:
        while True:
            state += GOLDEN
            u = uniform01(mix64(state))
            if F_TAB[i - 1] + u * (F_TAB[i] - F_TAB[i - 1]) < math.exp(-0.5 * x * x):
                return sign * x
            state += GOLDEN
            j = mix64(state) >> U64(12)
            x = np.float64(j) * W_TAB[i]
            if j < K_TAB[i]:
                return sign * x


@nb.njit(nb.uint64(nb.uint64, nb.uint64), inline="always", cache=True)
def path_base(run_key, path_index):
    return mix64(run_key + path_index * PATH_STRIDE)


@nb.njit(nb.uint64(nb.uint64, nb.uint64), inline="always", cache=True)
def step_base(pbase, step_index):
    return pbase + step_index * STEP_STRIDE


# ---------------------------------------------------------------------------
# vectorized (numpy) mirror
# ---------------------------------------------------------------------------

def mix64_np(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> U64(30))) * MIX_A
        z = (z ^ (z >> U64(27))) * MIX_B
        return z ^ (z >> U64(31))


def _uniform01_np(h: np.ndarray) -> np.ndarray:
    return ((h >> U64(11)).astype(np.float64) + 0.5) * _TWO52_INV


def normals_from_counters(counters: np.ndarray) -> np.ndarray:
    """Vectorized mirror of :func:`normal_from_counter` (bit-identical)."""
    counters = np.ascontiguousarray(counters, dtype=np.uint64)
    shape = counters.shape
    c = counters.ravel()
    h = mix64_np(c)
    i = (h & U64(255)).astype(np.intp)
    sign = np.where((h & U64(256)) == 0, 1.0, -1.0)
    j = h >> U64(12)
    x = j.astype(np.float64) * W_TAB[i]
    out = sign * x
    pending = np.flatnonzero(j >= K_TAB[i])
    if pending.size:
        out[pending] = _slow_path_np(h[pending], i[pending], x[pending], sign[pending])
    return out.reshape(shape)


def _slow_path_np(h, i, x, sign):
    out = np.empty(h.shape[0])
    state = h ^ SUBSTREAM_XOR
    tail = np.flatnonzero(i == 0)
    wedge = np.flatnonzero(i != 0)

    if tail.size:
        st = state[tail]
        res = np.full(tail.size, np.nan)
        live = np.arange(tail.size)
        with np.errstate(over="ignore"):
            while live.size:
                st[live] += GOLDEN
                a = _uniform01_np(mix64_np(st[live]))
                st[live] += GOLDEN
                b = _uniform01_np(mix64_np(st[live]))
                t = -np.log(a) / ZIGGURAT_R
                ok = -2.0 * np.log(b) > t * t
                res[live[ok]] = ZIGGURAT_R + t[ok]
                live = live[~ok]
        out[tail] = sign[tail] * res

    if wedge.size:
        st = state[wedge]
        iw = i[wedge]
        xw = x[wedge].copy()
        res = np.full(wedge.size, np.nan)
        live = np.arange(wedge.size)
        with np.errstate(over="ignore"):
            while live.size:
                st[live] += GOLDEN
                u = _uniform01_np(mix64_np(st[live]))
                il = iw[live]
                accept = F_TAB[il - 1] + u * (F_TAB[il] - F_TAB[il - 1]) < np.exp(
                    -0.5 * xw[live] * xw[live]
                )
                res[live[accept]] = xw[live[accept]]
                live = live[~accept]
                if not live.size:
                    break
                st[live] += GOLDEN
                j2 = mix64_np(st[live]) >> U64(12)
                xw[live] = j2.astype(np.float64) * W_TAB[iw[live]]
                direct = j2 < K_TAB[iw[live]]
                res[live[direct]] = xw[live[direct]]
                live = live[~direct]
        out[wedge] = sign[wedge] * res

    return out


def path_base_np(run_key: np.uint64, path_indices: np.ndarray) -> np.ndarray:
    p = np.asarray(path_indices, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return mix64_np(U64(run_key) + p * PATH_STRIDE)


def step_base_np(pbase: np.ndarray, step_index: int) -> np.ndarray:
    with np.errstate(over="ignore"):
        return pbase + U64(step_index) * STEP_STRIDE


def driving_counters(pbase: np.ndarray, step_index: int, dim: int) -> np.ndarray:
    """Counters for the Euler driving noise, shape ``pbase.shape + (dim,)``."""
    base = step_base_np(pbase, step_index)
    offs = np.arange(1, 1 + dim, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return base[..., None] + offs


def drift_noise_counters(
    pbase: np.ndarray, step_index: int, dim: int, batch: int
) -> np.ndarray:
    """Counters for the drift-estimation noise, shape ``(..., batch, dim)``."""
    base = step_base_np(pbase, step_index)
    offs = U64(1 + dim) + np.arange(batch * dim, dtype=np.uint64)
    with np.errstate(over="ignore"):
        flat = base[..., None] + offs
    return flat.reshape(base.shape + (batch, dim))


def run_key_from_seed(master_seed: int) -> np.uint64:
    """Derive the 64-bit stream key for one integrator run."""
    return np.random.SeedSequence(master_seed).generate_state(1, np.uint64)[0]
