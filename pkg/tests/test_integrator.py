"""Ensemble integration: exactness, determinism, path agreement, files."""

import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, strategies as hst

import sf_sampler as sf
from sf_sampler.integrator import IncompatibleDriftError, PATH_BLOCK


def _cfg(n=8, K=1000, seed=7, **drift_kw):
    return sf.RunConfig(
        grid=sf.TimeGrid(n=n, T=1.0),
        ensemble_size=K,
        master_seed=seed,
        drift=sf.DriftConfig(**drift_kw),
    )


# ---------------------------------------------------------------------------
# time grid
# ---------------------------------------------------------------------------

@given(n=hst.integers(min_value=1, max_value=2048),
       T=hst.floats(min_value=1e-3, max_value=1e3))
def test_time_grid_invariants(n, T):
    grid = sf.TimeGrid(n=n, T=T)
    times = grid.times
    assert times[0] == 0.0
    assert times[-1] == T  # linspace pins both endpoints
    h = grid.h
    # uniform at the horizon's fp scale (extreme n*T combinations reach
    # just past one ulp of T)
    np.testing.assert_allclose(np.diff(times), h, rtol=0.0, atol=2 * np.spacing(T))
    # the last drift evaluation time stays strictly interior
    assert (n - 1) * h < T


def test_time_grid_validation():
    with pytest.raises(ValueError):
        sf.TimeGrid(n=0, T=1.0)
    with pytest.raises(ValueError):
        sf.TimeGrid(n=4, T=0.0)


# ---------------------------------------------------------------------------
# exactness
# ---------------------------------------------------------------------------

def test_pure_brownian_motion(std_gaussian):
    # flat ratio: zero drift, terminal law N(0, T)
    K = 100_000
    ens = sf.em_run(std_gaussian, _cfg(n=4, K=K, mode="gradient_ratio", mc_batch=8))
    x = ens.terminal[:, 0]
    assert abs(x.mean()) < 4.0 / math.sqrt(K)
    assert 0.95 < x.var() < 1.05
    assert ens.flags.degenerate.sum() == 0
    assert ens.flags.clamped.sum() == 0


@pytest.mark.parametrize("n", [1, 16])
def test_exact_bridge_single_step(n):
    # s2 = T: constant drift m/T makes the scheme exact at every n
    target = sf.make_gaussian_target(sf.GaussianParams(mean=[2.0], variance=1.0), 1.0)
    K = 50_000
    ens = sf.em_run(target, _cfg(n=n, K=K, seed=42, mode="exact_gaussian"))
    x = ens.terminal[:, 0]
    assert abs(x.mean() - 2.0) < 4.0 / math.sqrt(K)
    assert 0.95 < x.var() < 1.05
    ref = target.sampler(np.random.default_rng(1), 200_000)[:, 0]
    assert sf.w1_1d(x, ref) < 0.02


def test_multidim_exact_bridge():
    target = sf.make_gaussian_target(
        sf.GaussianParams(mean=[1.0, -1.0, 0.5], variance=1.0), 1.0
    )
    K = 20_000
    ens = sf.em_run(target, _cfg(n=4, K=K, mode="exact_gaussian"))
    assert ens.terminal.shape == (K, 3)
    np.testing.assert_allclose(
        ens.terminal.mean(axis=0), [1.0, -1.0, 0.5], atol=4.5 / math.sqrt(K)
    )
    np.testing.assert_allclose(ens.terminal.var(axis=0), 1.0, rtol=0.05)


# ---------------------------------------------------------------------------
# determinism and path equivalence
# ---------------------------------------------------------------------------

def test_rerun_is_bit_identical(three_kde, warm_kernels):
    et = sf.EpsilonTarget(three_kde, 0.2)
    cfg = _cfg(n=8, K=500, mode="stein", mc_batch=32, epsilon=0.2)
    a = sf.em_run(et, cfg)
    b = sf.em_run(et, cfg)
    assert np.array_equal(a.terminal, b.terminal)


def test_thread_count_invariance(three_kde, symmetric_mixture, warm_kernels):
    et = sf.EpsilonTarget(three_kde, 0.2)
    cfg = _cfg(n=8, K=2 * PATH_BLOCK + 37, mode="stein", mc_batch=16, epsilon=0.2)
    assert np.array_equal(
        sf.em_run(et, cfg, threads=1).terminal, sf.em_run(et, cfg, threads=8).terminal
    )
    cfg2 = _cfg(n=4, K=2 * PATH_BLOCK + 11, mode="oracle")
    assert np.array_equal(
        sf.em_run(symmetric_mixture, cfg2, threads=1).terminal,
        sf.em_run(symmetric_mixture, cfg2, threads=8).terminal,
    )
    cfg3 = _cfg(n=4, K=PATH_BLOCK + 3, mode="gradient_ratio", mc_batch=16)
    assert np.array_equal(
        sf.em_run(symmetric_mixture, cfg3, threads=1).terminal,
        sf.em_run(symmetric_mixture, cfg3, threads=8).terminal,
    )


def test_fused_and_generic_paths_agree(three_kde, symmetric_mixture, warm_kernels):
    # same counters, same formulas; only summation order differs
    et = sf.EpsilonTarget(three_kde, 0.2)
    cfg = _cfg(n=8, K=300, mode="stein", mc_batch=64, epsilon=0.2)
    fused = sf.em_run(et, cfg)
    generic = sf.em_run(et, dataclasses.replace(cfg, record_paths=True))
    assert fused.provenance["execution_path"] == "fused"
    assert generic.provenance["execution_path"] == "numpy"
    np.testing.assert_allclose(fused.terminal, generic.terminal, atol=1e-10)

    cfg2 = _cfg(n=8, K=300, mode="oracle")
    fused2 = sf.em_run(symmetric_mixture, cfg2)
    generic2 = sf.em_run(symmetric_mixture, dataclasses.replace(cfg2, record_paths=True))
    assert fused2.provenance["execution_path"] == "fused"
    np.testing.assert_allclose(fused2.terminal, generic2.terminal, atol=1e-10)


def test_terminal_policy_changes_last_step(three_kde, warm_kernels):
    et = sf.EpsilonTarget(three_kde, 0.2)
    analytic = sf.em_run(et, _cfg(n=8, K=200, mode="stein", mc_batch=32, epsilon=0.2))
    interior = sf.em_run(
        et,
        _cfg(n=8, K=200, mode="stein", mc_batch=32, epsilon=0.2,
             terminal_policy="last_interior"),
    )
    assert not np.array_equal(analytic.terminal, interior.terminal)


def test_ensemble_invariants_certified_target(symmetric_mixture):
    # certified-Lipschitz target with oracle drift and eps = 0: all terminal
    # values finite, no degenerate or clamped drift events
    ens = sf.em_run(symmetric_mixture, _cfg(n=8, K=2000, mode="oracle"))
    assert np.all(np.isfinite(ens.terminal))
    assert ens.flags.degenerate.sum() == 0
    assert ens.flags.clamped.sum() == 0


def test_record_paths_shape(std_gaussian):
    cfg = dataclasses.replace(
        _cfg(n=5, K=40, mode="gradient_ratio", mc_batch=8), record_paths=True
    )
    ens = sf.em_run(std_gaussian, cfg)
    assert ens.paths.shape == (40, 6, 1)
    np.testing.assert_array_equal(ens.paths[:, 0, :], 0.0)  # Y_0 = 0
    np.testing.assert_array_equal(ens.paths[:, -1, :], ens.terminal)


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

def test_incompatible_configs(std_gaussian, three_kde):
    nograd = dataclasses.replace(three_kde, grad_log_rho=None)
    with pytest.raises(IncompatibleDriftError, match="grad_log_rho"):
        sf.em_run(nograd, _cfg(mode="gradient_ratio"))
    with pytest.raises(IncompatibleDriftError, match="analytic_limit"):
        sf.em_run(nograd, _cfg(mode="stein"))
    # gradient-free targets run with the last_interior policy
    ens = sf.em_run(
        nograd, _cfg(n=4, K=50, mode="stein", mc_batch=16,
                     terminal_policy="last_interior")
    )
    assert ens.terminal.shape == (50, 1)
    with pytest.raises(IncompatibleDriftError, match="Gaussian"):
        sf.em_run(three_kde, _cfg(mode="exact_gaussian"))
    with pytest.raises(IncompatibleDriftError, match="horizon"):
        sf.em_run(
            std_gaussian,
            sf.RunConfig(grid=sf.TimeGrid(n=4, T=2.0), ensemble_size=10, master_seed=0),
        )
    with pytest.raises(IncompatibleDriftError, match="epsilon"):
        sf.em_run(
            sf.EpsilonTarget(std_gaussian, 0.2),
            _cfg(mode="stein", epsilon=0.3),
        )


def test_oracle_dim_cap():
    t3 = sf.make_gaussian_target(sf.GaussianParams(mean=[0.0] * 3, variance=1.0), 1.0)
    with pytest.raises(IncompatibleDriftError, match="dim"):
        sf.em_run(t3, _cfg(mode="oracle"))


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

def test_sweep_cell_matches_direct_run(symmetric_mixture):
    base = _cfg(n=4, K=400, seed=123, mode="oracle")
    cells = sf.em_sweep(symmetric_mixture, base, n_values=[4], eps_values=[0.0])
    assert len(cells) == 1
    n, eps, ens = cells[0]
    direct_cfg = dataclasses.replace(base, master_seed=sf.cell_seed(123, 4, 0.0))
    direct = sf.em_run(symmetric_mixture, direct_cfg)
    assert np.array_equal(ens.terminal, direct.terminal)


def test_sweep_cross_product_and_sink(three_kde):
    base = _cfg(n=2, K=100, mode="stein", mc_batch=8)
    seen = []
    cells = sf.em_sweep(
        three_kde,
        base,
        n_values=[2, 4],
        eps_values=[0.1, 0.2],
        sink=lambda n, e, ens: seen.append((n, e)),
    )
    assert [(n, e) for n, e, _ in cells] == seen
    assert len(cells) == 4
    # independent cells: different seeds, different draws
    assert not np.array_equal(cells[0][2].terminal, cells[1][2].terminal)


def test_sweep_empty_lists(symmetric_mixture):
    with pytest.raises(ValueError, match="non-empty"):
        sf.em_sweep(symmetric_mixture, _cfg(), n_values=[], eps_values=[0.0])


def test_sweep_trend_mixture(symmetric_mixture):
    # coarse vs fine grid: distance to the target shrinks (small-K version
    # of the full acceptance experiment)
    base = _cfg(n=8, K=20_000, seed=31, mode="oracle")
    cells = sf.em_sweep(symmetric_mixture, base, n_values=[4, 64], eps_values=[0.0])
    ref = symmetric_mixture.sampler(np.random.default_rng(5), 200_000)
    w = [sf.w1_1d(ens.terminal[:, 0], ref[:, 0]) for _, _, ens in cells]
    assert w[1] < w[0]


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def test_csv_format(tmp_path, std_gaussian):
    ens = sf.em_run(std_gaussian, _cfg(n=2, K=10, seed=5, mode="exact_gaussian"))
    path = tmp_path / "sample.csv"
    sf.write_sample_csv(path, ens)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# sf-sampler v")
    assert "seed=5" in lines[0] and "target=" in lines[0]
    assert lines[1] == "y1"
    assert len(lines) == 12
    vals = np.array([float(v) for v in lines[2:]])
    np.testing.assert_array_equal(vals, ens.terminal[:, 0])  # repr round-trips


def test_bin_round_trip(tmp_path):
    target = sf.make_gaussian_target(sf.GaussianParams(mean=[0.0, 1.0], variance=1.0), 1.0)
    ens = sf.em_run(target, _cfg(n=2, K=17, mode="exact_gaussian"))
    path = tmp_path / "sample.bin"
    sf.write_sample_bin(path, ens)
    header, data = sf.read_sample_bin(path)
    assert header["shape"] == [17, 2]
    assert header["dtype"] == "<f8"
    np.testing.assert_array_equal(data, ens.terminal)


def test_write_determinism(tmp_path, std_gaussian):
    cfg = _cfg(n=3, K=50, mode="gradient_ratio", mc_batch=8)
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    sf.write_sample_csv(p1, sf.em_run(std_gaussian, cfg))
    sf.write_sample_csv(p2, sf.em_run(std_gaussian, cfg))
    assert p1.read_bytes() == p2.read_bytes()
