import numpy as np
import pytest

from hdot.bench.heat2d import heat2d_run, initial_grid, reference_sweeps
from hdot.bench.kernels import gs_block
from hdot.errors import GrainsizeError


def test_initial_grid_boundaries():
    u = initial_grid(4, 5)
    assert u.shape == (6, 7)
    assert (u[0] == 1.0).all() and (u[-1] == 0.0).all()
    assert u[1, 0] == 1.0 and u[4, 0] == 0.0 and (u[1:-1, -1] == 0.25).all()
    assert (initial_grid(2, 2, boundary=3.0)[0] == 3.0).all()


def test_reference_sweep_by_hand():
    u0 = initial_grid(1, 2, boundary=0.0)
    u0[1, 1], u0[1, 2] = 4.0, 8.0
    u0[0, 1] = 4.0
    # First cell: (0 + 4 + 8 + 0) / 4 = 3, second: (0 + 0 + 0 + 3) / 4 = 0.75.
    assert reference_sweeps(u0, 1)[1, 1:3].tolist() == [3.0, 0.75]


def test_blocked_kernel_in_lexicographic_order_equals_point_sweep():
    rng = np.random.default_rng(0)
    u0 = rng.random((10, 12))
    ref = reference_sweeps(u0, 1)
    u = u0.copy()
    for r0 in range(1, 9, 4):
        for c0 in range(1, 11, 5):
            gs_block(u, r0, min(r0 + 4, 9), c0, min(c0 + 5, 11))
    assert np.array_equal(u, ref)


@pytest.mark.parametrize("mode", ["rank-only", "forkjoin", "hdot"])
@pytest.mark.parametrize("ranks, workers", [(1, 1), (2, 2), (4, 3)])
def test_every_mode_matches_the_oracle(mode, ranks, workers):
    res = heat2d_run(mode, steps=4, size=(16, 12), ranks=ranks, workers=workers, grainsize=2, block_cols=5)
    assert np.array_equal(res.grid, reference_sweeps(initial_grid(16, 12), 4))
    assert res.updates == 16 * 12 * 4


def test_deep_halo_and_random_policy():
    ref = reference_sweeps(initial_grid(16, 8), 3)
    for seed in range(3):
        res = heat2d_run("hdot", steps=3, size=(16, 8), ranks=2, workers=3, grainsize=2, halo=4,
                         policy="random", seed=seed)
        assert np.array_equal(res.grid, ref)


def test_deterministic_mode_matches_the_oracle():
    res = heat2d_run("hdot", steps=3, size=(16, 16), ranks=2, workers=4, grainsize=4, deterministic=True, seed=7)
    assert np.array_equal(res.grid, reference_sweeps(initial_grid(16, 16), 3))


def test_zero_steps_returns_the_initial_grid():
    res = heat2d_run("hdot", steps=0, size=(8, 8), grainsize=4)
    assert np.array_equal(res.grid, initial_grid(8, 8))


def test_invalid_arguments():
    with pytest.raises(GrainsizeError):
        heat2d_run("hdot", steps=1, size=(16, 16), grainsize=3, halo=4)
    with pytest.raises(ValueError):
        heat2d_run("serial", steps=1)
    with pytest.raises(ValueError):
        heat2d_run("hdot", steps=1, size=(15, 8), ranks=2)
    with pytest.raises(ValueError):
        heat2d_run("hdot", steps=1, size=(8, 8), u0=np.zeros((3, 3)))


def test_metrics_and_idle_fractions():
    res = heat2d_run("forkjoin", steps=2, size=(16, 16), ranks=2, workers=2, grainsize=4)
    assert set(res.idle_fractions) == {(0, 0), (0, 1), (1, 0), (1, 1)}
    assert all(0.0 <= v <= 1.0 for v in res.idle_fractions.values())
    m = res.metric()
    assert m["updates"] == 16 * 16 * 2 and m["updates_per_s"] > 0
    assert res.config["benchmark"] == "heat2d"


def test_single_block_warns_about_granularity():
    res = heat2d_run("hdot", steps=1, size=(8, 8), workers=4, grainsize=8)
    assert any("subdomain" in w for w in res.warnings)
