import numpy as np
import pytest

from hdot.bench.hpccg import (
    dense_matrix,
    dense_solve,
    ddot_local,
    generate_matrix,
    hpccg_solve,
    sparsemv,
    waxpby,
)
from hdot.errors import GrainsizeError


def test_dense_oracle_is_symmetric_positive_definite():
    a = dense_matrix(3, 3, 3)
    assert np.array_equal(a, a.T)
    assert np.linalg.eigvalsh(a).min() > 0
    # Centre of a 3x3x3 grid touches all 26 neighbours.
    assert (a[13] == -1).sum() == 26 and a[13, 13] == 27.0
    assert np.allclose(dense_solve(3, 3, 3), 1.0)


@pytest.mark.parametrize("ranks", [1, 2, 3])
def test_local_rows_match_the_dense_operator(ranks):
    nx, ny, nz = 3, 2, 2
    dense = dense_matrix(nx, ny, nz * ranks)
    plane = nx * ny
    for rank in range(ranks):
        a = generate_matrix(nx, ny, nz, rank, ranks)
        local = a.to_dense()
        g0 = rank * a.nrows
        # Columns of the extended vector map to global rows shifted by one plane.
        for j in range(a.ext_len):
            gj = g0 + j - plane
            if 0 <= gj < len(dense):
                assert np.array_equal(local[:, j], dense[g0:g0 + a.nrows, gj])
            else:
                assert not local[:, j].any()
        assert set(a.externals) == {s for s, ok in (("lo", rank > 0), ("hi", rank < ranks - 1)) if ok}


def test_sparsemv_matches_dense_product():
    a = generate_matrix(4, 3, 2)
    rng = np.random.default_rng(1)
    p_ext = np.zeros(a.ext_len)
    p_ext[a.plane:a.plane + a.nrows] = rng.standard_normal(a.nrows)
    y = np.zeros(a.nrows)
    sparsemv(a, p_ext, y)
    assert np.allclose(y, dense_matrix(4, 3, 2) @ p_ext[a.plane:a.plane + a.nrows])
    part = np.zeros(a.nrows)
    sparsemv(a, p_ext, part, rows=(5, 9))
    assert np.array_equal(part[5:9], y[5:9]) and not part[:5].any()


def test_waxpby_and_ddot():
    x, y = np.arange(4.0), np.ones(4)
    w = np.zeros(4)
    waxpby(2.0, x, 3.0, y, w)
    assert w.tolist() == [3.0, 5.0, 7.0, 9.0]
    waxpby(1.0, x, -1.0, y, x, rows=(0, 2))
    assert x.tolist() == [-1.0, 0.0, 2.0, 3.0]
    assert ddot_local(np.arange(4.0), np.arange(4.0), (1, 3)) == 5.0


def test_sum_of_local_dots_is_close_to_the_sequential_dot():
    rng = np.random.default_rng(2)
    v, w = rng.standard_normal(512), rng.standard_normal(512)
    seq = 0.0
    for a, b in zip(v, w):
        seq += a * b
    parts = sum(ddot_local(v, w, (i, i + 64)) for i in range(0, 512, 64))
    bound = len(v) * np.finfo(float).eps * float(np.abs(v * w).sum())
    assert abs(parts - seq) <= bound


@pytest.mark.parametrize("mode", ["rank-only", "forkjoin", "hdot"])
def test_converges_to_all_ones(mode):
    res = hpccg_solve(mode, 6, 6, 3, ranks=2, max_iter=200, tol=1e-10, workers=2)
    assert res.state.converged
    assert np.abs(res.state.x - 1.0).max() < 1e-8
    assert 0 < res.state.iterations <= 200


def test_custom_rhs_matches_dense_solve():
    rng = np.random.default_rng(3)
    b = rng.standard_normal(4 * 4 * 4)
    res = hpccg_solve("hdot", 4, 4, 2, ranks=2, max_iter=300, tol=1e-12, workers=2, rhs=b)
    assert np.abs(res.state.x - dense_solve(4, 4, 4, b)).max() < 1e-8


def test_fixed_iterations_and_rtrans_equivalence():
    runs = {m: hpccg_solve(m, 6, 6, 4, ranks=2, max_iter=20, workers=3, grainsize=1).state
            for m in ("rank-only", "forkjoin", "hdot")}
    for st in runs.values():
        assert st.iterations == 20 and len(st.rtrans_history) == 20 and not st.converged
    assert runs["hdot"].rtrans_history == runs["rank-only"].rtrans_history
    assert runs["forkjoin"].rtrans_history == runs["rank-only"].rtrans_history


def test_non_convergence_is_reported(caplog):
    res = hpccg_solve("rank-only", 6, 6, 6, max_iter=2, tol=1e-14)
    assert not res.state.converged and res.state.iterations == 2
    assert "did not reach" in caplog.text


def test_invalid_arguments():
    with pytest.raises(ValueError):
        hpccg_solve("dense", 2, 2, 2)
    with pytest.raises(ValueError):
        hpccg_solve("hdot", 2, 2, 2, max_iter=-1)
    with pytest.raises(GrainsizeError):
        hpccg_solve("hdot", 2, 2, 2, grainsize=0)
    with pytest.raises(ValueError):
        generate_matrix(0, 2, 2)
