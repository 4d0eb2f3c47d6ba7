"""Backend parity: the numba fast path must reproduce the numpy fallback."""

import numpy as np
import pytest

from e2m import kernels
from e2m.kernels import _numpy as knp


def _random_cp(rng, shape, rank):
    factors = [rng.uniform(0.1, 1.0, size=(i, rank)) for i in shape]
    return kernels.stack_cp(factors)


def _random_tt(rng, shape, ranks):
    bonds = (1,) + tuple(ranks) + (1,)
    cores = [
        rng.uniform(0.1, 1.0, size=(bonds[d], shape[d], bonds[d + 1]))
        for d in range(len(shape))
    ]
    return kernels.flatten_tt(cores)


def _random_idx(rng, shape, n):
    return np.column_stack(
        [rng.integers(0, extent, size=n) for extent in shape]
    ).astype(np.int64)


def test_flatten_round_trip():
    rng = np.random.default_rng(0)
    bonds = (1, 2, 3, 1)
    cores = [rng.uniform(size=(bonds[d], 4, bonds[d + 1])) for d in range(3)]
    buf, dims, offs = kernels.flatten_tt(cores)
    back = kernels.unflatten_tt(buf, dims, offs)
    for a, b in zip(cores, back):
        np.testing.assert_array_equal(a, b)


def test_stack_round_trip():
    rng = np.random.default_rng(1)
    factors = [rng.uniform(size=(i, 3)) for i in (2, 5, 4)]
    fstack, offsets = kernels.stack_cp(factors)
    for a, b in zip(factors, kernels.unstack_cp(fstack, offsets)):
        np.testing.assert_array_equal(a, b)


def test_backend_selection_round_trip():
    previous = kernels.set_backend("numpy")
    assert kernels.active_backend() == "numpy"
    kernels.set_backend(previous)
    with pytest.raises(ValueError):
        kernels.set_backend("fortran")


class TestParity:
    shape = (5, 3, 4, 2)

    def test_cp_values_and_scatter(self, backend):
        rng = np.random.default_rng(7)
        fstack, offsets = _random_cp(rng, self.shape, 3)
        idx = _random_idx(rng, self.shape, 400)
        wq = rng.uniform(size=(400, 3))

        got_vals = kernels.cp_rank_values(fstack, offsets, idx)
        ref_vals = knp.cp_rank_values(fstack, offsets, idx)
        np.testing.assert_allclose(got_vals, ref_vals, rtol=1e-13)

        got_stack, got_tot = kernels.cp_scatter(
            int(offsets[-1]), offsets, idx, wq
        )
        ref_stack, ref_tot = knp.cp_scatter(int(offsets[-1]), offsets, idx, wq)
        np.testing.assert_allclose(got_stack, ref_stack, rtol=1e-12, atol=1e-15)
        np.testing.assert_allclose(got_tot, ref_tot, rtol=1e-12)

    def test_tt_values_and_stats(self, backend):
        rng = np.random.default_rng(9)
        buf, dims, offs = _random_tt(rng, self.shape, (2, 3, 2))
        idx = _random_idx(rng, self.shape, 350)
        w = rng.uniform(size=350)

        got_vals = kernels.tt_values(buf, dims, offs, idx)
        ref_vals = knp.tt_values(buf, dims, offs, idx)
        np.testing.assert_allclose(got_vals, ref_vals, rtol=1e-13)

        got_stats = kernels.tt_stats(buf, dims, offs, idx, w)
        ref_stats = knp.tt_stats(buf, dims, offs, idx, w)
        np.testing.assert_allclose(got_stats, ref_stats, rtol=1e-12, atol=1e-15)

    def test_tt_values_match_explicit_chain(self, backend):
        rng = np.random.default_rng(13)
        buf, dims, offs = _random_tt(rng, (3, 4, 2), (2, 2))
        cores = kernels.unflatten_tt(buf, dims, offs)
        idx = _random_idx(rng, (3, 4, 2), 25)
        got = kernels.tt_values(buf, dims, offs, idx)
        for row, value in zip(idx, got):
            vec = np.ones(1)
            for d, core in enumerate(cores):
                vec = vec @ core[:, row[d], :]
            assert value == pytest.approx(float(vec[0]), rel=1e-13)
