import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from transportlab.bloch import FermiSea, sample_bz_grid
from transportlab.errors import AliasingRisk, GridMismatch
from transportlab.tpuv import (cyclicity_probe, inverse_bfz_kernel, kernel_fibers,
                               origin_shift_defect, random_periodic_kernel,
                               tpuv_periodic, tpuv_position_weighted)

seeds = st.integers(0, 2**32 - 1)


@given(seeds)
@settings(max_examples=20, deadline=None)
def test_tpuv_equals_origin_block_trace(seed):
    rng = np.random.default_rng(seed)
    kernel = random_periodic_kernel(rng, 4)
    value, imag = tpuv_periodic(kernel_fibers(kernel, 12), 2.5)
    expected = np.trace(kernel.block((0, 0))) / 2.5
    assert abs(value - expected) < 1e-12
    assert imag == pytest.approx(value.imag)


@given(seeds)
@settings(max_examples=20, deadline=None)
def test_inverse_transform_recovers_blocks(seed):
    rng = np.random.default_rng(seed)
    kernel = random_periodic_kernel(rng, 2, radius=2)
    recovered = inverse_bfz_kernel(kernel_fibers(kernel, 12), gamma_max=3)
    for g, block in zip(kernel.offsets, kernel.blocks):
        np.testing.assert_allclose(recovered.block(g), block, atol=1e-12)
    assert recovered.tail_norm < 1e-12


@given(seeds)
@settings(max_examples=20, deadline=None)
def test_cyclicity(seed):
    rng = np.random.default_rng(seed)
    a = kernel_fibers(random_periodic_kernel(rng, 3), 10)
    b = kernel_fibers(random_periodic_kernel(rng, 3), 10)
    ab, ba, defect = cyclicity_probe(a, b)
    assert defect < 1e-12
    assert abs(ab - ba) == defect


@given(seeds, st.floats(-3, 3))
@settings(max_examples=20, deadline=None)
def test_origin_shift_is_alpha_times_trace(kmr, seed, alpha):
    rng = np.random.default_rng(seed)
    a = kernel_fibers(random_periodic_kernel(rng, kmr.n_orbitals), 8)
    defect, expected = origin_shift_defect(a, kmr, 0, alpha)
    assert abs(defect - expected) < 1e-12


def test_cell_positions_carry_no_weight(kmr, rng):
    a = kernel_fibers(random_periodic_kernel(rng, kmr.n_orbitals), 8)
    assert tpuv_position_weighted(a, kmr, 1, positions="cell") == 0


def test_aliasing_guard(rng):
    a = kernel_fibers(random_periodic_kernel(rng, 2), 8)
    with pytest.raises(AliasingRisk):
        inverse_bfz_kernel(a, gamma_max=4)


def test_mismatched_grids(rng):
    a = kernel_fibers(random_periodic_kernel(rng, 2), 8)
    b = kernel_fibers(random_periodic_kernel(rng, 2), 6)
    with pytest.raises(GridMismatch):
        cyclicity_probe(a, b)


def test_missing_block_raises(rng):
    with pytest.raises(KeyError):
        random_periodic_kernel(rng, 2, radius=1).block((3, 0))


def test_projector_kernel_decays_exponentially(haldane):
    sea = FermiSea(haldane, sample_bz_grid(haldane, 48))
    shells = inverse_bfz_kernel(sea.projector, gamma_max=12).shell_norms()
    r = np.arange(2, 11)
    norms = np.array([shells[int(x)] for x in r])
    rate = -np.polyfit(r, np.log(norms), 1)[0]
    assert rate > 0.5
    assert shells[12] < 1e-4
