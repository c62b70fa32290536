import numpy as np
import pytest

from transportlab.bloch import (FermiSea, KGrid, fermi_projection, fiber_gradient,
                                fiber_hamiltonian, grid_derivative, sample_bz_grid,
                                spectral_gap_scan)
from transportlab.errors import EigenvalueAtFermi, GapClosed
from transportlab.model import builtin_spec, compile_model


def test_gradient_matches_central_difference(kmr):
    k = np.array([0.3, -1.1])
    h = 1e-5
    grad = fiber_gradient(kmr, k)
    for j in range(2):
        step = np.zeros(2)
        step[j] = h
        fd = (fiber_hamiltonian(kmr, k + step) - fiber_hamiltonian(kmr, k - step)) / (2 * h)
        np.testing.assert_allclose(grad[j], fd, atol=1e-8)


def test_projector_is_rank_n_occupied(haldane, grid24):
    sea = FermiSea(haldane, grid24)
    p = sea.projector
    np.testing.assert_allclose(p @ p, p, atol=1e-12)
    np.testing.assert_allclose(np.trace(p, axis1=-2, axis2=-1), sea.n_occupied, atol=1e-12)
    assert sea.n_occupied == 2


def test_fermi_projection_detects_eigenvalue_at_mu():
    with pytest.raises(EigenvalueAtFermi):
        fermi_projection(np.diag([-1.0, 0.0, 1.0]), 0.0)
    p, gap = fermi_projection(np.diag([-1.0, 2.0]), 0.0)
    np.testing.assert_allclose(p, np.diag([1.0, 0.0]))
    assert gap == pytest.approx(3.0)


def test_metal_has_no_gap():
    square = compile_model(builtin_spec("square"))
    grid = sample_bz_grid(square, 16)
    assert not spectral_gap_scan(square, 0.0, grid).ok
    with pytest.raises(GapClosed):
        FermiSea(square, grid)


def test_fft_derivative_is_exact_on_trigonometric_fields(kmr):
    grid = sample_bz_grid(kmr, 16)
    h = fiber_hamiltonian(kmr, grid.kpoints)
    exact = fiber_gradient(kmr, grid.kpoints)
    for j in range(2):
        np.testing.assert_allclose(grid_derivative(h, grid, j, order=0), exact[j], atol=1e-12)


@pytest.mark.parametrize("order", [2, 4, 6])
def test_finite_difference_convergence_order(kmr, order):
    errors = []
    for n in (32, 64):
        grid = sample_bz_grid(kmr, n)
        fd = grid_derivative(fiber_hamiltonian(kmr, grid.kpoints), grid, 0, order=order)
        errors.append(np.abs(fd - fiber_gradient(kmr, grid.kpoints)[0]).max())
    observed = np.log2(errors[0] / errors[1])
    assert abs(observed - order) < 0.2


def test_spectral_projector_derivative_matches_fft():
    # a wide-gap insulator keeps the projector smooth enough for spectral accuracy at N=48
    model = compile_model(builtin_spec("haldane_trivial", m_stagger=2.0))
    grid = sample_bz_grid(model, 48)
    sea = FermiSea(model, grid)
    for j in range(2):
        fft = grid_derivative(sea.projector, grid, j, order=0)
        np.testing.assert_allclose(fft, sea.dprojector[j], atol=1e-11)


def test_grid_requires_two_points(haldane):
    with pytest.raises(ValueError):
        KGrid(1, haldane.reciprocal)
