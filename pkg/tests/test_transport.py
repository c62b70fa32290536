import numpy as np
import pytest

from transportlab.bloch import sample_bz_grid
from transportlab.model import builtin_spec, compile_model
from transportlab.neass import first_order_neass
from transportlab.transport import (charge_current_response, chern_number_oracle,
                                    hall_conductivity_dcf, kubo_like_spin_conductivity,
                                    spin_conductivities, spin_current_responses, spin_sector,
                                    spin_torque_expectation, spin_torque_response,
                                    transport_report, ucc_cell_diagnostic)


@pytest.fixture(scope="module")
def km():
    return compile_model(builtin_spec("kane_mele"))


@pytest.fixture(scope="module")
def broken():
    return compile_model(builtin_spec("kane_mele_rashba_broken"))


def test_haldane_chern_and_hall(haldane):
    grid = sample_bz_grid(haldane, 48)
    chern = chern_number_oracle(haldane, grid=grid)
    assert chern == pytest.approx(-2.0, abs=1e-9)
    assert hall_conductivity_dcf(haldane, grid=grid) == pytest.approx(1 / np.pi, abs=1e-9)
    for s in ("up", "down"):
        assert chern_number_oracle(haldane, grid=grid, sector=s) == pytest.approx(-1, abs=1e-9)


def test_flux_reversal_flips_chern():
    model = compile_model(builtin_spec("haldane", phi=-np.pi / 2))
    grid = sample_bz_grid(model, 24)
    assert chern_number_oracle(model, grid=grid) == pytest.approx(2.0, abs=1e-9)
    assert hall_conductivity_dcf(model, grid=grid) == pytest.approx(-1 / np.pi, abs=1e-5)


def test_trivial_insulator_has_zero_hall_conductivity():
    model = compile_model(builtin_spec("haldane_trivial"))
    grid = sample_bz_grid(model, 24)
    assert chern_number_oracle(model, grid=grid) == pytest.approx(0.0, abs=1e-12)
    assert abs(hall_conductivity_dcf(model, grid=grid)) < 1e-12


def test_hall_independent_of_position_convention(haldane, grid24):
    cell = hall_conductivity_dcf(haldane, grid=grid24, positions="cell")
    atomic = hall_conductivity_dcf(haldane, grid=grid24, positions="atomic")
    assert atomic == pytest.approx(cell, abs=1e-12)


def test_neass_current_reproduces_double_commutator(haldane, grid24):
    for positions in ("cell", "atomic"):
        neass = first_order_neass(haldane, grid24, positions=positions)
        assert charge_current_response(neass) == pytest.approx(
            hall_conductivity_dcf(haldane, grid=grid24), abs=1e-12)


def test_spin_sector_requires_conservation(kmr):
    with pytest.raises(ValueError):
        spin_sector(kmr, "up")


def test_spin_conductivities_match_direct_expectations(kmr):
    neass = first_order_neass(kmr, sample_bz_grid(kmr, 24), positions="atomic")
    sigma = spin_conductivities(kmr, neass=neass)
    direct = spin_current_responses(neass)
    assert sigma.conv == pytest.approx(direct["conv_direct"], abs=1e-12)
    assert sigma.prop == pytest.approx(direct["prop_direct"], abs=1e-12)
    assert sigma.prop - sigma.conv - sigma.rot == pytest.approx(0.0, abs=1e-14)


def test_positions_mismatch_is_rejected(kmr):
    neass = first_order_neass(kmr, sample_bz_grid(kmr, 12), positions="cell")
    with pytest.raises(ValueError):
        spin_conductivities(kmr, positions="atomic", neass=neass)


def test_rotation_term_is_origin_independent(kmr):
    neass = first_order_neass(kmr, sample_bz_grid(kmr, 24), positions="atomic")
    a = spin_conductivities(kmr, neass=neass)
    b = spin_conductivities(kmr, neass=neass, origin=(0.3, -0.7))
    assert a.rot == pytest.approx(b.rot, abs=1e-15)


def test_spin_hall_quantized_without_rashba(km):
    grid = sample_bz_grid(km, 96)
    assert kubo_like_spin_conductivity(km, grid=grid) == pytest.approx(1 / (2 * np.pi), abs=1e-6)


def test_torques_vanish_with_rashba(kmr):
    grid = sample_bz_grid(kmr, 24)
    assert abs(spin_torque_response(kmr, grid=grid)) < 1e-12
    scan = spin_torque_expectation(kmr, grid=grid, eps_list=(0.1, 0.01))
    assert abs(scan.first_order) < 1e-12
    assert np.abs(scan.values).max() < 1e-12


def test_ucc_diagnostic_separates_models(kmr, broken):
    grid = sample_bz_grid(kmr, 24)
    assert np.abs(ucc_cell_diagnostic(kmr, grid=grid)).max() < 1e-12
    assert np.abs(ucc_cell_diagnostic(broken, grid=grid)).max() > 1e-5


def test_transport_report_fields(km):
    rep = transport_report(km, n=24)
    row = rep.row()
    assert row["model"] == "kane_mele"
    assert set(rep.chern_sectors) == {"up", "down"}
    assert rep.sigma_rot == 0.0
    assert rep.sigma_conv == rep.sigma_prop
