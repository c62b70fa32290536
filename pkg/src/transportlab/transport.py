"""Conductivities and torque expectations from Bloch fibers.

Units: hbar = 1 and unit charge.  With ``[X_j, A](k) = i dA/dk_j`` the
double-commutator formula becomes
``sigma_Hall = -i (2 pi)^-2 int tr(P [d_1 P, d_2 P]) dk = -C / (2 pi)``
where ``C = (2 pi)^-1 int i tr(P [d_1 P, d_2 P]) dk`` is the Chern number
of the occupied bands (Berry curvature ``-2 Im <d_1 u|d_2 u>``).
:func:`chern_number_oracle` returns ``C`` in this convention.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .bloch import FermiSea, KGrid, _dag, fiber_hamiltonian
from .errors import GapClosed, TransportLabError
from .model import LatticeModel
from .neass import NeassFirstOrder, first_order_neass, loglog_slope, neass_at_epsilon
from .tpuv import kernel_at_origin, tpuv_periodic, tpuv_position_weighted

REALITY_TOL = 1e-9


class ImaginaryResidue(TransportLabError):
    """A quantity that must be real came out with a sizeable imaginary part."""


def _real(value: complex, what: str, tol: float = REALITY_TOL) -> float:
    if abs(value.imag) > tol:
        raise ImaginaryResidue(f"{what}: imaginary part {value.imag:.3e}")
    return float(value.real)


def _comm(a, b):
    return a @ b - b @ a


def spin_sector(model: LatticeModel, spin: str) -> LatticeModel:
    """Restrict a spin-conserving model to one spin species.

    The result is a spinless table (not spin-paired) usable with
    :class:`FermiSea`; it is not a valid input for :func:`compile_model`.
    """
    keep = model.spins > 0 if spin == "up" else model.spins < 0
    cross = model.blocks[:, keep][:, :, ~keep]
    if np.abs(cross).max(initial=0.0) > 1e-14:
        raise ValueError(f"{model.name}: [H, S_z] != 0, spin sectors are coupled")
    return dataclasses.replace(
        model,
        spec=dataclasses.replace(model.spec, name=f"{model.name}[{spin}]"),
        blocks=model.blocks[:, keep][:, :, keep],
        positions=model.positions[keep],
        spins=model.spins[keep],
    )


# --------------------------------------------------------------------------
# charge

def _hall_value(sea: FermiSea) -> complex:
    p = sea.projector
    c1, c2 = sea.x_commutator_p
    # i P [[P, X1], [P, X2]] with [P, X_j] = -c_j
    integrand = 1j * p @ _comm(c1, c2)
    value, _ = tpuv_periodic(integrand, sea.model.cell_area)
    return value


def hall_conductivity_dcf(model: LatticeModel, mu: float | None = None,
                          grid: KGrid | None = None, sector: str | None = None,
                          positions: str = "cell", sea: FermiSea | None = None) -> float:
    """``sigma_Hall = i tau(P [[P, X_1], [P, X_2]])``; ``2 pi sigma_Hall = -C``."""
    if sea is None:
        target = spin_sector(model, sector) if sector else model
        sea = FermiSea(target, grid, mu, positions=positions)
    return _real(_hall_value(sea), "sigma_Hall")


def chern_number_oracle(model: LatticeModel, mu: float | None = None,
                        grid: KGrid | None = None, sector: str | None = None) -> float:
    """Link-variable (plaquette Berry flux) Chern number of the occupied bands.

    Independent of any derivative: only overlaps of occupied eigenvectors at
    neighbouring grid nodes enter.  Returns the (near-integer) float.
    """
    target = spin_sector(model, sector) if sector else model
    mu = model.mu if mu is None else mu
    e, v = np.linalg.eigh(fiber_hamiltonian(target, grid.kpoints))
    counts = (e < mu).sum(axis=-1)
    if not np.all(counts == counts.flat[0]):
        raise GapClosed(f"{target.name}: band count below mu varies over the grid")
    n_occ = int(counts.flat[0])
    if n_occ == 0:
        return 0.0
    u = v[..., :n_occ]

    def link(axis):
        nxt = np.roll(u, -1, axis=axis)
        return np.linalg.det(_dag(u) @ nxt)

    u1, u2 = link(0), link(1)
    loop = u1 * np.roll(u2, -1, axis=0) * np.roll(u1, -1, axis=1).conj() * u2.conj()
    flux = np.angle(loop).sum() / (2 * np.pi)
    # the plaquette phase sums to minus the Berry-curvature Chern number on a
    # right-handed (b1, b2) grid
    return float(-model.orientation * flux)


def charge_current_response(neass: NeassFirstOrder) -> float:
    """``Re tau(J_1 Pi_1)`` with ``J_1 = i [H_0, X_1]``: the NEASS route to sigma_Hall."""
    sea = neass.sea
    current = -1j * sea.x_commutator_h[0]
    value, _ = tpuv_periodic(current @ neass.pi1, sea.model.cell_area)
    return float(value.real)


# --------------------------------------------------------------------------
# spin

@dataclass(frozen=True)
class SpinConductivities:
    conv: float
    rot: float
    prop: float
    positions: str
    origin: tuple[float, float]
    imag: dict = field(default_factory=dict)


def _sz(model: LatticeModel) -> np.ndarray:
    return np.diag(model.spins).astype(complex)


def spin_conductivities(model: LatticeModel, mu: float | None = None,
                        grid: KGrid | None = None, positions: str = "atomic",
                        origin=(0.0, 0.0),
                        neass: NeassFirstOrder | None = None) -> SpinConductivities:
    """Conventional, rotation and proper spin conductivities at first order.

    ``conv = Re tau(i P [[X1, P] Sz, [X2, P]])
             + Re tau(i [H, X1^D] Sz^OD Pi_1 + i X1^OD [Sz, H] Pi_1)``,
    ``rot = Re tau(X1 i [H, Sz] Pi_1)`` and ``prop = conv + rot``.
    ``positions`` fixes the position operators used throughout (including
    the perturbing ``X_2`` inside ``Pi_1``).
    """
    if neass is None:
        neass = first_order_neass(model, grid, mu, positions=positions)
    sea = neass.sea
    if sea.positions != positions:
        raise ValueError(f"NEASS built with {sea.positions!r} positions, asked for {positions!r}")
    area = model.cell_area
    p, q, h, pi1 = sea.projector, sea.complement, sea.h, neass.pi1
    sz = _sz(model)
    c1, c2 = sea.x_commutator_p
    term1 = 1j * p @ _comm(c1 @ sz, c2)
    x1_od = -_comm(p, c1)
    h_x1 = -sea.x_commutator_h[0]
    h_x1_d = h_x1 - _comm(h, x1_od)
    sz_od = p @ sz @ q + q @ sz @ p
    term2 = 1j * h_x1_d @ sz_od @ pi1 + 1j * x1_od @ _comm(sz, h) @ pi1
    t1, _ = tpuv_periodic(term1, area)
    t2, _ = tpuv_periodic(term2, area)
    torque_pi1 = 1j * _comm(h, sz) @ pi1
    rot = tpuv_position_weighted(torque_pi1, model, 0, positions, origin)
    conv = t1.real + t2.real
    return SpinConductivities(
        conv=float(conv),
        rot=float(rot.real),
        prop=float(conv + rot.real),
        positions=positions,
        origin=tuple(map(float, origin)),
        imag={"conv": float(t1.imag + t2.imag), "rot": float(rot.imag)},
    )


def spin_current_responses(neass: NeassFirstOrder, origin=(0.0, 0.0)) -> dict[str, float]:
    """Direct NEASS expectations used to cross-check :func:`spin_conductivities`.

    ``conv_direct = Re tau(J_conv Pi_1)`` with
    ``J_conv = (i[H, X1] Sz + Sz i[H, X1]) / 2``, and
    ``prop_direct = Re tau(i [H, X1 Sz] Pi_1)`` expanded as
    ``i [H, X1] Sz Pi_1 + X1 i [H, Sz] Pi_1``.
    """
    sea = neass.sea
    model = sea.model
    sz = _sz(model)
    velocity = 1j * -sea.x_commutator_h[0]
    j_conv = 0.5 * (velocity @ sz + sz @ velocity)
    conv, _ = tpuv_periodic(j_conv @ neass.pi1, model.cell_area)
    a, _ = tpuv_periodic(velocity @ sz @ neass.pi1, model.cell_area)
    rot = tpuv_position_weighted(1j * _comm(sea.h, sz) @ neass.pi1, model, 0,
                                 sea.positions, origin)
    return {"conv_direct": float(conv.real), "prop_direct": float(a.real + rot.real)}


def _torque_response_fibers(sea: FermiSea) -> np.ndarray:
    p, q = sea.projector, sea.complement
    sz = _sz(sea.model)
    c2 = sea.x_commutator_p[1]
    w = q @ c2 @ p
    v = p @ c2 @ q
    # i P [[P, Sz], [P, X2]] P  ==  -i (P Sz Q [X2,P] P + P [X2,P] Q Sz P)
    return -1j * (p @ sz @ w + v @ sz @ p)


def spin_torque_response(model: LatticeModel, mu: float | None = None,
                         grid: KGrid | None = None, positions: str = "cell",
                         sea: FermiSea | None = None) -> float:
    """``tau(T_s)`` with ``T_s = i P [[P, Sz], [P, X2]] P``."""
    if sea is None:
        sea = FermiSea(model, grid, mu, positions=positions)
    value, _ = tpuv_periodic(_torque_response_fibers(sea), sea.model.cell_area)
    return _real(value, "tau(T_s)")


def kubo_like_spin_conductivity(model: LatticeModel, mu: float | None = None,
                                grid: KGrid | None = None, positions: str = "cell",
                                origin=(0.0, 0.0), sea: FermiSea | None = None) -> float:
    """``sigma_K^s = tau(i P [[P, X1 Sz], [P, X2]] P)``.

    ``X1 Sz`` is not a periodic commutator partner; moving ``X1`` outwards
    splits the operator into ``X1 T_s`` (evaluated as a position-weighted
    trace) plus the periodic remainder
    ``-i ([P, X1] Sz Q [X2, P] P + P [X2, P] Q Sz [X1, P])``.
    """
    if sea is None:
        sea = FermiSea(model, grid, mu, positions=positions)
    p, q = sea.projector, sea.complement
    sz = _sz(sea.model)
    c1, c2 = sea.x_commutator_p
    w = q @ c2 @ p
    v = p @ c2 @ q
    remainder = -1j * (-c1 @ sz @ w + v @ sz @ c1)
    periodic, _ = tpuv_periodic(remainder, sea.model.cell_area)
    weighted = tpuv_position_weighted(_torque_response_fibers(sea), sea.model, 0,
                                      positions, origin)
    return _real(periodic + weighted, "sigma_K^s")


@dataclass(frozen=True)
class TorqueScan:
    eps: np.ndarray
    values: np.ndarray       # complex tau(i [H, Sz] Pi_1^eps)
    first_order: complex     # tau(i [H, Sz] Pi_1)
    slope: float


def spin_torque_expectation(model: LatticeModel, mu: float | None = None,
                            grid: KGrid | None = None,
                            eps_list=(1e-1, 3e-2, 1e-2, 3e-3, 1e-3),
                            positions: str = "atomic",
                            neass: NeassFirstOrder | None = None) -> TorqueScan:
    """Spin torque ``tau(i [H_0, S_z] Pi^eps)`` in the first-order NEASS."""
    if neass is None:
        neass = first_order_neass(model, grid, mu, positions=positions)
    sea = neass.sea
    torque = 1j * _comm(sea.h, _sz(sea.model))
    first, _ = tpuv_periodic(torque @ neass.pi1, sea.model.cell_area)
    values = []
    for eps in eps_list:
        val, _ = tpuv_periodic(torque @ neass_at_epsilon(neass, eps), sea.model.cell_area)
        values.append(val)
    values = np.asarray(values)
    eps = np.asarray(eps_list, float)
    return TorqueScan(eps, values, first, loglog_slope(eps, np.abs(values)))


def ucc_cell_diagnostic(model: LatticeModel, mu: float | None = None,
                        grid: KGrid | None = None, positions: str = "atomic",
                        neass: NeassFirstOrder | None = None) -> np.ndarray:
    """Per-orbital traces ``<a, 0| i [H, Sz] Pi_1 |a, 0>`` (rank-one cell pieces)."""
    if neass is None:
        neass = first_order_neass(model, grid, mu, positions=positions)
    sea = neass.sea
    torque_pi1 = 1j * _comm(sea.h, _sz(sea.model)) @ neass.pi1
    return np.diag(kernel_at_origin(torque_pi1)).copy()


# --------------------------------------------------------------------------
# report

@dataclass
class TransportReport:
    model: str
    n: int
    mu: float
    gap: float
    sigma_hall: float
    chern: float
    sigma_conv: float
    sigma_rot: float
    sigma_prop: float
    sigma_rot_cell: float
    sigma_k_s: float
    torque_response: float
    torque_first_order: float
    positions: str
    imag: dict = field(default_factory=dict)
    chern_sectors: dict = field(default_factory=dict)
    sigma_hall_sectors: dict = field(default_factory=dict)
    ucc: list = field(default_factory=list)

    def row(self) -> dict:
        return {
            "model": self.model, "N": self.n, "mu": self.mu, "gap": self.gap,
            "sigma_hall": self.sigma_hall, "chern": self.chern,
            "sigma_conv": self.sigma_conv, "sigma_rot": self.sigma_rot,
            "sigma_prop": self.sigma_prop, "sigma_rot_cell": self.sigma_rot_cell,
            "sigma_K_s": self.sigma_k_s, "tau_T_s": self.torque_response,
            "tau_torque_pi1": self.torque_first_order, "positions": self.positions,
        }


def transport_report(model: LatticeModel, n: int = 48, mu: float | None = None,
                     positions: str = "atomic", origin=(0.0, 0.0)) -> TransportReport:
    from .bloch import sample_bz_grid

    grid = sample_bz_grid(model, n)
    mu = model.mu if mu is None else float(mu)
    neass = first_order_neass(model, grid, mu, positions=positions)
    cell_neass = neass if positions == "cell" else first_order_neass(model, grid, mu, "cell")
    sigma = spin_conductivities(model, positions=positions, origin=origin, neass=neass)
    sigma_cell = spin_conductivities(model, positions="cell", origin=origin, neass=cell_neass)
    scan = spin_torque_expectation(model, eps_list=(), neass=neass)
    ucc = ucc_cell_diagnostic(model, neass=neass)

    hall_raw = _hall_value(cell_neass.sea)
    tts_raw, _ = tpuv_periodic(_torque_response_fibers(cell_neass.sea), model.cell_area)
    report = TransportReport(
        model=model.name, n=n, mu=mu, gap=neass.sea.gap,
        sigma_hall=hall_raw.real,
        chern=chern_number_oracle(model, mu, grid),
        sigma_conv=sigma.conv, sigma_rot=sigma.rot, sigma_prop=sigma.prop,
        sigma_rot_cell=sigma_cell.rot,
        sigma_k_s=kubo_like_spin_conductivity(model, sea=cell_neass.sea),
        torque_response=tts_raw.real,
        torque_first_order=float(abs(scan.first_order)),
        positions=positions,
        imag={"sigma_hall": float(hall_raw.imag), "tau_T_s": float(tts_raw.imag),
              "sigma_conv": sigma.imag["conv"], "sigma_rot": sigma.imag["rot"]},
        ucc=[float(abs(x)) for x in ucc],
    )
    if np.abs(model.blocks[:, model.spins > 0][:, :, model.spins < 0]).max() == 0:
        for s in ("up", "down"):
            report.chern_sectors[s] = chern_number_oracle(model, mu, grid, sector=s)
            report.sigma_hall_sectors[s] = hall_conductivity_dcf(model, mu, grid, sector=s)
    return report
