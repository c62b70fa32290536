"""Periodic finite-range tight-binding models with spin-1/2 orbitals.

A model is specified by a :class:`ModelSpec` (plain data, serializable) and
compiled into a :class:`LatticeModel`, which carries the hopping table as
dense ``M x M`` blocks indexed by cell offsets.

Hopping convention
------------------
A term ``Hopping(cell=g, source=a, target=b, amplitude=t)`` is the matrix
element ``<b, n+g | H | a, n> = t`` for every cell ``n``.  The real-space
kernel block is therefore ``K(g)[b, a] = t`` and the Bloch fiber is
``H(k) = sum_g K(g) exp(-i k.g)`` with ``g`` the Cartesian lattice vector.

Orbital ordering is site-major, spin-minor: ``(s0 up, s0 down, s1 up, ...)``.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import yaml

from .errors import (
    DegenerateLattice,
    HermiticityViolation,
    ModelError,
    RangeViolation,
    SpinPairingError,
)

SPINS = {"up": 0.5, "down": -0.5}
POSITION_CONVENTIONS = ("atomic", "cell")

PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)


@dataclass(frozen=True)
class Orbital:
    position: tuple[float, float]
    spin: str
    site: str = ""


@dataclass(frozen=True)
class Hopping:
    cell: tuple[int, int]
    source: int
    target: int
    amplitude: complex


@dataclass(frozen=True)
class ModelSpec:
    """Uncompiled model description.

    ``hopping_range`` is the declared bound R on ``max(|g1|, |g2|)``.
    """

    name: str
    a1: tuple[float, float]
    a2: tuple[float, float]
    orbitals: tuple[Orbital, ...]
    hoppings: tuple[Hopping, ...]
    mu: float = 0.0
    hopping_range: int = 1
    params: dict = field(default_factory=dict, compare=False)


@dataclass(frozen=True)
class SpinZOperator:
    """Diagonal ``S_z`` in the orbital basis (entries +-1/2)."""

    diagonal: np.ndarray

    @property
    def matrix(self) -> np.ndarray:
        return np.diag(self.diagonal).astype(complex)


@dataclass(frozen=True, eq=False)
class LatticeModel:
    """A compiled model.  Treat as immutable."""

    spec: ModelSpec
    lattice: np.ndarray      # rows a1, a2
    reciprocal: np.ndarray   # rows b1, b2 with a_i . b_j = 2 pi delta_ij
    offsets: np.ndarray      # (K, 2) integer cell offsets
    blocks: np.ndarray       # (K, M, M) kernel blocks K(g)
    positions: np.ndarray    # (M, 2) intracell orbital positions
    spins: np.ndarray        # (M,) +-1/2

    @property
    def name(self) -> str:
        return self.spec.name

    @property
    def n_orbitals(self) -> int:
        return len(self.spins)

    @property
    def mu(self) -> float:
        return self.spec.mu

    @property
    def cell_area(self) -> float:
        return abs(_cross(self.lattice[0], self.lattice[1]))

    @property
    def orientation(self) -> int:
        return 1 if _cross(self.lattice[0], self.lattice[1]) > 0 else -1

    def orbital_positions(self, convention: str = "atomic") -> np.ndarray:
        """Orbital coordinates inside cell 0 for a position convention.

        ``"atomic"`` places each orbital at its intracell position;
        ``"cell"`` places every orbital of a cell at the lattice point.
        """
        if convention == "atomic":
            return self.positions.copy()
        if convention == "cell":
            return np.zeros_like(self.positions)
        raise ValueError(f"unknown position convention {convention!r}")

    def kernel(self, gamma) -> np.ndarray:
        gamma = np.asarray(gamma)
        hit = np.all(self.offsets == gamma, axis=1)
        if not hit.any():
            return np.zeros((self.n_orbitals,) * 2, dtype=complex)
        return self.blocks[np.argmax(hit)].copy()

    def cartesian_offsets(self) -> np.ndarray:
        return self.offsets @ self.lattice

    def with_mu(self, mu: float) -> "LatticeModel":
        return compile_model(dataclasses.replace(self.spec, mu=float(mu)))


def _cross(u, v) -> float:
    return float(u[0] * v[1] - u[1] * v[0])


def compile_model(spec: ModelSpec, tol: float = 1e-12) -> LatticeModel:
    """Validate ``spec`` and build the dense hopping table."""
    lattice = np.array([spec.a1, spec.a2], dtype=float)
    if lattice.shape != (2, 2):
        raise ModelError("lattice vectors must be 2-vectors")
    area = _cross(lattice[0], lattice[1])
    if abs(area) <= 1e-12:
        raise DegenerateLattice(f"|a1 x a2| = {abs(area):.3g}")
    reciprocal = 2 * np.pi * np.linalg.inv(lattice).T

    n_orb = len(spec.orbitals)
    if n_orb == 0 or n_orb % 2:
        raise SpinPairingError(f"need an even, nonzero orbital count, got {n_orb}")
    spins = np.empty(n_orb)
    positions = np.empty((n_orb, 2))
    for i, orb in enumerate(spec.orbitals):
        if orb.spin not in SPINS:
            raise SpinPairingError(f"orbital {i}: spin label {orb.spin!r}")
        spins[i] = SPINS[orb.spin]
        positions[i] = orb.position
    for s in range(0, n_orb, 2):
        if spins[s] != 0.5 or spins[s + 1] != -0.5:
            raise SpinPairingError(f"orbitals {s},{s + 1} are not an (up, down) pair")
        if not np.allclose(positions[s], positions[s + 1], atol=1e-12):
            raise SpinPairingError(f"orbitals {s},{s + 1} differ in position")

    table: dict[tuple[int, int], np.ndarray] = {}
    for h in spec.hoppings:
        g = (int(h.cell[0]), int(h.cell[1]))
        if max(abs(g[0]), abs(g[1])) > spec.hopping_range:
            raise RangeViolation(f"hopping {h} exceeds range R={spec.hopping_range}")
        if not (0 <= h.source < n_orb and 0 <= h.target < n_orb):
            raise ModelError(f"hopping {h} references a missing orbital")
        block = table.setdefault(g, np.zeros((n_orb, n_orb), dtype=complex))
        block[h.target, h.source] += complex(h.amplitude)

    for g, block in table.items():
        partner = table.get((-g[0], -g[1]))
        partner = np.zeros_like(block) if partner is None else partner
        bad = np.argwhere(np.abs(partner - block.conj().T) > tol)
        if len(bad):
            a, b = bad[0]
            raise HermiticityViolation(
                f"term (cell={(-g[0], -g[1])}, source={b}, target={a}) is not the "
                f"conjugate partner of (cell={g}, source={a}, target={b})"
            )

    keys = sorted(g for g, b in table.items() if np.any(b != 0))
    if not keys:
        keys = [(0, 0)]
        table[(0, 0)] = np.zeros((n_orb, n_orb), dtype=complex)
    offsets = np.array(keys, dtype=int).reshape(-1, 2)
    blocks = np.array([table[g] for g in keys])
    return LatticeModel(spec, lattice, reciprocal, offsets, blocks, positions, spins)


def spin_z_operator(model: LatticeModel) -> SpinZOperator:
    return SpinZOperator(model.spins.copy())


def lattice_frame(model: LatticeModel) -> LatticeModel:
    """Same hopping table, re-expressed with the unit square as Bravais basis.

    Positions become integer lattice coordinates (plus reduced intracell
    offsets), the coordinate system used by the switching functions of the
    finite-sample conductance module.
    """
    reduced = model.positions @ np.linalg.inv(model.lattice)
    orbitals = tuple(
        dataclasses.replace(o, position=(float(r[0]), float(r[1])))
        for o, r in zip(model.spec.orbitals, reduced)
    )
    spec = dataclasses.replace(
        model.spec,
        name=f"{model.spec.name}@lattice",
        a1=(1.0, 0.0),
        a2=(0.0, 1.0),
        orbitals=orbitals,
    )
    return compile_model(spec)


# --------------------------------------------------------------------------
# built-in honeycomb models

# Bond along x1: A at the origin, B at (1, 0); nearest-neighbour distance 1.
# Right-handed basis (a1 x a2 > 0).
HONEYCOMB_A1 = (1.5, -np.sqrt(3) / 2)
HONEYCOMB_A2 = (1.5, np.sqrt(3) / 2)
HONEYCOMB_SITES = {"A": (0.0, 0.0), "B": (1.0, 0.0)}

SpinBlock = Callable[[np.ndarray], np.ndarray]


def _honeycomb_bonds():
    """Yield ``(source, target, cell, displacement, nu)`` for NN and NNN pairs.

    ``nu`` is 0 for nearest neighbours and the chirality sign
    ``sign((r_k - r_i) x (r_j - r_k))`` of the two-step path ``i -> k -> j``
    for next-nearest neighbours.
    """
    lat = np.array([HONEYCOMB_A1, HONEYCOMB_A2])
    names = list(HONEYCOMB_SITES)
    pos = np.array([HONEYCOMB_SITES[n] for n in names])
    cells = [(g1, g2) for g1 in range(-2, 3) for g2 in range(-2, 3)]

    def site(idx, g):
        return pos[idx] + np.array(g) @ lat

    for i in range(2):
        for j in range(2):
            for g in cells:
                d = site(j, g) - pos[i]
                dist = np.hypot(*d)
                if abs(dist - 1) < 1e-9:
                    yield i, j, g, d, 0
                elif abs(dist - np.sqrt(3)) < 1e-9:
                    mids = [
                        site(k, h) for k in range(2) for h in cells
                        if abs(np.hypot(*(site(k, h) - pos[i])) - 1) < 1e-9
                        and abs(np.hypot(*(site(j, g) - site(k, h))) - 1) < 1e-9
                    ]
                    (mid,) = mids
                    nu = int(np.sign(_cross(mid - pos[i], site(j, g) - mid)))
                    yield i, j, g, d, nu


def _honeycomb_spec(
    name: str,
    nn: SpinBlock,
    nnn: Callable[[np.ndarray, int], np.ndarray],
    onsite: Callable[[str], np.ndarray],
    mu: float,
    params: dict,
) -> ModelSpec:
    names = list(HONEYCOMB_SITES)
    orbitals = []
    for n in names:
        for s in ("up", "down"):
            orbitals.append(Orbital(HONEYCOMB_SITES[n], s, n))
    hoppings = []

    def add(i, j, g, block):
        for sp_t in range(2):
            for sp_s in range(2):
                t = complex(block[sp_t, sp_s])
                if t != 0:
                    hoppings.append(Hopping(g, 2 * i + sp_s, 2 * j + sp_t, t))

    for i, n in enumerate(names):
        add(i, i, (0, 0), onsite(n))
    for i, j, g, d, nu in _honeycomb_bonds():
        add(i, j, g, nn(d) if nu == 0 else nnn(d, nu))
    return ModelSpec(
        name=name,
        a1=HONEYCOMB_A1,
        a2=HONEYCOMB_A2,
        orbitals=tuple(orbitals),
        hoppings=tuple(hoppings),
        mu=mu,
        hopping_range=2,
        params=dict(params),
    )


def haldane_spec(t1=1.0, t2=0.1, phi=np.pi / 2, m_stagger=0.0, mu=0.0) -> ModelSpec:
    """Spin-doubled Haldane model.

    ``H = t1 sum_<ij> c+_j c_i + t2 sum_<<ij>> exp(i nu_ij phi) c+_j c_i
    + m sum_i xi_i c+_i c_i`` with ``xi = +1`` on A and ``-1`` on B.
    """
    if t1 == 0:
        raise ModelError("t1 must be nonzero")
    eye = np.eye(2, dtype=complex)
    return _honeycomb_spec(
        "haldane",
        nn=lambda d: t1 * eye,
        nnn=lambda d, nu: t2 * np.exp(1j * nu * phi) * eye,
        onsite=lambda s: (m_stagger if s == "A" else -m_stagger) * eye,
        mu=mu,
        params=dict(t1=t1, t2=t2, phi=phi, m_stagger=m_stagger),
    )


def kane_mele_spec(t=1.0, lambda_so=0.06, lambda_r=0.0, m_stagger=0.0, mu=0.0) -> ModelSpec:
    """Kane-Mele model with Rashba coupling.

    Hop ``i -> j`` with displacement ``d`` carries
    ``t`` (NN) + ``i lambda_r (s x d)_z`` (NN) and ``i lambda_so nu_ij s_z`` (NNN),
    where ``s`` are Pauli matrices.  Spin up alone is the Haldane model with
    ``t2 = lambda_so, phi = pi/2``.
    """
    if t == 0:
        raise ModelError("t must be nonzero")
    eye = np.eye(2, dtype=complex)

    def nn(d):
        return t * eye + 1j * lambda_r * (PAULI_X * d[1] - PAULI_Y * d[0])

    return _honeycomb_spec(
        "kane_mele",
        nn=nn,
        nnn=lambda d, nu: 1j * lambda_so * nu * PAULI_Z,
        onsite=lambda s: (m_stagger if s == "A" else -m_stagger) * eye,
        mu=mu,
        params=dict(t=t, lambda_so=lambda_so, lambda_r=lambda_r, m_stagger=m_stagger),
    )


def symmetry_broken_spec(base: ModelSpec, delta: float, axis_angle: float = np.pi / 4,
                         check_gap: bool = True) -> ModelSpec:
    """Anisotropic bond rescaling that breaks discrete rotations.

    Every hopping with displacement at angle ``theta`` is multiplied by
    ``1 + delta cos(2 (theta - axis))`` (``1 + delta`` along the axis,
    ``1 - delta`` perpendicular).  Bonds joining different sites use
    ``axis = axis_angle``; bonds joining a site to its own translates use
    ``axis = axis_angle + site_index * pi / 2``, so the two honeycomb
    sublattices are stretched along orthogonal axes.  Without that twist the
    rescaling is even under inversion through a bond centre and the
    per-orbital diagnostics of :func:`transport.ucc_cell_diagnostic` stay
    zero.  The factor is even in the displacement, so hermiticity is
    preserved.  Raises :class:`GapClosed` if ``check_gap`` and the perturbed
    model is gapless at ``base.mu``.
    """
    lattice = np.array([base.a1, base.a2])
    pos = np.array([o.position for o in base.orbitals])
    site_index = {s: i for i, s in enumerate(dict.fromkeys(o.site for o in base.orbitals))}
    hoppings = []
    for h in base.hoppings:
        d = np.array(h.cell) @ lattice + pos[h.target] - pos[h.source]
        if np.hypot(*d) < 1e-12:
            factor = 1.0
        else:
            src, dst = base.orbitals[h.source].site, base.orbitals[h.target].site
            axis = axis_angle + (site_index[src] * np.pi / 2 if src == dst else 0.0)
            theta = np.arctan2(d[1], d[0])
            factor = 1.0 + delta * np.cos(2 * (theta - axis))
        hoppings.append(dataclasses.replace(h, amplitude=complex(h.amplitude) * factor))
    params = dict(base.params, delta=delta, axis_angle=axis_angle)
    spec = dataclasses.replace(
        base, name=f"{base.name}_broken", hoppings=tuple(hoppings), params=params
    )
    if check_gap and delta != 0:
        from .bloch import sample_bz_grid, spectral_gap_scan
        from .errors import GapClosed

        model = compile_model(spec)
        report = spectral_gap_scan(model, spec.mu, sample_bz_grid(model, 48))
        if not report.ok:
            raise GapClosed(f"delta={delta} closes the gap (gap={report.gap:.3g})")
    return spec


def square_spec(t=1.0, onsite=0.0, mu=0.0) -> ModelSpec:
    """One spinful site per unit cell of the square lattice, NN hopping ``-t``."""
    hoppings = []
    for s in range(2):
        hoppings.append(Hopping((0, 0), s, s, complex(onsite)))
        for g in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            hoppings.append(Hopping(g, s, s, complex(-t)))
    return ModelSpec(
        name="square",
        a1=(1.0, 0.0),
        a2=(0.0, 1.0),
        orbitals=(Orbital((0.0, 0.0), "up", "s"), Orbital((0.0, 0.0), "down", "s")),
        hoppings=tuple(hoppings),
        mu=mu,
        hopping_range=1,
        params=dict(t=t, onsite=onsite),
    )


BUILTIN_MODELS = {
    "haldane": (haldane_spec, dict(t1=1.0, t2=0.1, phi=np.pi / 2, m_stagger=0.0)),
    "haldane_trivial": (haldane_spec, dict(t1=1.0, t2=0.0, phi=0.0, m_stagger=0.5)),
    "kane_mele": (kane_mele_spec, dict(t=1.0, lambda_so=0.06, lambda_r=0.0, m_stagger=0.0)),
    "kane_mele_rashba": (kane_mele_spec, dict(t=1.0, lambda_so=0.06, lambda_r=0.05, m_stagger=0.0)),
    "kane_mele_rashba_stagger": (
        kane_mele_spec, dict(t=1.0, lambda_so=0.06, lambda_r=0.05, m_stagger=0.1)),
    "kane_mele_rashba_broken": (None, dict(delta=0.2)),
    "square": (square_spec, dict(t=1.0, onsite=0.0)),
}


def builtin_spec(name: str, **overrides) -> ModelSpec:
    """Build a named model; keyword overrides replace default parameters."""
    if name not in BUILTIN_MODELS:
        raise KeyError(f"unknown model {name!r}; known: {sorted(BUILTIN_MODELS)}")
    factory, defaults = BUILTIN_MODELS[name]
    params = dict(defaults)
    if factory is None:
        params = dict(BUILTIN_MODELS["kane_mele_rashba"][1], **defaults)
    unknown = set(overrides) - set(params) - {"mu"}
    if unknown:
        raise KeyError(f"unknown parameters for {name!r}: {sorted(unknown)}")
    params.update(overrides)
    if factory is None:
        delta = params.pop("delta")
        base = kane_mele_spec(**params)
        return dataclasses.replace(symmetry_broken_spec(base, delta), name=name)
    spec = factory(**params)
    return dataclasses.replace(spec, name=name)


# --------------------------------------------------------------------------
# model files

def spec_to_dict(spec: ModelSpec) -> dict:
    return {
        "name": spec.name,
        "lattice": {"a1": list(map(float, spec.a1)), "a2": list(map(float, spec.a2)),
                    "range": int(spec.hopping_range)},
        "orbitals": [
            {"site": o.site, "position": list(map(float, o.position)), "spin": o.spin}
            for o in spec.orbitals
        ],
        "hoppings": [
            {"cell": [int(h.cell[0]), int(h.cell[1])], "source": int(h.source),
             "target": int(h.target),
             "amplitude": [complex(h.amplitude).real, complex(h.amplitude).imag]}
            for h in spec.hoppings
        ],
        "fermi": {"mu": float(spec.mu)},
    }


def spec_from_dict(data: dict) -> ModelSpec:
    try:
        lat = data["lattice"]
        orbitals = tuple(
            Orbital(tuple(map(float, o["position"])), str(o["spin"]), str(o.get("site", "")))
            for o in data["orbitals"]
        )
        hoppings = tuple(
            Hopping(tuple(int(c) for c in h["cell"]), int(h["source"]), int(h["target"]),
                    complex(float(h["amplitude"][0]), float(h["amplitude"][1])))
            for h in data["hoppings"]
        )
        return ModelSpec(
            name=str(data.get("name", "model")),
            a1=tuple(map(float, lat["a1"])),
            a2=tuple(map(float, lat["a2"])),
            orbitals=orbitals,
            hoppings=hoppings,
            mu=float(data.get("fermi", {}).get("mu", 0.0)),
            hopping_range=int(lat.get("range", 1)),
        )
    except (KeyError, TypeError, IndexError) as exc:
        raise ModelError(f"malformed model description: {exc!r}") from exc


def dump_model_file(spec: ModelSpec, path) -> None:
    Path(path).write_text(yaml.safe_dump(spec_to_dict(spec), sort_keys=False))


def load_model_file(path) -> ModelSpec:
    return spec_from_dict(yaml.safe_load(Path(path).read_text()))
