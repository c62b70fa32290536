"""Finite-sample conductances built from switching functions.

A sample is an ``L x L`` block of unit cells with open boundaries.  Every
orbital of cell ``(n1, n2)`` sits at the cell coordinate
``x_j = n_j - (L - 1) / 2``, so the switching lines ``x_j = 0`` run through
the middle of the sample.  Position operators of the matching periodic
conductivities use the same cell-uniform convention on the unit-square
lattice frame (:func:`transportlab.model.lattice_frame`).

Traces are restricted to a central window.  On a finite matrix the full
trace of the double commutator vanishes identically,
``Tr(P[[P, A], [P, B]]) = -Tr(P [A, B]) = 0`` for commuting diagonal ``A``
and ``B``; the bulk contribution near the crossing of the two switching
lines is cancelled exactly by boundary terms where the lines meet the
sample edges.  The window keeps the former and discards the latter.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import erf

from .bloch import sample_bz_grid, spectral_gap_scan
from .errors import EigenvalueAtFermi, GapClosed, SampleTooSmall
from .model import LatticeModel, lattice_frame
from .transport import hall_conductivity_dcf, kubo_like_spin_conductivity

PROFILE_KINDS = ("poly", "erf")
ERF_SCALE = 5.3  # erf(5.3) = 1 - 6e-14, so the clamp at +-l jumps by < 1e-12
DEFAULT_HALF_WIDTH = 2.0
DEFAULT_MARGIN = 3.0
CERTIFICATE_WEIGHT = 0.05
IMAG_TOL = 1e-9


# --------------------------------------------------------------------------
# switching profiles

def _smoothstep(t: np.ndarray, order: int) -> np.ndarray:
    """Odd-order polynomial ramp on [0, 1] with ``(order - 1) / 2`` flat derivatives."""
    from math import comb

    n = (order - 1) // 2
    t = np.clip(t, 0.0, 1.0)
    total = np.zeros_like(t)
    for k in range(n + 1):
        total += comb(n + k, k) * comb(2 * n + 1, n - k) * (-t) ** k
    return t ** (n + 1) * total


@dataclass(frozen=True)
class SwitchingProfile:
    """Monotone ramp from 0 (``x <= center - l``) to 1 (``x >= center + l``)."""

    kind: str
    half_width: float
    center: float = 0.0
    order: int = 5

    def __post_init__(self):
        if self.kind not in PROFILE_KINDS:
            raise ValueError(f"unknown profile kind {self.kind!r}")
        if not self.half_width > 0:
            raise ValueError("half-width must be positive")
        if self.kind == "poly" and (self.order < 3 or self.order % 2 == 0):
            raise ValueError("polynomial order must be odd and >= 3")

    @property
    def label(self) -> str:
        tag = f"poly{self.order}" if self.kind == "poly" else "erf"
        return f"{tag}(l={self.half_width:g})"

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        l = self.half_width
        s = x - self.center
        if self.kind == "poly":
            return _smoothstep((s + l) / (2 * l), self.order)
        value = 0.5 * (1.0 + erf(ERF_SCALE * s / l))
        return np.where(s <= -l, 0.0, np.where(s >= l, 1.0, value))


def make_switching_profile(kind: str, l: float, center: float = 0.0,
                           order: int = 5) -> SwitchingProfile:
    return SwitchingProfile(kind, float(l), float(center), int(order))


def parse_profile(text: str, l: float = DEFAULT_HALF_WIDTH) -> SwitchingProfile:
    """``"poly5"``, ``"poly7"`` or ``"erf"``; optional ``":l"`` suffix sets the half-width."""
    name, _, width = text.partition(":")
    l = float(width) if width else l
    if name == "erf":
        return make_switching_profile("erf", l)
    if name.startswith("poly"):
        return make_switching_profile("poly", l, order=int(name[4:] or 5))
    raise ValueError(f"cannot parse switching profile {text!r}")


# --------------------------------------------------------------------------
# finite samples

def open_boundary_hamiltonian(model: LatticeModel, L: int) -> np.ndarray:
    """Dense Hamiltonian of an ``L x L`` block of cells, index ``(n1 L + n2) M + a``."""
    m = model.n_orbitals
    n1, n2 = (a.ravel() for a in np.meshgrid(np.arange(L), np.arange(L), indexing="ij"))
    h = np.zeros((L * L, m, L * L, m), dtype=complex)
    for (g1, g2), block in zip(model.offsets, model.blocks):
        inside = (n1 + g1 >= 0) & (n1 + g1 < L) & (n2 + g2 >= 0) & (n2 + g2 < L)
        source = np.flatnonzero(inside)
        target = (n1[inside] + g1) * L + (n2[inside] + g2)
        h[target, :, source, :] += block
    return h.reshape(L * L * m, L * L * m)


@dataclass(eq=False)
class SampleOperatorSet:
    model: LatticeModel
    L: int
    mu: float
    hamiltonian: np.ndarray
    coords: np.ndarray        # (dim, 2) cell-uniform coordinates
    atomic_coords: np.ndarray  # (dim, 2) with intracell offsets
    spins: np.ndarray         # (dim,)
    energies: np.ndarray
    occupied: np.ndarray      # (dim, n_occ) eigenvectors below mu
    bulk_gap: float
    in_gap: np.ndarray        # indices of eigenvalues within half the bulk gap of mu
    in_gap_central_weight: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.spins)

    @property
    def projector(self) -> np.ndarray:
        return self.occupied @ self.occupied.conj().T

    @property
    def edge_flag(self) -> bool:
        """In-gap states are present (allowed, e.g. chiral or helical edge modes)."""
        return len(self.in_gap) > 0

    @property
    def bulk_certificate(self) -> bool:
        """Deep in-gap states live on the boundary.

        Every eigenstate within a quarter of the bulk gap of ``mu`` must carry
        less than 5% of its weight in the central half-sample
        ``|x1|, |x2| <= L/4``.  States closer to the band edges hybridize
        with the bulk continuum of the finite sample and are not tested.
        """
        deep = np.abs(self.energies[self.in_gap] - self.mu) < self.bulk_gap / 4
        return bool(np.all(self.in_gap_central_weight[deep] < CERTIFICATE_WEIGHT))

    def strip_mask(self, w1: float, w2: float | None = None) -> np.ndarray:
        """Orbitals with ``|x1| <= w1`` (and ``|x2| <= w2`` when given)."""
        mask = np.abs(self.coords[:, 0]) <= w1
        if w2 is not None:
            mask &= np.abs(self.coords[:, 1]) <= w2
        return mask

    def switching(self, profile: SwitchingProfile, j: int) -> np.ndarray:
        return profile(self.coords[:, j])


def build_finite_sample(model: LatticeModel, L: int, mu: float | None = None,
                        max_half_width: float = DEFAULT_HALF_WIDTH,
                        bulk_grid: int = 48) -> SampleOperatorSet:
    """Assemble and diagonalize an open-boundary ``L x L`` sample.

    ``model`` is used as given; pass :func:`lattice_frame` of a model to get
    cell coordinates equal to lattice indices.  ``max_half_width`` is the
    largest switching half-width that will be used on this sample.
    """
    if L < 3:
        raise SampleTooSmall("need L >= 3")
    if L < 4 * max_half_width:
        raise SampleTooSmall(f"L={L} < 4 * l = {4 * max_half_width:g}")
    mu = model.mu if mu is None else float(mu)
    gap_report = spectral_gap_scan(model, mu, sample_bz_grid(model, bulk_grid))
    if not gap_report.ok:
        raise GapClosed(f"{model.name}: mu={mu} not in a bulk gap")
    h = open_boundary_hamiltonian(model, L)
    e, v = np.linalg.eigh(h)
    if np.any(np.abs(e - mu) < 1e-9):
        raise EigenvalueAtFermi(f"L={L}: sample eigenvalue within 1e-9 of mu={mu}")
    m = model.n_orbitals
    cells = np.stack(np.meshgrid(np.arange(L), np.arange(L), indexing="ij"), -1).reshape(-1, 2)
    coords = np.repeat(cells - (L - 1) / 2, m, axis=0).astype(float)
    atomic = coords + np.tile(model.positions, (L * L, 1))
    spins = np.tile(model.spins, L * L)
    in_gap = np.flatnonzero(np.abs(e - mu) < gap_report.gap / 2)
    central = np.all(np.abs(coords) <= L / 4, axis=1)
    weight = (np.abs(v[:, in_gap]) ** 2)[central].sum(axis=0)
    return SampleOperatorSet(model, L, mu, h, coords, atomic, spins, e, v[:, e < mu],
                             gap_report.gap, in_gap, weight)


def _window_density(sample: SampleOperatorSet, a: np.ndarray, b: np.ndarray,
                    rows: np.ndarray) -> np.ndarray:
    """Diagonal of ``i P [[P, A], [P, B]] P`` on ``rows`` for diagonal ``A``, ``B``.

    With ``P = V V^+`` and commuting diagonal ``A``, ``B`` the operator equals
    ``i V [V^+ A V, V^+ B V] V^+``.
    """
    v = sample.occupied
    va = v.conj().T @ (a[:, None] * v)
    vb = v.conj().T @ (b[:, None] * v)
    core = va @ vb - vb @ va
    vr = v[rows]
    return 1j * np.einsum("ia,ia->i", vr @ core, vr.conj())


def _cell_sum(sample: SampleOperatorSet, density: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Sum an orbital-resolved density into a cell grid indexed by (n1, n2)."""
    L, m = sample.L, sample.model.n_orbitals
    full = np.zeros(sample.dim, dtype=complex)
    full[rows] = density
    return full.reshape(L, L, m).sum(axis=-1)


def default_window(L: int, margin: float = DEFAULT_MARGIN) -> float:
    """Half-width of the central trace window: ``L/2 - margin`` cells from the centre."""
    return L / 2 - margin


@dataclass(frozen=True)
class HallConductance:
    value: float
    imag: float
    window: float
    table: list  # (window half-width, value)


def hall_conductance(sample: SampleOperatorSet, profile1: SwitchingProfile,
                     profile2: SwitchingProfile | None = None,
                     window: float | None = None) -> HallConductance:
    """``G_Hall = i Tr(chi P [[P, Lambda_1], [P, Lambda_2]] chi)``.

    ``chi`` projects on the central box ``|x1|, |x2| <= window``; the table
    lists the box trace for every admissible smaller box.
    """
    profile2 = profile1 if profile2 is None else profile2
    window = default_window(sample.L) if window is None else window
    lam1 = sample.switching(profile1, 0)
    lam2 = sample.switching(profile2, 1)
    rows = np.flatnonzero(sample.strip_mask(window, window))
    cells = _cell_sum(sample, _window_density(sample, lam1, lam2, rows), rows)
    xs = np.arange(sample.L) - (sample.L - 1) / 2
    table = []
    for w in sorted({float(abs(x)) for x in xs if abs(x) <= window}):
        sel = np.abs(xs) <= w
        table.append((w, complex(cells[np.ix_(sel, sel)].sum())))
    value = table[-1][1]
    if abs(value.imag) > IMAG_TOL:
        raise ArithmeticError(f"G_Hall imaginary part {value.imag:.2e}")
    return HallConductance(value.real, value.imag, window,
                           [(w, g.real) for w, g in table])


@dataclass(frozen=True)
class SpinConductance:
    value: float
    imag: float
    window: float
    table: list        # (strip half-width w1, value)
    tail_slope: float  # least-squares slope of the outer half of the table

    def rows(self):
        return list(self.table)


def kubo_like_spin_conductance(sample: SampleOperatorSet, profile1: SwitchingProfile,
                               profile2: SwitchingProfile | None = None,
                               strip_halfwidth: float | None = None,
                               window2: float | None = None) -> SpinConductance:
    """``G_K^s = Tr(chi i P [[P, Lambda_1 S_z], [P, Lambda_2]] P chi)``.

    ``chi`` is the strip ``|x1| <= w1`` cut at ``|x2| <= window2``.  The
    table follows ``w1`` outward up to ``strip_halfwidth``; a nonzero
    ``tau(T_s)`` would show up as a linear growth, measured by
    ``tail_slope`` (fit over the outer half of the table).
    """
    profile2 = profile1 if profile2 is None else profile2
    w_max = default_window(sample.L) if strip_halfwidth is None else strip_halfwidth
    w2 = default_window(sample.L) if window2 is None else window2
    if w_max < 1:
        raise SampleTooSmall(f"strip half-width {w_max} leaves no room for a tail")
    lam1 = sample.switching(profile1, 0) * sample.spins
    lam2 = sample.switching(profile2, 1)
    rows = np.flatnonzero(sample.strip_mask(w_max, w2))
    cells = _cell_sum(sample, _window_density(sample, lam1, lam2, rows), rows)
    xs = np.arange(sample.L) - (sample.L - 1) / 2
    column = cells.sum(axis=1)
    widths = sorted({float(abs(x)) for x in xs if abs(x) <= w_max})
    table = [(w, complex(column[np.abs(xs) <= w].sum())) for w in widths]
    value = table[-1][1]
    if abs(value.imag) > IMAG_TOL:
        raise ArithmeticError(f"G_K^s imaginary part {value.imag:.2e}")
    tail = table[len(table) // 2:]
    if len(tail) >= 2:
        slope = float(np.polyfit([w for w, _ in tail], [g.real for _, g in tail], 1)[0])
    else:
        slope = float("nan")
    return SpinConductance(value.real, value.imag, w2, [(w, g.real) for w, g in table], slope)


def commutator_decay_rate(sample: SampleOperatorSet, profile: SwitchingProfile, j: int = 0):
    """Decay of ``[P, Lambda_j]`` away from the switching line ``x_j = 0``.

    Returns ``(distances, max_elements, rate)`` where ``max_elements[d]`` is
    the largest matrix element in rows at distance ``d`` cells beyond the
    ramp region and ``rate`` the fitted exponential rate over the bulk part
    (rows within the central half in the other direction).
    """
    lam = sample.switching(profile, j)
    p = sample.projector
    comm = p * lam[None, :] - lam[:, None] * p
    other = np.abs(sample.coords[:, 1 - j]) <= sample.L / 4
    dist = np.abs(sample.coords[:, j]) - profile.half_width
    ds, vals = [], []
    for d in np.unique(np.round(dist[dist > 0], 6)):
        rows = other & np.isclose(dist, d)
        if d > sample.L / 4 - profile.half_width:
            break
        ds.append(float(d))
        vals.append(float(np.abs(comm[rows]).max()))
    ds, vals = np.asarray(ds), np.asarray(vals)
    rate = float(-np.polyfit(ds, np.log(vals), 1)[0]) if len(ds) >= 2 else float("nan")
    return ds, vals, rate


def exponential_rate(L_values, deviations) -> tuple[float, float]:
    """Fit ``|dev| = C exp(-c L)``; returns ``(c, C)``."""
    L_values = np.asarray(L_values, float)
    dev = np.abs(np.asarray(deviations, float))
    slope, intercept = np.polyfit(L_values, np.log(np.maximum(dev, 1e-300)), 1)
    return float(-slope), float(np.exp(intercept))


# --------------------------------------------------------------------------
# sweeps

SWEEP_COLUMNS = ("L", "profile_id", "G_hall", "G_K_s", "sigma_hall_ref", "sigma_K_s_ref",
                 "delta_charge", "delta_spin", "strip_tail_slope", "edge_flag")


@dataclass
class SweepReport:
    model: str
    sigma_hall: float
    sigma_k_s: float
    rows: list = field(default_factory=list)
    spin_tables: dict = field(default_factory=dict)
    certificates: dict = field(default_factory=dict)

    def by_L(self, L: int) -> list:
        return [r for r in self.rows if r["L"] == L]

    def charge_rate(self, profile_id: str | None = None) -> tuple[float, float]:
        rows = [r for r in self.rows if profile_id in (None, r["profile_id"])]
        if profile_id is None:
            first = rows[0]["profile_id"]
            rows = [r for r in rows if r["profile_id"] == first]
        return exponential_rate([r["L"] for r in rows], [r["delta_charge"] for r in rows])

    def profile_spread(self, L: int, key: str = "G_K_s") -> float:
        values = [r[key] for r in self.by_L(L)]
        return float(max(values) - min(values)) if values else float("nan")

    def write_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SWEEP_COLUMNS)
            for r in self.rows:
                w.writerow([_fmt(r[c]) for c in SWEEP_COLUMNS])


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def conductivity_conductance_sweep(model: LatticeModel, mu: float | None = None,
                                   L_list=(12, 16, 20, 24), profile_pairs=None,
                                   grid_n: int = 48, margin: float = DEFAULT_MARGIN,
                                   spin: bool = True) -> SweepReport:
    """Compare finite-sample conductances with the periodic conductivities.

    ``profile_pairs`` is a sequence of ``(profile for Lambda_1, profile for
    Lambda_2)``; the default pairs a quintic ramp with itself and an erf ramp
    with itself.  Periodic references are computed on the lattice frame of
    ``model`` with cell-uniform positions.
    """
    frame = lattice_frame(model)
    mu = model.mu if mu is None else float(mu)
    if profile_pairs is None:
        p = make_switching_profile("poly", DEFAULT_HALF_WIDTH)
        e = make_switching_profile("erf", DEFAULT_HALF_WIDTH)
        profile_pairs = [(p, p), (e, e)]
    grid = sample_bz_grid(frame, grid_n)
    sigma_hall = hall_conductivity_dcf(frame, mu, grid, positions="cell")
    sigma_k = kubo_like_spin_conductivity(frame, mu, grid, positions="cell") if spin else 0.0
    report = SweepReport(model.name, sigma_hall, sigma_k)
    l_max = max(max(a.half_width, b.half_width) for a, b in profile_pairs)
    for L in L_list:
        sample = build_finite_sample(frame, L, mu, max_half_width=l_max, bulk_grid=grid_n)
        report.certificates[L] = sample.bulk_certificate
        window = default_window(L, margin)
        for a, b in profile_pairs:
            pid = f"{a.label}/{b.label}"
            g_hall = hall_conductance(sample, a, b, window)
            row = {"L": L, "profile_id": pid, "G_hall": g_hall.value,
                   "sigma_hall_ref": sigma_hall, "sigma_K_s_ref": sigma_k,
                   "delta_charge": abs(g_hall.value - sigma_hall),
                   "edge_flag": sample.edge_flag}
            if spin:
                g_spin = kubo_like_spin_conductance(sample, a, b, window, window)
                report.spin_tables[(L, pid)] = g_spin.table
                row.update(G_K_s=g_spin.value, delta_spin=abs(g_spin.value - sigma_k),
                           strip_tail_slope=g_spin.tail_slope)
            else:
                row.update(G_K_s=float("nan"), delta_spin=float("nan"),
                           strip_tail_slope=float("nan"))
            report.rows.append(row)
    return report
