"""Bloch-Floquet fibering on a uniform Brillouin-zone grid.

Fourier convention: ``A(k) = sum_g K(g) exp(-i k.g)``, hence the fiber of
``[X_j, A]`` is ``i dA/dk_j`` (Cartesian ``k``) when all orbitals of a cell
sit at the lattice point.  With atomic positions the commutator picks up the
extra periodic piece ``[D_j, A(k)]``, ``D_j = diag(r_a,j)``; see
:func:`position_commutator`.

Grid arrays have shape ``(N, N, ...)`` indexed by ``(n1, n2)`` with
``k = (n1 b1 + n2 b2) / N``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import EigenvalueAtFermi, GapClosed, GridMismatch
from .model import LatticeModel


@dataclass(frozen=True, eq=False)
class KGrid:
    n: int
    reciprocal: np.ndarray  # rows b1, b2

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("grid resolution must be >= 2")

    @property
    def size(self) -> int:
        return self.n * self.n

    @property
    def reduced(self) -> np.ndarray:
        i = np.arange(self.n) / self.n
        return np.stack(np.meshgrid(i, i, indexing="ij"), axis=-1)

    @property
    def kpoints(self) -> np.ndarray:
        return self.reduced @ self.reciprocal

    def same_as(self, other: "KGrid") -> bool:
        return self.n == other.n and np.allclose(self.reciprocal, other.reciprocal)


@dataclass(frozen=True, eq=False)
class FiberField:
    grid: KGrid
    data: np.ndarray  # (N, N, M, M)
    hermitian: bool = False
    projector: bool = False
    label: str = ""

    def check(self) -> None:
        """Raise ``AssertionError`` if a declared flag is violated."""
        if self.hermitian:
            dev = np.abs(self.data - _dag(self.data)).max()
            assert dev <= 1e-12, f"{self.label}: hermiticity defect {dev:.2e}"
        if self.projector:
            dev = np.abs(self.data @ self.data - self.data).max()
            assert dev <= 1e-10, f"{self.label}: idempotency defect {dev:.2e}"

    def matching(self, other: "FiberField") -> None:
        if not self.grid.same_as(other.grid) or self.data.shape != other.data.shape:
            raise GridMismatch(f"{self.label!r} and {other.label!r} live on different grids")


@dataclass(frozen=True)
class GapReport:
    gap: float              # indirect gap around mu (0 if band count varies)
    min_direct_gap: float   # min over nodes of the local gap
    band_counts: np.ndarray  # (N, N) bands below mu
    uniform_band_count: bool
    mu: float

    @property
    def ok(self) -> bool:
        return self.uniform_band_count and self.gap > 0

    @property
    def n_occupied(self) -> int:
        return int(self.band_counts.flat[0])


def _dag(a: np.ndarray) -> np.ndarray:
    return np.swapaxes(a, -1, -2).conj()


def sample_bz_grid(model: LatticeModel, n: int) -> KGrid:
    return KGrid(int(n), model.reciprocal.copy())


def fiber_hamiltonian(model: LatticeModel, k) -> np.ndarray:
    """``H(k)`` for one k (shape (2,)) or a stack of k-points (shape (..., 2))."""
    k = np.asarray(k, dtype=float)
    phase = np.exp(-1j * (k @ model.cartesian_offsets().T))
    return np.einsum("...g,gab->...ab", phase, model.blocks)


def fiber_gradient(model: LatticeModel, k) -> np.ndarray:
    """Cartesian gradient ``(dH/dk_1, dH/dk_2)`` stacked on a leading axis."""
    k = np.asarray(k, dtype=float)
    g = model.cartesian_offsets()
    phase = np.exp(-1j * (k @ g.T))
    return np.stack([
        np.einsum("...g,gab->...ab", phase * (-1j * g[:, j]), model.blocks)
        for j in range(2)
    ])


def fermi_projection(h: np.ndarray, mu: float, tol: float = 1e-9):
    """Spectral projector onto eigenvalues below ``mu``.

    Works on a single matrix or a stack.  Returns ``(P, local_gap)`` where the
    local gap is ``min E_{>=mu} - max E_{<mu}`` per fiber (``inf`` when one
    side is empty).
    """
    e, v = np.linalg.eigh(h)
    if np.any(np.abs(e - mu) < tol):
        raise EigenvalueAtFermi(f"eigenvalue within {tol:g} of mu={mu}")
    occ = e < mu
    p = np.einsum("...an,...n,...bn->...ab", v, occ.astype(float), v.conj())
    below = np.where(occ, e, -np.inf).max(axis=-1)
    above = np.where(~occ, e, np.inf).min(axis=-1)
    return p, above - below


def spectral_gap_scan(model: LatticeModel, mu: float, grid: KGrid) -> GapReport:
    """Gap diagnostics over the grid; never raises, callers check ``.ok``."""
    e = np.linalg.eigvalsh(fiber_hamiltonian(model, grid.kpoints))
    occ = e < mu
    counts = occ.sum(axis=-1)
    uniform = bool(np.all(counts == counts.flat[0]))
    below = np.where(occ, e, -np.inf).max(axis=-1)
    above = np.where(~occ, e, np.inf).min(axis=-1)
    direct = float(np.min(above - below))
    gap = float(above.min() - below.max()) if uniform else 0.0
    if not np.isfinite(gap):
        gap = float("inf")
    return GapReport(max(gap, 0.0), direct, counts, uniform, float(mu))


class FermiSea:
    """Eigen-decomposition of ``H(k)`` on a grid plus derived projector data.

    All projector derivatives are spectral: for ``m`` and ``n`` on opposite
    sides of the Fermi level, ``(dP)_mn = (dH)_mn (f_n - f_m) / (E_n - E_m)``
    in the eigenbasis; same-side blocks vanish.
    """

    def __init__(self, model: LatticeModel, grid: KGrid, mu: float | None = None,
                 positions: str = "cell"):
        self.model = model
        self.grid = grid
        self.mu = model.mu if mu is None else float(mu)
        self.positions = positions
        self.gap_report = spectral_gap_scan(model, self.mu, grid)
        if not self.gap_report.ok:
            raise GapClosed(
                f"{model.name}: mu={self.mu} not in a gap "
                f"(gap={self.gap_report.gap:.3g}, uniform={self.gap_report.uniform_band_count})"
            )
        k = grid.kpoints
        self.h = fiber_hamiltonian(model, k)
        self.dh = fiber_gradient(model, k)
        self.energies, self.vectors = np.linalg.eigh(self.h)
        self.occupation = (self.energies < self.mu).astype(float)
        self.n_occupied = self.gap_report.n_occupied
        self.offsets = model.orbital_positions(positions)

    @property
    def gap(self) -> float:
        return self.gap_report.gap

    def to_eigenbasis(self, a: np.ndarray) -> np.ndarray:
        return _dag(self.vectors) @ a @ self.vectors

    def from_eigenbasis(self, a: np.ndarray) -> np.ndarray:
        return self.vectors @ a @ _dag(self.vectors)

    @cached_property
    def off_diagonal_mask(self) -> np.ndarray:
        f = self.occupation
        return f[..., :, None] != f[..., None, :]

    @cached_property
    def energy_denominator(self) -> np.ndarray:
        """``1 / (E_m - E_n)`` on occupied/unoccupied pairs, 0 elsewhere."""
        e = self.energies
        diff = e[..., :, None] - e[..., None, :]
        out = np.zeros_like(diff)
        np.divide(1.0, diff, out=out, where=self.off_diagonal_mask)
        return out

    @cached_property
    def projector(self) -> np.ndarray:
        v = self.vectors
        return np.einsum("...an,...n,...bn->...ab", v, self.occupation, v.conj())

    @cached_property
    def complement(self) -> np.ndarray:
        return np.eye(self.model.n_orbitals) - self.projector

    def derivative_of_projector(self, dh: np.ndarray) -> np.ndarray:
        """Projector derivative induced by a Hamiltonian derivative ``dh``."""
        f = self.occupation
        df = f[..., None, :] - f[..., :, None]  # f_n - f_m
        return self.from_eigenbasis(self.to_eigenbasis(dh) * df * -self.energy_denominator)

    @cached_property
    def dprojector(self) -> np.ndarray:
        """Cartesian gradient of ``P(k)``, shape ``(2, N, N, M, M)``."""
        return np.stack([self.derivative_of_projector(self.dh[j]) for j in range(2)])

    def position_commutator(self, a: np.ndarray, da: np.ndarray, j: int) -> np.ndarray:
        return position_commutator(a, da, j, self.offsets)

    @cached_property
    def x_commutator_p(self) -> np.ndarray:
        """Fibers of ``[X_j, P]`` for ``j = 0, 1``."""
        return np.stack([self.position_commutator(self.projector, self.dprojector[j], j)
                         for j in range(2)])

    @cached_property
    def x_commutator_h(self) -> np.ndarray:
        """Fibers of ``[X_j, H]`` for ``j = 0, 1``."""
        return np.stack([self.position_commutator(self.h, self.dh[j], j) for j in range(2)])

    def field(self, data: np.ndarray, label: str, hermitian=False, projector=False) -> FiberField:
        return FiberField(self.grid, data, hermitian, projector, label)


def position_commutator(a: np.ndarray, da: np.ndarray, j: int, offsets: np.ndarray) -> np.ndarray:
    """Fiber of ``[X_j, A]`` given ``A(k)``, ``dA/dk_j`` and intracell offsets."""
    out = 1j * da
    d = offsets[:, j]
    if np.any(d != 0):
        out = out + (d[:, None] - d[None, :]) * a
    return out


def grid_derivative(data: np.ndarray, grid: KGrid, j: int, order: int = 4) -> np.ndarray:
    """Cartesian ``d/dk_j`` of a periodic grid field by finite differences.

    ``order`` 2, 4 or 6 selects central differences; ``order=0`` uses exact
    trigonometric (FFT) differentiation, accurate to the aliasing level.
    Derivatives along reduced directions are recombined with
    ``d/dk = (a_1 d/dkappa_1 + a_2 d/dkappa_2) / (2 pi)``.
    """
    lattice = 2 * np.pi * np.linalg.inv(grid.reciprocal).T
    n = grid.n
    reduced = []
    for axis in (0, 1):
        if order == 0:
            freqs = np.fft.fftfreq(n, d=1.0 / n)
            if n % 2 == 0:
                freqs[n // 2] = 0.0
            shape = [1] * data.ndim
            shape[axis] = n
            spec = np.fft.fft(data, axis=axis) * (2j * np.pi * freqs).reshape(shape)
            reduced.append(np.fft.ifft(spec, axis=axis))
            continue
        coeffs = {2: [1 / 2], 4: [2 / 3, -1 / 12], 6: [3 / 4, -3 / 20, 1 / 60]}[order]
        d = np.zeros_like(data)
        for s, c in enumerate(coeffs, start=1):
            d = d + c * (np.roll(data, -s, axis=axis) - np.roll(data, s, axis=axis))
        reduced.append(d * n)
    return (lattice[0, j] * reduced[0] + lattice[1, j] * reduced[1]) / (2 * np.pi)


def dump_fiber_field(field: FiberField, path) -> None:
    """Plain-text dump: one line per node, ``n1 n2`` then row-major (re, im)."""
    n = field.grid.n
    lines = [f"# {field.label} N={n} M={field.data.shape[-1]}"]
    for n1 in range(n):
        for n2 in range(n):
            flat = field.data[n1, n2].ravel()
            vals = " ".join(f"{z.real:.17g} {z.imag:.17g}" for z in flat)
            lines.append(f"{n1} {n2} {vals}")
    Path(path).write_text("\n".join(lines) + "\n")
