"""First-order non-equilibrium almost-stationary state.

For ``H^eps = H_0 - eps X_2`` the first-order correction to the Fermi
projection is ``Pi_1 = L^{-1}([X_2, Pi_0])`` with ``L(A) = [H_0, A]``.  The
generator ``A_1 = i [Pi_0, Pi_1]`` satisfies ``i [A_1, Pi_0] = Pi_1``, and the
state ``exp(i eps A_1) Pi_0 exp(-i eps A_1)`` commutes with ``H^eps`` up to
``O(eps^2)``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bloch import FermiSea, FiberField, KGrid, _dag, grid_derivative
from .errors import GapClosed
from .model import LatticeModel


@dataclass(frozen=True, eq=False)
class NeassFirstOrder:
    sea: FermiSea
    pi1: np.ndarray   # (N, N, M, M)
    a1: np.ndarray    # (N, N, M, M)

    @property
    def grid(self) -> KGrid:
        return self.sea.grid

    @property
    def pi0(self) -> np.ndarray:
        return self.sea.projector

    def fields(self) -> dict[str, FiberField]:
        return {
            "Pi0": self.sea.field(self.pi0, "Pi0", hermitian=True, projector=True),
            "Pi1": self.sea.field(self.pi1, "Pi1", hermitian=True),
            "A1": self.sea.field(self.a1, "A1", hermitian=True),
        }


def liouvillian_inverse_fiber(h: np.ndarray, pi0: np.ndarray, a: np.ndarray,
                              tol: float = 1e-9) -> np.ndarray:
    """Spectral evaluation of ``L^{-1}(A)`` on one fiber (or a stack).

    In the eigenbasis of ``h``, entry ``(m, n)`` is ``A_mn / (E_m - E_n)``
    for occupied/unoccupied pairs and zero inside the diagonal blocks, which
    is what the contour formula ``(i/2pi) oint R(z) [A, Pi_0] R(z) dz`` gives.
    Occupation is read off ``pi0``.
    """
    e, v = np.linalg.eigh(h)
    occ = np.real(np.einsum("...an,...ab,...bn->...n", v.conj(), pi0, v)) > 0.5
    mask = occ[..., :, None] != occ[..., None, :]
    diff = e[..., :, None] - e[..., None, :]
    if np.any(np.abs(diff[mask]) < tol):
        raise GapClosed("vanishing energy denominator")
    inv = np.zeros_like(diff)
    np.divide(1.0, diff, out=inv, where=mask)
    return v @ ((_dag(v) @ a @ v) * inv) @ _dag(v)


def liouvillian_inverse_contour(h: np.ndarray, pi0: np.ndarray, a: np.ndarray,
                                nodes: int = 256) -> np.ndarray:
    """Cross-check oracle: trapezoid rule for the resolvent contour integral.

    The contour is a circle around the occupied eigenvalues whose radius
    leaves half the gap as clearance on the unoccupied side.
    """
    e = np.linalg.eigvalsh(h)
    n_occ = int(round(np.trace(pi0).real))
    if n_occ == 0:
        return np.zeros_like(a)
    lo, hi = e[0], e[n_occ - 1]
    gap = e[n_occ] - hi if n_occ < len(e) else 1.0
    center = 0.5 * (lo + hi)
    radius = 0.5 * (hi - lo) + 0.5 * gap
    comm = a @ pi0 - pi0 @ a
    eye = np.eye(h.shape[-1])
    total = np.zeros_like(a, dtype=complex)
    for theta in 2 * np.pi * np.arange(nodes) / nodes:
        z = center + radius * np.exp(1j * theta)
        dz = 1j * radius * np.exp(1j * theta) * (2 * np.pi / nodes)
        r = np.linalg.inv(h - z * eye)
        total += r @ comm @ r * dz
    return 1j / (2 * np.pi) * total


def _liouvillian_inverse(sea: FermiSea, a: np.ndarray) -> np.ndarray:
    return sea.from_eigenbasis(sea.to_eigenbasis(a) * sea.energy_denominator)


def first_order_neass(model: LatticeModel, grid: KGrid, mu: float | None = None,
                      positions: str = "cell", sea: FermiSea | None = None) -> NeassFirstOrder:
    """Build ``Pi_1`` and ``A_1`` on the grid.

    ``positions`` selects the position operator ``X_2`` of the perturbing
    potential (cell-uniform or atomic coordinates).
    """
    if sea is None:
        sea = FermiSea(model, grid, mu, positions=positions)
    pi1 = _liouvillian_inverse(sea, sea.x_commutator_p[1])
    pi1 = 0.5 * (pi1 + _dag(pi1))
    p = sea.projector
    a1 = 1j * (p @ pi1 - pi1 @ p)
    return NeassFirstOrder(sea, pi1, a1)


def neass_at_epsilon(neass: NeassFirstOrder, eps: float) -> np.ndarray:
    """``exp(i eps A_1) Pi_0 exp(-i eps A_1)`` fiber by fiber."""
    if eps == 0:
        return neass.pi0.copy()
    w, v = np.linalg.eigh(neass.a1)
    u = v @ (np.exp(1j * eps * w)[..., None] * _dag(v))
    return u @ neass.pi0 @ _dag(u)


@dataclass(frozen=True)
class ResidualScan:
    eps: np.ndarray
    sup_residual: np.ndarray
    fd_error: np.ndarray
    slope: float
    fd_order: int

    def rows(self):
        return [(float(e), float(r), float(f))
                for e, r, f in zip(self.eps, self.sup_residual, self.fd_error)]

    def write_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["eps", "sup_residual", "fd_error_estimate"])
            for row in self.rows():
                w.writerow([repr(x) for x in row])


def loglog_slope(x, y) -> float:
    x, y = np.asarray(x, float), np.asarray(y, float)
    keep = (x > 0) & (y > 0)
    if keep.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(x[keep]), np.log(y[keep]), 1)[0])


def _op_norm(a: np.ndarray) -> np.ndarray:
    return np.linalg.norm(a, ord=2, axis=(-2, -1))


def neass_residual_scan(model: LatticeModel, grid: KGrid, mu: float | None = None,
                        eps_list=(1e-1, 3e-2, 1e-2, 3e-3, 1e-3), fd_order: int = 4,
                        positions: str = "cell",
                        neass: NeassFirstOrder | None = None) -> ResidualScan:
    """Sup-norm of ``[H_0 - eps X_2, Pi_1^eps]`` over the grid for each eps.

    The fiber of the residual is ``[H(k), Pi^eps(k)] - eps [X_2, Pi^eps](k)``.
    The k-derivative of ``Pi^eps`` is split as ``dPi_0 + d(Pi^eps - Pi_0)``:
    the first term is the exact spectral derivative, the second uses central
    differences of order ``fd_order``.  Since ``Pi^eps - Pi_0 = O(eps)``, the
    discretization error enters the residual at ``O(eps^2 h^order)`` and does
    not mask the ``eps^2`` law.  The reported error estimate is
    ``eps * sup |D_fd - D_exact|`` applied to ``Pi^eps - Pi_0``, with
    ``D_exact`` trigonometric differentiation on the same grid.
    """
    if neass is None:
        neass = first_order_neass(model, grid, mu, positions=positions)
    sea = neass.sea
    grid = sea.grid
    dp0 = sea.dprojector[1]
    sups, fd_errs = [], []
    for eps in eps_list:
        pe = neass_at_epsilon(neass, eps)
        delta = pe - sea.projector
        d_fd = grid_derivative(delta, grid, 1, order=fd_order)
        d_ex = grid_derivative(delta, grid, 1, order=0)
        comm_x = sea.position_commutator(pe, dp0 + d_fd, 1)
        res = sea.h @ pe - pe @ sea.h - eps * comm_x
        sups.append(float(_op_norm(res).max()))
        fd_errs.append(float(eps * _op_norm(d_fd - d_ex).max()))
    eps_arr = np.asarray(eps_list, float)
    sup_arr = np.asarray(sups)
    return ResidualScan(eps_arr, sup_arr, np.asarray(fd_errs), loglog_slope(eps_arr, sup_arr),
                        fd_order)
