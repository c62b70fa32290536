"""Trace per unit volume of periodic operators and position-weighted traces.

Normalization: ``tau(A) = (1/|C_1|) * mean_k tr A(k)``, which equals
``(2 pi)^-2 * integral_BZ tr A(k) dk`` and ``(1/|C_1|) tr K(0)`` for the
real-space kernel ``K(g) = N^-2 sum_k exp(+i k.g) A(k)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bloch import FiberField
from .errors import AliasingRisk
from .model import LatticeModel

DEFAULT_GAMMA_MAX = 12


@dataclass(frozen=True)
class PeriodicKernel:
    gamma_max: int
    offsets: np.ndarray  # (K, 2) integer offsets, |g|_inf <= gamma_max
    blocks: np.ndarray   # (K, M, M)
    tail_norm: float     # max block 2-norm on the shell |g|_inf == gamma_max

    def block(self, gamma) -> np.ndarray:
        hit = np.all(self.offsets == np.asarray(gamma), axis=1)
        if not hit.any():
            raise KeyError(f"offset {tuple(gamma)} outside truncation box")
        return self.blocks[np.argmax(hit)]

    def shell_norms(self) -> dict[int, float]:
        """Max block norm on each shell ``|g|_inf = r``."""
        radius = np.abs(self.offsets).max(axis=1)
        norms = np.linalg.norm(self.blocks, ord=2, axis=(-2, -1))
        return {int(r): float(norms[radius == r].max()) for r in np.unique(radius)}

    def resum(self, kpoints_reduced: np.ndarray) -> np.ndarray:
        """Forward transform back to fibers at reduced k-points."""
        phase = np.exp(-2j * np.pi * (kpoints_reduced @ self.offsets.T))
        return np.einsum("...g,gab->...ab", phase, self.blocks)


def _as_array(field) -> np.ndarray:
    return field.data if isinstance(field, FiberField) else np.asarray(field)


def tpuv_periodic(field, cell_area: float) -> tuple[complex, float]:
    """Return ``(tau(A), Im tau(A))``."""
    data = _as_array(field)
    value = np.trace(data, axis1=-2, axis2=-1).mean() / cell_area
    return complex(value), float(value.imag)


def kernel_at_origin(field) -> np.ndarray:
    """``K(0)``, the grid average of the fibers."""
    data = _as_array(field)
    return data.reshape(-1, *data.shape[-2:]).mean(axis=0)


def inverse_bfz_kernel(field, gamma_max: int = DEFAULT_GAMMA_MAX) -> PeriodicKernel:
    data = _as_array(field)
    n = data.shape[0]
    if n <= 2 * gamma_max:
        raise AliasingRisk(f"N={n} must exceed 2*gamma_max={2 * gamma_max}")
    full = np.fft.ifft2(data, axes=(0, 1))  # (1/N^2) sum_k exp(+2 pi i n.g / N) A
    r = np.arange(-gamma_max, gamma_max + 1)
    g1, g2 = np.meshgrid(r, r, indexing="ij")
    offsets = np.stack([g1.ravel(), g2.ravel()], axis=1)
    blocks = full[offsets[:, 0] % n, offsets[:, 1] % n]
    shell = np.abs(offsets).max(axis=1) == gamma_max
    tail = float(np.linalg.norm(blocks[shell], ord=2, axis=(-2, -1)).max())
    return PeriodicKernel(gamma_max, offsets, blocks, tail)


def tpuv_position_weighted(field, model: LatticeModel, j: int,
                           positions: str = "atomic", origin=(0.0, 0.0)) -> complex:
    """``tau(X_j A)`` for periodic ``A``: ``(1/|C_1|) sum_a (x_a - origin)_j K(0)_aa``.

    Only the diagonal of ``K(0)`` enters, so ``tau(X_j A) = tau(A X_j)``.
    """
    k0 = kernel_at_origin(field)
    x = model.orbital_positions(positions)[:, j] - np.asarray(origin, dtype=float)[j]
    return complex(np.sum(x * np.diag(k0)) / model.cell_area)


def cyclicity_probe(field_a, field_b, cell_area: float = 1.0):
    """Return ``(tau(AB), tau(BA), |difference|)``."""
    if isinstance(field_a, FiberField) and isinstance(field_b, FiberField):
        field_a.matching(field_b)
    a, b = _as_array(field_a), _as_array(field_b)
    if a.shape != b.shape:
        from .errors import GridMismatch
        raise GridMismatch(f"shapes {a.shape} and {b.shape} differ")
    ab, _ = tpuv_periodic(a @ b, cell_area)
    ba, _ = tpuv_periodic(b @ a, cell_area)
    return ab, ba, abs(ab - ba)


def dump_kernel_csv(kernel: PeriodicKernel, path) -> None:
    rows = ["gamma1,gamma2,a,b,re,im"]
    m = kernel.blocks.shape[-1]
    for g, block in zip(kernel.offsets, kernel.blocks):
        for a in range(m):
            for b in range(m):
                z = block[a, b]
                rows.append(f"{g[0]},{g[1]},{a},{b},{z.real:.17g},{z.imag:.17g}")
    Path(path).write_text("\n".join(rows) + "\n")


# --------------------------------------------------------------------------
# random probes

def random_periodic_kernel(rng: np.random.Generator, m: int, radius: int = 2,
                           decay: float = 1.0) -> PeriodicKernel:
    """Finite-range periodic operator with Gaussian complex blocks.

    Block ``K(g)`` has scale ``exp(-decay * |g|_1)``.
    """
    r = np.arange(-radius, radius + 1)
    g1, g2 = np.meshgrid(r, r, indexing="ij")
    offsets = np.stack([g1.ravel(), g2.ravel()], axis=1)
    scale = np.exp(-decay * np.abs(offsets).sum(axis=1))[:, None, None]
    shape = (len(offsets), m, m)
    blocks = scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    return PeriodicKernel(radius, offsets, blocks, 0.0)


def kernel_fibers(kernel: PeriodicKernel, n: int) -> np.ndarray:
    """Fibers ``A(k) = sum_g K(g) exp(-i k.g)`` on the ``n x n`` grid."""
    i = np.arange(n) / n
    reduced = np.stack(np.meshgrid(i, i, indexing="ij"), axis=-1)
    return kernel.resum(reduced)


def origin_shift_defect(field, model: LatticeModel, j: int, alpha: float,
                        positions: str = "atomic") -> tuple[complex, complex]:
    """Return ``(tau(X_j A) - tau((X_j - alpha) A), alpha * tau(A))``.

    The two entries agree identically; the first vanishes whenever
    ``tau(A) = 0``.
    """
    shift = np.zeros(2)
    shift[j] = alpha
    base = tpuv_position_weighted(field, model, j, positions)
    moved = tpuv_position_weighted(field, model, j, positions, origin=shift)
    value, _ = tpuv_periodic(field, model.cell_area)
    return base - moved, alpha * value
