"""Periodic-in-x, bounded-in-y base grid and the spatial operators on it.

Fields are arrays whose last two axes are (x, y); any leading axes are
carried through untouched.  x derivatives are spectral, y derivatives
use 4th-order finite differences (one-sided near the ends).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from math import factorial

import numpy as np


@dataclass(frozen=True)
class BaseGrid:
    kappa: float = 1.0
    Nx: int = 16
    y_min: float = 0.0
    y_max: float = 1.0
    Ny: int = 5

    def __post_init__(self):
        errors = self.validation_errors()
        if errors:
            raise ValueError("; ".join(errors))

    def validation_errors(self) -> list[str]:
        errors = []
        if not self.kappa > 0:
            errors.append("grid.kappa must be > 0")
        if self.Nx < 8:
            errors.append("grid.Nx must be ≥ 8")
        elif self.Nx % 2:
            errors.append("grid.Nx must be even")
        if self.Ny < 4:
            errors.append("grid.Ny must be ≥ 4")
        if not self.y_max > self.y_min:
            errors.append("grid.y_max must exceed grid.y_min")
        return errors

    @property
    def shape(self) -> tuple[int, int]:
        return (self.Nx, self.Ny)

    @property
    def dx(self) -> float:
        return self.kappa / self.Nx

    @property
    def dy(self) -> float:
        return (self.y_max - self.y_min) / (self.Ny - 1)

    @cached_property
    def x(self) -> np.ndarray:
        return self.kappa * np.arange(self.Nx) / self.Nx

    @cached_property
    def y(self) -> np.ndarray:
        return np.linspace(self.y_min, self.y_max, self.Ny)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x, self.y, indexing="ij")

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        return 2 * np.pi / self.kappa * np.arange(self.Nx // 2 + 1)

    @cached_property
    def y_diff_matrix(self) -> np.ndarray:
        return diff_matrix(self.y, order=1, width=5)


def fd_weights(nodes, x0: float, order: int) -> np.ndarray:
    """Weights w with sum_j w_j p(nodes_j) = p^(order)(x0) for polynomials
    of degree < len(nodes)."""
    nodes = np.asarray(nodes, dtype=float)
    n = len(nodes)
    if order >= n:
        raise ValueError(f"need more than {order} nodes for derivative order {order}")
    scale = np.ptp(nodes) or 1.0
    s = (nodes - x0) / scale
    V = np.vander(s, n, increasing=True).T
    rhs = np.zeros(n)
    rhs[order] = factorial(order)
    return np.linalg.solve(V, rhs) / scale**order


def diff_matrix(nodes, order: int = 1, width: int | None = None) -> np.ndarray:
    """Dense differentiation matrix on arbitrary nodes.

    ``width=None`` uses every node (global polynomial differentiation);
    otherwise each row uses the ``width`` nearest nodes.
    """
    nodes = np.asarray(nodes, dtype=float)
    n = len(nodes)
    width = n if width is None else min(width, n)
    D = np.zeros((n, n))
    for i in range(n):
        lo = min(max(i - width // 2, 0), n - width)
        window = slice(lo, lo + width)
        D[i, window] = fd_weights(nodes[window], nodes[i], order)
    return D


def interp_weights(nodes, x0: float, width: int = 5) -> tuple[slice, np.ndarray]:
    """Lagrange weights on the ``width`` nodes nearest to x0."""
    nodes = np.asarray(nodes, dtype=float)
    n = len(nodes)
    width = min(width, n)
    i = int(np.argmin(np.abs(nodes - x0)))
    lo = min(max(i - width // 2, 0), n - width)
    window = slice(lo, lo + width)
    return window, fd_weights(nodes[window], x0, 0)


def d_dx(field, grid: BaseGrid, dealias: bool = False) -> np.ndarray:
    """Spectral x-derivative; Nyquist mode dropped.  ``dealias`` also zeroes
    modes above Nx/3."""
    field = np.asarray(field)
    ik = 1j * grid.wavenumbers.copy()
    ik[-1] = 0.0
    if dealias:
        ik[np.arange(len(ik)) > grid.Nx // 3] = 0.0
    ik = ik[:, None]
    if np.iscomplexobj(field):
        return d_dx(field.real, grid, dealias) + 1j * d_dx(field.imag, grid, dealias)
    spec = np.fft.rfft(field, axis=-2)
    return np.fft.irfft(ik * spec, n=grid.Nx, axis=-2)


def lowpass_x(field, grid: BaseGrid) -> np.ndarray:
    """Zero Fourier modes above Nx/3 in x."""
    field = np.asarray(field)
    if np.iscomplexobj(field):
        return lowpass_x(field.real, grid) + 1j * lowpass_x(field.imag, grid)
    spec = np.fft.rfft(field, axis=-2)
    spec[..., grid.Nx // 3 + 1:, :] = 0.0
    return np.fft.irfft(spec, n=grid.Nx, axis=-2)


def d_dy(field, grid: BaseGrid) -> np.ndarray:
    return np.asarray(field) @ grid.y_diff_matrix.T


def d_u(field, grid: BaseGrid, dealias: bool = False) -> np.ndarray:
    """Holomorphic derivative 1/2 (d/dx - i d/dy) with u = x + i y."""
    return 0.5 * (d_dx(field, grid, dealias) - 1j * d_dy(field, grid))


def d_ubar(field, grid: BaseGrid, dealias: bool = False) -> np.ndarray:
    """Anti-holomorphic derivative 1/2 (d/dx + i d/dy)."""
    return 0.5 * (d_dx(field, grid, dealias) + 1j * d_dy(field, grid))


def integrate_x(field, grid: BaseGrid) -> np.ndarray:
    """Trapezoidal rule over one period in x (spectrally accurate)."""
    return grid.dx * np.sum(field, axis=-2)


def l2_norm(field, grid: BaseGrid) -> float:
    """Discrete L2 norm over the (x, y) domain."""
    field = np.abs(np.asarray(field))
    if field.ndim < 2:
        return float(np.linalg.norm(field))
    wy = np.full(grid.Ny, grid.dy)
    wy[[0, -1]] *= 0.5
    return float(np.sqrt(np.sum(field**2 * wy) * grid.dx))
