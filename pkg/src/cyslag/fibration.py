"""Invariants of the special Lagrangian fibration (phi, u, t) -> (t1, t2, Im u).

The fibre over b = (t1, t2, y) is the 3-torus with coordinates
(x, phi1, phi2); x has period kappa and each phi_j has period 2 pi.
Quantities are computed along the x-circle of a state at height y
(interpolated when y is not a grid row).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .ansatz import PHI1, PHI2, X, AnsatzState, complex_structure, hermitian_metric, point_forms
from .grid import BaseGrid, d_dx, interp_weights

ANGULAR_VOLUME = (2 * np.pi) ** 2


@dataclass(frozen=True)
class FiberLine:
    """Fields of a state restricted to one x-circle."""

    grid: BaseGrid
    y: float
    winv: np.ndarray  # (Nx, 2, 2)
    alpha: np.ndarray  # (2, Nx)
    density: np.ndarray  # (Nx,)

    @property
    def w(self) -> np.ndarray:
        return np.linalg.inv(self.winv)

    def integrate(self, field) -> np.ndarray:
        """Trapezoid over one period along axis 0."""
        return self.grid.dx * np.sum(field, axis=0)


def fiber_line(state: AnsatzState, y: float) -> FiberLine:
    if state.m != 2:
        raise ValueError("fibration invariants need m = 2")
    grid = state.grid
    if not grid.y_min - 1e-12 <= y <= grid.y_max + 1e-12:
        raise ValueError(f"y = {y} outside [{grid.y_min}, {grid.y_max}]")
    window, w = interp_weights(grid.y, y, 5)
    row = lambda f: np.asarray(f)[..., window] @ w  # noqa: E731
    exact = np.isclose(grid.y, y, rtol=0, atol=1e-14)
    if exact.any():
        iy = int(np.argmax(exact))
        row = lambda f: np.asarray(f)[..., iy]  # noqa: E731
    W = state.winv_matrix()
    winv = np.stack([np.stack([row(W[..., i, j]) for j in range(2)], -1) for i in range(2)], -2)
    alpha = np.stack([row(state.alpha[j]) for j in range(2)])
    dens = row(state.density)
    return FiberLine(grid, float(y), winv, alpha, dens)


def period_matrix(state: AnsatzState, y: float) -> np.ndarray:
    """Periods over the cycles {x = phi2 = 0}, {x = phi1 = 0}, {phi1 = phi2 = 0}."""
    line = fiber_line(state, y)
    P = np.eye(3)
    P[2, 0] = line.integrate(2 * line.alpha[0].imag)
    P[2, 1] = line.integrate(2 * line.alpha[1].imag)
    P[2, 2] = line.integrate(line.density)
    return P


def period_one_forms(state: AnsatzState, y: float) -> np.ndarray:
    """Coefficients of lambda_j = P_j1 dt1 + P_j2 dt2 + P_j3 dy (one row each)."""
    return period_matrix(state, y)


def fiber_metric(state: AnsatzState, y: float) -> tuple[np.ndarray, np.ndarray]:
    """(W(x), det W(x)): the metric in the frame (eta1, eta2, zeta) is block
    diagonal with these blocks."""
    line = fiber_line(state, y)
    if np.any(np.linalg.det(line.winv) <= 0):
        raise ValueError("singular W along the fibre")
    W = line.w
    return W, np.linalg.det(W)


def _point_metric(winv, alpha):
    Omega, omega = point_forms(winv, alpha)
    J = complex_structure(Omega)
    return hermitian_metric(omega, J)


def coordinate_metric(state: AnsatzState, y: float) -> np.ndarray:
    """Fibre metric g~ in the frame (eta1, eta2, d/dx) from the assembled forms,
    as ``(Nx, 3, 3)``."""
    line = fiber_line(state, y)
    sel = [PHI1, PHI2, X]
    out = np.empty((line.grid.Nx, 3, 3))
    for ix in range(line.grid.Nx):
        g = _point_metric(line.winv[ix], line.alpha[:, ix])
        out[ix] = g[np.ix_(sel, sel)]
    return out


def fiber_metric_oracle(state: AnsatzState, y: float) -> dict:
    """Independent check of the block form via g~ = omega(., J .) and the
    frame change to (eta1, eta2, zeta)."""
    line = fiber_line(state, y)
    gt = coordinate_metric(state, y)
    W, detW = line.w, np.linalg.det(line.w)
    im = line.alpha.imag.T  # (Nx, 2)
    g13 = 2 * np.einsum("xk,xkj->xj", im, W)
    g33 = line.density + 4 * np.einsum("xj,xk,xjk->x", im, im, W)
    changed = np.empty_like(gt)
    for ix in range(line.grid.Nx):
        A = np.eye(3)
        A[:, 2] = detW[ix] * np.array([-2 * im[ix, 0], -2 * im[ix, 1], 1.0])
        changed[ix] = A.T @ gt[ix] @ A
    block = np.zeros_like(gt)
    block[:, :2, :2] = W
    block[:, 2, 2] = detW
    return {
        "g_tilde": gt,
        "g_frame": changed,
        "intermediate_13": float(np.max(np.abs(gt[:, :2, 2] - g13))),
        "intermediate_33": float(np.max(np.abs(gt[:, 2, 2] - g33))),
        "block": float(np.max(np.abs(changed - block))),
    }


def mclean_metric(state: AnsatzState, y: float) -> np.ndarray:
    """G = integral of g^{-1} over the x-circle, in the coframe dual to (eta, zeta)."""
    line = fiber_line(state, y)
    G = np.zeros((3, 3))
    G[:2, :2] = line.integrate(line.winv)
    G[2, 2] = line.integrate(line.density)
    return G


@dataclass(frozen=True)
class HarmonicFrame:
    """Xi_1, Xi_2, Xi_3 per x-node as coefficient rows in the coframe
    (dx, dphi1, dphi2); ``coeffs`` has shape ``(3, Nx, 3)``."""

    grid: BaseGrid
    y: float
    coeffs: np.ndarray


def harmonic_frame(state: AnsatzState, y: float) -> HarmonicFrame:
    line = fiber_line(state, y)
    Nx = line.grid.Nx
    c = np.zeros((3, Nx, 3))
    for k in range(2):
        c[k, :, 0] = -2 * line.alpha[k].imag
        c[k, :, 1 + k] = -1.0
    c[2, :, 0] = -line.density
    return HarmonicFrame(line.grid, line.y, c)


def fiber_coordinate_metric(state: AnsatzState, y: float) -> np.ndarray:
    """g~ reordered to the coordinate basis (d/dx, d/dphi1, d/dphi2)."""
    gt = coordinate_metric(state, y)
    order = [2, 0, 1]
    return gt[:, order][:, :, order]


def coclosed_residual(frame: HarmonicFrame, g: np.ndarray) -> float:
    """sup |d * Xi_k| on the fibre.

    With coefficients depending on x only, d * Xi = 0 reduces to
    d/dx (sqrt(det g) g^{xb} Xi_b) = 0.  ``g`` is ``(Nx, 3, 3)`` in the
    coordinate basis (x, phi1, phi2).
    """
    ginv = np.linalg.inv(g)
    vol = np.sqrt(np.linalg.det(g))
    worst = 0.0
    for k in range(3):
        flux = vol * np.einsum("xb,xb->x", ginv[:, 0, :], frame.coeffs[k])
        div = d_dx(flux[:, None], frame.grid)[:, 0]
        worst = max(worst, float(np.max(np.abs(div))))
    return worst


def coclosed_check(frame: HarmonicFrame, g: np.ndarray, tol: float = 1e-8) -> bool:
    return coclosed_residual(frame, g) <= tol


def l2_gram(state: AnsatzState, y: float, normalize: bool = True) -> np.ndarray:
    """<Xi_j, Xi_k> in L2 of the fibre, by pointwise g-products from the
    assembled forms.  ``normalize`` divides by the (2 pi)^2 angular volume."""
    frame = harmonic_frame(state, y)
    g = fiber_coordinate_metric(state, y)
    ginv = np.linalg.inv(g)
    vol = np.sqrt(np.linalg.det(g))
    dens = np.einsum("jxa,xab,kxb,x->xjk", frame.coeffs, ginv, frame.coeffs, vol)
    G = frame.grid.dx * dens.sum(axis=0) * ANGULAR_VOLUME
    return G / ANGULAR_VOLUME if normalize else G


def semiflat_volume(state: AnsatzState, y: float) -> float:
    """Phi = det(int W^{-1} dx) / int det W^{-1} dx."""
    line = fiber_line(state, y)
    return float(np.linalg.det(line.integrate(line.winv)) / line.integrate(line.density))


def semiflat_volume_dual(state: AnsatzState, y: float) -> float:
    """Phi as det((P^{-1})^T G P^{-1})."""
    P = period_matrix(state, y)
    if abs(np.linalg.det(P)) < 1e-300:
        raise np.linalg.LinAlgError("singular period matrix")
    Pinv = np.linalg.inv(P)
    return float(np.linalg.det(Pinv.T @ mclean_metric(state, y) @ Pinv))


def fiber_volume(state: AnsatzState, y: float, raw: bool = False,
                 assembler: Callable | None = None) -> float:
    """Integral of Omega over the fibre, evaluated on the frame (eta1, eta2, d/dx).

    ``raw`` keeps the (2 pi)^2 angular factor.  ``assembler`` replaces
    ``point_forms`` (used for negative controls).
    """
    line = fiber_line(state, y)
    assemble = point_forms if assembler is None else assembler
    e = np.eye(6)
    vals = np.empty(line.grid.Nx, dtype=complex)
    for ix in range(line.grid.Nx):
        Omega, _ = assemble(line.winv[ix], line.alpha[:, ix])
        vals[ix] = Omega(e[PHI1], e[PHI2], e[X])
    total = line.grid.dx * np.sum(vals)
    vol = abs(total) if abs(total.imag) > 1e-12 * max(1.0, abs(total)) else total.real
    return float(vol * ANGULAR_VOLUME if raw else vol)


@dataclass(frozen=True)
class FibrationGeometry:
    base_point: tuple
    P: np.ndarray
    W: np.ndarray
    detW: np.ndarray
    G: np.ndarray
    phi: float
    vol: float
    vol_raw: float

    def to_dict(self) -> dict:
        return {
            "base_point": list(self.base_point),
            "P": self.P.tolist(),
            "g_blocks": {"W": self.W.tolist(), "detW": self.detW.tolist()},
            "G": self.G.tolist(),
            "phi": self.phi,
            "vol": self.vol,
            "vol_raw": self.vol_raw,
        }


def fibration_geometry(state: AnsatzState, y: float) -> FibrationGeometry:
    W, detW = fiber_metric(state, y)
    t = state.t if len(state.t) == 2 else state.t + (0.0,)
    return FibrationGeometry(
        base_point=(t[0], t[1], float(y)),
        P=period_matrix(state, y),
        W=W,
        detW=detW,
        G=mclean_metric(state, y),
        phi=semiflat_volume(state, y),
        vol=fiber_volume(state, y),
        vol_raw=fiber_volume(state, y, raw=True),
    )
