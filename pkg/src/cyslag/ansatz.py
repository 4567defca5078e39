"""Torus-symmetric Calabi-Yau ansatz: state, pointwise forms and checks.

The base is N = {u = x + i y} with holomorphic volume du; the torus
fibre has angles phi_j.  A state holds, on the base grid and at a fixed
moment-map value t, the inverse Gram matrix W^{-1} = (w^{ij}), the
connection coefficients alpha_j of

    theta_j = alpha_j du - conj(alpha_j) d(ubar) + i dphi_j,

and the reduced Kähler density f with omega_r = (i/2) f du ^ d(ubar).

Pointwise forms live on R^6 with coordinates (x, y, t1, t2, phi1, phi2):

    omega = omega_r - i theta_j ^ dt_j
    Omega = -(w^{1k} dt_k - theta_1) ^ (w^{2k} dt_k - theta_2) ^ du
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import scipy.linalg

from .forms import AltForm, contract, decomposable_check, wedge, wedge_all
from .grid import BaseGrid, d_dx, d_dy, d_u, d_ubar, l2_norm

X, Y, T1, T2, PHI1, PHI2 = range(6)
LABELS = ("x", "y", "t1", "t2", "phi1", "phi2")

# packed storage of the symmetric W^{-1}: one array per unordered pair
_PACK = {
    1: {(0, 0): 0},
    2: {(0, 0): 0, (0, 1): 1, (1, 0): 1, (1, 1): 2},
}


class NotPositiveDefinite(ValueError):
    pass


def pack_index(m: int, i: int, j: int) -> int:
    return _PACK[m][(i, j)]


def n_packed(m: int) -> int:
    return m * (m + 1) // 2


def det_winv(winv: np.ndarray, m: int) -> np.ndarray:
    if m == 1:
        return winv[..., 0, :, :]
    return winv[..., 0, :, :] * winv[..., 2, :, :] - winv[..., 1, :, :] ** 2


def spd_violations(winv: np.ndarray, m: int) -> np.ndarray:
    """Boolean mask of nodes where the packed W^{-1} is not positive definite."""
    det = det_winv(winv, m)
    trace = winv[..., 0, :, :] if m == 1 else winv[..., 0, :, :] + winv[..., 2, :, :]
    return ~((det > 0) & (trace > 0) & np.isfinite(det))


@dataclass(frozen=True, eq=False)
class AnsatzState:
    """Fields of the ansatz on ``grid`` at moment-map value ``t``.

    ``winv`` is packed as ``(m(m+1)/2, Nx, Ny)``: ``[w11]`` for m = 1 and
    ``[w11, w12, w22]`` for m = 2, so w^{12} and w^{21} share storage.
    ``alpha`` has shape ``(m, Nx, Ny)``.  ``density`` defaults to det W^{-1}.
    """

    grid: BaseGrid
    m: int
    winv: np.ndarray
    alpha: np.ndarray
    t: tuple[float, ...] = ()
    density: np.ndarray | None = None

    def __post_init__(self):
        if self.m not in (1, 2):
            raise ValueError(f"m must be 1 or 2, got {self.m}")
        shape = self.grid.shape
        winv = np.array(self.winv, dtype=float)
        alpha = np.array(self.alpha, dtype=complex)
        if winv.shape != (n_packed(self.m),) + shape:
            raise ValueError(f"winv has shape {winv.shape}, expected {(n_packed(self.m),) + shape}")
        if alpha.shape != (self.m,) + shape:
            raise ValueError(f"alpha has shape {alpha.shape}, expected {(self.m,) + shape}")
        if not (np.all(np.isfinite(winv)) and np.all(np.isfinite(alpha))):
            raise ValueError("state fields must be finite")
        bad = spd_violations(winv, self.m)
        if bad.any():
            ix, iy = np.argwhere(bad)[0]
            raise NotPositiveDefinite(
                f"W^-1 not positive definite at node ({ix}, {iy}) of {bad.sum()} bad nodes"
            )
        density = det_winv(winv, self.m) if self.density is None else np.array(self.density, dtype=float)
        if density.shape != shape or not np.all(np.isfinite(density)):
            raise ValueError("density must be a finite field on the grid")
        t = tuple(float(v) for v in self.t) or (0.0,) * self.m
        if len(t) != self.m:
            raise ValueError(f"t must have {self.m} entries")
        for arr in (winv, alpha, density):
            arr.setflags(write=False)
        object.__setattr__(self, "winv", winv)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "density", density)
        object.__setattr__(self, "t", t)

    @classmethod
    def from_matrix(cls, grid, winv_full, alpha, t=(), density=None) -> "AnsatzState":
        """Build from a full ``(m, m, Nx, Ny)`` array (symmetrized)."""
        winv_full = np.asarray(winv_full, dtype=float)
        m = winv_full.shape[0]
        if m == 1:
            packed = winv_full[0, 0][None]
        else:
            packed = np.stack([winv_full[0, 0], 0.5 * (winv_full[0, 1] + winv_full[1, 0]), winv_full[1, 1]])
        return cls(grid, m, packed, alpha, t, density)

    def w(self, i: int, j: int) -> np.ndarray:
        """The field w^{ij} (0-based indices)."""
        return self.winv[pack_index(self.m, i, j)]

    def winv_matrix(self) -> np.ndarray:
        """W^{-1} as ``(Nx, Ny, m, m)``."""
        out = np.empty(self.grid.shape + (self.m, self.m))
        for i in range(self.m):
            for j in range(self.m):
                out[..., i, j] = self.w(i, j)
        return out

    def w_matrix(self) -> np.ndarray:
        """W = (w_jk) as ``(Nx, Ny, m, m)``."""
        return np.linalg.inv(self.winv_matrix())

    def det_winv(self) -> np.ndarray:
        return det_winv(self.winv, self.m)

    def replace(self, **changes) -> "AnsatzState":
        fields = dict(grid=self.grid, m=self.m, winv=self.winv, alpha=self.alpha,
                      t=self.t, density=self.density)
        fields.update(changes)
        if "winv" in changes and "density" not in changes:
            fields["density"] = None
        return AnsatzState(**fields)

    def node_data(self, node) -> tuple[np.ndarray, np.ndarray]:
        ix, iy = node
        return self.winv_matrix()[ix, iy], self.alpha[:, ix, iy]


def flat_state(grid: BaseGrid, m: int = 2, winv=None, alpha=None) -> AnsatzState:
    """Spatially constant state (an exact solution when alpha is constant)."""
    winv = np.eye(m) if winv is None else np.asarray(winv, dtype=float)
    alpha = np.zeros(m) if alpha is None else np.asarray(alpha, dtype=complex)
    ones = np.ones(grid.shape)
    full = winv[:, :, None, None] * ones
    return AnsatzState.from_matrix(grid, full, alpha[:, None, None] * ones)


def random_state(grid: BaseGrid, m: int, rng: np.random.Generator, modes: int = 2,
                 amplitude: float = 0.45) -> AnsatzState:
    """Random band-limited SPD state: trig polynomials in x, affine in y.

    Fourier content stays at or below ``modes`` (kept < Nx/3).
    """
    if modes > grid.Nx // 3:
        raise ValueError("modes must not exceed Nx/3")
    xx, yy = grid.mesh()
    ys = 2 * (yy - grid.y_min) / (grid.y_max - grid.y_min) - 1

    def bump(budget):
        # sum of |coefficients| <= budget so |bump| <= budget
        terms = [ys] + [f(2 * np.pi * k * xx / grid.kappa) for k in range(1, modes + 1) for f in (np.sin, np.cos)]
        c = rng.normal(size=len(terms))
        c *= budget * rng.uniform(0.2, 1.0) / np.sum(np.abs(c))
        return sum(ci * ti for ci, ti in zip(c, terms))

    a = rng.uniform(0.5, 3.0, size=m)
    winv = np.empty((m, m) + grid.shape)
    for i in range(m):
        winv[i, i] = a[i] * (1 + bump(amplitude))
    if m == 2:
        winv[0, 1] = winv[1, 0] = np.sqrt(a[0] * a[1]) * bump(0.4)
    alpha = np.stack([bump(1.0) + 1j * bump(1.0) + complex(*rng.normal(size=2)) for _ in range(m)])
    return AnsatzState.from_matrix(grid, winv, alpha)


# pointwise forms --------------------------------------------------------------


def _dt(j):
    return AltForm.basis(6, T1 + j)


def _du():
    return AltForm.one_form([1, 1j, 0, 0, 0, 0])


def theta_form(alpha_j: complex, j: int) -> AltForm:
    du = _du()
    return alpha_j * du - np.conj(alpha_j) * du.conj() + 1j * AltForm.basis(6, PHI1 + j)


def type10_forms(winv: np.ndarray, alpha: np.ndarray) -> list[AltForm]:
    """(w^{jk} dt_k - theta_j) for j = 1, 2, followed by du."""
    out = []
    for j in range(2):
        out.append(winv[j, 0] * _dt(0) + winv[j, 1] * _dt(1) - theta_form(alpha[j], j))
    out.append(_du())
    return out


def point_forms(winv: np.ndarray, alpha: np.ndarray, density: float | None = None):
    """(Omega, omega) at one point from a 2x2 W^{-1} and alpha = (alpha_1, alpha_2)."""
    winv = np.asarray(winv, dtype=float)
    if winv.shape != (2, 2):
        raise ValueError("pointwise model needs m = 2")
    if not (np.linalg.det(winv) > 0 and np.trace(winv) > 0):
        raise NotPositiveDefinite("W^-1 not positive definite")
    f = np.linalg.det(winv) if density is None else density
    du = _du()
    omega = (0.5j * f) * (du ^ du.conj())
    for j in range(2):
        omega = omega - 1j * (theta_form(alpha[j], j) ^ _dt(j))
    b1, b2, du = type10_forms(winv, alpha)
    Omega = -wedge_all([b1, b2, du])
    return Omega, omega.real


def assemble_point_forms(state: AnsatzState, node) -> tuple[AltForm, AltForm]:
    if state.m != 2:
        raise ValueError("pointwise assembly is implemented for m = 2 only")
    winv, alpha = state.node_data(node)
    return point_forms(winv, alpha)


NORMALIZATION = (-1) ** 3 * (0.5j) ** 3  # (-1)^{n(n-1)/2} (i/2)^n for n = 3


def hitchin_residuals(Omega: AltForm, omega: AltForm, tol: float = 1e-10) -> dict:
    """Pointwise Calabi-Yau conditions on (Omega, omega).

    Returns magnitudes; ``decomposable`` is the Plücker verdict at ``tol``.
    """
    OO = wedge(Omega, Omega.conj())
    omega3 = wedge_all([omega, omega, omega]) / 6.0
    return {
        "decomposable": decomposable_check(Omega, tol),
        "volume": abs(OO.top_coefficient()),
        "type": wedge(Omega, omega).norm(),
        "normalization": (omega3 - NORMALIZATION * OO).norm(),
    }


@dataclass
class IdentityCheck:
    passed: bool
    residuals: dict

    def __bool__(self):
        return self.passed


def check_wedge_identities(state: AnsatzState, node, tol: float = 1e-12, Omega=None) -> IdentityCheck:
    """Check Omega ^ conj(Omega) = 4 det W^{-1} dt1^dt2^theta1^theta2^du^dubar and
    theta_j ^ dt_j = -(w_jl / 2)(w^{lk} dt_k - theta_l) ^ (w^{jm} dt_m + theta_j).

    ``Omega`` overrides the assembled form (for negative controls).
    """
    winv, alpha = state.node_data(node)
    return wedge_identities(winv, alpha, tol, Omega)


def wedge_identities(winv, alpha, tol: float = 1e-12, Omega=None) -> IdentityCheck:
    winv = np.asarray(winv, dtype=float)
    W = np.linalg.inv(winv)
    if Omega is None:
        Omega, _ = point_forms(winv, alpha)
    du = _du()
    thetas = [theta_form(alpha[j], j) for j in range(2)]
    dts = [_dt(0), _dt(1)]
    volume = (-2) ** 2 * np.linalg.det(winv) * wedge_all(dts + thetas + [du, du.conj()])
    r_volume = (wedge(Omega, Omega.conj()) - volume).norm()

    lhs = wedge(thetas[0], dts[0]) + wedge(thetas[1], dts[1])
    rhs = AltForm.zero(6, 2)
    for j in range(2):
        conj_j = winv[j, 0] * dts[0] + winv[j, 1] * dts[1] + thetas[j]
        for l in range(2):
            b_l = winv[l, 0] * dts[0] + winv[l, 1] * dts[1] - thetas[l]
            rhs = rhs + (-W[j, l] / 2) * wedge(b_l, conj_j)
    r_pairing = (lhs - rhs).norm()
    residuals = {"volume_identity": r_volume, "pairing_identity": r_pairing}
    return IdentityCheck(max(residuals.values()) <= tol, residuals)


def complex_structure(Omega: AltForm) -> np.ndarray:
    """Real J with beta(J v) = i beta(v) for every (1,0)-form beta.

    The (1,0)-forms are recovered from Omega alone as the kernel of
    beta -> beta ^ Omega.
    """
    d = Omega.dim
    eye = np.eye(d)
    cols = [wedge(AltForm.one_form(eye[i]), Omega).to_vector() for i in range(d)]
    kernel = scipy.linalg.null_space(np.column_stack(cols), rcond=1e-10)
    if kernel.shape[1] != d // 2:
        raise ValueError("Omega does not determine an almost complex structure")
    B = kernel.T  # rows: (1,0) covectors
    M = np.vstack([B, B.conj()])
    eig = np.diag([1j] * (d // 2) + [-1j] * (d // 2))
    J = np.linalg.solve(M, eig @ M)
    return J.real


def hermitian_metric(omega: AltForm, J: np.ndarray) -> np.ndarray:
    """g(v, w) = omega(v, J w) in the coordinate basis."""
    d = omega.dim
    A = np.zeros((d, d))
    for (i, j), c in omega.coeffs.items():
        A[i, j] += c.real
        A[j, i] -= c.real
    return A @ J


def reduce_roundtrip(state: AnsatzState, node, tol: float = 1e-11, J=None) -> bool:
    """Recover W = (omega(eta_j, J eta_k)) and d(mu_i)(xi_j) = delta_ij."""
    Omega, omega = assemble_point_forms(state, node)
    winv, _ = state.node_data(node)
    return roundtrip_residual(Omega, omega, winv, J) <= tol


def roundtrip_residual(Omega, omega, winv, J=None) -> float:
    winv = np.asarray(winv, dtype=float)
    if abs(np.linalg.det(winv)) < 1e-300:
        raise ValueError("singular W^-1")
    J = complex_structure(Omega) if J is None else np.asarray(J, dtype=float)
    g = hermitian_metric(omega, J)
    eta = np.eye(6)[[PHI1, PHI2]]
    W_rec = eta @ g @ eta.T
    r_w = np.abs(W_rec - np.linalg.inv(winv)).max()
    # xi_j = w^{jk} J eta_k ;  d(mu_i) = i_{eta_i} omega
    xi = [sum(winv[j, k] * (J @ eta[k]) for k in range(2)) for j in range(2)]
    dmu = [contract(eta[i], omega) for i in range(2)]
    pairing = np.array([[dmu[i](xi[j]) for j in range(2)] for i in range(2)])
    r_mu = np.abs(pairing - np.eye(2)).max()
    return float(max(r_w, r_mu))


# field-level structure equations ------------------------------------------------


@dataclass(frozen=True, eq=False)
class StateDerivative:
    """d/dt_j of the state fields, same packing as AnsatzState."""

    winv: np.ndarray
    alpha: np.ndarray
    density: np.ndarray

    @classmethod
    def from_states(cls, states, weights) -> "StateDerivative":
        """Finite-difference combination sum_k weights[k] * states[k]."""
        grids = {s.grid for s in states}
        if len(grids) != 1:
            raise ValueError("neighbour states live on different grids")
        return cls(
            winv=sum(w * s.winv for w, s in zip(weights, states)),
            alpha=sum(w * s.alpha for w, s in zip(weights, states)),
            density=sum(w * s.density for w, s in zip(weights, states)),
        )

    @classmethod
    def centered(cls, minus: AnsatzState, plus: AnsatzState, h: float) -> "StateDerivative":
        return cls.from_states([minus, plus], [-0.5 / h, 0.5 / h])

    def w(self, m: int, i: int, j: int) -> np.ndarray:
        return self.winv[..., pack_index(m, i, j), :, :]


@dataclass
class ResidualReport:
    """Sup and L2 norms per structure equation, plus pointwise Hitchin maxima."""

    equations: dict = field(default_factory=dict)
    hitchin: dict = field(default_factory=dict)

    def add(self, name: str, residual, grid: BaseGrid):
        residual = np.asarray(residual)
        self.equations[name] = {
            "sup": float(np.max(np.abs(residual))) if residual.size else 0.0,
            "l2": l2_norm(residual, grid),
        }

    def max_sup(self, prefix: str = "") -> float:
        return max((v["sup"] for k, v in self.equations.items() if k.startswith(prefix)), default=0.0)

    def max_residual(self) -> float:
        vals = [self.max_sup()]
        vals += [v for k, v in self.hitchin.items() if k in ("type", "normalization", "identities", "roundtrip")]
        return max(vals)

    def to_dict(self) -> dict:
        return {"equations": self.equations, "hitchin": self.hitchin}


def structure_residuals(state: AnsatzState, derivs: Mapping[int, StateDerivative], dealias=False) -> dict:
    """Residual fields of the ansatz equations.

    ``derivs[j]`` holds the t_{j+1}-derivatives.  Keys (1-based in names):
    ``kahler_rate[j]``, ``connection[i,j]``, ``w_symmetry[i,j,k]`` and
    ``density_constraint``.
    """
    grid, m = state.grid, state.m
    out = {"density_constraint": state.density - state.det_winv()}
    for j, dj in derivs.items():
        a = state.alpha[j]
        # d/dt_j omega_r = i d theta_j  <=>  d_t f = 2 d_y Im a - 2 d_x Re a
        out[f"kahler_rate[{j + 1}]"] = dj.density - (2 * d_dy(a.imag, grid) - 2 * d_dx(a.real, grid, dealias))
        for i in range(m):
            # [d theta_i / d t_j]^(0,1) + dbar w^{ij} = 0
            out[f"connection[{i + 1},{j + 1}]"] = -np.conj(dj.alpha[i]) + d_ubar(state.w(i, j), grid, dealias)
    for i in range(m):
        for j in range(m):
            for k in range(j + 1, m):
                if j in derivs and k in derivs:
                    out[f"w_symmetry[{i + 1},{j + 1},{k + 1}]"] = derivs[k].w(m, i, j) - derivs[j].w(m, i, k)
    return out


def verify_structure(state: AnsatzState, derivs: Mapping[int, StateDerivative], *,
                     hitchin_stride: int | None = 1, tol: float = 1e-10,
                     dealias: bool = False) -> ResidualReport:
    """Residual report for one state.

    Field equations use spectral x- and 4th-order y-derivatives; the
    t-derivatives come from ``derivs`` (neighbour differences or exact).
    Pointwise Calabi-Yau conditions, both wedge identities and the
    reduction round trip are evaluated every ``hitchin_stride`` nodes
    (m = 2 only; ``None`` skips them).
    """
    for d in derivs.values():
        if d.density.shape[-2:] != state.grid.shape:
            raise ValueError("derivative fields do not match the state grid")
    report = ResidualReport()
    for name, r in structure_residuals(state, derivs, dealias).items():
        report.add(name, r, state.grid)
    if state.m == 2 and hitchin_stride:
        worst = {"decomposable": True, "min_volume": np.inf, "type": 0.0,
                 "normalization": 0.0, "identities": 0.0, "roundtrip": 0.0}
        Wfull = state.winv_matrix()
        for ix in range(0, state.grid.Nx, hitchin_stride):
            for iy in range(0, state.grid.Ny, hitchin_stride):
                winv, alpha = Wfull[ix, iy], state.alpha[:, ix, iy]
                Omega, omega = point_forms(winv, alpha)
                h = hitchin_residuals(Omega, omega, tol)
                worst["decomposable"] &= h["decomposable"]
                worst["min_volume"] = min(worst["min_volume"], h["volume"])
                worst["type"] = max(worst["type"], h["type"])
                worst["normalization"] = max(worst["normalization"], h["normalization"])
                ident = wedge_identities(winv, alpha, tol)
                worst["identities"] = max(worst["identities"], *ident.residuals.values())
                worst["roundtrip"] = max(worst["roundtrip"], roundtrip_residual(Omega, omega, winv))
        worst["decomposable"] = bool(worst["decomposable"])
        worst["min_volume"] = float(worst["min_volume"])
        report.hitchin = worst
    return report
