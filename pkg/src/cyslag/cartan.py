"""Polar-space dimension counts for the standard SU(n)-structure on R^{2n}.

For each flag level k the subspace

    h_k = { x in M_{2n}(R) : (x . omega0)|R^k = (x . Omega0)|R^k = 0 }

is the kernel of an explicit linear map; its rank is the codimension c_k.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from functools import reduce

import numpy as np

from .forms import AltForm, decomposable_check, lie_action, restrict, wedge, wedge_all

PIVOT_TOL = 1e-9


@dataclass(frozen=True)
class SUStructure:
    n: int
    J: np.ndarray
    omega0: AltForm
    Omega0: AltForm

    @property
    def dim(self) -> int:
        return 2 * self.n


@dataclass(frozen=True)
class PolarReport:
    k: int
    dim_hk: int
    c_k: int
    dim_H_in_S: int
    extension_rank: int

    def to_dict(self) -> dict:
        return asdict(self)


def build_su_structure(n: int) -> SUStructure:
    """(J, omega0, Omega0) in coordinates (x_1..x_n, y_1..y_n), dz_j = dx_j + i dy_j."""
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    d = 2 * n
    eye = np.eye(n)
    J = np.block([[np.zeros((n, n)), eye], [-eye, np.zeros((n, n))]])
    dz = []
    for j in range(n):
        comp = np.zeros(d, dtype=complex)
        comp[j], comp[n + j] = 1.0, 1j
        dz.append(AltForm.one_form(comp))
    Omega0 = wedge_all(dz)
    omega0 = reduce(lambda a, b: a + b, [0.5j * wedge(z, z.conj()) for z in dz]).real
    return SUStructure(n, J, omega0, Omega0)


def structure_residuals(s: SUStructure) -> dict:
    """Magnitudes of the SU-structure invariants (all should vanish)."""
    n = s.n
    top = wedge_all([s.omega0] * n)
    norm = (-1) ** (n * (n - 1) // 2) * (0.5j) ** n
    fact = float(np.prod(np.arange(1, n + 1)))
    return {
        "J_squared": float(np.abs(s.J @ s.J + np.eye(s.dim)).max()),
        "type": wedge(s.Omega0, s.omega0).norm(),
        "normalization": (top / fact - norm * wedge(s.Omega0, s.Omega0.conj())).norm(),
        "decomposable": decomposable_check(s.Omega0),
    }


def su_basis(n: int) -> list[np.ndarray]:
    """Real basis of su(n) in the regular presentation: [[A, -B], [B, A]]
    with A antisymmetric, B symmetric and traceless."""
    out = []

    def embed(A, B):
        return np.block([[A, -B], [B, A]])

    zero = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            A = zero.copy()
            A[i, j], A[j, i] = 1.0, -1.0
            out.append(embed(A, zero))
            B = zero.copy()
            B[i, j] = B[j, i] = 1.0
            out.append(embed(zero, B))
    for i in range(n - 1):
        B = zero.copy()
        B[i, i], B[i + 1, i + 1] = 1.0, -1.0
        out.append(embed(zero, B))
    return out


def restriction_matrix(s: SUStructure, k: int) -> np.ndarray:
    """Real matrix of x -> (restrict(x.omega0, k), restrict(x.Omega0, k)).

    Columns index the elementary matrices E_ab of M_{2n}(R); rows are the
    real and imaginary parts of all restricted blade coefficients.
    """
    d = s.dim
    cols = []
    for a in range(d):
        for b in range(d):
            E = np.zeros((d, d))
            E[a, b] = 1.0
            r2 = restrict(lie_action(E, s.omega0), k).to_vector()
            rn = restrict(lie_action(E, s.Omega0), k).to_vector()
            v = np.concatenate([r2, rn])
            cols.append(np.concatenate([v.real, v.imag]))
    return np.column_stack(cols)


def row_rank(A: np.ndarray, tol: float = PIVOT_TOL) -> int:
    """Rank by Gaussian elimination with partial pivoting."""
    A = np.array(A, dtype=float)
    rows, cols = A.shape
    rank = 0
    for c in range(cols):
        if rank == rows:
            break
        p = rank + int(np.argmax(np.abs(A[rank:, c])))
        if abs(A[p, c]) <= tol:
            continue
        A[[rank, p]] = A[[p, rank]]
        A[rank + 1:] -= np.outer(A[rank + 1:, c] / A[rank, c], A[rank])
        rank += 1
    return rank


def polar_subspace(s: SUStructure, k: int) -> PolarReport:
    if not 0 <= k <= s.dim - 1:
        raise ValueError(f"k must lie in [0, {s.dim - 1}], got {k}")
    n = s.n
    c_k = row_rank(restriction_matrix(s, k))
    dim_hk = 4 * n * n - c_k
    dim_H = dim_hk + 2 * n - (n * n - 1)
    return PolarReport(k, dim_hk, c_k, dim_H, dim_H - k - 1)


def cartan_sum(s: SUStructure) -> tuple[int, int]:
    """(C, target): sum of c_k over the flag and 2n q with q = dim SO(2n) - dim SU(n)."""
    n = s.n
    C = sum(polar_subspace(s, k).c_k for k in range(2 * n))
    q = n * (2 * n - 1) - (n * n - 1)
    return C, 2 * n * q


def cartan_report(n: int) -> dict:
    s = build_su_structure(n)
    levels = [polar_subspace(s, k) for k in range(2 * n)]
    C = sum(r.c_k for r in levels)
    q = n * (2 * n - 1) - (n * n - 1)
    return {
        "n": n,
        "levels": [r.to_dict() for r in levels],
        "C": C,
        "target": 2 * n * q,
        "equal": C == 2 * n * q,
    }
