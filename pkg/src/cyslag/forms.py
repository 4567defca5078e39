"""Exterior algebra of complex-valued alternating forms on R^d.

A form of degree k is stored as a map from strictly increasing index
tuples ("blades", 0-based) to complex coefficients.  Absent blades are
zero.  Linear maps are plain ``(d, d)`` real arrays acting on column
vectors.

Conventions
-----------
* ``lie_action(x, a)(v1, ..., vk) = sum_i a(v1, ..., x v_i, ..., vk)``
  (infinitesimal pullback).
* ``contract_many([v1, ..., vm], a)`` is ``i_{v1} ... i_{vm} a``: the
  rightmost vector is contracted first.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np

Blade = tuple[int, ...]


class DimensionMismatch(ValueError):
    pass


@lru_cache(maxsize=None)
def _merge(left: Blade, right: Blade):
    """Sign and sorted blade of ``e^left ^ e^right``, or None if they overlap."""
    if set(left) & set(right):
        return None
    inversions = sum(1 for i in left for j in right if i > j)
    return (-1) ** inversions, tuple(sorted(left + right))


@lru_cache(maxsize=None)
def _blades(dim: int, degree: int) -> tuple[Blade, ...]:
    return tuple(combinations(range(dim), degree))


@dataclass(frozen=True, eq=False)
class AltForm:
    """Immutable degree-``degree`` alternating form on R^``dim``."""

    dim: int
    degree: int
    coeffs: Mapping[Blade, complex]

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"dim must be positive, got {self.dim}")
        if self.degree < 0 or (self.degree > self.dim and self.coeffs):
            raise ValueError(f"degree {self.degree} outside [0, {self.dim}]")
        clean = {}
        for blade, c in self.coeffs.items():
            blade = tuple(int(i) for i in blade)
            if len(blade) != self.degree:
                raise ValueError(f"blade {blade} does not have degree {self.degree}")
            if any(b <= a for a, b in zip(blade, blade[1:])):
                raise ValueError(f"blade {blade} is not strictly increasing")
            if blade and not (0 <= blade[0] and blade[-1] < self.dim):
                raise ValueError(f"blade {blade} outside range for dim {self.dim}")
            c = complex(c)
            if not np.isfinite(c):
                raise ValueError(f"non-finite coefficient on {blade}")
            if c != 0:
                clean[blade] = c
        object.__setattr__(self, "coeffs", MappingProxyType(clean))

    # construction -------------------------------------------------------

    @classmethod
    def zero(cls, dim: int, degree: int) -> "AltForm":
        return cls(dim, degree, {})

    @classmethod
    def scalar(cls, dim: int, value: complex) -> "AltForm":
        return cls(dim, 0, {(): value})

    @classmethod
    def basis(cls, dim: int, *indices: int, coeff: complex = 1.0) -> "AltForm":
        """``coeff * dx_{i1} ^ ... ^ dx_{ik}`` for arbitrary (unsorted) indices."""
        if len(set(indices)) != len(indices):
            return cls.zero(dim, len(indices))
        order = np.argsort(indices, kind="stable")
        sign = _permutation_sign(order)
        return cls(dim, len(indices), {tuple(sorted(indices)): sign * coeff})

    @classmethod
    def one_form(cls, components: Sequence[complex]) -> "AltForm":
        return cls(len(components), 1, {(i,): c for i, c in enumerate(components)})

    # arithmetic ---------------------------------------------------------

    def _check_same(self, other: "AltForm"):
        if self.dim != other.dim or self.degree != other.degree:
            raise DimensionMismatch(
                f"cannot combine ({self.dim}, {self.degree}) with "
                f"({other.dim}, {other.degree})"
            )

    def __add__(self, other: "AltForm") -> "AltForm":
        self._check_same(other)
        out = dict(self.coeffs)
        for blade, c in other.coeffs.items():
            out[blade] = out.get(blade, 0) + c
        return AltForm(self.dim, self.degree, out)

    def __neg__(self) -> "AltForm":
        return AltForm(self.dim, self.degree, {b: -c for b, c in self.coeffs.items()})

    def __sub__(self, other: "AltForm") -> "AltForm":
        return self + (-other)

    def __mul__(self, scalar) -> "AltForm":
        if isinstance(scalar, AltForm):
            return NotImplemented
        s = complex(scalar)
        return AltForm(self.dim, self.degree, {b: s * c for b, c in self.coeffs.items()})

    __rmul__ = __mul__

    def __truediv__(self, scalar) -> "AltForm":
        return self * (1.0 / complex(scalar))

    def __xor__(self, other: "AltForm") -> "AltForm":
        return wedge(self, other)

    def conj(self) -> "AltForm":
        return AltForm(self.dim, self.degree, {b: c.conjugate() for b, c in self.coeffs.items()})

    @property
    def real(self) -> "AltForm":
        return AltForm(self.dim, self.degree, {b: c.real for b, c in self.coeffs.items()})

    @property
    def imag(self) -> "AltForm":
        return AltForm(self.dim, self.degree, {b: c.imag for b, c in self.coeffs.items()})

    # inspection ---------------------------------------------------------

    def __getitem__(self, blade: Blade) -> complex:
        return self.coeffs.get(tuple(blade), 0j)

    def norm(self) -> float:
        """Largest coefficient magnitude."""
        return max((abs(c) for c in self.coeffs.values()), default=0.0)

    def is_zero(self, tol: float = 0.0) -> bool:
        return self.norm() <= tol

    def allclose(self, other: "AltForm", tol: float) -> bool:
        return (self - other).norm() <= tol

    def top_coefficient(self) -> complex:
        """Coefficient on dx_0 ^ ... ^ dx_{d-1} (only meaningful for top degree)."""
        return self[tuple(range(self.dim))]

    def to_vector(self) -> np.ndarray:
        """Dense coefficient vector in lexicographic blade order."""
        return np.array([self[b] for b in _blades(self.dim, self.degree)], dtype=complex)

    def __call__(self, *vectors) -> complex:
        return evaluate(self, vectors)

    def __repr__(self) -> str:
        return f"AltForm(dim={self.dim}, degree={self.degree}, {format_form(self)})"

    def __str__(self) -> str:
        return format_form(self)


def _permutation_sign(order) -> int:
    order = list(order)
    sign = 1
    seen = [False] * len(order)
    for start in range(len(order)):
        if seen[start]:
            continue
        length = 0
        j = start
        while not seen[j]:
            seen[j] = True
            j = order[j]
            length += 1
        if length % 2 == 0:
            sign = -sign
    return sign


def _format_number(c: complex) -> str:
    def g(v):
        return f"{v:.12g}"

    if c.imag == 0:
        return g(c.real)
    if c.real == 0:
        return f"{g(c.imag)}i"
    sign = "+" if c.imag >= 0 else "-"
    return f"({g(c.real)}{sign}{g(abs(c.imag))}i)"


def format_form(a: AltForm, labels: Sequence[str] | None = None) -> str:
    """Debug rendering such as ``(1+2i)·dx1^dy3``."""
    if labels is None:
        labels = [f"x{i + 1}" for i in range(a.dim)]
    if not a.coeffs:
        return "0"
    terms = []
    for blade in sorted(a.coeffs):
        c = a.coeffs[blade]
        if not blade:
            terms.append(_format_number(c))
            continue
        body = "^".join(f"d{labels[i]}" for i in blade)
        terms.append(f"{_format_number(c)}·{body}")
    return " + ".join(terms)


# core operations ----------------------------------------------------------


def wedge(a: AltForm, b: AltForm) -> AltForm:
    if a.dim != b.dim:
        raise DimensionMismatch(f"wedge of forms on R^{a.dim} and R^{b.dim}")
    degree = a.degree + b.degree
    if degree > a.dim:
        # formally zero; degree is kept so gradings still add up
        return AltForm.zero(a.dim, degree)
    out: dict[Blade, complex] = {}
    for I, ca in a.coeffs.items():
        for J, cb in b.coeffs.items():
            merged = _merge(I, J)
            if merged is None:
                continue
            sign, K = merged
            out[K] = out.get(K, 0) + sign * ca * cb
    return AltForm(a.dim, degree, out)


def wedge_all(forms: Iterable[AltForm]) -> AltForm:
    forms = list(forms)
    out = forms[0]
    for f in forms[1:]:
        out = wedge(out, f)
    return out


def evaluate(a: AltForm, vectors) -> complex:
    """``a(v1, ..., vk)`` via k-by-k minors."""
    if len(vectors) != a.degree:
        raise ValueError(f"degree-{a.degree} form evaluated on {len(vectors)} vectors")
    if a.degree == 0:
        return a[()]
    V = np.column_stack([np.asarray(v, dtype=complex) for v in vectors])
    if V.shape[0] != a.dim:
        raise DimensionMismatch(f"vectors of length {V.shape[0]} for dim {a.dim}")
    return complex(sum(c * np.linalg.det(V[list(I), :]) for I, c in a.coeffs.items()))


def contract(v, a: AltForm) -> AltForm:
    """Interior product ``i_v a``."""
    v = np.asarray(v)
    if a.degree < 1:
        raise ValueError("cannot contract a degree-0 form")
    if v.shape != (a.dim,):
        raise DimensionMismatch(f"vector of shape {v.shape} for dim {a.dim}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector must be finite")
    out: dict[Blade, complex] = {}
    for I, c in a.coeffs.items():
        for p, i in enumerate(I):
            if v[i] == 0:
                continue
            K = I[:p] + I[p + 1:]
            out[K] = out.get(K, 0) + (-1) ** p * v[i] * c
    return AltForm(a.dim, a.degree - 1, out)


def contract_many(vectors: Sequence, a: AltForm) -> AltForm:
    """``i_{v1} i_{v2} ... i_{vm} a``; the last vector acts first."""
    for v in reversed(list(vectors)):
        a = contract(v, a)
    return a


def _as_matrix(x, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (dim, dim):
        raise DimensionMismatch(f"linear map of shape {x.shape} for dim {dim}")
    if not np.all(np.isfinite(x)):
        raise ValueError("linear map must have finite entries")
    return x


def lie_action(x, a: AltForm) -> AltForm:
    """Derivation action of ``x`` in gl(d): sum_i a(..., x v_i, ...)."""
    x = _as_matrix(x, a.dim)
    out: dict[Blade, complex] = {}
    for I, c in a.coeffs.items():
        for p, i in enumerate(I):
            rest = I[:p] + I[p + 1:]
            for j in np.flatnonzero(x[i]):
                j = int(j)
                if j in rest:
                    continue
                # dx_i -> x[i, j] dx_j in slot p, then sort
                K = rest[:p] + (j,) + rest[p:]
                order = np.argsort(K)
                sign = _permutation_sign(order)
                key = tuple(sorted(K))
                out[key] = out.get(key, 0) + sign * x[i, j] * c
    return AltForm(a.dim, a.degree, out)


def pullback(A, a: AltForm) -> AltForm:
    """``(A^* a)(v1, ..., vk) = a(A v1, ..., A vk)``."""
    A = _as_matrix(A, a.dim)
    if a.degree == 0:
        return a
    out: dict[Blade, complex] = {}
    for J in _blades(a.dim, a.degree):
        cols = list(J)
        total = 0j
        for I, c in a.coeffs.items():
            total += c * np.linalg.det(A[np.ix_(list(I), cols)])
        out[J] = total
    return AltForm(a.dim, a.degree, out)


def restrict(a: AltForm, k: int) -> AltForm:
    """Restriction to R^k = span(e_0, ..., e_{k-1}), kept in the ambient dim."""
    if not 0 <= k <= a.dim:
        raise ValueError(f"k={k} outside [0, {a.dim}]")
    return AltForm(a.dim, a.degree, {I: c for I, c in a.coeffs.items() if not I or I[-1] < k})


def decomposable_check(a: AltForm, tol: float = 1e-12) -> bool:
    """Plücker test: ``(i_xi a) ^ a = 0`` for every basis (k-1)-blade xi.

    ``tol`` is relative to the squared coefficient scale of ``a``.
    """
    if a.degree < 1:
        raise ValueError("decomposability is defined for degree >= 1")
    scale = max(1.0, a.norm() ** 2)
    eye = np.eye(a.dim)
    for xi in _blades(a.dim, a.degree - 1):
        reduced = contract_many([eye[i] for i in xi], a)
        if wedge(reduced, a).norm() > tol * scale:
            return False
    return True
