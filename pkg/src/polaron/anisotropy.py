"""Dielectric matrices, their canonical diagonal potentials and evaluators.

Two families of interaction potentials are supported.

* ``Full``: built from a matrix ``0 < M <= 1``; in the principal frame
  ``V(x) = 1/|x| - 1/|diag(d)^-1 x|`` with ``d1 >= d2 >= d3``.
* ``Simplified``: built from ``0 <= S < 1``; in the principal frame
  ``V(x) = 1/|diag(d)^-1 x|`` with ``d = 1 - s`` sorted ascending.

Every potential is a signed sum of anisotropic Coulomb terms
``w / |diag(a) x|``; the convolution code works term by term.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import EigenvalueOutOfRange, NotSymmetric, OriginSingular

EQ_TOL = 1e-10  # equality tolerance for degenerate eigenvalues
_TINY = np.finfo(float).tiny


class Model(str, enum.Enum):
    FULL = "full"
    SIMPLIFIED = "simplified"


@dataclass(frozen=True)
class DielectricSpec:
    model: Model
    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.shape != (3, 3):
            raise NotSymmetric(f"matrix must be 3x3, got shape {m.shape}")
        scale = max(np.abs(m).max(), 1.0)
        if np.abs(m - m.T).max() > 1e-12 * scale:
            raise NotSymmetric("dielectric matrix is not symmetric")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "model", Model(self.model))

    @classmethod
    def diag(cls, model, values) -> "DielectricSpec":
        return cls(Model(model), np.diag(np.asarray(values, dtype=float)))


@dataclass(frozen=True)
class CanonicalPotential:
    model: Model
    d: tuple

    def __post_init__(self):
        object.__setattr__(self, "model", Model(self.model))
        object.__setattr__(self, "d", tuple(float(v) for v in self.d))

    @property
    def is_vacuum(self) -> bool:
        return self.model is Model.FULL and all(abs(v - 1.0) < EQ_TOL for v in self.d)

    def coulomb_terms(self) -> list[tuple[float, np.ndarray]]:
        """Return ``[(w, a), ...]`` with ``V(x) = sum w / |diag(a) x|``."""
        inv = 1.0 / np.asarray(self.d)
        if self.model is Model.FULL:
            if self.is_vacuum:
                return []
            return [(1.0, np.ones(3)), (-1.0, inv)]
        return [(1.0, inv)]

    def describe(self) -> dict:
        return {"model": self.model.value, "d": list(self.d)}


def from_canonical(model, d) -> CanonicalPotential:
    """Build a potential directly from canonical entries (sorted here).

    Full: ``0 < d_i <= 1``; Simplified: ``0 < d_i <= 1``.
    """
    model = Model(model)
    d = np.asarray(d, dtype=float)
    if d.shape != (3,):
        raise EigenvalueOutOfRange(float("nan"), "canonical form needs three entries")
    for v in d:
        if not (0.0 < v <= 1.0):
            raise EigenvalueOutOfRange(float(v), f"canonical entry {v!r} not in (0, 1]")
    d = sorted(d, reverse=model is Model.FULL)
    return CanonicalPotential(model, tuple(d))


def canonicalize(spec: DielectricSpec) -> CanonicalPotential:
    """Reduce a dielectric matrix to its canonical diagonal potential.

    Full model: the canonical entries are the pairwise products
    ``sqrt(m_i m_j)`` of the eigenvalues of M, sorted descending.
    Simplified model: ``1 - s_i`` sorted ascending.
    """
    eig = np.linalg.eigvalsh(spec.matrix)
    if spec.model is Model.FULL:
        for v in eig:
            if not (0.0 < v <= 1.0 + 1e-14):
                raise EigenvalueOutOfRange(float(v), f"Full-model eigenvalue {v!r} not in (0, 1]")
        eig = np.minimum(eig, 1.0)
        m1, m2, m3 = eig
        d = sorted((np.sqrt(m1 * m2), np.sqrt(m1 * m3), np.sqrt(m2 * m3)), reverse=True)
    else:
        for v in eig:
            if not (0.0 - 1e-14 <= v < 1.0):
                raise EigenvalueOutOfRange(float(v), f"Simplified-model eigenvalue {v!r} not in [0, 1)")
        d = sorted(1.0 - np.maximum(eig, 0.0))
    return CanonicalPotential(spec.model, tuple(d))


def eval_real(pot: CanonicalPotential, x) -> np.ndarray | float:
    """V(x) for x of shape (3,) or (..., 3)."""
    x = np.asarray(x, dtype=float)
    r = np.sqrt(np.sum(x * x, axis=-1))
    if np.any(r <= _TINY):
        raise OriginSingular("V is singular at the origin")
    out = np.zeros_like(r)
    for w, a in pot.coulomb_terms():
        out = out + w / np.sqrt(np.sum((x * a) ** 2, axis=-1))
    return out if out.ndim else float(out)


def eval_fourier(pot: CanonicalPotential, k) -> np.ndarray | float:
    """Fourier transform of V, convention ``V^(k) = int V(x) exp(-i k.x) dx``."""
    k = np.asarray(k, dtype=float)
    kk = np.sum(k * k, axis=-1)
    if np.any(kk <= _TINY):
        raise OriginSingular("V^ is singular at k = 0")
    out = np.zeros_like(kk)
    for w, a in pot.coulomb_terms():
        q = k / a
        out = out + w * 4.0 * np.pi / (np.prod(a) * np.sum(q * q, axis=-1))
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class PotentialBounds:
    a: float
    b: float


def bounds(pot: CanonicalPotential) -> PotentialBounds:
    """Coulomb envelope ``b/|x| <= V(x) <= a/|x|``."""
    d = pot.d
    if pot.model is Model.FULL:
        return PotentialBounds(1.0 - min(d), 1.0 - max(d))
    return PotentialBounds(max(d), min(d))


@dataclass(frozen=True)
class SteinerFlags:
    axes: tuple
    planes: dict  # keys (i, j) with i < j

    def approved_axes(self) -> list[int]:
        return [k for k in range(3) if self.axes[k]]


def _eq(u: float, v: float) -> bool:
    return abs(u - v) <= EQ_TOL


def steiner_criteria(pot: CanonicalPotential) -> SteinerFlags:
    """Axes and planes along which V equals its own Steiner symmetrization."""
    d = pot.d
    if pot.model is Model.FULL:
        m1 = d[0]
        axes = (True,) + tuple(m1**3 <= d[k] ** 2 + EQ_TOL for k in (1, 2))
    else:
        axes = (True, True, True)
    planes = {
        (i, j): bool(_eq(d[i], d[j]) and axes[i] and axes[j])
        for i, j in ((0, 1), (1, 2), (0, 2))
    }
    return SteinerFlags(tuple(bool(a) for a in axes), planes)


def cylinder_axis(pot: CanonicalPotential) -> int | None:
    """Index of the symmetry axis when exactly two canonical entries coincide."""
    d = pot.d
    eq = [(i, j) for i, j in ((0, 1), (1, 2), (0, 2)) if _eq(d[i], d[j])]
    if len(eq) != 1:
        return None
    i, j = eq[0]
    return 3 - i - j
