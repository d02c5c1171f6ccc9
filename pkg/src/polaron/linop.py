"""Linearized operator at a positive solution and its parity-sector spectra.

With ``Q`` solving ``-lap Q + Q - (V * Q^2) Q = 0`` the operator is::

    L xi = -lap xi + xi + Phi xi - 2 Q (V * (Q xi)),   Phi = -(V * Q^2).

Sector problems are solved on the octant ``x, y, z > 0``: a vector of octant
values is unfolded to the full grid with the sector signs, ``L`` is applied,
and the octant is read back.  Reflections are orthogonal so the reduced
operator stays symmetric.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .anisotropy import CanonicalPotential, Model, steiner_criteria
from .errors import CriterionFailed, GridMismatch, LanczosStall, NotSymmetricSolution
from .field import (
    SECTORS,
    Field,
    derivative,
    get_convolver,
    kinetic_symbol,
    fftn,
    ifftn,
    parity_sector,
    project_parity_array,
    sector_defect,
)

SYM_TOL = 1e-6
SINGLY_ODD = ((-1, 1, 1), (1, -1, 1), (1, 1, -1))


@dataclass(frozen=True)
class SectorSpectrum:
    sector: tuple
    eigenvalues: np.ndarray
    eigenfields: list
    residuals: np.ndarray
    iterations: int

    def record(self) -> dict:
        return {
            "sector": list(self.sector),
            "eigenvalues": [float(v) for v in self.eigenvalues],
            "residuals": [float(v) for v in self.residuals],
            "iterations": self.iterations,
        }


class LinearizedOp:
    def __init__(self, Q: Field, pot: CanonicalPotential, method: str = "spectral", symmetrize: bool = True):
        defect = sector_defect(Q, (1, 1, 1))
        if defect > SYM_TOL:
            raise NotSymmetricSolution(f"Q is not even in every axis (defect {defect:.2e}); center it first")
        vals = project_parity_array(Q.values, (1, 1, 1)) if symmetrize else Q.values
        self.Q = Field(Q.grid, vals)
        self.pot = pot
        self.grid = Q.grid
        self.conv = get_convolver(pot, Q.grid, method)
        self.phi = -self.conv(self.Q * self.Q, check=False).values
        self.k2 = kinetic_symbol(Q.grid)

    @classmethod
    def from_result(cls, res, method: str = "spectral") -> "LinearizedOp":
        from .energy import to_q_form

        return cls(to_q_form(res), res.pot, method)

    def apply_array(self, xi: np.ndarray) -> np.ndarray:
        q = self.Q.values
        lap = ifftn(self.k2 * fftn(xi)).real
        return lap + xi + self.phi * xi - 2.0 * q * self.conv.apply_array(q * xi)

    def apply(self, xi: Field) -> Field:
        if xi.grid != self.grid:
            raise GridMismatch("perturbation grid differs from the grid of Q")
        return xi.with_values(self.apply_array(xi.values))

    def rayleigh(self, xi: Field) -> float:
        return xi.inner(self.apply(xi)) / xi.inner(xi)

    def translation_modes(self) -> list:
        return [derivative(self.Q, d) for d in range(3)]

    def translation_residuals(self) -> list:
        """``||L dQ|| / ||dQ||`` for the three spectral derivatives."""
        out = []
        for dq in self.translation_modes():
            out.append(float(np.linalg.norm(self.apply(dq).values) / np.linalg.norm(dq.values)))
        return out

    # sector reduction --------------------------------------------------

    def _octant(self, v: np.ndarray) -> np.ndarray:
        n = self.grid.n
        return v[n[0] // 2 :, n[1] // 2 :, n[2] // 2 :]

    def _unfold(self, o: np.ndarray, tau) -> np.ndarray:
        out = o
        for d, t in enumerate(tau):
            out = np.concatenate([t * np.flip(out, axis=d), out], axis=d)
        return out

    def sector_matvec(self, tau):
        tau = parity_sector(tau)
        shape = tuple(v // 2 for v in self.grid.n)

        def mv(x: np.ndarray) -> np.ndarray:
            full = self._unfold(x.reshape(shape), tau)
            return self._octant(self.apply_array(full)).ravel()

        return mv, shape


def lanczos_lowest(matvec, v0: np.ndarray, k: int = 1, tol: float = 1e-7, max_dim: int = 600, check_every: int = 10):
    """Lowest ``k`` eigenpairs of a symmetric operator by Lanczos with full reorthogonalization.

    Returns ``(values, vectors, iterations)``; ``tol`` bounds the Ritz residual
    estimate ``|beta_m s_m|`` relative to ``max(1, |theta|)``.
    """
    n = v0.size
    max_dim = min(max_dim, n)
    V = np.empty((max_dim + 1, n))
    alpha = np.zeros(max_dim)
    beta = np.zeros(max_dim)
    V[0] = v0 / np.linalg.norm(v0)
    m = 0
    theta = s = None
    for j in range(max_dim):
        w = matvec(V[j])
        alpha[j] = V[j] @ w
        w -= alpha[j] * V[j]
        if j:
            w -= beta[j - 1] * V[j - 1]
        for _ in range(2):
            w -= V[: j + 1].T @ (V[: j + 1] @ w)
        beta[j] = np.linalg.norm(w)
        m = j + 1
        done = beta[j] < 1e-14 * max(1.0, abs(alpha[j]))
        if m >= k and (done or m % check_every == 0 or m == max_dim):
            theta, s = sla.eigh_tridiagonal(alpha[:m], beta[: m - 1], select="i", select_range=(0, k - 1))
            est = np.abs(beta[j] * s[-1, :])
            if done or np.all(est < tol * np.maximum(1.0, np.abs(theta))):
                break
        if done:
            break
        V[j + 1] = w / beta[j]
    else:
        raise LanczosStall(f"Lanczos did not converge within {max_dim} steps")
    vecs = (V[:m].T @ s).T
    return theta, vecs, m


def sector_lowest(op: LinearizedOp, sector, k: int = 1, tol: float = 1e-7, max_dim: int = 600, seed: int = 0) -> SectorSpectrum:
    """k lowest eigenpairs of ``L`` restricted to one parity sector."""
    tau = parity_sector(sector)
    mv, shape = op.sector_matvec(tau)
    rng = np.random.default_rng(seed)
    # a smooth start vector keeps the Krylov space away from grid-scale modes
    q = op._octant(op.Q.values)
    v0 = (q * (1.0 + 0.1 * rng.standard_normal(shape))).ravel()
    vals, vecs, it = lanczos_lowest(mv, v0, k, tol, max_dim)
    fields, res = [], []
    for lam, v in zip(vals, vecs):
        full = op._unfold(v.reshape(shape), tau)
        f = Field(op.grid, full / np.sqrt(op.grid.dv * np.sum(full * full)))
        r = op.apply(f).values - lam * f.values
        fields.append(f)
        res.append(float(np.sqrt(op.grid.dv * np.sum(r * r))))
    return SectorSpectrum(tau, np.asarray(vals), fields, np.asarray(res), it)


def overlap(a: Field, b: Field) -> float:
    """``|<a, b>| / (||a|| ||b||)``."""
    return abs(a.inner(b)) / (a.norm() * b.norm())


def half_axis_single_sign(f: Field, axis: int, rel: float = 1e-6) -> bool:
    """True when f has one sign on the half space ``x_axis > 0``.

    Values below ``rel * max|f|`` are treated as zero (tails at roundoff level).
    """
    n = f.grid.n[axis]
    half = np.take(f.values, np.arange(n // 2, n), axis=axis)
    big = np.abs(half) > rel * np.abs(half).max()
    sgn = np.sign(half[big])
    return bool(np.all(sgn == sgn[0]))


def kernel_census(op: LinearizedOp, tol_zero: float | None = None, k: int = 2, tol: float = 1e-8) -> dict:
    """Per-sector count of eigenvalues with ``|lambda| < tol_zero``.

    Default ``tol_zero`` is ten times the largest translation-mode residual.
    The (+,+,+) count is reported separately and excluded from ``total``.
    """
    tres = op.translation_residuals()
    if tol_zero is None:
        tol_zero = 10.0 * max(tres)
    modes = op.translation_modes()
    sectors = {}
    total = 0
    for tau in SECTORS:
        spec = sector_lowest(op, tau, k=k, tol=tol)
        zeros = int(np.sum(np.abs(spec.eigenvalues) < tol_zero))
        row = {"spectrum": spec, "zeros": zeros}
        if tau in SINGLY_ODD:
            axis = tau.index(-1)
            row["overlap"] = overlap(spec.eigenfields[0], modes[axis])
            row["single_sign"] = half_axis_single_sign(spec.eigenfields[0], axis)
        if tau != (1, 1, 1):
            total += zeros
        sectors[tau] = row
    return {
        "tol_zero": tol_zero,
        "translation_residuals": tres,
        "sectors": sectors,
        "total": total,
        "even_sector_zeros": sectors[(1, 1, 1)]["zeros"],
    }


def positivity_probe(op: LinearizedOp, axis: int, trials: int = 10, seed: int = 0) -> dict:
    """Sign of ``-W xi = 2 Q [antisymmetrized V acting on Q xi]`` for random ``xi >= 0``.

    ``xi`` lives on the half space ``x_axis > 0``; the antisymmetrized kernel
    comes from convolving the odd extension of ``Q xi``.
    """
    flags = steiner_criteria(op.pot)
    if not flags.axes[axis]:
        raise CriterionFailed(f"axis {axis} fails the monotonicity criterion of the potential")
    conv = get_convolver(op.pot, op.grid, "direct")
    n = op.grid.n[axis]
    half = [slice(None)] * 3
    half[axis] = slice(n // 2, None)
    half = tuple(half)
    q = op.Q.values
    qh = q[half]
    rng = np.random.default_rng(seed)
    mins, fracs = [], []
    for t in range(trials):
        xi = rng.random(qh.shape)
        if t == 0:
            xi[...] = 0.0
        out = _minus_w(conv, q, qh, xi, axis, half, n)
        if t == 0:
            zero_ok = bool(np.all(out == 0.0))
            continue
        mins.append(float(out.min()))
        fracs.append(float(np.mean(out > 0)))
    return {
        "axis": axis,
        "min_value": min(mins) if mins else 0.0,
        "positive_fraction": min(fracs) if fracs else 1.0,
        "zero_input_gives_zero": zero_ok,
    }


def _minus_w(conv, q, qh, xi, axis, half, n):
    g = qh * xi
    full = np.concatenate([-np.flip(g, axis=axis), g], axis=axis)
    return 2.0 * qh * conv.apply_array(full)[half]
