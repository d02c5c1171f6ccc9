"""Scalar fields on centered 3D grids and the operations the solver needs.

Grid convention: cell-centered, ``x_i = (i + 1/2) h - L`` with ``h = 2L/n``.
Every reflection ``x -> -x`` maps grid points to grid points, so parity
projections are exact index reversals.

PFLD file layout (little-endian)::

    bytes 0..7    magic  b"PFLD0001"
    3 x u64       n1, n2, n3
    3 x f64       L1, L2, L3
    n1*n2*n3 f64  values, x index fastest (Fortran order of [ix, iy, iz])
"""

from __future__ import annotations

import functools
import os
import struct
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
import scipy.fft as sfft

from .anisotropy import CanonicalPotential, steiner_criteria
from .errors import (
    BadMagic,
    GridMismatch,
    GridTooSmall,
    IoError,
    NegativeInput,
    ShapeMismatch,
    VersionMismatch,
    ZeroMass,
)

MAGIC = b"PFLD0001"
SHELL_FRACTION = 0.1
SHELL_MASS_TOL = 1e-6


def workers() -> int:
    env = os.environ.get("POLARON_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


@dataclass(frozen=True)
class Grid3:
    n: tuple
    L: tuple

    def __post_init__(self):
        n = tuple(int(v) for v in np.broadcast_to(self.n, 3))
        L = tuple(float(v) for v in np.broadcast_to(self.L, 3))
        if any(v <= 0 or v % 2 for v in n):
            raise ValueError(f"grid sizes must be positive and even, got {n}")
        if any(v <= 0 for v in L):
            raise ValueError(f"box half-lengths must be positive, got {L}")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "L", L)

    @property
    def h(self) -> tuple:
        return tuple(2 * L / n for L, n in zip(self.L, self.n))

    @property
    def dv(self) -> float:
        return float(np.prod(self.h))

    @property
    def size(self) -> int:
        return int(np.prod(self.n))

    def axis(self, d: int) -> np.ndarray:
        return (np.arange(self.n[d]) + 0.5) * self.h[d] - self.L[d]

    def coords(self) -> list[np.ndarray]:
        """Broadcastable coordinate arrays (open mesh)."""
        out = []
        for d in range(3):
            shape = [1, 1, 1]
            shape[d] = self.n[d]
            out.append(self.axis(d).reshape(shape))
        return out

    def wavenumbers(self) -> list[np.ndarray]:
        out = []
        for d in range(3):
            shape = [1, 1, 1]
            shape[d] = self.n[d]
            out.append((2 * np.pi * np.fft.fftfreq(self.n[d], self.h[d])).reshape(shape))
        return out

    def scaled(self, factor: float) -> "Grid3":
        """Same index layout, lengths multiplied by ``factor``."""
        return Grid3(self.n, tuple(L * factor for L in self.L))


@dataclass(frozen=True, eq=False)
class Field:
    grid: Grid3
    values: np.ndarray
    _mass: list = dc_field(default_factory=list, repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.n:
            raise ShapeMismatch(f"values shape {v.shape} does not match grid {self.grid.n}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        v = np.ascontiguousarray(v)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def mass(self) -> float:
        if not self._mass:
            self._mass.append(self.grid.dv * float(np.sum(self.values * self.values)))
        return self._mass[0]

    def norm(self) -> float:
        return float(np.sqrt(self.mass))

    def inner(self, other: "Field") -> float:
        check_same_grid(self, other)
        return self.grid.dv * float(np.vdot(self.values, other.values))

    def with_values(self, values: np.ndarray) -> "Field":
        return Field(self.grid, values)

    def __add__(self, other):
        return self.with_values(self.values + _vals(other))

    def __sub__(self, other):
        return self.with_values(self.values - _vals(other))

    def __mul__(self, other):
        return self.with_values(self.values * _vals(other))

    __rmul__ = __mul__

    def __neg__(self):
        return self.with_values(-self.values)


def _vals(x):
    return x.values if isinstance(x, Field) else x


def check_same_grid(a: Field, b: Field) -> None:
    if a.grid != b.grid:
        raise GridMismatch(f"grid {a.grid} differs from {b.grid}")


def zeros(grid: Grid3) -> Field:
    return Field(grid, np.zeros(grid.n))


def gaussian(grid: Grid3, sigma, center=(0.0, 0.0, 0.0), mass: float = 1.0) -> Field:
    """Gaussian wave function ``exp(-|x-c|^2 / (4 sigma^2))`` scaled to ``mass``.

    Its density ``psi^2`` is the normal density of width ``sigma``.
    """
    sig = np.broadcast_to(np.asarray(sigma, float), 3)
    x = grid.coords()
    e = sum((x[d] - center[d]) ** 2 / (4 * sig[d] ** 2) for d in range(3))
    f = np.exp(-e)
    f *= np.sqrt(mass / (grid.dv * np.sum(f * f)))
    return Field(grid, f)


# ---------------------------------------------------------------------------
# spectral calculus


def fftn(a: np.ndarray) -> np.ndarray:
    return sfft.fftn(a, workers=workers())


def ifftn(a: np.ndarray) -> np.ndarray:
    return sfft.ifftn(a, workers=workers())


@functools.lru_cache(maxsize=16)
def _k2(grid: Grid3) -> np.ndarray:
    k = grid.wavenumbers()
    return k[0] ** 2 + k[1] ** 2 + k[2] ** 2


@functools.lru_cache(maxsize=16)
def _kderiv(grid: Grid3, d: int) -> np.ndarray:
    k = grid.wavenumbers()[d].copy()
    # the Nyquist mode has no odd derivative
    idx = [0, 0, 0]
    idx[d] = grid.n[d] // 2
    k[tuple(idx)] = 0.0
    return k


def laplacian(f: Field) -> Field:
    return f.with_values(ifftn(-_k2(f.grid) * fftn(f.values)).real)


def derivative(f: Field, d: int) -> Field:
    return f.with_values(ifftn(1j * _kderiv(f.grid, d) * fftn(f.values)).real)


def grad_norm2(f: Field) -> float:
    """``||grad f||^2`` by Parseval, consistent with ``-<f, laplacian f>``."""
    fh = fftn(f.values)
    return f.grid.dv * float(np.sum(_k2(f.grid) * (fh.real**2 + fh.imag**2))) / f.grid.size


def apply_symbol(f: Field, symbol: np.ndarray) -> Field:
    """Apply a Fourier multiplier given on the FFT layout."""
    return f.with_values(ifftn(symbol * fftn(f.values)).real)


def kinetic_symbol(grid: Grid3) -> np.ndarray:
    return _k2(grid)


# ---------------------------------------------------------------------------
# free-space convolution


def _box_integral_inv_r(b1: float, b2: float, b3: float, order: int = 16) -> float:
    """``int_[0,b1]x[0,b2]x[0,b3] dy / |y|`` by Duffy-transformed Gauss-Legendre.

    The box is split into three pyramids by the dominant coordinate; in each the
    substitution ``y = s (1, u, v)`` cancels the corner singularity, leaving a
    smooth integrand on which a tensor rule with ``order**3`` nodes is exact to
    rounding.
    """
    t, w = np.polynomial.legendre.leggauss(order)
    t = 0.5 * (t + 1.0)
    w = 0.5 * w
    b = (b1, b2, b3)
    total = 0.0
    for p in range(3):
        q, r = [i for i in range(3) if i != p]
        # pyramid where y_p / b_p dominates: y_p = b_p s, y_q = b_q s u, y_r = b_r s v
        # restricted to u, v in [0, 1]; jacobian b_p b_q b_r s^2
        s = t[:, None, None]
        u = t[None, :, None]
        v = t[None, None, :]
        norm = np.sqrt(b[p] ** 2 + (b[q] * u) ** 2 + (b[r] * v) ** 2)
        integrand = b[p] * b[q] * b[r] * s**2 / (s * norm)
        total += float(np.einsum("i,j,k,ijk->", w, w, w, integrand))
    return total


def cell_average_coulomb(a: np.ndarray, h) -> float:
    """Mean of ``1/|diag(a) x|`` over the cell ``prod [-h_d/2, h_d/2]``."""
    a = np.asarray(a, float)
    h = np.asarray(h, float)
    half = a * h / 2
    integral = 8.0 * _box_integral_inv_r(*half) / np.prod(a)
    return integral / np.prod(h)


def _spectral_term_octant(w: float, a: np.ndarray, grid: Grid3) -> np.ndarray:
    """Toeplitz kernel samples ``T_m``, m in the first octant ``0..n``.

    Exact for band-limited densities: the Coulomb term is truncated at the
    box diameter R (in the stretched metric), whose transform
    ``8 pi sin^2(R|q|/2) / (det a |q|^2)`` is smooth; sampling it on a
    periodic lattice of period ``P * 2L > 2L + R/a`` reproduces the
    aperiodic convolution without image overlap.
    """
    h = np.asarray(grid.h)
    n = np.asarray(grid.n)
    twoL = 2 * np.asarray(grid.L)
    R = float(np.sqrt(np.sum((a * twoL) ** 2)))
    P = int(np.ceil(1.0 + R / np.min(a * twoL))) + 1
    N = P * n
    ks = [2 * np.pi * np.arange(N[d] // 2 + 1) / (N[d] * h[d]) for d in range(3)]
    q2 = (
        (ks[0] / a[0])[:, None, None] ** 2
        + (ks[1] / a[1])[None, :, None] ** 2
        + (ks[2] / a[2])[None, None, :] ** 2
    )
    q = np.sqrt(q2)
    with np.errstate(invalid="ignore", divide="ignore"):
        ghat = 8 * np.pi * np.sin(0.5 * R * q) ** 2 / q2
    ghat[0, 0, 0] = 2 * np.pi * R**2
    ghat *= w / np.prod(a)
    T = sfft.dctn(ghat, type=1, workers=workers()) / np.prod(N)
    return T[: n[0] + 1, : n[1] + 1, : n[2] + 1]


def _direct_term_octant(w: float, a: np.ndarray, grid: Grid3) -> np.ndarray:
    """``h^3 V(m h)`` for one Coulomb term, origin replaced by the cell mean."""
    h = np.asarray(grid.h)
    n = np.asarray(grid.n)
    m = [np.arange(n[d] + 1) * h[d] * a[d] for d in range(3)]
    r = np.sqrt(m[0][:, None, None] ** 2 + m[1][None, :, None] ** 2 + m[2][None, None, :] ** 2)
    with np.errstate(divide="ignore"):
        T = w / r
    T[0, 0, 0] = w * cell_average_coulomb(a, h)
    return T * np.prod(h)


def _unfold_octant(T: np.ndarray, n) -> np.ndarray:
    """Even extension of octant samples onto the doubled periodic grid."""
    out = T
    for d in range(3):
        nd = n[d]
        idx = np.concatenate([np.arange(nd + 1), np.arange(nd - 1, 0, -1)])
        out = np.take(out, idx, axis=d)
    return out


class Convolver:
    """Free-space convolution with a canonical potential on a fixed grid.

    ``method="spectral"`` (default) uses the truncated-kernel transform and is
    spectrally accurate; ``method="direct"`` samples ``eval_real`` on the
    doubled grid with a cell-averaged origin (second order, but every
    off-origin weight is an exact kernel value).
    """

    def __init__(self, pot: CanonicalPotential, grid: Grid3, method: str = "spectral"):
        if method not in ("spectral", "direct"):
            raise ValueError(f"unknown convolution method {method!r}")
        self.pot = pot
        self.grid = grid
        self.method = method
        n = grid.n
        T = np.zeros(tuple(v + 1 for v in n))
        for w, a in pot.coulomb_terms():
            if method == "spectral":
                T += _spectral_term_octant(w, np.asarray(a, float), grid)
            else:
                T += _direct_term_octant(w, np.asarray(a, float), grid)
        self.kernel_octant = T
        self.khat = sfft.rfftn(_unfold_octant(T, n), workers=workers()).real
        self.shape2 = tuple(2 * v for v in n)

    def __call__(self, rho: Field | np.ndarray, check: bool = True) -> Field:
        vals = rho.values if isinstance(rho, Field) else np.asarray(rho)
        if vals.shape != self.grid.n:
            raise GridMismatch("density grid differs from convolver grid")
        if check:
            check_shell(self.grid, vals)
        n = self.grid.n
        padded = sfft.rfftn(vals, s=self.shape2, workers=workers())
        out = sfft.irfftn(padded * self.khat, s=self.shape2, workers=workers())
        return Field(self.grid, out[: n[0], : n[1], : n[2]])

    def apply_array(self, vals: np.ndarray) -> np.ndarray:
        n = self.grid.n
        padded = sfft.rfftn(vals, s=self.shape2, workers=workers())
        out = sfft.irfftn(padded * self.khat, s=self.shape2, workers=workers())
        return out[: n[0], : n[1], : n[2]]


def check_shell(grid: Grid3, vals: np.ndarray) -> None:
    total = float(np.sum(np.abs(vals)))
    if total == 0.0:
        return
    x = grid.coords()
    inner = np.ones(grid.n, dtype=bool)
    for d in range(3):
        inner = inner & (np.abs(x[d]) <= (1 - SHELL_FRACTION) * grid.L[d])
    frac = float(np.sum(np.abs(vals[~inner]))) / total
    if frac > SHELL_MASS_TOL:
        raise GridTooSmall(f"{frac:.3e} of the density lies in the outer shell; enlarge L")


_CONVOLVERS: dict = {}


def get_convolver(pot: CanonicalPotential, grid: Grid3, method: str = "spectral") -> Convolver:
    key = (pot, grid, method)
    conv = _CONVOLVERS.get(key)
    if conv is None:
        if len(_CONVOLVERS) > 8:
            _CONVOLVERS.clear()
        conv = _CONVOLVERS[key] = Convolver(pot, grid, method)
    return conv


def convolve_V(pot: CanonicalPotential, rho: Field, method: str = "spectral", check: bool = True) -> Field:
    """Free-space ``V * rho`` on the grid of ``rho``."""
    return get_convolver(pot, rho.grid, method)(rho, check=check)


# ---------------------------------------------------------------------------
# parity


SECTORS = tuple((a, b, c) for a in (1, -1) for b in (1, -1) for c in (1, -1))


def parity_sector(tau) -> tuple:
    t = tuple(int(v) for v in tau)
    if len(t) != 3 or any(v not in (1, -1) for v in t):
        raise ValueError(f"parity sector must be a triple of +-1, got {tau!r}")
    return t


def reflect(f: Field | np.ndarray, axis: int):
    if isinstance(f, Field):
        return f.with_values(np.flip(f.values, axis=axis))
    return np.flip(f, axis=axis)


def project_parity_array(v: np.ndarray, tau) -> np.ndarray:
    out = v
    for d, t in enumerate(parity_sector(tau)):
        out = 0.5 * (out + t * np.flip(out, axis=d))
    return out


def project_parity(f: Field, tau) -> Field:
    return f.with_values(project_parity_array(f.values, tau))


def sector_defect(f: Field, tau) -> float:
    """Relative L2 distance of f from its projection onto ``tau``."""
    nrm = np.linalg.norm(f.values)
    if nrm == 0:
        return 0.0
    return float(np.linalg.norm(f.values - project_parity_array(f.values, tau)) / nrm)


def asymmetry(f: Field, axis: int) -> float:
    """``||f - reflect_axis f|| / ||f||``."""
    nrm = np.linalg.norm(f.values)
    return float(np.linalg.norm(f.values - np.flip(f.values, axis=axis)) / nrm)


# ---------------------------------------------------------------------------
# Steiner rearrangement


def _organ_pipe_order(n: int) -> np.ndarray:
    # positions sorted by distance from the center, ties alternating + then -
    c = n // 2
    order = []
    for j in range(c):
        order.extend([c + j, c - 1 - j])
    return np.array(order)


def steiner_rearrange(f: Field, direction) -> Field:
    """Symmetric decreasing rearrangement along an axis or in a coordinate plane."""
    v = f.values
    if np.any(v < 0):
        raise NegativeInput("Steiner rearrangement needs a nonnegative field")
    if isinstance(direction, (int, np.integer)):
        ax = int(direction)
        moved = np.moveaxis(v, ax, -1)
        srt = -np.sort(-moved, axis=-1)
        out = np.empty_like(moved)
        out[..., _organ_pipe_order(v.shape[ax])] = srt
        return f.with_values(np.moveaxis(out, -1, ax))
    i, j = sorted(int(t) for t in direction)
    k = 3 - i - j
    g = f.grid
    xi, xj = g.axis(i), g.axis(j)
    rad = np.sqrt(xi[:, None] ** 2 + xj[None, :] ** 2).ravel()
    width = min(g.h[i], g.h[j])
    bins = np.floor(rad / width).astype(np.int64)
    ang = np.arctan2(np.repeat(xj[None, :], len(xi), 0), np.repeat(xi[:, None], len(xj), 1)).ravel()
    rank = np.lexsort((ang, rad, bins))
    moved = np.moveaxis(v, (i, j, k), (0, 1, 2)).reshape(len(xi) * len(xj), -1)
    srt = -np.sort(-moved, axis=0)
    out = np.empty_like(moved)
    out[rank] = srt
    out = out.reshape(len(xi), len(xj), -1)
    return f.with_values(np.moveaxis(out, (0, 1, 2), (i, j, k)))


def discrete_grad_norm2(f: Field) -> float:
    """Forward-difference Dirichlet energy with zero exterior."""
    total = 0.0
    for d in range(3):
        p = np.pad(f.values, [(1, 1) if e == d else (0, 0) for e in range(3)])
        total += float(np.sum(np.diff(p, axis=d) ** 2)) / f.grid.h[d] ** 2
    return total * f.grid.dv


def riesz_J(f: Field, pot: CanonicalPotential, h: Field, method: str = "spectral") -> float:
    """``J(f, V, h) = 1/2 <f, V * h>``."""
    check_same_grid(f, h)
    if np.any(f.values < 0) or np.any(h.values < 0):
        raise NegativeInput("riesz_J needs nonnegative arguments")
    return 0.5 * f.inner(convolve_V(pot, h, method=method))


def approved_directions(pot: CanonicalPotential) -> list:
    flags = steiner_criteria(pot)
    dirs: list = [k for k in range(3) if flags.axes[k]]
    dirs += [p for p, ok in flags.planes.items() if ok]
    return dirs


# ---------------------------------------------------------------------------
# translation


def centroid(f: Field) -> np.ndarray:
    w = f.values**2
    tot = float(np.sum(w))
    if tot == 0:
        raise ZeroMass("cannot center a field with zero mass")
    x = f.grid.coords()
    return np.array([float(np.sum(w * x[d])) / tot for d in range(3)])


def translate(f: Field, shift) -> Field:
    """Fourier phase shift: returns ``f(x - shift)``."""
    k = f.grid.wavenumbers()
    phase = np.exp(-1j * sum(k[d] * shift[d] for d in range(3)))
    return f.with_values(ifftn(fftn(f.values) * phase).real)


def center(f: Field, tol: float = 1e-6, max_iter: int = 20) -> Field:
    """Move the centroid of ``|f|^2`` to the origin (within ``tol * h``)."""
    if f.mass == 0:
        raise ZeroMass("cannot center a field with zero mass")
    h = min(f.grid.h)
    g = f
    for _ in range(max_iter):
        c = centroid(g)
        if np.max(np.abs(c)) < tol * h:
            return g
        g = translate(g, -c)
    return g


# ---------------------------------------------------------------------------
# Fourier interpolation


def _eval_matrix(n: int, h: float, x0: float, pts: np.ndarray) -> np.ndarray:
    """Rows evaluate the trigonometric interpolant of n samples at ``pts``."""
    k = 2 * np.pi * np.fft.fftfreq(n, h)
    E = np.exp(1j * np.outer(pts - x0, k))
    E[:, n // 2] = np.cos(k[n // 2] * (pts - x0))
    return E / n


def interpolate_tensor(f: Field, pts: list) -> np.ndarray:
    """Trigonometric interpolation of f on the tensor product of 1D point sets."""
    g = f.grid
    coef = fftn(f.values)
    out = coef
    for d in range(3):
        E = _eval_matrix(g.n[d], g.h[d], g.axis(d)[0], np.asarray(pts[d], float))
        out = np.moveaxis(np.tensordot(E, out, axes=([1], [d])), 0, d)
    return out.real


def resample(f: Field, grid: Grid3, scale: float = 1.0, amplitude: float = 1.0) -> Field:
    """``amplitude * f(scale * x)`` sampled on ``grid`` (zero outside f's box)."""
    pts = [scale * grid.axis(d) for d in range(3)]
    vals = amplitude * interpolate_tensor(f, pts)
    for d in range(3):
        shape = [1, 1, 1]
        shape[d] = grid.n[d]
        vals = vals * (np.abs(pts[d]) <= f.grid.L[d]).reshape(shape)
    return Field(grid, vals)


# ---------------------------------------------------------------------------
# persistence


def save_field(f: Field, path) -> None:
    try:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<3Q", *f.grid.n))
            fh.write(struct.pack("<3d", *f.grid.L))
            fh.write(np.asarray(f.values, dtype="<f8").tobytes(order="F"))
    except OSError as exc:
        raise IoError(str(exc)) from exc


def load_field(path) -> Field:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(str(exc)) from exc
    if len(data) < 8 or data[:4] != MAGIC[:4]:
        raise BadMagic(f"{path}: not a PFLD file")
    if data[:8] != MAGIC:
        raise VersionMismatch(f"{path}: unsupported PFLD version {data[4:8]!r}")
    head = 8 + 24 + 24
    if len(data) < head:
        raise ShapeMismatch(f"{path}: truncated header")
    n = struct.unpack("<3Q", data[8:32])
    L = struct.unpack("<3d", data[32:56])
    count = int(np.prod(n))
    if len(data) != head + 8 * count:
        raise ShapeMismatch(f"{path}: expected {count} values, file holds {(len(data) - head) / 8}")
    vals = np.frombuffer(data, dtype="<f8", offset=head, count=count)
    vals = vals.reshape(n, order="F").astype(float)
    return Field(Grid3(n, L), vals)
