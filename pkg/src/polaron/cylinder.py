"""Cylindrical harmonic reduction for potentials with a rotation axis.

Coordinates: ``z`` along the distinguished axis, ``r`` in the orthogonal
plane, azimuthal harmonics ``Y0 = (2 pi)^-1/2``, ``Yn = pi^-1/2 cos(n phi)``.

For one Coulomb term ``1/|diag(a) x|`` with ``a = (a_r, a_r, a_z)`` the
kernel between rings ``(r, z)`` and ``(r', z')`` is::

    V = (2/m+) (1 - 2 t cos(theta) + t^2)^-1/2,   t = m-/m+,
    m+- = sqrt(a_r^2 (r + r')^2 + a_z^2 Z^2) +- sqrt(a_r^2 (r - r')^2 + a_z^2 Z^2).

Everything reduces to the Fourier coefficients ``a_n(t)`` of
``(1 - 2 t cos + t^2)^-1/2``, i.e. ``f = sum_n a_n exp(i n theta)``:

* ``vn = int V Yn dtheta = (2/m+) kappa_n a_n`` with ``kappa_0 = sqrt(2 pi)``,
  ``kappa_n = 2 sqrt(pi)``; the same numbers are ``sum_k beta(n, k) t^k``.
* ``wn = int V cos(n theta) dtheta = (4 pi / m+) a_n`` is what the radial
  operators need, because ``V * (g Yn) = (int g wn r' dr' dz') Yn``.
"""

from __future__ import annotations

import functools
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.special as ssp

from .anisotropy import EQ_TOL, CanonicalPotential, Model, cylinder_axis
from .bessel import bessel_ive
from .errors import (
    BadMagic,
    GridMismatch,
    IoError,
    NotCylindrical,
    ShapeMismatch,
    SingularConfiguration,
    SlowConvergence,
)
from .field import Field, _eval_matrix, fftn

CVNT_MAGIC = b"CVNT001"
SERIES_T_MAX = 0.7  # series below, elliptic integrals + recurrence above
SLOW_T = 0.999
AZIMUTH_TOL = 1e-6


def kappa(n: int) -> float:
    return math.sqrt(2 * math.pi) if n == 0 else 2 * math.sqrt(math.pi)


# ---------------------------------------------------------------------------
# beta coefficients


def _central_ratio(n: int, k: int) -> float:
    """``C(k+n, (k+n)/2) C(k-n, (k-n)/2) / 4^k`` (exact integers when small)."""
    if k <= 1000:
        return math.comb(k + n, (k + n) // 2) * math.comb(k - n, (k - n) // 2) / 4**k
    lg = (
        math.lgamma(k + n + 1)
        - 2 * math.lgamma((k + n) // 2 + 1)
        + math.lgamma(k - n + 1)
        - 2 * math.lgamma((k - n) // 2 + 1)
        - k * math.log(4.0)
    )
    return math.exp(lg)


def beta(n: int, k: int) -> float:
    """Coefficient of ``t^k Yn(theta)`` in ``(1 - 2 t cos(theta) + t^2)^-1/2``.

    Nonzero only for ``k >= n >= 0`` with ``k - n`` even.
    """
    if n < 0 or k < n or (k - n) % 2:
        return 0.0
    return kappa(n) * _central_ratio(n, k)


@functools.lru_cache(maxsize=16)
def _ratio_table(nmax: int, kmax: int) -> np.ndarray:
    """``R[n, k] = beta(n, k) / kappa(n)`` for all ``n <= nmax``, ``k <= kmax``."""
    n = np.arange(nmax + 1)[:, None]
    k = np.arange(kmax + 1)[None, :]
    ok = (k >= n) & ((k - n) % 2 == 0)
    kp = np.where(ok, (k + n) // 2, 0)
    km = np.where(ok, (k - n) // 2, 0)
    lg = (
        ssp.gammaln(2 * kp + 1)
        - 2 * ssp.gammaln(kp + 1)
        + ssp.gammaln(2 * km + 1)
        - 2 * ssp.gammaln(km + 1)
        - k * np.log(4.0)
    )
    R = np.where(ok, np.exp(np.where(ok, lg, 0.0)), 0.0)
    R.setflags(write=False)
    return R


def beta_table(nmax: int, kmax: int) -> np.ndarray:
    kap = np.array([kappa(n) for n in range(nmax + 1)])[:, None]
    return kap * _ratio_table(nmax, kmax)


# ---------------------------------------------------------------------------
# Fourier coefficients a_n(t)


def _series_kmax(t: float, tol: float) -> int:
    if t <= 0:
        return 0
    return int(math.ceil(math.log(tol * (1 - t * t)) / math.log(t))) + 2


def coef_series(n: int, t: float, tol: float = 1e-17, kmax: int | None = None) -> tuple[float, float]:
    """``(a_n(t), tail_bound)`` from the truncated power series in t.

    The coefficients decrease in k, so the tail after the last kept term
    ``k = K`` is at most ``c_K t^(K+2) / (1 - t^2)``.  Without ``kmax`` the
    series runs until that bound is below ``tol`` times the leading term
    (hence below ``tol`` relative to the sum).
    """
    if not (0 <= t < 1):
        raise SingularConfiguration(f"t = {t!r} outside [0, 1)")
    if t > SLOW_T:
        raise SlowConvergence(f"series ratio t = {t:.6f} exceeds {SLOW_T}")
    if kmax is None:
        kmax = n + _series_kmax(t, tol)
    ks = np.arange(n, max(kmax, n) + 1, 2)
    c = np.array([_central_ratio(n, int(k)) for k in ks])
    val = float(np.sum(c * t ** ks.astype(float)))
    tail = float(c[-1] * t ** (ks[-1] + 2) / (1 - t * t))
    return val, tail


def _coef_elliptic(t: np.ndarray, nmax: int) -> np.ndarray:
    """a_0, a_1 from complete elliptic integrals, higher n by forward recurrence.

    Forward recurrence amplifies relative error by about ``t^(-2n)``; it is
    only used for ``t > SERIES_T_MAX``.
    """
    p = ((1 - t) / (1 + t)) ** 2  # 1 - m
    m = 1 - p
    K = ssp.ellipkm1(p)
    E = ssp.ellipe(m)
    out = np.empty((nmax + 1,) + t.shape)
    out[0] = 2 * K / ((1 + t) * np.pi)
    if nmax >= 1:
        out[1] = 2 / ((1 + t) * np.pi) * (2 * (K - E) / m - K)
    q = (1 + t * t) / (2 * t)
    for n in range(1, nmax):
        out[n + 1] = (2 * n * q * out[n] - (n - 0.5) * out[n - 1]) / (n + 0.5)
    return out


def coef_table(t, nmax: int) -> np.ndarray:
    """``a_n(t)`` for ``n = 0..nmax``; result has shape ``(nmax + 1,) + t.shape``."""
    t = np.asarray(t, dtype=float)
    if np.any((t < 0) | (t >= 1)):
        raise SingularConfiguration("coincident rings (t = 1) have no finite coefficient")
    flat = t.ravel()
    out = np.empty((nmax + 1, flat.size))
    lo = flat <= SERIES_T_MAX
    if np.any(lo):
        kmax = _series_kmax(SERIES_T_MAX, 1e-18) + nmax + 2
        R = _ratio_table(nmax, kmax)
        powers = flat[lo][:, None] ** np.arange(kmax + 1)[None, :]
        out[:, lo] = R @ powers.T
    if np.any(~lo):
        out[:, ~lo] = _coef_elliptic(flat[~lo], nmax)
    return out.reshape((nmax + 1,) + t.shape)


def coef_contour(n: int, t: float, tol: float = 1e-17) -> float:
    """Reference ``a_n(t)``: periodic trapezoid rule on a circle ``|z| = rho``.

    On the circle the Laurent coefficients are ``a_m rho^m``; taking
    ``t rho = max(1 - 1/(n+2), sqrt(t))`` keeps ``a_n rho^n`` of order one,
    so tiny ``a_n ~ t^n`` keep full relative accuracy (a real-axis rule
    loses them to cancellation).  The aliasing error is about ``(t rho)^M``
    for M nodes.
    """
    if not (0 <= t < 1):
        raise SingularConfiguration(f"t = {t!r} outside [0, 1)")
    if t == 0.0:
        return 1.0 if n == 0 else 0.0
    tr = max(1.0 - 1.0 / (n + 2), math.sqrt(t))
    rho = tr / t
    need = math.log(tol) / math.log(tr) + 2 * n
    M = 1 << max(6, int(math.ceil(math.log2(need))))
    phi = 2 * np.pi * np.arange(M) / M
    z = rho * np.exp(1j * phi)
    f = 1.0 / (np.sqrt(1 - t * z) * np.sqrt(1 - t / z))
    return float(np.real(np.mean(f * np.exp(-1j * n * phi))) * rho ** (-n))


# ---------------------------------------------------------------------------
# kernel coefficients of a potential


def _frame(pot: CanonicalPotential) -> tuple[int, tuple[int, int]]:
    ax = cylinder_axis(pot)
    if ax is None:
        d = pot.d
        if abs(d[0] - d[1]) <= EQ_TOL and abs(d[1] - d[2]) <= EQ_TOL:
            ax = 2
        else:
            raise NotCylindrical(f"canonical entries {d} have no rotation axis")
    plane = tuple(i for i in range(3) if i != ax)
    return ax, plane


def _cyl_terms(pot: CanonicalPotential) -> list[tuple[float, float, float]]:
    """``[(w, a_r, a_z)]`` for the Coulomb terms of pot in its cylinder frame."""
    ax, plane = _frame(pot)
    return [(w, float(a[plane[0]]), float(a[ax])) for w, a in pot.coulomb_terms()]


def m_pm(a_r: float, a_z: float, r, rp, Z):
    r, rp, Z = (np.asarray(v, dtype=float) for v in (r, rp, Z))
    big = np.sqrt((a_r * (r + rp)) ** 2 + (a_z * Z) ** 2)
    small = np.sqrt((a_r * (r - rp)) ** 2 + (a_z * Z) ** 2)
    return big + small, big - small


def _check_pair(r, rp, Z):
    if np.any(np.asarray(r) <= 0) or np.any(np.asarray(rp) < 0):
        raise SingularConfiguration("radii must be positive")
    if np.any((np.asarray(r) == np.asarray(rp)) & (np.asarray(Z) == 0)):
        raise SingularConfiguration("coincident ring r = r', Z = 0")


def vn(pot: CanonicalPotential, n: int, r: float, rp: float, Z: float) -> float:
    """``int_{-pi}^{pi} V Yn dtheta`` by contour quadrature (reference route)."""
    _check_pair(r, rp, Z)
    total = 0.0
    for w, a_r, a_z in _cyl_terms(pot):
        mp, mm = m_pm(a_r, a_z, r, rp, Z)
        total += w * 2.0 / float(mp) * kappa(n) * coef_contour(n, float(mm / mp))
    return total


def vn_series(pot: CanonicalPotential, n: int, r: float, rp: float, Z: float, tol: float = 1e-17, kmax: int | None = None) -> dict:
    """``(2/m+) sum_k beta(n, k) t^k`` with its certified tail bound.

    Returns ``{"value", "tail", "rel_tail", "t", "kmax"}``; ``tail`` is an
    absolute bound on the dropped terms.
    """
    _check_pair(r, rp, Z)
    value = tail = 0.0
    tmax = 0.0
    used = 0
    for w, a_r, a_z in _cyl_terms(pot):
        mp, mm = m_pm(a_r, a_z, r, rp, Z)
        t = float(mm / mp)
        tmax = max(tmax, t)
        pref = 2.0 / float(mp) * kappa(n)
        a, tb = coef_series(n, t, tol=tol, kmax=kmax)
        value += w * pref * a
        tail += abs(w) * pref * tb
        used = max(used, kmax if kmax is not None else n + _series_kmax(t, tol))
    rel = tail / abs(value) if value else np.inf
    return {"value": value, "tail": tail, "rel_tail": rel, "t": tmax, "kmax": used}


def generating_sum(t: float, theta: float, tol: float = 1e-13) -> tuple[float, int]:
    """``sum_n (sum_k beta(n, k) t^k) Yn(theta)`` truncated at an adaptive k.

    The double sum is reorganised by k; ``kmax`` is picked so the dropped
    terms (bounded by ``t^k`` each) sum below ``tol``.
    """
    if t == 0:
        return 1.0, 0
    kmax = _series_kmax(t, tol)
    B = beta_table(kmax, kmax)
    n = np.arange(kmax + 1)
    Y = np.where(n == 0, 1 / math.sqrt(2 * math.pi), np.cos(n * theta) / math.sqrt(math.pi))
    per_k = Y @ B  # sum over n for each k
    return float(np.sum(per_k * t ** np.arange(kmax + 1.0))), kmax


def difference_sign_probe(pot: CanonicalPotential, n: int, samples: int = 1000, seed: int = 0, extent: float = 3.0) -> dict:
    """Search random ``(r, r', Z)`` for both signs of vn of a difference potential.

    Also returns whether v0 and v1 stayed positive on the same sample.
    """
    rng = np.random.default_rng(seed)
    r = rng.uniform(0.01, extent, samples)
    rp = rng.uniform(0.01, extent, samples)
    Z = rng.uniform(-extent, extent, samples)
    out = {"n": n, "positive": None, "negative": None}
    vals = {m: np.array([vn(pot, m, *p) for p in zip(r, rp, Z)]) for m in sorted({0, 1, n})}
    v = vals[n]
    ipos = np.flatnonzero(v > 0)
    ineg = np.flatnonzero(v < 0)
    if ipos.size:
        i = ipos[np.argmax(v[ipos])]
        out["positive"] = {"r": r[i], "rp": rp[i], "Z": Z[i], "value": float(v[i])}
    if ineg.size:
        i = ineg[np.argmin(v[ineg])]
        out["negative"] = {"r": r[i], "rp": rp[i], "Z": Z[i], "value": float(v[i])}
    out["both_signs"] = bool(ipos.size and ineg.size)
    out["v0_min"] = float(vals[0].min())
    out["v1_min"] = float(vals[1].min())
    return out


def Tn_check(n: int, K: float, c: float, quadrature: str = "contour", npts: int = 10**6) -> float:
    """``T_n = int_0^pi (cos(n th) - cos th) / sqrt(K + 2 c (1 - cos th)) dth``.

    ``c`` is the coefficient times ``r r'``.  Quadratures: ``contour`` (via the
    Fourier coefficients, default), ``trapezoid`` (npts nodes, end points
    halved) or ``gauss`` (adaptive Gauss-Kronrod).
    """
    if not (K > 0 and c > 0):
        raise ValueError("need K > 0 and c > 0")
    if n == 1:
        return 0.0
    if quadrature == "contour":
        sk, sa = math.sqrt(K), math.sqrt(K + 4 * c)
        mp, mm = sa + sk, sa - sk
        t = mm / mp
        return 2 * math.pi / mp * (coef_contour(n, t) - coef_contour(1, t))
    g = lambda th: (np.cos(n * th) - np.cos(th)) / np.sqrt(K + 2 * c * (1 - np.cos(th)))
    if quadrature == "trapezoid":
        th = np.linspace(0.0, np.pi, npts + 1)
        y = g(th)
        return float(np.pi / npts * (np.sum(y) - 0.5 * (y[0] + y[-1])))
    if quadrature == "gauss":
        from scipy.integrate import quad

        return float(quad(g, 0.0, np.pi, epsabs=1e-15, epsrel=1e-13, limit=400)[0])
    raise ValueError(f"unknown quadrature {quadrature!r}")


# ---------------------------------------------------------------------------
# half-plane grid and operators


@dataclass(frozen=True)
class CylGrid:
    nr: int
    nz: int  # points across the full symmetric z range
    rmax: float
    zmax: float

    def __post_init__(self):
        if self.nr <= 0 or self.nz <= 0 or self.nz % 2:
            raise ValueError("nr must be positive and nz positive and even")
        if self.rmax <= 0 or self.zmax <= 0:
            raise ValueError("extents must be positive")

    @property
    def hr(self) -> float:
        return self.rmax / self.nr

    @property
    def hz(self) -> float:
        return 2 * self.zmax / self.nz

    @property
    def r(self) -> np.ndarray:
        return (np.arange(self.nr) + 0.5) * self.hr

    @property
    def z(self) -> np.ndarray:
        return (np.arange(self.nz) + 0.5) * self.hz - self.zmax

    @property
    def z_half(self) -> np.ndarray:
        return self.z[self.nz // 2 :]

    def weights(self, half: bool = True) -> np.ndarray:
        """Quadrature weights ``r hr hz`` on the (r, z) mesh, r index first."""
        nz = self.nz // 2 if half else self.nz
        return np.repeat(self.r * self.hr * self.hz, nz)


def radial_block(grid: CylGrid, n: int) -> np.ndarray:
    """``-d2/dr2 - (1/r) d/dr + n^2/r^2`` by finite volumes.

    No flux through the axis face, Dirichlet (odd ghost) at ``rmax``.  The
    matrix is symmetric in the ``r dr`` inner product.
    """
    h = grid.hr
    r = grid.r
    face = np.arange(1, grid.nr + 1) * h  # r_{i+1/2}
    A = np.zeros((grid.nr, grid.nr))
    for i in range(grid.nr):
        out = face[i]
        inn = face[i - 1] if i else 0.0
        A[i, i] = (out + inn) / (r[i] * h * h) + n * n / r[i] ** 2
        if i + 1 < grid.nr:
            A[i, i + 1] = -out / (r[i] * h * h)
        else:
            A[i, i] += out / (r[i] * h * h)  # ghost = -f
        if i:
            A[i, i - 1] = -inn / (r[i] * h * h)
    return A


def axial_block(grid: CylGrid, even_half: bool = True) -> np.ndarray:
    """``-d2/dz2`` with Dirichlet ends; on the half grid the mirror z -> -z closes z = 0."""
    h = grid.hz
    m = grid.nz // 2 if even_half else grid.nz
    A = (np.diag(np.full(m, 2.0)) - np.diag(np.ones(m - 1), 1) - np.diag(np.ones(m - 1), -1)) / h**2
    if even_half:
        A[0, 0] -= 1.0 / h**2  # ghost f(-z0) = f(z0)
    return A


def laplacian_n(grid: CylGrid, n: int, even_half: bool = True) -> np.ndarray:
    """Dense ``-Delta_(n)`` on the (r, z) mesh, r index major."""
    Ar = radial_block(grid, n)
    Az = axial_block(grid, even_half)
    return np.kron(Ar, np.eye(Az.shape[0])) + np.kron(np.eye(grid.nr), Az)


# -- kernel tables ---------------------------------------------------------


def _wn_points(terms, nmax: int, r, rp, Z) -> np.ndarray:
    """``wn = int V cos(n theta) dtheta`` for ``n <= nmax`` at matching arrays of points."""
    out = 0.0
    for w, a_r, a_z in terms:
        mp, mm = m_pm(a_r, a_z, r, rp, Z)
        out = out + w * (4 * np.pi / mp) * coef_table(mm / mp, nmax)
    return out


def _gauss01(order: int):
    x, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (x + 1), 0.5 * w


def _cell_average_wn(terms, nmax: int, r0: float, hr: float, hz: float, order: int = 24) -> np.ndarray:
    """Average of ``wn(r0, r', z')`` over the cell centred on the singular point.

    Four rectangles meet at the singularity; each is split into two
    triangles and mapped by a Duffy transform, which cancels the
    logarithmic singularity's Jacobian.
    """
    u, wu = _gauss01(order)
    U, Vv = np.meshgrid(u, u, indexing="ij")
    W = np.outer(wu, wu) * U
    A, B = 0.5 * hr, 0.5 * hz
    total = np.zeros(nmax + 1)
    for sx in (-1.0, 1.0):
        for sz in (-1.0, 1.0):
            for x, y in ((A * U, B * U * Vv), (A * U * Vv, B * U)):
                vals = _wn_points(terms, nmax, np.full(x.shape, r0), r0 + sx * x, sz * y)
                total += A * B * np.tensordot(vals, W, axes=([1, 2], [0, 1]))
    return total / (hr * hz)


@dataclass(frozen=True)
class VnTable:
    """``wn(r_i, r_j, k hz)`` for ``k = -(nz-1)..nz-1`` (index ``k + nz - 1``).

    The coincident entries ``(i, i, 0)`` hold cell averages.
    """

    n: int
    grid: CylGrid
    values: np.ndarray  # shape (nr, nr, 2 nz - 1)

    def at(self, k: np.ndarray) -> np.ndarray:
        return self.values[:, :, np.asarray(k) + self.grid.nz - 1]


def kernel_tables(pot: CanonicalPotential, grid: CylGrid, nmax: int) -> list[VnTable]:
    """Tables for ``n = 0..nmax`` in one pass (the recurrence produces all n)."""
    terms = _cyl_terms(pot)
    r = grid.r
    k = np.arange(grid.nz)  # Z = k hz, k >= 0; negative k by symmetry
    R, Rp, Kk = np.meshgrid(r, r, k * grid.hz, indexing="ij")
    sing = (np.arange(grid.nr)[:, None] == np.arange(grid.nr)[None, :])[:, :, None] & (k == 0)[None, None, :]
    Rp_safe = np.where(sing, Rp + grid.hr, Rp)  # placeholder, overwritten below
    vals = _wn_points(terms, nmax, R, Rp_safe, Kk)
    for i, r0 in enumerate(r):
        vals[:, i, i, 0] = _cell_average_wn(terms, nmax, r0, grid.hr, grid.hz)
    full = np.concatenate([vals[:, :, :, :0:-1], vals], axis=3)
    return [VnTable(n, grid, full[n]) for n in range(nmax + 1)]


def kernel_matrix(table: VnTable) -> np.ndarray:
    """Even-in-z kernel on the half mesh: ``wn(z - z') + wn(z + z')``."""
    g = table.grid
    m = g.nz // 2
    a = np.arange(m)
    diff = a[:, None] - a[None, :]
    summ = a[:, None] + a[None, :] + 1
    G = table.at(diff) + table.at(summ)  # (nr, nr, m, m)
    return G.transpose(0, 2, 1, 3).reshape(g.nr * m, g.nr * m)


# -- profiles --------------------------------------------------------------


def cyl_profile(Q: Field, pot: CanonicalPotential, grid: CylGrid, angles: int = 7) -> tuple[np.ndarray, float]:
    """Sample a 3D field on the (r, z >= 0) half mesh at several azimuths.

    Returns ``(profile (nr, nz/2), azimuthal spread / max)``.
    """
    ax, plane = _frame(pot)
    g = Q.grid
    if grid.rmax > min(g.L[plane[0]], g.L[plane[1]]) or grid.zmax > g.L[ax]:
        raise GridMismatch("cylinder mesh extends beyond the 3D box")
    coef = fftn(Q.values)
    Ez = _eval_matrix(g.n[ax], g.h[ax], g.axis(ax)[0], grid.z_half)
    C = np.moveaxis(np.tensordot(Ez, coef, axes=([1], [ax])), 0, -1)  # (plane0, plane1, z)
    samples = []
    for phi in np.linspace(0, 2 * np.pi, angles, endpoint=False):
        E1 = _eval_matrix(g.n[plane[0]], g.h[plane[0]], g.axis(plane[0])[0], grid.r * np.cos(phi))
        E2 = _eval_matrix(g.n[plane[1]], g.h[plane[1]], g.axis(plane[1])[0], grid.r * np.sin(phi))
        samples.append(np.einsum("ra,rb,abz->rz", E1, E2, C).real)
    S = np.array(samples)
    prof = S.mean(axis=0)
    spread = float(S.std(axis=0).max() / np.abs(prof).max())
    return prof, spread


@dataclass
class CylSetup:
    """Shared pieces for all harmonics: mesh, solution profile, tables, potential term."""

    pot: CanonicalPotential
    grid: CylGrid
    Q: np.ndarray  # (nr * nz/2,), r index major
    phi: np.ndarray
    tables: list
    spread: float
    newton_residual: float

    @property
    def weights(self) -> np.ndarray:
        return self.grid.weights()

    def W_matrix(self, n: int) -> np.ndarray:
        G = kernel_matrix(self.tables[n])
        w = self.weights
        return -2.0 * self.Q[:, None] * G * (w * self.Q)[None, :]


def default_cyl_grid(Q: Field, pot: CanonicalPotential, nr: int = 48) -> CylGrid:
    ax, plane = _frame(pot)
    ext = 0.95 * min(min(Q.grid.L[plane[0]], Q.grid.L[plane[1]]), Q.grid.L[ax], 14.0)
    return CylGrid(nr, 2 * nr, ext, ext)


def cyl_setup(pot: CanonicalPotential, Q: Field, grid: CylGrid | None = None, nmax: int = 5, newton_tol: float = 1e-11, max_newton: int = 20) -> CylSetup:
    """Prepare a rotation-symmetric solution ``Q`` (second normalization) on the half mesh.

    The sampled profile is polished by Newton's method on the discrete
    radial equation ``-Delta_(0) Q + Q - (V * Q^2) Q = 0`` so that the
    reduced operators are linearized at an exact discrete solution.
    """
    if pot.model is not Model.SIMPLIFIED:
        raise NotCylindrical("the harmonic reduction is set up for the simplified model only")
    if grid is None:
        grid = default_cyl_grid(Q, pot)
    prof, spread = cyl_profile(Q, pot, grid)
    if spread > AZIMUTH_TOL:
        raise NotCylindrical(f"solution varies with the azimuth (relative spread {spread:.2e})")
    tables = kernel_tables(pot, grid, max(nmax, 1))
    G0 = kernel_matrix(tables[0])
    w = grid.weights()
    T0 = laplacian_n(grid, 0)
    q = prof.ravel().copy()
    res = np.inf
    for _ in range(max_newton):
        phi = -G0 @ (w * q * q)
        F = T0 @ q + q + phi * q
        res = float(np.sqrt(np.sum(w * F * F) / np.sum(w * q * q)))
        if res < newton_tol:
            break
        J = T0 + np.eye(q.size) + np.diag(phi) - 2.0 * q[:, None] * G0 * (w * q)[None, :]
        q = q - np.linalg.solve(J, F)
    phi = -G0 @ (w * q * q)
    return CylSetup(pot, grid, q, phi, tables, spread, res)


@dataclass
class CylOperator:
    """Dense ``L_n = -Delta_(n) + 1 + Phi + W_(n)`` on the even half mesh."""

    n: int
    setup: CylSetup
    matrix: np.ndarray

    def symmetric(self) -> np.ndarray:
        s = np.sqrt(self.setup.weights)
        S = s[:, None] * self.matrix / s[None, :]
        return 0.5 * (S + S.T)

    def asymmetry(self) -> float:
        s = np.sqrt(self.setup.weights)
        S = s[:, None] * self.matrix / s[None, :]
        return float(np.abs(S - S.T).max() / np.abs(S).max())

    def lowest(self, k: int = 3) -> tuple[np.ndarray, np.ndarray]:
        """k lowest eigenpairs; vectors normalized in the ``r dr dz`` product."""
        vals, vecs = sla.eigh(self.symmetric(), subset_by_index=[0, k - 1])
        vecs = vecs / np.sqrt(self.setup.weights)[:, None]
        return vals, vecs

    def apply(self, f: np.ndarray) -> np.ndarray:
        return self.matrix @ f

    def norm(self, f: np.ndarray) -> float:
        return float(np.sqrt(np.sum(self.setup.weights * f * f)))


def build_cyl_operator(setup: CylSetup, n: int) -> CylOperator:
    if n >= len(setup.tables):
        raise ValueError(f"tables were built up to n = {len(setup.tables) - 1}")
    g = setup.grid
    M = laplacian_n(g, n) + np.eye(setup.Q.size) + np.diag(setup.phi) + setup.W_matrix(n)
    return CylOperator(n, setup, M)


def radial_derivative(setup: CylSetup) -> np.ndarray:
    """Centred difference of Q in r (mirror ghost at the axis, zero beyond rmax)."""
    g = setup.grid
    q = setup.Q.reshape(g.nr, g.nz // 2)
    ext = np.concatenate([q[:1], q, np.zeros_like(q[:1])], axis=0)
    return ((ext[2:] - ext[:-2]) / (2 * g.hr)).ravel()


def spectra(setup: CylSetup, ns, k: int = 2) -> dict:
    """Lowest eigenvalues per harmonic plus the n = 1 translation-mode residual."""
    out = {}
    for n in ns:
        op = build_cyl_operator(setup, n)
        vals, vecs = op.lowest(k)
        v0 = vecs[:, 0]
        big = np.abs(v0) > 1e-8 * np.abs(v0).max()
        out[n] = {
            "eigenvalues": vals,
            "ground": v0,
            "single_sign": bool(np.all(v0[big] > 0) or np.all(v0[big] < 0)),
            "residual": op.norm(op.apply(v0) - vals[0] * v0) / op.norm(v0),
        }
    op1 = build_cyl_operator(setup, 1)
    dq = radial_derivative(setup)
    out["translation_residual"] = op1.norm(op1.apply(dq)) / op1.norm(dq)
    if 1 in out:
        v = out[1]["ground"]
        w = setup.weights
        out["overlap_dr"] = float(abs(np.sum(w * v * dq)) / (op1.norm(v) * op1.norm(dq)))
    return out


# ---------------------------------------------------------------------------
# heat kernel


def heat_kernel_n(n: int, t: float, x, xp) -> np.ndarray | float:
    """Kernel of ``exp(t Delta_(n))`` on the half plane for the measure ``r' dr' dz'``.

    ``exp(-((r - r')^2 + (z - z')^2) / 4t) I_n(r r' / 2t) exp(-r r' / 2t) / (4 sqrt(pi) t^1.5)``
    """
    if t <= 0:
        raise ValueError("t must be positive")
    r, z = (np.asarray(v, float) for v in x)
    rp, zp = (np.asarray(v, float) for v in xp)
    arg = r * rp / (2 * t)
    out = np.exp(-((r - rp) ** 2 + (z - zp) ** 2) / (4 * t)) * bessel_ive(n, arg) / (4 * math.sqrt(math.pi) * t**1.5)
    out = np.asarray(out)
    return out if out.ndim else float(out)


def heat_kernel_oracle(n: int, t: float, grid: CylGrid, source: tuple[int, int]) -> np.ndarray:
    """Column of ``exp(-t A)`` for the discrete ``A = -Delta_(n)`` on the full z mesh.

    Divided by the source cell weight it approximates the kernel at the
    source node.  Uses ``exp(-t (Ar + Az)) = exp(-t Ar) (x) exp(-t Az)``.
    """
    Er = sla.expm(-t * radial_block(grid, n))
    Ez = sla.expm(-t * axial_block(grid, even_half=False))
    i, j = source
    w = grid.r[i] * grid.hr * grid.hz
    return np.outer(Er[:, i], Ez[:, j]) / w


def heat_kernel_check(n: int, t: float = 0.1, grid: CylGrid | None = None, source=None, margin: float = 0.2) -> dict:
    """Closed-form kernel against the matrix exponential on interior nodes.

    Interior: at least ``margin`` of each extent away from the outer edges.
    The error is the max difference relative to the kernel maximum.
    """
    if grid is None:
        grid = CylGrid(64, 64, 3.0, 3.0)
    if source is None:
        source = (grid.nr // 2, grid.nz // 2)
    num = heat_kernel_oracle(n, t, grid, source)
    R, Zz = np.meshgrid(grid.r, grid.z, indexing="ij")
    exact = heat_kernel_n(n, t, (R, Zz), (grid.r[source[0]], grid.z[source[1]]))
    inner = (R < (1 - margin) * grid.rmax) & (np.abs(Zz) < (1 - margin) * grid.zmax)
    err = float(np.abs(num - exact)[inner].max() / np.abs(exact).max())
    return {"n": n, "t": t, "rel_error": err, "min_kernel": float(exact.min())}


# ---------------------------------------------------------------------------
# CVNT persistence


def save_vntable(table: VnTable, path) -> None:
    """``CVNT001`` magic, then u64 n, nr, nz and f64 rmax, zmax, then values (r, r', Z order, little-endian)."""
    g = table.grid
    try:
        with open(path, "wb") as fh:
            fh.write(CVNT_MAGIC)
            fh.write(struct.pack("<3Q", table.n, g.nr, g.nz))
            fh.write(struct.pack("<2d", g.rmax, g.zmax))
            fh.write(np.asarray(table.values, dtype="<f8").tobytes(order="C"))
    except OSError as exc:
        raise IoError(str(exc)) from exc


def load_vntable(path) -> VnTable:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(str(exc)) from exc
    m = len(CVNT_MAGIC)
    if data[:m] != CVNT_MAGIC:
        raise BadMagic(f"{path}: not a CVNT file")
    n, nr, nz = struct.unpack("<3Q", data[m : m + 24])
    rmax, zmax = struct.unpack("<2d", data[m + 24 : m + 40])
    count = nr * nr * (2 * nz - 1)
    body = data[m + 40 :]
    if len(body) != 8 * count:
        raise ShapeMismatch(f"{path}: expected {count} values")
    vals = np.frombuffer(body, dtype="<f8").reshape(nr, nr, 2 * nz - 1).astype(float)
    return VnTable(int(n), CylGrid(int(nr), int(nz), rmax, zmax), vals)
