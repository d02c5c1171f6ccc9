"""Modified Bessel functions of the first kind, integer order.

Power series below ``x = 30 max(1, n)``, Hankel asymptotic expansion above.
Both branches return the exponentially scaled value ``I_n(x) exp(-x)`` so
large arguments never overflow; ``bessel_i`` multiplies the scale back.
"""

from __future__ import annotations

import math

import numpy as np


def _switch(n: int) -> float:
    return 30.0 * max(1, n)


def _series_scaled(n: int, x: np.ndarray) -> np.ndarray:
    # sum_k (x/2)^(2k+n) / (k! (k+n)!), accumulated in log space for the prefactor
    half = 0.5 * x
    with np.errstate(divide="ignore"):
        lead = n * np.log(np.where(half > 0, half, 1.0)) - math.lgamma(n + 1) - x
    lead = np.where(half > 0, lead, -np.inf if n else 0.0)
    term = np.ones_like(x)
    total = np.ones_like(x)
    q = half * half
    k = 0
    while True:
        k += 1
        term = term * q / (k * (k + n))
        total = total + term
        if np.all(term <= 1e-17 * total) or k > 2000:
            break
    return np.exp(lead) * total


def _asymptotic_scaled(n: int, x: np.ndarray) -> np.ndarray:
    mu = 4.0 * n * n
    term = np.ones_like(x)
    total = np.ones_like(x)
    prev = np.full_like(x, np.inf)
    for k in range(1, 200):
        term = -term * (mu - (2 * k - 1) ** 2) / (k * 8.0 * x)
        # stop at the smallest term of the (divergent) expansion
        grow = np.abs(term) > prev
        if np.all(grow | (np.abs(term) <= 1e-17 * np.abs(total))):
            break
        total = total + np.where(grow, 0.0, term)
        prev = np.where(grow, 0.0, np.abs(term))
    return total / np.sqrt(2.0 * np.pi * x)


def bessel_ive(n: int, x) -> np.ndarray | float:
    """``I_n(x) exp(-|x|)`` for integer ``n >= 0`` and real ``x >= 0``."""
    n = abs(int(n))
    xa = np.asarray(x, dtype=float)
    if np.any(xa < 0):
        raise ValueError("argument must be non-negative")
    flat = np.atleast_1d(xa).ravel()
    out = np.empty_like(flat)
    small = flat < _switch(n)
    if np.any(small):
        out[small] = _series_scaled(n, flat[small])
    if np.any(~small):
        out[~small] = _asymptotic_scaled(n, flat[~small])
    out = out.reshape(np.shape(xa))
    return out if out.ndim else float(out)


def bessel_i(n: int, x) -> np.ndarray | float:
    xa = np.asarray(x, dtype=float)
    out = np.asarray(bessel_ive(n, xa)) * np.exp(xa)
    return out if out.ndim else float(out)
