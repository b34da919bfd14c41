"""Lift low log-prices so every implied price is at least ``exp(a)``.

The lift keeps ``sum(mu)`` and does not increase the smoothed objective
when ``a`` is below the smoothed floor (or the nonsmooth objective when
``a`` is below the plain floor).
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from scipy.special import logsumexp, softmax


class FloorTooHigh(ValueError):
    """``exp(a) >= b/m``: every price could sit below the floor at once."""


class DegenerateThreshold(ArithmeticError):
    pass


class RoundResult(NamedTuple):
    mu: np.ndarray
    loops: int
    lifted: np.ndarray  # coordinates raised before the shift
    shift: float  # uniform shift applied after lifting

    @property
    def unshifted(self) -> np.ndarray:
        return self.mu - self.shift


def check_floor(a: float, b: float, m: int) -> None:
    if not b > 0:
        raise ValueError("b must be positive")
    if not a < np.log(b / m):
        raise FloorTooHigh(f"floor a={a!r} must satisfy exp(a) < b/m = {b / m!r}")


def threshold(mu_k, in_J, a: float, b: float) -> float:
    """``log(sum_{j not in J} exp(mu_j)) - log(b*exp(-a) - |J|)``."""
    mu_k = np.asarray(mu_k, dtype=float)
    in_J = np.asarray(in_J, dtype=bool)
    rest = mu_k[~in_J]
    denom = b * np.exp(-a) - in_J.sum()
    if rest.size == 0 or not denom > 0:
        raise DegenerateThreshold(f"threshold undefined: |J|={in_J.sum()}, b*exp(-a)={b * np.exp(-a)!r}")
    return float(logsumexp(rest) - np.log(denom))


def round_mu(a: float, mu0, b: float) -> RoundResult:
    """Round(a, mu0, b).

    Coordinates whose implied price ``b * softmax(mu0)_j`` is below ``exp(a)``
    are raised in stages, never past the smallest untouched coordinate, until
    one final threshold lift; the result is then shifted so its sum matches
    ``mu0``. The while loop runs at most ``m`` times.
    """
    mu0 = np.asarray(mu0, dtype=float)
    m = mu0.size
    check_floor(a, b, m)
    q = b * softmax(mu0)
    in_J = q < np.exp(a)
    if not in_J.any():
        return RoundResult(mu0.copy(), 0, in_J, 0.0)

    mu = mu0.copy()
    mu[in_J] = mu0[in_J].max()
    loops = 0
    while True:
        loops += 1
        if loops > m:
            raise RuntimeError("rounding did not terminate in m steps")
        thres = threshold(mu, in_J, a, b)
        below = ~in_J & (mu < thres)
        if below.any():
            c = mu[below].min()
            newly = below & (mu == c)
            mu = np.maximum(mu, c)
            in_J |= newly
        else:
            mu_new = np.maximum(mu, thres)
            shift = np.sum(mu0 - mu_new) / m
            return RoundResult(mu_new + shift, loops, mu_new > mu0, float(shift))

