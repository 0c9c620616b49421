"""Lebesgue moments of monomials over Euclidean balls."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .poly import Exponent, monomials


def ball_moment(alpha: Exponent, radius: float, n: int | None = None) -> float:
    """Integral of x**alpha over the n-ball of the given radius.

    Uses prod(Gamma((a_i+1)/2)) / Gamma((|a|+n)/2 + 1) * r**(|a|+n), with the
    gamma ratio formed in log space; any odd exponent gives exactly 0.
    """
    alpha = tuple(int(a) for a in alpha)
    if n is None:
        n = len(alpha)
    if len(alpha) != n:
        raise ValueError(f"exponent {alpha} does not have {n} entries")
    if radius <= 0:
        raise ValueError("radius must be positive")
    if any(a % 2 for a in alpha):
        return 0.0
    deg = sum(alpha)
    return _unit_moment(alpha) * radius ** (deg + n)


@lru_cache(maxsize=None)
def _unit_moment(alpha: Exponent) -> float:
    n = len(alpha)
    deg = sum(alpha)
    log_num = sum(math.lgamma((a + 1) / 2) for a in alpha)
    log_den = math.lgamma((deg + n) / 2 + 1)
    return math.exp(log_num - log_den)


def ball_volume(radius: float, n: int) -> float:
    return ball_moment((0,) * n, radius, n)


@dataclass(frozen=True)
class MomentVector:
    """Moments of every x-monomial of degree <= ``degree`` over B(0, radius)."""

    entries: dict[Exponent, float]
    radius: float
    n: int
    degree: int

    def __getitem__(self, alpha: Exponent) -> float:
        return self.entries[tuple(alpha)]


def moment_vector(n: int, degree: int, radius: float) -> MomentVector:
    entries = {a: ball_moment(a, radius, n) for a in monomials(n, degree)}
    return MomentVector(entries, radius, n, degree)


def objective_vector(k: int, spec, unit: bool = False) -> MomentVector:
    """Moment vector for psi(., 0) of degree ``k``.

    With ``unit=True`` the moments are taken over the unit ball, which is what
    the compiler needs after rescaling B(0, R) to the unit ball; the volume
    Jacobian R**(n/2) is then applied to the objective value, not to the moments.
    """
    if k < 0:
        raise ValueError("degree must be non-negative")
    n = spec.universe.n_states
    radius = 1.0 if unit else math.sqrt(spec.ball_R)
    return moment_vector(n, k, radius)


def uniform_ball(rng, count: int, n: int, radius: float = 1.0) -> np.ndarray:
    """``count`` points drawn uniformly from the n-ball (Gaussian direction, U^(1/n) radius)."""
    g = rng.standard_normal((count, n))
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    r = rng.random((count, 1)) ** (1.0 / n)
    return g / norms * r * radius
