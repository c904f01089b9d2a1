"""Dimension constants, Green functions and scaling transforms.

Everything downstream works at the internal branching rate ``GAMMA = 2``
and with radially symmetric data, so the only kernel ever needed is the
sphere average of the Green function, ``c_d * max(s, r)**(2 - d)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

GAMMA = 2.0
SUPPORTED_DIMENSIONS = range(3, 9)


class DomainError(ValueError):
    """Argument outside the domain where a formula is defined."""


class ConfigurationError(ValueError):
    """Inconsistent inputs (grids, tables, missing constants)."""


class NumericError(RuntimeError):
    """A numerical procedure failed to produce a trustworthy result."""


def green_constant(d: int) -> float:
    return math.gamma(d / 2 - 1) / (2 * math.pi ** (d / 2))


def sphere_area(d: int) -> float:
    """Surface area of the unit sphere in R^d."""
    return 2 * math.pi ** (d / 2) / math.gamma(d / 2)


def ball_volume(d: int) -> float:
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


@dataclass(frozen=True)
class DimensionParams:
    d: int
    gamma: float = GAMMA
    c_d: float = field(init=False)
    omega_d: float = field(init=False)

    def __post_init__(self):
        if int(self.d) != self.d or self.d not in SUPPORTED_DIMENSIONS:
            raise DomainError(f"dimension must be an integer in 3..8, got {self.d!r}")
        if self.gamma != GAMMA:
            raise DomainError("core formulas run at gamma=2; use rescale_gamma for other rates")
        object.__setattr__(self, "c_d", green_constant(self.d))
        object.__setattr__(self, "omega_d", sphere_area(self.d))

    @property
    def unit_ball_volume(self) -> float:
        return ball_volume(self.d)


def green_value(params: DimensionParams, separation):
    """G(x, y) = c_d |x - y|^(2-d) as a function of the separation."""
    sep = np.asarray(separation, dtype=float)
    if np.any(sep <= 0):
        raise DomainError("Green function is singular at zero separation")
    out = params.c_d * sep ** (2 - params.d)
    return float(out) if out.ndim == 0 else out


def sphere_avg_green(params: DimensionParams, s, r):
    """Average of G(x, z) over z uniform on |z| = r, where |x| = s.

    By Newton's theorem this is c_d * max(s, r)^(2-d).  Symmetric in (s, r)
    and vectorised over both arguments.
    """
    s = np.asarray(s, dtype=float)
    r = np.asarray(r, dtype=float)
    if np.any(s < 0) or np.any(r < 0):
        raise DomainError("radii must be nonnegative")
    m = np.maximum(s, r)
    if np.any(m == 0):
        raise DomainError("sphere average undefined for s = r = 0")
    out = params.c_d * m ** (2 - params.d)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class CanonicalProblem:
    """Start on the unit sphere, target ball of radius ``epsilon``.

    ``occupation_factor`` multiplies canonical occupation mass to give the
    occupation of the unit ball seen from the original start distance.
    """

    epsilon: float
    occupation_factor: float

    @property
    def start_distance(self) -> float:
        return 1.0 / self.epsilon


def canonicalize(start_distance: float) -> CanonicalProblem:
    if not start_distance > 1:
        raise DomainError("start distance must exceed 1 (start outside the unit ball)")
    return CanonicalProblem(epsilon=1.0 / start_distance, occupation_factor=start_distance**4)


def decanonicalize(problem: CanonicalProblem) -> float:
    return problem.start_distance


@dataclass(frozen=True)
class ScalingMap:
    """Space scaling by ``lam`` combined with a change of branching rate.

    Spatial scaling x -> lam*x multiplies occupation mass by lam^4.  The
    mass scaling X -> (gamma_out/gamma_in) X turns rate gamma_in into
    gamma_out; under it the excursion measure picks up the weight
    gamma_in/gamma_out, which cancels in any conditioned law.
    """

    lam: float
    gamma_in: float = GAMMA
    gamma_out: float = GAMMA

    def __post_init__(self):
        if not self.lam > 0 or not self.gamma_in > 0 or not self.gamma_out > 0:
            raise DomainError("scale factor and branching rates must be positive")

    @property
    def mass_factor(self) -> float:
        return self.lam**4 * (self.gamma_out / self.gamma_in)

    @property
    def measure_weight(self) -> float:
        return self.gamma_in / self.gamma_out

    def inverse(self) -> "ScalingMap":
        return ScalingMap(1.0 / self.lam, self.gamma_out, self.gamma_in)

    def apply(self, distance: float, epsilon: float, occupation: float) -> tuple[float, float, float]:
        return distance * self.lam, epsilon * self.lam, occupation * self.mass_factor


def rescale_gamma(gamma_target: float, occupation_value):
    """Convert an occupation statistic computed at gamma=2 to rate ``gamma_target``.

    Occupation under rate lam*gamma is lam times occupation under gamma with
    lam = gamma_target/2; the excursion measure carries weight 1/lam, so
    conditioned laws (and their means) simply scale by lam.
    """
    if not gamma_target > 0:
        raise DomainError("branching rate must be positive")
    out = np.asarray(occupation_value, dtype=float) * (gamma_target / GAMMA)
    return float(out) if out.ndim == 0 else out
