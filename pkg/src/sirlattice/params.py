"""Model parameters for the village SIR lattice model.

Villages of N individuals sit at the sites of Z^d (d = 1, 2, 3).  An
infected individual at x attacks each individual at y with |y - x| <= 1
(Euclidean, so the site itself plus the 2d axis neighbors) independently
with probability

    p_N = (1 + theta / N^alpha) / ((2d+1) N),      alpha = 2 / (6 - d).

alpha is the critical window exponent: theta tunes the process around
criticality of the associated branching envelope, whose mean offspring
number is exactly (2d+1) N p_N = 1 + theta / N^alpha.

sigma2 = 2 / (2d+1) is the per-coordinate variance of the lazy uniform
step on {z : |z| <= 1}; it enters the diffusive space scaling
sqrt(N^alpha sigma2) shared by the mass and occupation rescalings.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import floor, sqrt


class NegativeProbability(ValueError):
    """theta is too negative for this N: 1 + theta/N^alpha < 0."""


def critical_exponent(d: int) -> float:
    return 2.0 / (6.0 - d)


def _snap(value: float) -> float:
    """Snap a float power to the nearest integer when within 1e-9 relative;
    keeps integer-part conventions exact (e.g. 64^(1/3) -> 4.0)."""
    nearest = round(value)
    if nearest and abs(value - nearest) < 1e-9 * max(1.0, abs(value)):
        return float(nearest)
    return value


def step_variance(d: int) -> float:
    return 2.0 / (2 * d + 1)


@dataclass(frozen=True)
class ModelParams:
    """Dimension, village size and transmission rate, plus derived constants."""

    d: int
    N: int
    theta: float = 0.0
    alpha: float = field(init=False)
    sigma2: float = field(init=False)

    def __post_init__(self) -> None:
        if self.d not in (1, 2, 3):
            raise ValueError(f"dimension must be 1, 2 or 3, got {self.d}")
        if self.N < 1:
            raise ValueError(f"village size must be >= 1, got {self.N}")
        object.__setattr__(self, "alpha", critical_exponent(self.d))
        object.__setattr__(self, "sigma2", step_variance(self.d))
        # fail fast if p_N would be negative
        transmission_probability(self)

    @property
    def n_alpha(self) -> float:
        """N^alpha, the time/mass unit of the critical window."""
        return _snap(float(self.N) ** self.alpha)

    @property
    def neighborhood_size(self) -> int:
        return 2 * self.d + 1

    @property
    def space_unit(self) -> float:
        """sqrt(N^alpha sigma2): one continuum length in lattice steps."""
        return sqrt(self.n_alpha * self.sigma2)

    @property
    def lattice_stride(self) -> int:
        """[sqrt(N^alpha sigma2)], the integer-part stride used by the
        occupation-field rescaling and by cube/box lattice maps."""
        return max(1, floor(self.space_unit))

    @property
    def sugitani_mass_unit(self) -> float:
        """N^{alpha (2 - d/2)}: occupation counts per unit of local time."""
        return _snap(float(self.N) ** (self.alpha * (2.0 - self.d / 2.0)))

    def generations(self, t: float) -> int:
        """[N^alpha t]: rescaled time t in generations."""
        return floor(self.n_alpha * t)


def transmission_probability(params: ModelParams) -> float:
    """Per-pair infection probability p_N.

    Raises NegativeProbability when 1 + theta/N^alpha < 0, i.e. theta is
    below -N^alpha and no probability in [0, 1] realizes the window.
    """
    rate = 1.0 + params.theta / params.n_alpha
    if rate < 0.0:
        raise NegativeProbability(
            f"1 + theta/N^alpha = {rate} < 0 (theta={params.theta}, N={params.N})"
        )
    return rate / (params.neighborhood_size * params.N)


def neighborhood_offsets(d: int) -> list[tuple[int, ...]]:
    """The 2d+1 lattice offsets {z : |z| <= 1}: origin plus axis steps.

    Order is fixed (origin first, then -e_i/+e_i by axis) so that every
    engine and oracle address enumerates neighborhoods identically.
    """
    offsets = [tuple([0] * d)]
    for axis in range(d):
        for sign in (-1, +1):
            z = [0] * d
            z[axis] = sign
            offsets.append(tuple(z))
    return offsets
