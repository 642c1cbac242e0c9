"""Parameter algebra of the rescaled martingale problems.

A measure-valued epidemic with drift theta, inhibition beta, branching rate
gamma and diffusion rate alpha, rescaled by U_t(psi) = c * X_{at}(psi(b .)),
solves the same family of martingale problems with

    theta' = a theta,   beta' = a^2 b^d beta / c,
    gamma' = a c gamma, alpha' = a b^2 alpha,   K'(x) = a K(x/b),

and local times related by L'_s(x) = (c / a b^d) L_{as}(x / b).  Choosing
(a, b, c) to force beta' = gamma' = alpha' = 1 reduces the model to the
single parameter theta', which is what the survival/extinction analysis
exploits.  The extinction argument further needs exponents (x, y, z) with
a = theta^x, b = theta^y, c = theta^z satisfying an eight-inequality system
so that the scaled parameters enter the small-parameter regime as theta -> 0.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace

from .rescale import ScaledField


class Infeasible(RuntimeError):
    """The exponent search failed (the system is known to be feasible)."""


@dataclass(frozen=True)
class KDescriptor:
    """Suppression-rate summary: amplitude and spatial scale."""

    rate: float = 0.0
    space_scale: float = 1.0


@dataclass(frozen=True)
class MuDescriptor:
    """Initial-measure summary: total mass and spatial scale."""

    mass: float = 1.0
    space_scale: float = 1.0


@dataclass(frozen=True)
class MartingaleProblemParams:
    theta: float
    beta: float
    gamma: float
    alpha: float
    k: KDescriptor = KDescriptor()
    mu: MuDescriptor = MuDescriptor()

    def __post_init__(self) -> None:
        if min(self.beta, self.gamma, self.alpha) <= 0:
            raise ValueError("beta, gamma, alpha must be positive")


@dataclass(frozen=True)
class ScaleTriple:
    """Time, space and mass scale factors (a, b, c), all positive.

    Triples form a group under componentwise multiplication; the inverse is
    the componentwise reciprocal.
    """

    a: float
    b: float
    c: float

    def __post_init__(self) -> None:
        if min(self.a, self.b, self.c) <= 0:
            raise ValueError("scale factors must be positive")

    def compose(self, other: "ScaleTriple") -> "ScaleTriple":
        return ScaleTriple(self.a * other.a, self.b * other.b, self.c * other.c)

    def inverse(self) -> "ScaleTriple":
        return ScaleTriple(1.0 / self.a, 1.0 / self.b, 1.0 / self.c)


IDENTITY = ScaleTriple(1.0, 1.0, 1.0)


def apply_scaling(
    params: MartingaleProblemParams, triple: ScaleTriple, d: int
) -> MartingaleProblemParams:
    """Parameters of U_t(psi) = c X_{at}(psi(b .)); K and mu descriptors
    transform by rate/mass factors and a 1/b spatial dilation (positions map
    x -> b x, so features of size s appear at size b s)."""
    a, b, c = triple.a, triple.b, triple.c
    return MartingaleProblemParams(
        theta=a * params.theta,
        beta=a * a * b**d * params.beta / c,
        gamma=a * c * params.gamma,
        alpha=a * b * b * params.alpha,
        k=KDescriptor(rate=a * params.k.rate, space_scale=b * params.k.space_scale),
        mu=MuDescriptor(mass=c * params.mu.mass, space_scale=b * params.mu.space_scale),
    )


def local_time_rescale(
    field: ScaledField, triple: ScaleTriple, d: int
) -> ScaledField:
    """L'_s(x) = (c / a b^d) L_{as}(x / b) applied to an interpolated field.

    The input field must be the local time at time a*s; nodes keep their
    integer labels while the stride rescales positions by b (node at
    position p moves to b p) and values gain the factor c / (a b^d).
    b is folded into an effective stride, so only the evaluation geometry
    changes; callers evaluating at points use the interpolation rule.
    """
    a, b, c = triple.a, triple.b, triple.c
    factor = c / (a * b**d)
    values = {z: v * factor for z, v in field.values.items()}
    # positions scale by b: evaluating at x reads the source at x/b, i.e.
    # the effective stride divides by b while node labels stay put.
    return ScaledField(values, field.stride / b, field.d)


def normalize_to_one_parameter(
    params: MartingaleProblemParams, d: int
) -> tuple[float, ScaleTriple]:
    """Closed-form (a, b, c) with beta' = gamma' = alpha' = 1; returns
    (theta', triple).  Always solvable for positive beta, gamma, alpha:

        a = (alpha^{d/2} / (beta gamma))^{2/(6-d)},
        b = (a alpha)^{-1/2},   c = 1 / (a gamma).
    """
    a = (params.alpha ** (d / 2.0) / (params.beta * params.gamma)) ** (2.0 / (6.0 - d))
    b = 1.0 / math.sqrt(a * params.alpha)
    c = 1.0 / (a * params.gamma)
    return a * params.theta, ScaleTriple(a, b, c)


# ---------------------------------------------------------------------
# exponent system for the small-theta extinction scaling
# ---------------------------------------------------------------------

_EXPONENT_SYSTEM = (
    lambda x, y, z, d: 1.0 + z - (x + d * y),
    lambda x, y, z, d: x + 1.0,
    lambda x, y, z, d: 2.0 * y - z,
    lambda x, y, z, d: 1.0 - x - 2.0 * z,
    lambda x, y, z, d: 2.0 - (d * y - z),
    lambda x, y, z, d: 3.0 * z + 3.0 - 2.0 * d * y,
    lambda x, y, z, d: -(x + z),
    lambda x, y, z, d: 2.0 * z - (x + d * y),
)


def verify_exponents(x: float, y: float, z: float, d: int, slack: float = 0.0) -> bool:
    """All eight strict inequalities of the small-theta scaling system, as
    published:

    1+z > x+dy,  x > -1,  2y > z,  1-x > 2z,
    dy-z < 2,    2dy < 3z+3,  x+z < 0,  x+dy < 2z.

    Sign note: the seventh inequality encodes the 1/gamma >= zeta entry of
    check_assumption_scaled through gamma = theta^{x+z}; for small theta
    that entry actually needs x + z > 0 (gamma -> 0), so the published
    system and its sample point (-3/4, 1/2, 1/2) are internally
    inconsistent with the gate they feed.  This checker implements the
    published system verbatim; regime-entry tests use a corrected interior
    point such as (-0.3, 0.4, 0.5).
    """
    return all(g(x, y, z, d) > slack for g in _EXPONENT_SYSTEM)


def solve_exponents(d: int, slack: float = 1e-3) -> tuple[float, float, float]:
    """Any interior point of the (open) exponent system, by rational grid
    search with a strict slack margin."""
    grid = [i / 8.0 for i in range(-12, 13)]
    for x, y, z in itertools.product(grid, repeat=3):
        if verify_exponents(x, y, z, d, slack=slack):
            return (x, y, z)
    raise Infeasible(f"no exponent triple found for d={d} at slack {slack}")


def check_assumption_scaled(
    alpha: float,
    eps: float,
    beta: float,
    gamma: float,
    eps0: float,
    zeta: float,
    d: int,
) -> bool:
    """Small-parameter regime gate for the scaled extinction argument:

    eps <= beta / (2 * 3^d),
    max(eps, alpha/gamma, sqrt(eps)/gamma) <= eps0,
    min(beta/eps^2, beta^2/(eps^3 gamma), 1/gamma, beta/gamma) >= zeta.
    """
    if min(alpha, eps, beta, gamma, eps0, zeta) <= 0:
        raise ValueError("all arguments must be positive")
    if eps > beta / (2.0 * 3**d):
        return False
    if max(eps, alpha / gamma, math.sqrt(eps) / gamma) > eps0:
        return False
    if (
        min(beta / eps**2, beta**2 / (eps**3 * gamma), 1.0 / gamma, beta / gamma)
        < zeta
    ):
        return False
    return True


def scaled_parameters_from_theta(
    theta: float, x: float, y: float, z: float, d: int
) -> tuple[float, float, float, float]:
    """(alpha, eps, beta, gamma) of the theta^(x,y,z)-scaled problem:
    alpha = theta^{x+2y}, eps = theta^{1+x}, beta = theta^{2x+dy-z},
    gamma = theta^{x+z}."""
    return (
        theta ** (x + 2 * y),
        theta ** (1 + x),
        theta ** (2 * x + d * y - z),
        theta ** (x + z),
    )
