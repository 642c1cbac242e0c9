"""SDE and PDE oracles for the total-mass analysis.

Square-root diffusions are simulated with the Euler full-truncation scheme
(the positive part enters both drift and diffusion; absorbed at the first
grid point <= 0).  The scheme has a documented O(sqrt(dt))-type weak bias
for hitting functionals; the closed-form facts in this module exist to
bound that bias in tests:

* extinction: for dV = theta V dt + sqrt(gamma V) dW from x0,
  P(T_0 > t) = 1 - exp(-2 theta x0 / (gamma (1 - e^{-theta t}))), with the
  theta -> 0 limit exp(-2 x0 / (gamma t)) taken analytically.
* hitting: scale functions s(x) = gamma (1 - e^{-2 eps x / gamma}) / 2 eps
  (square-root diffusion with drift eps V) and
  s(x) = (gamma / 2m)(e^{2 m x / gamma} - 1) (Brownian motion with constant
  downward drift m), giving P(hit hi before lo) = (s(a)-s(lo))/(s(hi)-s(lo)).

The dual log-Laplace PDE  dU/dt = Lap U / 2 + theta U - U^2/2 + lambda phi1,
U_0 = 0, with phi1 a radial bump (1 on B_rho, 0 outside B_{1.5 rho}),
computes hitting probabilities 1 - exp(-nu(U_t)) of the super-Brownian
envelope; it is solved radially with a second-order spatial stencil.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import norm


class DegenerateInterval(ValueError):
    """Hitting interval has lo == hi."""


class GridInstability(ValueError):
    """Explicit time step violates the declared stability bound."""


def critical_mass_fraction(d: int) -> float:
    """p_c = 1 / (2 * 3^d): the Cauchy-Schwarz constant relating the squared
    occupation mass in Q_3(0) to the killing integral."""
    return 1.0 / (2.0 * 3**d)


@dataclass(frozen=True)
class DiffusionConstants:
    d: int
    eps: float = 0.0
    beta: float = 0.0
    gamma: float = 1.0
    alpha: float = 1.0

    @property
    def p_c(self) -> float:
        return critical_mass_fraction(self.d)


@dataclass(frozen=True)
class SdeConfig:
    """Euler full-truncation configuration (dt, horizon, path count)."""

    dt: float = 1e-3
    horizon: float = 1.0
    n_paths: int = 10_000
    keep_paths: bool = False

    def __post_init__(self) -> None:
        if self.dt <= 0 or self.horizon < 0 or self.n_paths <= 0:
            raise ValueError("dt > 0, horizon >= 0, n_paths > 0 required")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))


@dataclass
class PathSummary:
    """Terminal snapshot of a square-root diffusion batch."""

    final: np.ndarray
    absorbed: np.ndarray
    paths: np.ndarray | None = None
    times: np.ndarray | None = None

    @property
    def survival_fraction(self) -> float:
        return float((~self.absorbed).mean())

    @property
    def extinction_fraction(self) -> float:
        return float(self.absorbed.mean())


def simulate_feller(
    x0: float,
    drift: float,
    branching: float,
    config: SdeConfig,
    rng: np.random.Generator,
) -> PathSummary:
    """dV = drift * V dt + sqrt(branching * V) dW, full truncation, 0 absorbing.

    Paths hitting <= 0 on the grid are set to 0 and stay there.
    """
    if x0 < 0:
        raise ValueError("x0 must be >= 0")
    n = config.n_paths
    v = np.full(n, float(x0))
    keep = config.keep_paths
    paths = np.empty((config.n_steps + 1, n)) if keep else None
    if keep:
        paths[0] = v
    dt = config.dt
    sdt = math.sqrt(dt)
    alive = v > 0
    for step in range(config.n_steps):
        if alive.any():
            va = v[alive]
            noise = rng.standard_normal(va.size)
            va = va + drift * va * dt + np.sqrt(branching * va) * sdt * noise
            np.maximum(va, 0.0, out=va)
            v[alive] = va
            alive[alive] = va > 0
        elif not keep:
            break
        if keep:
            paths[step + 1] = v
    out = PathSummary(final=v, absorbed=v <= 0.0, paths=paths)
    if keep:
        out.times = np.arange(config.n_steps + 1) * dt
    return out


def feller_hitting_mc(
    x0: float,
    drift: float,
    branching: float,
    hi: float,
    config: SdeConfig,
    rng: np.random.Generator,
) -> tuple[float, float]:
    """Monte Carlo P(hit hi before 0); returns (hit fraction, unresolved
    fraction still in (0, hi) at the horizon).  Resolved paths are dropped
    each step, so cost scales with the unresolved population."""
    n = config.n_paths
    v = np.full(n, float(x0))
    hit = 0
    dt = config.dt
    sdt = math.sqrt(dt)
    for _ in range(config.n_steps):
        if v.size == 0:
            break
        noise = rng.standard_normal(v.size)
        v = v + drift * v * dt + np.sqrt(np.maximum(v, 0.0) * branching) * sdt * noise
        hit += int(np.count_nonzero(v >= hi))
        v = v[(v > 0.0) & (v < hi)]
    return hit / n, v.size / n


def feller_survival_prob(x0: float, drift: float, branching: float, t: float) -> float:
    """Closed-form P(T_0 > t) for the square-root diffusion; the drift -> 0
    limit is taken analytically."""
    if t <= 0:
        raise ValueError("t must be positive")
    if x0 <= 0:
        return 0.0
    if abs(drift) < 1e-12:
        return 1.0 - math.exp(-2.0 * x0 / (branching * t))
    denom = branching * -math.expm1(-drift * t)
    return 1.0 - math.exp(-2.0 * drift * x0 / denom)


def scale_hitting_prob(
    a: float,
    lo: float,
    hi: float,
    eps: float,
    gamma: float,
    variant: str = "feller",
) -> float:
    """P(hit hi before lo from a) via scale functions.

    variant="feller": dV = eps V dt + sqrt(gamma V) dW,
        s(x) = gamma (1 - e^{-2 eps x / gamma}) / (2 eps).
    variant="drifted_bm": dV = -eps dt + sqrt(gamma) dW (eps the constant
        downward drift, e.g. p_c * beta), s(x) = (gamma/2eps)(e^{2 eps x/gamma} - 1).
    """
    if lo == hi:
        raise DegenerateInterval("lo == hi")
    if not lo <= a <= hi:
        raise ValueError("need lo <= a <= hi")

    if variant == "feller":
        if abs(eps) < 1e-12:
            s = lambda x: x
        else:
            s = lambda x: gamma * -math.expm1(-2.0 * eps * x / gamma) / (2.0 * eps)
    elif variant == "drifted_bm":
        if abs(eps) < 1e-12:
            s = lambda x: x
        else:
            s = lambda x: gamma * math.expm1(2.0 * eps * x / gamma) / (2.0 * eps)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return (s(a) - s(lo)) / (s(hi) - s(lo))


def simulate_meanfield_sir(
    i0: float,
    lam: float,
    config: SdeConfig,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Mean-field epidemic pair dI = (lam I - I R) dt + sqrt(I) dW,
    dR = I dt, full truncation, I = 0 absorbing.  Returns (I, R) paths of
    shape (n_steps + 1, n_paths)."""
    if i0 < 0:
        raise ValueError("i0 must be >= 0")
    n = config.n_paths
    steps = config.n_steps
    i_paths = np.empty((steps + 1, n))
    r_paths = np.empty((steps + 1, n))
    i = np.full(n, float(i0))
    r = np.zeros(n)
    i_paths[0] = i
    r_paths[0] = r
    dt = config.dt
    sdt = math.sqrt(dt)
    for step in range(steps):
        ip = np.maximum(i, 0.0)
        noise = rng.standard_normal(n)
        r_new = r + ip * dt
        i = i + (lam * ip - ip * r) * dt + np.sqrt(ip) * sdt * noise
        np.maximum(i, 0.0, out=i)
        i[i <= 0.0] = 0.0
        r = r_new
        i_paths[step + 1] = i
        r_paths[step + 1] = r
    return i_paths, r_paths


@dataclass
class ParabolicPathStats:
    """Hitting statistics of Y_t = 2 + eps t - p_c beta t^2 + sqrt(gamma) B_t."""

    p_alive_at_checkpoint: float
    p_hit4_before_0: float
    checkpoint: float


def simulate_parabolic_drift(
    eps: float,
    beta: float,
    gamma: float,
    config: SdeConfig,
    rng: np.random.Generator,
    d: int = 2,
) -> ParabolicPathStats:
    """Monte Carlo for Y_t = 2 + eps t - p_c beta t^2 + sqrt(gamma) B_t:
    estimates P(T_0 > 1/(8 eps)) (with 1/(8 eps) capped by the horizon when
    eps = 0) and P(T_4 < T_0)."""
    p_c = critical_mass_fraction(d)
    n = config.n_paths
    steps = config.n_steps
    dt = config.dt
    sdt = math.sqrt(gamma) * math.sqrt(dt)
    checkpoint = min(1.0 / (8.0 * eps), config.horizon) if eps > 0 else config.horizon
    check_step = int(round(checkpoint / dt))
    y = np.full(n, 2.0)
    hit0 = np.zeros(n, dtype=bool)
    hit4 = np.zeros(n, dtype=bool)
    alive_at_checkpoint = np.zeros(n, dtype=bool) if check_step > 0 else ~hit0
    t = 0.0
    for step in range(steps):
        drift_inc = (eps - p_c * beta * (2 * t + dt)) * dt  # exact mean increment
        t += dt
        y += drift_inc + sdt * rng.standard_normal(n)
        fresh = ~hit0
        hit4 |= fresh & ~hit4 & (y >= 4.0)
        hit0 |= fresh & (y <= 0.0)
        if step + 1 == check_step:
            alive_at_checkpoint = ~hit0
    return ParabolicPathStats(
        p_alive_at_checkpoint=float(alive_at_checkpoint.mean()),
        p_hit4_before_0=float(hit4.mean()),
        checkpoint=checkpoint,
    )


def parabolic_extinction_tail_bound(
    eps: float, beta: float, gamma: float, d: int = 2
) -> float:
    """Gaussian tail bound on P(T_0(Y) > 1/(8 eps)) for beta/eps^2 >= 20000
    and eps <= 1/4:  P(B_1 >= sqrt(8 eps) p_c (beta eps^{-2}) / (128 sqrt(gamma)))."""
    p_c = critical_mass_fraction(d)
    z = math.sqrt(8.0 * eps) * p_c * (beta / eps**2) / (128.0 * math.sqrt(gamma))
    return float(norm.sf(z))


# ---------------------------------------------------------------------
# dual log-Laplace PDE, radial
# ---------------------------------------------------------------------


def radial_bump(r: np.ndarray, rho: float) -> np.ndarray:
    """Smooth radial plateau: 1 on B_rho, 0 outside B_{1.5 rho}."""

    def h(s: np.ndarray) -> np.ndarray:
        # smooth monotone 0 -> 1 bridge on [0, 1]
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            f = np.where(s > 0, np.exp(-1.0 / np.maximum(s, 1e-300)), 0.0)
            g = np.where(1 - s > 0, np.exp(-1.0 / np.maximum(1 - s, 1e-300)), 0.0)
        return f / (f + g)

    s = (1.5 * rho - np.asarray(r, dtype=np.float64)) / (0.5 * rho)
    return h(np.clip(s, 0.0, 1.0))


@dataclass(frozen=True)
class RadialGrid:
    """Explicit finite-difference grid for the radial dual equation."""

    r_max: float
    n_r: int = 257
    dt: float | None = None
    d: int = 2

    @property
    def dr(self) -> float:
        return self.r_max / (self.n_r - 1)

    @property
    def stability_dt(self) -> float:
        """Declared explicit-scheme bound dt <= dr^2 / (2 d)."""
        return self.dr**2 / (2.0 * self.d)

    @property
    def step(self) -> float:
        return self.dt if self.dt is not None else 0.8 * self.stability_dt


@dataclass
class DualPdeSolution:
    """Radial solution U(t, r) on snapshot times."""

    times: np.ndarray
    r: np.ndarray
    snapshots: np.ndarray  # (len(times), n_r)
    rho: float
    lam: float
    theta: float

    def at(self, t: float, radius: float) -> float:
        it = int(np.argmin(np.abs(self.times - t)))
        return float(np.interp(radius, self.r, self.snapshots[it]))

    def hitting_prob(self, atoms: Sequence[tuple[Sequence[float], float]], t: float) -> float:
        """1 - exp(-nu(U_t)) for an atomic measure nu = sum m_i delta_{x_i}."""
        it = int(np.argmin(np.abs(self.times - t)))
        u = self.snapshots[it]
        total = 0.0
        for pos, mass in atoms:
            radius = float(np.sqrt(np.sum(np.asarray(pos, dtype=np.float64) ** 2)))
            total += mass * float(np.interp(radius, self.r, u))
        return 1.0 - math.exp(-total)


def solve_dual_pde(
    lam: float,
    theta: float,
    rho: float,
    grid: RadialGrid,
    times: Sequence[float],
) -> DualPdeSolution:
    """Explicit second-order radial solve of
    dU/dt = (U'' + (d-1)/r U') / 2 + theta U - U^2 / 2 + lam * phi1,
    U(0, .) = 0, far-field U(r_max) = 0, symmetry U'(0) = 0.

    Raises GridInstability if the configured dt exceeds dr^2 / (2d).
    The source bump phi1 must fit well inside the domain.
    """
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    if grid.r_max < 3.0 * rho:
        raise ValueError("domain too small for the source bump")
    dt = grid.step
    if dt > grid.stability_dt * (1.0 + 1e-12):
        raise GridInstability(
            f"dt={dt} exceeds stability bound {grid.stability_dt}"
        )
    r = np.linspace(0.0, grid.r_max, grid.n_r)
    dr = grid.dr
    d = grid.d
    phi = lam * radial_bump(r, rho)
    u = np.zeros_like(r)
    times = sorted(float(t) for t in times)
    out = np.empty((len(times), grid.n_r))
    t_now = 0.0
    snap_i = 0
    inv_dr2 = 1.0 / dr**2
    inner = slice(1, -1)
    r_inner = r[inner]
    while snap_i < len(times):
        t_target = times[snap_i]
        n_steps = max(0, int(math.ceil((t_target - t_now) / dt - 1e-12)))
        for _ in range(n_steps):
            lap = np.zeros_like(u)
            lap[inner] = (u[2:] - 2.0 * u[1:-1] + u[:-2]) * inv_dr2 + (
                (d - 1) / r_inner
            ) * (u[2:] - u[:-2]) / (2.0 * dr)
            lap[0] = 2.0 * d * (u[1] - u[0]) * inv_dr2
            u = u + dt * (0.5 * lap + theta * u - 0.5 * u * u + phi)
            u[-1] = 0.0
            t_now += dt
        out[snap_i] = u
        snap_i += 1
    return DualPdeSolution(
        times=np.array(times), r=r, snapshots=out, rho=rho, lam=lam, theta=theta
    )
