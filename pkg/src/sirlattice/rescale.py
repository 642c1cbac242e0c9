"""Scaling operators, Gaussian kernels, initial samplers and regularity checks.

Two rescalings send lattice data to continuum proxies, both with the same
space unit sqrt(N^alpha sigma2):

* mass scaling (atoms): counts / N^alpha at positions x / sqrt(N^alpha sigma2)
  -- the measure-valued (infected set) limit.
* occupation scaling (fields): f([sqrt(N^alpha sigma2)] x) / N^{alpha(2-d/2)}
  on the rescaled integer lattice, extended by multilinear interpolation --
  the local-time (consumed substrate) limit.  Note the integer-part stride
  in the field version: lattice functions are only defined on Z^d.

The concentration function D(mu, r) = sup_y mu(B_r(y)) drives two regularity
gates: the (log 1/r)-type initial-condition bound in d = 2, 3, and the
(A, lambda, r0)-admissibility bound A r^2 (lambda r^{d-2} + (1 + log 1/r)^2)
below r0 e^{-lambda} that the survival machinery demands of block initial
conditions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import integrate, special
from scipy.spatial import cKDTree

from .params import ModelParams, neighborhood_offsets

Site = tuple[int, ...]


class QuadratureFailure(RuntimeError):
    """Adaptive quadrature did not converge to the requested tolerance."""


# ---------------------------------------------------------------------
# scaled containers
# ---------------------------------------------------------------------


@dataclass
class ScaledMeasure:
    """Finite atomic measure on R^d: positions (n, d) and masses (n,)."""

    positions: np.ndarray
    masses: np.ndarray

    def __post_init__(self) -> None:
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=np.float64))
        self.masses = np.asarray(self.masses, dtype=np.float64)
        if np.any(self.masses < 0):
            raise ValueError("atom masses must be nonnegative")

    @property
    def total_mass(self) -> float:
        return float(self.masses.sum())

    @property
    def d(self) -> int:
        return self.positions.shape[1]

    def ball_mass(self, center: Sequence[float], r: float) -> float:
        if self.positions.shape[0] == 0:
            return 0.0
        diff = self.positions - np.asarray(center, dtype=np.float64)
        return float(self.masses[(diff**2).sum(axis=1) < r * r].sum())

    def to_atom_list(self) -> list[tuple[list[float], float]]:
        """JSON-ready [(position, mass), ...]."""
        return [
            (list(map(float, p)), float(m))
            for p, m in zip(self.positions, self.masses)
        ]


@dataclass
class ScaledField:
    """Values on the rescaled lattice Z^d / stride, multilinearly interpolated.

    Node z in Z^d sits at position z / stride.  The stride is an integer for
    freshly rescaled lattice fields; parameter rescalings may dilate it to a
    float without changing node labels.
    """

    values: dict[Site, float]
    stride: float
    d: int

    def value_at_lattice(self, z: Site) -> float:
        return self.values.get(tuple(z), 0.0)

    def max_value(self) -> float:
        return max(self.values.values(), default=0.0)

    def __call__(self, point: Sequence[float]) -> float:
        """Multilinear interpolation between rescaled lattice nodes."""
        u = np.asarray(point, dtype=np.float64) * self.stride
        base = np.floor(u).astype(np.int64)
        frac = u - base
        total = 0.0
        for corner in range(1 << self.d):
            z = tuple(
                int(base[i]) + ((corner >> i) & 1) for i in range(self.d)
            )
            w = 1.0
            for i in range(self.d):
                w *= frac[i] if (corner >> i) & 1 else 1.0 - frac[i]
            if w:
                total += w * self.values.get(z, 0.0)
        return total

    def support_in_box(self, lo: Sequence[float], hi: Sequence[float]) -> bool:
        """All nonzero nodes have rescaled position inside [lo, hi]."""
        lo = np.asarray(lo, dtype=np.float64)
        hi = np.asarray(hi, dtype=np.float64)
        for z, v in self.values.items():
            if v == 0.0:
                continue
            pos = np.array(z, dtype=np.float64) / self.stride
            if np.any(pos < lo) or np.any(pos > hi):
                return False
        return True


def feller_watanabe(counts: Mapping[Site, int], params: ModelParams) -> ScaledMeasure:
    """Mass-scaling: an atom of mass count/N^alpha at x / sqrt(N^alpha sigma2)."""
    if not counts:
        return ScaledMeasure(np.zeros((0, params.d)), np.zeros(0))
    sites = np.array(sorted(counts), dtype=np.float64).reshape(-1, params.d)
    masses = np.array([counts[tuple(map(int, s))] for s in sites], dtype=np.float64)
    return ScaledMeasure(sites / params.space_unit, masses / params.n_alpha)


def sugitani(field_counts: Mapping[Site, int], params: ModelParams) -> ScaledField:
    """Occupation-scaling: the rescaled-lattice node at position z / stride
    (z in Z^d, stride = [sqrt(N^alpha sigma2)]) carries the value
    f(z) / N^{alpha(2-d/2)}, multilinearly interpolated in between."""
    unit = params.sugitani_mass_unit
    values: dict[Site, float] = {
        tuple(int(c) for c in site): count / unit
        for site, count in field_counts.items()
        if count
    }
    return ScaledField(values, params.lattice_stride, params.d)


# ---------------------------------------------------------------------
# lattice Green's function
# ---------------------------------------------------------------------


@lru_cache(maxsize=32)
def _green_window(n: int, d: int) -> tuple[np.ndarray, int]:
    """G_n = sum_{1 <= i < n} P_i on a window [-n, n]^d; returns (array, off)."""
    size = 2 * n + 1
    off = n
    p = np.zeros((size,) * d)
    p[(off,) * d] = 1.0
    g = np.zeros_like(p)
    offsets = neighborhood_offsets(d)
    w = 1.0 / len(offsets)
    for _ in range(1, n):
        nxt = np.zeros_like(p)
        for shift in offsets:
            src, dst = [], []
            for o in shift:
                if o == 0:
                    src.append(slice(None)); dst.append(slice(None))
                elif o > 0:
                    src.append(slice(None, -o)); dst.append(slice(o, None))
                else:
                    src.append(slice(-o, None)); dst.append(slice(None, o))
            nxt[tuple(dst)] += w * p[tuple(src)]
        p = nxt
        g += p
    return g, off


def green_function(n: int, x: Site | int, d: int) -> float:
    """G_n(x) = sum_{1 <= i < n} P_i(0, x) for the lazy uniform walk with
    one-step law 1/(2d+1) on {|z| <= 1}.  G_1 is the empty sum."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if isinstance(x, int):
        x = (x,)
    if len(x) != d:
        raise ValueError("point dimension mismatch")
    if n == 1 or any(abs(c) >= n for c in x):
        return 0.0
    g, off = _green_window(n, d)
    return float(g[tuple(c + off for c in x)])


# ---------------------------------------------------------------------
# Gaussian kernels
# ---------------------------------------------------------------------


def gauss_kernel(t: float, x: Sequence[float] | float) -> float:
    """p_t(x) = exp(-|x|^2 / 2t) / (2 pi t)^{d/2}; t > 0."""
    if t <= 0:
        raise ValueError("t must be positive")
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    d = x.size
    return float(math.exp(-(x @ x) / (2.0 * t)) / (2.0 * math.pi * t) ** (d / 2.0))


def integrated_gauss_kernel(
    t: float, x: Sequence[float] | float, rel_tol: float = 1e-8
) -> float:
    """q_t(x) = int_0^t p_s(x) ds by adaptive quadrature.

    Divergent at x = 0 for d >= 2 (returns inf); q_0 = 0.  Raises
    QuadratureFailure when the adaptive rule cannot reach rel_tol.
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    if t == 0:
        return 0.0
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    d = x.size
    r2 = float(x @ x)
    if r2 == 0.0 and d >= 2:
        return math.inf
    val, err = integrate.quad(
        lambda s: math.exp(-r2 / (2.0 * s)) / (2.0 * math.pi * s) ** (d / 2.0),
        0.0,
        t,
        epsabs=0.0,
        epsrel=rel_tol,
        limit=200,
    )
    if not math.isfinite(val) or (val > 0 and err > 10 * rel_tol * val):
        raise QuadratureFailure(f"q_t quadrature error {err} at rel_tol {rel_tol}")
    return val


def heat_kernels(
    t: float, x: Sequence[float] | float, d: int, rel_tol: float = 1e-8
) -> tuple[float, float]:
    """(p_t(x), q_t(x)) for a point in R^d."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if x.size != d:
        raise ValueError("point dimension mismatch")
    return gauss_kernel(t, x), integrated_gauss_kernel(t, x, rel_tol)


def time_window_kernel(r: float, t_lo: float, t_hi: float, d: int) -> float:
    """int_{t_lo}^{t_hi} p_s(x) ds at |x| = r, in closed form for d = 2, 3.

    d=2: (E1(r^2/2t_hi) - E1(r^2/2t_lo)) / 2 pi
    d=3: (erfc(r/sqrt(2 t_hi)) - erfc(r/sqrt(2 t_lo))) / 2 pi r
    with the r = 0 limits (log(t_hi/t_lo)/2pi and sqrt(2/pi)-type) exact.
    """
    if not 0 < t_lo < t_hi:
        raise ValueError("need 0 < t_lo < t_hi")
    if r < 0:
        raise ValueError("r must be >= 0")
    if d == 2:
        if r == 0.0:
            return math.log(t_hi / t_lo) / (2.0 * math.pi)
        u = r * r / 2.0
        return float(special.exp1(u / t_hi) - special.exp1(u / t_lo)) / (2.0 * math.pi)
    if d == 3:
        if r == 0.0:
            return (2.0 * math.pi) ** -1.5 * 2.0 * (t_lo**-0.5 - t_hi**-0.5)
        a = r / math.sqrt(2.0 * t_hi)
        b = r / math.sqrt(2.0 * t_lo)
        return float(special.erfc(a) - special.erfc(b)) / (2.0 * math.pi * r)
    val, _ = integrate.quad(
        lambda s: math.exp(-r * r / (2.0 * s)) / (2.0 * math.pi * s) ** (d / 2.0),
        t_lo,
        t_hi,
    )
    return val


# ---------------------------------------------------------------------
# continuum measures
# ---------------------------------------------------------------------


@dataclass
class ContinuumMeasure:
    """Finite compactly-supported measure: atoms, or a sampler of the
    normalized law plus the total mass.

    ball_mass_fn, when provided, evaluates mu(B_r(y)) exactly (used by the
    analytic test measures); atomic measures get it for free; sampler-only
    measures fall back to an i.i.d. discretization of `discretize_n` points.
    """

    d: int
    total_mass: float
    support_lo: tuple[float, ...]
    support_hi: tuple[float, ...]
    atoms: ScaledMeasure | None = None
    sampler: Callable[[np.random.Generator, int], np.ndarray] | None = None
    ball_mass_fn: Callable[[np.ndarray, float], float] | None = None
    discretize_n: int = 4096
    _cloud: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self.total_mass < 0:
            raise ValueError("total mass must be >= 0")
        if self.atoms is None and self.sampler is None and self.total_mass > 0:
            raise ValueError("need atoms or a sampler")

    # construction helpers

    @staticmethod
    def point_mass(pos: Sequence[float], mass: float) -> "ContinuumMeasure":
        pos = tuple(float(c) for c in pos)
        atoms = ScaledMeasure(np.array([pos]), np.array([mass]))
        return ContinuumMeasure(len(pos), mass, pos, pos, atoms=atoms)

    @staticmethod
    def from_atoms(atoms: ScaledMeasure) -> "ContinuumMeasure":
        if atoms.positions.shape[0] == 0:
            return ContinuumMeasure(atoms.d, 0.0, (), (), atoms=atoms)
        lo = tuple(map(float, atoms.positions.min(axis=0)))
        hi = tuple(map(float, atoms.positions.max(axis=0)))
        return ContinuumMeasure(atoms.d, atoms.total_mass, lo, hi, atoms=atoms)

    @staticmethod
    def uniform_box(
        lo: Sequence[float], hi: Sequence[float], mass: float
    ) -> "ContinuumMeasure":
        lo_t = tuple(float(c) for c in lo)
        hi_t = tuple(float(c) for c in hi)
        d = len(lo_t)
        vol = math.prod(h - l for l, h in zip(lo_t, hi_t))
        if vol <= 0:
            raise ValueError("box must have positive volume")
        density = mass / vol

        def sampler(rng: np.random.Generator, size: int) -> np.ndarray:
            return rng.uniform(lo_t, hi_t, size=(size, d))

        def ball_mass(center: np.ndarray, r: float) -> float:
            return density * _box_ball_volume(np.asarray(lo_t), np.asarray(hi_t), center, r)

        return ContinuumMeasure(
            d, mass, lo_t, hi_t, sampler=sampler, ball_mass_fn=ball_mass
        )

    # sampling and mass queries

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """size i.i.d. points from mu / |mu|."""
        if self.total_mass <= 0:
            raise ValueError("cannot sample from the zero measure")
        if self.sampler is not None:
            return np.asarray(self.sampler(rng, size), dtype=np.float64).reshape(
                size, self.d
            )
        probs = self.atoms.masses / self.atoms.total_mass
        idx = rng.choice(len(probs), size=size, p=probs)
        return self.atoms.positions[idx]

    def _discretized(self) -> ScaledMeasure:
        if self.atoms is not None:
            return self.atoms
        if self._cloud is None:
            rng = np.random.default_rng(0xD15C)
            object.__setattr__(self, "_cloud", self.sample(rng, self.discretize_n))
        masses = np.full(self.discretize_n, self.total_mass / self.discretize_n)
        return ScaledMeasure(self._cloud, masses)

    def ball_mass(self, center: Sequence[float], r: float) -> float:
        center = np.asarray(center, dtype=np.float64)
        if self.total_mass == 0:
            return 0.0
        if self.ball_mass_fn is not None:
            return self.ball_mass_fn(center, r)
        return self._discretized().ball_mass(center, r)


def _box_ball_volume(
    lo: np.ndarray, hi: np.ndarray, center: np.ndarray, r: float
) -> float:
    """Volume of [lo, hi] intersected with the open ball B_r(center), by
    nested 1-d quadrature over slices (d <= 3)."""
    if r <= 0:
        return 0.0
    d = lo.size

    def slice_vol(k: int, rem2: float, c: np.ndarray) -> float:
        # volume of box[:k+1...] wait: integrate over axis k with remaining
        # squared radius rem2 around center c
        if rem2 <= 0:
            return 0.0
        rad = math.sqrt(rem2)
        a = max(lo[k], c[k] - rad)
        b = min(hi[k], c[k] + rad)
        if a >= b:
            return 0.0
        if k == d - 1:
            return b - a
        val, _ = integrate.quad(
            lambda t: slice_vol(k + 1, rem2 - (t - c[k]) ** 2, c),
            a,
            b,
            limit=100,
        )
        return val

    return slice_vol(0, r * r, center)


# ---------------------------------------------------------------------
# concentration and admissibility
# ---------------------------------------------------------------------


def concentration(
    mu: ContinuumMeasure | ScaledMeasure,
    r: float,
    refine: int = 0,
) -> float:
    """D(mu, r) = sup_y mu(B_r(y)), the sup approximated over candidate
    centers: atom positions (or the discretization cloud), plus `refine`
    levels of a dyadic grid over the support box.

    The approximation under-estimates the true sup by at most the modulus
    of mu over an r-grid cell; admissibility tests use strict margins.
    """
    if r <= 0:
        raise ValueError("r must be positive")
    if isinstance(mu, ScaledMeasure):
        mu = ContinuumMeasure.from_atoms(mu)
    if mu.total_mass == 0:
        return 0.0
    cloud = mu._discretized()
    centers = [cloud.positions]
    if refine > 0:
        lo = np.asarray(mu.support_lo)
        hi = np.asarray(mu.support_hi)
        axes = [
            np.linspace(lo[i], hi[i], 2**refine + 1) for i in range(mu.d)
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        centers.append(np.stack([m.ravel() for m in mesh], axis=-1))
    best = 0.0
    if mu.ball_mass_fn is not None:
        for block in centers:
            for c in block:
                best = max(best, mu.ball_mass_fn(np.asarray(c, dtype=np.float64), r))
        return best
    tree = cKDTree(cloud.positions)
    for block in centers:
        if block.shape[0] == 0:
            continue
        hits = tree.query_ball_point(block, r)
        for lst in hits:
            if lst:
                best = max(best, float(cloud.masses[lst].sum()))
    return best


def check_assumption_2(
    mu: ContinuumMeasure | ScaledMeasure,
    c_mu: float,
    d: int,
    n_radii: int = 12,
    refine: int = 0,
) -> bool:
    """Initial-condition concentration gate for d = 2, 3: on a dyadic grid
    of radii in (0, 1],

        D(mu, r) <= c_mu (log 1/r)^{-3}        (d = 2)
        D(mu, r) <= c_mu r (log 1/r)^{-2}      (d = 3).

    The constant c_mu is the caller's to supply (it is existential in the
    underlying assumption); r = 1 carries an infinite bound and is skipped.
    """
    if d not in (2, 3):
        raise ValueError("concentration gate applies to d = 2, 3")
    for j in range(1, n_radii + 1):
        r = 2.0**-j
        log_term = math.log(1.0 / r)
        bound = c_mu * log_term**-3 if d == 2 else c_mu * r * log_term**-2
        if concentration(mu, r, refine=refine) > bound:
            return False
    return True


def admissibility_bound(r: float, a: float, lam: float, d: int) -> float:
    """A r^2 (lambda r^{d-2} + (1 + log 1/r)^2)."""
    return a * r * r * (lam * r ** (d - 2) + (1.0 + math.log(1.0 / r)) ** 2)


def is_admissible(
    mu: ContinuumMeasure | ScaledMeasure,
    a: float,
    lam: float,
    r0: float,
    d: int | None = None,
    n_radii: int = 14,
    refine: int = 0,
) -> bool:
    """(A, lambda, r0)-admissibility: D(mu, r) <= A r^2 (lambda r^{d-2} +
    (1 + log 1/r)^2) for r on the dyadic grid r0 e^{-lambda} 2^{-j}."""
    if min(a, lam, r0) <= 0 or r0 > 1:
        raise ValueError("need a, lambda > 0 and 0 < r0 <= 1")
    if isinstance(mu, ScaledMeasure):
        if d is None:
            d = mu.d
        mu = ContinuumMeasure.from_atoms(mu)
    if d is None:
        d = mu.d
    if mu.total_mass == 0:
        return True
    top = r0 * math.exp(-lam)
    for j in range(n_radii):
        r = top * 2.0**-j
        if concentration(mu, r, refine=refine) > admissibility_bound(r, a, lam, d):
            return False
    return True


# ---------------------------------------------------------------------
# initial-condition sampler
# ---------------------------------------------------------------------


def cube_index(y: np.ndarray) -> np.ndarray:
    """[y]: the unique z in Z^d with y in Q(z) = prod [z_i - 1/2, z_i + 1/2)."""
    return np.floor(np.asarray(y, dtype=np.float64) + 0.5).astype(np.int64)


def sample_initial(
    mu: ContinuumMeasure, params: ModelParams, rng: np.random.Generator
) -> dict[Site, int]:
    """Draw [N^alpha |mu|] i.i.d. points from mu/|mu|, land each on the
    lattice via [X_i * sqrt(N^alpha sigma2)], and return site counts."""
    if mu.total_mass <= 0:
        raise ValueError("initial measure must have positive mass")
    count = math.floor(params.n_alpha * mu.total_mass)
    if count == 0:
        return {}
    pts = mu.sample(rng, count)
    sites = cube_index(pts * params.space_unit)
    uniq, cts = np.unique(sites, axis=0, return_counts=True)
    return {tuple(map(int, s)): int(c) for s, c in zip(uniq, cts)}


def mu_convolve_qt(
    mu: ContinuumMeasure,
    t: float,
    x: Sequence[float],
    rel_tol: float = 1e-8,
    mc_points: int = 2048,
) -> float:
    """(mu * q_t)(x): exact sum over atoms, or a Monte Carlo average over
    mc_points draws for sampler measures."""
    x = np.asarray(x, dtype=np.float64)
    if mu.total_mass == 0 or t == 0:
        return 0.0
    if mu.atoms is not None:
        return float(
            sum(
                m * integrated_gauss_kernel(t, x - p, rel_tol)
                for p, m in zip(mu.atoms.positions, mu.atoms.masses)
            )
        )
    cloud = mu._discretized()
    vals = [
        integrated_gauss_kernel(t, x - p, rel_tol) for p in cloud.positions[:mc_points]
    ]
    return mu.total_mass * float(np.mean(vals))


# ---------------------------------------------------------------------
# smoothness statistic
# ---------------------------------------------------------------------


def smoothness_statistic(
    samples: np.ndarray,
    params: ModelParams,
    eps: float,
    b: float = 1.0,
    t: float = 1.0,
) -> float:
    """sup over sample points x of

        Q_eps^N(x) = N^{-alpha} sum_i 1{|x - X_i| <= eps} q^N(x - X_i),

    q^N(z) = int_{1/(b N^alpha)}^{t/b} p_s(z) ds.  The sup over all of R^d
    reduces to sample-point centers up to a constant (nearest-sample
    argument), so the statistic is evaluated on the samples themselves,
    self-term included.  Vanishing of lim_{eps->0} limsup_N is the
    smoothness hypothesis behind the occupation-field convergence.
    """
    if eps < 0:
        raise ValueError("eps must be >= 0")
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    n, d = samples.shape
    if eps == 0.0 or n == 0:
        return 0.0
    t_lo = 1.0 / (b * params.n_alpha)
    t_hi = t / b
    tree = cKDTree(samples)
    pairs = tree.query_ball_point(samples, eps)
    best = 0.0
    for i, neighbors in enumerate(pairs):
        if not neighbors:
            continue
        diffs = samples[np.asarray(neighbors)] - samples[i]
        radii = np.sqrt((diffs**2).sum(axis=1))
        q = sum(time_window_kernel(float(r), t_lo, t_hi, d) for r in radii)
        best = max(best, q / params.n_alpha)
    return best


# ---------------------------------------------------------------------
# regeneration time
# ---------------------------------------------------------------------


def _phi(z: float) -> float:
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def regeneration_margin(t: float, d: int) -> float:
    """e^T min_{x in N(0)} min_{y corner of Q(0)} (1_{Q(x)} * p_T)(y) - 2.

    The convolution of a unit-cube indicator with the Gauss kernel
    factorizes into per-coordinate Phi differences; by coordinatewise
    monotonicity the inner min over y in Q(0) is attained at a cube corner,
    and by symmetry x = e_1 with corner y = (-1/2, +1/2, ...) is minimal.
    """
    s = math.sqrt(t)
    # axis coordinate: x_1 = 1, worst corner y_1 = -1/2
    axis = _phi(-1.0 / s) - _phi(-2.0 / s)
    # transverse coordinates: x_k = 0, worst corner |y_k| = 1/2
    transverse = _phi(1.0 / s) - 0.5
    return math.exp(t) * axis * transverse ** (d - 1) - 2.0


def regeneration_time(d: int, tol: float = 1e-4) -> float:
    """Smallest T with e^T (1_{Q(x)} * p_T)(y) >= 2 for every nearest
    neighbor x of the origin and every corner y of Q(0), by bisection."""
    if d not in (2, 3):
        raise ValueError("regeneration time is used for d = 2, 3")
    lo, hi = 1e-3, 1.0
    while regeneration_margin(hi, d) < 0:
        hi *= 2.0
        if hi > 1e6:
            raise RuntimeError("no regeneration time found")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if regeneration_margin(mid, d) >= 0:
            hi = mid
        else:
            lo = mid
    return hi
