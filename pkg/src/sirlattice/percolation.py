"""Survival machinery: the ordered grid, k-dependent oriented site
percolation, block-threshold formulas, good events, and the map from the
lattice epidemic to a percolation cluster.

The grid Gamma is Z^2_+ (d = 2) or Z^2_+ x {0} (d = 3), totally ordered by
(|x|_1, x_1); a site's two immediate offspring are x + e1 and x + e2.  A
site becomes occupied when one T-block of the epidemic, launched from
reserved mass of rescaled size f_d(theta) in the unit cube Q(x), satisfies
four good events: confinement of its occupation increment in the window
Q_Mtilde(x) (F1), occupation increment everywhere at most chi (F2), final
mass at least f_d(theta) in both offspring cubes (F3), and admissibility of
the final mass distribution (F4).  Growing suppression K*_i = beta chi *
sum of visited windows caps what earlier blocks consumed; each point is
covered by at most Mtilde^2 windows, so K*_i <= beta kappa everywhere
(asserted at runtime).

The epidemic side runs at village size N on slot-resolved state with the
shared-graph edge coins, so the whole block run is pathwise dominated by
the pristine (unsuppressed, undelayed) epidemic from the same initial
particles; with verify_domination the inclusion of ever-infected sets is
asserted every generation.  Consumed substrate never resurrects between
blocks (slightly more suppression than the idealized per-block problem,
conservative for survival).

The theory's constants (T, M, A', A'', eps0, beta, admissibility A, r0) are
non-constructive; BlockConfig exposes them all, with defaults from pilot
runs -- the artifact demonstrates the mechanism, not the constants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import ndimage

from .core import Site
from .couplings import BLACK, INF, REC, SlotState, step_exact_edges
from .oracle import CouplingOracle
from .params import ModelParams, transmission_probability
from .rescale import ContinuumMeasure, feller_watanabe, is_admissible, sample_initial


class ThetaTooSmall(ValueError):
    """f_d(theta) < 1: the block mass scale is not defined."""


# ---------------------------------------------------------------------
# ordered grid
# ---------------------------------------------------------------------

GridSite = tuple[int, int]


def order_key(x: GridSite) -> tuple[int, int]:
    """Sort key of the total order: by l1 norm, then by first coordinate."""
    return (x[0] + x[1], x[0])


def order_cmp(x: GridSite, y: GridSite) -> int:
    """-1, 0, +1 as x precedes, equals or follows y in the total order."""
    if x == y:
        return 0
    return -1 if order_key(x) < order_key(y) else 1


def offspring(x: GridSite) -> tuple[GridSite, GridSite]:
    """Immediate offspring {(x1, x2+1), (x1+1, x2)}."""
    return ((x[0], x[1] + 1), (x[0] + 1, x[1]))


def predecessors(x: GridSite) -> list[GridSite]:
    """Immediate predecessors within the nonnegative quadrant."""
    out = []
    if x[1] > 0:
        out.append((x[0], x[1] - 1))
    if x[0] > 0:
        out.append((x[0] - 1, x[1]))
    return out


def enumerate_grid(depth: int) -> list[GridSite]:
    """All grid sites with l1 norm <= depth, in the total order."""
    sites = [
        (i, n - i) for n in range(depth + 1) for i in range(n + 1)
    ]
    return sorted(sites, key=order_key)


# ---------------------------------------------------------------------
# threshold formulas
# ---------------------------------------------------------------------


def f_d(theta: float, d: int) -> float:
    """Block mass scale: sqrt(theta) in d=2, log(theta) in d=3."""
    if d == 2:
        return math.sqrt(theta)
    if d == 3:
        return math.log(theta)
    raise ValueError("block machinery applies to d = 2, 3")


def kappa_d(lam: float, d: int, a_prime: float) -> float:
    """Occupation-maximum scale A' lam^2 (d=2) or A' lam^2 e^lam (d=3)."""
    if d == 2:
        return a_prime * lam * lam
    if d == 3:
        return a_prime * lam * lam * math.exp(lam)
    raise ValueError("block machinery applies to d = 2, 3")


@dataclass(frozen=True)
class BlockConfig:
    """Constants of the block construction.

    T is the block duration in rescaled time (the theory pins it by the
    regeneration condition for the drift-1 process; at desk scale, with the
    raw drift theta, useful values are O(1/theta)-ish and tuned by pilot).
    beta multiplies the suppression windows; the scaled theory uses
    beta(theta) = theta^{(d-6)/2}, the discrete pre-limit realization has
    beta = 1, and the default here is a pilot-tuned demonstration value.
    admis_a / admis_r0 parametrize the F4 admissibility gate, whose dyadic
    radius grid is floored at the lattice resolution (admissibility is an
    asymptotic notion; empirical atom measures fail it below that scale).
    eps0 is reported against empirical good-event frequencies rather than
    asserted against a known dependent-percolation critical density.
    """

    T: float
    M: float = 1.0
    a_prime: float = 1.0
    a_dblprime: float = 1.0
    eps0: float = 0.1
    beta: float = 1.0
    admis_a: float = 40.0
    admis_r0: float = 1.0


@dataclass(frozen=True)
class BlockThresholds:
    f_d: float
    kappa_d_of_f: float
    m_tilde: int
    chi: float
    kappa: float


def threshold_values(theta: float, d: int, config: BlockConfig) -> BlockThresholds:
    """(f_d, kappa_d(f_d), Mtilde, chi, kappa) with
    Mtilde = [M sqrt(log f_d)] + 1, chi = A'' f_d kappa_d(f_d),
    kappa = Mtilde^2 chi."""
    f = f_d(theta, d)
    if f < 1.0:
        raise ThetaTooSmall(f"f_d(theta) = {f} < 1 (theta = {theta})")
    kd = kappa_d(f, d, config.a_prime)
    m_tilde = math.floor(config.M * math.sqrt(math.log(f))) + 1
    chi = config.a_dblprime * f * kd
    kappa = m_tilde * m_tilde * chi
    return BlockThresholds(f, kd, m_tilde, chi, kappa)


def scaled_inhibition(theta: float, d: int) -> float:
    """beta(theta) = theta^{(d-6)/2}: the inhibition of the drift-1 rescaled
    problem (the theory's choice for the block suppression strength)."""
    return theta ** ((d - 6) / 2.0)


# ---------------------------------------------------------------------
# k-dependent oriented site percolation
# ---------------------------------------------------------------------


@dataclass
class PercolationOutcome:
    occupied: np.ndarray  # occupied[i, j] for grid site (i, j), i + j <= depth
    reachable: np.ndarray
    depth_reached: int
    percolated: bool

    def cluster(self) -> list[GridSite]:
        idx = np.argwhere(self.reachable)
        return sorted((int(i), int(j)) for i, j in idx)


def simulate_k_dependent(
    density: float | Callable[[GridSite], float],
    k: int,
    depth: int,
    rng: np.random.Generator,
) -> PercolationOutcome:
    """Oriented site percolation on the ordered grid with a k-dependent
    occupation field: site statuses are independent whenever l1 separation
    is >= k, realized by thresholding the max of i.i.d. uniforms over
    l1-balls of radius [(k-1)/2] (marginals exactly `density`).

    Exploration follows the total order: a site is reachable when occupied
    and either the origin or preceded by a reachable immediate predecessor;
    `percolated` means the cluster touches l1 level `depth`.
    """
    if k < 0 or depth < 0:
        raise ValueError("k and depth must be >= 0")
    r = max(0, (k - 1) // 2)
    size = depth + 1
    dens = np.empty((size, size))
    if callable(density):
        for i in range(size):
            for j in range(size):
                dens[i, j] = density((i, j))
    else:
        dens[:, :] = float(density)
    if np.any((dens < 0) | (dens > 1)):
        raise ValueError("density values must lie in [0, 1]")

    if r == 0:
        occupied = rng.uniform(size=(size, size)) < dens
    else:
        u = rng.uniform(size=(size + 2 * r, size + 2 * r))
        footprint = np.zeros((2 * r + 1, 2 * r + 1), dtype=bool)
        for a in range(2 * r + 1):
            for b in range(2 * r + 1):
                footprint[a, b] = abs(a - r) + abs(b - r) <= r
        window_max = ndimage.maximum_filter(u, footprint=footprint, mode="constant", cval=1.0)
        core = window_max[r : r + size, r : r + size]
        occupied = core <= dens ** (1.0 / footprint.sum())

    reachable = np.zeros_like(occupied)
    reachable[0, 0] = occupied[0, 0]
    for n in range(1, depth + 1):
        for i in range(n + 1):
            j = n - i
            if not occupied[i, j]:
                continue
            if (i > 0 and reachable[i - 1, j]) or (j > 0 and reachable[i, j - 1]):
                reachable[i, j] = True
    levels = np.add.outer(np.arange(size), np.arange(size))
    hit = reachable & (levels <= depth)
    depth_reached = int(levels[hit].max()) if hit.any() else (0 if reachable[0, 0] else -1)
    return PercolationOutcome(
        occupied=occupied,
        reachable=reachable,
        depth_reached=depth_reached,
        percolated=bool(depth_reached == depth),
    )


# ---------------------------------------------------------------------
# good events on block outcomes
# ---------------------------------------------------------------------


@dataclass
class BlockRun:
    """One T-block of the epidemic, in the data the good events consume."""

    params: ModelParams
    center: GridSite
    initial_mass: float  # rescaled (|X_0| in atom units)
    occupation_increment: dict[Site, int]  # recovered-count increase
    final_infected: dict[Site, int]
    ran_full_horizon: bool
    generations: int


def _cube_box(center: Sequence[float], side: float, params: ModelParams) -> tuple[np.ndarray, np.ndarray]:
    """Lattice sites z with z/stride in Q_side(center), as (lo, hi) bounds."""
    stride = params.lattice_stride
    lo = np.array(
        [math.ceil(stride * (c - side / 2.0)) for c in center], dtype=np.int64
    )
    hi = np.array(
        [math.ceil(stride * (c + side / 2.0)) - 1 for c in center], dtype=np.int64
    )
    return lo, hi


def _grid_center(x: GridSite, d: int) -> tuple[float, ...]:
    return (float(x[0]), float(x[1])) if d == 2 else (float(x[0]), float(x[1]), 0.0)


def _counts_in_box(counts: Mapping[Site, int], lo: np.ndarray, hi: np.ndarray) -> int:
    total = 0
    for site, c in counts.items():
        s = np.asarray(site)
        if np.all(s >= lo) and np.all(s <= hi):
            total += c
    return total


def good_events(
    run: BlockRun, x: GridSite, config: BlockConfig
) -> tuple[bool, bool, bool, bool]:
    """(F1, F2, F3, F4) for one block.

    F1: the block's occupation increment is supported in Q_Mtilde(x) (and
        the block ran its full horizon, i.e. was not stopped by escape).
    F2: max occupation increment, in field units, is at most chi.
    F3: final mass in each offspring cube Q(y), y in A(x), is at least the
        initial mass (in atom units).
    F4: the final mass distribution is (A, |X_0|, r0)-admissible, on the
        dyadic radius grid floored at the lattice resolution.
    """
    params = run.params
    th = threshold_values(params.theta, params.d, config)
    center = _grid_center(x, params.d)
    unit = params.sugitani_mass_unit

    lo, hi = _cube_box(center, float(th.m_tilde), params)
    f1 = run.ran_full_horizon and all(
        np.all(np.asarray(site) >= lo) and np.all(np.asarray(site) <= hi)
        for site in run.occupation_increment
    )
    max_occ = max(run.occupation_increment.values(), default=0) / unit
    f2 = max_occ <= th.chi
    f3 = True
    for y in offspring(x):
        blo, bhi = _cube_box(_grid_center(y, params.d), 1.0, params)
        mass = _counts_in_box(run.final_infected, blo, bhi) / params.n_alpha
        if mass < run.initial_mass:
            f3 = False
    measure = feller_watanabe(run.final_infected, params)
    lam = max(run.initial_mass, 1.0)
    n_radii = _resolution_radii(config.admis_r0, lam, params)
    f4 = (
        is_admissible(measure, config.admis_a, lam, config.admis_r0, d=params.d,
                      n_radii=n_radii)
        if n_radii > 0
        else True
    )
    return f1, f2, f3, f4


def _resolution_radii(r0: float, lam: float, params: ModelParams) -> int:
    """Dyadic radii r0 e^{-lam} 2^{-j} kept above half a lattice cell."""
    top = r0 * math.exp(-lam)
    floor_r = 0.5 / params.lattice_stride
    if top < floor_r:
        return 0
    return int(math.floor(math.log2(top / floor_r))) + 1


# ---------------------------------------------------------------------
# the block algorithm
# ---------------------------------------------------------------------


@dataclass
class BlockOutcome:
    site: GridSite
    ran: bool
    good: bool
    events: tuple[bool, bool, bool, bool] | None
    vacancy_reason: str = ""


@dataclass
class BlockPercolationResult:
    occupied: list[GridSite]
    outcomes: list[BlockOutcome]
    depth_reached: int
    total_generations: int
    kstar_assertion_ok: bool
    domination_ok: bool | None
    consumed_final: dict[Site, int]

    @property
    def good_event_frequency(self) -> float:
        ran = [o for o in self.outcomes if o.ran]
        if not ran:
            return 0.0
        return sum(o.good for o in ran) / len(ran)


def epidemic_to_percolation(
    params: ModelParams,
    config: BlockConfig,
    depth: int,
    oracle: CouplingOracle,
    mu: ContinuumMeasure | None = None,
    verify_domination: bool = False,
) -> BlockPercolationResult:
    """Run the block algorithm on the discrete epidemic and report the
    occupied cluster.

    Sites of the ordered grid are visited in order; at the origin and at
    every immediate offspring of an occupied site holding a full reserve,
    one T-block runs from exactly [N^alpha f_d(theta)] reserved individuals
    in the site's cube, against the accumulated suppression K*_i (beta chi
    per visited window, realized as blackened substrate via the occupation
    rescaling).  The block is stopped early when its occupation increment
    reaches chi or escapes the window; occupation marks the site, and
    reserves of mass f_d(theta) are frozen in each unclaimed offspring cube.

    With verify_domination, a pristine epidemic (same initial individuals,
    no suppression, no freezing) is stepped on the same edge coins and the
    inclusion of ever-infected slot sets (block within pristine) is
    asserted every generation -- the discrete form of the occupation
    domination that justifies reading the cluster on the true epidemic.
    Feasible only at small (theta, depth): the pristine run grows like
    e^{theta T depth}.
    """
    if depth < 0:
        raise ValueError("depth must be >= 0")
    th = threshold_values(params.theta, params.d, config)
    p = transmission_probability(params)
    unit = params.sugitani_mass_unit
    stride = params.lattice_stride
    m_target = math.floor(params.n_alpha * th.f_d)
    if m_target < 1:
        raise ThetaTooSmall("reserve below one individual; raise N or theta")
    chi_counts = math.floor(th.chi * unit)
    block_horizon = params.generations(config.T)
    if block_horizon < 1:
        raise ValueError("block horizon under one generation; raise T or N")

    rng = np.random.default_rng(oracle.seed ^ 0x9E3779B9)
    if mu is None:
        half = 0.5
        lo = [-half] * params.d
        hi = [half] * params.d
        mu = ContinuumMeasure.uniform_box(lo, hi, th.f_d)
    if abs(mu.total_mass - th.f_d) > 1e-9:
        raise ValueError("initial measure must have mass f_d(theta)")
    initial_counts = sample_initial(mu, params, rng)

    world = SlotState.from_counts(params, initial_counts)
    pristine = world.copy() if verify_domination else None
    domination_ok: bool | None = True if verify_domination else None

    # w-measure: reserved individuals per offspring cube
    reserves: dict[GridSite, list[tuple[Site, list[int]]]] = {}
    coverage: dict[Site, int] = {}
    occupied: list[GridSite] = []
    outcomes: list[BlockOutcome] = []
    kstar_ok = True
    total_gens = 0
    max_coverage_allowed = th.m_tilde * th.m_tilde

    def raise_suppression(center_site: GridSite) -> None:
        nonlocal kstar_ok
        lo, hi = _cube_box(_grid_center(center_site, params.d), float(th.m_tilde), params)
        ranges = [range(int(a), int(b) + 1) for a, b in zip(lo, hi)]
        sites = [()]
        for rg in ranges:
            sites = [s + (i,) for s in sites for i in rg]
        for z in sites:
            coverage[z] = coverage.get(z, 0) + 1
            if coverage[z] > max_coverage_allowed:
                kstar_ok = False  # K* would exceed beta kappa: impossible
            target = math.floor(unit * config.beta * th.chi * coverage[z])
            world.blacken_to(z, min(target, params.N))

    def step_world(generations_left: int, window) -> tuple[dict[Site, int], bool, int]:
        """Advance the world up to generations_left, stopping at occupation
        threshold or window escape; returns (occupation increment, ran_full,
        gens).  Mid-block extinction idles out the horizon (the stopping
        rule caps at T), so it still counts as a full run."""
        nonlocal world, pristine, total_gens, domination_ok
        start_rec = world.recovered_dict()
        gens = 0
        stopped_early = False
        while gens < generations_left and world.total_infected > 0:
            world, _ = step_exact_edges(world, oracle, prob=p)
            if pristine is not None:
                nxt, _ = step_exact_edges(pristine, oracle, prob=p)
                pristine = nxt
            gens += 1
            total_gens += 1
            if pristine is not None:
                block_masks = world.ever_infected_masks()
                pristine_masks = pristine.ever_infected_masks()
                for s, mask in block_masks.items():
                    have = pristine_masks.get(s)
                    if have is None or np.any(mask & ~have):
                        domination_ok = False
            inc = _increment(world.recovered_dict(), start_rec)
            lo, hi = window
            escaped = any(
                not (np.all(np.asarray(s) >= lo) and np.all(np.asarray(s) <= hi))
                for s in inc
            )
            if escaped or max(inc.values(), default=0) >= chi_counts:
                stopped_early = True
                break
        inc = _increment(world.recovered_dict(), start_rec)
        return inc, not stopped_early, gens

    for site in enumerate_grid(depth):
        is_origin = site == (0, 0)
        reserve = reserves.pop(site, None)
        if not is_origin and reserve is None:
            outcomes.append(BlockOutcome(site, ran=False, good=False, events=None,
                                         vacancy_reason="no reserve"))
            continue

        raise_suppression(site)
        if is_origin:
            start_mass = sum(initial_counts.values())
        else:
            for cube_site, slots in reserve:
                world.activate(cube_site, slots)
            start_mass = sum(len(slots) for _, slots in reserve)

        window = _cube_box(_grid_center(site, params.d), float(th.m_tilde), params)
        inc, ran_full, gens = step_world(block_horizon, window)
        run = BlockRun(
            params=params,
            center=site,
            initial_mass=start_mass / params.n_alpha,
            occupation_increment=inc,
            final_infected=world.infected_dict(),
            ran_full_horizon=ran_full,
            generations=gens,
        )
        events = good_events(run, site, config)
        good = all(events)
        outcomes.append(BlockOutcome(site, ran=True, good=good, events=events))
        if good:
            occupied.append(site)
            for y in offspring(site):
                if y in reserves:
                    continue  # already claimed by an earlier occupied site
                blo, bhi = _cube_box(_grid_center(y, params.d), 1.0, params)
                picked = _pick_infected(world, blo, bhi, m_target)
                if picked is not None:
                    reserves[y] = picked
        world.retire_infected()

    levels = [x[0] + x[1] for x in occupied]
    depth_reached = max(levels) if occupied else -1
    return BlockPercolationResult(
        occupied=occupied,
        outcomes=outcomes,
        depth_reached=depth_reached,
        total_generations=total_gens,
        kstar_assertion_ok=kstar_ok,
        domination_ok=domination_ok,
        consumed_final=world.recovered_dict(),
    )


def _increment(now: Mapping[Site, int], base: Mapping[Site, int]) -> dict[Site, int]:
    out = {}
    for s, v in now.items():
        delta = v - base.get(s, 0)
        if delta:
            out[s] = delta
    return out


def _pick_infected(
    world: SlotState, lo: np.ndarray, hi: np.ndarray, count: int
) -> list[tuple[Site, list[int]]] | None:
    """Freeze exactly `count` infected individuals inside the lattice box,
    in canonical site order; None when the cube holds fewer (the offspring
    site will be vacant, its F3 having effectively failed)."""
    infected = world.infected_dict()
    available: list[tuple[Site, int]] = []
    total = 0
    for site in sorted(infected):
        s = np.asarray(site)
        if np.all(s >= lo) and np.all(s <= hi):
            available.append((site, infected[site]))
            total += infected[site]
    if total < count:
        return None
    picked: list[tuple[Site, list[int]]] = []
    remaining = count
    for site, c in available:
        take = min(c, remaining)
        slots = world.freeze_infected(site, take)
        picked.append((site, slots))
        remaining -= take
        if remaining == 0:
            break
    return picked
