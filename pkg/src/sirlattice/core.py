"""Engines for the discrete village SIR process and its branching relatives.

Four count-level engines share one per-generation structure (compute the
neighborhood infection pressure I(y), then draw new infections / offspring):

* chain-binomial: X_{n+1}(y) ~ Bin(S_n(y), 1 - (1-p_N)^{I(y)}), the
  production Reed-Frost path.
* collision-binomial: same marginal law realized pair-by-pair, so it also
  reports the collision counts Gamma_n(y) = sum_v C(attempts_v, 2).  Per
  site the pair coins are one Bin(S*I, p_N) total plus a multivariate
  hypergeometric allocation over the S susceptibles, which is exact and
  O(1 + successes) instead of O(S*I).
* modified SIR: every particle drops Bin(N - K(y) - R_n(y), p_N) offspring
  on each neighboring site y; collisions are multiple-counted and the
  substrate ignores currently infected individuals.
* branching envelope: every particle drops Bin(N, p_N) offspring on each
  neighboring site (total Bin((2d+1)N, p_N) per particle), ignoring K and R.

State is a dense window over the touched bounding box (auto-growing, with a
zero margin so neighborhood sums never wrap); the sparse site map the rest
of the package consumes is a view that skips all-zero sites.  Site order is
the lexicographic order of coordinates everywhere.

Slot-resolved states for the exact-edge percolation construction live in
couplings.py; `step_exact_edges` is re-exported from there.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np

from .params import ModelParams, neighborhood_offsets, transmission_probability

Site = tuple[int, ...]


class RateTooLarge(ValueError):
    """A removed-rate field maps to more than N individuals at some site."""


# ---------------------------------------------------------------------
# windowed lattice state
# ---------------------------------------------------------------------


class EpidemicState:
    """Counts (X, R, K) per lattice site at one generation.

    kind="sir" states obey the capacity invariant X + R + K <= N per site;
    kind="branching" states (modified SIR, envelope) have unbounded X and R.
    """

    __slots__ = ("params", "n", "kind", "lo", "x", "r", "k")

    def __init__(
        self,
        params: ModelParams,
        n: int,
        lo: np.ndarray,
        x: np.ndarray,
        r: np.ndarray,
        k: np.ndarray,
        kind: str = "sir",
    ):
        self.params = params
        self.n = n
        self.kind = kind
        self.lo = lo
        self.x = x
        self.r = r
        self.k = k

    # -- construction ----------------------------------------------------

    @classmethod
    def from_counts(
        cls,
        params: ModelParams,
        infected: Mapping[Site, int],
        removed: Mapping[Site, int] | None = None,
        recovered: Mapping[Site, int] | None = None,
        kind: str = "sir",
    ) -> "EpidemicState":
        removed = removed or {}
        recovered = recovered or {}
        sites = list(infected) + list(removed) + list(recovered)
        if not sites:
            sites = [tuple([0] * params.d)]
        arr = np.array(sites, dtype=np.int64).reshape(len(sites), params.d)
        lo = arr.min(axis=0) - 4
        hi = arr.max(axis=0) + 4
        shape = tuple((hi - lo + 1).tolist())
        x = np.zeros(shape, dtype=np.int64)
        r = np.zeros(shape, dtype=np.int64)
        k = np.zeros(shape, dtype=np.int64)
        state = cls(params, 0, lo, x, r, k, kind)
        for s, c in infected.items():
            x[state._idx(s)] = c
        for s, c in recovered.items():
            r[state._idx(s)] = c
        for s, c in removed.items():
            k[state._idx(s)] = c
        state.validate()
        return state

    def copy(self) -> "EpidemicState":
        return EpidemicState(
            self.params, self.n, self.lo.copy(),
            self.x.copy(), self.r.copy(), self.k.copy(), self.kind,
        )

    def _idx(self, site: Site) -> tuple[int, ...]:
        return tuple(int(c) - int(o) for c, o in zip(site, self.lo))

    # -- sparse views ------------------------------------------------------

    def _nonzero_dict(self, arr: np.ndarray) -> dict[Site, int]:
        out: dict[Site, int] = {}
        for flat in np.flatnonzero(arr):
            idx = np.unravel_index(flat, arr.shape)
            site = tuple(int(i) + int(o) for i, o in zip(idx, self.lo))
            out[site] = int(arr[idx])
        return out

    def infected_dict(self) -> dict[Site, int]:
        return self._nonzero_dict(self.x)

    def recovered_dict(self) -> dict[Site, int]:
        return self._nonzero_dict(self.r)

    def removed_dict(self) -> dict[Site, int]:
        return self._nonzero_dict(self.k)

    def sites(self) -> list[Site]:
        """Touched sites (any of X, R, K nonzero), in canonical order."""
        touched = (self.x != 0) | (self.r != 0) | (self.k != 0)
        return sorted(self._nonzero_dict(touched.astype(np.int64)))

    # -- aggregates --------------------------------------------------------

    @property
    def total_infected(self) -> int:
        return int(self.x.sum())

    @property
    def total_recovered(self) -> int:
        return int(self.r.sum())

    def support_radius(self) -> float:
        """Max Euclidean |site| over infected sites (0 if extinct)."""
        if self.total_infected == 0:
            return 0.0
        idx = np.nonzero(self.x)
        coords = np.stack(idx, axis=-1) + self.lo
        return float(np.sqrt((coords.astype(np.float64) ** 2).sum(axis=1)).max())

    def infected_in_box(self, lo: np.ndarray, hi: np.ndarray) -> int:
        """Total infected on lattice sites s with lo <= s <= hi (componentwise)."""
        a = np.maximum(lo - self.lo, 0)
        b = np.minimum(hi - self.lo, np.array(self.x.shape) - 1)
        if np.any(a > b):
            return 0
        sl = tuple(slice(int(ai), int(bi) + 1) for ai, bi in zip(a, b))
        return int(self.x[sl].sum())

    def validate(self) -> None:
        if np.any(self.x < 0) or np.any(self.r < 0) or np.any(self.k < 0):
            raise ValueError("negative counts")
        if self.kind == "sir":
            tot = self.x + self.r + self.k
            if np.any(tot > self.params.N):
                raise ValueError("X + R + K exceeds village size N")

    # -- window management ---------------------------------------------

    def _ensure_margin(self, margin: int = 1) -> None:
        """Grow the window so every infected site has `margin` zero cells
        to each array edge (neighborhood sums must not touch the edge)."""
        if self.total_infected == 0:
            return
        idx = np.nonzero(self.x)
        mins = np.array([i.min() for i in idx])
        maxs = np.array([i.max() for i in idx])
        shape = np.array(self.x.shape)
        if np.all(mins >= margin) and np.all(maxs <= shape - 1 - margin):
            return
        pad = np.maximum(margin + 8, (0.25 * shape).astype(np.int64))
        before = np.where(mins < margin, pad, 0)
        after = np.where(maxs > shape - 1 - margin, pad, 0)
        widths = tuple((int(b), int(a)) for b, a in zip(before, after))
        self.x = np.pad(self.x, widths)
        self.r = np.pad(self.r, widths)
        self.k = np.pad(self.k, widths)
        self.lo = self.lo - before


def _shifted_sum(x: np.ndarray, offsets: list[Site]) -> np.ndarray:
    """I(y) = sum over |z| <= 1 of x(y - z); window must have a zero margin."""
    out = np.zeros_like(x)
    for off in offsets:
        src = []
        dst = []
        for o in off:
            if o == 0:
                src.append(slice(None))
                dst.append(slice(None))
            elif o > 0:
                src.append(slice(None, -o))
                dst.append(slice(o, None))
            else:
                src.append(slice(-o, None))
                dst.append(slice(None, o))
        out[tuple(dst)] += x[tuple(src)]
    return out


# ---------------------------------------------------------------------
# step records and engines
# ---------------------------------------------------------------------


@dataclass
class StepRecord:
    """What one generation did: new infections, and for the pairwise engine
    the collision counts Gamma_n(x) = sum over susceptibles of C(attempts, 2)."""

    new_infections: dict[Site, int]
    collisions: dict[Site, int] | None = None
    collision_total: int = 0
    discrepancy: dict[Site, int] | None = None


def _binom_pressure_prob(i: np.ndarray, p: float) -> np.ndarray:
    """1 - (1-p)^I, computed stably for small p."""
    return -np.expm1(i * math.log1p(-p))


def _step_arrays(
    state: EpidemicState,
    rng: np.random.Generator,
    engine: str,
    collect_collisions: bool = False,
) -> tuple[np.ndarray, dict[Site, int] | None, int]:
    """Advance state in place by one generation; returns (new_x, collisions,
    collision_total).  R is updated to R + X before X is replaced."""
    params = state.params
    p = transmission_probability(params)
    state._ensure_margin(1)
    offsets = neighborhood_offsets(params.d)
    pressure = _shifted_sum(state.x, offsets)

    N = params.N
    collisions: dict[Site, int] | None = {} if collect_collisions else None
    total_coll = 0
    new_x = np.zeros_like(state.x)

    if engine == "chain_binomial":
        s = N - state.k - state.r - state.x
        active = (pressure > 0) & (s > 0)
        if np.any(active):
            pr = _binom_pressure_prob(pressure[active], p)
            new_x[active] = rng.binomial(s[active], pr)
    elif engine == "collision":
        s = N - state.k - state.r - state.x
        active = (pressure > 0) & (s > 0)
        idx = np.nonzero(active)
        s_act = s[idx]
        i_act = pressure[idx]
        totals = rng.binomial(s_act * i_act, p)
        vals = np.zeros_like(s_act)
        for j in np.flatnonzero(totals):
            a = int(totals[j])
            cap = int(i_act[j])
            bins = rng.multivariate_hypergeometric([cap] * int(s_act[j]), a)
            hit = bins[bins > 0]
            vals[j] = hit.size
            c = int((hit * (hit - 1) // 2).sum())
            if c:
                total_coll += c
                if collect_collisions:
                    site = tuple(
                        int(ix[j]) + int(o) for ix, o in zip(idx, state.lo)
                    )
                    collisions[site] = c
        new_x[idx] = vals
    elif engine == "modified":
        m = np.maximum(N - state.k - state.r, 0)
        active = (pressure > 0) & (m > 0)
        if np.any(active):
            new_x[active] = rng.binomial(pressure[active] * m[active], p)
    elif engine == "envelope":
        active = pressure > 0
        if np.any(active):
            new_x[active] = rng.binomial(pressure[active] * N, p)
    else:
        raise ValueError(f"unknown engine {engine!r}")

    state.r += state.x
    state.x = new_x
    state.n += 1
    return new_x, collisions, total_coll


def _public_step(
    state: EpidemicState, rng: np.random.Generator, engine: str, kind: str
) -> tuple[EpidemicState, StepRecord]:
    nxt = state.copy()
    nxt.kind = kind
    new_x, coll, total = _step_arrays(nxt, rng, engine, collect_collisions=True)
    rec = StepRecord(
        new_infections=nxt._nonzero_dict(new_x),
        collisions=coll,
        collision_total=total,
    )
    return nxt, rec


def step_chain_binomial(
    state: EpidemicState, rng: np.random.Generator
) -> tuple[EpidemicState, StepRecord]:
    """One Reed-Frost generation: susceptibles S = N - K - R - X per site,
    new infections Bin(S, 1 - (1-p_N)^I).  Marginal law of the percolation
    construction; collision counts are not observable on this path."""
    return _public_step(state, rng, "chain_binomial", "sir")


def step_collision_binomial(
    state: EpidemicState, rng: np.random.Generator
) -> tuple[EpidemicState, StepRecord]:
    """One generation of the pairwise (edge-level) law with collision
    accounting, sampled from counts.  Identical in law to step_exact_edges
    under a fresh oracle, and to step_chain_binomial marginally on X."""
    return _public_step(state, rng, "collision", "sir")


def step_modified_sir(
    state: EpidemicState, rng: np.random.Generator
) -> EpidemicState:
    """One generation of the modified SIR process: every infected particle
    produces Bin(N - K(y) - R_n(y), p_N) offspring at each site y of its
    neighborhood.  Offspring multiple-count collisions and may exceed the
    village capacity; R still accumulates recovered offspring, and the
    substrate N - K - R is floored at zero once overconsumed."""
    nxt = state.copy()
    nxt.kind = "branching"
    _step_arrays(nxt, rng, "modified")
    return nxt


def step_branching_envelope(
    state: EpidemicState, rng: np.random.Generator
) -> EpidemicState:
    """One generation of the branching envelope: every particle produces
    Bin(N, p_N) offspring at each of the 2d+1 neighborhood sites, i.e.
    Bin((2d+1)N, p_N) in total, regardless of K and R.  Mean offspring per
    particle is exactly 1 + theta/N^alpha."""
    nxt = state.copy()
    nxt.kind = "branching"
    _step_arrays(nxt, rng, "envelope")
    return nxt


ENGINES = ("chain_binomial", "collision", "modified", "envelope")


# ---------------------------------------------------------------------
# stop rules
# ---------------------------------------------------------------------


@dataclass(frozen=True)
class MassCap:
    """Stop once total infected mass reaches `cap`."""

    cap: int

    name = "mass_cap"

    def triggered(self, state: EpidemicState) -> bool:
        return state.total_infected >= self.cap


@dataclass(frozen=True)
class SupportCap:
    """Stop once an infected site leaves the Euclidean ball of `radius`."""

    radius: float

    name = "support_cap"

    def triggered(self, state: EpidemicState) -> bool:
        return state.support_radius() >= self.radius


@dataclass(frozen=True)
class RecoveredMassFloor:
    """Stop once cumulative recovered mass reaches `floor`.

    Monotone under the shared-oracle comparisons (R_n(x) is), which makes it
    the safe survival proxy for coupled parameter scans."""

    floor: int

    name = "recovered_floor"

    def triggered(self, state: EpidemicState) -> bool:
        return state.total_recovered + state.total_infected >= self.floor


StopRule = MassCap | SupportCap | RecoveredMassFloor


# ---------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------


@dataclass
class TrajectoryRecord:
    """Streaming record of one run.

    mass_path[n] = |X_n|; radius_path[n] = support radius at n; both include
    the initial generation.  extinction_generation is the first n with
    X_n = 0 (None if censored at the horizon / stop rule).  Snapshots hold
    (infected, recovered) sparse dicts at requested generations; full_x
    holds every generation's infected field when record_full is set."""

    params: ModelParams
    mass_path: list[int] = field(default_factory=list)
    radius_path: list[float] = field(default_factory=list)
    collision_path: list[int] = field(default_factory=list)
    box_alive_path: list[bool] = field(default_factory=list)
    extinction_generation: int | None = None
    stop_reason: str = "horizon"
    generations_run: int = 0
    snapshots: dict[int, tuple[dict[Site, int], dict[Site, int]]] = field(
        default_factory=dict
    )
    full_x: list[dict[Site, int]] | None = None
    final_state: EpidemicState | None = None

    @property
    def total_collisions(self) -> int:
        return sum(self.collision_path)

    def last_box_alive_generation(self) -> int | None:
        """Last generation with infected mass inside the tracked box."""
        last = None
        for n, alive in enumerate(self.box_alive_path):
            if alive:
                last = n
        return last


def run_trajectory(
    initial: EpidemicState,
    engine: str,
    horizon: int,
    rng: np.random.Generator,
    stop_rules: Iterable[StopRule] = (),
    snapshot_times: Iterable[int] = (),
    record_full: bool = False,
    track_box: tuple[Site, Site] | None = None,
    stream: Callable[[int, Site, int, int], None] | None = None,
) -> TrajectoryRecord:
    """Iterate `engine` from `initial` until extinction, a stop rule or the
    horizon.  track_box=(lo, hi) records per-generation whether any infected
    mass sits in the lattice box; stream, when given, is called with
    (generation, site, X, R) for every infected site of every generation."""
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    state = initial.copy()
    rec = TrajectoryRecord(params=state.params)
    snapshots = set(int(t) for t in snapshot_times)
    rules = list(stop_rules)
    box = None
    if track_box is not None:
        box = (np.array(track_box[0], dtype=np.int64),
               np.array(track_box[1], dtype=np.int64))

    def observe() -> None:
        rec.mass_path.append(state.total_infected)
        rec.radius_path.append(state.support_radius())
        if box is not None:
            rec.box_alive_path.append(state.infected_in_box(*box) > 0)
        if state.n in snapshots:
            rec.snapshots[state.n] = (state.infected_dict(), state.recovered_dict())
        if record_full:
            rec.full_x.append(state.infected_dict())
        if stream is not None:
            rdict = state.recovered_dict()
            for site, cnt in sorted(state.infected_dict().items()):
                stream(state.n, site, cnt, rdict.get(site, 0))

    if record_full:
        rec.full_x = []
    observe()

    collect_gamma = engine == "collision"
    while True:
        if state.total_infected == 0:
            rec.extinction_generation = state.n
            rec.stop_reason = "extinct"
            break
        triggered = [rule for rule in rules if rule.triggered(state)]
        if triggered:
            rec.stop_reason = triggered[0].name
            break
        if state.n >= horizon:
            rec.stop_reason = "horizon"
            break
        _, _, gamma = _step_arrays(state, rng, engine, collect_collisions=False)
        if collect_gamma:
            rec.collision_path.append(gamma)
        observe()

    rec.generations_run = state.n
    rec.final_state = state
    return rec


# ---------------------------------------------------------------------
# removed fields and site configs
# ---------------------------------------------------------------------


def removed_field_from_rate(
    k_rate: Mapping[Site, float], params: ModelParams
) -> dict[Site, int]:
    """Lattice removed counts from a piecewise-constant rate on unit cubes.

    The rate field takes the value k_rate[z] on the unit cube Q(z) centered
    at z in Z^d.  A lattice site x carries

        K^N(x) = [N^{alpha(2 - d/2)} * k_rate(x / [sqrt(N^alpha sigma2)])]

    ([.] = integer part), i.e. every site whose rescaled position falls in
    Q(z) gets the same count.  Raises RateTooLarge if any count exceeds N.
    """
    stride = params.lattice_stride
    unit = params.sugitani_mass_unit
    out: dict[Site, int] = {}
    for z, rate in k_rate.items():
        if rate < 0:
            raise ValueError("removed rate must be nonnegative")
        count = math.floor(unit * rate)
        if count > params.N:
            raise RateTooLarge(
                f"K^N = {count} > N = {params.N} on cube {z} (rate {rate})"
            )
        if count == 0:
            continue
        # preimage of Q(z) under x -> x/stride: per coordinate,
        # stride*z - stride/2 <= x < stride*z + stride/2
        ranges = []
        for zc in z:
            lo = math.ceil(stride * zc - stride / 2)
            hi = math.ceil(stride * zc + stride / 2)  # exclusive
            ranges.append(range(lo, hi))
        sites = [()]
        for rg in ranges:
            sites = [s + (i,) for s in sites for i in rg]
        for s in sites:
            out[s] = count
    return out


def read_site_config(text: str, d: int) -> tuple[dict[Site, int], dict[Site, int], dict[Site, int]]:
    """Parse initial conditions from "site: counts" lines.

    Each non-comment line is "c1 ... cd: X [R [K]]".  Returns the three
    sparse maps (infected, recovered, removed).
    """
    infected: dict[Site, int] = {}
    recovered: dict[Site, int] = {}
    removed: dict[Site, int] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if ":" not in line:
            raise ValueError(f"line {lineno}: expected 'site: counts'")
        left, right = line.split(":", 1)
        site = tuple(int(tok) for tok in left.split())
        if len(site) != d:
            raise ValueError(f"line {lineno}: site has {len(site)} coords, expected {d}")
        counts = [int(tok) for tok in right.split()]
        if not 1 <= len(counts) <= 3:
            raise ValueError(f"line {lineno}: expected 1-3 counts")
        if counts[0]:
            infected[site] = counts[0]
        if len(counts) > 1 and counts[1]:
            recovered[site] = counts[1]
        if len(counts) > 2 and counts[2]:
            removed[site] = counts[2]
    return infected, recovered, removed
