"""Shared-randomness couplings of lattice epidemics, as runtime-checked
certificates.

The slot-level engine realizes the percolation-graph construction: the
village at x holds individuals (x, 0..N-1); every unordered pair of
individuals in the same or neighboring villages owns one uniform coin
(generation-free, see oracle.py), and an infection attempt succeeds when
the pair coin is below p_N.  Slot conventions make "the same individual"
well defined across coupled runs: initially infected individuals occupy
the lowest slot indices, initially removed ones the highest.

Certificates implemented (each asserted at every generation and site):

* transmission monotonicity: theta <= theta* on one graph nests the edge
  sets, so R_n(x) <= R*_n(x).
* suppression monotonicity: K <= K* sitewise removes more vertices from
  the graph, so R_n(x) >= R*_n(x).
* decomposition: splitting the initial particles into disjoint sets A, B
  gives max(R^A, R^B) <= R <= R^A + R^B (the recovered sets literally
  satisfy R = R^A union R^B here).
* immigration: delaying part of the initial mass to generation
  g* = [N^alpha t*] gives the particle-set inclusions
  R^X_n >= R^{X*}_n and R^X_n <= R^{X*}_{n + g*}.
* sandwich: depleted branching walk <= modified SIR <= branching envelope,
  sitewise, up to the first generation where max_x (K + R_n) reaches
  kappa N^{alpha(2-d/2)} (nested substrate prefixes on shared offspring
  coins).
* domination chain: plain SIR <= modified SIR <= branching envelope under
  one oracle, with the modified leg constructed jointly with the plain one
  (its substrate is depleted by the plain recovered field) as in the
  discrepancy estimate; ghost particles absorb collisions and substrate
  mismatches, making the chain hold surely.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import EpidemicState, StepRecord, Site
from .oracle import CouplingOracle, TAG_OFFSPRING
from .params import (
    ModelParams,
    NegativeProbability,
    neighborhood_offsets,
    transmission_probability,
)

# slot status codes
SUS = 0
INF = 1
REC = 2
BLACK = 3
FROZEN = 4


class OracleExhausted(RuntimeError):
    """Slot indices outside the configured village size were addressed."""


class OverlapError(ValueError):
    """Decomposition parts share particles."""


class KappaTooSmall(ValueError):
    """Sandwich threshold does not exceed the suppression rate."""


# ---------------------------------------------------------------------
# slot-resolved state
# ---------------------------------------------------------------------


class SlotState:
    """Individual-resolved epidemic state: per site an int8 status array of
    length N.  Supports the exact-edge engine and set-valued certificates."""

    def __init__(self, params: ModelParams):
        self.params = params
        self.n = 0
        self.status: dict[Site, np.ndarray] = {}

    @classmethod
    def from_counts(
        cls,
        params: ModelParams,
        infected: Mapping[Site, int],
        removed: Mapping[Site, int] | None = None,
    ) -> "SlotState":
        """Infected fill slots 0..X0-1, removed fill slots N-K..N-1."""
        state = cls(params)
        removed = removed or {}
        for site, count in removed.items():
            if count:
                state._black(tuple(site), count)
        for site, count in infected.items():
            if count:
                arr = state._site(tuple(site))
                if count + int((arr == BLACK).sum()) > params.N:
                    raise ValueError(f"X0 + K exceeds N at {site}")
                arr[:count] = INF
        return state

    def _site(self, site: Site) -> np.ndarray:
        arr = self.status.get(site)
        if arr is None:
            arr = np.zeros(self.params.N, dtype=np.int8)
            self.status[site] = arr
        return arr

    def _black(self, site: Site, count: int) -> None:
        if count > self.params.N:
            raise ValueError("removed count exceeds N")
        arr = self._site(site)
        arr[self.params.N - count :] = BLACK

    def copy(self) -> "SlotState":
        out = SlotState(self.params)
        out.n = self.n
        out.status = {s: a.copy() for s, a in self.status.items()}
        return out

    # views ------------------------------------------------------------

    def infected_dict(self) -> dict[Site, int]:
        return {
            s: int((a == INF).sum()) for s, a in self.status.items() if (a == INF).any()
        }

    def recovered_dict(self) -> dict[Site, int]:
        return {
            s: int((a == REC).sum()) for s, a in self.status.items() if (a == REC).any()
        }

    def recovered_masks(self) -> dict[Site, np.ndarray]:
        return {
            s: (a == REC) for s, a in self.status.items() if (a == REC).any()
        }

    @property
    def total_infected(self) -> int:
        return sum(int((a == INF).sum()) for a in self.status.values())

    @property
    def total_recovered(self) -> int:
        return sum(int((a == REC).sum()) for a in self.status.values())

    def to_count_state(self, kind: str = "sir") -> EpidemicState:
        return EpidemicState.from_counts(
            self.params,
            self.infected_dict(),
            removed={
                s: int((a == BLACK).sum())
                for s, a in self.status.items()
                if (a == BLACK).any()
            },
            recovered=self.recovered_dict(),
            kind=kind,
        )

    # block-construction helpers ----------------------------------------

    def freeze_infected(self, site: Site, count: int) -> list[int]:
        """Park `count` currently-infected individuals at site (lowest slots
        first) outside the epidemic; returns the frozen slot indices."""
        arr = self._site(site)
        slots = np.flatnonzero(arr == INF)[:count]
        if slots.size < count:
            raise ValueError(f"only {slots.size} infected to freeze at {site}")
        arr[slots] = FROZEN
        return [int(s) for s in slots]

    def activate(self, site: Site, slots: Iterable[int]) -> None:
        """Frozen individuals become infected (immigration of reserved mass)."""
        arr = self._site(site)
        idx = np.asarray(list(slots), dtype=np.int64)
        if idx.size and not np.all(arr[idx] == FROZEN):
            raise ValueError(f"activating non-frozen slots at {site}")
        arr[idx] = INF

    def retire_infected(self) -> None:
        """Drop all currently-infected individuals: they recover without a
        further attack generation (mass not carried by the block algorithm)."""
        for arr in self.status.values():
            arr[arr == INF] = REC

    def blacken_to(self, site: Site, count: int) -> None:
        """Raise the removed count at `site` toward `count` by blackening
        susceptible slots from the top; never unblackens, and consumed
        (recovered) slots are left as they are."""
        arr = self._site(site)
        have = int((arr == BLACK).sum())
        need = count - have
        if need <= 0:
            return
        sus = np.flatnonzero(arr == SUS)
        take = sus[-need:] if need < sus.size else sus
        arr[take] = BLACK

    def ever_infected_masks(self) -> dict[Site, np.ndarray]:
        """Slots that have carried the infection: infected, recovered or
        frozen (frozen individuals were infected when reserved)."""
        out = {}
        for s, a in self.status.items():
            mask = (a == INF) | (a == REC) | (a == FROZEN)
            if mask.any():
                out[s] = mask
        return out


def _neighbor_sites(site: Site, offsets: Sequence[Site]) -> list[Site]:
    return [tuple(c + o for c, o in zip(site, off)) for off in offsets]


def step_exact_edges(
    state: SlotState,
    oracle: CouplingOracle,
    prob: float | None = None,
) -> tuple[SlotState, StepRecord]:
    """One generation of the pair-coin percolation construction.

    Every infected individual (x, i) attacks every individual (y, j) with
    |y - x| <= 1 through the shared edge coin; a susceptible with at least
    one successful attempt becomes infected, k >= 2 simultaneous attempts
    contribute C(k, 2) collisions.  `prob` overrides p_N (used by the
    transmission coupling to evaluate several thresholds on one graph).
    FROZEN individuals are neither attackers nor attackable (the block
    construction parks reserved mass outside the epidemic this way).
    """
    params = state.params
    p = transmission_probability(params) if prob is None else prob
    N = params.N
    offsets = neighborhood_offsets(params.d)
    attempts: dict[Site, np.ndarray] = {}
    for site, arr in state.status.items():
        infected = np.flatnonzero(arr == INF)
        if infected.size == 0:
            continue
        for target in _neighbor_sites(site, offsets):
            acc = attempts.get(target)
            if acc is None:
                acc = np.zeros(N, dtype=np.int64)
                attempts[target] = acc
            acc += (oracle.edge_matrix(site, infected, target, N) < p).sum(axis=0)

    nxt = state.copy()
    nxt.n += 1
    new_infections: dict[Site, int] = {}
    collisions: dict[Site, int] = {}
    total_coll = 0
    for target in sorted(attempts):
        acc = attempts[target]
        arr = nxt._site(target)
        sus = arr == SUS
        hits = acc * sus
        new_mask = hits >= 1
        k = int(new_mask.sum())
        c = int((hits * (hits - 1) // 2).sum())
        if c:
            collisions[target] = c
            total_coll += c
        if k:
            new_infections[target] = k
    # recover this generation's infected, then mark the new ones (slots
    # that were susceptible are still susceptible in nxt)
    for site, arr in state.status.items():
        was_inf = arr == INF
        if was_inf.any():
            nxt.status[site][was_inf] = REC
    for target in new_infections:
        acc = attempts[target]
        arr = nxt._site(target)
        arr[(acc >= 1) & (arr == SUS)] = INF
    rec = StepRecord(
        new_infections=new_infections,
        collisions=collisions,
        collision_total=total_coll,
    )
    return nxt, rec


# ---------------------------------------------------------------------
# coupled containers
# ---------------------------------------------------------------------


@dataclass
class CoupledRun:
    """One leg of a coupled family: per-generation sparse count paths."""

    label: str
    infected_path: list[dict[Site, int]] = field(default_factory=list)
    recovered_path: list[dict[Site, int]] = field(default_factory=list)

    def record(self, infected: dict[Site, int], recovered: dict[Site, int]) -> None:
        self.infected_path.append(infected)
        self.recovered_path.append(recovered)

    @property
    def mass_path(self) -> list[int]:
        return [sum(d.values()) for d in self.infected_path]

    def recovered_total(self, n: int) -> int:
        return sum(self.recovered_path[n].values())


@dataclass
class CoupledFamily:
    """Two or three trajectories from one oracle plus their certificate."""

    certificate: str
    runs: list[CoupledRun]
    violations: list[tuple[int, Site, str]] = field(default_factory=list)
    stopping_generation: int | None = None

    @property
    def ok(self) -> bool:
        return not self.violations

    def check_le(self, n: int, lo: Mapping[Site, int], hi: Mapping[Site, int], what: str) -> None:
        for site, v in lo.items():
            if v > hi.get(site, 0):
                self.violations.append((n, site, what))


CoupledPair = CoupledFamily
CoupledTriple = CoupledFamily


# ---------------------------------------------------------------------
# transmission / suppression / decomposition couplings
# ---------------------------------------------------------------------


def couple_theta(
    params: ModelParams,
    theta_lo: float,
    theta_hi: float,
    initial: Mapping[Site, int],
    horizon: int,
    oracle: CouplingOracle,
    removed: Mapping[Site, int] | None = None,
) -> CoupledPair:
    """Both runs read the same pair coins with thresholds p^lo <= p^hi, so
    the lower graph is a subgraph and R_n(x) <= R*_n(x) everywhere."""
    if theta_lo > theta_hi:
        raise ValueError("need theta_lo <= theta_hi")
    p_lo = transmission_probability(ModelParams(params.d, params.N, theta_lo))
    p_hi = transmission_probability(ModelParams(params.d, params.N, theta_hi))
    lo = SlotState.from_counts(params, initial, removed)
    hi = lo.copy()
    fam = CoupledFamily(
        "R_n(x; theta_lo) <= R_n(x; theta_hi)",
        [CoupledRun(f"theta={theta_lo}"), CoupledRun(f"theta={theta_hi}")],
    )
    for n in range(horizon + 1):
        fam.runs[0].record(lo.infected_dict(), lo.recovered_dict())
        fam.runs[1].record(hi.infected_dict(), hi.recovered_dict())
        fam.check_le(n, lo.recovered_dict(), hi.recovered_dict(), "R ordering")
        if n == horizon or (lo.total_infected == 0 and hi.total_infected == 0):
            break
        lo, _ = step_exact_edges(lo, oracle, prob=p_lo)
        hi, _ = step_exact_edges(hi, oracle, prob=p_hi)
    return fam


def couple_suppression(
    params: ModelParams,
    k_lo: Mapping[Site, int],
    k_hi: Mapping[Site, int],
    initial: Mapping[Site, int],
    horizon: int,
    oracle: CouplingOracle,
) -> CoupledPair:
    """K <= K* sitewise on one graph: the starred run has more removed
    vertices, hence R_n(x) >= R*_n(x) everywhere."""
    for site, v in k_lo.items():
        if v > k_hi.get(site, 0):
            raise ValueError("need K <= K* sitewise")
    lo = SlotState.from_counts(params, initial, k_lo)
    hi = SlotState.from_counts(params, initial, k_hi)
    fam = CoupledFamily(
        "R_n(x; K) >= R_n(x; K*)",
        [CoupledRun("K"), CoupledRun("K*")],
    )
    for n in range(horizon + 1):
        fam.runs[0].record(lo.infected_dict(), lo.recovered_dict())
        fam.runs[1].record(hi.infected_dict(), hi.recovered_dict())
        fam.check_le(n, hi.recovered_dict(), lo.recovered_dict(), "R ordering")
        if n == horizon or (lo.total_infected == 0 and hi.total_infected == 0):
            break
        lo, _ = step_exact_edges(lo, oracle)
        hi, _ = step_exact_edges(hi, oracle)
    return fam


def couple_decomposition(
    params: ModelParams,
    initial: Mapping[Site, int],
    part_a: Mapping[Site, int],
    horizon: int,
    oracle: CouplingOracle,
    removed: Mapping[Site, int] | None = None,
) -> CoupledTriple:
    """Split the initial particles into disjoint subsets A (the first
    part_a(x) slots) and B (the rest); run A, B and the union on one graph.
    Certificate: max(R^A, R^B) <= R <= R^A + R^B at every site and time."""
    part_b: dict[Site, int] = {}
    for site, total in initial.items():
        a = part_a.get(site, 0)
        if a > total:
            raise OverlapError(f"part A exceeds the initial particles at {site}")
        if total - a:
            part_b[site] = total - a
    for site in part_a:
        if site not in initial:
            raise OverlapError(f"part A names particles outside the union at {site}")

    full = SlotState.from_counts(params, initial, removed)
    run_a = SlotState.from_counts(params, {s: c for s, c in part_a.items() if c}, removed)
    # part B occupies slots part_a(x)..initial(x)-1 of the union layout
    run_b = SlotState(params)
    for site, count in (removed or {}).items():
        if count:
            run_b._black(tuple(site), count)
    for site, count in part_b.items():
        arr = run_b._site(tuple(site))
        a = part_a.get(site, 0)
        arr[a : a + count] = INF

    fam = CoupledFamily(
        "max(R^A, R^B) <= R <= R^A + R^B",
        [CoupledRun("A"), CoupledRun("B"), CoupledRun("A+B")],
    )
    for n in range(horizon + 1):
        da, db, dd = run_a.recovered_dict(), run_b.recovered_dict(), full.recovered_dict()
        fam.runs[0].record(run_a.infected_dict(), da)
        fam.runs[1].record(run_b.infected_dict(), db)
        fam.runs[2].record(full.infected_dict(), dd)
        fam.check_le(n, da, dd, "R^A <= R")
        fam.check_le(n, db, dd, "R^B <= R")
        summed = dict(da)
        for site, v in db.items():
            summed[site] = summed.get(site, 0) + v
        fam.check_le(n, dd, summed, "R <= R^A + R^B")
        if n == horizon or (
            full.total_infected == 0
            and run_a.total_infected == 0
            and run_b.total_infected == 0
        ):
            break
        run_a, _ = step_exact_edges(run_a, oracle)
        run_b, _ = step_exact_edges(run_b, oracle)
        full, _ = step_exact_edges(full, oracle)
    return fam


# ---------------------------------------------------------------------
# immigration coupling
# ---------------------------------------------------------------------


def couple_immigration(
    params: ModelParams,
    mu0: Mapping[Site, int],
    nu0: Mapping[Site, int],
    t_star: float,
    horizon: int,
    oracle: CouplingOracle,
    removed: Mapping[Site, int] | None = None,
) -> CoupledPair:
    """Run X from mu0 + nu0; run X* from mu0 alone, force-infecting the
    not-yet-recovered nu0 individuals at generation g* = [N^alpha t*].

    Certificate (as particle sets, checked on recovered slot masks):
        R^X_n contains R^{X*}_n, and R^X_n is contained in R^{X*}_{n+g*}.
    Only deterministic t_star is implemented; finitely-valued random
    immigration times reduce to this case conditionally, general stopping
    times are untested.
    """
    if t_star < 0:
        raise ValueError("t_star must be >= 0")
    g_star = math.floor(params.n_alpha * t_star)
    combined: dict[Site, int] = dict(mu0)
    nu_slots: dict[Site, tuple[int, int]] = {}
    for site, count in nu0.items():
        if count:
            a = combined.get(site, 0)
            combined[site] = a + count
            nu_slots[site] = (mu0.get(site, 0), mu0.get(site, 0) + count)

    full = SlotState.from_counts(params, combined, removed)
    delayed = SlotState.from_counts(params, {s: c for s, c in mu0.items() if c}, removed)

    # histories of recovered masks; delayed runs horizon + g_star generations
    full_hist: list[dict[Site, np.ndarray]] = []
    delayed_hist: list[dict[Site, np.ndarray]] = []

    fam = CoupledFamily(
        "R^X_n >= R^X*_n and R^X_n <= R^X*_{n+g*} (as particle sets)",
        [CoupledRun("X"), CoupledRun("X*")],
    )

    state = delayed
    for n in range(horizon + g_star + 1):
        if n == g_star:
            for site, (a, b) in nu_slots.items():
                arr = state._site(site)
                seg = arr[a:b]
                seg[seg == SUS] = INF
        delayed_hist.append(state.recovered_masks())
        fam.runs[1].record(state.infected_dict(), state.recovered_dict())
        if n == horizon + g_star:
            break
        state, _ = step_exact_edges(state, oracle)
    state = full
    for n in range(horizon + 1):
        full_hist.append(state.recovered_masks())
        fam.runs[0].record(state.infected_dict(), state.recovered_dict())
        if n == horizon:
            break
        state, _ = step_exact_edges(state, oracle)

    for n in range(horizon + 1):
        rx = full_hist[n]
        r_star = delayed_hist[n]
        r_star_late = delayed_hist[n + g_star]
        for site, mask in r_star.items():
            have = rx.get(site)
            if have is None or np.any(mask & ~have):
                fam.violations.append((n, site, "R^X* not within R^X"))
        for site, mask in rx.items():
            have = r_star_late.get(site)
            if have is None or np.any(mask & ~have):
                fam.violations.append((n, site, "R^X not within delayed R^X*"))
    return fam


# ---------------------------------------------------------------------
# sandwich coupling (count-level, offspring coins)
# ---------------------------------------------------------------------


def _offspring_coins(
    oracle: CouplingOracle,
    generation: int,
    site: Site,
    particles: int,
    n_targets: int,
    slots: int,
) -> np.ndarray:
    """(particles, n_targets, slots) coin block; particle k's coins are
    addressed (tag, generation, *site, k, flat-slot), so a process with
    fewer particles or smaller substrate prefixes reads a sub-block."""
    u = oracle.uniform_grid(
        (TAG_OFFSPRING, generation, *site), particles, (), n_targets * slots
    )
    return u.reshape(particles, n_targets, slots)


def _branch_step(
    counts: Mapping[Site, int],
    substrate_of: "callable",
    prob: float,
    generation: int,
    oracle: CouplingOracle,
    offsets: Sequence[Site],
    N: int,
) -> dict[Site, int]:
    """Offspring counts for one count-level leg: particle k at x hits
    #{j < substrate(y)} of its coin row toward each neighbor y."""
    out: dict[Site, int] = {}
    for site in sorted(counts):
        cnt = counts[site]
        if cnt <= 0:
            continue
        targets = _neighbor_sites(site, offsets)
        coins = _offspring_coins(oracle, generation, site, cnt, len(targets), N)
        for t_idx, target in enumerate(targets):
            m = substrate_of(target)
            if m > 0:
                hits = int(np.count_nonzero(coins[:, t_idx, :m] < prob))
                if hits:
                    out[target] = out.get(target, 0) + hits
    return out


def couple_sandwich(
    params: ModelParams,
    kappa: float,
    initial: Mapping[Site, int],
    horizon: int,
    oracle: CouplingOracle,
    removed: Mapping[Site, int] | None = None,
) -> CoupledTriple:
    """Depleted branching walk <= modified SIR <= branching envelope on one
    oracle, certified sitewise up to the stopping generation tau^N = first n
    with max_x (K(x) + R_n(x)) >= kappa N^{alpha(2-d/2)} (R of the middle).

    Substrates per attack on y: [N - kappa N^{alpha(2-d/2)}] (under),
    N - K(y) - R_n(y) (middle, its own recovered field), N (over); shared
    coin prefixes make the offspring counts nested while n <= tau^N.
    """
    removed = dict(removed or {})
    threshold = kappa * params.sugitani_mass_unit
    if removed and max(removed.values()) >= threshold:
        raise KappaTooSmall(
            f"kappa N^(alpha(2-d/2)) = {threshold} does not exceed max K"
        )
    under_sub = math.floor(params.N - threshold)
    p = transmission_probability(params)
    offsets = neighborhood_offsets(params.d)
    N = params.N

    under = dict(initial)
    middle = dict(initial)
    over = dict(initial)
    mid_recovered: dict[Site, int] = {}
    under_recovered: dict[Site, int] = {}
    over_recovered: dict[Site, int] = {}

    fam = CoupledFamily(
        "under <= middle <= over sitewise for n <= tau^N",
        [CoupledRun("depleted_brw"), CoupledRun("modified_sir"), CoupledRun("envelope")],
    )

    def mid_substrate(site: Site) -> int:
        return max(N - removed.get(site, 0) - mid_recovered.get(site, 0), 0)

    for n in range(horizon + 1):
        fam.runs[0].record(dict(under), dict(under_recovered))
        fam.runs[1].record(dict(middle), dict(mid_recovered))
        fam.runs[2].record(dict(over), dict(over_recovered))
        fam.check_le(n, under, middle, "under <= middle")
        fam.check_le(n, middle, over, "middle <= over")
        peak = 0
        for site, r in mid_recovered.items():
            peak = max(peak, removed.get(site, 0) + r)
        for site, k in removed.items():
            peak = max(peak, k + mid_recovered.get(site, 0))
        if peak >= threshold:
            fam.stopping_generation = n
            break
        if n == horizon or not over:
            break
        new_under = _branch_step(
            under, lambda t: max(under_sub, 0), p, n, oracle, offsets, N
        )
        new_middle = _branch_step(middle, mid_substrate, p, n, oracle, offsets, N)
        new_over = _branch_step(over, lambda t: N, p, n, oracle, offsets, N)
        for counts, rec in (
            (under, under_recovered),
            (middle, mid_recovered),
            (over, over_recovered),
        ):
            for site, c in counts.items():
                rec[site] = rec.get(site, 0) + c
        under, middle, over = new_under, new_middle, new_over
    return fam


# ---------------------------------------------------------------------
# domination chain: plain <= modified <= envelope, jointly constructed
# ---------------------------------------------------------------------


def couple_domination_chain(
    params: ModelParams,
    initial: Mapping[Site, int],
    horizon: int,
    oracle: CouplingOracle,
    removed: Mapping[Site, int] | None = None,
) -> CoupledTriple:
    """Plain SIR (slot level) <= modified SIR <= branching envelope on one
    oracle, every generation and site.

    The modified and envelope legs are built on top of the plain one: plain
    attackers contribute their edge-coin hits into nested slot sets
    (susceptibles, then all non-removed non-recovered substrate, then all N
    slots), and ghost particles (offspring that the smaller process did not
    get) branch on with offspring coins.  The modified substrate is depleted
    by the plain run's recovered field, which is the jointly-constructed
    process of the discrepancy estimate; it makes the chain hold surely.
    """
    p = transmission_probability(params)
    N = params.N
    offsets = neighborhood_offsets(params.d)
    plain = SlotState.from_counts(params, initial, removed)
    ghosts_mod: dict[Site, int] = {}
    ghosts_env: dict[Site, int] = {}
    mod_recovered: dict[Site, int] = {}
    env_recovered: dict[Site, int] = {}

    fam = CoupledFamily(
        "plain <= modified <= envelope sitewise",
        [CoupledRun("plain_sir"), CoupledRun("modified_sir"), CoupledRun("envelope")],
    )

    for n in range(horizon + 1):
        plain_inf = plain.infected_dict()
        mod_inf = dict(plain_inf)
        for s, g in ghosts_mod.items():
            if g:
                mod_inf[s] = mod_inf.get(s, 0) + g
        env_inf = dict(plain_inf)
        for s, g in ghosts_env.items():
            if g:
                env_inf[s] = env_inf.get(s, 0) + g
        fam.runs[0].record(plain_inf, plain.recovered_dict())
        fam.runs[1].record(mod_inf, dict(mod_recovered))
        fam.runs[2].record(env_inf, dict(env_recovered))
        fam.check_le(n, plain_inf, mod_inf, "plain <= modified")
        fam.check_le(n, mod_inf, env_inf, "modified <= envelope")
        if n == horizon or not env_inf:
            break

        # plain attackers: edge coins, counted into three nested slot sets
        mod_from_plain: dict[Site, int] = {}
        env_from_plain: dict[Site, int] = {}
        for site, arr in plain.status.items():
            infected = np.flatnonzero(arr == INF)
            if infected.size == 0:
                continue
            for target in _neighbor_sites(site, offsets):
                tgt_status = plain.status.get(target)
                mask = oracle.edge_matrix(site, infected, target, N) < p
                hits_all = int(mask.sum())
                if tgt_status is None:
                    hits_sub = hits_all
                else:
                    hits_sub = int(
                        mask[:, (tgt_status != BLACK) & (tgt_status != REC)].sum()
                    )
                env_from_plain[target] = env_from_plain.get(target, 0) + hits_all
                mod_from_plain[target] = mod_from_plain.get(target, 0) + hits_sub

        # ghost attackers: offspring coins on nested substrate prefixes
        mod_new: dict[Site, int] = dict(mod_from_plain)
        env_new: dict[Site, int] = dict(env_from_plain)
        ghost_sites = sorted(set(ghosts_env) | set(ghosts_mod))
        for site in ghost_sites:
            g_env = ghosts_env.get(site, 0)
            g_mod = ghosts_mod.get(site, 0)
            if g_env <= 0:
                continue
            targets = _neighbor_sites(site, offsets)
            coins = _offspring_coins(oracle, n, site, g_env, len(targets), N)
            for t_idx, target in enumerate(targets):
                st = plain.status.get(target)
                m = N if st is None else int(((st != BLACK) & (st != REC)).sum())
                hits_env = int(np.count_nonzero(coins[:, t_idx, :] < p))
                if hits_env:
                    env_new[target] = env_new.get(target, 0) + hits_env
                if g_mod > 0 and m > 0:
                    hits_mod = int(np.count_nonzero(coins[:g_mod, t_idx, :m] < p))
                    if hits_mod:
                        mod_new[target] = mod_new.get(target, 0) + hits_mod

        for s, c in mod_inf.items():
            mod_recovered[s] = mod_recovered.get(s, 0) + c
        for s, c in env_inf.items():
            env_recovered[s] = env_recovered.get(s, 0) + c
        plain, _ = step_exact_edges(plain, oracle, prob=p)
        plain_new = plain.infected_dict()
        # modified count = plain + ghosts_mod; envelope = plain + ghosts_env
        ghosts_mod = {
            s: mod_new.get(s, 0) - plain_new.get(s, 0)
            for s in set(mod_new) | set(plain_new)
        }
        ghosts_env = {
            s: env_new.get(s, 0) - plain_new.get(s, 0)
            for s in set(env_new) | set(plain_new)
        }
        for ghosts in (ghosts_mod, ghosts_env):
            for s, g in list(ghosts.items()):
                if g < 0:
                    fam.violations.append((n + 1, s, "ghost bookkeeping negative"))
                    ghosts[s] = 0
    return fam
