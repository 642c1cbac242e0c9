"""Addressed common randomness for monotone couplings.

A CouplingOracle maps a structured address to a uniform variate in [0, 1),
deterministically given the master seed.  Coupled runs that query the same
address observe the same variate, which is what turns the percolation-graph
comparison arguments into runtime-checkable certificates.

Two address families are exposed:

* edge coins - one coin per unordered pair of individuals
  {(site_a, slot_a), (site_b, slot_b)}, with no generation component.
  These realize the static percolation structure: during any single run
  each pair is examined at most once (an attacker recovers for good after
  its generation, and a target examined while susceptible is never
  re-attacked by the same attacker), so per-run marginals equal fresh-coin
  sampling, while delayed or enlarged coupled runs see the *same* graph.

* offspring coins - (generation, site, particle index, target site,
  substrate slot).  Count-level branching legs reuse particle labels across
  generations, so generation belongs to the address.  Nested substrate
  prefixes {0..m-1} give sitewise-dominated offspring counts for nested m.

Variates come from splitmix64 applied to a running hash of the address
components: platform-independent, O(1) memory, vectorizable over any one
component.  Distinct addresses yield (hash-quality) independent uniforms.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB

# address tags keep the two families disjoint
TAG_EDGE = 0xE19E
TAG_OFFSPRING = 0x0F50

_U64 = np.uint64


def _mix(z: int) -> int:
    z = (z + _GAMMA) & _MASK
    z = ((z ^ (z >> 30)) * _M1) & _MASK
    z = ((z ^ (z >> 27)) * _M2) & _MASK
    return z ^ (z >> 31)


def _mix_vec(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = z + _U64(_GAMMA)
        z = (z ^ (z >> _U64(30))) * _U64(_M1)
        z = (z ^ (z >> _U64(27))) * _U64(_M2)
        return z ^ (z >> _U64(31))


def _to_floats(h: np.ndarray) -> np.ndarray:
    return (h >> _U64(11)).astype(np.float64) * 2.0**-53


class CouplingOracle:
    """Deterministic address -> uniform stream shared by coupled runs."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._base = _mix(self.seed & _MASK)

    def uniform(self, *components: int) -> float:
        """Uniform in [0,1) for one fully-specified integer address."""
        h = self._base
        for c in components:
            h = _mix(h ^ (int(c) & _MASK))
        return (h >> 11) * 2.0**-53

    def uniform_block(
        self, head: tuple[int, ...], count: int, tail: tuple[int, ...] = ()
    ) -> np.ndarray:
        """Uniforms for the addresses (*head, j, *tail), j = 0..count-1.

        Identical to [uniform(*head, j, *tail) for j in range(count)] but
        vectorized over j.
        """
        if count <= 0:
            return np.empty(0, dtype=np.float64)
        h = self._base
        for c in head:
            h = _mix(h ^ (int(c) & _MASK))
        z = _mix_vec(_U64(h) ^ np.arange(count, dtype=_U64))
        for c in tail:
            z = _mix_vec(z ^ _U64(int(c) & _MASK))
        return _to_floats(z)

    def uniform_grid(
        self,
        head: tuple[int, ...],
        rows: np.ndarray | int,
        mid: tuple[int, ...],
        cols: np.ndarray | int,
    ) -> np.ndarray:
        """Uniforms for addresses (*head, rows[i], *mid, cols[j]) as a
        (len(rows), len(cols)) block; int arguments mean arange."""
        if isinstance(rows, int):
            rows = np.arange(rows, dtype=np.int64)
        if isinstance(cols, int):
            cols = np.arange(cols, dtype=np.int64)
        h = self._base
        for c in head:
            h = _mix(h ^ (int(c) & _MASK))
        z = _mix_vec(_U64(h) ^ rows.astype(_U64))
        for c in mid:
            z = _mix_vec(z ^ _U64(int(c) & _MASK))
        grid = _mix_vec(z[:, None] ^ cols.astype(_U64)[None, :])
        return _to_floats(grid)

    # -- edge coins ---------------------------------------------------

    def edge_row(
        self,
        site_a: tuple[int, ...],
        slot_a: int,
        site_b: tuple[int, ...],
        count: int,
    ) -> np.ndarray:
        """Coins for the unordered pairs {(site_a, slot_a), (site_b, j)},
        j = 0..count-1.

        Addresses are canonicalized by lexicographic order on (site, slot)
        so both endpoints of an edge read the same coin.  For
        site_a == site_b the self pair entry j == slot_a is set to 2.0
        (no self-edge: above every probability threshold).
        """
        a, b = tuple(site_a), tuple(site_b)
        if a < b:
            return self.uniform_block((TAG_EDGE, *a, slot_a, *b), count)
        if b < a:
            return self.uniform_block((TAG_EDGE, *b), count, (*a, slot_a))
        # same site: pair {slot_a, j}, address under the smaller slot
        lo = self.uniform_block((TAG_EDGE, *a), min(slot_a, count), (*a, slot_a))
        hi = self.uniform_block((TAG_EDGE, *a, slot_a, *a), count)
        row = hi
        row[: min(slot_a, count)] = lo
        if slot_a < count:
            row[slot_a] = 2.0
        return row

    def edge_matrix(
        self,
        site_a: tuple[int, ...],
        slots: np.ndarray,
        site_b: tuple[int, ...],
        count: int,
    ) -> np.ndarray:
        """edge_row stacked over attacker slots: entry [i, j] is the coin of
        the unordered pair {(site_a, slots[i]), (site_b, j)}, j < count."""
        a, b = tuple(site_a), tuple(site_b)
        slots = np.asarray(slots, dtype=np.int64)
        if a < b:
            return self.uniform_grid((TAG_EDGE, *a), slots, b, count)
        if b < a:
            return self.uniform_grid((TAG_EDGE, *b), count, a, slots).T
        # same site: coin of {i, j} lives at (TAG, *a, min, *a, max)
        g = self.uniform_grid((TAG_EDGE, *a), count, a, count)
        m = np.where(np.arange(count)[:, None] < np.arange(count)[None, :], g, g.T)
        np.fill_diagonal(m, 2.0)
        return m[slots]

    # -- offspring coins ----------------------------------------------
    #
    # Count-level couplings read one block of (n_targets * N) coins per
    # particle under the head (TAG_OFFSPRING, generation, *site, particle),
    # reshaped to (target-in-neighborhood-order, slot).  Hits into a slot
    # prefix {0..m-1} are monotone in m, giving nested offspring counts for
    # nested substrates on shared coins; see couplings._offspring_layers.
