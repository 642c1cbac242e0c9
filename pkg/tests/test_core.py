import itertools
import math

import numpy as np
import pytest
from scipy import stats

from sirlattice import (
    EpidemicState,
    MassCap,
    ModelParams,
    RateTooLarge,
    StepRecord,
    SupportCap,
    read_site_config,
    removed_field_from_rate,
    run_trajectory,
    step_branching_envelope,
    step_chain_binomial,
    step_collision_binomial,
    step_modified_sir,
)


# ---------------------------------------------------------------------
# exact one-step law for d=1, N=2, theta=0, one infected at the origin:
# X1(-1) ~ Bin(2, 1/6), X1(0) ~ Bin(1, 1/6), X1(+1) ~ Bin(2, 1/6), independent
# (enumeration oracle used by the engine-equivalence tests)
# ---------------------------------------------------------------------

P16 = 1.0 / 6.0


def tiny_example_pmf() -> dict[tuple[int, int, int], float]:
    def bin_pmf(n, k):
        return math.comb(n, k) * P16**k * (1 - P16) ** (n - k)

    pmf = {}
    for a, b, c in itertools.product(range(3), range(2), range(3)):
        pmf[(a, b, c)] = bin_pmf(2, a) * bin_pmf(1, b) * bin_pmf(2, c)
    assert abs(sum(pmf.values()) - 1.0) < 1e-12
    return pmf


def tiny_example_mean() -> float:
    return sum((a + b + c) * p for (a, b, c), p in tiny_example_pmf().items())


def test_tiny_example_oracle_mean_is_five_sixths():
    assert tiny_example_mean() == pytest.approx(5 / 6)


def sample_tiny(step_fn, n_samples, seed):
    params = ModelParams(1, 2, 0.0)
    init = EpidemicState.from_counts(params, {(0,): 1})
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_samples):
        nxt, _ = step_fn(init, rng)
        x = nxt.infected_dict()
        out.append((x.get((-1,), 0), x.get((0,), 0), x.get((1,), 0)))
    return out


def chi_square_vs_pmf(samples, pmf, min_expected=5.0):
    n = len(samples)
    cells = sorted(pmf)
    expected = np.array([pmf[c] * n for c in cells])
    observed = np.array([0.0] * len(cells))
    index = {c: i for i, c in enumerate(cells)}
    for s in samples:
        observed[index[s]] += 1
    # pool low-expectation cells into a tail bucket for validity
    keep = expected >= min_expected
    obs = list(observed[keep])
    exp = list(expected[keep])
    if (~keep).any():
        obs.append(observed[~keep].sum())
        exp.append(expected[~keep].sum())
    chi2, p = stats.chisquare(obs, exp)
    return chi2, p


@pytest.mark.parametrize("step_fn", [step_chain_binomial, step_collision_binomial])
def test_one_step_law_matches_enumeration(step_fn):
    samples = sample_tiny(step_fn, 4000, seed=12)
    _, p = chi_square_vs_pmf(samples, tiny_example_pmf())
    assert p > 0.01


def test_zero_transmission_and_full_removal():
    params = ModelParams(1, 4, -(4**0.4))  # p_N = 0 exactly
    assert pytest.approx(0.0, abs=1e-15) == (
        __import__("sirlattice").transmission_probability(params)
    )
    st = EpidemicState.from_counts(params, {(0,): 2})
    rng = np.random.default_rng(0)
    nxt, _ = step_chain_binomial(st, rng)
    assert nxt.total_infected == 0

    params2 = ModelParams(1, 3, 0.0)
    removed = {(-1,): 3, (0,): 1, (1,): 3}
    st2 = EpidemicState.from_counts(params2, {(0,): 2}, removed=removed)
    nxt2, _ = step_chain_binomial(st2, rng)
    assert nxt2.total_infected == 0  # no susceptibles anywhere


def test_recovered_recursion_and_conservation():
    params = ModelParams(2, 8, 1.0)
    st = EpidemicState.from_counts(params, {(0, 0): 4}, removed={(1, 0): 3})
    rng = np.random.default_rng(3)
    for _ in range(6):
        nxt, _ = step_chain_binomial(st, rng)
        for site in set(st.sites()) | set(nxt.sites()):
            x0 = st.infected_dict().get(site, 0)
            r0 = st.recovered_dict().get(site, 0)
            assert nxt.recovered_dict().get(site, 0) == r0 + x0
        nxt.validate()  # X + R + K <= N per site
        st = nxt


def test_modified_sir_one_step_mean():
    # d=1, N=2, X0={0:1}, theta=0: mean offspring 3 * 2 * 1/6 = 1,
    # exceeding the plain mean 5/6 by the collision mass
    params = ModelParams(1, 2, 0.0)
    st = EpidemicState.from_counts(params, {(0,): 1})
    rng = np.random.default_rng(99)
    tot = sum(step_modified_sir(st, rng).total_infected for _ in range(30000))
    assert tot / 30000 == pytest.approx(1.0, abs=0.02)


def test_modified_sir_depleted_substrate():
    # R + K = N at every site in the neighborhood: no offspring anywhere
    params = ModelParams(1, 3, 5.0)
    st = EpidemicState.from_counts(
        params,
        {(0,): 1},
        removed={(-1,): 3, (1,): 3},
        recovered={(0,): 3},
        kind="branching",
    )
    rng = np.random.default_rng(0)
    assert step_modified_sir(st, rng).total_infected == 0


def test_envelope_mean_recursion():
    # d=2, N=16, theta=1: E|X_n| = |X_0| (1 + theta/N^alpha)^n = 8 * 1.25^2
    params = ModelParams(2, 16, 1.0)
    st = EpidemicState.from_counts(params, {(0, 0): 8})
    rng = np.random.default_rng(5)
    tot = 0
    n_mc = 4000
    for _ in range(n_mc):
        s = st
        for _ in range(2):
            s = step_branching_envelope(s, rng)
        tot += s.total_infected
    mean = tot / n_mc
    se = math.sqrt(12.5 * 3 / n_mc)  # crude variance bound scale
    assert abs(mean - 12.5) < 6 * se + 0.25


def test_collision_engine_examples():
    # one susceptible, two infected neighbors, prob p: E[collisions] = p^2
    params = ModelParams(1, 1, 0.0)  # p = 1/3
    st = EpidemicState.from_counts(params, {(-1,): 1, (1,): 1})
    rng = np.random.default_rng(21)
    n_mc = 30000
    colls = 0
    for _ in range(n_mc):
        _, rec = step_collision_binomial(st, rng)
        colls += rec.collision_total
    assert colls / n_mc == pytest.approx(1 / 9, abs=0.01)


def test_collision_single_attacker_is_collisionless():
    params = ModelParams(2, 16, 3.0)
    st = EpidemicState.from_counts(params, {(0, 0): 1})
    rng = np.random.default_rng(2)
    for _ in range(200):
        _, rec = step_collision_binomial(st, rng)
        assert rec.collision_total == 0


def test_run_trajectory_trivial_cases():
    params = ModelParams(2, 8, 0.0)
    empty = EpidemicState.from_counts(params, {})
    rec = run_trajectory(empty, "chain_binomial", 50, np.random.default_rng(0))
    assert rec.stop_reason == "extinct"
    assert rec.extinction_generation == 0
    assert rec.mass_path == [0]

    st = EpidemicState.from_counts(params, {(0, 0): 3})
    rec = run_trajectory(st, "chain_binomial", 0, np.random.default_rng(0))
    assert rec.stop_reason == "horizon"
    assert rec.mass_path == [3]
    assert rec.generations_run == 0


def test_stop_rules():
    params = ModelParams(2, 32, 8.0)
    st = EpidemicState.from_counts(params, {(0, 0): 10})
    rec = run_trajectory(
        st, "chain_binomial", 10_000, np.random.default_rng(1), stop_rules=[MassCap(200)]
    )
    assert rec.stop_reason == "mass_cap"
    assert rec.mass_path[-1] >= 200
    rec2 = run_trajectory(
        st, "chain_binomial", 10_000, np.random.default_rng(1), stop_rules=[SupportCap(4.0)]
    )
    assert rec2.stop_reason == "support_cap"


def test_critical_sir_dies_and_masses_zero_after_extinction():
    params = ModelParams(1, 50, 0.0)
    st = EpidemicState.from_counts(params, {(0,): 5})
    for seed in range(20):
        rec = run_trajectory(st, "chain_binomial", 5000, np.random.default_rng(seed))
        assert rec.stop_reason == "extinct"
        assert rec.mass_path[-1] == 0
        assert all(m > 0 for m in rec.mass_path[:-1])


def test_removed_field_from_rate_examples():
    assert removed_field_from_rate({}, ModelParams(2, 16, 0.0)) == {}
    # d=2, N=16: stride 1, unit 4 -> count 4 on the single mapped site
    out = removed_field_from_rate({(0, 0): 1.0}, ModelParams(2, 16, 0.0))
    assert out == {(0, 0): 4}
    # d=3, N=64: 64^(1/3) = 4, rate 0.5 -> floor(2) = 2
    out3 = removed_field_from_rate({(0, 0, 0): 0.5}, ModelParams(3, 64, 0.0))
    assert set(out3.values()) == {2}
    with pytest.raises(RateTooLarge):
        removed_field_from_rate({(0, 0): 100.0}, ModelParams(2, 16, 0.0))


def test_removed_field_stride_preimage():
    # d=1, N=100: stride = [sqrt(100^0.4 * 2/3)] = [2.06] = 2: two sites per cube
    params = ModelParams(1, 100, 0.0)
    assert params.lattice_stride == 2
    out = removed_field_from_rate({(0,): 0.5}, params)
    assert sorted(out) == [(-1,), (0,)]


def test_read_site_config_roundtrip():
    text = """
    # comment
    0 0: 10
    1 0: 0 2 5
    -1 2: 3 0 0
    """
    inf, rec, rem = read_site_config(text, 2)
    assert inf == {(0, 0): 10, (-1, 2): 3}
    assert rec == {(1, 0): 2}
    assert rem == {(1, 0): 5}
    with pytest.raises(ValueError):
        read_site_config("0: 1", 2)


def test_streaming_rows():
    params = ModelParams(1, 10, 0.0)
    st = EpidemicState.from_counts(params, {(0,): 2})
    rows = []
    run_trajectory(
        st,
        "chain_binomial",
        3,
        np.random.default_rng(0),
        stream=lambda n, site, x, r: rows.append((n, site, x, r)),
    )
    assert rows[0] == (0, (0,), 2, 0)
    assert all(x > 0 for _, _, x, _ in rows)
