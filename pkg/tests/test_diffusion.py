import math

import numpy as np
import pytest

from sirlattice import (
    DegenerateInterval,
    GridInstability,
    RadialGrid,
    SdeConfig,
    feller_survival_prob,
    scale_hitting_prob,
    simulate_feller,
    simulate_meanfield_sir,
    solve_dual_pde,
)
from sirlattice.diffusion import (
    critical_mass_fraction,
    feller_hitting_mc,
    parabolic_extinction_tail_bound,
    radial_bump,
    simulate_parabolic_drift,
)


class TestFellerClosedForm:
    def test_paper_instance(self):
        # x0=1, drift=0.1, branching=1, t=1/(8*0.1): 1 - exp(-0.2/(1-e^-1/8))
        val = feller_survival_prob(1.0, 0.1, 1.0, 1.25)
        assert val == pytest.approx(0.8177, abs=5e-5)

    def test_zero_start(self):
        assert feller_survival_prob(0.0, 0.3, 1.0, 2.0) == 0.0

    def test_long_time_positive_drift_limit(self):
        lim = 1.0 - math.exp(-2 * 0.4 * 1.7 / 0.9)
        assert feller_survival_prob(1.7, 0.4, 0.9, 1e9) == pytest.approx(lim, rel=1e-6)

    def test_driftless_limit_is_continuous(self):
        a = feller_survival_prob(1.0, 1e-13, 2.0, 3.0)
        b = feller_survival_prob(1.0, 0.0, 2.0, 3.0)
        assert a == pytest.approx(b, rel=1e-3)
        assert b == pytest.approx(1.0 - math.exp(-2 / 6.0))


class TestFellerSimulation:
    def test_zero_start_stays_zero(self):
        out = simulate_feller(0.0, 0.5, 1.0, SdeConfig(1e-2, 1.0, 100), np.random.default_rng(0))
        assert np.all(out.final == 0.0)

    def test_mean_growth(self):
        # E V_t = x0 e^{drift t} within 3 standard errors
        cfg = SdeConfig(1e-3, 1.0, 20_000)
        out = simulate_feller(1.0, 0.5, 1.0, cfg, np.random.default_rng(1))
        target = math.exp(0.5)
        se = out.final.std(ddof=1) / math.sqrt(cfg.n_paths)
        assert abs(out.final.mean() - target) < 3 * se

    def test_driftless_extinction_matches_closed_form(self):
        cfg = SdeConfig(1e-3, 2.0, 20_000)
        out = simulate_feller(1.0, 0.0, 1.0, cfg, np.random.default_rng(2))
        target = 1.0 - feller_survival_prob(1.0, 0.0, 1.0, 2.0)
        se = math.sqrt(target * (1 - target) / cfg.n_paths)
        assert abs(out.extinction_fraction - target) < 3.5 * se

    def test_paths_nonnegative(self):
        cfg = SdeConfig(1e-2, 1.0, 500, keep_paths=True)
        out = simulate_feller(0.5, -1.0, 2.0, cfg, np.random.default_rng(3))
        assert np.all(out.paths >= 0.0)


class TestScaleHitting:
    def test_paper_instance(self):
        # eps=0.01, gamma=1: (1-e^-0.04)/(1-e^-0.2) = 0.2163111...
        val = scale_hitting_prob(2.0, 0.0, 10.0, 0.01, 1.0)
        exact = (1 - math.exp(-0.04)) / (1 - math.exp(-0.2))
        assert val == pytest.approx(exact, rel=1e-12)
        assert val == pytest.approx(0.21632, abs=2e-5)

    def test_boundaries(self):
        assert scale_hitting_prob(0.0, 0.0, 5.0, 0.1, 1.0) == 0.0
        assert scale_hitting_prob(5.0, 0.0, 5.0, 0.1, 1.0) == 1.0
        with pytest.raises(DegenerateInterval):
            scale_hitting_prob(1.0, 1.0, 1.0, 0.1, 1.0)

    def test_monotone_in_start(self):
        vals = [scale_hitting_prob(a, 0.0, 10.0, 0.05, 1.0) for a in (1.0, 3.0, 7.0)]
        assert 0 < vals[0] < vals[1] < vals[2] < 1

    def test_downward_drift_grid_inequality(self):
        # (3 hits 4 before 0) <= exp(-2 p_c beta / gamma) over a grid
        for d in (2, 3):
            p_c = critical_mass_fraction(d)
            for beta in (0.5, 2.0, 10.0):
                for gamma in (0.3, 1.0, 4.0):
                    m = p_c * beta
                    val = scale_hitting_prob(3.0, 0.0, 4.0, m, gamma, variant="drifted_bm")
                    assert val <= math.exp(-2 * m / gamma) + 1e-12

    def test_hitting_mc_agrees_small_instance(self):
        cfg = SdeConfig(1e-3, 100.0, 4000)
        frac, unresolved = feller_hitting_mc(2.0, 0.05, 1.0, 8.0, cfg, np.random.default_rng(5))
        target = scale_hitting_prob(2.0, 0.0, 8.0, 0.05, 1.0)
        se = math.sqrt(target * (1 - target) / cfg.n_paths)
        assert unresolved < 0.02
        assert abs(frac - target) < 4 * se + unresolved


class TestMeanFieldSir:
    def test_zero_start(self):
        i, r = simulate_meanfield_sir(0.0, 3.0, SdeConfig(1e-2, 1.0, 50), np.random.default_rng(0))
        assert np.all(i == 0.0) and np.all(r == 0.0)

    def test_recovered_nondecreasing_and_absorption(self):
        cfg = SdeConfig(1e-2, 60.0, 400)
        for lam in (-1.0, 0.0, 3.0):
            i, r = simulate_meanfield_sir(1.0, lam, cfg, np.random.default_rng(int(lam) + 7))
            assert np.all(np.diff(r, axis=0) >= -1e-12)
            extinct = (i[-1] == 0.0).mean()
            assert extinct >= 0.99


class TestParabolicComparison:
    def test_symmetric_brownian_gambler(self):
        # beta = eps = 0: Y = 2 + sqrt(gamma) B, P(T_4 < T_0) = 1/2
        cfg = SdeConfig(1e-2, 200.0, 3000)
        stats = simulate_parabolic_drift(0.0, 0.0, 1.5, cfg, np.random.default_rng(8))
        assert stats.p_hit4_before_0 == pytest.approx(0.5, abs=0.035)

    def test_extinction_tail_bound_in_regime(self):
        # beta/eps^2 >= 20000: the MC estimate sits below the Gaussian bound
        eps, beta, gamma = 0.05, 60.0, 1.0
        assert beta / eps**2 >= 20000
        cfg = SdeConfig(1e-3, 1 / (8 * eps), 2000)
        stats = simulate_parabolic_drift(eps, beta, gamma, cfg, np.random.default_rng(9))
        bound = parabolic_extinction_tail_bound(eps, beta, gamma)
        assert stats.p_alive_at_checkpoint <= bound + 3e-3


class TestDualPde:
    def grid(self, n_r=129):
        return RadialGrid(r_max=6.0, n_r=n_r, d=2)

    def test_lambda_zero_identically_zero(self):
        sol = solve_dual_pde(0.0, 1.0, 1.0, self.grid(), times=[0.5, 1.0])
        assert np.all(sol.snapshots == 0.0)

    def test_monotone_in_lambda_and_time(self):
        s1 = solve_dual_pde(1.0, 0.5, 1.0, self.grid(), times=[0.3, 0.8])
        s2 = solve_dual_pde(2.0, 0.5, 1.0, self.grid(), times=[0.3, 0.8])
        assert np.all(s2.snapshots >= s1.snapshots - 1e-12)
        assert np.all(s1.snapshots[1] >= s1.snapshots[0] - 1e-12)
        assert s1.snapshots[1].max() > 0

    def test_instability_raises(self):
        g = RadialGrid(r_max=6.0, n_r=129, dt=1.0, d=2)
        with pytest.raises(GridInstability):
            solve_dual_pde(1.0, 0.5, 1.0, g, times=[0.1])

    def test_richardson_second_order(self):
        # successive dr halvings shrink the change by ~4 (dt follows dr^2)
        lam, theta, rho, t = 1.5, 0.8, 1.0, 0.6
        sols = [
            solve_dual_pde(lam, theta, rho, RadialGrid(6.0, n, d=2), times=[t])
            for n in (49, 97, 193)
        ]
        probe = np.linspace(0.0, 4.0, 9)
        v = [np.array([s.at(t, r) for r in probe]) for s in sols]
        num = np.abs(v[1] - v[0]).max()
        den = np.abs(v[2] - v[1]).max()
        assert 3.0 <= num / den <= 5.0

    def test_hitting_prob_formula(self):
        sol = solve_dual_pde(2.0, 0.5, 1.0, self.grid(), times=[1.0])
        u0 = sol.at(1.0, 0.5)
        p = sol.hitting_prob([((0.5, 0.0), 2.0)], 1.0)
        assert p == pytest.approx(1.0 - math.exp(-2.0 * u0))

    def test_bump_plateau(self):
        r = np.linspace(0, 3, 301)
        b = radial_bump(r, 1.0)
        assert np.all(b[r <= 0.99] > 0.999)
        assert np.all(b[r >= 1.51] < 1e-12)
        assert np.all(np.diff(b) <= 1e-9)
