import numpy as np
import pytest

from sirlattice import CouplingOracle, ModelParams, NegativeProbability, transmission_probability
from sirlattice.params import neighborhood_offsets


def test_transmission_probability_values():
    assert transmission_probability(ModelParams(2, 16, 1.0)) == 0.015625
    assert transmission_probability(ModelParams(1, 9, 0.0)) == pytest.approx(1 / 27)
    assert transmission_probability(ModelParams(3, 64, -2.0)) == 0.001953125


def test_derived_constants():
    p = ModelParams(2, 16, 0.0)
    assert p.alpha == 0.5
    assert p.sigma2 == pytest.approx(0.4)
    assert p.n_alpha == 4.0
    assert p.neighborhood_size == 5
    q = ModelParams(3, 64, 0.0)
    assert q.alpha == pytest.approx(2 / 3)
    assert q.sugitani_mass_unit == pytest.approx(4.0)


def test_theta_too_negative_raises():
    with pytest.raises(NegativeProbability):
        ModelParams(1, 4, -100.0)


def test_offsets_cover_euclidean_ball():
    for d in (1, 2, 3):
        offs = neighborhood_offsets(d)
        assert len(offs) == 2 * d + 1
        assert all(sum(c * c for c in z) <= 1 for z in offs)
        assert len(set(offs)) == len(offs)
        assert offs[0] == tuple([0] * d)


class TestOracle:
    def test_deterministic_and_uniform_range(self):
        o1, o2 = CouplingOracle(42), CouplingOracle(42)
        u = o1.uniform_block((1, 2, 3), 1000)
        assert np.array_equal(u, o2.uniform_block((1, 2, 3), 1000))
        assert np.all((0 <= u) & (u < 1))
        assert CouplingOracle(43).uniform(1, 2, 3) != o1.uniform(1, 2, 3)

    def test_scalar_matches_vector_paths(self):
        o = CouplingOracle(7)
        blk = o.uniform_block((4, 5), 16, (6,))
        for j in (0, 3, 15):
            assert blk[j] == o.uniform(4, 5, j, 6)
        grid = o.uniform_grid((9,), np.array([2, 11]), (3,), np.array([0, 7]))
        assert grid[1, 1] == o.uniform(9, 11, 3, 7)

    def test_distribution_is_flat(self):
        o = CouplingOracle(123)
        u = o.uniform_block((0,), 200_000)
        counts, _ = np.histogram(u, bins=20, range=(0, 1))
        # chi-square against uniform, generous threshold
        expected = len(u) / 20
        chi2 = float(((counts - expected) ** 2 / expected).sum())
        assert chi2 < 60.0
        assert abs(u.mean() - 0.5) < 0.005

    def test_edge_coin_symmetry_and_no_self_edge(self):
        o = CouplingOracle(5)
        assert o.edge_row((0,), 3, (1,), 8)[5] == o.edge_row((1,), 5, (0,), 8)[3]
        assert o.edge_row((4,), 1, (4,), 8)[6] == o.edge_row((4,), 6, (4,), 8)[1]
        assert o.edge_row((4,), 2, (4,), 8)[2] == 2.0

    def test_edge_matrix_matches_rows(self):
        o = CouplingOracle(11)
        slots = np.array([0, 2, 5])
        for a, b in [((-1,), (0,)), ((0,), (-1,)), ((2, 3), (2, 4)), ((1, 1), (1, 1))]:
            m = o.edge_matrix(a, slots, b, 6)
            for r, i in enumerate(slots):
                assert np.array_equal(m[r], o.edge_row(a, int(i), b, 6))

    def test_generation_free_edges_vs_generation_indexed_offspring(self):
        o = CouplingOracle(3)
        # edge coins have no generation: same address twice, same value
        assert np.array_equal(o.edge_row((0,), 0, (1,), 4), o.edge_row((0,), 0, (1,), 4))
        # offspring coins differ across generations
        from sirlattice.couplings import _offspring_coins

        c0 = _offspring_coins(o, 0, (0,), 1, 3, 4)
        c1 = _offspring_coins(o, 1, (0,), 1, 3, 4)
        assert not np.array_equal(c0, c1)
