import math
import unittest

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

from sharing_club.domain import ClubParams, TypeDistribution, aggregate_demand, aggregate_supply
from sharing_club.scenarios import (
    RankCoupling, Scenario, ScenarioError, ScenarioKind, ShiftDirection, ShiftSpec, ZipfSpec,
    demand_from_pranks, homogeneous_population, match_statistics, population_from_pranks,
    shifted_demand, split_k_rho, zipf_distribution, zipf_norm, zipf_population
)
from tests.test_base import TestBase


def _zipf_sum(beta: float, s_max: int) -> float:
    return sum(s ** -beta for s in range(1, s_max + 1))


class TestZipf(unittest.TestCase):
    def test_uniform_when_flat(self):
        assert_allclose(zipf_distribution(ZipfSpec(0.0, 4)).probs, [0.25] * 4, atol=1e-15)
        self.assertAlmostEqual(zipf_norm(ZipfSpec(0.0, 4)), 0.5, places=15)

    def test_two_types(self):
        assert_allclose(zipf_distribution(ZipfSpec(1.0, 2)).probs, [2 / 3, 1 / 3], atol=1e-15)
        self.assertAlmostEqual(zipf_norm(ZipfSpec(1.0, 2)), math.sqrt(5) / 3, places=14)

    def test_against_direct_sum(self):
        g = zipf_distribution(ZipfSpec(0.8, 1000))
        self.assertAlmostEqual(g.prob(1), 1.0 / _zipf_sum(0.8, 1000), delta=1e-12)
        self.assertAlmostEqual(g.prob(10), 10 ** -0.8 / _zipf_sum(0.8, 1000), delta=1e-12)
        expected = math.sqrt(_zipf_sum(1.2, 1000)) / _zipf_sum(0.6, 1000)
        self.assertAlmostEqual(zipf_norm(ZipfSpec(0.6, 1000)), expected, delta=1e-12)

    def test_non_increasing(self):
        for beta in (0.0, 0.3, 0.8, 1.5, 3.0):
            g = zipf_distribution(ZipfSpec(beta, 50)).probs
            self.assertTrue((np.diff(g) <= 0).all(), f"Zipf law with beta={beta} must be non-increasing.")
            self.assertAlmostEqual(zipf_norm(ZipfSpec(beta, 50)), float(np.sqrt(g @ g)), delta=1e-12)

    def test_invalid(self):
        for beta, s_max in ((-0.1, 10), (math.inf, 10), (1.0, 0), (1.0, 2.5)):
            with self.assertRaises(ScenarioError, msg=f"beta={beta}, s_max={s_max} should be rejected"):
                ZipfSpec(beta, s_max)


class TestShift(unittest.TestCase):
    def setUp(self) -> None:
        self.beta = 0.7
        self.g = zipf_distribution(ZipfSpec(self.beta, 5))

    def test_zero_shift(self):
        supply, demand = shifted_demand(self.g, self.beta, ShiftSpec(0))
        self.assertEqual(demand, supply)
        self.assertIs(supply, self.g)

    def test_positive_shift(self):
        supply, demand = shifted_demand(self.g, self.beta, ShiftSpec(2))
        self.assertIs(supply, self.g)
        assert_array_equal(demand.probs[:2], [0, 0])
        expected = np.array([1.0, 2.0, 3.0]) ** -self.beta
        assert_allclose(demand.probs[2:], expected / expected.sum(), atol=1e-15)

    def test_negative_shift(self):
        _, demand = shifted_demand(self.g, self.beta, ShiftSpec(-2))
        assert_array_equal(demand.probs[3:], [0, 0])
        expected = np.array([1.0, 2.0, 3.0]) ** -self.beta
        assert_allclose(demand.probs[:3], expected / expected.sum(), atol=1e-15)

    def test_supply_lead_exchanges_roles(self):
        supply, demand = shifted_demand(self.g, self.beta, ShiftSpec(2, ShiftDirection.SUPPLY_LEAD))
        self.assertIs(demand, self.g)
        assert_array_equal(supply.probs[:2], [0, 0])

    def test_contiguous_support(self):
        g = zipf_distribution(ZipfSpec(self.beta, 30))
        for delta in range(-29, 30):
            _, demand = shifted_demand(g, self.beta, ShiftSpec(delta))
            support = demand.support()
            self.assertAlmostEqual(demand.probs.sum(), 1.0, delta=1e-12)
            assert_array_equal(np.diff(support), np.ones(support.size - 1), f"Gap in the support for delta={delta}.")

    def test_empty_overlap(self):
        for delta in (5, -5, 9):
            with self.assertRaisesRegex(ScenarioError, "empty overlap"):
                shifted_demand(self.g, self.beta, ShiftSpec(delta))

    def test_from_fraction(self):
        self.assertEqual(ShiftSpec.from_fraction(0.4, 1000).delta, 400)
        self.assertEqual(ShiftSpec.from_fraction(1.0, 1000).delta, 999)
        self.assertEqual(ShiftSpec.from_fraction(-1.0, 1000).delta, -999)
        self.assertIs(ShiftSpec.from_fraction(0.1, 10, "supply_lead").direction, ShiftDirection.SUPPLY_LEAD)

    def test_direction_parse(self):
        self.assertIs(ShiftDirection.parse("demand_lead"), ShiftDirection.DEMAND_LEAD)
        self.assertIs(ShiftDirection.parse(ShiftDirection.SUPPLY_LEAD), ShiftDirection.SUPPLY_LEAD)
        with self.assertRaises(ScenarioError):
            ShiftDirection.parse("sideways")


class TestRankCoupling(unittest.TestCase):
    def setUp(self) -> None:
        self.rng = np.random.default_rng(3)
        self.f = TypeDistribution([0.4, 0.3, 0.2, 0.1])

    def test_perfect_following(self):
        f_i = TypeDistribution([0.1, 0.2, 0.3, 0.4])
        h_i = demand_from_pranks(f_i, RankCoupling.perfect_following(self.f))
        assert_allclose(h_i.probs, f_i.probs, atol=1e-15)

    def test_independent_ranks(self):
        coupling = RankCoupling(np.outer(self.f.probs, np.full(4, 0.25)), self.f)
        for _ in range(5):
            f_i = TypeDistribution(self.rng.dirichlet(np.ones(4)))
            assert_allclose(demand_from_pranks(f_i, coupling).probs, [0.25] * 4, atol=1e-12)

    def test_against_double_sum(self):
        joint = self.rng.random((5, 5))
        joint /= joint.sum()
        coupling = RankCoupling.from_joint(joint)
        f = joint.sum(axis=1)
        for _ in range(10):
            f_i = self.rng.dirichlet(np.ones(5))
            expected = [sum(joint[r, s] / f[r] * f_i[r] for r in range(5)) for s in range(5)]
            h_i = demand_from_pranks(TypeDistribution(f_i), coupling)
            assert_allclose(h_i.probs, expected, atol=1e-12)
            self.assertAlmostEqual(h_i.probs.sum(), 1.0, delta=1e-9)

    def test_undefined_conversion(self):
        f = TypeDistribution([0.5, 0.5, 0.0])
        coupling = RankCoupling.perfect_following(f)
        with self.assertRaisesRegex(ScenarioError, "undefined conversion"):
            demand_from_pranks(TypeDistribution([0.0, 0.5, 0.5]), coupling)

    def test_invalid_coupling(self):
        with self.assertRaises(ScenarioError):
            RankCoupling(np.eye(4) / 4, self.f)
        with self.assertRaises(ScenarioError):
            RankCoupling(np.diag(self.f.probs)[:3], self.f)
        with self.assertRaises(ScenarioError):
            RankCoupling.from_joint(np.full((2, 2), 0.3))

    def test_population_conversion(self):
        pop = homogeneous_population(3, self.f, TypeDistribution([0.1, 0.2, 0.3, 0.4]))
        converted = population_from_pranks(pop, RankCoupling.perfect_following(self.f))
        self.assertEqual(len(converted), 3)
        assert_allclose(converted[0].demand.probs, [0.1, 0.2, 0.3, 0.4], atol=1e-15)


class TestMatchStatistics(TestBase):
    def test_music_club(self):
        stats = match_statistics(aggregate_demand(self.pop), aggregate_supply(self.pop))
        self.assertAlmostEqual(stats.inner, float(self.h @ self.g), delta=1e-12)
        self.assertAlmostEqual(stats.inner, 0.2060, delta=5e-4)
        self.assertAlmostEqual(1.0 / (6 * stats.inner), 0.808, delta=2e-3)

    def test_identity(self):
        g = TypeDistribution([0.5, 0.3, 0.2])
        self.assertAlmostEqual(match_statistics(g, g).similarity, 1.0, delta=1e-12)
        disjoint = match_statistics(TypeDistribution([1, 0]), TypeDistribution([0, 1]))
        self.assertEqual(disjoint.inner, 0.0)
        self.assertEqual(disjoint.similarity, 0.0)
        rng = np.random.default_rng(5)
        for _ in range(20):
            h, g = (TypeDistribution(rng.dirichlet(np.ones(8))) for _ in range(2))
            s = match_statistics(h, g)
            self.assertLess(abs(s.inner - s.norm_h * s.norm_g * s.similarity), 1e-12)
            self.assertTrue(0 < s.similarity <= 1 + 1e-12)


class TestScenario(unittest.TestCase):
    def test_split_k_rho(self):
        self.assertEqual(split_k_rho(2.0), (2, 1.0))
        self.assertEqual(split_k_rho(0.5), (1, 0.5))
        payload_size, rho = split_k_rho(2.5)
        self.assertEqual(payload_size, 3)
        self.assertAlmostEqual(payload_size * rho, 2.5)
        with self.assertRaises(ScenarioError):
            split_k_rho(0.0)

    def test_zipf_population(self):
        pop = zipf_population(ZipfSpec(1.0, 10), 4, payload_size=2, shift=ShiftSpec(3))
        self.assertEqual(len(pop), 4)
        self.assertEqual(pop.mean_payload, 2.0)
        assert_array_equal(pop[0].demand.probs[:3], [0, 0, 0])

    def test_scenario(self):
        params = ClubParams(0.5)
        scenario = Scenario(ScenarioKind.ZIPF_SHIFT, ZipfSpec(0.6, 100), 50, 2, params, ShiftSpec(-10))
        self.assertEqual(scenario.k_rho, 1.0)
        self.assertEqual(len(scenario.population()), 50)
        self.assertEqual(len(scenario.population(n_peers=1)), 1)
        with self.assertRaises(ScenarioError):
            Scenario(ScenarioKind.ZIPF_SHIFT, ZipfSpec(0.6, 100), 50, 2, params)
        with self.assertRaisesRegex(ScenarioError, "empty overlap"):
            Scenario(ScenarioKind.ZIPF_SHIFT, ZipfSpec(0.6, 100), 50, 2, params, ShiftSpec(100))
