import math
import os
import sys
import unittest

sys.path.append(os.path.join(os.path.dirname(__file__), '..', '..'))

from backend.errors import DataError, DepthUndefinedError, ParameterError
from backend.qng_criteria import (
    PairClickStats,
    PhotonNumberStats,
    boundary_curve,
    critical_transmissivity,
    depth_curve,
    pair_depth,
    pair_threshold,
    pair_violation,
    poisson_excess_bound,
    poisson_pair_boundary,
    sps_depth,
)

PS_MEASURED = 5.74e-4
PE_MEASURED = 8.55e-7


def poisson_stats(ps, pe, n):
    return PairClickStats(ps=ps, pe=pe, sigma_ps=math.sqrt(ps / n), sigma_pe=math.sqrt(pe / n), n_pulses=n)


class TestSinglePhotonDepth(unittest.TestCase):

    def test_no_multiphoton_is_unbounded(self):
        depth = sps_depth(PhotonNumberStats.from_p1_p2plus(1.0, 0.0))
        self.assertTrue(depth.is_unbounded)
        self.assertIsNone(depth.db)

    def test_direct_evaluation(self):
        self.assertAlmostEqual(sps_depth(PhotonNumberStats.from_p1_p2plus(0.5, 1e-4)).db, 29.21, places=2)
        self.assertAlmostEqual(sps_depth(PhotonNumberStats.from_p1_p2plus(0.1, 1e-5)).db, 18.24, places=2)

    def test_zero_single_photon_probability_is_rejected(self):
        with self.assertRaises(DataError):
            sps_depth(PhotonNumberStats.from_p1_p2plus(0.0, 1e-3))

    def test_negative_probability_is_rejected(self):
        with self.assertRaises(ParameterError):
            PhotonNumberStats(p0=1.1, p1=-0.1, p2plus=0.0)

    def test_attenuation_shifts_depth_by_transmissivity(self):
        stats = PhotonNumberStats.from_p1_p2plus(0.3, 2e-4, sigma_p1=1e-3, sigma_p2plus=1e-5)
        base = sps_depth(stats).db
        for t in (1.0, 0.8, 0.5, 0.1, 0.01):
            shifted = sps_depth(stats.attenuated(t)).db
            self.assertAlmostEqual(shifted, base + 10 * math.log10(t), places=9)

    def test_uncertainty_propagation(self):
        stats = PhotonNumberStats.from_p1_p2plus(0.5, 1e-4, sigma_p1=0.0, sigma_p2plus=1e-5)
        self.assertAlmostEqual(sps_depth(stats).sigma_db, 10 / math.log(10) * 0.1, places=9)

    def test_dict_round_trip_ignores_unknown_keys(self):
        stats = PhotonNumberStats.from_p1_p2plus(0.2, 1e-4, heralded=True, flags=("third_order",))
        data = stats.to_dict()
        data["extra"] = 1
        self.assertEqual(PhotonNumberStats.from_dict(data), stats)

    def test_from_dict_rejects_non_numeric_values(self):
        bad = ({"p1": "abc", "p2plus": 1e-4}, {"p1": 0.5, "p2plus": None},
               {"p1": 0.5, "p2plus": 1e-4, "flags": 3})
        for data in bad:
            with self.assertRaises(DataError):
                PhotonNumberStats.from_dict(data)


class TestPairThreshold(unittest.TestCase):

    def test_values(self):
        self.assertEqual(pair_threshold(0.0), 0.0)
        self.assertAlmostEqual(pair_threshold(PE_MEASURED), 4.6265e-4, delta=1e-7)
        self.assertAlmostEqual(pair_threshold(1e-2), 5.38125e-2, places=12)

    def test_out_of_range(self):
        for pe in (-1e-6, 1.5, float("nan")):
            with self.assertRaises(ParameterError):
                pair_threshold(pe)

    def test_strictly_increasing_and_dominated_by_first_term(self):
        grid = [10 ** (-k / 4.0) for k in range(40, 15, -1)]
        values = [pair_threshold(pe) for pe in grid]
        self.assertTrue(all(b > a for a, b in zip(values, values[1:])))
        for pe in grid:
            if pe < 1e-4:
                self.assertGreaterEqual(0.5 * math.sqrt(pe) / pair_threshold(pe), 0.99)

    def test_poisson_boundary_lies_above_threshold_within_bound(self):
        for pe, threshold, boundary in boundary_curve([1e-8, 1e-6, 1e-4, 1e-2, 0.1, 0.3]):
            self.assertGreaterEqual(boundary, threshold - 1e-15)
            self.assertLessEqual(boundary - threshold, poisson_excess_bound(pe) + 1e-15)
        self.assertEqual(poisson_pair_boundary(0.0), 0.0)


class TestPairViolation(unittest.TestCase):

    def test_measured_point_is_certified(self):
        report = pair_violation(PairClickStats(ps=PS_MEASURED, pe=PE_MEASURED))
        self.assertAlmostEqual(report.difference, 1.1135e-4, delta=1e-8)
        self.assertTrue(report.certified)
        self.assertIsNone(report.significance)

    def test_below_threshold_is_not_certified(self):
        report = pair_violation(PairClickStats(ps=1e-4, pe=PE_MEASURED))
        self.assertLess(report.difference, 0)
        self.assertFalse(report.certified)

    def test_significance_with_poisson_errors(self):
        report = pair_violation(poisson_stats(PS_MEASURED, PE_MEASURED, 10 ** 9))
        self.assertAlmostEqual(report.significance, 14.0, delta=0.1)

    def test_significance_scales_with_sqrt_n(self):
        small = pair_violation(poisson_stats(PS_MEASURED, PE_MEASURED, 10 ** 7)).significance
        large = pair_violation(poisson_stats(PS_MEASURED, PE_MEASURED, 4 * 10 ** 7)).significance
        self.assertAlmostEqual(large / small, 2.0, places=9)

    def test_zero_error_probability_gives_one_sided_bound(self):
        with self.assertLogs("backend.qng_criteria", level="WARNING"):
            report = pair_violation(PairClickStats(ps=1e-3, pe=0.0, sigma_ps=1e-5, sigma_pe=1e-8))
        self.assertTrue(report.significance_one_sided)
        self.assertAlmostEqual(report.significance, (1e-3 - pair_threshold(1e-8)) / 1e-5, places=9)

    def test_from_dict_rejects_missing_fields(self):
        with self.assertRaises(DataError):
            PairClickStats.from_dict({"ps": 1e-3})


class TestPairDepth(unittest.TestCase):

    def test_measured_depth(self):
        report = pair_depth(poisson_stats(PS_MEASURED, PE_MEASURED, 10 ** 9))
        self.assertAlmostEqual(report.t_coin_db, 0.9394, delta=0.01)
        self.assertLessEqual(report.t_coin_exact_db, report.t_coin_db + 1e-6)
        self.assertGreater(report.t_coin_sigma_db, 0)

    def test_direct_evaluation(self):
        self.assertAlmostEqual(pair_depth(PairClickStats(ps=1e-3, pe=1e-8)).t_coin_db, 13.01, places=2)

    def test_not_violated_is_a_distinct_error(self):
        pe = 1e-6
        with self.assertRaises(DepthUndefinedError):
            pair_depth(PairClickStats(ps=math.sqrt(pe) / 2, pe=pe))
        with self.assertRaises(DepthUndefinedError):
            critical_transmissivity(1e-4, PE_MEASURED)

    def test_zero_error_probability_is_unbounded(self):
        report = pair_depth(PairClickStats(ps=1e-3, pe=0.0))
        self.assertTrue(report.depth_unbounded)
        self.assertIsNone(report.t_coin_db)

    def test_exact_and_approximate_agree_at_small_pe(self):
        for pe in (1e-8, 1e-7, 1e-6, 5e-6):
            report = pair_depth(PairClickStats(ps=math.sqrt(pe), pe=pe))
            self.assertLessEqual(report.t_coin_exact_db, report.t_coin_db + 1e-6)
            self.assertLess(report.t_coin_db - report.t_coin_exact_db, 0.005)

    def test_approximate_depth_attenuation_law(self):
        stats = PairClickStats(ps=1e-3, pe=1e-7)
        base = pair_depth(stats).t_coin_db
        for t in (0.9, 0.5, 0.2):
            self.assertAlmostEqual(pair_depth(stats.attenuated(t)).t_coin_db, base + 10 * math.log10(t), places=9)


class TestDepthCurve(unittest.TestCase):

    def setUp(self):
        self.stats = PairClickStats(ps=PS_MEASURED, pe=PE_MEASURED)
        self.curve = depth_curve(self.stats, [1.0, 0.9, 0.7, 0.5, 0.25])

    def test_unit_transmissivity_is_identity(self):
        first = self.curve[0]
        self.assertEqual(first.transmissivity, 1.0)
        self.assertEqual((first.pe, first.ps), (PE_MEASURED, PS_MEASURED))

    def test_ratio_is_constant(self):
        ratios = [p.ps / p.pe for p in self.curve]
        for r in ratios:
            self.assertAlmostEqual(r / ratios[0], 1.0, places=12)

    def test_critical_point_on_boundary(self):
        critical = [p for p in self.curve if p.critical]
        self.assertEqual(len(critical), 1)
        self.assertAlmostEqual(critical[0].ps, pair_threshold(critical[0].pe), delta=1e-9)
        ts = [p.transmissivity for p in self.curve]
        self.assertEqual(ts, sorted(ts, reverse=True))

    def test_invalid_transmissivity(self):
        for t in (0.0, 1.2, -0.5):
            with self.assertRaises(ParameterError):
                depth_curve(self.stats, [t])


if __name__ == '__main__':
    unittest.main()
