import math
import os
import sys
import unittest

import numpy as np

sys.path.append(os.path.join(os.path.dirname(__file__), '..', '..'))

from backend.errors import DataError, NoHeraldsError, ParameterError
from backend.estimators import (
    POISSON_UPPER_95,
    ClickCounts,
    g2_from_peaks,
    hbt_counts,
    pair_click_stats,
    photon_stats,
    prep_diagnostic,
    prep_efficiency,
)
from backend.photon_number_models import (
    DetectionChainParams,
    detected_pair_click_probs,
    sample_click_patterns,
    tmsv_distribution,
)
from backend.timetag_coincidence import PeakAreas, PulseClickTable


def dense_table(n, clicks):
    """clicks: {role column: pulse indices} with columns x1=0, x2=1, xx1=2, xx2=3."""
    dense = np.zeros((n, 4), dtype=bool)
    for col, pulses in clicks.items():
        dense[list(pulses), col] = True
    return PulseClickTable.from_dense(dense)


class TestHbtCounts(unittest.TestCase):

    def test_unheralded_counts(self):
        counts = hbt_counts(dense_table(10, {0: [1, 2], 1: [2]}))
        self.assertEqual((counts.n, counts.r1a, counts.r1b, counts.r2), (10, 2, 1, 1))
        self.assertFalse(counts.heralded)

    def test_heralded_counts(self):
        table = dense_table(10, {0: [1, 2], 1: [2], 2: [2, 5]})
        counts = hbt_counts(table, herald="xx1")
        self.assertEqual((counts.n, counts.r1a, counts.r1b, counts.r2), (2, 1, 1, 1))
        self.assertTrue(counts.heralded)

    def test_no_heralds(self):
        with self.assertRaises(NoHeraldsError):
            hbt_counts(dense_table(10, {0: [1]}), herald="xx")

    def test_missing_detector(self):
        table = PulseClickTable(4, np.array([0]), np.array([1], dtype=np.uint8), roles=("x1", "xx1"))
        with self.assertRaises(DataError):
            hbt_counts(table)

    def test_inconsistent_counts(self):
        with self.assertRaises(DataError):
            ClickCounts(10, 1, 1, 2)
        with self.assertRaises(DataError):
            ClickCounts(10, 11, 1, 0)


class TestPhotonStats(unittest.TestCase):

    def test_no_doubles(self):
        stats = photon_stats(ClickCounts(1000, 500, 500, 0))
        self.assertAlmostEqual(stats.p1, 1.0)
        self.assertEqual(stats.p2plus, 0.0)
        self.assertAlmostEqual(stats.p0, 0.0)

    def test_splitting_ratio_correction(self):
        counts = ClickCounts(10 ** 6, 100, 100, 1)
        self.assertAlmostEqual(photon_stats(counts, 0.5).p2plus, 2e-6, places=15)
        self.assertAlmostEqual(photon_stats(counts, 0.6).p2plus, 2.0833e-6, delta=1e-10)
        self.assertEqual(photon_stats(counts, 0.6).flags, ())

    def test_unbalanced_splitter_is_flagged(self):
        with self.assertLogs("backend.estimators", level="WARNING"):
            stats = photon_stats(ClickCounts(10 ** 6, 100, 100, 1), 0.3)
        self.assertIn("unbalanced_bs", stats.flags)

    def test_third_order_flag(self):
        with self.assertLogs("backend.estimators", level="WARNING"):
            stats = photon_stats(ClickCounts(1000, 300, 300, 20))
        self.assertIn("third_order", stats.flags)

    def test_degenerate_splitter(self):
        for ratio in (0.0, 1.0):
            with self.assertRaises(ParameterError):
                photon_stats(ClickCounts(100, 10, 10, 0), ratio)

    def test_relabelling_detectors(self):
        a = photon_stats(ClickCounts(10 ** 5, 700, 300, 4), 0.55)
        b = photon_stats(ClickCounts(10 ** 5, 300, 700, 4), 0.45)
        self.assertAlmostEqual(a.p1, b.p1, places=15)
        self.assertAlmostEqual(a.p2plus, b.p2plus, places=15)

    def test_poisson_uncertainties(self):
        stats = photon_stats(ClickCounts(10 ** 4, 50, 50, 4))
        self.assertAlmostEqual(stats.sigma_p1, 10 / 10 ** 4)
        self.assertAlmostEqual(stats.sigma_p2plus, 2 / (10 ** 4 * 0.5))

    def test_exclusive_singles(self):
        stats = photon_stats(ClickCounts(1000, 100, 100, 10), exclusive=True)
        self.assertAlmostEqual(stats.p1, 0.18)


class TestPeakEstimators(unittest.TestCase):

    def test_g2(self):
        g2 = g2_from_peaks(PeakAreas(10, (10 ** 4, 10 ** 4), (-1, 1), 1000.0))
        self.assertAlmostEqual(g2.value, 1e-3)
        self.assertAlmostEqual(g2.sigma, 1e-3 * math.sqrt(0.1 + 1 / 2e4))

    def test_g2_with_empty_zero_peak(self):
        g2 = g2_from_peaks(PeakAreas(0, (500, 500), (-1, 1), 1000.0))
        self.assertEqual(g2.value, 0.0)
        self.assertAlmostEqual(g2.upper_bound, POISSON_UPPER_95 / 500)

    def test_g2_needs_side_peaks(self):
        with self.assertRaises(DataError):
            g2_from_peaks(PeakAreas(5, (0, 0), (-1, 1), 1000.0))
        with self.assertRaises(ParameterError):
            g2_from_peaks(PeakAreas(5, (100,), (1,), 1000.0))

    def test_prep_efficiency(self):
        peaks = PeakAreas(10 ** 4, (8470, 8470), (-1, 1), 1000.0)
        self.assertAlmostEqual(prep_efficiency(peaks).value, 0.847)
        flat = PeakAreas(10 ** 4, (10 ** 4, 10 ** 4), (-1, 1), 1000.0)
        self.assertAlmostEqual(prep_efficiency(flat).value, 1.0)

    def test_prep_efficiency_empty_zero_peak(self):
        with self.assertRaises(DataError):
            prep_efficiency(PeakAreas(0, (10, 10), (-1, 1), 1000.0))

    def test_blinking_diagnostic(self):
        indices = tuple(k for n in range(1, 41) for k in (-n, n))
        counts = tuple(1200 if abs(k) <= 5 else 1000 for k in indices)
        diagnostic = prep_diagnostic(PeakAreas(1000, counts, indices, 1000.0))
        self.assertAlmostEqual(diagnostic.near.value, 1.2)
        self.assertAlmostEqual(diagnostic.far.value, 1.0)
        self.assertAlmostEqual(diagnostic.ratio, 1.2)


class TestPairClickStats(unittest.TestCase):

    def test_conventions(self):
        n = 8
        table = dense_table(n, {0: range(n), 2: range(n)})
        arm = pair_click_stats(table, convention="arm")
        self.assertEqual((arm.ps, arm.pe), (1.0, 0.0))
        self.assertEqual(pair_click_stats(table).ps, 0.25)

    def test_same_arm_doubles(self):
        stats = pair_click_stats(dense_table(4, {0: range(4), 1: range(4)}))
        self.assertEqual(stats.ps, 0.0)
        self.assertEqual(stats.pe_x, 1.0)
        self.assertEqual(stats.pe, 0.5)

    def test_missing_roles(self):
        table = PulseClickTable(4, np.array([0]), np.array([1], dtype=np.uint8), roles=("x1", "x2"))
        with self.assertRaises(DataError):
            pair_click_stats(table)

    def test_unknown_convention(self):
        with self.assertRaises(ParameterError):
            pair_click_stats(dense_table(4, {0: [1]}), convention="both")

    def test_sampled_table_matches_model(self):
        dist = tmsv_distribution(0.2, n_max=30)
        chain = DetectionChainParams.symmetric(0.6, dark_prob=1e-4)
        table = sample_click_patterns(dist, chain, 300_000, np.random.default_rng(5))
        measured = pair_click_stats(table)
        exact = detected_pair_click_probs(dist, chain)
        self.assertLess(abs(measured.ps - exact.ps), 8 * measured.sigma_ps)
        self.assertLess(abs(measured.pe - exact.pe), 8 * measured.sigma_pe)


if __name__ == '__main__':
    unittest.main()
