import math
import os
import sys
import tempfile
import unittest

import numpy as np

sys.path.append(os.path.join(os.path.dirname(__file__), '..', '..'))

from backend.errors import DataError, ParameterError
from backend.polarization_entanglement import (
    CHSH_X_SETTINGS,
    CHSH_XX_SETTINGS,
    KET_HH,
    PHI_MINUS,
    PHI_PLUS,
    SIGMA_Y,
    SIGMA_Z,
    DensityMatrix,
    MeasurementSetting,
    TomographyCounts,
    chsh_expectation,
    chsh_from_counts,
    fidelity,
    outcome_probabilities,
    phase_optimized_fidelity,
    read_chsh_csv,
    sample_phase_rotated_pairs,
    sample_polarization_pair,
    sample_polarization_pairs,
    state_fidelity,
    tomography_reconstruct,
)

TSIRELSON = 2 * math.sqrt(2)


def ideal_chsh_counts(rho, total):
    counts = np.zeros((2, 2, 2, 2))
    for i, sx in enumerate(CHSH_X_SETTINGS):
        for j, sxx in enumerate(CHSH_XX_SETTINGS):
            counts[i, j] = outcome_probabilities(rho, sx, sxx).reshape(2, 2) * total
    return counts


def sampled_chsh_counts(rho, size, rng):
    counts = np.zeros((2, 2, 2, 2))
    for i, sx in enumerate(CHSH_X_SETTINGS):
        for j, sxx in enumerate(CHSH_XX_SETTINGS):
            a, b = sample_polarization_pairs(rho, sx, sxx, size, rng)
            for ia, va in enumerate((1, -1)):
                for ib, vb in enumerate((1, -1)):
                    counts[i, j, ia, ib] = np.sum((a == va) & (b == vb))
    return counts


def random_state(rng, purity_weight=0.9):
    ket = rng.normal(size=4) + 1j * rng.normal(size=4)
    ket /= np.linalg.norm(ket)
    return DensityMatrix(purity_weight * np.outer(ket, ket.conj()) + (1 - purity_weight) * np.eye(4) / 4)


class TestDensityMatrix(unittest.TestCase):

    def test_invalid_matrices(self):
        with self.assertRaises(ParameterError):
            DensityMatrix(np.eye(4))
        with self.assertRaises(ParameterError):
            DensityMatrix(np.diag([1.5, -0.5, 0, 0]))
        with self.assertRaises(ParameterError):
            DensityMatrix.from_pure([1, 1, 0, 0])

    def test_concurrence(self):
        self.assertAlmostEqual(DensityMatrix.from_pure(PHI_PLUS).concurrence(), 1.0, places=6)
        self.assertAlmostEqual(DensityMatrix.from_pure(KET_HH).concurrence(), 0.0, places=6)
        self.assertAlmostEqual(DensityMatrix.werner(0.8).concurrence(), 0.7, places=6)

    def test_purity(self):
        self.assertAlmostEqual(DensityMatrix.from_pure(PHI_PLUS).purity(), 1.0)
        self.assertAlmostEqual(DensityMatrix.maximally_mixed().purity(), 0.25)

    def test_coherence_phase(self):
        rotated = DensityMatrix.from_pure(PHI_PLUS).with_coherence_phase(math.pi)
        self.assertAlmostEqual(fidelity(rotated, PHI_MINUS), 1.0, places=12)

    def test_bloch_vector_must_be_unit(self):
        with self.assertRaises(ParameterError):
            MeasurementSetting((1.0, 1.0, 0.0))


class TestChsh(unittest.TestCase):

    def test_expectation_values(self):
        self.assertAlmostEqual(chsh_expectation(DensityMatrix.from_pure(PHI_PLUS)).s_value, TSIRELSON, places=12)
        self.assertAlmostEqual(chsh_expectation(DensityMatrix.werner(0.8)).s_value, TSIRELSON * 0.8, places=12)
        self.assertAlmostEqual(chsh_expectation(DensityMatrix.from_pure(KET_HH)).s_value, math.sqrt(2), places=12)

    def test_from_ideal_counts(self):
        result = chsh_from_counts(ideal_chsh_counts(DensityMatrix.from_pure(PHI_PLUS), 1e6))
        self.assertAlmostEqual(result.s_value, TSIRELSON, places=9)

    def test_uniform_counts(self):
        result = chsh_from_counts(np.full((2, 2, 2, 2), 250.0))
        self.assertEqual(result.s_value, 0.0)
        self.assertAlmostEqual(result.sigma_s, math.sqrt(4 / 1000))

    def test_sampled_werner_state(self):
        rho = DensityMatrix.werner(0.8)
        result = chsh_from_counts(sampled_chsh_counts(rho, 10 ** 6, np.random.default_rng(17)))
        self.assertLess(abs(result.s_value - TSIRELSON * 0.8), 4 * result.sigma_s)

    def test_swapping_outcome_labels_flips_correlator(self):
        counts = ideal_chsh_counts(DensityMatrix.werner(0.9), 1e5)
        swapped = counts.copy()
        swapped[0, 0] = counts[0, 0][:, ::-1]
        e = chsh_from_counts(counts).correlators
        f = chsh_from_counts(swapped).correlators
        self.assertAlmostEqual(f[0], -e[0], places=12)
        self.assertEqual(e[1:], f[1:])

    def test_invalid_counts(self):
        with self.assertRaises(DataError):
            chsh_from_counts(np.zeros((2, 2, 2, 2)))
        with self.assertRaises(DataError):
            chsh_from_counts(np.ones((2, 2, 2)))

    def test_read_csv(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "chsh.csv")
            with open(path, "w") as fh:
                fh.write("setting_x,setting_xx,outcome_x,outcome_xx,count\n")
                for i in range(2):
                    for j in range(2):
                        fh.write(f"{i},{j},1,1,40\n{i},{j},-1,-1,40\n{i},{j},1,-1,10\n{i},{j},-1,1,10\n")
            counts = read_chsh_csv(path)
        self.assertEqual(counts[1, 0, 0, 1], 10)
        self.assertAlmostEqual(chsh_from_counts(counts).correlators[0], 0.6)


class TestTomography(unittest.TestCase):

    def test_noiseless_bell_state(self):
        rho = tomography_reconstruct(TomographyCounts.expected(DensityMatrix.from_pure(PHI_PLUS), 1e6))
        self.assertGreaterEqual(fidelity(rho, PHI_PLUS), 0.9999)

    def test_sampled_random_state(self):
        rng = np.random.default_rng(23)
        truth = random_state(rng)
        expected = TomographyCounts.expected(truth, 1e6)
        counts = TomographyCounts(rng.poisson(expected.counts))
        self.assertGreaterEqual(state_fidelity(tomography_reconstruct(counts), truth), 0.995)

    def test_maximally_mixed(self):
        rng = np.random.default_rng(29)
        expected = TomographyCounts.expected(DensityMatrix.maximally_mixed(), 1e6)
        rho = tomography_reconstruct(TomographyCounts(rng.poisson(expected.counts)))
        np.testing.assert_allclose(rho.eigenvalues, 0.25, atol=0.01)

    def test_adversarial_counts_give_physical_state(self):
        rng = np.random.default_rng(31)
        rho = tomography_reconstruct(TomographyCounts(rng.integers(0, 1000, (4, 4))))
        self.assertGreaterEqual(rho.eigenvalues.min(), -1e-9)
        self.assertAlmostEqual(np.trace(rho.matrix).real, 1.0, places=9)

    def test_all_zero_counts(self):
        with self.assertRaises(DataError):
            tomography_reconstruct(TomographyCounts(np.zeros((4, 4))))

    def write_counts(self, tmp, rows):
        path = os.path.join(tmp, "tomo.csv")
        with open(path, "w") as fh:
            fh.write("x,xx,count,norm\n" + "".join(f"{row}\n" for row in rows))
        return path

    def test_read_csv_with_norm(self):
        rows = ["H,H,100,2", "v,V,50,"] + [f"{a},{b},10," for a in "HVDR" for b in "HVDR"
                                             if (a, b) not in (("H", "H"), ("V", "V"))]
        with tempfile.TemporaryDirectory() as tmp:
            counts = TomographyCounts.read_csv(self.write_counts(tmp, rows))
        self.assertEqual(counts.counts[0, 0], 100)
        self.assertEqual(counts.norm[0, 0], 2)
        self.assertEqual(counts.norm[1, 1], 1)
        self.assertEqual(counts.counts[3, 2], 10)

    def test_read_csv_requires_every_setting(self):
        rows = [f"{a},{b},100," for a in "HV" for b in "HV"]
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaisesRegex(DataError, "not informationally complete"):
                TomographyCounts.read_csv(self.write_counts(tmp, rows))

    def test_read_csv_rejects_repeated_setting(self):
        rows = [f"{a},{b},10," for a in "HVDR" for b in "HVDR"] + ["H,H,5,"]
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(DataError):
                TomographyCounts.read_csv(self.write_counts(tmp, rows))


class TestFidelity(unittest.TestCase):

    def test_reference_values(self):
        self.assertAlmostEqual(fidelity(DensityMatrix.from_pure(PHI_PLUS)), 1.0, places=12)
        self.assertAlmostEqual(fidelity(DensityMatrix.maximally_mixed()), 0.25, places=12)
        p = 0.8787
        self.assertAlmostEqual(fidelity(DensityMatrix.werner(p)), (1 + 3 * p) / 4, places=9)

    def test_global_phase_invariance(self):
        rho = DensityMatrix.werner(0.7)
        self.assertAlmostEqual(fidelity(rho, 1j * PHI_PLUS), fidelity(rho, PHI_PLUS), places=12)

    def test_unnormalized_target(self):
        with self.assertRaises(ParameterError):
            fidelity(DensityMatrix.maximally_mixed(), PHI_PLUS * 2)

    def test_phase_optimized(self):
        rho = DensityMatrix.from_pure(PHI_MINUS)
        self.assertAlmostEqual(fidelity(rho, PHI_PLUS), 0.0, places=12)
        self.assertAlmostEqual(phase_optimized_fidelity(rho), 1.0, places=12)

    def test_state_fidelity_matches_pure_target(self):
        rho = DensityMatrix.werner(0.6)
        self.assertAlmostEqual(state_fidelity(rho, DensityMatrix.from_pure(PHI_PLUS)), fidelity(rho), places=9)

    def test_state_fidelity_is_symmetric_for_pure_arguments(self):
        rho = DensityMatrix.werner(0.6)
        pure = DensityMatrix.from_pure(PHI_PLUS)
        self.assertAlmostEqual(state_fidelity(pure, rho), state_fidelity(rho, pure), places=12)

    def test_state_fidelity_of_mixed_states(self):
        p = 0.6
        expected = (math.sqrt((1 + 3 * p) / 16) + 3 * math.sqrt((1 - p) / 16)) ** 2
        fid = state_fidelity(DensityMatrix.werner(p), DensityMatrix.maximally_mixed())
        self.assertAlmostEqual(fid, expected, places=9)
        self.assertAlmostEqual(state_fidelity(DensityMatrix.werner(p), DensityMatrix.werner(p)), 1.0, places=9)


class TestSampling(unittest.TestCase):

    def test_product_state_is_deterministic(self):
        rng = np.random.default_rng(1)
        rho = DensityMatrix.from_pure(KET_HH)
        for _ in range(20):
            self.assertEqual(sample_polarization_pair(rho, (SIGMA_Z, SIGMA_Z), rng), (1, 1))

    def test_bell_state_correlations(self):
        rng = np.random.default_rng(2)
        rho = DensityMatrix.from_pure(PHI_PLUS)
        a, b = sample_polarization_pairs(rho, SIGMA_Z, SIGMA_Z, 10 ** 5, rng)
        np.testing.assert_array_equal(a, b)
        a, b = sample_polarization_pairs(rho, SIGMA_Z, SIGMA_Y, 10 ** 6, rng)
        self.assertLess(abs(np.mean(a * b)), 4e-3)

    def test_zero_phase_matches_plain_sampling(self):
        rng = np.random.default_rng(3)
        rho = DensityMatrix.from_pure(PHI_PLUS)
        a, b = sample_phase_rotated_pairs(rho, SIGMA_Y, CHSH_XX_SETTINGS[1], np.zeros(10 ** 5), rng)
        expected = chsh_expectation(rho).correlators[3]
        self.assertLess(abs(np.mean(a * b) - expected), 4 * math.sqrt((1 - expected ** 2) / 10 ** 5) + 1e-3)

    def test_random_phases_remove_coherence(self):
        rng = np.random.default_rng(4)
        rho = DensityMatrix.from_pure(PHI_PLUS)
        phases = rng.uniform(0, 2 * math.pi, 10 ** 5)
        a, b = sample_phase_rotated_pairs(rho, SIGMA_Y, SIGMA_Y, phases, rng)
        self.assertLess(abs(np.mean(a * b)), 0.02)


if __name__ == '__main__':
    unittest.main()
