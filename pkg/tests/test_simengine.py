import math
import unittest
from unittest import mock

import numpy as np

from src.qpbench.assess import estimate_fidelity
from src.qpbench.density import run_density_matrix, success_probability, transmit_decay_fidelity
from src.qpbench.errors import ConfigError, SimulationError
from src.qpbench.models import NoiseModel, Path, ProtocolId
from src.qpbench.protocols import build_circuit, min_path_len, swap_distance, variants_for
from src.qpbench.simulator import run_trajectories

NOISY = NoiseModel(p1=0.01, p2=0.03, readout_eps=0.02, idle_damping=0.01)


def _within(observed: float, expected: float, shots: int, sigmas: float = 4.5) -> bool:
    se = math.sqrt(max(expected * (1 - expected), 1e-6) / shots)
    return abs(observed - expected) <= sigmas * se + 1e-9


class TestNoiselessTrajectories(unittest.TestCase):
    def test_every_protocol_succeeds_without_noise(self):
        for pid in ProtocolId:
            n = min_path_len(pid) + 1
            results = {}
            for variant in variants_for(pid):
                circuit = build_circuit(pid, list(range(n)), variant)
                results[variant] = run_trajectories(circuit, NoiseModel(), 256, seed=7)
                self.assertEqual(results[variant].frequency(circuit.success.evaluate), 1.0,
                                 f"{pid.value} {variant.label}")
            estimate = estimate_fidelity(pid, results, path=Path(tuple(range(n))))
            self.assertEqual(estimate.value, 1.0)

    def test_feed_forward_teleportation(self):
        for variant in variants_for("teleportation"):
            circuit = build_circuit("teleportation", list(range(5)), variant, feed_forward=True)
            result = run_trajectories(circuit, NoiseModel(), 200, seed=3)
            self.assertEqual(result.frequency(circuit.success.evaluate), 1.0, variant.label)

    def test_haar_transmit(self):
        for variant in variants_for("transmit", haar_samples=4, seed=5):
            circuit = build_circuit("transmit", list(range(4)), variant)
            result = run_trajectories(circuit, NoiseModel(), 200, seed=1)
            self.assertEqual(result.frequency(circuit.success.evaluate), 1.0)

    def test_decomposed_swaps_are_equivalent_without_noise(self):
        variant = variants_for("super_dense_coding")[2]
        circuit = build_circuit("super_dense_coding", list(range(6)), variant)
        result = run_trajectories(circuit, NoiseModel(), 128, seed=0, decompose_swap=True)
        self.assertEqual(result.counts, {variant.expected: 128})


class TestTrajectoryContract(unittest.TestCase):
    def setUp(self):
        self.circuit = build_circuit("transmit", list(range(6)), variants_for("transmit")[4])

    def test_same_seed_same_counts(self):
        a = run_trajectories(self.circuit, NOISY, 500, seed=42)
        b = run_trajectories(self.circuit, NOISY, 500, seed=42)
        self.assertEqual(a.counts, b.counts)
        self.assertEqual(a.metadata["seed"], 42)
        self.assertEqual(sum(a.counts.values()), 500)

    def test_register_limit(self):
        with self.assertRaises(SimulationError):
            run_trajectories(self.circuit, NOISY, 10, seed=0, max_qubits=5)

    def test_zero_shots_rejected(self):
        with self.assertRaises(SimulationError):
            run_trajectories(self.circuit, NOISY, 0, seed=0)

    def test_noise_parameters_validated(self):
        with self.assertRaises(ConfigError):
            NoiseModel(p2=1.5)
        with self.assertRaises(ConfigError):
            NoiseModel(readout_eps=-0.1)


class TestDensityMatrix(unittest.TestCase):
    def test_distribution_is_normalized(self):
        for pid in ProtocolId:
            circuit = build_circuit(pid, list(range(min_path_len(pid) + 1)), variants_for(pid)[0])
            distribution = run_density_matrix(circuit, NOISY)
            self.assertAlmostEqual(sum(distribution.values()), 1.0, places=10)
            self.assertTrue(all(len(k) == circuit.num_clbits for k in distribution))

    def test_noiseless_success(self):
        for pid in ProtocolId:
            n = min_path_len(pid) + 1
            for variant in variants_for(pid):
                circuit = build_circuit(pid, list(range(n)), variant)
                self.assertAlmostEqual(success_probability(circuit, run_density_matrix(circuit, NoiseModel())), 1.0,
                                       places=10, msg=f"{pid.value} {variant.label}")

    def test_readout_error_alone(self):
        circuit = build_circuit("transmit", list(range(4)), variants_for("transmit")[1])
        distribution = run_density_matrix(circuit, NoiseModel(readout_eps=0.1))
        self.assertAlmostEqual(success_probability(circuit, distribution), 0.9, places=12)

    def test_idle_damping_hurts_a_waiting_pair(self):
        # the trailing half of the pair idles while the leading half starts moving
        circuit = build_circuit("bell_state_transfer", list(range(5)), variants_for("bell_state_transfer")[0])
        self.assertAlmostEqual(success_probability(circuit, run_density_matrix(circuit, NoiseModel())), 1.0, places=10)
        damped = success_probability(circuit, run_density_matrix(circuit, NoiseModel(idle_damping=0.05)))
        self.assertLess(damped, 1.0 - 1e-6)

    def test_decomposed_swaps_accumulate_more_noise(self):
        circuit = build_circuit("transmit", list(range(5)), variants_for("transmit")[2])
        noise = NoiseModel(p2=0.02)
        native = success_probability(circuit, run_density_matrix(circuit, noise))
        decomposed = success_probability(circuit, run_density_matrix(circuit, noise, decompose_swap=True))
        self.assertLess(decomposed, native)

    def test_register_limit(self):
        circuit = build_circuit("transmit", list(range(12)), variants_for("transmit")[0])
        with self.assertRaises(SimulationError):
            run_density_matrix(circuit, NoiseModel())


class TestOracleEquivalence(unittest.TestCase):
    SHOTS = 20000

    def _check(self, circuit, noise, seed):
        expected = success_probability(circuit, run_density_matrix(circuit, noise))
        observed = run_trajectories(circuit, noise, self.SHOTS, seed=seed).frequency(circuit.success.evaluate)
        self.assertTrue(_within(observed, expected, self.SHOTS),
                        f"{circuit.label}: trajectory {observed:.4f} vs oracle {expected:.4f}")

    def test_each_protocol_one_past_its_minimum(self):
        for i, pid in enumerate(ProtocolId):
            n = min_path_len(pid) + 1
            for j, variant in enumerate(variants_for(pid)[:2]):
                self._check(build_circuit(pid, list(range(n)), variant), NOISY, seed=100 + 10 * i + j)

    def test_feed_forward_and_decomposed_swaps(self):
        circuit = build_circuit("teleportation", list(range(5)), variants_for("teleportation")[3], feed_forward=True)
        self._check(circuit, NOISY, seed=5)
        circuit = build_circuit("transmit", list(range(5)), variants_for("transmit")[5])
        expected = success_probability(circuit, run_density_matrix(circuit, NOISY, decompose_swap=True))
        observed = run_trajectories(circuit, NOISY, self.SHOTS, seed=6, decompose_swap=True).frequency(
            circuit.success.evaluate)
        self.assertTrue(_within(observed, expected, self.SHOTS))


class TestAnalyticDecay(unittest.TestCase):
    def _oracle_average(self, d: int, p2: float) -> float:
        probs = []
        for variant in variants_for("transmit"):
            circuit = build_circuit("transmit", list(range(d + 1)), variant)
            probs.append(success_probability(circuit, run_density_matrix(circuit, NoiseModel(p2=p2))))
        return sum(probs) / len(probs)

    def test_closed_form_matches_oracle(self):
        for p2 in (0.01, 0.05, 0.2):
            for d in range(1, 7):
                self.assertEqual(swap_distance("transmit", d + 1), d)
                self.assertAlmostEqual(self._oracle_average(d, p2), transmit_decay_fidelity(p2, d), delta=1e-9)

    def test_full_depolarization(self):
        self.assertAlmostEqual(transmit_decay_fidelity(15 / 16, 3), 0.5, places=12)
        self.assertAlmostEqual(self._oracle_average(2, 15 / 16), 0.5, delta=1e-9)
        self.assertEqual(transmit_decay_fidelity(0.0, 6), 1.0)

    def test_trajectories_follow_the_closed_form(self):
        p2 = 0.05
        shots = 20000
        for d in (1, 3, 6):
            results = {}
            for k, variant in enumerate(variants_for("transmit")):
                circuit = build_circuit("transmit", list(range(d + 1)), variant)
                results[variant] = run_trajectories(circuit, NoiseModel(p2=p2), shots, seed=1000 * d + k)
            estimate = estimate_fidelity("transmit", results)
            expected = transmit_decay_fidelity(p2, d)
            self.assertLessEqual(abs(estimate.value - expected), 4 * estimate.stderr + 1e-4,
                                 f"d={d}: {estimate.value:.4f} vs {expected:.4f}")


def _oracle_fidelity(n, variants, noise):
    probs = []
    for variant in variants:
        circuit = build_circuit("transmit", list(range(n)), variant)
        probs.append(success_probability(circuit, run_density_matrix(circuit, noise)))
    return probs


class TestNoiseTrends(unittest.TestCase):
    def test_transmit_fidelity_never_rises_with_length(self):
        for noise in (NOISY, NoiseModel(p2=0.02)):
            averages = [sum(_oracle_fidelity(n, variants_for("transmit"), noise)) / 6 for n in range(2, 9)]
            for shorter, longer in zip(averages, averages[1:]):
                self.assertLessEqual(longer, shorter + 1e-12, f"{noise}: {averages}")
            self.assertLess(averages[-1], averages[0])


class TestHaarAgreement(unittest.TestCase):
    # p1 stays off: cardinal and Haar preparations use different single-qubit gate counts
    @staticmethod
    def _channels():
        rng = np.random.default_rng(11)
        return [NoiseModel(p2=float(rng.uniform(0.01, 0.2)), readout_eps=float(rng.uniform(0.0, 0.1)),
                           idle_damping=float(rng.uniform(0.0, 0.05))) for _ in range(2)]

    def test_cardinal_average_matches_haar_monte_carlo(self):
        for k, noise in enumerate(self._channels()):
            cardinal = sum(_oracle_fidelity(3, variants_for("transmit"), noise)) / 6
            samples = np.array(_oracle_fidelity(3, variants_for("transmit", haar_samples=1000, seed=k), noise))
            stderr = samples.std(ddof=1) / math.sqrt(len(samples))
            self.assertLessEqual(abs(samples.mean() - cardinal), 3 * stderr + 1e-9,
                                 f"{noise}: haar {samples.mean():.6f} vs cardinal {cardinal:.6f}")

    def test_haar_estimate_under_noise(self):
        noise = NoiseModel(p2=0.05, readout_eps=0.02, idle_damping=0.01)
        cardinal = sum(_oracle_fidelity(4, variants_for("transmit"), noise)) / 6
        results = {}
        for k, variant in enumerate(variants_for("transmit", haar_samples=30, seed=4)):
            circuit = build_circuit("transmit", list(range(4)), variant)
            results[variant] = run_trajectories(circuit, noise, 400, seed=300 + k)
        estimate = estimate_fidelity("transmit", results)
        self.assertEqual(estimate.shots_used, 30 * 400)
        self.assertLessEqual(abs(estimate.value - cardinal), 4 * estimate.stderr + 1e-3,
                             f"haar {estimate.value:.4f} vs cardinal {cardinal:.4f}")


class TestNormGuard(unittest.TestCase):
    def test_drift_is_reported_at_the_layer_that_caused_it(self):
        circuit = build_circuit("transmit", list(range(4)), variants_for("transmit")[2])
        with mock.patch("src.qpbench.simulator.matrix_for", return_value=1.5 * np.eye(2)):
            with self.assertRaises(SimulationError) as ctx:
                run_trajectories(circuit, NoiseModel(p2=0.01), 16, seed=0)
        self.assertIn("after layer 1", str(ctx.exception))


if __name__ == '__main__':
    unittest.main()
