import math
import unittest
from fractions import Fraction

from src.qpbench.assess import aggregate, estimate_fidelity, pass_decision
from src.qpbench.errors import AssessmentError
from src.qpbench.models import Decision, FidelityEstimate, Path, ProtocolId, ShotResult, Stage
from src.qpbench.protocols import variants_for

TWO_THIRDS = float(Fraction(2, 3))


def _estimate(value, path=(0, 1, 2), protocol=ProtocolId.TRANSMIT):
    return FidelityEstimate(value=value, stderr=0.01, shots_used=6000, path=Path(path), protocol=protocol)


def _flip(bits: str) -> str:
    return "".join("1" if b == "0" else "0" for b in bits)


def _cardinal_results(successes: int, shots: int):
    """Transmit results where every prepared state reads back correctly `successes` times."""
    results = {}
    for variant in variants_for("transmit"):
        good = variant.expected
        counts = {good: successes}
        if shots > successes:
            counts[_flip(good)] = shots - successes
        results[variant] = ShotResult(counts=counts, shots=shots)
    return results


class TestDecisions(unittest.TestCase):
    def test_threshold_fixtures(self):
        self.assertIs(pass_decision(aggregate((1,), "bell_state_transfer", Stage.AL, [_estimate(0.5, protocol=ProtocolId.BELL_STATE_TRANSFER)]), 0.5), Decision.PASS)
        self.assertIs(pass_decision(aggregate((1,), "transmit", Stage.AL, [_estimate(0.664)]), TWO_THIRDS), Decision.FAIL)
        self.assertIs(pass_decision(aggregate((1,), "transmit", Stage.AL, [_estimate(0.656)]), TWO_THIRDS), Decision.FAIL)
        self.assertIs(pass_decision(aggregate((1,), "transmit", Stage.AL, [_estimate(0.7)]), TWO_THIRDS), Decision.PASS)

    def test_decision_uses_the_minimum(self):
        stats = aggregate((2,), "transmit", Stage.C2C, [_estimate(0.95, (0, 1)), _estimate(0.6, (1, 2)),
                                                        _estimate(0.9, (2, 3))])
        self.assertIs(pass_decision(stats, TWO_THIRDS), Decision.FAIL)


class TestEstimateFidelity(unittest.TestCase):
    def test_average_over_cardinal_states(self):
        estimate = estimate_fidelity("transmit", _cardinal_results(900, 1000), path=Path((0, 1, 2)), seed=5)
        self.assertAlmostEqual(estimate.value, 0.9)
        self.assertEqual(estimate.shots_used, 6000)
        self.assertEqual(estimate.seed, 5)
        self.assertAlmostEqual(estimate.stderr, math.sqrt(6 * 0.09 / 1000) / 6)

    def test_stderr_of_a_near_threshold_estimate(self):
        estimate = estimate_fidelity("transmit", _cardinal_results(830_000, 1_250_000))
        self.assertAlmostEqual(estimate.value, 0.664)
        self.assertGreater(estimate.stderr, 5e-5)
        self.assertLess(estimate.stderr, 2e-4)

    def test_missing_variant(self):
        results = _cardinal_results(10, 10)
        results.pop(next(iter(results)))
        with self.assertRaises(AssessmentError):
            estimate_fidelity("transmit", results)

    def test_zero_shot_variant(self):
        results = _cardinal_results(10, 10)
        results[next(iter(results))] = ShotResult(counts={}, shots=0)
        with self.assertRaises(AssessmentError):
            estimate_fidelity("transmit", results)

    def test_super_dense_coding_messages(self):
        results = {v: ShotResult(counts={v.expected: 75, _flip(v.expected): 25}, shots=100)
                   for v in variants_for("super_dense_coding")}
        self.assertAlmostEqual(estimate_fidelity("super_dense_coding", results).value, 0.75)

    def test_entanglement_swapping_witness(self):
        xx, yy, zz = variants_for("entanglement_swapping")
        # clbits: 0/1 Bell-measurement outcome, 2/3 the two end qubits
        perfect = {
            xx: ShotResult(counts={"0000": 100}, shots=100),
            yy: ShotResult(counts={"0001": 100}, shots=100),
            zz: ShotResult(counts={"0011": 100}, shots=100),
        }
        self.assertAlmostEqual(estimate_fidelity("entanglement_swapping", perfect).value, 1.0)

        half = {v: ShotResult(counts={"0000": 50, "0001": 50}, shots=100) for v in (xx, yy, zz)}
        witness = estimate_fidelity("entanglement_swapping", half)
        self.assertAlmostEqual(witness.value, 0.25)
        self.assertAlmostEqual(witness.stderr, math.sqrt(3 * 0.25 / 100) / 2)

        # below the separable floor clamps to zero
        wrong = {
            xx: ShotResult(counts={"0001": 100}, shots=100),
            yy: ShotResult(counts={"0000": 100}, shots=100),
            zz: ShotResult(counts={"0001": 100}, shots=100),
        }
        self.assertEqual(estimate_fidelity("entanglement_swapping", wrong).value, 0.0)

    def test_pauli_frame_is_folded_in(self):
        # Bell outcome 01 (parity bit set) flips the expected Z-basis readout
        plus_z = variants_for("teleportation")[0]
        rule_results = {v: ShotResult(counts={"00" + v.expected: 10}, shots=10) for v in variants_for("teleportation")}
        rule_results[plus_z] = ShotResult(counts={"011": 10}, shots=10)
        estimate = estimate_fidelity("teleportation", rule_results)
        self.assertAlmostEqual(estimate.value, 1.0)


class TestAggregate(unittest.TestCase):
    def test_statistics(self):
        estimates = [_estimate(0.8, (0, 1)), _estimate(0.9, (1, 2)), _estimate(0.7, (2, 3))]
        stats = aggregate((1,), "transmit", "A-L", estimates)
        self.assertAlmostEqual(stats.mean, 0.8)
        self.assertEqual(stats.min, 0.7)
        self.assertEqual(stats.max, 0.9)
        self.assertEqual(stats.argmin, Path((2, 3)))
        self.assertIs(stats.stage, Stage.AL)
        self.assertEqual([e.path for e in stats.estimates], sorted(e.path for e in estimates))

    def test_argmin_tie_break(self):
        stats = aggregate((1,), "transmit", Stage.C2C, [_estimate(0.7, (5, 6)), _estimate(0.7, (1, 2))])
        self.assertEqual(stats.argmin, Path((1, 2)))

    def test_order_does_not_matter(self):
        estimates = [_estimate(0.1 * k + 0.05, (k, k + 1)) for k in range(9)]
        forward = aggregate((1,), "transmit", Stage.AL, estimates)
        backward = aggregate((1,), "transmit", Stage.AL, list(reversed(estimates)))
        self.assertEqual(forward, backward)

    def test_mean_stays_within_bounds(self):
        stats = aggregate((1,), "transmit", Stage.AL, [_estimate(0.7, (k, k + 1)) for k in range(7)])
        self.assertTrue(stats.min <= stats.mean <= stats.max)

    def test_empty_and_mixed_inputs(self):
        with self.assertRaises(AssessmentError):
            aggregate((1,), "transmit", Stage.AL, [])
        with self.assertRaises(AssessmentError):
            aggregate((1,), "transmit", Stage.AL, [_estimate(0.9), _estimate(0.9, protocol=ProtocolId.DO_NOTHING)])


if __name__ == '__main__':
    unittest.main()
