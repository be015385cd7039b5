import json
import os
import tempfile
import unittest
from fractions import Fraction

import yaml

from src.qpbench.errors import ProtocolError
from src.qpbench.models import Circuit, Path, ProtocolId, VariantKind
from src.qpbench.protocols import (
    build_circuit,
    export_circuit,
    load_registry,
    min_path_len,
    swap_distance,
    threshold,
    variants_for,
)


class TestSwapDistance(unittest.TestCase):
    def test_reference_values(self):
        self.assertEqual(swap_distance(ProtocolId.TRANSMIT, 4), 3)
        self.assertEqual(swap_distance(ProtocolId.ENTANGLEMENT_SWAPPING, 5), 0)
        self.assertEqual(swap_distance(ProtocolId.SUPER_DENSE_CODING, 12), 10)
        self.assertEqual(swap_distance("teleportation", 4), 1)
        self.assertEqual(swap_distance("bell_state_transfer", 7), 4)
        self.assertEqual(swap_distance("do_nothing", 2), 1)

    def test_linear_in_path_length(self):
        for pid in ProtocolId:
            start = min_path_len(pid)
            values = [swap_distance(pid, n) for n in range(start, start + 8)]
            self.assertEqual([b - a for a, b in zip(values, values[1:])], [1] * 7, pid.value)

    def test_below_minimum_rejected(self):
        with self.assertRaises(ProtocolError):
            swap_distance(ProtocolId.TELEPORTATION, 3)
        with self.assertRaises(ProtocolError):
            swap_distance(ProtocolId.ENTANGLEMENT_SWAPPING, 4)

    def test_zero_swap_mode(self):
        self.assertEqual(min_path_len(ProtocolId.TELEPORTATION, allow_zero_swap=True), 3)
        self.assertEqual(swap_distance(ProtocolId.TELEPORTATION, 3, allow_zero_swap=True), 0)
        self.assertEqual(min_path_len(ProtocolId.BELL_STATE_TRANSFER, allow_zero_swap=True), 3)
        # protocols without a zero-swap variant keep their minimum
        self.assertEqual(min_path_len(ProtocolId.SUPER_DENSE_CODING, allow_zero_swap=True), 3)


class TestThresholds(unittest.TestCase):
    def test_defaults(self):
        self.assertEqual(threshold(ProtocolId.TRANSMIT), float(Fraction(2, 3)))
        self.assertEqual(threshold(ProtocolId.DO_NOTHING), float(Fraction(2, 3)))
        self.assertEqual(threshold(ProtocolId.TELEPORTATION), float(Fraction(2, 3)))
        self.assertEqual(threshold(ProtocolId.BELL_STATE_TRANSFER), 0.5)
        self.assertEqual(threshold(ProtocolId.SUPER_DENSE_CODING), 0.5)
        self.assertEqual(threshold(ProtocolId.ENTANGLEMENT_SWAPPING), 0.5)

    def test_overrides(self):
        self.assertEqual(threshold("teleportation", {"teleportation": "0.7"}), 0.7)
        self.assertEqual(threshold("teleportation", {ProtocolId.TRANSMIT: 0.9}), float(Fraction(2, 3)))
        self.assertEqual(threshold("super_dense_coding", {"super_dense_coding": "3/4"}), 0.75)

    def test_invalid_overrides(self):
        with self.assertRaises(ProtocolError):
            threshold("transmit", {"transmit": "1.5"})
        with self.assertRaises(ProtocolError):
            threshold("transmit", {"transmit": "abc"})
        with self.assertRaises(ProtocolError):
            threshold("transmit", {"warp_drive": "0.5"})


class TestVariants(unittest.TestCase):
    def test_family_sizes(self):
        self.assertEqual(len(variants_for("transmit")), 6)
        self.assertEqual(len(variants_for("teleportation")), 6)
        self.assertEqual(len(variants_for("bell_state_transfer")), 1)
        self.assertEqual(len(variants_for("super_dense_coding")), 4)
        self.assertEqual([v.label for v in variants_for("entanglement_swapping")], ["XX", "YY", "ZZ"])

    def test_haar_samples_replace_cardinal_states(self):
        haar = variants_for("transmit", haar_samples=5, seed=11)
        self.assertEqual(len(haar), 5)
        self.assertTrue(all(v.kind is VariantKind.PREPARED_STATE and len(v.params) == 2 for v in haar))
        self.assertEqual(haar, variants_for("transmit", haar_samples=5, seed=11))
        self.assertNotEqual(haar, variants_for("transmit", haar_samples=5, seed=12))
        # message and setting families are unaffected
        self.assertEqual(len(variants_for("super_dense_coding", haar_samples=5)), 4)


class TestBuildCircuit(unittest.TestCase):
    def test_transmit_uses_one_swap_per_hop(self):
        for n in range(2, 9):
            path = Path(tuple(range(100, 100 + n)))
            circuit = build_circuit("transmit", path, variants_for("transmit")[0])
            self.assertEqual(circuit.swap_count, swap_distance("transmit", n))
            self.assertEqual(circuit.roster, path.qubits)
            self.assertEqual(circuit.num_clbits, 1)

    def test_teleportation_swaps(self):
        for n in range(4, 9):
            circuit = build_circuit("teleportation", list(range(n)), variants_for("teleportation")[2])
            self.assertEqual(circuit.swap_count, swap_distance("teleportation", n))
            self.assertEqual(circuit.num_clbits, 3)

    def test_feed_forward_adds_conditioned_corrections(self):
        variant = variants_for("teleportation")[0]
        deferred = build_circuit("teleportation", list(range(5)), variant)
        live = build_circuit("teleportation", list(range(5)), variant, feed_forward=True)
        self.assertFalse(any(op.condition is not None for op in deferred.ops))
        self.assertEqual(sum(1 for op in live.ops if op.condition is not None), 2)
        self.assertIsNotNone(deferred.success.frame)
        self.assertIsNone(live.success.frame)

    def test_two_qubit_gates_stay_on_neighbouring_positions(self):
        for pid in ProtocolId:
            n = min_path_len(pid) + 2
            for variant in variants_for(pid):
                circuit = build_circuit(pid, list(range(n)), variant)
                for op in circuit.ops:
                    if op.name in ("cx", "swap"):
                        self.assertEqual(abs(op.qubits[0] - op.qubits[1]), 1)

    def test_short_path_rejected(self):
        with self.assertRaises(ProtocolError):
            build_circuit("entanglement_swapping", [0, 1, 2, 3], variants_for("entanglement_swapping")[0])

    def test_foreign_variant_rejected(self):
        with self.assertRaises(ProtocolError):
            build_circuit("transmit", [0, 1, 2], variants_for("super_dense_coding")[0])

    def test_export_formats(self):
        circuit = build_circuit("super_dense_coding", [5, 6, 7, 8], variants_for("super_dense_coding")[3])
        as_json = json.loads(export_circuit(circuit, "json"))
        as_yaml = yaml.safe_load(export_circuit(circuit, "yaml"))
        self.assertEqual(as_json, as_yaml)
        self.assertEqual(as_json["roster"], [5, 6, 7, 8])
        self.assertEqual(Circuit.from_document(as_json), circuit)
        with self.assertRaises(ProtocolError):
            export_circuit(circuit, "qasm")


class TestProtocolDocuments(unittest.TestCase):
    def test_user_document_overrides_threshold(self):
        with tempfile.TemporaryDirectory() as temp_dir:
            path = os.path.join(temp_dir, "protocols.yaml")
            with open(path, "w") as f:
                yaml.safe_dump({"schema_version": 1,
                                "protocols": {"super_dense_coding": {"threshold": "0.6",
                                                                     "threshold_source": "user"}}}, f)
            registry = load_registry(path)
        self.assertEqual(threshold("super_dense_coding", registry=registry), 0.6)
        self.assertEqual(registry.get("super_dense_coding").threshold_source, "user")
        # untouched protocols keep the bundled template
        self.assertEqual(registry.get("transmit").recipe, load_registry().get("transmit").recipe)

    def test_unreadable_document(self):
        with self.assertRaises(ProtocolError):
            load_registry("/nonexistent/protocols.yaml")

    def test_unknown_protocol_name(self):
        with self.assertRaises(ProtocolError):
            ProtocolId.parse("quantum_fax")


if __name__ == '__main__':
    unittest.main()
