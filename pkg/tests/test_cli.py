import contextlib
import io
import json
import os
import tempfile
import unittest
from unittest import mock

from src.qpbench.errors import ConfigError, JournalError, ProtocolError, WorkflowError
from src.qpbench.heavy_hex import LatticeSpec, build_document
from src.qpbench.main import (
    EXIT_CONFIG,
    EXIT_JOURNAL,
    EXIT_OK,
    EXIT_SPEC,
    build_parser,
    config_from_args,
    exit_code_for,
    main,
)
from src.qpbench.protocols import parse_threshold
from src.qpbench.run_config import load_run_config
from src.qpbench.topology import export_document, load_topology
from src.qpbench.utils.constants import DEFAULT_LOG_LEVEL

CLEAN_ENV = {k: v for k, v in os.environ.items() if not k.startswith("QPB_")}


def _run_main(argv):
    out = io.StringIO()
    with contextlib.redirect_stdout(out):
        code = main(argv)
    return code, out.getvalue()


class CliTestCase(unittest.TestCase):
    def setUp(self):
        patcher = mock.patch.dict(os.environ, CLEAN_ENV, clear=True)
        patcher.start()
        self.addCleanup(patcher.stop)
        self._dir = tempfile.TemporaryDirectory()
        self.addCleanup(self._dir.cleanup)
        self.dir = self._dir.name


class TestPathsCommand(CliTestCase):
    def test_stage_counts(self):
        code, out = _run_main(["paths", "--topo", "eagle", "--rect", "1", "--stage", "A-L"])
        self.assertEqual(code, EXIT_OK)
        self.assertEqual(out.strip(), "eagle r1 A-L: 144 paths")
        _, out = _run_main(["paths", "--rect", "1", "--stage", "c2c", "--show"])
        lines = out.strip().splitlines()
        self.assertEqual(lines[0], "eagle r1 c2c: 8 paths")
        self.assertEqual(len(lines), 9)
        _, out = _run_main(["paths", "--rect", "1,5", "--stage", "c2c"])
        self.assertEqual(out.strip(), "eagle r1+5 c2c: 6 paths")

    def test_strict_mode_refuses_ml_on_pairs(self):
        code, _ = _run_main(["paths", "--rect", "1,5", "--stage", "M-L", "--mode", "strict"])
        self.assertEqual(code, EXIT_SPEC)

    def test_bad_stage(self):
        code, _ = _run_main(["paths", "--rect", "1", "--stage", "diagonal"])
        self.assertEqual(code, EXIT_CONFIG)


class TestRunCommand(CliTestCase):
    def setUp(self):
        super().setUp()
        self.topo = os.path.join(self.dir, "one.yaml")
        export_document(load_topology(build_document(LatticeSpec("one", ((0, 4), (0, 4)), ((0, 4),), "left"))),
                        self.topo)
        self.out = os.path.join(self.dir, "out")

    def _run(self, *extra):
        return _run_main(["run", "--topo", self.topo, "--protocols", "transmit", "--shots", "8", "--clock", "logical",
                          "--out", self.out, *extra])

    def test_budgeted_run_then_resume(self):
        code, out = self._run("--budget", "100")
        self.assertEqual(code, EXIT_OK)
        self.assertIn("Stopped at the circuit budget of 100", out)
        for name in ("journal.jsonl", "protocol_vector.json", "scores.json", "pairs.json", "swap_distance.json",
                     "charts.json"):
            self.assertTrue(os.path.exists(os.path.join(self.out, name)), name)

        code, out = _run_main(["run", "--out", self.out, "--resume", "--svg"])
        self.assertEqual(code, EXIT_OK)
        self.assertIn("0 task(s) open", out)
        with open(os.path.join(self.out, "protocol_vector.json")) as f:
            vector = json.load(f)
        self.assertEqual(vector["singles"]["1"]["transmit"], {"outcome": "capable", "min": 1.0})
        self.assertTrue(os.path.exists(os.path.join(self.out, "charts", "transmit_A-L.svg")))

        code, out = _run_main(["report", "scores", os.path.join(self.out, "journal.jsonl")])
        self.assertEqual(code, EXIT_OK)
        scores = {s["protocol"]: s for s in json.loads(out)}
        self.assertEqual(scores["transmit"]["score"], 1.0)
        self.assertEqual(scores["transmit"]["N0"], 1)

    def test_resume_against_another_topology(self):
        self._run("--budget", "50")
        code, _ = _run_main(["run", "--topo", "eagle", "--out", self.out, "--resume"])
        self.assertEqual(code, EXIT_JOURNAL)

    def test_invalid_settings(self):
        self.assertEqual(self._run("--shots", "0")[0], EXIT_CONFIG)
        self.assertEqual(self._run("--noise-p2", "2")[0], EXIT_CONFIG)
        self.assertEqual(self._run("--threshold", "warp_drive=0.5")[0], EXIT_CONFIG)
        self.assertEqual(self._run("--backend", "ftp://example.org")[0], EXIT_CONFIG)


class TestReportCommand(CliTestCase):
    def test_empty_journal(self):
        journal = os.path.join(self.dir, "journal.jsonl")
        open(journal, "w").close()
        code, out = _run_main(["report", "vector", journal])
        self.assertEqual(code, EXIT_OK)
        self.assertEqual(json.loads(out)["singles"], {})
        code, out = _run_main(["report", "pairs", journal])
        self.assertEqual((code, json.loads(out)), (EXIT_OK, {}))

    def test_overlap_needs_two_inputs(self):
        journal = os.path.join(self.dir, "journal.jsonl")
        open(journal, "w").close()
        self.assertEqual(_run_main(["report", "overlap", journal])[0], EXIT_CONFIG)

    def test_missing_journal(self):
        self.assertEqual(_run_main(["report", "vector", os.path.join(self.dir, "nope.jsonl")])[0], EXIT_JOURNAL)


class TestExportCommands(CliTestCase):
    def test_topology_export(self):
        target = os.path.join(self.dir, "heron.yaml")
        self.assertEqual(_run_main(["topology", "export", "heron", "--output", target])[0], EXIT_OK)
        self.assertEqual(load_topology(target).digest, load_topology("heron").digest)

    def test_circuit_export(self):
        target = os.path.join(self.dir, "sdc.json")
        code, _ = _run_main(["circuit", "--protocol", "super_dense_coding", "--path", "3,4,5,6", "--variant", "10",
                             "--format", "json", "--output", target])
        self.assertEqual(code, EXIT_OK)
        with open(target) as f:
            doc = json.load(f)
        self.assertEqual(doc["roster"], [3, 4, 5, 6])
        self.assertEqual(doc["variant"]["label"], "10")

        self.assertEqual(_run_main(["circuit", "--protocol", "transmit", "--path", "1,2", "--variant", "+W"])[0],
                         EXIT_SPEC)
        self.assertEqual(_run_main(["circuit", "--protocol", "teleportation", "--path", "1,2"])[0], EXIT_SPEC)


class TestRunConfig(CliTestCase):
    def test_environment_then_flags(self):
        with mock.patch.dict(os.environ, {"QPB_SHOTS": "64", "QPB_MODE": "independent"}):
            config = config_from_args(build_parser().parse_args(["run"]))
            self.assertEqual((config.shots, config.mode), (64, "independent"))
            config = config_from_args(build_parser().parse_args(["run", "--shots", "16"]))
            self.assertEqual(config.shots, 16)

    def test_lists_and_thresholds(self):
        config = config_from_args(build_parser().parse_args(
            ["run", "--protocols", "teleportation, transmit", "--threshold", "teleportation=0.7",
             "--threshold", "transmit=3/4"]))
        self.assertEqual([p.value for p in config.protocol_ids()], ["teleportation", "transmit"])
        self.assertEqual(config.thresholds, {"teleportation": "0.7", "transmit": "3/4"})
        self.assertEqual(len(load_run_config().protocol_ids()), 6)

    def test_invalid_values(self):
        with mock.patch.dict(os.environ, {"QPB_SHOTS": "many"}):
            with self.assertRaises(ConfigError):
                load_run_config()
        with mock.patch.dict(os.environ, {"QPB_FEED_FORWARD": "maybe"}):
            with self.assertRaises(ConfigError):
                load_run_config()
        with self.assertRaises(ConfigError):
            load_run_config({"mode": "greedy"})
        with self.assertRaises(ConfigError):
            load_run_config({"topology": "/nonexistent/chip.yaml"})
        with self.assertRaises(ConfigError):
            load_run_config({"colour": "blue"})

    def test_haar_samples_need_feed_forward_teleportation(self):
        with self.assertRaises(ConfigError) as ctx:
            load_run_config({"haar_samples": 8})
        self.assertIn("teleportation", str(ctx.exception))
        with self.assertRaises(ConfigError):
            load_run_config({"haar_samples": 8, "protocols": ["teleportation"]})
        self.assertEqual(load_run_config({"haar_samples": 8, "feed_forward": True}).haar_samples, 8)
        self.assertEqual(load_run_config({"haar_samples": 8, "protocols": ["transmit", "do_nothing"]}).haar_samples, 8)
        code, _ = _run_main(["run", "--haar-samples", "4", "--protocols", "teleportation",
                             "--out", os.path.join(self.dir, "out")])
        self.assertEqual(code, EXIT_CONFIG)
        self.assertFalse(os.path.exists(os.path.join(self.dir, "out", "journal.jsonl")))

    def test_journal_clock_defaults_to_logical(self):
        self.assertEqual(load_run_config().clock, "logical")
        self.assertEqual(load_run_config({"clock": "wall"}).workflow_settings().clock, "wall")

    def test_threshold_values(self):
        self.assertAlmostEqual(parse_threshold("2/3"), 2 / 3)
        with self.assertRaises(ProtocolError):
            parse_threshold("3/2")
        with self.assertRaises(ConfigError):
            load_run_config({"thresholds": {"transmit": "1/0"}})

    def test_log_level_fallback(self):
        with mock.patch.dict(os.environ, {"QPB_LOG_LEVEL": "chatty"}):
            self.assertEqual(load_run_config().log_level, DEFAULT_LOG_LEVEL)

    def test_exit_codes(self):
        self.assertEqual(exit_code_for(JournalError("x")), EXIT_JOURNAL)
        self.assertEqual(exit_code_for(WorkflowError("x")), EXIT_JOURNAL)
        self.assertEqual(exit_code_for(ProtocolError("x")), EXIT_SPEC)
        self.assertEqual(exit_code_for(ValueError("x")), 1)


if __name__ == '__main__':
    unittest.main()
