import asyncio
import json
import os
import tempfile
import unittest
from unittest import mock

import requests

from src.qpbench.backends import (
    BackendSettings,
    HttpJobBackend,
    MockRemoteBackend,
    SimulatorBackend,
    job_id_for,
    open_backend,
    poll,
    submit,
)
from src.qpbench.errors import BackendError, ConfigError
from src.qpbench.models import JobStatus, Path
from src.qpbench.protocols import build_circuit, variants_for


def _batch(paths=((0, 1, 2), (3, 4, 5, 6))):
    batch = []
    for qubits in paths:
        for variant in variants_for("transmit"):
            circuit = build_circuit("transmit", Path(qubits), variant)
            batch.append(circuit.with_seed(len(batch) + 1, group=Path(qubits).label))
    return batch


class TestOpenBackend(unittest.TestCase):
    def test_schemes(self):
        self.assertIsInstance(open_backend("sim://default"), SimulatorBackend)
        self.assertIsInstance(open_backend("https://jobs.example.org"), HttpJobBackend)
        with tempfile.TemporaryDirectory() as temp_dir:
            self.assertIsInstance(open_backend(f"mock://{temp_dir}"), MockRemoteBackend)

    def test_unknown_uris(self):
        with self.assertRaises(ConfigError):
            open_backend("sim://gpu")
        with self.assertRaises(ConfigError):
            open_backend("ftp://example.org")
        with self.assertRaises(ConfigError):
            open_backend("mock://")

    def test_settings_validation(self):
        with self.assertRaises(ConfigError):
            BackendSettings(cancel_rate=1.5)
        with self.assertRaises(ConfigError):
            BackendSettings(workers=0)


class TestSimulatorBackend(unittest.TestCase):
    def test_run_returns_every_result(self):
        backend = open_backend("sim://default")
        batch = _batch()
        job = asyncio.run(backend.run(batch, 64))
        self.assertIs(job.status, JobStatus.DONE)
        self.assertEqual(sorted(job.results), list(range(len(batch))))
        self.assertEqual(job.missing, [])
        for i, circuit in enumerate(batch):
            self.assertEqual(job.results[i].shots, 64)
            self.assertEqual(job.results[i].frequency(circuit.success.evaluate), 1.0)
            self.assertEqual(job.results[i].metadata["backend"], "sim://default")

    def test_job_ids_are_deterministic(self):
        batch = _batch()
        self.assertEqual(job_id_for(batch, 100, 1), job_id_for(list(batch), 100, 1))
        self.assertNotEqual(job_id_for(batch, 100, 1), job_id_for(batch, 101, 1))
        self.assertNotEqual(job_id_for(batch, 100, 1), job_id_for(batch[:-1], 100, 1))

    def test_empty_batch_rejected(self):
        with self.assertRaises(BackendError):
            submit(open_backend("sim://default"), [], 10)


class TestMockRemoteBackend(unittest.TestCase):
    def setUp(self):
        self._dir = tempfile.TemporaryDirectory()
        self.store = self._dir.name

    def tearDown(self):
        self._dir.cleanup()

    def _backend(self, rate):
        return open_backend(f"mock://{self.store}", BackendSettings(cancel_rate=rate, seed=3))

    def test_submit_queues_and_poll_completes(self):
        backend = self._backend(0.0)
        batch = _batch()
        job = submit(backend, batch, 32)
        self.assertIs(job.status, JobStatus.QUEUED)
        with open(os.path.join(self.store, f"{job.job_id}.json")) as f:
            stored = json.load(f)
        self.assertEqual(stored["batch_size"], len(batch))
        self.assertEqual(stored["status"], "queued")

        done = poll(backend, job)
        self.assertIs(done.status, JobStatus.DONE)
        self.assertEqual(len(done.results), len(batch))

    def test_poll_is_idempotent(self):
        backend = self._backend(0.5)
        job = submit(backend, _batch(), 32)
        first = poll(backend, job)
        second = poll(backend, job)
        self.assertEqual(first.status, second.status)
        self.assertEqual(first.cancelled, second.cancelled)
        self.assertEqual({i: r.counts for i, r in first.results.items()},
                         {i: r.counts for i, r in second.results.items()})

    def test_resubmission_returns_stored_job(self):
        backend = self._backend(0.0)
        batch = _batch()
        job = asyncio.run(backend.run(batch, 16))
        again = submit(backend, batch, 16)
        self.assertEqual(again.job_id, job.job_id)
        self.assertIs(again.status, JobStatus.DONE)

    def test_full_cancellation(self):
        backend = self._backend(1.0)
        job = asyncio.run(backend.run(_batch(), 16))
        self.assertIs(job.status, JobStatus.CANCELLED)
        self.assertEqual(job.results, {})
        self.assertEqual(len(job.cancelled), job.batch_size)

    def test_cancellation_drops_whole_path_groups(self):
        paths = [tuple(range(k, k + 3)) for k in range(0, 60, 3)]
        batch = _batch(paths)
        job = asyncio.run(self._backend(0.5).run(batch, 8))
        self.assertIn(job.status, (JobStatus.PARTIAL, JobStatus.CANCELLED, JobStatus.DONE))
        cancelled_groups = {batch[i].group for i in job.cancelled}
        kept_groups = {batch[i].group for i in job.results}
        self.assertFalse(cancelled_groups & kept_groups)
        self.assertEqual(len(job.cancelled) + len(job.results), len(batch))

    def test_corrupt_store_document(self):
        backend = self._backend(0.0)
        job = submit(backend, _batch(), 8)
        with open(os.path.join(self.store, f"{job.job_id}.json"), "w") as f:
            f.write("{not json")
        with self.assertRaises(BackendError):
            poll(backend, job)


class TestHttpJobBackend(unittest.TestCase):
    def setUp(self):
        self.backend = open_backend("https://jobs.example.org/", BackendSettings(http_token="secret"))
        self.batch = _batch()

    def _response(self, status, body):
        response = mock.MagicMock()
        response.status_code = status
        response.json.return_value = body
        response.text = json.dumps(body)
        return response

    @mock.patch("src.qpbench.backends.requests.request")
    def test_submit_and_poll(self, mock_request):
        job_id = job_id_for(self.batch, 10, 0)
        counts = {str(i): {"counts": {"0": 10}, "shots": 10} for i in range(len(self.batch))}
        mock_request.side_effect = [
            self._response(202, {"job_id": job_id, "status": "queued", "shots": 10}),
            self._response(200, {"job_id": job_id, "status": "done", "shots": 10, "results": counts}),
        ]
        job = asyncio.run(self.backend.run(self.batch, 10))
        self.assertIs(job.status, JobStatus.DONE)
        self.assertEqual(len(job.results), len(self.batch))

        method, url = mock_request.call_args_list[0][0]
        self.assertEqual((method, url), ("POST", "https://jobs.example.org/jobs"))
        kwargs = mock_request.call_args_list[0][1]
        self.assertEqual(kwargs["headers"]["Authorization"], "Bearer secret")
        self.assertEqual(len(kwargs["json"]["circuits"]), len(self.batch))
        self.assertEqual(mock_request.call_args_list[1][0], ("GET", f"https://jobs.example.org/jobs/{job_id}"))

    @mock.patch("src.qpbench.backends.requests.request")
    def test_http_error_raises(self, mock_request):
        mock_request.return_value = self._response(500, {"error": "boom"})
        with self.assertRaises(BackendError):
            submit(self.backend, self.batch, 10)

    @mock.patch("src.qpbench.backends.requests.request")
    def test_connection_error_raises(self, mock_request):
        mock_request.side_effect = requests.exceptions.ConnectionError("refused")
        with self.assertRaises(BackendError):
            submit(self.backend, self.batch, 10)

    @mock.patch("src.qpbench.backends.requests.request")
    def test_malformed_job_document(self, mock_request):
        mock_request.return_value = self._response(201, {"status": "queued"})
        with self.assertRaises(BackendError):
            submit(self.backend, self.batch, 10)


if __name__ == '__main__':
    unittest.main()
