# src/qpbench/backends.py
import asyncio
import json
import logging
import os
import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence
from urllib.parse import urlparse

import numpy as np
import requests

from .errors import BackendError, ConfigError
from .models import BackendJob, Circuit, JobStatus, NoiseModel, ShotResult
from .simulator import run_trajectories
from .utils.constants import (
    DEFAULT_MAX_TRAJECTORY_QUBITS,
    DEFAULT_SEED,
    DEFAULT_WORKERS,
    HTTP_TIMEOUT_SECONDS,
    JOB_SCHEMA_VERSION,
    POLL_INTERVAL_SECONDS,
    POLL_TIMEOUT_SECONDS,
)
from .utils.seeding import canonical_digest, derive_seed

logger = logging.getLogger(__name__)


@dataclass
class BackendSettings:
    """Execution knobs shared by every backend."""
    noise: NoiseModel = field(default_factory=NoiseModel)
    seed: int = DEFAULT_SEED
    max_qubits: int = DEFAULT_MAX_TRAJECTORY_QUBITS
    decompose_swap: bool = False
    workers: int = DEFAULT_WORKERS
    cancel_rate: float = 0.0
    http_token: Optional[str] = None

    def __post_init__(self):
        if not 0.0 <= self.cancel_rate <= 1.0:
            raise ConfigError(f"Cancellation rate {self.cancel_rate} is outside [0, 1]")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")


def batch_hash(batch: Sequence[Circuit]) -> str:
    return canonical_digest([c.to_document() for c in batch])


def job_id_for(batch: Sequence[Circuit], shots: int, seed: int) -> str:
    """Deterministic job id: same batch, shots and seed always map to the same id."""
    return canonical_digest({"batch": batch_hash(batch), "shots": shots, "seed": seed})[:16]


def circuit_seed(circuit: Circuit, job_seed: int, index: int) -> int:
    return circuit.seed if circuit.seed is not None else derive_seed(job_seed, "circuit", index)


def job_to_document(job: BackendJob) -> Dict[str, Any]:
    return {
        "job_id": job.job_id,
        "status": job.status.value,
        "shots": job.shots,
        "results": {str(i): {"counts": r.counts, "shots": r.shots, "metadata": r.metadata}
                    for i, r in sorted(job.results.items())},
        "cancelled": list(job.cancelled),
    }


def job_from_document(doc: Dict[str, Any], backend_id: str) -> BackendJob:
    try:
        results = {
            int(i): ShotResult(counts=dict(r["counts"]), shots=int(r["shots"]), metadata=dict(r.get("metadata", {})))
            for i, r in doc.get("results", {}).items()
        }
        return BackendJob(
            job_id=str(doc["job_id"]),
            backend_id=backend_id,
            batch_size=int(doc.get("batch_size", len(doc.get("circuits", [])))),
            shots=int(doc["shots"]),
            status=JobStatus(doc["status"]),
            results=results,
            cancelled=tuple(int(i) for i in doc.get("cancelled", ())),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise BackendError(f"Malformed job document from {backend_id}: {e}") from e


class BaseBackend:
    """
    Common contract: `submit` records a job, `poll` advances it, `run` does
    both and waits for a terminal status.
    """
    scheme = ""

    def __init__(self, uri: str, settings: BackendSettings):
        self.uri = uri
        self.settings = settings

    @property
    def backend_id(self) -> str:
        return self.uri

    async def submit(self, batch: Sequence[Circuit], shots: int) -> BackendJob:
        raise NotImplementedError

    async def poll(self, job: BackendJob) -> BackendJob:
        return job

    async def run(self, batch: Sequence[Circuit], shots: int) -> BackendJob:
        job = await self.submit(batch, shots)
        deadline = time.monotonic() + POLL_TIMEOUT_SECONDS
        while True:
            job = await self.poll(job)
            if job.status.terminal:
                break
            if time.monotonic() > deadline:
                raise BackendError(f"Job {job.job_id} on {self.backend_id} did not finish within {POLL_TIMEOUT_SECONDS}s")
            await asyncio.sleep(POLL_INTERVAL_SECONDS)
        if job.cancelled:
            logger.warning(f"Job {job.job_id}: {len(job.cancelled)} of {job.batch_size} circuits cancelled")
        return job

    def _check_batch(self, batch: Sequence[Circuit], shots: int) -> None:
        if not batch:
            raise BackendError("Cannot submit an empty circuit batch")
        if shots < 1:
            raise BackendError(f"shots must be >= 1, got {shots}")

    async def _execute(self, batch: Sequence[Circuit], indices: Sequence[int], shots: int) -> Dict[int, ShotResult]:
        """Runs the selected circuits on the local simulator, bounded by the worker count."""
        semaphore = asyncio.Semaphore(self.settings.workers)
        s = self.settings

        async def one(i: int) -> ShotResult:
            seed = circuit_seed(batch[i], s.seed, i)
            async with semaphore:
                result = await asyncio.to_thread(
                    run_trajectories, batch[i], s.noise, shots, seed, s.max_qubits, s.decompose_swap
                )
            result.metadata["backend"] = self.backend_id
            return result

        outcomes = await asyncio.gather(*(one(i) for i in indices), return_exceptions=True)
        for outcome in outcomes:
            if isinstance(outcome, Exception):
                raise outcome
        return dict(zip(indices, outcomes))


class SimulatorBackend(BaseBackend):
    """In-process trajectory simulator; jobs complete during submit."""
    scheme = "sim"

    async def submit(self, batch: Sequence[Circuit], shots: int) -> BackendJob:
        self._check_batch(batch, shots)
        job_id = job_id_for(batch, shots, self.settings.seed)
        logger.info(f"Simulating job {job_id}: {len(batch)} circuits x {shots} shots")
        results = await self._execute(batch, range(len(batch)), shots)
        return BackendJob(job_id=job_id, backend_id=self.backend_id, batch_size=len(batch), shots=shots,
                          status=JobStatus.DONE, results=results)


class MockRemoteBackend(BaseBackend):
    """
    File-backed stand-in for a remote provider.

    Each job is a JSON document in the store directory. Submission only
    queues it; the first poll executes the batch on the local simulator and
    cancels whole circuit groups at the configured rate. Polling a finished
    job returns the stored result unchanged.
    """
    scheme = "mock"

    def __init__(self, uri: str, settings: BackendSettings):
        super().__init__(uri, settings)
        self.directory = uri[len("mock://"):]
        if not self.directory:
            raise ConfigError("mock:// backend needs a store directory, e.g. mock://./jobs")
        try:
            os.makedirs(self.directory, exist_ok=True)
        except OSError as e:
            raise BackendError(f"Mock job store '{self.directory}' is unavailable: {e}") from e

    def _job_path(self, job_id: str) -> str:
        return os.path.join(self.directory, f"{job_id}.json")

    def _read(self, job_id: str) -> Dict[str, Any]:
        try:
            with open(self._job_path(job_id), "r", encoding="utf-8") as f:
                doc = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise BackendError(f"Job document {job_id} in '{self.directory}' is unreadable: {e}") from e
        if doc.get("schema_version") != JOB_SCHEMA_VERSION:
            raise BackendError(f"Job document {job_id} has unsupported schema version {doc.get('schema_version')}")
        return doc

    def _write(self, doc: Dict[str, Any]) -> None:
        path = self._job_path(doc["job_id"])
        tmp = f"{path}.tmp"
        try:
            with open(tmp, "w", encoding="utf-8") as f:
                json.dump(doc, f, sort_keys=True)
            os.replace(tmp, path)
        except OSError as e:
            raise BackendError(f"Could not write job document {doc['job_id']}: {e}") from e

    async def submit(self, batch: Sequence[Circuit], shots: int) -> BackendJob:
        self._check_batch(batch, shots)
        job_id = job_id_for(batch, shots, self.settings.seed)
        if os.path.exists(self._job_path(job_id)):
            logger.info(f"Job {job_id} already in store '{self.directory}'")
            return job_from_document(self._read(job_id), self.backend_id)
        doc = {
            "schema_version": JOB_SCHEMA_VERSION,
            "job_id": job_id,
            "status": JobStatus.QUEUED.value,
            "batch_hash": batch_hash(batch),
            "batch_size": len(batch),
            "shots": shots,
            "seed": self.settings.seed,
            "cancel_rate": self.settings.cancel_rate,
            "circuits": [c.to_document() for c in batch],
            "results": {},
            "cancelled": [],
        }
        self._write(doc)
        logger.info(f"Queued job {job_id} in '{self.directory}' ({len(batch)} circuits)")
        return job_from_document(doc, self.backend_id)

    def _cancelled_groups(self, circuits: List[Circuit], seed: int, rate: float) -> set:
        groups = sorted({c.group if c.group is not None else f"#{i}" for i, c in enumerate(circuits)})
        return {g for g in groups if np.random.default_rng(derive_seed(seed, "cancel", g)).random() < rate}

    async def poll(self, job: BackendJob) -> BackendJob:
        doc = self._read(job.job_id)
        if JobStatus(doc["status"]).terminal:
            return job_from_document(doc, self.backend_id)

        circuits = [Circuit.from_document(c) for c in doc["circuits"]]
        dropped = self._cancelled_groups(circuits, int(doc["seed"]), float(doc.get("cancel_rate", 0.0)))
        cancelled = [i for i, c in enumerate(circuits) if (c.group if c.group is not None else f"#{i}") in dropped]
        keep = [i for i in range(len(circuits)) if i not in set(cancelled)]
        results = await self._execute(circuits, keep, int(doc["shots"])) if keep else {}

        if not cancelled:
            status = JobStatus.DONE
        elif not keep:
            status = JobStatus.CANCELLED
        else:
            status = JobStatus.PARTIAL
        done = BackendJob(job_id=job.job_id, backend_id=self.backend_id, batch_size=len(circuits),
                          shots=int(doc["shots"]), status=status, results=results, cancelled=tuple(cancelled))
        doc.update(job_to_document(done))
        self._write(doc)
        logger.info(f"Job {job.job_id} finished as {status.value}: {len(results)} results, {len(cancelled)} cancelled")
        return done


class HttpJobBackend(BaseBackend):
    """Client for a job service speaking the mock store's document contract over REST."""
    scheme = "http"

    def __init__(self, uri: str, settings: BackendSettings):
        super().__init__(uri, settings)
        self.api_base_url = uri.rstrip("/")
        self.headers = {"Accept": "application/json"}
        if settings.http_token:
            self.headers["Authorization"] = f"Bearer {settings.http_token}"
        logger.info(f"Job service client initialized for base URL: {self.api_base_url}")

    def _request(self, method: str, endpoint: str, json_data: Optional[Dict] = None,
                 expected_status: Sequence[int] = (200,)) -> Dict[str, Any]:
        url = f"{self.api_base_url}{endpoint}"
        try:
            logger.debug(f"Making job service {method} request to {url}")
            response = requests.request(method, url, headers=self.headers, json=json_data, timeout=HTTP_TIMEOUT_SECONDS)
        except requests.exceptions.RequestException as e:
            logger.error(f"Job service request to {url} encountered an exception: {e}")
            raise BackendError(f"Job service at {self.api_base_url} is unreachable: {e}") from e
        if response.status_code not in expected_status:
            logger.error(f"Job service request to {url} failed with status {response.status_code}: {response.text[:500]}")
            raise BackendError(f"Job service returned HTTP {response.status_code} for {method} {endpoint}")
        try:
            return response.json()
        except ValueError as e:
            raise BackendError(f"Job service returned a non-JSON body for {method} {endpoint}") from e

    async def submit(self, batch: Sequence[Circuit], shots: int) -> BackendJob:
        self._check_batch(batch, shots)
        payload = {
            "schema_version": JOB_SCHEMA_VERSION,
            "job_id": job_id_for(batch, shots, self.settings.seed),
            "batch_hash": batch_hash(batch),
            "batch_size": len(batch),
            "shots": shots,
            "seed": self.settings.seed,
            "circuits": [c.to_document() for c in batch],
        }
        doc = await asyncio.to_thread(self._request, "POST", "/jobs", payload, (200, 201, 202))
        doc.setdefault("batch_size", len(batch))
        logger.info(f"Submitted job {doc.get('job_id')} to {self.api_base_url}")
        return job_from_document(doc, self.backend_id)

    async def poll(self, job: BackendJob) -> BackendJob:
        doc = await asyncio.to_thread(self._request, "GET", f"/jobs/{job.job_id}")
        doc.setdefault("batch_size", job.batch_size)
        return job_from_document(doc, self.backend_id)


def open_backend(uri: str, settings: Optional[BackendSettings] = None) -> BaseBackend:
    """Backend for a URI: sim://default, mock://<dir>, or http(s)://<host>."""
    settings = settings or BackendSettings()
    scheme = urlparse(uri).scheme.lower()
    if scheme == "sim":
        if uri != "sim://default":
            raise ConfigError(f"Unknown simulator backend '{uri}'; only sim://default exists")
        return SimulatorBackend(uri, settings)
    if scheme == "mock":
        return MockRemoteBackend(uri, settings)
    if scheme in ("http", "https"):
        return HttpJobBackend(uri, settings)
    raise ConfigError(f"Unsupported backend URI '{uri}'. Use sim://default, mock://<dir> or http(s)://<host>")


def submit(backend: BaseBackend, batch: Sequence[Circuit], shots: int) -> BackendJob:
    """Blocking submit for callers outside an event loop."""
    return asyncio.run(backend.submit(batch, shots))


def poll(backend: BaseBackend, job: BackendJob) -> BackendJob:
    return asyncio.run(backend.poll(job))
