# src/qpbench/run_config.py
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional

from .backends import BackendSettings
from .errors import ConfigError, ProtocolError
from .heavy_hex import FAMILIES
from .models import NoiseModel, ProtocolId, WorkflowMode
from .protocols import load_registry, parse_threshold, success_rule, variants_for
from .utils.constants import (
    DEFAULT_BACKEND,
    DEFAULT_CLOCK,
    DEFAULT_LOG_LEVEL,
    DEFAULT_MAX_RERUNS,
    DEFAULT_MAX_TRAJECTORY_QUBITS,
    DEFAULT_MODE,
    DEFAULT_OUT_DIR,
    DEFAULT_SEED,
    DEFAULT_SHOTS,
    DEFAULT_TOPOLOGY,
    DEFAULT_WORKERS,
)
from .workflow import WorkflowSettings

logger = logging.getLogger(__name__)

VALID_LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")
TRUE_VALUES = ("1", "true", "yes", "on")
FALSE_VALUES = ("0", "false", "no", "off", "")


def _int_env(name: str, default: Optional[int]) -> Optional[int]:
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{name}='{raw}' is not an integer") from None


def _float_env(name: str, default: float) -> float:
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"{name}='{raw}' is not a number") from None


def _bool_env(name: str) -> bool:
    raw = os.getenv(name, "").strip().lower()
    if raw in TRUE_VALUES:
        return True
    if raw in FALSE_VALUES:
        return False
    raise ConfigError(f"{name}='{raw}' is not a boolean (use 1/0, true/false)")


def parse_list(raw: Optional[str]) -> List[str]:
    return [p.strip() for p in (raw or "").split(",") if p.strip()]


def parse_thresholds(raw: Optional[str]) -> Dict[str, str]:
    """'teleportation=0.7,transmit=2/3' -> {'teleportation': '0.7', 'transmit': '2/3'}"""
    out = {}
    for item in parse_list(raw):
        if "=" not in item:
            raise ConfigError(f"Threshold override '{item}' must look like protocol=value")
        name, value = (x.strip() for x in item.split("=", 1))
        out[name] = value
    return out


@dataclass
class RunConfig:
    """
    Holds the configuration of one qpbench invocation, sourced from
    QPB_ prefixed environment variables and overridden by command-line flags.
    """

    # --- Target ---
    topology: str = field(default_factory=lambda: os.getenv("QPB_TOPOLOGY", DEFAULT_TOPOLOGY))
    backend: str = field(default_factory=lambda: os.getenv("QPB_BACKEND", DEFAULT_BACKEND))
    http_token: Optional[str] = field(default_factory=lambda: os.getenv("QPB_HTTP_TOKEN"))  # secret

    # --- Execution ---
    shots: int = field(default_factory=lambda: _int_env("QPB_SHOTS", DEFAULT_SHOTS))
    seed: int = field(default_factory=lambda: _int_env("QPB_SEED", DEFAULT_SEED))
    workers: int = field(default_factory=lambda: _int_env("QPB_WORKERS", DEFAULT_WORKERS))
    max_qubits: int = field(default_factory=lambda: _int_env("QPB_MAX_QUBITS", DEFAULT_MAX_TRAJECTORY_QUBITS))
    decompose_swap: bool = field(default_factory=lambda: _bool_env("QPB_DECOMPOSE_SWAP"))
    cancel_rate: float = field(default_factory=lambda: _float_env("QPB_CANCEL_RATE", 0.0))

    # --- Noise ---
    noise_p1: float = field(default_factory=lambda: _float_env("QPB_NOISE_P1", 0.0))
    noise_p2: float = field(default_factory=lambda: _float_env("QPB_NOISE_P2", 0.0))
    noise_readout: float = field(default_factory=lambda: _float_env("QPB_NOISE_READOUT", 0.0))
    noise_damping: float = field(default_factory=lambda: _float_env("QPB_NOISE_DAMPING", 0.0))

    # --- Workflow ---
    mode: str = field(default_factory=lambda: os.getenv("QPB_MODE", DEFAULT_MODE).strip().lower())
    protocols: List[str] = field(default_factory=lambda: parse_list(os.getenv("QPB_PROTOCOLS")))
    thresholds: Dict[str, str] = field(default_factory=lambda: parse_thresholds(os.getenv("QPB_THRESHOLDS")))
    protocol_doc: Optional[str] = field(default_factory=lambda: os.getenv("QPB_PROTOCOL_DOC") or None)
    feed_forward: bool = field(default_factory=lambda: _bool_env("QPB_FEED_FORWARD"))
    allow_zero_swap: bool = field(default_factory=lambda: _bool_env("QPB_ALLOW_ZERO_SWAP"))
    haar_samples: int = field(default_factory=lambda: _int_env("QPB_HAAR_SAMPLES", 0))
    budget: Optional[int] = field(default_factory=lambda: _int_env("QPB_BUDGET", None))
    max_reruns: int = field(default_factory=lambda: _int_env("QPB_MAX_RERUNS", DEFAULT_MAX_RERUNS))

    # --- Output ---
    out_dir: str = field(default_factory=lambda: os.getenv("QPB_OUT", DEFAULT_OUT_DIR))
    clock: str = field(default_factory=lambda: os.getenv("QPB_CLOCK", DEFAULT_CLOCK).strip().lower())
    log_level: str = field(default_factory=lambda: os.getenv("QPB_LOG_LEVEL", DEFAULT_LOG_LEVEL).upper())

    def __post_init__(self):
        if self.shots < 1:
            raise ConfigError(f"shots must be >= 1, got {self.shots}")
        if self.budget is not None and self.budget < 0:
            raise ConfigError(f"budget must be >= 0 circuits, got {self.budget}")
        for name in ("haar_samples", "max_reruns"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.max_qubits < 1:
            raise ConfigError(f"max_qubits must be >= 1, got {self.max_qubits}")
        try:
            WorkflowMode(self.mode)
        except ValueError:
            raise ConfigError(f"Unknown workflow mode '{self.mode}'. Expected strict or independent") from None
        if self.clock not in ("wall", "logical"):
            raise ConfigError(f"Unknown clock '{self.clock}'. Expected wall or logical")
        if self.topology.lower() not in FAMILIES and not os.path.isfile(self.topology):
            raise ConfigError(f"Topology '{self.topology}' is neither a bundled name {list(FAMILIES)} nor a file")
        if self.protocol_doc and not os.path.isfile(self.protocol_doc):
            raise ConfigError(f"Protocol document '{self.protocol_doc}' does not exist")
        try:
            self.protocol_ids()
            for name, value in self.thresholds.items():
                ProtocolId.parse(name)
                parse_threshold(value)
        except ProtocolError as e:
            raise ConfigError(str(e)) from e
        if self.haar_samples:
            self._check_haar_variants()
        # builds and validates the noise and backend knobs
        self.backend_settings()

        if self.log_level not in VALID_LOG_LEVELS:
            logger.warning(f"Invalid QPB_LOG_LEVEL '{self.log_level}'. Defaulting to '{DEFAULT_LOG_LEVEL}'.")
            self.log_level = DEFAULT_LOG_LEVEL

    def _check_haar_variants(self) -> None:
        # Haar states carry no Pauli axis, so a deferred Pauli frame cannot score them
        try:
            registry = load_registry(self.protocol_doc)
            for pid in self.protocol_ids():
                sample = variants_for(pid, haar_samples=1, seed=self.seed, registry=registry)[0]
                success_rule(registry.get(pid), sample, self.feed_forward)
        except ProtocolError as e:
            raise ConfigError(f"QPB_HAAR_SAMPLES={self.haar_samples}: {e}") from e

    def protocol_ids(self) -> List[ProtocolId]:
        return [ProtocolId.parse(p) for p in self.protocols] or list(ProtocolId)

    def noise_model(self) -> NoiseModel:
        return NoiseModel(p1=self.noise_p1, p2=self.noise_p2, readout_eps=self.noise_readout,
                          idle_damping=self.noise_damping)

    def backend_settings(self) -> BackendSettings:
        return BackendSettings(noise=self.noise_model(), seed=self.seed, max_qubits=self.max_qubits,
                               decompose_swap=self.decompose_swap, workers=self.workers,
                               cancel_rate=self.cancel_rate, http_token=self.http_token)

    def workflow_settings(self) -> WorkflowSettings:
        return WorkflowSettings(backend=self.backend, shots=self.shots, seed=self.seed,
                                feed_forward=self.feed_forward, allow_zero_swap=self.allow_zero_swap,
                                haar_samples=self.haar_samples, protocol_doc=self.protocol_doc, clock=self.clock)


def load_run_config(overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """
    Factory: environment first, then any non-None override (command-line
    flags) replacing the matching field.
    """
    chosen = {k: v for k, v in (overrides or {}).items() if v is not None}
    unknown = set(chosen) - set(RunConfig.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"Unknown configuration keys: {sorted(unknown)}")
    return RunConfig(**chosen)
