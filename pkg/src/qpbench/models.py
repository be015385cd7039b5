# src/qpbench/models.py
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property
from typing import Any, Dict, FrozenSet, Iterator, List, Optional, Tuple

import networkx as nx

from .errors import ConfigError, ProtocolError, SimulationError
from .utils.constants import CIRCUIT_SCHEMA_VERSION


class ProtocolId(str, Enum):
    """The six benchmark protocols. Declaration order is the task ordering."""
    TRANSMIT = "transmit"
    DO_NOTHING = "do_nothing"
    TELEPORTATION = "teleportation"
    BELL_STATE_TRANSFER = "bell_state_transfer"
    SUPER_DENSE_CODING = "super_dense_coding"
    ENTANGLEMENT_SWAPPING = "entanglement_swapping"

    @classmethod
    def parse(cls, value: str) -> "ProtocolId":
        try:
            return cls(value.strip())
        except ValueError:
            raise ProtocolError(f"Unknown protocol '{value}'. Expected one of {[p.value for p in cls]}") from None

    @property
    def order(self) -> int:
        return list(ProtocolId).index(self)


class Stage(str, Enum):
    C2C = "c2c"
    ML = "M-L"
    AL = "A-L"

    @classmethod
    def parse(cls, value: str) -> "Stage":
        for stage in cls:
            if value.strip().lower() == stage.value.lower():
                return stage
        raise ValueError(f"Unknown stage '{value}'. Expected one of {[s.value for s in cls]}")

    @property
    def order(self) -> int:
        return list(Stage).index(self)


class SubChipKind(str, Enum):
    SINGLE = "single"
    PAIR = "pair"


class Geometry(str, Enum):
    SIDE_BY_SIDE = "side_by_side"
    DIAGONAL = "diagonal"


class VariantKind(str, Enum):
    PREPARED_STATE = "prepared_state"
    MESSAGE = "message"
    MEASUREMENT_SETTING = "measurement_setting"


class JobStatus(str, Enum):
    QUEUED = "queued"
    RUNNING = "running"
    DONE = "done"
    CANCELLED = "cancelled"
    PARTIAL = "partial"

    @property
    def terminal(self) -> bool:
        return self in (JobStatus.DONE, JobStatus.CANCELLED, JobStatus.PARTIAL)


class Decision(str, Enum):
    PASS = "pass"
    FAIL = "fail"


class WorkflowMode(str, Enum):
    STRICT = "strict"
    INDEPENDENT = "independent"


# --- Topology ---

@dataclass(frozen=True)
class Rectangle:
    """A 12-qubit cycle of the lattice. `cycle` is cyclic; corners sit on it."""
    index: int  # 1-based
    cycle: Tuple[int, ...]
    corners: Tuple[int, ...]


@dataclass(frozen=True)
class ChipTopology:
    name: str
    qubit_count: int
    edges: FrozenSet[Tuple[int, int]]
    rectangles: Tuple[Rectangle, ...]
    rect_adjacency: FrozenSet[Tuple[int, int]]
    digest: str = ""
    document: Dict[str, Any] = field(default_factory=dict, compare=False, hash=False, repr=False)

    @cached_property
    def graph(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(range(self.qubit_count))
        g.add_edges_from(self.edges)
        return g

    def rectangle(self, index: int) -> Rectangle:
        if not 1 <= index <= len(self.rectangles):
            raise IndexError(index)
        return self.rectangles[index - 1]

    @property
    def rect_indices(self) -> List[int]:
        return [r.index for r in self.rectangles]


@dataclass(frozen=True)
class SubChip:
    kind: SubChipKind
    rect_indices: Tuple[int, ...]
    qubits: FrozenSet[int]
    edges: FrozenSet[Tuple[int, int]]
    geometry: Optional[Geometry] = None
    # Unordered endpoint pairs walked by the corner-to-corner stage
    corner_pairs: Tuple[Tuple[int, int], ...] = ()
    topology_digest: str = ""

    @cached_property
    def graph(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(sorted(self.qubits))
        g.add_edges_from(sorted(self.edges))
        return g

    @property
    def label(self) -> str:
        return "r" + "+".join(str(i) for i in self.rect_indices)


@dataclass(frozen=True, order=True)
class Path:
    qubits: Tuple[int, ...]

    @property
    def n(self) -> int:
        return len(self.qubits)

    def reversed(self) -> "Path":
        return Path(tuple(reversed(self.qubits)))

    @property
    def label(self) -> str:
        return "-".join(str(q) for q in self.qubits)

    def __iter__(self) -> Iterator[int]:
        return iter(self.qubits)

    def __len__(self) -> int:
        return len(self.qubits)


@dataclass(frozen=True)
class PathSet:
    subchip: SubChip
    stage: Stage
    paths: Tuple[Path, ...]

    def __len__(self) -> int:
        return len(self.paths)

    def __iter__(self) -> Iterator[Path]:
        return iter(self.paths)

    def subset(self, keep) -> "PathSet":
        wanted = set(keep)
        return replace(self, paths=tuple(p for p in self.paths if p in wanted))


# --- Circuits ---

@dataclass(frozen=True)
class Op:
    """One gate over local roster positions. `condition` names a classical bit that must read 1."""
    name: str
    qubits: Tuple[int, ...]
    params: Tuple[Any, ...] = ()
    clbit: Optional[int] = None
    condition: Optional[int] = None

    def to_document(self) -> Dict[str, Any]:
        doc: Dict[str, Any] = {"gate": self.name, "qubits": list(self.qubits)}
        if self.params:
            doc["params"] = list(self.params)
        if self.clbit is not None:
            doc["clbit"] = self.clbit
        if self.condition is not None:
            doc["condition"] = self.condition
        return doc

    @classmethod
    def from_document(cls, doc: Dict[str, Any]) -> "Op":
        return cls(
            name=str(doc["gate"]),
            qubits=tuple(int(q) for q in doc["qubits"]),
            params=tuple(doc.get("params", ())),
            clbit=doc.get("clbit"),
            condition=doc.get("condition"),
        )


@dataclass(frozen=True)
class SuccessRule:
    """
    Maps a measured bitstring (clbit 0 leftmost) to success/other.

    `combine` is "concat" (the selected bits must equal `expected`) or "parity"
    (their XOR must equal `expected`). `frame` = (phase_bit, parity_bit, axis)
    folds a Pauli correction X^parity Z^phase into the comparison: the derived
    bit flips when that Pauli anticommutes with the measured axis.
    """
    bits: Tuple[int, ...]
    expected: str
    combine: str = "concat"
    frame: Optional[Tuple[int, int, str]] = None

    def evaluate(self, bitstring: str) -> bool:
        picked = [int(bitstring[b]) for b in self.bits]
        if self.combine == "parity":
            observed = str(sum(picked) % 2)
        else:
            observed = "".join(str(b) for b in picked)
        if self.frame is not None:
            phase_bit, parity_bit, axis = self.frame
            flip = 0
            if axis in ("Y", "Z"):
                flip ^= int(bitstring[parity_bit])
            if axis in ("X", "Y"):
                flip ^= int(bitstring[phase_bit])
            observed = str(int(observed) ^ flip)
        return observed == self.expected

    def to_document(self) -> Dict[str, Any]:
        doc: Dict[str, Any] = {"bits": list(self.bits), "expected": self.expected, "combine": self.combine}
        if self.frame is not None:
            doc["frame"] = list(self.frame)
        return doc

    @classmethod
    def from_document(cls, doc: Dict[str, Any]) -> "SuccessRule":
        frame = doc.get("frame")
        return cls(
            bits=tuple(int(b) for b in doc["bits"]),
            expected=str(doc["expected"]),
            combine=doc.get("combine", "concat"),
            frame=(int(frame[0]), int(frame[1]), str(frame[2])) if frame else None,
        )


@dataclass(frozen=True)
class Variant:
    """
    One setting a protocol is averaged over: a prepared state, a 2-bit message,
    or a two-qubit measurement setting. `axis`/`expected` describe the ideal
    outcome; Haar variants carry their rotation angles in `params`.
    """
    kind: VariantKind
    index: int
    label: str
    axis: Optional[str] = None
    expected: str = "0"
    params: Tuple[float, ...] = ()

    def to_document(self) -> Dict[str, Any]:
        return {
            "kind": self.kind.value, "index": self.index, "label": self.label,
            "axis": self.axis, "expected": self.expected, "params": list(self.params),
        }

    @classmethod
    def from_document(cls, doc: Dict[str, Any]) -> "Variant":
        return cls(
            kind=VariantKind(doc["kind"]), index=int(doc["index"]), label=str(doc["label"]),
            axis=doc.get("axis"), expected=str(doc.get("expected", "0")),
            params=tuple(float(p) for p in doc.get("params", ())),
        )


TWO_QUBIT_GATES = frozenset({"cx", "swap"})


@dataclass(frozen=True)
class Circuit:
    roster: Tuple[int, ...]  # physical qubit ids in path order
    ops: Tuple[Op, ...]
    num_clbits: int
    protocol: ProtocolId
    variant: Variant
    success: SuccessRule
    seed: Optional[int] = None
    group: Optional[str] = None

    @property
    def n(self) -> int:
        return len(self.roster)

    @property
    def path(self) -> Path:
        return Path(self.roster)

    @property
    def label(self) -> str:
        return f"{self.protocol.value}:{self.variant.label}:{self.path.label}"

    def with_seed(self, seed: int, group: Optional[str] = None) -> "Circuit":
        return replace(self, seed=seed, group=group if group is not None else self.group)

    def count(self, gate: str) -> int:
        return sum(1 for op in self.ops if op.name == gate)

    @property
    def swap_count(self) -> int:
        return self.count("swap")

    def validate(self) -> None:
        """Raises SimulationError when gates leave the roster or 2-qubit gates skip along the path."""
        if not any(op.name == "measure" for op in self.ops):
            raise SimulationError(f"Circuit {self.label} has no measurement")
        for op in self.ops:
            if any(q < 0 or q >= self.n for q in op.qubits):
                raise SimulationError(f"Gate {op.name} on {op.qubits} is outside the {self.n}-qubit roster")
            if op.name in TWO_QUBIT_GATES:
                a, b = op.qubits
                if abs(a - b) != 1:
                    raise SimulationError(f"Two-qubit gate {op.name} on non-adjacent path positions {a},{b}")
            if op.clbit is not None and not 0 <= op.clbit < self.num_clbits:
                raise SimulationError(f"Classical bit {op.clbit} out of range")
            if op.condition is not None and not 0 <= op.condition < self.num_clbits:
                raise SimulationError(f"Condition bit {op.condition} out of range")

    def to_document(self) -> Dict[str, Any]:
        """Export form: ordered gate list with named gates and local qubit indices."""
        return {
            "schema_version": CIRCUIT_SCHEMA_VERSION,
            "protocol": self.protocol.value,
            "variant": self.variant.to_document(),
            "roster": list(self.roster),
            "num_clbits": self.num_clbits,
            "ops": [op.to_document() for op in self.ops],
            "success": self.success.to_document(),
            "seed": self.seed,
            "group": self.group,
        }

    @classmethod
    def from_document(cls, doc: Dict[str, Any]) -> "Circuit":
        if doc.get("schema_version") != CIRCUIT_SCHEMA_VERSION:
            raise SimulationError(f"Unsupported circuit schema version {doc.get('schema_version')}")
        return cls(
            roster=tuple(int(q) for q in doc["roster"]),
            ops=tuple(Op.from_document(o) for o in doc["ops"]),
            num_clbits=int(doc["num_clbits"]),
            protocol=ProtocolId(doc["protocol"]),
            variant=Variant.from_document(doc["variant"]),
            success=SuccessRule.from_document(doc["success"]),
            seed=doc.get("seed"),
            group=doc.get("group"),
        )


# --- Execution ---

@dataclass(frozen=True)
class NoiseModel:
    p1: float = 0.0
    p2: float = 0.0
    readout_eps: float = 0.0
    idle_damping: float = 0.0

    def __post_init__(self):
        for name in ("p1", "p2", "readout_eps", "idle_damping"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"Noise parameter {name}={value} is outside [0, 1]")

    @property
    def gate_noise_free(self) -> bool:
        return self.p1 == 0.0 and self.p2 == 0.0 and self.idle_damping == 0.0

    def to_document(self) -> Dict[str, float]:
        return {"p1": self.p1, "p2": self.p2, "readout_eps": self.readout_eps, "idle_damping": self.idle_damping}


@dataclass
class ShotResult:
    counts: Dict[str, int]
    shots: int
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if sum(self.counts.values()) != self.shots:
            raise ValueError(f"Counts sum to {sum(self.counts.values())}, expected {self.shots} shots")

    def frequency(self, predicate) -> float:
        if self.shots == 0:
            return 0.0
        return sum(c for bits, c in self.counts.items() if predicate(bits)) / self.shots


@dataclass
class BackendJob:
    job_id: str
    backend_id: str
    batch_size: int
    shots: int
    status: JobStatus
    results: Dict[int, ShotResult] = field(default_factory=dict)  # circuit index -> result
    cancelled: Tuple[int, ...] = ()

    @property
    def missing(self) -> List[int]:
        return [i for i in range(self.batch_size) if i not in self.results]


# --- Assessment ---

@dataclass(frozen=True)
class FidelityEstimate:
    value: float
    stderr: float
    shots_used: int
    path: Path
    protocol: ProtocolId
    seed: Optional[int] = None


@dataclass(frozen=True)
class RectStats:
    subchip: Tuple[int, ...]
    protocol: ProtocolId
    stage: Stage
    mean: float
    min: float
    max: float
    argmin: Path
    estimates: Tuple[FidelityEstimate, ...]


@dataclass(frozen=True)
class Task:
    subchip: SubChip
    protocol: ProtocolId
    stage: Stage
    pathset: PathSet
    backend: str
    shots: int
    attempt: int = 0
    rerun: bool = False

    def __post_init__(self):
        if self.pathset.stage != self.stage:
            raise ValueError(f"PathSet stage {self.pathset.stage.value} does not match task stage {self.stage.value}")

    @property
    def key(self) -> Tuple[Tuple[int, ...], ProtocolId]:
        return (self.subchip.rect_indices, self.protocol)

    @property
    def sort_key(self):
        return (self.protocol.order, self.subchip.rect_indices, self.stage.order)

    @property
    def label(self) -> str:
        suffix = f" (rerun {self.attempt})" if self.rerun else ""
        return f"{self.protocol.value} {self.stage.value} on {self.subchip.label}{suffix}"
