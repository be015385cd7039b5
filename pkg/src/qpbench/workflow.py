# src/qpbench/workflow.py
"""
Optimal lookup workflow.

Each (sub-chip, protocol) pair owns a ladder of stages: c2c -> M-L -> A-L for
single rectangles, c2c -> A-L for adjacent pairs. A stage is decided once all
of its planned paths carry an estimate; a failed stage ends the ladder.
`plan` derives the runnable tasks from the state alone, `record`/`merge`
feed results back, and every mutation is mirrored to the journal so `resume`
can rebuild the exact state.
"""
import asyncio
import logging
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

from .assess import aggregate, estimate_fidelity, pass_decision
from .backends import BaseBackend
from .errors import JournalError, QPBenchError, WorkflowError
from .journal import JournalWriter, read_journal
from .models import (
    BackendJob,
    ChipTopology,
    Circuit,
    Decision,
    FidelityEstimate,
    Path,
    PathSet,
    ProtocolId,
    RectStats,
    ShotResult,
    Stage,
    SubChip,
    SubChipKind,
    Task,
    Variant,
    WorkflowMode,
)
from .protocols import TemplateRegistry, build_circuit, load_registry, variants_for
from .protocols import threshold as protocol_threshold
from .topology import adjacent_pairs, enumerate_paths, load_topology, make_subchip
from .utils.constants import DEFAULT_BACKEND, DEFAULT_CLOCK, DEFAULT_SEED, DEFAULT_SHOTS, JOURNAL_SCHEMA_VERSION
from .utils.seeding import canonical_digest, derive_seed, make_clock

logger = logging.getLogger(__name__)

SINGLE_STAGES = (Stage.C2C, Stage.ML, Stage.AL)
# M-L is skipped for pairs
PAIR_STAGES = (Stage.C2C, Stage.AL)

LadderKey = Tuple[Tuple[int, ...], ProtocolId]


class LadderStatus(str, Enum):
    NOT_STARTED = "not_started"
    IN_PROGRESS = "in_progress"
    PASSED = "passed"
    FAILED = "failed"


@dataclass
class WorkflowSettings:
    backend: str = DEFAULT_BACKEND
    shots: int = DEFAULT_SHOTS
    seed: int = DEFAULT_SEED
    feed_forward: bool = False
    allow_zero_swap: bool = False
    haar_samples: int = 0
    protocol_doc: Optional[str] = None
    clock: str = DEFAULT_CLOCK

    def to_document(self) -> Dict[str, Any]:
        return {
            "backend": self.backend, "shots": self.shots, "seed": self.seed,
            "feed_forward": self.feed_forward, "allow_zero_swap": self.allow_zero_swap,
            "haar_samples": self.haar_samples, "protocol_doc": self.protocol_doc, "clock": self.clock,
        }

    @classmethod
    def from_document(cls, doc: Dict[str, Any]) -> "WorkflowSettings":
        known = cls().to_document().keys()
        return cls(**{k: v for k, v in doc.items() if k in known})


@dataclass
class PathRecord:
    estimate: FidelityEstimate
    timestamp: str
    attempt: int
    # superseded records for the same path, oldest first
    history: List["PathRecord"] = field(default_factory=list)

    def to_document(self) -> Dict[str, Any]:
        e = self.estimate
        return {
            "path": list(e.path.qubits), "value": e.value, "stderr": e.stderr, "shots": e.shots_used,
            "seed": e.seed, "attempt": self.attempt, "timestamp": self.timestamp,
            "history": [h.to_document() for h in self.history],
        }


@dataclass
class StageResult:
    stage: Stage
    planned: Tuple[Path, ...]
    threshold: float
    records: Dict[Path, PathRecord] = field(default_factory=dict)
    attempts: int = 0
    stats: Optional[RectStats] = None
    decision: Optional[Decision] = None

    @property
    def missing(self) -> List[Path]:
        return [p for p in self.planned if p not in self.records]

    @property
    def complete(self) -> bool:
        return not self.missing

    @property
    def estimates(self) -> List[FidelityEstimate]:
        return [self.records[p].estimate for p in sorted(self.records)]

    def to_document(self) -> Dict[str, Any]:
        return {
            "stage": self.stage.value, "threshold": self.threshold, "attempts": self.attempts,
            "planned": len(self.planned),
            "decision": self.decision.value if self.decision else None,
            "records": [self.records[p].to_document() for p in sorted(self.records)],
        }


@dataclass
class Ladder:
    subchip: SubChip
    protocol: ProtocolId
    results: Dict[Stage, StageResult] = field(default_factory=dict)

    @property
    def stages(self) -> Tuple[Stage, ...]:
        return SINGLE_STAGES if self.subchip.kind is SubChipKind.SINGLE else PAIR_STAGES

    def passed(self, stage: Stage) -> bool:
        result = self.results.get(stage)
        return result is not None and result.decision is Decision.PASS

    @property
    def failed_stage(self) -> Optional[Stage]:
        for stage in self.stages:
            result = self.results.get(stage)
            if result is not None and result.decision is Decision.FAIL:
                return stage
        return None

    @property
    def status(self) -> LadderStatus:
        if not self.results:
            return LadderStatus.NOT_STARTED
        if self.failed_stage is not None:
            return LadderStatus.FAILED
        if all(self.passed(s) for s in self.stages):
            return LadderStatus.PASSED
        return LadderStatus.IN_PROGRESS

    @property
    def partial(self) -> bool:
        return any(r.decision is None for r in self.results.values())

    def next_stage(self) -> Optional[Stage]:
        """Stage still to be run or completed; None once the ladder is terminal."""
        for stage in self.stages:
            result = self.results.get(stage)
            if result is None or result.decision is None:
                return stage
            if result.decision is Decision.FAIL:
                return None
        return None

    def to_document(self) -> Dict[str, Any]:
        return {
            "rects": list(self.subchip.rect_indices),
            "protocol": self.protocol.value,
            "stages": [self.results[s].to_document() for s in self.stages if s in self.results],
        }


@dataclass
class AssessmentState:
    topology: ChipTopology
    mode: WorkflowMode
    protocols: Tuple[ProtocolId, ...]
    thresholds: Dict[ProtocolId, float]
    settings: WorkflowSettings = field(default_factory=WorkflowSettings)
    registry: Optional[TemplateRegistry] = None
    ladders: Dict[LadderKey, Ladder] = field(default_factory=dict)
    journal: Optional[JournalWriter] = None
    clock: Callable[[], str] = field(default_factory=lambda: make_clock(DEFAULT_CLOCK))
    _subchips: Dict[Tuple[int, ...], SubChip] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.registry is None:
            self.registry = load_registry(self.settings.protocol_doc)

    def subchip(self, rect_indices: Sequence[int]) -> SubChip:
        key = tuple(sorted(rect_indices))
        if key not in self._subchips:
            self._subchips[key] = make_subchip(self.topology, key)
        return self._subchips[key]

    def find(self, rect_indices: Sequence[int], protocol: ProtocolId) -> Optional[Ladder]:
        return self.ladders.get((tuple(sorted(rect_indices)), protocol))

    def ladder(self, rect_indices: Sequence[int], protocol: ProtocolId) -> Ladder:
        key = (tuple(sorted(rect_indices)), protocol)
        if key not in self.ladders:
            self.ladders[key] = Ladder(subchip=self.subchip(key[0]), protocol=protocol)
        return self.ladders[key]

    def min_len(self, protocol: ProtocolId) -> int:
        return self.registry.get(protocol).effective_min_len(self.settings.allow_zero_swap)

    def pathset(self, rect_indices: Sequence[int], protocol: ProtocolId, stage: Stage) -> PathSet:
        return enumerate_paths(self.subchip(rect_indices), stage, self.min_len(protocol),
                               strict=self.mode is WorkflowMode.STRICT)

    def header_document(self) -> Dict[str, Any]:
        return {
            "type": "header",
            "schema_version": JOURNAL_SCHEMA_VERSION,
            "topology": self.topology.name,
            "topology_digest": self.topology.digest,
            "topology_document": self.topology.document,
            "mode": self.mode.value,
            "protocols": [p.value for p in self.protocols],
            "thresholds": {p.value: self.thresholds[p] for p in self.protocols},
            "settings": self.settings.to_document(),
        }

    def to_document(self) -> Dict[str, Any]:
        ladders = sorted(self.ladders.values(), key=lambda l: (l.subchip.rect_indices, l.protocol.order))
        return {
            "topology_digest": self.topology.digest,
            "mode": self.mode.value,
            "protocols": [p.value for p in self.protocols],
            "thresholds": {p.value: self.thresholds[p] for p in self.protocols},
            "ladders": [l.to_document() for l in ladders if l.results],
        }

    def digest(self) -> str:
        return canonical_digest(self.to_document())

    def _journal(self, entry: Dict[str, Any]) -> str:
        stamp = self.clock()
        if self.journal is not None:
            self.journal.write({**entry, "timestamp": stamp})
        return stamp


def create_state(topology: ChipTopology, mode: Union[WorkflowMode, str] = WorkflowMode.STRICT,
                 protocols: Optional[Sequence[Union[ProtocolId, str]]] = None,
                 threshold_overrides: Optional[Dict[Any, float]] = None,
                 settings: Optional[WorkflowSettings] = None, registry: Optional[TemplateRegistry] = None,
                 journal: Optional[JournalWriter] = None, clock: Optional[Callable[[], str]] = None) -> AssessmentState:
    """Fresh state; strict mode always includes the do-nothing gate protocol."""
    mode = WorkflowMode(mode)
    settings = settings or WorkflowSettings()
    chosen = {p if isinstance(p, ProtocolId) else ProtocolId.parse(p) for p in (protocols or list(ProtocolId))}
    if mode is WorkflowMode.STRICT and ProtocolId.DO_NOTHING not in chosen:
        logger.info("Strict mode: adding do_nothing, whose c2c stage gates the other protocols")
        chosen.add(ProtocolId.DO_NOTHING)
    ordered = tuple(sorted(chosen, key=lambda p: p.order))
    registry = registry or load_registry(settings.protocol_doc)
    thresholds = {p: protocol_threshold(p, threshold_overrides, registry) for p in ordered}
    for p in ordered:
        template = registry.get(p)
        overridden = threshold_overrides and any(str(getattr(k, "value", k)) == p.value for k in threshold_overrides)
        if template.threshold_source != "published" and not overridden:
            logger.warning(f"{p.value}: using {template.threshold_source} threshold {thresholds[p]:.4f}")

    state = AssessmentState(
        topology=topology, mode=mode, protocols=ordered, thresholds=thresholds, settings=settings,
        registry=registry, journal=journal, clock=clock or make_clock(settings.clock),
    )
    state._journal(state.header_document())
    return state


# --- Planning ---

def _gate_resolved(state: AssessmentState, rect: int) -> bool:
    ladder = state.find((rect,), ProtocolId.DO_NOTHING)
    return ladder is not None and Stage.C2C in ladder.results and ladder.results[Stage.C2C].decision is not None


def _gate_passed(state: AssessmentState, rect: int) -> bool:
    ladder = state.find((rect,), ProtocolId.DO_NOTHING)
    return ladder is not None and ladder.passed(Stage.C2C)


def _single_capable(state: AssessmentState, rect: int, protocol: ProtocolId) -> bool:
    ladder = state.find((rect,), protocol)
    return ladder is not None and ladder.passed(Stage.AL)


def _next_task(state: AssessmentState, rect_indices: Tuple[int, ...], protocol: ProtocolId) -> Optional[Task]:
    ladder = state.find(rect_indices, protocol)
    subchip = state.subchip(rect_indices)
    if ladder is None:
        stage = SINGLE_STAGES[0] if len(rect_indices) == 1 else PAIR_STAGES[0]
    else:
        stage = ladder.next_stage()
        if stage is None:
            return None
    full = state.pathset(rect_indices, protocol, stage)
    if not full.paths:
        logger.warning(f"No {stage.value} paths of length >= {state.min_len(protocol)} on {subchip.label}")
        return None
    s = state.settings
    result = ladder.results.get(stage) if ladder else None
    if result is None:
        return Task(subchip, protocol, stage, full, s.backend, s.shots, attempt=0)
    return Task(subchip, protocol, stage, full.subset(result.missing), s.backend, s.shots,
                attempt=result.attempts, rerun=True)


def plan(state: AssessmentState) -> List[Task]:
    """
    Next runnable tasks, ordered by (protocol, rectangles, stage).

    Strict mode first resolves do-nothing c2c on every rectangle; afterwards
    transmit and do-nothing run everywhere and the other protocols only on
    rectangles that passed that gate. Pairs are planned once both members
    passed their single-rectangle A-L for the protocol.
    """
    rects = state.topology.rect_indices
    strict = state.mode is WorkflowMode.STRICT
    if strict:
        pending = [r for r in rects if not _gate_resolved(state, r)]
        if pending:
            gate = [_next_task(state, (r,), ProtocolId.DO_NOTHING) for r in pending]
            return sorted((t for t in gate if t is not None), key=lambda t: t.sort_key)

    tasks = []
    for protocol in state.protocols:
        ungated = protocol in (ProtocolId.DO_NOTHING, ProtocolId.TRANSMIT)
        for r in rects:
            if strict and not ungated and not _gate_passed(state, r):
                continue
            task = _next_task(state, (r,), protocol)
            if task is not None:
                tasks.append(task)
        for pair in adjacent_pairs(state.topology):
            if all(_single_capable(state, r, protocol) for r in pair):
                task = _next_task(state, pair, protocol)
                if task is not None:
                    tasks.append(task)
    return sorted(tasks, key=lambda t: t.sort_key)


# --- Recording ---

def _estimates_of(result: Union[RectStats, Sequence[FidelityEstimate]]) -> List[FidelityEstimate]:
    return list(result.estimates) if isinstance(result, RectStats) else list(result)


def _task_entry(task: Task, op: str, stage_threshold: float) -> Dict[str, Any]:
    return {
        "type": "task", "op": op, "subchip": list(task.subchip.rect_indices), "protocol": task.protocol.value,
        "stage": task.stage.value, "paths": [list(p.qubits) for p in task.pathset],
        "attempt": task.attempt, "rerun": task.rerun, "backend": task.backend, "shots": task.shots,
        "threshold": stage_threshold,
    }


def _ingest(state: AssessmentState, task: Task, op: str, estimates: List[FidelityEstimate],
            threshold_value: Optional[float], stamps: Optional[List[str]] = None) -> StageResult:
    ladder = state.ladder(task.subchip.rect_indices, task.protocol)
    result = ladder.results.get(task.stage)
    if result is None:
        full = state.pathset(task.subchip.rect_indices, task.protocol, task.stage)
        chosen = threshold_value if threshold_value is not None else state.thresholds[task.protocol]
        result = StageResult(stage=task.stage, planned=full.paths, threshold=chosen)
        ladder.results[task.stage] = result
    elif threshold_value is not None:
        result.threshold = threshold_value

    state._journal(_task_entry(task, op, result.threshold))
    result.attempts += 1
    rect_list = list(task.subchip.rect_indices)
    for i, estimate in enumerate(sorted(estimates, key=lambda e: e.path)):
        line = {
            "type": "result", "subchip": rect_list, "protocol": task.protocol.value, "stage": task.stage.value,
            "path": list(estimate.path.qubits), "value": estimate.value, "stderr": estimate.stderr,
            "shots": estimate.shots_used, "seed": estimate.seed, "attempt": task.attempt,
        }
        stamp = stamps[i] if stamps is not None else state._journal(line)
        record = PathRecord(estimate=estimate, timestamp=stamp, attempt=task.attempt)
        existing = result.records.get(estimate.path)
        if existing is not None:
            if existing.estimate == estimate:
                continue
            record.history = existing.history + [PathRecord(existing.estimate, existing.timestamp, existing.attempt)]
            logger.warning(f"Conflicting result for path {estimate.path.label} on {task.label}: "
                           f"seed {existing.estimate.seed} superseded by {estimate.seed}")
            if stamps is None:
                state._journal({
                    "type": "conflict", "subchip": rect_list, "protocol": task.protocol.value,
                    "stage": task.stage.value, "path": list(estimate.path.qubits),
                    "kept_seed": estimate.seed, "superseded_seed": existing.estimate.seed,
                })
        result.records[estimate.path] = record
        logger.debug(f"{task.label}: path {estimate.path.label} -> {estimate.value:.4f} +/- {estimate.stderr:.4f}")

    if result.complete and result.records:
        result.stats = aggregate(task.subchip.rect_indices, task.protocol, task.stage, result.estimates)
        result.decision = pass_decision(result.stats, result.threshold)
        logger.info(f"{task.protocol.value} {task.stage.value} on {task.subchip.label}: {result.decision.value.upper()} "
                    f"(min {result.stats.min:.4f}, mean {result.stats.mean:.4f}, threshold {result.threshold:.4f})")
        if stamps is None:
            state._journal({
                "type": "decision", "subchip": rect_list, "protocol": task.protocol.value,
                "stage": task.stage.value, "decision": result.decision.value, "min": result.stats.min,
                "mean": result.stats.mean, "max": result.stats.max, "argmin": list(result.stats.argmin.qubits),
                "threshold": result.threshold,
            })
    elif result.missing:
        logger.info(f"{task.label}: {len(result.records)}/{len(result.planned)} paths done, "
                    f"{len(result.missing)} missing; stage stays open")
    return result


def _check_paths(task: Task, estimates: List[FidelityEstimate]) -> None:
    allowed = set(task.pathset.paths)
    for e in estimates:
        if e.protocol is not task.protocol:
            raise WorkflowError(f"Estimate for {e.protocol.value} recorded against {task.label}")
        if e.path not in allowed:
            raise WorkflowError(f"Path {e.path.label} is not part of task {task.label}")


def record(state: AssessmentState, task: Task, result: Union[RectStats, Sequence[FidelityEstimate]],
           threshold: Optional[float] = None, _stamps: Optional[List[str]] = None) -> AssessmentState:
    """
    Feeds a planned task's results into the state.

    The stage is decided once every planned path has an estimate; with fewer
    estimates the stage stays open and the next plan reruns the missing paths.
    """
    ladder = state.find(task.subchip.rect_indices, task.protocol)
    if ladder is not None:
        expected = ladder.next_stage()
        if expected is not task.stage:
            shown = expected.value if expected else "nothing (ladder is terminal)"
            raise WorkflowError(f"Stage mismatch for {task.label}: ladder expects {shown}")
    if (task.key, task.stage) not in {(t.key, t.stage) for t in plan(state)}:
        raise WorkflowError(f"Task {task.label} was not planned")
    estimates = _estimates_of(result)
    _check_paths(task, estimates)
    _ingest(state, task, "record", estimates, threshold, _stamps)
    return state


def merge(state: AssessmentState, task: Task, estimates: Sequence[FidelityEstimate],
          threshold: Optional[float] = None, _stamps: Optional[List[str]] = None) -> AssessmentState:
    """
    Merges rerun results into an open stage. Paths already present are
    replaced by the newer estimate; the older one stays in the path history.
    """
    estimates = list(estimates)
    if not estimates:
        return state
    ladder = state.find(task.subchip.rect_indices, task.protocol)
    result = ladder.results.get(task.stage) if ladder else None
    if result is None:
        raise WorkflowError(f"No {task.stage.value} results to merge into for {task.label}")
    if result.decision is not None:
        raise WorkflowError(f"{task.label}: stage already decided ({result.decision.value})")
    planned = set(result.planned)
    outside = [e.path.label for e in estimates if e.path not in planned]
    if outside:
        raise WorkflowError(f"Paths {outside} are not planned for {task.stage.value} on {task.subchip.label}")
    for e in estimates:
        if e.protocol is not task.protocol:
            raise WorkflowError(f"Estimate for {e.protocol.value} merged into {task.label}")
    _ingest(state, task, "merge", estimates, threshold, _stamps)
    return state


def checkpoint(state: AssessmentState) -> str:
    """Journals the current state digest; `resume` verifies each one while replaying."""
    digest = state.digest()
    state._journal({"type": "digest", "state_digest": digest})
    return digest


# --- Resume ---

def _task_from_entry(state: AssessmentState, entry: Dict[str, Any]) -> Task:
    rects = tuple(entry["subchip"])
    subchip = state.subchip(rects)
    stage = Stage.parse(entry["stage"])
    paths = tuple(Path(tuple(p)) for p in entry["paths"])
    return Task(subchip=subchip, protocol=ProtocolId(entry["protocol"]), stage=stage,
                pathset=PathSet(subchip, stage, paths), backend=entry["backend"], shots=int(entry["shots"]),
                attempt=int(entry["attempt"]), rerun=bool(entry["rerun"]))


def _estimate_from_entry(entry: Dict[str, Any]) -> FidelityEstimate:
    return FidelityEstimate(value=entry["value"], stderr=entry["stderr"], shots_used=int(entry["shots"]),
                            path=Path(tuple(entry["path"])), protocol=ProtocolId(entry["protocol"]),
                            seed=entry.get("seed"))


def _replay(state: AssessmentState, task_entry: Dict[str, Any], results: List[Dict[str, Any]]) -> None:
    task = _task_from_entry(state, task_entry)
    estimates = [_estimate_from_entry(r) for r in results]
    stamps = [r["timestamp"] for r in sorted(results, key=lambda r: tuple(r["path"]))]
    apply = record if task_entry.get("op", "record") == "record" else merge
    if apply is merge and not estimates:
        return
    apply(state, task, estimates, task_entry.get("threshold"), _stamps=stamps)


def resume(journal_path: str, topology: Optional[ChipTopology] = None, append: bool = False,
           registry: Optional[TemplateRegistry] = None) -> AssessmentState:
    """
    Rebuilds the state that wrote a journal by replaying its task and result
    entries, checking every recorded state digest on the way.
    """
    entries = read_journal(journal_path)
    if not entries:
        raise JournalError(f"Journal '{journal_path}' is empty")
    header = entries[0]
    try:
        embedded = load_topology(header["topology_document"])
    except (KeyError, QPBenchError) as e:
        raise JournalError(f"Journal '{journal_path}' carries no usable topology: {e}") from e
    if embedded.digest != header.get("topology_digest"):
        raise JournalError(f"Journal '{journal_path}': embedded topology does not match its recorded digest")
    if topology is not None and topology.digest != embedded.digest:
        raise JournalError(
            f"Journal '{journal_path}' was written for topology '{embedded.name}' ({embedded.digest[:12]}), "
            f"not '{topology.name}' ({topology.digest[:12]}); refusing to mix results across topologies"
        )

    settings = WorkflowSettings.from_document(header.get("settings", {}))
    state = AssessmentState(
        topology=embedded,
        mode=WorkflowMode(header["mode"]),
        protocols=tuple(ProtocolId(p) for p in header["protocols"]),
        thresholds={ProtocolId(p): float(v) for p, v in header["thresholds"].items()},
        settings=settings,
        registry=registry,
    )

    pending: Optional[Tuple[Dict[str, Any], List[Dict[str, Any]]]] = None
    try:
        for number, entry in enumerate(entries[1:], start=2):
            kind = entry["type"]
            if kind == "task":
                if pending:
                    _replay(state, *pending)
                pending = (entry, [])
            elif kind == "result":
                if pending is None:
                    raise JournalError(f"Journal '{journal_path}' line {number}: result without a task")
                pending[1].append(entry)
            elif kind == "digest":
                if pending:
                    _replay(state, *pending)
                    pending = None
                if state.digest() != entry["state_digest"]:
                    raise JournalError(f"Journal '{journal_path}' line {number}: replayed state digest differs "
                                       f"from the recorded one")
        if pending:
            _replay(state, *pending)
    except WorkflowError as e:
        raise JournalError(f"Journal '{journal_path}' does not replay cleanly: {e}") from e

    state.clock = make_clock(settings.clock, offset=len(entries))
    if append:
        state.journal = JournalWriter(journal_path, append=True)
    logger.info(f"Resumed assessment on '{embedded.name}' from {journal_path} ({len(entries)} entries)")
    return state


# --- Runner ---

@dataclass
class RunSummary:
    tasks_run: int = 0
    circuits_run: int = 0
    budget_exhausted: bool = False
    open_tasks: List[Task] = field(default_factory=list)


def path_seed(state: AssessmentState, task: Task, path: Path) -> int:
    return derive_seed(state.settings.seed, "path", task.subchip.rect_indices, task.protocol, task.stage,
                       path.qubits, task.attempt)


def task_variants(state: AssessmentState, protocol: ProtocolId) -> Tuple[Variant, ...]:
    s = state.settings
    return variants_for(protocol, s.haar_samples, derive_seed(s.seed, "haar", protocol), state.registry)


def build_batch(state: AssessmentState, task: Task) -> List[Circuit]:
    """One circuit per (path, variant); circuits of a path share a cancellation group."""
    s = state.settings
    batch = []
    for path in task.pathset:
        seed = path_seed(state, task, path)
        for variant in task_variants(state, task.protocol):
            circuit = build_circuit(task.protocol, path, variant, s.feed_forward, s.allow_zero_swap, state.registry)
            batch.append(circuit.with_seed(derive_seed(seed, variant.label), group=path.label))
    return batch


def collect_estimates(state: AssessmentState, task: Task, batch: Sequence[Circuit],
                      job: BackendJob) -> List[FidelityEstimate]:
    """Per-path estimates for paths whose variants all came back."""
    variants = task_variants(state, task.protocol)
    per_path: Dict[Path, Dict[Variant, ShotResult]] = {}
    for i, circuit in enumerate(batch):
        if i in job.results:
            per_path.setdefault(circuit.path, {})[circuit.variant] = job.results[i]
    estimates = []
    for path in task.pathset:
        results = per_path.get(path, {})
        if len(results) < len(variants):
            continue
        estimates.append(estimate_fidelity(task.protocol, results, path=path, seed=path_seed(state, task, path),
                                           feed_forward=state.settings.feed_forward, required=variants,
                                           registry=state.registry))
    return estimates


async def run_assessment(state: AssessmentState, backend: BaseBackend, budget: Optional[int] = None,
                         max_reruns: int = 0) -> RunSummary:
    """
    Plan/execute/record loop up to the fixpoint or the circuit budget.

    A task key runs at most 1 + max_reruns times per invocation; missing
    paths beyond that stay open for a later resume.
    """
    summary = RunSummary()
    runs: Counter = Counter()
    while True:
        candidates = [t for t in plan(state) if runs[(t.key, t.stage)] <= max_reruns]
        selected = []
        for task in candidates:
            batch = build_batch(state, task)
            spent = summary.circuits_run + sum(len(b) for _, b in selected)
            if budget is not None and spent + len(batch) > budget:
                summary.budget_exhausted = True
                break
            selected.append((task, batch))
        if not selected:
            break

        logger.info(f"Running {len(selected)} task(s): {', '.join(t.label for t, _ in selected)}")
        jobs = await asyncio.gather(*(backend.run(b, state.settings.shots) for _, b in selected),
                                    return_exceptions=True)
        errors = []
        for (task, batch), job in zip(selected, jobs):
            runs[(task.key, task.stage)] += 1
            if isinstance(job, Exception):
                logger.error(f"Task {task.label} failed on {backend.backend_id}: {job}")
                errors.append(job)
                continue
            record(state, task, collect_estimates(state, task, batch, job))
            summary.tasks_run += 1
            summary.circuits_run += len(batch)
        checkpoint(state)
        if errors:
            raise errors[0]
        if summary.budget_exhausted:
            logger.info(f"Circuit budget of {budget} reached after {summary.circuits_run} circuits")
            break

    summary.open_tasks = plan(state)
    if summary.open_tasks:
        logger.info(f"{len(summary.open_tasks)} task(s) left open: {', '.join(t.label for t in summary.open_tasks)}")
    return summary
