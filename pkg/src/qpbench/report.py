# src/qpbench/report.py
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple, Union

from . import charts
from .errors import ReportError
from .models import ProtocolId, Stage, SubChipKind
from .protocols import swap_distance
from .workflow import SINGLE_STAGES, AssessmentState, Ladder, LadderStatus

logger = logging.getLogger(__name__)

CHART_FORMATS = ("rows", "svg")


class Outcome(str, Enum):
    CAPABLE = "capable"
    FAILED_AT = "failed_at"
    NOT_TESTED = "not_tested"


@dataclass(frozen=True)
class VectorEntry:
    outcome: Outcome
    value: Optional[float] = None  # A-L minimum for capable entries
    stage: Optional[Stage] = None  # terminal stage for failed entries
    partial: bool = False

    def to_document(self) -> Dict[str, Any]:
        doc: Dict[str, Any] = {"outcome": self.outcome.value}
        if self.outcome is Outcome.CAPABLE:
            doc["min"] = self.value
        elif self.outcome is Outcome.FAILED_AT:
            doc["stage"] = self.stage.value
        if self.partial:
            doc["partial"] = True
        return doc

    @classmethod
    def from_document(cls, doc: Dict[str, Any]) -> "VectorEntry":
        return cls(
            outcome=Outcome(doc["outcome"]),
            value=doc.get("min"),
            stage=Stage.parse(doc["stage"]) if doc.get("stage") else None,
            partial=bool(doc.get("partial", False)),
        )


NOT_TESTED = VectorEntry(Outcome.NOT_TESTED)


@dataclass
class ProtocolVector:
    """Per-rectangle (and per-pair) outcome of every assessed protocol."""
    topology: str
    topology_digest: str
    rect_count: int
    protocols: Tuple[ProtocolId, ...]
    singles: Dict[int, Dict[ProtocolId, VectorEntry]] = field(default_factory=dict)
    pairs: Dict[Tuple[int, int], Dict[ProtocolId, VectorEntry]] = field(default_factory=dict)

    def entry(self, rect: int, protocol: ProtocolId) -> VectorEntry:
        return self.singles.get(rect, {}).get(protocol, NOT_TESTED)

    def to_document(self) -> Dict[str, Any]:
        return {
            "topology": self.topology,
            "topology_digest": self.topology_digest,
            "rect_count": self.rect_count,
            "protocols": [p.value for p in self.protocols],
            "singles": {str(r): {p.value: e.to_document() for p, e in row.items()}
                        for r, row in sorted(self.singles.items())},
            "pairs": {f"{a}+{b}": {p.value: e.to_document() for p, e in row.items()}
                      for (a, b), row in sorted(self.pairs.items())},
        }

    @classmethod
    def from_document(cls, doc: Dict[str, Any]) -> "ProtocolVector":
        def rows(section):
            return {p: VectorEntry.from_document(e) for p, e in section.items()}
        try:
            return cls(
                topology=doc["topology"],
                topology_digest=doc["topology_digest"],
                rect_count=int(doc["rect_count"]),
                protocols=tuple(ProtocolId(p) for p in doc["protocols"]),
                singles={int(r): {ProtocolId(p): e for p, e in rows(row).items()}
                         for r, row in doc.get("singles", {}).items()},
                pairs={tuple(int(x) for x in k.split("+")): {ProtocolId(p): e for p, e in rows(row).items()}
                       for k, row in doc.get("pairs", {}).items()},
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ReportError(f"Malformed protocol vector document: {e}") from e


def _entry_for(ladder: Optional[Ladder]) -> VectorEntry:
    if ladder is None:
        return NOT_TESTED
    status = ladder.status
    if status is LadderStatus.PASSED:
        return VectorEntry(Outcome.CAPABLE, value=ladder.results[Stage.AL].stats.min)
    if status is LadderStatus.FAILED:
        return VectorEntry(Outcome.FAILED_AT, stage=ladder.failed_stage)
    return VectorEntry(Outcome.NOT_TESTED, partial=ladder.partial)


def protocol_vector(state: AssessmentState) -> ProtocolVector:
    vector = ProtocolVector(
        topology=state.topology.name,
        topology_digest=state.topology.digest,
        rect_count=len(state.topology.rectangles),
        protocols=state.protocols,
    )
    for rect in state.topology.rect_indices:
        vector.singles[rect] = {p: _entry_for(state.find((rect,), p)) for p in state.protocols}
    for (rects, protocol), ladder in sorted(state.ladders.items(), key=lambda kv: (kv[0][0], kv[0][1].order)):
        if ladder.subchip.kind is SubChipKind.PAIR:
            vector.pairs.setdefault(rects, {})[protocol] = _entry_for(ladder)
    return vector


def empty_vector() -> Dict[str, Any]:
    return {"topology": None, "topology_digest": None, "rect_count": 0, "protocols": [], "singles": {}, "pairs": {}}


# --- Scores ---

@dataclass(frozen=True)
class ChipScore:
    """Yield-scaled mean of capable rectangles' minimum fidelities; dimensionless."""
    protocol: ProtocolId
    chip: str
    n0: int
    xs: Tuple[float, ...]
    n: int
    avg_min: float
    score: float
    not_tested: int = 0

    def to_document(self) -> Dict[str, Any]:
        return {
            "protocol": self.protocol.value, "chip": self.chip, "N0": self.n0, "N": self.n,
            "avg_min": self.avg_min, "score": self.score, "not_tested": self.not_tested, "unit": "dimensionless",
        }


def score_from_summary(count: int, avg_min: float, n0: int) -> float:
    """Yield-ratio form (N / N0) * mean of capable minima, from a published (count, average) summary."""
    if n0 < 1:
        raise ReportError(f"N0 must be >= 1, got {n0}")
    return count / n0 * avg_min


def chip_score(vector: ProtocolVector, protocol: Union[ProtocolId, str], n0: Optional[int] = None) -> ChipScore:
    pid = protocol if isinstance(protocol, ProtocolId) else ProtocolId.parse(protocol)
    n0 = vector.rect_count if n0 is None else n0
    if n0 < 1:
        raise ReportError(f"N0 must be >= 1, got {n0}")
    entries = [vector.entry(r, pid) for r in range(1, vector.rect_count + 1)]
    xs = tuple(e.value if e.outcome is Outcome.CAPABLE else 0.0 for e in entries)
    positive = [x for x in xs if x > 0]
    n = len(positive)
    avg = math.fsum(positive) / n if n else 0.0
    direct = math.fsum(xs) / n0
    scaled = score_from_summary(n, avg, n0)
    if not math.isclose(direct, scaled, rel_tol=1e-12, abs_tol=1e-15):
        raise ReportError(f"Score forms disagree for {pid.value}: {direct!r} vs {scaled!r}")
    return ChipScore(protocol=pid, chip=vector.topology, n0=n0, xs=xs, n=n, avg_min=avg, score=direct,
                     not_tested=sum(1 for e in entries if e.outcome is Outcome.NOT_TESTED))


# --- Swap distance ---

@dataclass(frozen=True)
class SwapPoint:
    d: int
    mean: float
    min: float
    max: float
    count: int

    def to_document(self) -> Dict[str, Any]:
        return {"d": self.d, "mean": self.mean, "min": self.min, "max": self.max, "count": self.count}


@dataclass
class SwapDistanceSeries:
    protocol: ProtocolId
    points: Dict[int, SwapPoint] = field(default_factory=dict)

    @property
    def empty(self) -> bool:
        return not self.points

    def to_document(self) -> Dict[str, Any]:
        return {"protocol": self.protocol.value, "empty": self.empty,
                "points": [p.to_document() for _, p in sorted(self.points.items())]}


def swap_distance_series(state: AssessmentState, protocol: Union[ProtocolId, str]) -> SwapDistanceSeries:
    """Per-path A-L values of A-L-passing rectangles, grouped by swap distance."""
    pid = protocol if isinstance(protocol, ProtocolId) else ProtocolId.parse(protocol)
    groups: Dict[int, List[float]] = defaultdict(list)
    for rect in state.topology.rect_indices:
        ladder = state.find((rect,), pid)
        if ladder is None or not ladder.passed(Stage.AL):
            continue
        for estimate in ladder.results[Stage.AL].estimates:
            d = swap_distance(pid, estimate.path.n, state.settings.allow_zero_swap, state.registry)
            groups[d].append(estimate.value)
    series = SwapDistanceSeries(protocol=pid)
    for d, values in sorted(groups.items()):
        series.points[d] = SwapPoint(d=d, mean=math.fsum(values) / len(values), min=min(values), max=max(values),
                                     count=len(values))
    if series.empty:
        logger.info(f"No rectangle passed {pid.value} A-L; swap-distance series is empty")
    return series


# --- Pairs ---

@dataclass(frozen=True)
class PairCount:
    protocol: ProtocolId
    count: int
    passed: Tuple[Tuple[int, int], ...]
    partial: Tuple[Tuple[int, int], ...]

    def to_document(self) -> Dict[str, Any]:
        return {
            "protocol": self.protocol.value, "count": self.count,
            "passed": [f"{a}+{b}" for a, b in self.passed], "partial": [f"{a}+{b}" for a, b in self.partial],
        }


def pair_count_table(state: AssessmentState) -> Dict[ProtocolId, PairCount]:
    """Successful pair sub-chips per protocol; pairs with open stages are excluded and flagged."""
    table = {}
    for protocol in state.protocols:
        passed, partial = [], []
        for (rects, pid), ladder in sorted(state.ladders.items(), key=lambda kv: kv[0][0]):
            if pid is not protocol or ladder.subchip.kind is not SubChipKind.PAIR:
                continue
            if ladder.passed(Stage.AL):
                passed.append(rects)
            elif ladder.partial:
                partial.append(rects)
        table[protocol] = PairCount(protocol, len(passed), tuple(passed), tuple(partial))
    return table


# --- Consistency ---

def _passed_stages(entry: VectorEntry) -> Tuple[Stage, ...]:
    if entry.outcome is Outcome.CAPABLE:
        return SINGLE_STAGES
    if entry.outcome is Outcome.FAILED_AT:
        return SINGLE_STAGES[:SINGLE_STAGES.index(entry.stage)]
    return ()


def consistency_overlap(vector_a: ProtocolVector, vector_b: ProtocolVector,
                        protocol: Union[ProtocolId, str]) -> Dict[str, Any]:
    """Per-stage pass sets of two runs on the same topology, their intersection and Jaccard index."""
    pid = protocol if isinstance(protocol, ProtocolId) else ProtocolId.parse(protocol)
    if vector_a.topology_digest != vector_b.topology_digest:
        raise ReportError(f"Cannot compare runs on different topologies "
                          f"('{vector_a.topology}' vs '{vector_b.topology}')")
    report: Dict[str, Any] = {"protocol": pid.value, "topology": vector_a.topology, "stages": {}}
    for stage in SINGLE_STAGES:
        a = sorted(r for r in vector_a.singles if stage in _passed_stages(vector_a.entry(r, pid)))
        b = sorted(r for r in vector_b.singles if stage in _passed_stages(vector_b.entry(r, pid)))
        both = sorted(set(a) & set(b))
        union = set(a) | set(b)
        report["stages"][stage.value] = {
            "a": a, "b": b, "both": both,
            "jaccard": len(both) / len(union) if union else 1.0,
        }
    return report


# --- Charts ---

def chart_rows(state: AssessmentState) -> List[Dict[str, Any]]:
    rows = []
    for protocol in state.protocols:
        for stage in SINGLE_STAGES:
            for rect in state.topology.rect_indices:
                ladder = state.find((rect,), protocol)
                result = ladder.results.get(stage) if ladder else None
                if result is None or result.stats is None:
                    continue
                rows.append({
                    "rect": rect, "protocol": protocol.value, "stage": stage.value,
                    "mean": result.stats.mean, "min": result.stats.min, "max": result.stats.max,
                    "threshold": result.threshold, "pass": result.decision.value == "pass",
                })
    return rows


def emit_charts(state: AssessmentState, fmt: str = "rows") -> Dict[str, Any]:
    """
    Chart data per (protocol, stage) and per protocol swap-distance series.

    "rows" returns {"rect_rows": [...], "swap_rows": [...]}; "svg" returns
    {filename: svg_text}.
    """
    if fmt not in CHART_FORMATS:
        raise ReportError(f"Unsupported chart format '{fmt}'. Expected one of {list(CHART_FORMATS)}")
    rows = chart_rows(state)
    if not rows:
        raise ReportError("Nothing to chart: no stage has been decided yet")
    swap_rows = []
    for protocol in state.protocols:
        series = swap_distance_series(state, protocol)
        swap_rows.extend({"protocol": protocol.value, **p.to_document()} for _, p in sorted(series.points.items()))
    if fmt == "rows":
        return {"rect_rows": rows, "swap_rows": swap_rows}

    documents: Dict[str, str] = {}
    for protocol in state.protocols:
        for stage in SINGLE_STAGES:
            selected = [r for r in rows if r["protocol"] == protocol.value and r["stage"] == stage.value]
            if selected:
                title = f"{state.topology.name}: {protocol.value} {stage.value}"
                documents[f"{protocol.value}_{stage.value}.svg"] = charts.bar_chart(
                    title, selected, threshold=state.thresholds[protocol])
        points = [r for r in swap_rows if r["protocol"] == protocol.value]
        if points:
            documents[f"{protocol.value}_swap_distance.svg"] = charts.swap_distance_chart(
                f"{state.topology.name}: {protocol.value} fidelity vs swap distance", points)
    return documents
