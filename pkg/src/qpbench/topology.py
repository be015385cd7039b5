# src/qpbench/topology.py
import json
import logging
import os
from functools import lru_cache
from itertools import combinations
from typing import Any, Dict, Iterable, List, Mapping, Sequence, Tuple, Union

import networkx as nx
import yaml

from .errors import TopologyError
from .heavy_hex import FAMILIES, bundled_document
from .models import ChipTopology, Geometry, Path, PathSet, Rectangle, Stage, SubChip, SubChipKind
from .utils.constants import TOPOLOGY_SCHEMA_VERSION
from .utils.seeding import canonical_digest

logger = logging.getLogger(__name__)

CYCLE_LENGTH = 12
REQUIRED_KEYS = ("schema_version", "name", "qubit_count", "edges", "rectangles", "adjacency")

TopologySource = Union[str, os.PathLike, Mapping[str, Any]]


def load_topology(source: TopologySource) -> ChipTopology:
    """
    Loads and validates a topology document.

    `source` is a mapping, a path to a YAML/JSON document, or the name of a
    bundled lattice ("eagle", "heron").
    """
    if isinstance(source, Mapping):
        document = dict(source)
    elif isinstance(source, str) and source.lower() in FAMILIES and not os.path.exists(source):
        document = bundled_document(source)
    else:
        document = _read_document(os.fspath(source))
    return _validate(document)


def _read_document(path: str) -> Dict[str, Any]:
    if not os.path.isfile(path):
        raise TopologyError(f"Topology '{path}' is neither a bundled name nor a readable file")
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    try:
        if path.endswith(".json"):
            document = json.loads(text)
        else:
            document = yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as e:
        raise TopologyError(f"Topology file '{path}' could not be parsed: {e}") from e
    if not isinstance(document, dict):
        raise TopologyError(f"Topology file '{path}' does not hold a mapping")
    return document


def _validate(doc: Dict[str, Any]) -> ChipTopology:
    missing = [k for k in REQUIRED_KEYS if k not in doc]
    if missing:
        raise TopologyError(f"Malformed topology document: missing {missing}")
    if doc["schema_version"] != TOPOLOGY_SCHEMA_VERSION:
        raise TopologyError(f"Unsupported topology schema version {doc['schema_version']}")
    try:
        qubit_count = int(doc["qubit_count"])
        edges = set()
        for pair in doc["edges"]:
            a, b = (int(x) for x in pair)
            if a == b:
                raise TopologyError(f"Self-loop on qubit {a}")
            if not (0 <= a < qubit_count and 0 <= b < qubit_count):
                raise TopologyError(f"Edge ({a}, {b}) has an endpoint outside 0..{qubit_count - 1}")
            edges.add((min(a, b), max(a, b)))
        raw_rects = list(doc["rectangles"])
        raw_adjacency = [tuple(int(x) for x in pair) for pair in doc["adjacency"]]
    except (TypeError, ValueError) as e:
        if isinstance(e, TopologyError):
            raise
        raise TopologyError(f"Malformed topology document: {e}") from e

    graph = nx.Graph()
    graph.add_nodes_from(range(qubit_count))
    graph.add_edges_from(edges)
    if qubit_count < 1 or not nx.is_connected(graph):
        raise TopologyError(f"Topology '{doc['name']}' coupling graph is not connected")

    rectangles = []
    for position, raw in enumerate(raw_rects, start=1):
        rectangles.append(_validate_rectangle(raw, position, graph))

    by_index = {r.index: r for r in rectangles}
    adjacency = set()
    for pair in raw_adjacency:
        if len(pair) != 2 or pair[0] == pair[1] or any(i not in by_index for i in pair):
            raise TopologyError(f"Adjacency entry {list(pair)} does not name two distinct rectangles")
        i, j = sorted(pair)
        if not set(by_index[i].cycle) & set(by_index[j].cycle):
            raise TopologyError(f"Adjacent rectangles {i} and {j} share no qubit")
        adjacency.add((i, j))

    topology = ChipTopology(
        name=str(doc["name"]),
        qubit_count=qubit_count,
        edges=frozenset(edges),
        rectangles=tuple(rectangles),
        rect_adjacency=frozenset(adjacency),
        digest=canonical_digest(doc),
        document=doc,
    )
    logger.info(f"Loaded topology '{topology.name}': {qubit_count} qubits, {len(edges)} edges, "
                f"{len(rectangles)} rectangles, {len(adjacency)} adjacent pairs")
    return topology


def _validate_rectangle(raw: Mapping[str, Any], position: int, graph: nx.Graph) -> Rectangle:
    try:
        index = int(raw["index"])
        cycle = tuple(int(q) for q in raw["cycle"])
        corners = tuple(int(q) for q in raw["corners"])
    except (KeyError, TypeError, ValueError) as e:
        raise TopologyError(f"Malformed rectangle entry #{position}: {e}") from e
    if index != position:
        raise TopologyError(f"Rectangles must be numbered 1..R in order; entry #{position} has index {index}")
    if len(cycle) != CYCLE_LENGTH or len(set(cycle)) != CYCLE_LENGTH:
        raise TopologyError(f"Rectangle {index}: cycle must list {CYCLE_LENGTH} distinct qubits, got {len(cycle)}")
    for a, b in zip(cycle, cycle[1:] + cycle[:1]):
        if not graph.has_edge(a, b):
            raise TopologyError(f"Rectangle {index}: cycle is not closed in the edge set ({a}-{b} missing)")
    if graph.subgraph(cycle).number_of_edges() != CYCLE_LENGTH:
        raise TopologyError(f"Rectangle {index}: cycle qubits carry chords, not a simple 12-cycle")
    if len(corners) != 4 or len(set(corners)) != 4 or not set(corners) <= set(cycle):
        raise TopologyError(f"Rectangle {index}: corners must be 4 distinct cycle members")
    position_of = {q: i for i, q in enumerate(cycle)}
    for c in corners:
        partner = cycle[(position_of[c] + CYCLE_LENGTH // 2) % CYCLE_LENGTH]
        if partner not in corners:
            raise TopologyError(f"Rectangle {index}: corner {c} has no antipodal corner")
    return Rectangle(index=index, cycle=cycle, corners=corners)


def make_subchip(topology: ChipTopology, rect_indices: Sequence[int]) -> SubChip:
    """
    Builds the induced sub-graph over one rectangle or an adjacent pair.

    Pairs sharing two or more corners sit side by side (they share a bridge
    column); all other adjacent pairs are diagonal.
    """
    indices = tuple(sorted(int(i) for i in rect_indices))
    if len(indices) not in (1, 2) or len(set(indices)) != len(indices):
        raise TopologyError(f"A sub-chip covers one rectangle or two distinct rectangles, got {list(rect_indices)}")
    try:
        rects = [topology.rectangle(i) for i in indices]
    except IndexError as e:
        raise TopologyError(f"Rectangle {e.args[0]} does not exist on '{topology.name}'") from None
    if len(indices) == 2 and indices not in topology.rect_adjacency:
        raise TopologyError(f"Rectangles {indices[0]} and {indices[1]} are not adjacent on '{topology.name}'")

    qubits = frozenset(q for r in rects for q in r.cycle)
    edges = frozenset(e for e in topology.edges if e[0] in qubits and e[1] in qubits)
    graph = nx.Graph()
    graph.add_nodes_from(qubits)
    graph.add_edges_from(edges)

    if len(rects) == 1:
        kind, geometry = SubChipKind.SINGLE, None
        corner_pairs = _opposing_pairs(graph, rects[0].corners)
    else:
        kind = SubChipKind.PAIR
        a, b = (set(r.corners) for r in rects)
        shared = a & b
        if len(shared) >= 2:
            geometry = Geometry.SIDE_BY_SIDE
            corner_pairs = _opposing_pairs(graph, sorted((a | b) - shared))
        else:
            geometry = Geometry.DIAGONAL
            corner_pairs = (_most_distant(graph, sorted(a | b)),)

    return SubChip(kind=kind, rect_indices=indices, qubits=qubits, edges=edges, geometry=geometry,
                   corner_pairs=corner_pairs, topology_digest=topology.digest)


def _opposing_pairs(graph: nx.Graph, corners: Iterable[int]) -> Tuple[Tuple[int, int], ...]:
    # Perfect matching of the 4 corners with the largest total distance; ties by qubit id.
    c = sorted(corners)
    if len(c) != 4:
        raise TopologyError(f"Expected 4 corners, got {c}")
    matchings = [((c[0], c[1]), (c[2], c[3])), ((c[0], c[2]), (c[1], c[3])), ((c[0], c[3]), (c[1], c[2]))]
    dist = dict(nx.all_pairs_shortest_path_length(graph))
    best = max(matchings, key=lambda m: (sum(dist[x][y] for x, y in m), [-q for pair in m for q in pair]))
    return best


def _most_distant(graph: nx.Graph, corners: Sequence[int]) -> Tuple[int, int]:
    dist = dict(nx.all_pairs_shortest_path_length(graph))
    return max(combinations(sorted(corners), 2), key=lambda p: (dist[p[0]][p[1]], -p[0], -p[1]))


def all_shortest_paths(subchip: SubChip, a: int, b: int) -> List[Path]:
    """Every shortest a→b path inside the sub-chip, sorted lexicographically."""
    if a == b:
        raise TopologyError(f"Path endpoints must differ, got {a} twice")
    for q in (a, b):
        if q not in subchip.qubits:
            raise TopologyError(f"Qubit {q} is not part of sub-chip {subchip.label}")
    return sorted(Path(tuple(p)) for p in nx.all_shortest_paths(subchip.graph, a, b))


def enumerate_paths(subchip: SubChip, stage: Stage, min_len: int = 2, strict: bool = False) -> PathSet:
    """
    Path set walked by an assessment stage.

    c2c: corner pairs in both directions. M-L: every ordered pair at the
    sub-chip diameter. A-L: every ordered pair, keeping paths of at least
    `min_len` qubits.
    """
    stage = Stage(stage)
    if strict and stage is Stage.ML and subchip.kind is SubChipKind.PAIR:
        raise TopologyError("M-L is not scheduled for rectangle pairs in strict workflow mode")
    return PathSet(subchip=subchip, stage=stage, paths=_enumerate(subchip, stage, max(2, int(min_len))))


@lru_cache(maxsize=512)
def _enumerate(subchip: SubChip, stage: Stage, min_len: int) -> Tuple[Path, ...]:
    graph = subchip.graph
    if stage is Stage.C2C:
        endpoints = [(x, y) for pair in subchip.corner_pairs for x, y in (pair, pair[::-1])]
    else:
        dist = dict(nx.all_pairs_shortest_path_length(graph))
        ordered = [(x, y) for x in sorted(subchip.qubits) for y in sorted(subchip.qubits) if x != y]
        if stage is Stage.ML:
            diameter = max(dist[x][y] for x, y in ordered)
            endpoints = [(x, y) for x, y in ordered if dist[x][y] == diameter]
        else:
            endpoints = [(x, y) for x, y in ordered if dist[x][y] + 1 >= min_len]
    paths = set()
    for x, y in endpoints:
        paths.update(p for p in all_shortest_paths(subchip, x, y) if p.n >= min_len)
    return tuple(sorted(paths))


def adjacent_pairs(topology: ChipTopology) -> List[Tuple[int, int]]:
    return sorted(topology.rect_adjacency)


def export_document(topology: ChipTopology, path: str) -> None:
    """Writes the topology document as YAML (or JSON for a .json path)."""
    with open(path, "w", encoding="utf-8") as f:
        if path.endswith(".json"):
            json.dump(topology.document, f, indent=2)
        else:
            yaml.safe_dump(topology.document, f, sort_keys=False, default_flow_style=None)
    logger.info(f"Wrote topology '{topology.name}' to {path}")
