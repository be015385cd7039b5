# src/qpbench/heavy_hex.py
"""
Builds heavy-hex topology documents from a compact row/bridge description.

A heavy-hex chip is a stack of horizontal qubit rows. Consecutive rows are
joined through bridge qubits sitting under selected columns. Two neighbouring
bridges four columns apart close a 12-qubit rectangle: five qubits on the upper
row, the right bridge, five qubits on the lower row and the left bridge.

Qubit ids are assigned row by row, each row followed by the bridges of the band
beneath it, which reproduces the vendor numbering of the Eagle and Heron chips.
"""
import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Tuple

from .errors import TopologyError
from .utils.constants import TOPOLOGY_SCHEMA_VERSION

logger = logging.getLogger(__name__)

RECTANGLE_WIDTH = 4  # column span between the two bridges of a rectangle


@dataclass(frozen=True)
class LatticeSpec:
    name: str
    row_spans: Tuple[Tuple[int, int], ...]  # inclusive (first_col, last_col) per row
    bridge_cols: Tuple[Tuple[int, ...], ...]  # per band, ascending
    number_from: str = "left"  # rectangle numbering direction within a band

    def __post_init__(self):
        if len(self.bridge_cols) != len(self.row_spans) - 1:
            raise TopologyError(f"Lattice '{self.name}' needs one bridge band between each pair of rows")
        if self.number_from not in ("left", "right"):
            raise TopologyError(f"number_from must be 'left' or 'right', got '{self.number_from}'")


EAGLE = LatticeSpec(
    name="eagle",
    row_spans=((0, 13),) + ((0, 14),) * 5 + ((1, 14),),
    bridge_cols=((0, 4, 8, 12), (2, 6, 10, 14)) * 3,
    number_from="right",
)

HERON = LatticeSpec(
    name="heron",
    row_spans=((0, 15),) * 8,
    bridge_cols=((3, 7, 11, 15), (1, 5, 9, 13)) * 3 + ((3, 7, 11, 15),),
    number_from="left",
)

FAMILIES: Dict[str, LatticeSpec] = {"eagle": EAGLE, "heron": HERON}


def build_document(spec: LatticeSpec) -> Dict[str, Any]:
    """Returns the topology document for a lattice: qubits, edges, rectangles and adjacency."""
    main: Dict[Tuple[int, int], int] = {}
    bridge: Dict[Tuple[int, int], int] = {}
    next_id = 0
    for row, (first, last) in enumerate(spec.row_spans):
        for col in range(first, last + 1):
            main[(row, col)] = next_id
            next_id += 1
        if row < len(spec.bridge_cols):
            for col in spec.bridge_cols[row]:
                if (row, col) not in main:
                    raise TopologyError(f"Bridge at band {row} column {col} has no qubit above it")
                bridge[(row, col)] = next_id
                next_id += 1

    edges = set()
    for (row, col), q in main.items():
        right = main.get((row, col + 1))
        if right is not None:
            edges.add((q, right))
    for (band, col), b in bridge.items():
        below = main.get((band + 1, col))
        if below is None:
            raise TopologyError(f"Bridge at band {band} column {col} has no qubit below it")
        edges.add((min(main[(band, col)], b), max(main[(band, col)], b)))
        edges.add((min(b, below), max(b, below)))

    rectangles: List[Dict[str, Any]] = []
    for band, cols in enumerate(spec.bridge_cols):
        spans = [(c1, c2) for c1, c2 in zip(cols, cols[1:]) if c2 - c1 == RECTANGLE_WIDTH]
        if spec.number_from == "right":
            spans.reverse()
        for c1, c2 in spans:
            top = [main.get((band, c)) for c in range(c1, c2 + 1)]
            bottom = [main.get((band + 1, c)) for c in range(c2, c1 - 1, -1)]
            if None in top or None in bottom:
                continue
            cycle = top + [bridge[(band, c2)]] + bottom + [bridge[(band, c1)]]
            corners = [main[(band, c1)], main[(band, c2)], main[(band + 1, c2)], main[(band + 1, c1)]]
            rectangles.append({"index": len(rectangles) + 1, "cycle": cycle, "corners": corners})

    adjacency = []
    for i, a in enumerate(rectangles):
        for b in rectangles[i + 1:]:
            if set(a["cycle"]) & set(b["cycle"]):
                adjacency.append([a["index"], b["index"]])

    logger.debug(f"Built lattice '{spec.name}': {next_id} qubits, {len(edges)} edges, {len(rectangles)} rectangles")
    return {
        "schema_version": TOPOLOGY_SCHEMA_VERSION,
        "name": spec.name,
        "qubit_count": next_id,
        "edges": [list(e) for e in sorted(edges)],
        "rectangles": rectangles,
        "adjacency": adjacency,
    }


def bundled_document(name: str) -> Dict[str, Any]:
    family = FAMILIES.get(name.lower())
    if family is None:
        raise TopologyError(f"No bundled topology named '{name}'. Available: {sorted(FAMILIES)}")
    return build_document(family)
