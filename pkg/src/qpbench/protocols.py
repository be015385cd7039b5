# src/qpbench/protocols.py
import importlib.resources
import json
import logging
import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import yaml

from .errors import ProtocolError
from .models import Circuit, Op, Path, ProtocolId, SuccessRule, Variant, VariantKind
from .utils.constants import PROTOCOL_DOC_SCHEMA_VERSION

logger = logging.getLogger(__name__)

BUNDLED_TEMPLATES = "protocols.yaml"

CARDINAL_VARIANTS: Tuple[Variant, ...] = (
    Variant(VariantKind.PREPARED_STATE, 0, "+Z", axis="Z", expected="0"),
    Variant(VariantKind.PREPARED_STATE, 1, "-Z", axis="Z", expected="1"),
    Variant(VariantKind.PREPARED_STATE, 2, "+X", axis="X", expected="0"),
    Variant(VariantKind.PREPARED_STATE, 3, "-X", axis="X", expected="1"),
    Variant(VariantKind.PREPARED_STATE, 4, "+Y", axis="Y", expected="0"),
    Variant(VariantKind.PREPARED_STATE, 5, "-Y", axis="Y", expected="1"),
)
MESSAGE_VARIANTS: Tuple[Variant, ...] = tuple(
    Variant(VariantKind.MESSAGE, i, m, expected=m) for i, m in enumerate(("00", "01", "10", "11"))
)
BELL_VARIANTS: Tuple[Variant, ...] = (Variant(VariantKind.PREPARED_STATE, 0, "phi+", expected="00"),)
# Expected parity of the corrected pair in each basis for |Φ+⟩: ⟨XX⟩ = ⟨ZZ⟩ = +1, ⟨YY⟩ = -1.
SETTING_VARIANTS: Tuple[Variant, ...] = (
    Variant(VariantKind.MEASUREMENT_SETTING, 0, "XX", axis="X", expected="0"),
    Variant(VariantKind.MEASUREMENT_SETTING, 1, "YY", axis="Y", expected="1"),
    Variant(VariantKind.MEASUREMENT_SETTING, 2, "ZZ", axis="Z", expected="0"),
)
VARIANT_FAMILIES: Dict[str, Tuple[Variant, ...]] = {
    "cardinal": CARDINAL_VARIANTS,
    "messages": MESSAGE_VARIANTS,
    "bell": BELL_VARIANTS,
    "settings": SETTING_VARIANTS,
}

_POSITION = re.compile(r"^\s*(n|\d+)\s*(?:([+-])\s*(\d+))?\s*$")


@dataclass(frozen=True)
class ProtocolTemplate:
    id: ProtocolId
    min_path_len: int
    threshold: float
    swap_offset: int
    variant_family: str
    recipe: Tuple[Dict[str, Any], ...]
    success: Dict[str, Any]
    zero_swap_min_path_len: Optional[int] = None
    threshold_source: str = "published"

    @property
    def variants(self) -> Tuple[Variant, ...]:
        return VARIANT_FAMILIES[self.variant_family]

    def effective_min_len(self, allow_zero_swap: bool = False) -> int:
        if allow_zero_swap and self.zero_swap_min_path_len is not None:
            return self.zero_swap_min_path_len
        return self.min_path_len

    def swap_distance_fn(self, n: int) -> int:
        return n - self.swap_offset


@dataclass
class TemplateRegistry:
    templates: Dict[ProtocolId, ProtocolTemplate] = field(default_factory=dict)
    source: str = "bundled"

    def get(self, protocol: Union[ProtocolId, str]) -> ProtocolTemplate:
        pid = protocol if isinstance(protocol, ProtocolId) else ProtocolId.parse(protocol)
        try:
            return self.templates[pid]
        except KeyError:
            raise ProtocolError(f"Protocol '{pid.value}' has no template in registry '{self.source}'") from None


def parse_threshold(value: Any) -> float:
    try:
        result = float(Fraction(str(value)))
    except (ValueError, ZeroDivisionError) as e:
        raise ProtocolError(f"Invalid threshold '{value}': {e}") from e
    if not 0.0 <= result <= 1.0:
        raise ProtocolError(f"Threshold {result} is outside [0, 1]")
    return result


def _template_from_entry(pid: ProtocolId, entry: Mapping[str, Any], base: Optional[ProtocolTemplate]) -> ProtocolTemplate:
    def pick(key, default=None):
        if key in entry:
            return entry[key]
        if base is not None:
            return getattr(base, key)
        if default is not None:
            return default
        raise ProtocolError(f"Protocol '{pid.value}' definition is missing '{key}'")

    family = pick("variant_family") if "variants" not in entry else entry["variants"]
    if family not in VARIANT_FAMILIES:
        raise ProtocolError(f"Protocol '{pid.value}' names unknown variant family '{family}'")
    recipe = entry.get("recipe", base.recipe if base else None)
    if not recipe:
        raise ProtocolError(f"Protocol '{pid.value}' definition has an empty recipe")
    threshold = parse_threshold(entry["threshold"]) if "threshold" in entry else pick("threshold")
    zero_swap = entry.get("zero_swap_min_path_len", base.zero_swap_min_path_len if base else None)
    return ProtocolTemplate(
        id=pid,
        min_path_len=int(pick("min_path_len")),
        threshold=threshold,
        swap_offset=int(pick("swap_offset")),
        variant_family=family,
        recipe=tuple(dict(step) for step in recipe),
        success=dict(pick("success")),
        zero_swap_min_path_len=int(zero_swap) if zero_swap is not None else None,
        threshold_source=str(entry.get("threshold_source", base.threshold_source if base else "override")),
    )


def parse_protocol_document(document: Mapping[str, Any], base: Optional[TemplateRegistry] = None,
                            source: str = "document") -> TemplateRegistry:
    """Builds a registry from a protocol definition document, layering it over `base` if given."""
    if document.get("schema_version") != PROTOCOL_DOC_SCHEMA_VERSION:
        raise ProtocolError(f"Unsupported protocol document schema version {document.get('schema_version')}")
    entries = document.get("protocols") or {}
    templates = dict(base.templates) if base else {}
    for name, entry in entries.items():
        pid = ProtocolId.parse(name)
        templates[pid] = _template_from_entry(pid, entry or {}, templates.get(pid))
    missing = [p.value for p in ProtocolId if p not in templates]
    if missing:
        raise ProtocolError(f"Protocol registry '{source}' lacks templates for {missing}")
    return TemplateRegistry(templates=templates, source=source)


@lru_cache(maxsize=1)
def default_registry() -> TemplateRegistry:
    text = importlib.resources.files(f"{__package__}.templates").joinpath(BUNDLED_TEMPLATES).read_text(encoding="utf-8")
    return parse_protocol_document(yaml.safe_load(text), source="bundled")


def load_registry(path: Optional[str] = None) -> TemplateRegistry:
    """Bundled registry, optionally overridden by a user protocol definition document."""
    if not path:
        return default_registry()
    try:
        with open(path, "r", encoding="utf-8") as f:
            document = yaml.safe_load(f)
    except (OSError, yaml.YAMLError) as e:
        raise ProtocolError(f"Protocol document '{path}' could not be read: {e}") from e
    registry = parse_protocol_document(document or {}, base=default_registry(), source=path)
    logger.info(f"Loaded protocol overrides from {path}")
    return registry


def _registry(registry: Optional[TemplateRegistry]) -> TemplateRegistry:
    return registry if registry is not None else default_registry()


def min_path_len(protocol: Union[ProtocolId, str], allow_zero_swap: bool = False,
                 registry: Optional[TemplateRegistry] = None) -> int:
    return _registry(registry).get(protocol).effective_min_len(allow_zero_swap)


def swap_distance(protocol: Union[ProtocolId, str], n: int, allow_zero_swap: bool = False,
                  registry: Optional[TemplateRegistry] = None) -> int:
    template = _registry(registry).get(protocol)
    minimum = template.effective_min_len(allow_zero_swap)
    if n < minimum:
        raise ProtocolError(f"{template.id.value} needs paths of at least {minimum} qubits, got {n}")
    return template.swap_distance_fn(n)


def threshold(protocol: Union[ProtocolId, str], overrides: Optional[Mapping[Any, float]] = None,
              registry: Optional[TemplateRegistry] = None) -> float:
    template = _registry(registry).get(protocol)
    if overrides:
        for key, value in overrides.items():
            pid = key if isinstance(key, ProtocolId) else ProtocolId.parse(str(key))
            if pid is template.id:
                return parse_threshold(value)
    return template.threshold


def variants_for(protocol: Union[ProtocolId, str], haar_samples: int = 0, seed: int = 0,
                 registry: Optional[TemplateRegistry] = None) -> Tuple[Variant, ...]:
    """Variants a run averages over: the template family, or Haar-random states when requested."""
    template = _registry(registry).get(protocol)
    if haar_samples > 0 and template.variant_family == "cardinal":
        return haar_variants(haar_samples, seed)
    return template.variants


def haar_variants(count: int, seed: int) -> Tuple[Variant, ...]:
    rng = np.random.default_rng(seed)
    out = []
    for k in range(count):
        theta = float(np.arccos(rng.uniform(-1.0, 1.0)))
        phi = float(rng.uniform(0.0, 2.0 * math.pi))
        out.append(Variant(VariantKind.PREPARED_STATE, k, f"haar{k}", axis=None, expected="0", params=(theta, phi)))
    return tuple(out)


def state_vector(variant: Variant) -> np.ndarray:
    """Single-qubit state prepared by a prepared-state variant."""
    if variant.params:
        theta, phi = variant.params
        return np.array([math.cos(theta / 2), np.exp(1j * phi) * math.sin(theta / 2)], dtype=complex)
    s = 1 / math.sqrt(2)
    table = {
        "+Z": [1, 0], "-Z": [0, 1], "+X": [s, s], "-X": [s, -s], "+Y": [s, 1j * s], "-Y": [s, -1j * s],
    }
    if variant.label not in table:
        raise ProtocolError(f"Variant '{variant.label}' is not a prepared single-qubit state")
    return np.array(table[variant.label], dtype=complex)


def _position(expr: Any, n: int) -> int:
    match = _POSITION.match(str(expr))
    if not match:
        raise ProtocolError(f"Bad path position '{expr}'")
    base, sign, offset = match.groups()
    value = n if base == "n" else int(base)
    if sign:
        value = value + int(offset) if sign == "+" else value - int(offset)
    if not 0 <= value < n:
        raise ProtocolError(f"Path position '{expr}' falls outside a {n}-qubit path")
    return value


def _check_variant(template: ProtocolTemplate, variant: Variant) -> None:
    if variant in template.variants:
        return
    if template.variant_family == "cardinal" and variant.kind is VariantKind.PREPARED_STATE and len(variant.params) == 2:
        return
    raise ProtocolError(f"Unknown variant '{variant.label}' for {template.id.value}")


class _RecipeBuilder:
    """Expands recipe steps into gates over local path positions."""

    def __init__(self, n: int, variant: Variant, feed_forward: bool):
        self.n = n
        self.variant = variant
        self.feed_forward = feed_forward
        self.ops: List[Op] = []

    def pos(self, expr) -> int:
        return _position(expr, self.n)

    def gate(self, name: str, *qubits: int, **kwargs) -> None:
        self.ops.append(Op(name, tuple(qubits), **kwargs))

    def swap_chain(self, start: int, end: int) -> None:
        step = 1 if end > start else -1
        for q in range(start, end, step):
            a, b = sorted((q, q + step))
            self.gate("swap", a, b)

    def apply(self, step: Mapping[str, Any]) -> None:
        if len(step) != 1:
            raise ProtocolError(f"Recipe step must have exactly one key: {dict(step)}")
        (kind, arg), = step.items()
        if kind == "reset":
            for q in range(self.n):
                self.gate("reset", q)
        elif kind == "prep":
            q = self.pos(arg)
            if self.variant.params:
                theta, phi = self.variant.params
                self.gate("u3", q, params=(theta, phi, 0.0))
            else:
                self.gate("prep", q, params=(self.variant.label,))
        elif kind == "decode":
            q = self.pos(arg)
            if self.variant.params:
                theta, phi = self.variant.params
                self.gate("u3", q, params=(-theta, 0.0, -phi))
            else:
                self.rotate_to_axis(q)
        elif kind == "basis":
            self.rotate_to_axis(self.pos(arg))
        elif kind == "encode":
            q = self.pos(arg)
            message = self.variant.label
            if message[1] == "1":
                self.gate("x", q)
            if message[0] == "1":
                self.gate("z", q)
        elif kind == "transport":
            start, end = (self.pos(a) for a in arg)
            self.swap_chain(start, end)
        elif kind == "transport_pair":
            start, end = (self.pos(a) for a in arg)
            if end < start or end + 1 >= self.n:
                raise ProtocolError(f"transport_pair from {start} to {end} does not fit a {self.n}-qubit path")
            for front in range(start + 1, end + 1):
                self.gate("swap", front, front + 1)
                self.gate("swap", front - 1, front)
        elif kind == "bell_prep":
            a, b = (self.pos(x) for x in arg)
            self.gate("h", a)
            self.gate("cx", a, b)
        elif kind == "bell_measure":
            a, b = (self.pos(x) for x in arg["qubits"])
            bit_a, bit_b = (int(x) for x in arg["bits"])
            self.gate("cx", a, b)
            self.gate("h", a)
            self.gate("measure", a, clbit=bit_a)
            self.gate("measure", b, clbit=bit_b)
        elif kind == "measure":
            self.gate("measure", self.pos(arg["qubit"]), clbit=int(arg["bit"]))
        elif kind == "correct":
            if self.feed_forward:
                q = self.pos(arg["qubit"])
                self.gate("x", q, condition=int(arg["parity_bit"]))
                self.gate("z", q, condition=int(arg["phase_bit"]))
        elif kind in ("h", "x", "z", "s", "sdg"):
            self.gate(kind, self.pos(arg))
        elif kind in ("cx", "swap"):
            a, b = (self.pos(x) for x in arg)
            self.gate(kind, a, b)
        else:
            raise ProtocolError(f"Unknown recipe step '{kind}'")

    def rotate_to_axis(self, q: int) -> None:
        axis = self.variant.axis
        if axis == "X":
            self.gate("h", q)
        elif axis == "Y":
            self.gate("sdg", q)
            self.gate("h", q)


def success_rule(template: ProtocolTemplate, variant: Variant, feed_forward: bool = False) -> SuccessRule:
    rule = template.success
    frame = None
    if rule.get("frame") and not (feed_forward and template.id is ProtocolId.TELEPORTATION):
        if variant.axis is None:
            raise ProtocolError(f"{template.id.value} in deferred mode needs Pauli-axis variants; "
                                f"use feed-forward mode for '{variant.label}'")
        frame = (int(rule["frame"]["phase_bit"]), int(rule["frame"]["parity_bit"]), variant.axis)
    return SuccessRule(
        bits=tuple(int(b) for b in rule["bits"]),
        expected=variant.expected,
        combine=rule.get("combine", "concat"),
        frame=frame,
    )


def build_circuit(protocol: Union[ProtocolId, str], path: Union[Path, Sequence[int]], variant: Variant,
                  feed_forward: bool = False, allow_zero_swap: bool = False,
                  registry: Optional[TemplateRegistry] = None) -> Circuit:
    """Instantiates a protocol template over a path for one variant."""
    template = _registry(registry).get(protocol)
    path = path if isinstance(path, Path) else Path(tuple(path))
    minimum = template.effective_min_len(allow_zero_swap)
    if path.n < minimum:
        raise ProtocolError(f"{template.id.value} needs paths of at least {minimum} qubits, got {path.n}")
    _check_variant(template, variant)

    builder = _RecipeBuilder(path.n, variant, feed_forward)
    for step in template.recipe:
        builder.apply(step)
    clbits = [op.clbit for op in builder.ops if op.clbit is not None]
    circuit = Circuit(
        roster=path.qubits,
        ops=tuple(builder.ops),
        num_clbits=max(clbits) + 1 if clbits else 0,
        protocol=template.id,
        variant=variant,
        success=success_rule(template, variant, feed_forward),
    )
    circuit.validate()
    return circuit


def export_circuit(circuit: Circuit, fmt: str = "yaml") -> str:
    """Serializes a circuit for an external transpiler."""
    document = circuit.to_document()
    if fmt == "json":
        return json.dumps(document, indent=2)
    if fmt == "yaml":
        return yaml.safe_dump(document, sort_keys=False)
    raise ProtocolError(f"Unsupported circuit export format '{fmt}'")
