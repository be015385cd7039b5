# src/qpbench/assess.py
import logging
import math
from typing import Iterable, Mapping, Optional, Sequence, Tuple, Union

from .errors import AssessmentError
from .models import Decision, FidelityEstimate, Path, ProtocolId, RectStats, ShotResult, Stage, Variant
from .protocols import TemplateRegistry, default_registry, success_rule

logger = logging.getLogger(__name__)


def _success_fraction(variant: Variant, result: ShotResult, rule) -> Tuple[float, int]:
    if result.shots < 1:
        raise AssessmentError(f"Variant '{variant.label}' has zero shots")
    return result.frequency(rule.evaluate), result.shots


def estimate_fidelity(protocol: Union[ProtocolId, str], per_variant_results: Mapping[Variant, ShotResult],
                      path: Optional[Path] = None, seed: Optional[int] = None, feed_forward: bool = False,
                      required: Optional[Iterable[Variant]] = None,
                      registry: Optional[TemplateRegistry] = None) -> FidelityEstimate:
    """
    Turns per-variant shot results for one path into a fidelity estimate.

    State-transfer protocols, bell-state transfer and super-dense coding
    average the per-variant success probability. Entanglement swapping
    combines its three measurement settings into the Bell-state witness
    (1 + <XX> - <YY> + <ZZ>) / 4, clamped to [0, 1]. Standard errors are
    binomial per variant, propagated through the combination.
    """
    template = (registry or default_registry()).get(protocol)
    if required is None:
        haar = bool(per_variant_results) and all(v.params for v in per_variant_results)
        required = tuple(per_variant_results) if haar else template.variants
    required = tuple(required)
    missing = [v.label for v in required if v not in per_variant_results]
    if missing:
        raise AssessmentError(f"{template.id.value}: missing results for variants {missing}")

    fractions = []
    total_shots = 0
    for variant in required:
        p, shots = _success_fraction(variant, per_variant_results[variant],
                                     success_rule(template, variant, feed_forward))
        fractions.append((p, shots))
        total_shots += shots

    variances = [p * (1 - p) / n for p, n in fractions]
    if template.id is ProtocolId.ENTANGLEMENT_SWAPPING:
        # sum of per-setting success probabilities maps onto the witness
        value = (math.fsum(p for p, _ in fractions) - 1.0) / 2.0
        stderr = math.sqrt(math.fsum(variances)) / 2.0
    else:
        k = len(fractions)
        value = math.fsum(p for p, _ in fractions) / k
        stderr = math.sqrt(math.fsum(variances)) / k

    return FidelityEstimate(
        value=min(1.0, max(0.0, value)),
        stderr=stderr,
        shots_used=total_shots,
        path=path if path is not None else Path(()),
        protocol=template.id,
        seed=seed,
    )


def aggregate(subchip: Sequence[int], protocol: Union[ProtocolId, str], stage: Union[Stage, str],
              estimates: Sequence[FidelityEstimate]) -> RectStats:
    """Min/mean/max over per-path estimates. The argmin tie-break is the lexicographically smallest path."""
    pid = protocol if isinstance(protocol, ProtocolId) else ProtocolId.parse(protocol)
    stage = stage if isinstance(stage, Stage) else Stage.parse(stage)
    if not estimates:
        raise AssessmentError(f"No estimates to aggregate for {pid.value} {stage.value} on {list(subchip)}")
    foreign = [e for e in estimates if e.protocol is not pid]
    if foreign:
        raise AssessmentError(f"Estimate for {foreign[0].protocol.value} mixed into {pid.value} aggregation")

    ordered = tuple(sorted(estimates, key=lambda e: e.path))
    values = [e.value for e in ordered]
    worst = min(ordered, key=lambda e: (e.value, e.path))
    best = max(values)
    # rounding of the division must not push the mean outside [min, max]
    mean = min(best, max(worst.value, math.fsum(values) / len(values)))
    return RectStats(
        subchip=tuple(subchip),
        protocol=pid,
        stage=stage,
        mean=mean,
        min=worst.value,
        max=best,
        argmin=worst.path,
        estimates=ordered,
    )


def pass_decision(stats: RectStats, threshold: float) -> Decision:
    """Closed comparison: a minimum exactly at the threshold passes."""
    return Decision.PASS if stats.min >= threshold else Decision.FAIL
