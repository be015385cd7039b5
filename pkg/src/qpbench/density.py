# src/qpbench/density.py
"""
Exact density-matrix engine for small circuits.

Used as a reference for the trajectory simulator: it evolves one density
matrix per classical-register value, so mid-circuit measurements, readout
errors and feed-forward are handled without sampling.
"""
import logging
from typing import Dict, Tuple

import numpy as np

from .errors import SimulationError
from .gates import PAULIS, TWO_QUBIT_PAULIS, asap_layers, damping_kraus, expand_ops, matrix_for
from .models import Circuit, NoiseModel, Op
from .utils.constants import MAX_DENSITY_MATRIX_QUBITS, NORM_TOLERANCE

logger = logging.getLogger(__name__)

CX4 = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex).reshape(2, 2, 2, 2)
SWAP4 = np.array([[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]], dtype=complex).reshape(2, 2, 2, 2)
P0 = np.diag([1, 0]).astype(complex)
P1 = np.diag([0, 1]).astype(complex)
RESET_KRAUS = (P0, np.array([[0, 1], [0, 0]], dtype=complex))

# Branches below this weight are dropped
PRUNE_BELOW = 1e-14


def _on_axis(rho: np.ndarray, matrix: np.ndarray, axis: int) -> np.ndarray:
    return np.moveaxis(np.tensordot(matrix, rho, axes=([1], [axis])), 0, axis)


def _one(rho: np.ndarray, matrix: np.ndarray, q: int, n: int) -> np.ndarray:
    return _on_axis(_on_axis(rho, matrix, q), matrix.conj(), n + q)


def _on_pair(rho: np.ndarray, matrix: np.ndarray, a: int, b: int) -> np.ndarray:
    return np.moveaxis(np.tensordot(matrix, rho, axes=([2, 3], [a, b])), [0, 1], [a, b])


def _two(rho: np.ndarray, matrix: np.ndarray, a: int, b: int, n: int) -> np.ndarray:
    return _on_pair(_on_pair(rho, matrix, a, b), matrix.conj(), n + a, n + b)


def _kraus(rho: np.ndarray, operators, q: int, n: int) -> np.ndarray:
    return sum(_one(rho, k, q, n) for k in operators)


def _trace(rho: np.ndarray, n: int) -> float:
    return float(np.trace(rho.reshape(2 ** n, 2 ** n)).real)


class _BranchedState:
    def __init__(self, n: int, num_clbits: int, noise: NoiseModel):
        self.n = n
        self.noise = noise
        rho = np.zeros((2,) * (2 * n), dtype=complex)
        rho[(0,) * (2 * n)] = 1.0
        self.branches: Dict[Tuple[int, ...], np.ndarray] = {(0,) * num_clbits: rho}

    def _depolarize1(self, rho: np.ndarray, q: int) -> np.ndarray:
        p = self.noise.p1
        if p == 0.0:
            return rho
        return (1 - p) * rho + (p / 3) * sum(_one(rho, PAULIS[k], q, self.n) for k in (1, 2, 3))

    def _depolarize2(self, rho: np.ndarray, a: int, b: int) -> np.ndarray:
        p = self.noise.p2
        if p == 0.0:
            return rho
        mixed = sum(
            _two(rho, np.kron(PAULIS[pa], PAULIS[pb]).reshape(2, 2, 2, 2), a, b, self.n)
            for pa, pb in TWO_QUBIT_PAULIS
        )
        return (1 - p) * rho + (p / len(TWO_QUBIT_PAULIS)) * mixed

    def _unitary(self, rho: np.ndarray, op: Op) -> np.ndarray:
        n = self.n
        if op.name == "reset":
            return _kraus(rho, RESET_KRAUS, op.qubits[0], n)
        if op.name in ("cx", "swap"):
            a, b = op.qubits
            rho = _two(rho, CX4 if op.name == "cx" else SWAP4, a, b, n)
            return self._depolarize2(rho, a, b)
        rho = _one(rho, matrix_for(op), op.qubits[0], n)
        return self._depolarize1(rho, op.qubits[0])

    def _measure(self, op: Op) -> None:
        q, c = op.qubits[0], op.clbit
        eps = self.noise.readout_eps
        merged: Dict[Tuple[int, ...], np.ndarray] = {}
        for key, rho in self.branches.items():
            rho0, rho1 = _one(rho, P0, q, self.n), _one(rho, P1, q, self.n)
            for bit, (right, wrong) in enumerate(((rho0, rho1), (rho1, rho0))):
                new = (1 - eps) * right + eps * wrong if eps else right
                target = key[:c] + (bit,) + key[c + 1:]
                merged[target] = merged[target] + new if target in merged else new
        self.branches = {k: v for k, v in merged.items() if _trace(v, self.n) > PRUNE_BELOW}

    def apply(self, op: Op) -> None:
        if op.name == "measure":
            self._measure(op)
            return
        for key, rho in self.branches.items():
            if op.condition is None or key[op.condition] == 1:
                self.branches[key] = self._unitary(rho, op)

    def idle(self, q: int) -> None:
        kraus = damping_kraus(self.noise.idle_damping)
        for key, rho in self.branches.items():
            self.branches[key] = _kraus(rho, kraus, q, self.n)


def run_density_matrix(circuit: Circuit, noise: NoiseModel, decompose_swap: bool = False,
                       max_qubits: int = MAX_DENSITY_MATRIX_QUBITS) -> Dict[str, float]:
    """Exact distribution over classical-register values (clbit 0 leftmost)."""
    if circuit.n > max_qubits:
        raise SimulationError(f"Density-matrix engine handles at most {max_qubits} qubits, got {circuit.n}")
    circuit.validate()
    ops = expand_ops(circuit, decompose_swap)
    state = _BranchedState(circuit.n, circuit.num_clbits, noise)
    for layer in asap_layers(ops):
        touched = set()
        for i in layer:
            state.apply(ops[i])
            touched.update(ops[i].qubits)
        if noise.idle_damping > 0.0:
            for q in range(circuit.n):
                if q not in touched:
                    state.idle(q)

    distribution = {
        "".join(str(b) for b in key): _trace(rho, circuit.n) for key, rho in sorted(state.branches.items())
    }
    total = sum(distribution.values())
    if abs(total - 1.0) > NORM_TOLERANCE:
        raise SimulationError(f"Density-matrix distribution sums to {total!r}")
    return distribution


def success_probability(circuit: Circuit, distribution: Dict[str, float]) -> float:
    return sum(p for bits, p in distribution.items() if circuit.success.evaluate(bits))


def transmit_decay_fidelity(p2: float, swap_distance: int) -> float:
    """
    Closed-form transmit fidelity under two-qubit depolarizing noise only.

    Each SWAP shrinks the carried Bloch vector by 1 - 16*p2/15; cardinal-state
    fidelity after d SWAPs is (1 + shrink**d) / 2.
    """
    shrink = 1.0 - 16.0 * p2 / 15.0
    return (1.0 + shrink ** swap_distance) / 2.0
