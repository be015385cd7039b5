# src/qpbench/gates.py
import math
from functools import lru_cache
from typing import List, Tuple

import numpy as np

from .models import Circuit, Op

SQRT_HALF = 1 / math.sqrt(2)

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
H = np.array([[1, 1], [1, -1]], dtype=complex) * SQRT_HALF
S = np.array([[1, 0], [0, 1j]], dtype=complex)
SDG = np.array([[1, 0], [0, -1j]], dtype=complex)

PAULIS = (I2, X, Y, Z)

# Preparation unitaries taking |0> to each cardinal state
PREP = {
    "+Z": I2,
    "-Z": X,
    "+X": H,
    "-X": H @ X,
    "+Y": S @ H,
    "-Y": SDG @ H,
}

SINGLE_QUBIT = {"h": H, "x": X, "y": Y, "z": Z, "s": S, "sdg": SDG}


def u3(theta: float, phi: float, lam: float) -> np.ndarray:
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array([
        [c, -np.exp(1j * lam) * s],
        [np.exp(1j * phi) * s, np.exp(1j * (phi + lam)) * c],
    ], dtype=complex)


def matrix_for(op: Op) -> np.ndarray:
    """2x2 unitary of a single-qubit gate."""
    if op.name in SINGLE_QUBIT:
        return SINGLE_QUBIT[op.name]
    if op.name == "prep":
        return PREP[op.params[0]]
    if op.name == "u3":
        return u3(*(float(p) for p in op.params))
    raise KeyError(op.name)


# 15 non-identity two-qubit Paulis as (first, second) indices into PAULIS
TWO_QUBIT_PAULIS: Tuple[Tuple[int, int], ...] = tuple((a, b) for a in range(4) for b in range(4) if (a, b) != (0, 0))

# Amplitude damping Kraus operators for probability gamma
def damping_kraus(gamma: float) -> Tuple[np.ndarray, np.ndarray]:
    k0 = np.array([[1, 0], [0, math.sqrt(1 - gamma)]], dtype=complex)
    k1 = np.array([[0, math.sqrt(gamma)], [0, 0]], dtype=complex)
    return k0, k1


def expand_ops(circuit: Circuit, decompose_swap: bool) -> Tuple[Op, ...]:
    """Gate list as executed; in decomposition mode every SWAP becomes three CX."""
    if not decompose_swap:
        return circuit.ops
    out: List[Op] = []
    for op in circuit.ops:
        if op.name == "swap":
            a, b = op.qubits
            out.extend([Op("cx", (a, b)), Op("cx", (b, a)), Op("cx", (a, b))])
        else:
            out.append(op)
    return tuple(out)


@lru_cache(maxsize=4096)
def asap_layers(ops: Tuple[Op, ...]) -> Tuple[Tuple[int, ...], ...]:
    """ASAP layering of op indices; conditioned ops follow the measurement that sets their bit."""
    qubit_free = {}
    clbit_ready = {}
    layers: List[List[int]] = []
    for i, op in enumerate(ops):
        layer = max((qubit_free.get(q, 0) for q in op.qubits), default=0)
        if op.condition is not None:
            layer = max(layer, clbit_ready.get(op.condition, 0))
        while len(layers) <= layer:
            layers.append([])
        layers[layer].append(i)
        for q in op.qubits:
            qubit_free[q] = layer + 1
        if op.clbit is not None:
            clbit_ready[op.clbit] = layer + 1
    return tuple(tuple(layer) for layer in layers)
