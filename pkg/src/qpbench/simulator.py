# src/qpbench/simulator.py
"""
Monte Carlo trajectory simulator.

Trajectories are evolved in chunks: the statevector array has shape
(batch, 2, ..., 2) with axis q+1 holding path position q. Every random draw
is made for the whole chunk so a seed fixes the counts exactly.
"""
import logging
import math
from collections import Counter
from functools import lru_cache
from typing import Dict, Optional, Tuple

import numpy as np

from .errors import SimulationError
from .gates import PAULIS, TWO_QUBIT_PAULIS, X, asap_layers, expand_ops, matrix_for
from .models import Circuit, NoiseModel, Op, ShotResult
from .utils.constants import DEFAULT_MAX_TRAJECTORY_QUBITS, NORM_TOLERANCE, TRAJECTORY_CHUNK_AMPLITUDES

logger = logging.getLogger(__name__)

TINY = 1e-300


def _apply_matrix(psi: np.ndarray, matrix: np.ndarray, q: int) -> np.ndarray:
    return np.moveaxis(np.tensordot(psi, matrix, axes=([q + 1], [1])), -1, q + 1)


def _apply_cx(psi: np.ndarray, control: int, target: int) -> np.ndarray:
    out = psi.copy()
    idx = [slice(None)] * psi.ndim
    idx[control + 1] = 1
    idx = tuple(idx)
    # axis of the target once the control axis is indexed away
    target_axis = target + 1 if target < control else target
    out[idx] = np.flip(psi[idx], axis=target_axis)
    return out


def _apply_swap(psi: np.ndarray, a: int, b: int) -> np.ndarray:
    return np.ascontiguousarray(np.swapaxes(psi, a + 1, b + 1))


def _deferrable(ops: Tuple[Op, ...]) -> bool:
    """True when every measurement could move to the end: no feed-forward, nothing after a measurement or before a reset."""
    measured = set()
    touched = set()
    written = set()
    for op in ops:
        if op.condition is not None:
            return False
        if op.name == "reset":
            if op.qubits[0] in touched:
                return False
            continue
        if any(q in measured for q in op.qubits):
            return False
        touched.update(op.qubits)
        if op.name == "measure":
            if op.clbit in written:
                return False
            written.add(op.clbit)
            measured.add(op.qubits[0])
    return True


@lru_cache(maxsize=4096)
def _ideal_distribution(n: int, ops: Tuple[Op, ...], num_clbits: int) -> Tuple[float, ...]:
    """Exact outcome distribution (clbit 0 most significant) of a deferrable, noiseless gate list."""
    psi = np.zeros((1,) + (2,) * n, dtype=complex)
    psi[(0,) * (n + 1)] = 1.0
    clbit_qubit: Dict[int, int] = {}
    for op in ops:
        if op.name == "reset":
            continue
        if op.name == "measure":
            clbit_qubit[op.clbit] = op.qubits[0]
        elif op.name == "cx":
            psi = _apply_cx(psi, *op.qubits)
        elif op.name == "swap":
            psi = _apply_swap(psi, *op.qubits)
        else:
            psi = _apply_matrix(psi, matrix_for(op), op.qubits[0])
    probs = np.abs(psi[0]) ** 2
    order = [clbit_qubit[c] for c in range(num_clbits)]
    others = tuple(q for q in range(n) if q not in order)
    marginal = probs.sum(axis=others) if others else probs
    # remaining axes are in ascending qubit order; put them in clbit order
    remaining = sorted(order)
    marginal = np.transpose(marginal, [remaining.index(q) for q in order])
    flat = marginal.reshape(-1)
    return tuple(float(p) for p in flat / flat.sum())


def _sample_ideal(circuit: Circuit, ops: Tuple[Op, ...], readout_eps: float, shots: int,
                  rng: np.random.Generator) -> Counter:
    m = circuit.num_clbits
    probs = np.array(_ideal_distribution(circuit.n, ops, m))
    if readout_eps == 0.0:
        draws = rng.multinomial(shots, probs)
        return Counter({format(i, f"0{m}b"): int(c) for i, c in enumerate(draws) if c})
    outcomes = rng.choice(len(probs), size=shots, p=probs)
    bits = (outcomes[:, None] >> np.arange(m - 1, -1, -1)) & 1
    bits ^= (rng.random((shots, m)) < readout_eps).astype(bits.dtype)
    return _tally(bits)


def _tally(bits: np.ndarray) -> Counter:
    m = bits.shape[1]
    values = bits.astype(np.int64) @ (1 << np.arange(m - 1, -1, -1, dtype=np.int64))
    keys, counts = np.unique(values, return_counts=True)
    return Counter({format(int(k), f"0{m}b"): int(c) for k, c in zip(keys, counts)})


class _TrajectoryBatch:
    def __init__(self, n: int, batch: int, num_clbits: int, noise: NoiseModel, rng: np.random.Generator):
        self.n = n
        self.batch = batch
        self.noise = noise
        self.rng = rng
        self.psi = np.zeros((batch,) + (2,) * n, dtype=complex)
        self.psi[(slice(None),) + (0,) * n] = 1.0
        self.clbits = np.zeros((batch, max(num_clbits, 1)), dtype=np.uint8)

    def _slice(self, q: int, value: int):
        idx = [slice(None)] * (self.n + 1)
        idx[q + 1] = value
        return tuple(idx)

    def _transform(self, fn, rows: Optional[np.ndarray]) -> None:
        if rows is None:
            self.psi = fn(self.psi)
        elif rows.any():
            self.psi[rows] = fn(self.psi[rows])

    def prob_one(self, q: int) -> np.ndarray:
        amps = np.abs(self.psi[self._slice(q, 1)]) ** 2
        return amps.reshape(self.batch, -1).sum(axis=1)

    def collapse(self, q: int, outcome: np.ndarray, p1: np.ndarray) -> None:
        psi = np.array(self.psi)
        psi[self._slice(q, 0)][outcome] = 0.0
        psi[self._slice(q, 1)][~outcome] = 0.0
        norm = np.sqrt(np.maximum(np.where(outcome, p1, 1.0 - p1), TINY))
        self.psi = psi / norm.reshape((self.batch,) + (1,) * self.n)

    def measure(self, q: int, clbit: int) -> None:
        p1 = self.prob_one(q)
        outcome = self.rng.random(self.batch) < p1
        self.collapse(q, outcome, p1)
        if self.noise.readout_eps > 0.0:
            outcome = outcome ^ (self.rng.random(self.batch) < self.noise.readout_eps)
        self.clbits[:, clbit] = outcome

    def reset(self, q: int) -> None:
        p1 = self.prob_one(q)
        outcome = self.rng.random(self.batch) < p1
        self.collapse(q, outcome, p1)
        self._transform(lambda p: _apply_matrix(p, X, q), outcome)

    def depolarize1(self, q: int, rows: Optional[np.ndarray]) -> None:
        p = self.noise.p1
        if p == 0.0:
            return
        hit = self.rng.random(self.batch) < p
        which = self.rng.integers(1, 4, size=self.batch)
        if rows is not None:
            hit &= rows
        for k in (1, 2, 3):
            self._transform(lambda s: _apply_matrix(s, PAULIS[k], q), hit & (which == k))

    def depolarize2(self, a: int, b: int, rows: Optional[np.ndarray]) -> None:
        p = self.noise.p2
        if p == 0.0:
            return
        hit = self.rng.random(self.batch) < p
        which = self.rng.integers(0, len(TWO_QUBIT_PAULIS), size=self.batch)
        if rows is not None:
            hit &= rows
        for k, (pa, pb) in enumerate(TWO_QUBIT_PAULIS):
            sel = hit & (which == k)
            if not sel.any():
                continue
            if pa:
                self._transform(lambda s: _apply_matrix(s, PAULIS[pa], a), sel)
            if pb:
                self._transform(lambda s: _apply_matrix(s, PAULIS[pb], b), sel)

    def damp(self, q: int) -> None:
        gamma = self.noise.idle_damping
        p1 = self.prob_one(q)
        jump = (self.rng.random(self.batch) < gamma * p1).reshape((self.batch,) + (1,) * (self.n - 1))
        psi = np.array(self.psi)
        zero, one = psi[self._slice(q, 0)], psi[self._slice(q, 1)]
        shape = (self.batch,) + (1,) * (self.n - 1)
        jump_norm = np.sqrt(np.maximum(p1, TINY)).reshape(shape)
        stay_norm = np.sqrt(np.maximum(1.0 - gamma * p1, TINY)).reshape(shape)
        new_zero = np.where(jump, one / jump_norm, zero / stay_norm)
        new_one = np.where(jump, 0.0, one * math.sqrt(1.0 - gamma) / stay_norm)
        zero[...] = new_zero
        one[...] = new_one
        self.psi = psi

    def apply(self, op: Op) -> None:
        rows = None
        if op.condition is not None:
            rows = self.clbits[:, op.condition] == 1
        if op.name == "measure":
            self.measure(op.qubits[0], op.clbit)
        elif op.name == "reset":
            self.reset(op.qubits[0])
        elif op.name == "cx":
            self._transform(lambda s: _apply_cx(s, *op.qubits), rows)
            self.depolarize2(*op.qubits, rows)
        elif op.name == "swap":
            self._transform(lambda s: _apply_swap(s, *op.qubits), rows)
            self.depolarize2(*op.qubits, rows)
        else:
            matrix = matrix_for(op)
            self._transform(lambda s: _apply_matrix(s, matrix, op.qubits[0]), rows)
            self.depolarize1(op.qubits[0], rows)

    def check_norm(self, layer: int) -> None:
        norms = (np.abs(self.psi) ** 2).reshape(self.batch, -1).sum(axis=1)
        if np.any(np.abs(norms - 1.0) > NORM_TOLERANCE):
            raise SimulationError(f"Statevector norm drifted to {norms.min():.3e}..{norms.max():.3e} "
                                  f"after layer {layer}")

    def run(self, ops: Tuple[Op, ...]) -> None:
        for k, layer in enumerate(asap_layers(ops)):
            touched = set()
            for i in layer:
                self.apply(ops[i])
                touched.update(ops[i].qubits)
            if self.noise.idle_damping > 0.0:
                for q in range(self.n):
                    if q not in touched:
                        self.damp(q)
            self.check_norm(k)


def run_trajectories(circuit: Circuit, noise: NoiseModel, shots: int, seed: int,
                     max_qubits: int = DEFAULT_MAX_TRAJECTORY_QUBITS, decompose_swap: bool = False) -> ShotResult:
    """
    Samples `shots` executions of a circuit under a Pauli/damping noise model.

    Noise-free circuits whose measurements can be deferred are sampled from
    their exact output distribution; everything else runs shot trajectories.
    """
    if shots < 1:
        raise SimulationError(f"shots must be >= 1, got {shots}")
    if circuit.n > max_qubits:
        raise SimulationError(f"Register of {circuit.n} qubits exceeds the trajectory limit of {max_qubits}")
    circuit.validate()
    ops = expand_ops(circuit, decompose_swap)
    rng = np.random.default_rng(seed)

    if noise.gate_noise_free and _deferrable(ops):
        counts = _sample_ideal(circuit, ops, noise.readout_eps, shots, rng)
    else:
        counts = Counter()
        chunk = max(1, min(shots, TRAJECTORY_CHUNK_AMPLITUDES >> circuit.n))
        remaining = shots
        while remaining > 0:
            size = min(chunk, remaining)
            batch = _TrajectoryBatch(circuit.n, size, circuit.num_clbits, noise, rng)
            batch.run(ops)
            counts.update(_tally(batch.clbits[:, :circuit.num_clbits]))
            remaining -= size

    logger.debug(f"Simulated {circuit.label} with seed {seed}: {dict(counts)}")
    return ShotResult(
        counts=dict(sorted(counts.items())),
        shots=shots,
        metadata={"circuit": circuit.label, "seed": seed, "engine": "trajectory"},
    )
