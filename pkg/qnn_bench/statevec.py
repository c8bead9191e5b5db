"""Dense statevector simulator.

Bit order: qubit 0 is the most significant bit of the amplitude index, so the
bit-string "z1 z2 ... zn r" reads left to right as qubits 0..n. The readout
qubit is appended last (least significant bit).

Gate kernels reshape the amplitude array into a view that isolates the target
qubit axis and update the amplitude pairs in place, O(2^n) per gate.
"""
import math
from typing import Sequence, Union

import numpy as np
from pydantic import BaseModel, validator

from .core.config import config
from .models import (
    AmplitudeLengthError,
    InvalidArgumentError,
    InvalidStateError,
    PauliKind,
)

Bits = Union[str, Sequence[int], np.ndarray]

PAULI_MATRICES = {
    PauliKind.X: np.array([[0, 1], [1, 0]], dtype=np.complex128),
    PauliKind.Y: np.array([[0, -1j], [1j, 0]], dtype=np.complex128),
    PauliKind.Z: np.array([[1, 0], [0, -1]], dtype=np.complex128),
}

_SQRT1_2 = 1 / math.sqrt(2)
# (-1)^(a+b) over the two target bits of a pair view
_PAIR_PARITY = np.array([[1, -1], [-1, 1]], dtype=np.float64).reshape(1, 2, 1, 2, 1)


class StateVector(BaseModel):
    n_qubits: int
    amps: np.ndarray

    class Config:
        arbitrary_types_allowed = True

    @validator("n_qubits")
    def at_least_one_qubit(cls, v: int):
        if v < 1:
            raise ValueError("a state needs at least one qubit")
        return v

    @validator("amps", pre=True)
    def amplitudes_match_qubits(cls, v, values):
        amps = np.ascontiguousarray(v, dtype=np.complex128).reshape(-1)
        n_qubits = values.get("n_qubits")
        if n_qubits is not None and amps.size != 1 << n_qubits:
            raise AmplitudeLengthError(expected=1 << n_qubits, wrong_value=amps.size)
        return amps

    def clone(self) -> "StateVector":
        return StateVector(n_qubits=self.n_qubits, amps=self.amps.copy())

    def norm(self) -> float:
        return float(np.linalg.norm(self.amps))


def parse_bits(bits: Bits) -> np.ndarray:
    if isinstance(bits, str):
        values = [int(c) for c in bits if c in "01"]
        if len(values) != len(bits):
            raise InvalidArgumentError(f"bit-string {bits!r} may only contain 0 and 1")
        return np.array(values, dtype=np.uint8)
    array = np.asarray(bits).reshape(-1)
    if not np.isin(array, (0, 1)).all():
        raise InvalidArgumentError(f"bits {array.tolist()} may only contain 0 and 1")
    return array.astype(np.uint8)


def basis_index(bits: Bits) -> int:
    index = 0
    for bit in parse_bits(bits):
        index = (index << 1) | int(bit)
    return index


def bits_of_index(index: int, n_qubits: int) -> np.ndarray:
    if not 0 <= index < 1 << n_qubits:
        raise InvalidArgumentError(f"index {index} out of range for {n_qubits} qubits")
    return np.array([(index >> (n_qubits - 1 - q)) & 1 for q in range(n_qubits)], dtype=np.uint8)


def basis_state(n_qubits: int, bits: Bits) -> StateVector:
    parsed = parse_bits(bits)
    if parsed.size != n_qubits:
        raise InvalidArgumentError(f"expected {n_qubits} bits, got {parsed.size}")
    amps = np.zeros(1 << n_qubits, dtype=np.complex128)
    amps[basis_index(parsed)] = 1.0
    return StateVector(n_qubits=n_qubits, amps=amps)


def _check_qubit(state: StateVector, q: int) -> None:
    if not 0 <= q < state.n_qubits:
        raise InvalidArgumentError(f"qubit {q} out of range for {state.n_qubits} qubits")


def _qubit_view(state: StateVector, q: int) -> np.ndarray:
    _check_qubit(state, q)
    return state.amps.reshape(1 << q, 2, 1 << (state.n_qubits - q - 1))


def _pair_view(state: StateVector, q1: int, q2: int) -> np.ndarray:
    _check_qubit(state, q1)
    _check_qubit(state, q2)
    if q1 == q2:
        raise InvalidArgumentError(f"pair gate needs two distinct qubits, got {q1} twice")
    low, high = sorted((q1, q2))
    return state.amps.reshape(
        1 << low, 2, 1 << (high - low - 1), 2, 1 << (state.n_qubits - high - 1)
    )


def apply_x(state: StateVector, q: int) -> StateVector:
    view = _qubit_view(state, q)
    view[:, [0, 1], :] = view[:, [1, 0], :]
    return state


def apply_y(state: StateVector, q: int) -> StateVector:
    view = _qubit_view(state, q)
    zero = view[:, 0, :].copy()
    view[:, 0, :] = -1j * view[:, 1, :]
    view[:, 1, :] = 1j * zero
    return state


def apply_z(state: StateVector, q: int) -> StateVector:
    _qubit_view(state, q)[:, 1, :] *= -1
    return state


def apply_phase(state: StateVector, q: int, phi: float) -> StateVector:
    _qubit_view(state, q)[:, 1, :] *= np.exp(1j * phi)
    return state


def apply_h(state: StateVector, q: int) -> StateVector:
    view = _qubit_view(state, q)
    zero = view[:, 0, :].copy()
    one = view[:, 1, :]
    view[:, 0, :] = (zero + one) * _SQRT1_2
    view[:, 1, :] = (zero - one) * _SQRT1_2
    return state


_SINGLE_QUBIT_PAULIS = {
    PauliKind.X: apply_x,
    PauliKind.Y: apply_y,
    PauliKind.Z: apply_z,
}


def apply_pauli(state: StateVector, q: int, p: PauliKind) -> StateVector:
    return _SINGLE_QUBIT_PAULIS[PauliKind(p)](state, q)


def _pauli_pair_action(view: np.ndarray, p: PauliKind) -> np.ndarray:
    """(P⊗P)·view as a new array, for a view shaped by `_pair_view`."""
    if p == PauliKind.Z:
        return view * _PAIR_PARITY
    flipped = view[:, ::-1, :, ::-1, :]
    if p == PauliKind.X:
        return flipped.copy()
    # Y⊗Y flips both bits, with sign -1 when the output bits agree
    return flipped * -_PAIR_PARITY


def apply_pauli_pair(state: StateVector, q1: int, q2: int, p: PauliKind) -> StateVector:
    view = _pair_view(state, q1, q2)
    view[...] = _pauli_pair_action(view, PauliKind(p))
    return state


def apply_exp_pauli_pair(
    state: StateVector, q1: int, q2: int, p: PauliKind, theta: float
) -> StateVector:
    """Apply exp(iθ·P⊗P) = cos(θ)·I + i·sin(θ)·P⊗P on qubits q1, q2."""
    view = _pair_view(state, q1, q2)
    p = PauliKind(p)
    if p == PauliKind.Z:
        view *= np.exp(1j * theta * _PAIR_PARITY)
        return state
    flipped = _pauli_pair_action(view, p)
    view *= math.cos(theta)
    view += (1j * math.sin(theta)) * flipped
    return state


def _check_normalized(state: StateVector) -> None:
    deviation = abs(state.norm() - 1.0)
    if deviation > config.NORM_TOLERANCE:
        raise InvalidStateError(f"state norm deviates from 1 by {deviation:.3g}")


def expectation_pauli(state: StateVector, q: int, p: PauliKind) -> float:
    _check_normalized(state)
    view = _qubit_view(state, q)
    zero, one = view[:, 0, :], view[:, 1, :]
    p = PauliKind(p)
    if p == PauliKind.Z:
        value = np.vdot(zero, zero) - np.vdot(one, one)
    elif p == PauliKind.X:
        value = np.vdot(zero, one) + np.vdot(one, zero)
    else:
        value = -1j * np.vdot(zero, one) + 1j * np.vdot(one, zero)
    if abs(value.imag) > config.IMAG_RESIDUE_TOLERANCE:
        raise InvalidStateError(f"<{p.value}> has imaginary residue {value.imag:.3g}")
    return float(np.clip(value.real, -1.0, 1.0))


def probability(state: StateVector, q: int, bit: int) -> float:
    if bit not in (0, 1):
        raise InvalidArgumentError(f"bit must be 0 or 1, got {bit}")
    branch = _qubit_view(state, q)[:, bit, :]
    return float(np.vdot(branch, branch).real)


def inner_product(a: StateVector, b: StateVector) -> complex:
    if a.n_qubits != b.n_qubits:
        raise InvalidArgumentError(
            f"cannot take inner product of {a.n_qubits}- and {b.n_qubits}-qubit states"
        )
    return complex(np.vdot(a.amps, b.amps))
