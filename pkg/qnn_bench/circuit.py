"""Parametrized circuit IR, the single-block QNN builder and its text format.

Every pair gate is exp(iθ·P⊗P) with a positive exponent. Other libraries use
exp(-iθ/2·P⊗P) (rotation form) or exponent-based power gates; to convert a
rotation angle φ of those conventions use θ = -φ/2.

Text format, one gate per line after a header::

    # qubits=5 params=8
    X 4
    H 4
    EXP_XX 0 4 $0
    PHASE 1 0.5
    EXP_ZZ 1 4 0.25

`$k` names parameter slot k, a bare number is a fixed angle in radians.
"""
import logging
import re
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, root_validator, validator

from .core.config import config
from .models import GateArityError, GateKind, InvalidArgumentError, PauliKind
from .statevec import (
    StateVector,
    apply_exp_pauli_pair,
    apply_h,
    apply_phase,
    apply_x,
    apply_z,
    expectation_pauli,
)

_HEADER = re.compile(r"^#\s*qubits=(\d+)\s+params=(\d+)\s*$")


class GateSpec(BaseModel):
    kind: GateKind
    targets: Tuple[int, ...]
    pauli: Optional[PauliKind] = None
    param_slot: Optional[int] = None
    angle: Optional[float] = None

    class Config:
        allow_mutation = False

    @root_validator(skip_on_failure=True)
    def targets_and_angles_match_kind(cls, values):
        kind, targets = values["kind"], values["targets"]
        expected = 2 if kind == GateKind.EXP_PAULI_PAIR else 1
        if len(set(targets)) != expected or len(targets) != expected:
            raise GateArityError(kind=kind.value, expected=expected, wrong_value=targets)
        if any(t < 0 for t in targets):
            raise ValueError(f"negative target in {targets}")
        if kind == GateKind.EXP_PAULI_PAIR:
            if values["pauli"] is None:
                raise ValueError("pair gate needs a Pauli kind")
            if (values["param_slot"] is None) == (values["angle"] is None):
                raise ValueError("pair gate needs exactly one of param_slot or angle")
        elif kind == GateKind.PHASE:
            if values["angle"] is None or values["param_slot"] is not None:
                raise ValueError("phase gate needs a fixed angle")
        elif any(values[k] is not None for k in ("pauli", "param_slot", "angle")):
            raise ValueError(f"{kind.value} gate takes no Pauli kind, slot or angle")
        return values

    @property
    def is_parametrized(self) -> bool:
        return self.param_slot is not None


def x_gate(q: int) -> GateSpec:
    return GateSpec(kind=GateKind.X, targets=(q,))


def h_gate(q: int) -> GateSpec:
    return GateSpec(kind=GateKind.H, targets=(q,))


def z_gate(q: int) -> GateSpec:
    return GateSpec(kind=GateKind.Z, targets=(q,))


def phase_gate(q: int, phi: float) -> GateSpec:
    return GateSpec(kind=GateKind.PHASE, targets=(q,), angle=phi)


def pair_gate(
    p: PauliKind, q1: int, q2: int, slot: Optional[int] = None, angle: Optional[float] = None
) -> GateSpec:
    return GateSpec(
        kind=GateKind.EXP_PAULI_PAIR, targets=(q1, q2), pauli=p, param_slot=slot, angle=angle
    )


class Circuit(BaseModel):
    n_qubits: int
    gates: Tuple[GateSpec, ...] = ()
    n_params: int = 0

    class Config:
        allow_mutation = False

    @root_validator(skip_on_failure=True)
    def gates_fit_circuit(cls, values):
        n_qubits, n_params = values["n_qubits"], values["n_params"]
        for index, gate in enumerate(values["gates"]):
            if max(gate.targets) >= n_qubits:
                raise ValueError(f"gate {index} targets {gate.targets} outside {n_qubits} qubits")
            if gate.param_slot is not None and gate.param_slot >= n_params:
                raise ValueError(f"gate {index} uses slot {gate.param_slot} of {n_params}")
        return values


class ParamVector(BaseModel):
    thetas: np.ndarray

    class Config:
        arbitrary_types_allowed = True
        allow_mutation = False

    @validator("thetas", pre=True)
    def finite_angles(cls, v):
        thetas = np.array(v, dtype=np.float64).reshape(-1)
        if not np.isfinite(thetas).all():
            raise ValueError("parameters must be finite")
        thetas.flags.writeable = False
        return thetas


def gate_angle(gate: GateSpec, thetas: np.ndarray) -> float:
    if gate.param_slot is not None:
        return float(thetas[gate.param_slot])
    return gate.angle


def apply_gate(
    state: StateVector, gate: GateSpec, thetas: np.ndarray, inverse: bool = False
) -> StateVector:
    q = gate.targets[0]
    if gate.kind == GateKind.X:
        return apply_x(state, q)
    if gate.kind == GateKind.H:
        return apply_h(state, q)
    if gate.kind == GateKind.Z:
        return apply_z(state, q)
    angle = -gate_angle(gate, thetas) if inverse else gate_angle(gate, thetas)
    if gate.kind == GateKind.PHASE:
        return apply_phase(state, q, angle)
    return apply_exp_pauli_pair(state, gate.targets[0], gate.targets[1], gate.pauli, angle)


def check_shapes(circuit: Circuit, params: ParamVector, input_state: StateVector) -> None:
    if params.thetas.size != circuit.n_params:
        raise InvalidArgumentError(
            f"circuit takes {circuit.n_params} parameters, got {params.thetas.size}"
        )
    if input_state.n_qubits != circuit.n_qubits:
        raise InvalidArgumentError(
            f"circuit acts on {circuit.n_qubits} qubits, input has {input_state.n_qubits}"
        )


def evaluate(circuit: Circuit, params: ParamVector, input_state: StateVector) -> StateVector:
    check_shapes(circuit, params, input_state)
    state = input_state.clone()
    for gate in circuit.gates:
        apply_gate(state, gate, params.thetas)
    return state


def default_readout(circuit: Circuit) -> int:
    return circuit.n_qubits - 1


def model_expectation(
    circuit: Circuit,
    params: ParamVector,
    input_state: StateVector,
    readout: Optional[int] = None,
    observable: PauliKind = PauliKind.Z,
) -> float:
    readout = default_readout(circuit) if readout is None else readout
    return expectation_pauli(evaluate(circuit, params, input_state), readout, observable)


def build_qnn(dim: int, allow_large: bool = False) -> Tuple[Circuit, int]:
    """Readout prep (X, H), an XX layer and a ZZ layer coupling each data qubit
    to the readout, then H on the readout.

    Data qubits are the dim x dim grid in row-major order, followed by the
    readout qubit. Slot d is the XX angle of data qubit d, slot dim² + d its
    ZZ angle.
    """
    if dim not in config.SUPPORTED_DIMS and not (allow_large and dim == config.LARGE_DIM):
        raise InvalidArgumentError(f"{dim} is not a supported input dimension")
    n_data = dim * dim
    readout = n_data
    gates: List[GateSpec] = [x_gate(readout), h_gate(readout)]
    gates += [pair_gate(PauliKind.X, d, readout, slot=d) for d in range(n_data)]
    gates += [pair_gate(PauliKind.Z, d, readout, slot=n_data + d) for d in range(n_data)]
    gates.append(h_gate(readout))
    circuit = Circuit(n_qubits=n_data + 1, gates=tuple(gates), n_params=2 * n_data)
    logging.debug(
        "Built %dx%d QNN with %d gates and %d parameters",
        dim, dim, len(circuit.gates), circuit.n_params,
    )
    return circuit, readout


def _gate_token(gate: GateSpec) -> str:
    if gate.kind == GateKind.EXP_PAULI_PAIR:
        return f"EXP_{gate.pauli.value}{gate.pauli.value}"
    return gate.kind.value


def dump_circuit(circuit: Circuit) -> str:
    lines = [f"# qubits={circuit.n_qubits} params={circuit.n_params}"]
    for gate in circuit.gates:
        fields = [_gate_token(gate), *(str(t) for t in gate.targets)]
        if gate.param_slot is not None:
            fields.append(f"${gate.param_slot}")
        elif gate.angle is not None:
            fields.append(repr(float(gate.angle)))
        lines.append(" ".join(fields))
    return "\n".join(lines) + "\n"


def _parse_gate(fields: Sequence[str]) -> GateSpec:
    token, rest = fields[0], list(fields[1:])
    if token in ("X", "H", "Z"):
        return GateSpec(kind=GateKind(token), targets=tuple(int(t) for t in rest))
    if token == "PHASE":
        return phase_gate(int(rest[0]), float(rest[1]))
    if token.startswith("EXP_") and len(token) == 6 and token[4] == token[5]:
        q1, q2, value = int(rest[0]), int(rest[1]), rest[2]
        if value.startswith("$"):
            return pair_gate(PauliKind(token[4]), q1, q2, slot=int(value[1:]))
        return pair_gate(PauliKind(token[4]), q1, q2, angle=float(value))
    raise ValueError(f"unknown gate kind {token!r}")


def load_circuit(text: str) -> Circuit:
    lines = [line.strip() for line in text.splitlines() if line.strip()]
    header = _HEADER.match(lines[0]) if lines else None
    if header is None:
        raise InvalidArgumentError("circuit text must start with '# qubits=N params=L'")
    gates = []
    for number, line in enumerate(lines[1:], start=2):
        try:
            gates.append(_parse_gate(line.split()))
        except (ValueError, IndexError) as e:
            raise InvalidArgumentError(f"line {number}: cannot parse {line!r}: {e}") from e
    return Circuit(n_qubits=int(header.group(1)), gates=tuple(gates), n_params=int(header.group(2)))
