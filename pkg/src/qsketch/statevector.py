"""Dense pure-state simulation.

Qubit 0 is the most significant bit of the basis index, so the basis label
``|q0 q1 ... q_{n-1}>`` has index ``sum(q_j * 2**(n-1-j))``.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, ResourceError

DEFAULT_QUBIT_CAP = 16
NORM_TOL = 1e-9

# Set QSKETCH_DEBUG=1 to verify the norm after every gate.
DEBUG = os.environ.get("QSKETCH_DEBUG", "") not in ("", "0")

SQRT_HALF = 1.0 / np.sqrt(2.0)

GATE_MATRICES: dict[str, np.ndarray] = {
    "I": np.eye(2, dtype=complex),
    "H": np.array([[1, 1], [1, -1]], dtype=complex) * SQRT_HALF,
    "S": np.array([[1, 0], [0, 1j]], dtype=complex),
    "SDG": np.array([[1, 0], [0, -1j]], dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def make_rng(seed=None) -> np.random.Generator:
    """Return a Generator; passes existing generators through unchanged."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def substream(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator keyed by ``(seed, *keys)``.

    Used wherever work is split into tasks, so results do not depend on how
    the tasks are scheduled.
    """
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


def _check_qubits(n: int, cap: int | None) -> None:
    if n < 1:
        raise ArgumentError(f"num_qubits must be >= 1, got {n}")
    cap = DEFAULT_QUBIT_CAP if cap is None else cap
    if n > cap:
        raise ResourceError(f"{n} qubits exceeds the simulator cap of {cap}")


@dataclass(frozen=True, eq=False)
class PureState:
    num_qubits: int
    amplitudes: np.ndarray = field(repr=False)

    def __post_init__(self):
        amps = np.array(self.amplitudes, dtype=np.complex128).reshape(-1)
        if amps.size != 2**self.num_qubits:
            raise ArgumentError(
                f"expected {2 ** self.num_qubits} amplitudes for {self.num_qubits} qubits, got {amps.size}"
            )
        norm2 = float(np.vdot(amps, amps).real)
        if abs(norm2 - 1.0) > NORM_TOL:
            raise ArgumentError(f"state is not normalized (norm^2 = {norm2!r})")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def from_amplitudes(cls, amplitudes, normalize: bool = False) -> "PureState":
        amps = np.asarray(amplitudes, dtype=np.complex128).reshape(-1)
        d = amps.size
        n = d.bit_length() - 1
        if d < 2 or 2**n != d:
            raise ArgumentError(f"amplitude count {d} is not a power of two >= 2")
        if normalize:
            norm = np.linalg.norm(amps)
            if norm == 0:
                raise ArgumentError("cannot normalize the zero vector")
            amps = amps / norm
        return cls(n, amps)

    @classmethod
    def basis(cls, n: int, index: int = 0) -> "PureState":
        if not 0 <= index < 2**n:
            raise ArgumentError(f"basis index {index} out of range for {n} qubits")
        amps = np.zeros(2**n, dtype=np.complex128)
        amps[index] = 1.0
        return cls(n, amps)

    @property
    def dim(self) -> int:
        return self.amplitudes.size

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def renormalized(self) -> "PureState":
        return PureState.from_amplitudes(self.amplitudes, normalize=True)

    def __eq__(self, other):
        if not isinstance(other, PureState):
            return NotImplemented
        return self.num_qubits == other.num_qubits and np.array_equal(self.amplitudes, other.amplitudes)

    def __hash__(self):
        return hash((self.num_qubits, self.amplitudes.tobytes()))


@dataclass(frozen=True)
class Gate:
    """A single- or two-qubit gate.

    ``kind`` is one of H, S, SDG, X, Y, Z, U (generic 2x2, supply ``matrix``)
    or CNOT (``targets = (control, target)``).
    """

    kind: str
    targets: tuple[int, ...]
    matrix: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        kind = self.kind.upper()
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "targets", tuple(int(t) for t in self.targets))
        if kind == "CNOT":
            if len(self.targets) != 2 or self.targets[0] == self.targets[1]:
                raise ArgumentError("CNOT needs two distinct qubits (control, target)")
            return
        if len(self.targets) != 1:
            raise ArgumentError(f"{kind} acts on exactly one qubit")
        if kind == "U":
            m = np.asarray(self.matrix, dtype=complex)
            if m.shape != (2, 2) or not np.allclose(m.conj().T @ m, np.eye(2), atol=1e-12):
                raise ArgumentError("U gate needs a 2x2 unitary matrix")
            object.__setattr__(self, "matrix", m)
        elif kind not in GATE_MATRICES:
            raise ArgumentError(f"unknown gate kind {self.kind!r}")

    def unitary(self) -> np.ndarray:
        if self.kind == "U":
            return self.matrix
        if self.kind == "CNOT":
            return np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)
        return GATE_MATRICES[self.kind]


def apply_1q(vec: np.ndarray, n: int, matrix: np.ndarray, qubit: int) -> np.ndarray:
    """Apply a 2x2 matrix to ``qubit`` of a raw amplitude array.

    ``vec`` may carry leading batch axes; the last axis has length 2**n.
    """
    lead = vec.shape[:-1]
    v = vec.reshape(*lead, 2**qubit, 2, 2 ** (n - qubit - 1))
    out = np.einsum("ij,...ajb->...aib", matrix, v)
    return out.reshape(*lead, 2**n)


def apply_cnot(vec: np.ndarray, n: int, control: int, target: int) -> np.ndarray:
    out = vec.reshape(*vec.shape[:-1], *([2] * n)).copy()
    lead = vec.ndim - 1
    sel = [slice(None)] * (lead + n)
    sel[lead + control] = 1
    sub = out[tuple(sel)]
    # target axis index shifts down by one once the control axis is fixed
    t_axis = lead + target - (1 if target > control else 0)
    out[tuple(sel)] = np.flip(sub, axis=t_axis)
    return out.reshape(vec.shape)


def apply_gate(state: PureState, gate: Gate) -> PureState:
    n = state.num_qubits
    for t in gate.targets:
        if not 0 <= t < n:
            raise ArgumentError(f"qubit index {t} out of range for {n} qubits")
    if gate.kind == "CNOT":
        amps = apply_cnot(state.amplitudes, n, *gate.targets)
    else:
        amps = apply_1q(state.amplitudes, n, gate.unitary(), gate.targets[0])
    if DEBUG:
        drift = abs(np.linalg.norm(amps) - 1.0)
        assert drift <= NORM_TOL, f"norm drift {drift} after {gate}"
    return PureState(n, amps)


def apply_gates(state: PureState, gates) -> PureState:
    for g in gates:
        state = apply_gate(state, g)
    return state


def _check_same(a: PureState, b: PureState) -> None:
    if a.num_qubits != b.num_qubits:
        raise ArgumentError(f"dimension mismatch: {a.num_qubits} vs {b.num_qubits} qubits")


def inner_product(a: PureState, b: PureState) -> complex:
    """<a|b>, conjugate-linear in ``a``."""
    _check_same(a, b)
    return complex(np.vdot(a.amplitudes, b.amplitudes))


def trace_distance(a: PureState, b: PureState) -> float:
    """sqrt(1 - |<a|b>|^2), computed as the residual of projecting one state
    on the other so that near-identical pairs keep full precision."""
    ip = inner_product(a, b)
    if np.array_equal(a.amplitudes, b.amplitudes):
        return 0.0
    r1 = np.linalg.norm(b.amplitudes - ip * a.amplitudes)
    r2 = np.linalg.norm(a.amplitudes - ip.conjugate() * b.amplitudes)
    return float(min(1.0, max(0.0, 0.5 * (r1 + r2))))


def random_haar_state(n: int, rng, max_qubits: int | None = None) -> PureState:
    _check_qubits(n, max_qubits)
    rng = make_rng(rng)
    g = rng.standard_normal(2**n) + 1j * rng.standard_normal(2**n)
    return PureState(n, g / np.linalg.norm(g))


def measure_computational(state: PureState, shots: int, rng) -> np.ndarray:
    """Counts of ``shots`` Born-rule samples, one entry per basis outcome."""
    if shots < 1:
        raise ArgumentError(f"shots must be >= 1, got {shots}")
    rng = make_rng(rng)
    p = state.probabilities()
    return rng.multinomial(shots, p / p.sum())


def sample_outcomes(state: PureState, shots: int, rng) -> np.ndarray:
    """Individual Born-rule outcomes (basis indices) in draw order."""
    if shots < 1:
        raise ArgumentError(f"shots must be >= 1, got {shots}")
    rng = make_rng(rng)
    p = state.probabilities()
    return rng.choice(state.dim, size=shots, p=p / p.sum())
