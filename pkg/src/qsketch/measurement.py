"""k-outcome sketching measurements.

Two constructions are provided:

* ``clifford`` - a uniformly random n-qubit Clifford circuit followed by a
  computational-basis measurement whose outcome is binned by its leading
  ``log2(k)`` bits.  Cheap to sample and to apply; this is the production
  path.
* ``pgm`` - a Haar-random orthonormal basis built by orthonormalising complex
  Gaussian vectors (``Gamma^{-1/2} g_t``) and grouping the basis vectors into
  ``k`` projectors.  Cubic in ``d``, used only as a small-d reference.

Both are reproducible from ``(mode, n, k, seed)``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from pathlib import Path

import numpy as np

from .errors import ArgumentError, FormatError, InternalError
from .statevector import (
    DEFAULT_QUBIT_CAP,
    Gate,
    PureState,
    _check_qubits,
    make_rng,
)

PGM_MAX_DIM = 1024
EIG_FLOOR = 1e-12
_SQRT_HALF = 1.0 / math.sqrt(2.0)


# --------------------------------------------------------------------------
# Clifford sampling


def _mallows(n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Hadamard layer and qubit permutation from the quantum Mallows law."""
    had = np.zeros(n, dtype=bool)
    perm = np.zeros(n, dtype=int)
    remaining = list(range(n))
    for i in range(n):
        m = n - i
        r = rng.uniform()
        index = -int(math.ceil(math.log2(r + (1.0 - r) * 4.0 ** (-m))))
        had[i] = index < m
        k = index if index < m else 2 * m - index - 1
        perm[i] = remaining.pop(k)
    return had, perm


def _hadamard_free_ops(gamma: np.ndarray, delta: np.ndarray) -> list[tuple]:
    n = len(gamma)
    ops: list[tuple] = [("S", int(q)) for q in np.flatnonzero(np.diag(gamma))]
    for k in range(n):
        for j in range(k):
            if gamma[k, j]:
                ops += [("H", k), ("CNOT", j, k), ("H", k)]
    for k in range(n):
        for j in range(k):
            if delta[k, j]:
                ops.append(("CNOT", j, k))
    return ops


def _permutation_swaps(perm: np.ndarray) -> list[tuple[int, int]]:
    """Swaps moving the content of qubit ``q`` to position ``perm[q]``."""
    n = len(perm)
    want = [0] * n
    for q, p in enumerate(perm):
        want[p] = q
    cur = list(range(n))
    swaps = []
    for pos in range(n):
        if cur[pos] != want[pos]:
            j = cur.index(want[pos])
            swaps.append((pos, j))
            cur[pos], cur[j] = cur[j], cur[pos]
    return swaps


_PAULI_OPS = {
    0: [],
    1: ["H", "S", "S", "H"],  # X
    2: ["S", "S", "H", "S", "S", "H"],  # Y up to phase (Z then X)
    3: ["S", "S"],  # Z
}


@lru_cache(maxsize=None)
def _gate(kind: str, *targets: int) -> Gate:
    return Gate(kind, targets)


@lru_cache(maxsize=None)
def _cnot_index(n: int, control: int, target: int) -> np.ndarray:
    idx = np.arange(2**n)
    cbit = 1 << (n - 1 - control)
    tbit = 1 << (n - 1 - target)
    return np.where(idx & cbit, idx ^ tbit, idx)


@dataclass(frozen=True)
class CliffordCircuit:
    """An n-qubit circuit over {H, S, CNOT}; gates apply in list order."""

    n: int
    gates: tuple[Gate, ...]

    def __len__(self):
        return len(self.gates)

    @classmethod
    def identity(cls, n: int) -> "CliffordCircuit":
        return cls(n, ())

    def apply(self, amplitudes: np.ndarray) -> np.ndarray:
        """Apply to a raw amplitude array (leading batch axes allowed)."""
        n = self.n
        vec = np.array(amplitudes, dtype=np.complex128, copy=True)
        lead = vec.shape[:-1]
        for g in self.gates:
            kind = g.kind
            if kind == "CNOT":
                vec = vec[..., _cnot_index(n, *g.targets)]
                continue
            q = g.targets[0]
            v = vec.reshape(*lead, 2**q, 2, 2 ** (n - q - 1))
            if kind == "S":
                v[..., 1, :] *= 1j
            elif kind == "H":
                a = v[..., 0, :].copy()
                b = v[..., 1, :]
                v[..., 0, :] = (a + b) * _SQRT_HALF
                v[..., 1, :] = (a - b) * _SQRT_HALF
            else:
                raise InternalError(f"non-Clifford gate {kind} in circuit")
        return vec

    def apply_state(self, state: PureState) -> PureState:
        if state.num_qubits != self.n:
            raise ArgumentError(f"circuit acts on {self.n} qubits, state has {state.num_qubits}")
        return PureState(self.n, self.apply(state.amplitudes))

    def unitary(self) -> np.ndarray:
        d = 2**self.n
        return self.apply(np.eye(d, dtype=complex)).T

    def to_list(self) -> list[list]:
        return [[g.kind, *g.targets] for g in self.gates]

    @classmethod
    def from_list(cls, n: int, items) -> "CliffordCircuit":
        gates = []
        for item in items:
            kind, *targets = item
            if kind not in ("H", "S", "CNOT"):
                raise FormatError(f"gate {kind!r} is not allowed in a Clifford circuit")
            gates.append(_gate(kind, *map(int, targets)))
        return cls(n, tuple(gates))


def sample_clifford(n: int, rng, max_qubits: int | None = None) -> CliffordCircuit:
    """Uniformly random Clifford circuit, via the Bravyi-Maslov canonical form.

    The circuit is ``F1``, a Hadamard layer, a qubit permutation, a random
    Pauli, then ``F2``, where ``F1`` and ``F2`` are Hadamard-free (S, CZ and
    CNOT layers).  The free bits of ``F1`` are restricted by the Hadamard
    layer and permutation so that every Clifford (mod global phase) has
    exactly one representation.  Gate count is at most ``4n^2 + 9n``.
    """
    _check_qubits(n, max_qubits)
    rng = make_rng(rng)
    had, perm = _mallows(n, rng)

    # one batch of fair bits, consumed in a fixed order
    bits = iter(rng.integers(2, size=2 * n * n + 3 * n).tolist())
    gamma1 = np.diag([next(bits) * int(h) for h in had])
    gamma2 = np.diag([next(bits) for _ in range(n)])
    delta1 = np.eye(n, dtype=int)
    delta2 = np.eye(n, dtype=int)
    for j in range(n):
        for k in range(j + 1, n):
            gamma2[k, j] = gamma2[j, k] = next(bits)
            delta2[k, j] = next(bits)
    had = had.tolist()
    perm_l = perm.tolist()
    for j in range(n):
        for k in range(j + 1, n):
            if had[k] and had[j]:
                gamma1[k, j] = gamma1[j, k] = next(bits)
                if perm_l[k] > perm_l[j]:
                    delta1[k, j] = next(bits)
            elif had[j] and not had[k]:
                delta1[k, j] = next(bits)
                if perm_l[k] > perm_l[j]:
                    gamma1[k, j] = gamma1[j, k] = next(bits)
            elif had[k] and not had[j]:
                if perm_l[k] < perm_l[j]:
                    gamma1[k, j] = gamma1[j, k] = next(bits)
            elif perm_l[k] < perm_l[j]:
                delta1[k, j] = next(bits)
    paulis = [next(bits) * 2 + next(bits) for _ in range(n)]

    ops = _hadamard_free_ops(gamma1, delta1)
    ops += [("H", q) for q in range(n) if had[q]]
    for a, b in _permutation_swaps(perm_l):
        ops += [("CNOT", a, b), ("CNOT", b, a), ("CNOT", a, b)]
    for q, p in enumerate(paulis):
        ops += [(name, q) for name in _PAULI_OPS[p]]
    ops += _hadamard_free_ops(gamma2, delta2)
    return CliffordCircuit(n, tuple(_gate(*op) for op in ops))


# --------------------------------------------------------------------------
# Sketch measurements


def _is_power_of_two(k: int) -> bool:
    return k >= 1 and (k & (k - 1)) == 0


def bin_bits(k: int) -> int:
    """Number of leading qubits read by the binning function."""
    return max(0, math.ceil(math.log2(k))) if k > 1 else 0


@dataclass(frozen=True, eq=False)
class SketchMeasurement:
    mode: str
    n: int
    k: int
    seed: int | None
    circuit: CliffordCircuit | None = None
    basis: np.ndarray | None = field(default=None, repr=False)

    @property
    def d(self) -> int:
        return 2**self.n

    @property
    def measurement_id(self) -> tuple:
        return (self.mode, self.n, self.k, self.seed)

    def bin(self, outcome):
        """Map computational-basis outcome(s) to bin indices (Clifford mode)."""
        b = bin_bits(self.k)
        outcome = np.asarray(outcome)
        return (outcome >> (self.n - b)) % self.k

    @cached_property
    def _bin_of_outcome(self) -> np.ndarray:
        return self.bin(np.arange(self.d))

    def projectors(self) -> list[np.ndarray]:
        """Dense projectors, one per bin."""
        if self.mode == "pgm":
            size = self.d // self.k
            out = []
            for j in range(self.k):
                cols = self.basis[:, j * size : (j + 1) * size]
                out.append(cols @ cols.conj().T)
            return out
        u = self.circuit.unitary()
        out = []
        for j in range(self.k):
            rows = u[self._bin_of_outcome == j]
            out.append(rows.conj().T @ rows)
        return out

    def __eq__(self, other):
        if not isinstance(other, SketchMeasurement):
            return NotImplemented
        return self.measurement_id == other.measurement_id and self.seed is not None

    def __hash__(self):
        return hash(self.measurement_id)


def _check_k(n: int, k: int) -> None:
    if k < 1 or k > 2**n:
        raise ArgumentError(f"k must be in [1, {2 ** n}], got {k}")
    if not _is_power_of_two(k):
        raise ArgumentError(
            f"k={k} is not a power of two; mod-k binning on {bin_bits(k)} qubits would give "
            f"unequal bins. Use k={1 << bin_bits(k)} or {1 << (bin_bits(k) - 1)}."
        )


def clifford_measurement(n: int, k: int, seed: int | None = None, rng=None) -> SketchMeasurement:
    _check_k(n, k)
    gen = make_rng(seed if rng is None else rng)
    return SketchMeasurement("clifford", n, k, seed, circuit=sample_clifford(n, gen))


def build_pgm_measurement(d: int, k: int, rng=None, seed: int | None = None) -> SketchMeasurement:
    """Haar-random basis partitioned into ``k`` projectors of rank ``d/k``."""
    n = d.bit_length() - 1
    if d < 2 or 2**n != d:
        raise ArgumentError(f"d={d} is not a power of two")
    if d > PGM_MAX_DIM:
        raise ArgumentError(f"PGM construction is limited to d <= {PGM_MAX_DIM}")
    if k < 1 or d % k:
        raise ArgumentError(f"k={k} must divide d={d}")
    gen = make_rng(seed if rng is None else rng)
    for _ in range(4):
        sigma = math.sqrt(1.0 / (2 * d))
        g = gen.normal(0.0, sigma, (d, d)) + 1j * gen.normal(0.0, sigma, (d, d))
        gram = g @ g.conj().T
        evals, evecs = np.linalg.eigh(gram)
        if evals.min() > EIG_FLOOR:
            break
    else:
        raise InternalError("Gram matrix numerically singular after 3 retries")
    inv_sqrt = (evecs / np.sqrt(evals)) @ evecs.conj().T
    basis = inv_sqrt @ g
    basis = basis[:, gen.permutation(d)]
    return SketchMeasurement("pgm", n, k, seed, basis=basis)


def make_measurement(mode: str, n: int, k: int, seed: int) -> SketchMeasurement:
    """Deterministic constructor keyed by ``(mode, n, k, seed)``."""
    if mode == "clifford":
        return clifford_measurement(n, k, seed=seed)
    if mode == "pgm":
        return build_pgm_measurement(2**n, k, seed=seed)
    raise ArgumentError(f"unknown measurement mode {mode!r}")


def _check_match(state: PureState, m: SketchMeasurement) -> None:
    if state.num_qubits != m.n:
        raise ArgumentError(f"state has {state.num_qubits} qubits, measurement expects {m.n}")


def outcome_probabilities(amplitudes: np.ndarray, m: SketchMeasurement) -> np.ndarray:
    """Bin distribution for raw amplitude arrays; leading batch axes allowed."""
    amps = np.asarray(amplitudes)
    if m.mode == "pgm":
        coeffs = amps @ m.basis.conj()
        p = (np.abs(coeffs) ** 2).reshape(*amps.shape[:-1], m.k, m.d // m.k).sum(-1)
    else:
        evolved = m.circuit.apply(amps)
        probs = np.abs(evolved) ** 2
        b = bin_bits(m.k)
        lead = probs.reshape(*amps.shape[:-1], 2**b, -1).sum(-1)
        if 2**b == m.k:
            p = lead
        else:
            fold = np.arange(2**b) % m.k
            p = np.stack([lead[..., fold == j].sum(-1) for j in range(m.k)], axis=-1)
    return p / p.sum(-1, keepdims=True)


def exact_outcome_distribution(state: PureState, m: SketchMeasurement) -> np.ndarray:
    _check_match(state, m)
    return outcome_probabilities(state.amplitudes, m)


def sketch_measure_many(state: PureState, m: SketchMeasurement, shots: int, rng) -> np.ndarray:
    """``shots`` independent bin indices, in draw order."""
    _check_match(state, m)
    rng = make_rng(rng)
    if m.mode == "pgm":
        return rng.choice(m.k, size=shots, p=exact_outcome_distribution(state, m))
    evolved = m.circuit.apply(state.amplitudes)
    probs = np.abs(evolved) ** 2
    outcomes = rng.choice(m.d, size=shots, p=probs / probs.sum())
    return m.bin(outcomes)


def sketch_measure(state: PureState, m: SketchMeasurement, rng) -> int:
    return int(sketch_measure_many(state, m, 1, rng)[0])


# --------------------------------------------------------------------------
# 2-design moment validation


@dataclass(frozen=True)
class MomentStats:
    est_second: float
    est_fourth: float
    est_cross: float
    est_var_w: float
    est_bin_mass: float
    trials: int
    d: int
    k: int

    @property
    def target_second(self) -> float:
        return 1.0 / self.d

    @property
    def target_fourth(self) -> float:
        return 2.0 / (self.d * (self.d + 1))

    @property
    def target_cross(self) -> float:
        return 1.0 / (self.d * (self.d + 1))

    @property
    def target_var_w(self) -> float:
        return 2.0 * self.d / (self.d + 1)

    def relative_errors(self) -> dict[str, float]:
        return {
            "second": abs(self.est_second / self.target_second - 1),
            "fourth": abs(self.est_fourth / self.target_fourth - 1),
            "cross": abs(self.est_cross / self.target_cross - 1),
            "var_w": abs(self.est_var_w / self.target_var_w - 1),
            "bin_mass": abs(self.est_bin_mass * self.k - 1),
        }


def sample_clifford_columns(n: int, trials: int, rng) -> np.ndarray:
    """First columns ``U|0...0>`` of ``trials`` independent random Cliffords."""
    rng = make_rng(rng)
    d = 2**n
    e0 = np.zeros(d, dtype=complex)
    e0[0] = 1.0
    cols = np.empty((trials, d), dtype=complex)
    for t in range(trials):
        cols[t] = sample_clifford(n, rng).apply(e0)
    return cols


def validate_design_moments(n: int, k: int, trials: int, rng) -> MomentStats:
    """Monte Carlo check of the Haar moments that a 2-design must reproduce."""
    if trials < 1:
        raise ArgumentError("trials must be >= 1")
    _check_k(n, k)
    d = 2**n
    p = np.abs(sample_clifford_columns(n, trials, rng)) ** 2
    w = d * (p[:, 0] - p[:, 1])
    return MomentStats(
        est_second=float(p[:, 0].mean()),
        est_fourth=float((p[:, 0] ** 2).mean()),
        est_cross=float((p[:, 0] * p[:, 1]).mean()),
        est_var_w=float(w.var()),
        est_bin_mass=float(p[:, : d // k].sum(1).mean()),
        trials=trials,
        d=d,
        k=k,
    )


# --------------------------------------------------------------------------
# Persistence: JSON header plus gate list (Clifford) or binary basis (PGM)


def measurement_to_json(m: SketchMeasurement) -> dict:
    doc = {"mode": m.mode, "n": m.n, "k": m.k, "seed": m.seed}
    if m.mode == "clifford":
        doc["gates"] = m.circuit.to_list()
    return doc


def save_measurement(m: SketchMeasurement, path) -> None:
    path = Path(path)
    path.write_text(json.dumps(measurement_to_json(m)))
    if m.mode == "pgm":
        np.save(path.with_suffix(".basis.npy"), m.basis)


def load_measurement(path) -> SketchMeasurement:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
        mode, n, k, seed = doc["mode"], int(doc["n"]), int(doc["k"]), doc["seed"]
    except (KeyError, ValueError) as exc:
        raise FormatError(f"bad measurement file {path}: {exc}") from exc
    if mode == "clifford":
        if "gates" in doc:
            return SketchMeasurement(mode, n, k, seed, circuit=CliffordCircuit.from_list(n, doc["gates"]))
        return make_measurement(mode, n, k, seed)
    basis_path = path.with_suffix(".basis.npy")
    if basis_path.exists():
        return SketchMeasurement(mode, n, k, seed, basis=np.load(basis_path))
    return make_measurement(mode, n, k, seed)


__all__ = [
    "CliffordCircuit",
    "DEFAULT_QUBIT_CAP",
    "MomentStats",
    "SketchMeasurement",
    "bin_bits",
    "build_pgm_measurement",
    "clifford_measurement",
    "exact_outcome_distribution",
    "load_measurement",
    "make_measurement",
    "outcome_probabilities",
    "sample_clifford",
    "sample_clifford_columns",
    "save_measurement",
    "sketch_measure",
    "sketch_measure_many",
    "validate_design_moments",
]
