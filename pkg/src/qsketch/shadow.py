"""Classical-shadow seed matrices and the two expectation estimators.

A seed row records, for every qubit ``j``, a gate index ``u`` selecting
``U in {I, H, S^dagger H}`` and the outcome bit ``b`` obtained by measuring
the state in the basis ``{U|0>, U|1>}``.  The post-measurement single-qubit
state is therefore ``v = U|b>``, one of the six stabilizer states

    u=0: |0>, |1>     u=1: |+>, |->     u=2: |-i>, |+i>

Entries are coded as ``x = 2u + b`` (0..5) throughout.

CST builds ``rho_i = (x)_j (3 v v^dagger - I)`` and averages ``tr(M rho_i)``.
QCQC instead re-prepares a (randomly flipped) product state, measures ``M``
on it, and rescales by ``3^k``.  Both are unbiased for ``<phi|M|phi>``.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import ArgumentError, FormatError, InternalError
from .observable import LocalObservable
from .statevector import GATE_MATRICES, PureState, make_rng, substream

MODES = ("cst", "qcqc")
BOOTSTRAP_RESAMPLES = 200
_MAGIC = b"QSH1"
_VERSION = 1
_CHUNK_AMPS = 1 << 21  # amplitudes held at once while sampling
_QCQC_CHUNK = 4096
_TABLE_AMPS = 1 << 23  # largest 3^n * 2^n settings table

_H, _S, _SDG = GATE_MATRICES["H"], GATE_MATRICES["S"], GATE_MATRICES["SDG"]
# U per gate index, and U^dagger (what is applied before a Z measurement)
GATES = np.stack([np.eye(2, dtype=complex), _H, _SDG @ _H])
GATES_DAG = np.stack([np.eye(2, dtype=complex), _H, _H @ _S])

# Projectors U|b><b|U^dagger for code x = 2u + b, written with exact entries
# so that 3P - I has trace exactly 1 in floating point.
_PROJ = np.array(
    [
        [[1, 0], [0, 0]],
        [[0, 0], [0, 1]],
        [[0.5, 0.5], [0.5, 0.5]],
        [[0.5, -0.5], [-0.5, 0.5]],
        [[0.5, 0.5j], [-0.5j, 0.5]],
        [[0.5, -0.5j], [0.5j, 0.5]],
    ],
    dtype=complex,
)
SHADOW_FACTORS = 3 * _PROJ - np.eye(2)
# the six states themselves, for QCQC re-preparation
SIX_STATES = np.stack([GATES[x // 2][:, x % 2] for x in range(6)])


@dataclass(frozen=True, eq=False)
class SeedMatrix:
    """N x n grid of (b, u) pairs, stored packed at 3 bits per entry."""

    N: int
    n: int
    packed: bytes = field(repr=False)

    def __post_init__(self):
        need = (3 * self.N * self.n + 7) // 8
        if self.N < 1 or self.n < 1:
            raise ArgumentError("seed matrix needs N >= 1 and n >= 1")
        if len(self.packed) != need:
            raise FormatError(f"packed seed has {len(self.packed)} bytes, expected {need}")

    @classmethod
    def from_arrays(cls, bits: np.ndarray, gates: np.ndarray) -> "SeedMatrix":
        bits = np.asarray(bits, dtype=np.uint8)
        gates = np.asarray(gates, dtype=np.uint8)
        if bits.shape != gates.shape or bits.ndim != 2:
            raise ArgumentError("bits and gates must be equal-shape 2-D arrays")
        if (bits > 1).any() or (gates > 2).any():
            raise ArgumentError("bits must be 0/1 and gate indices 0..2")
        codes = 2 * gates + bits
        # three bits per entry, most significant first: u1 u0 b
        triples = ((codes[..., None] >> np.array([2, 1, 0], dtype=np.uint8)) & 1).reshape(-1)
        return cls(bits.shape[0], bits.shape[1], np.packbits(triples).tobytes())

    @cached_property
    def codes(self) -> np.ndarray:
        """Entry codes ``2u + b``, shape (N, n)."""
        raw = np.unpackbits(np.frombuffer(self.packed, dtype=np.uint8), count=3 * self.N * self.n)
        trip = raw.reshape(self.N, self.n, 3)
        out = (trip[..., 0] << 2) | (trip[..., 1] << 1) | trip[..., 2]
        if (out > 5).any():
            raise FormatError("corrupt seed matrix: entry code above 5")
        out.setflags(write=False)
        return out

    @property
    def bits(self) -> np.ndarray:
        return self.codes & 1

    @property
    def gates(self) -> np.ndarray:
        return self.codes >> 1

    def __eq__(self, other):
        if not isinstance(other, SeedMatrix):
            return NotImplemented
        return (self.N, self.n, self.packed) == (other.N, other.n, other.packed)

    def rows(self, index) -> "SeedMatrix":
        codes = self.codes[index]
        return SeedMatrix.from_arrays(codes & 1, codes >> 1)


@dataclass(frozen=True)
class ShadowEstimate:
    value: float
    N_used: int
    mode: str
    stderr: float
    max_abs_sample: float = float("nan")


def _unique_rows(a: np.ndarray, base: int) -> tuple[np.ndarray, np.ndarray]:
    """Distinct rows of a small-integer matrix and the inverse map.

    Rows are keyed as base-``base`` integers when that fits in 63 bits,
    which is far faster than a lexicographic row sort.
    """
    width = a.shape[1]
    if width == 0:
        return a[:1], np.zeros(len(a), dtype=np.int64)
    if width * math.log2(base) >= 63:
        uniq, inverse = np.unique(a, axis=0, return_inverse=True)
        return uniq, inverse.reshape(-1)
    keys = a.astype(np.int64) @ (base ** np.arange(width - 1, -1, -1, dtype=np.int64))
    _, first, inverse = np.unique(keys, return_index=True, return_inverse=True)
    return a[first], inverse.reshape(-1)


def _rotate_rows(amps: np.ndarray, gates: np.ndarray, n: int) -> np.ndarray:
    """Apply ``(x)_j U_j^dagger`` row by row; ``amps`` is (rows, 2^n)."""
    rows = len(amps)
    out = np.array(amps, dtype=complex)
    for j in range(n):
        t = out.reshape(rows, 2**j, 2, 2 ** (n - j - 1))
        m = GATES_DAG[gates[:, j]][:, None, :, :, None]  # (rows, 1, 2, 2, 1)
        a, b = t[:, :, 0], t[:, :, 1]
        out = np.stack([m[:, :, 0, 0] * a + m[:, :, 0, 1] * b, m[:, :, 1, 0] * a + m[:, :, 1, 1] * b], axis=2)
    return out.reshape(rows, -1)


def _all_settings_cdf(state: PureState) -> np.ndarray:
    """Outcome CDFs for all 3^n settings, row = base-3 setting (qubit 0 first).

    Built as a tree, one qubit at a time, so the cost is about
    1.5 * 3^n * 2^n rather than n * 3^n * 2^n.
    """
    n, d = state.num_qubits, state.dim
    out = state.amplitudes.reshape(1, d)
    for j in range(n):
        t = out.reshape(len(out), 2**j, 2, 2 ** (n - j - 1))
        # (r, x, z, g, a) -> (r, g, x, a, z)
        t = np.tensordot(t, GATES_DAG, axes=([2], [2])).transpose(0, 3, 1, 4, 2)
        out = t.reshape(3 * len(out), d)
    return np.cumsum(np.abs(out) ** 2, axis=1)


def build_seed_matrix(state: PureState, N: int, rng=None) -> SeedMatrix:
    """Simulate ``N`` randomized single-qubit Pauli measurements of ``state``.

    Gate indices are drawn first (N x n), then one uniform per row selects
    the joint outcome.  Rows sharing a setting share one rotated state.
    """
    if N < 1:
        raise ArgumentError("N must be >= 1")
    rng = make_rng(rng)
    n, d = state.num_qubits, state.dim
    gates = rng.integers(0, 3, size=(N, n), dtype=np.uint8)
    uniforms = rng.random(N)
    outcomes = np.empty(N, dtype=np.int64)
    chunk = max(1, _CHUNK_AMPS // d)
    table = _all_settings_cdf(state) if 3**n * d <= _TABLE_AMPS else None
    keys = gates.astype(np.int64) @ (3 ** np.arange(n - 1, -1, -1, dtype=np.int64)) if table is not None else None
    for lo in range(0, N, chunk):
        if table is not None:
            rows = table[keys[lo : lo + chunk]]
        else:
            settings, inverse = _unique_rows(gates[lo : lo + chunk], 3)
            rotated = _rotate_rows(np.broadcast_to(state.amplitudes, (len(settings), d)), settings, n)
            rows = np.cumsum(np.abs(rotated) ** 2, axis=1)[inverse]
        u = uniforms[lo : lo + chunk, None] * rows[:, -1:]
        outcomes[lo : lo + chunk] = np.minimum((rows <= u).sum(axis=1), d - 1)
    shifts = np.arange(n - 1, -1, -1)
    bits = (outcomes[:, None] >> shifts) & 1
    return SeedMatrix.from_arrays(bits, gates)


def _check_support(seed: SeedMatrix, obs: LocalObservable) -> tuple[int, ...]:
    support = obs.support
    if support and support[-1] >= seed.n:
        raise ArgumentError(f"observable support {support} exceeds the seed's {seed.n} qubits")
    obs._check_cap()
    return support


def _pattern_codes(seed: SeedMatrix, support) -> np.ndarray:
    """Base-6 code of each row's entries on ``support`` (first qubit most significant)."""
    codes = seed.codes[:, list(support)].astype(np.int64)
    weights = 6 ** np.arange(len(support) - 1, -1, -1, dtype=np.int64)
    return codes @ weights if len(support) else np.zeros(seed.N, dtype=np.int64)


def cst_table(obs: LocalObservable) -> np.ndarray:
    """``tr(M rho)`` for every product shadow pattern on the union support.

    Writes ``tr(M (x)_l F_l) = sum M[i, j] prod_l F_l[j_l, i_l]`` and contracts
    one qubit at a time, so the cost is ``O(6 * 4^k)`` per qubit.
    """
    k = obs.locality
    if k == 0:
        return np.array([obs.dense[0, 0].real])
    mt = obs.dense.reshape([2] * (2 * k))
    # reorder axes to (i1, j1, i2, j2, ...) and merge each pair
    order = [a for l in range(k) for a in (l, k + l)]
    mt = mt.transpose(order).reshape([4] * k)
    factors = SHADOW_FACTORS.transpose(0, 2, 1).reshape(6, 4)  # F[j, i] at (i, j)
    for _ in range(k):
        mt = np.tensordot(mt, factors, axes=([0], [1]))
    table = mt.reshape(-1)
    if np.abs(table.imag).max() > 1e-9 * max(1.0, np.abs(table).max()):
        raise InternalError("CST table has a non-negligible imaginary part")
    return table.real


def _bootstrap_stderr(values: np.ndarray, weights: np.ndarray, rng) -> float:
    """Bootstrap standard error of a weighted mean of distinct values."""
    total = int(weights.sum())
    if total < 2:
        return float("nan")
    p = weights / total
    means = rng.multinomial(total, p, size=BOOTSTRAP_RESAMPLES) @ values / total
    return float(means.std(ddof=1))


def estimate_cst(seed: SeedMatrix, obs: LocalObservable) -> ShadowEstimate:
    """Average of ``tr(M rho_i)`` over the seed rows.

    Rows are tallied by pattern before summing, so the value is exactly
    invariant under row permutations.
    """
    support = _check_support(seed, obs)
    table = cst_table(obs)
    counts = np.bincount(_pattern_codes(seed, support), minlength=table.size)
    used = counts > 0
    value = float(counts[used] @ table[used]) / seed.N
    stderr = _bootstrap_stderr(table[used], counts[used], np.random.default_rng(0))
    return ShadowEstimate(value, seed.N, "cst", stderr, float(np.abs(table[used]).max()))


def shadow_traces(seed: SeedMatrix, support) -> np.ndarray:
    """``tr(rho_i)`` per row on ``support`` (each is a product of factor traces)."""
    traces = np.trace(SHADOW_FACTORS, axis1=1, axis2=2).real
    codes = seed.codes[:, list(support)]
    return np.prod(traces[codes], axis=1) if len(support) else np.ones(seed.N)


def _product_states(patterns: np.ndarray, k: int) -> np.ndarray:
    """Rows of base-6 codes (unique, shape (P, k)) to product states (P, 2^k)."""
    out = np.ones((len(patterns), 1), dtype=complex)
    for l in range(k):
        vec = SIX_STATES[patterns[:, l]]
        out = (out[:, :, None] * vec[:, None, :]).reshape(len(patterns), -1)
    return out


def estimate_qcqc(seed: SeedMatrix, obs: LocalObservable, rng=None) -> ShadowEstimate:
    """Quantum-classical estimator: flip, re-prepare, measure ``M``, rescale.

    Rows are put in a canonical order first and randomness is drawn per fixed
    chunk of that order, so the result depends only on the multiset of rows.
    """
    support = _check_support(seed, obs)
    k = len(support)
    rng = make_rng(rng)
    base = int(rng.integers(2**63))
    vals, vecs = obs._eig
    bound = 3**k * obs.inf_norm
    codes = np.sort(_pattern_codes(seed, support))
    digits = (codes[:, None] // 6 ** np.arange(k - 1, -1, -1)) % 6 if k else np.zeros((seed.N, 0), int)
    samples = np.empty(seed.N)
    for c, lo in enumerate(range(0, seed.N, _QCQC_CHUNK)):
        sub = substream(base, c)
        x = digits[lo : lo + _QCQC_CHUNK]
        keep = sub.random(x.shape) < 2 / 3
        # flip the outcome bit where not kept: code 2u+b -> 2u+(1-b)
        prep = np.where(keep, x, x ^ 1)
        weight = np.prod(np.where(keep, 1.0, -1.0), axis=1)
        pats, inverse = _unique_rows(prep, 6)
        probs = np.abs(_product_states(pats, k) @ vecs.conj()) ** 2
        cdf = np.cumsum(probs, axis=1)
        rows = cdf[inverse]
        u = sub.random(len(x))[:, None] * rows[:, -1:]
        eig_idx = np.minimum((rows <= u).sum(axis=1), len(vals) - 1)
        samples[lo : lo + len(x)] = 3**k * vals[eig_idx] * weight
    worst = float(np.abs(samples).max())
    if worst > bound * (1 + 1e-12):
        raise InternalError(f"QCQC sample {worst} exceeds the bound 3^k ||M|| = {bound}")
    uniq, counts = np.unique(samples, return_counts=True)
    stderr = _bootstrap_stderr(uniq, counts.astype(float), np.random.default_rng(0))
    return ShadowEstimate(float(samples.mean()), seed.N, "qcqc", stderr, worst)


def estimate(seed: SeedMatrix, obs: LocalObservable, mode: str = "cst", rng=None) -> ShadowEstimate:
    if mode == "cst":
        return estimate_cst(seed, obs)
    if mode == "qcqc":
        return estimate_qcqc(seed, obs, rng)
    raise ArgumentError(f"unknown shadow mode {mode!r}; expected one of {MODES}")


def gamma0_inverse(rho) -> np.ndarray:
    """Inverse of the single-qubit measurement channel: ``3 rho - tr(rho) I``."""
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (2, 2) or not np.allclose(rho, rho.conj().T, atol=1e-12):
        raise ArgumentError("gamma0_inverse needs a 2x2 Hermitian matrix")
    return 3 * rho - np.trace(rho) * np.eye(2)


def required_samples(k: int, inf_norm: float, eps: float, delta: float, mode: str = "cst") -> int:
    """Seed rows needed for ``+-eps`` at confidence ``1 - delta`` (natural log)."""
    if mode not in MODES:
        raise ArgumentError(f"unknown shadow mode {mode!r}; expected one of {MODES}")
    if not 0 < eps or not 0 < delta < 1:
        raise ArgumentError("need eps > 0 and delta in (0, 1)")
    base = 4 if mode == "cst" else 9
    raw = base**k * inf_norm**2 * math.log(1 / delta) / eps**2
    # trim float fuzz so exact integers are not bumped up by one
    return max(1, math.ceil(raw * (1 - 1e-12)))


# --------------------------------------------------------------------------
# persistence: magic, version byte, u32 N, u16 n, packed entries row-major


def seed_to_bytes(seed: SeedMatrix) -> bytes:
    return _MAGIC + struct.pack("<BIH", _VERSION, seed.N, seed.n) + seed.packed


def seed_from_bytes(data: bytes) -> SeedMatrix:
    if data[:4] != _MAGIC:
        raise FormatError("not a shadow seed file")
    if len(data) < 11:
        raise FormatError("truncated shadow seed header")
    version, N, n = struct.unpack_from("<BIH", data, 4)
    if version != _VERSION:
        raise FormatError(f"unsupported shadow seed version {version}")
    return SeedMatrix(N, n, bytes(data[11:]))


def save_seed(seed: SeedMatrix, path) -> None:
    Path(path).write_bytes(seed_to_bytes(seed))


def load_seed(path) -> SeedMatrix:
    return seed_from_bytes(Path(path).read_bytes())
