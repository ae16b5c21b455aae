"""Exact brute-force references for tests and audits.

Nothing here is on a query path.  Every function is deterministic given its
inputs (and RNG, where one is taken).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ArgumentError
from .statevector import PureState, make_rng, random_haar_state, trace_distance

FULL_BASIS_MAX_DIM = 64
_FID_TOL = 1e-12


def _items(states):
    if isinstance(states, dict):
        return list(states.items())
    return list(states)


def linear_scan_search(states, q: PureState, eps: float) -> list[int]:
    """All ids with ``D(state, q) <= eps``, by exhaustive scan.

    ``states`` is a mapping or an iterable of ``(id, PureState)``.  The test
    runs on ``1 - fidelity`` with a 1e-12 slack so exact duplicates pass at
    ``eps = 0`` despite rounding.
    """
    if eps < 0:
        raise ArgumentError("eps must be nonnegative")
    out = []
    for sid, st in _items(states):
        fid = abs(np.vdot(st.amplitudes, q.amplitudes)) ** 2
        if 1.0 - fid <= eps * eps + _FID_TOL:
            out.append(sid)
    return sorted(out)


def exact_distances(states, q: PureState) -> dict[int, float]:
    return {sid: trace_distance(st, q) for sid, st in _items(states)}


@dataclass(frozen=True)
class DistortionReport:
    """Trace distance next to four classical vector distances.

    ``L1``/``L2`` compare amplitude vectors; the primed pair compares
    computational-basis probability vectors.
    """

    D: float
    L1: float
    L2: float
    L1_prime: float
    L2_prime: float

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


def distortion_table(a: PureState, b: PureState) -> DistortionReport:
    if a.num_qubits != b.num_qubits:
        raise ArgumentError("states differ in qubit count")
    da = a.amplitudes - b.amplitudes
    dp = a.probabilities() - b.probabilities()
    return DistortionReport(
        D=trace_distance(a, b),
        L1=float(np.abs(da).sum()),
        L2=float(np.linalg.norm(da)),
        L1_prime=float(np.abs(dp).sum()),
        L2_prime=float(np.linalg.norm(dp)),
    )


def half_support_pair(d: int) -> tuple[PureState, PureState]:
    """Uniform superpositions over the first and the middle ``d/2`` indices."""
    if d < 4 or d & (d - 1):
        raise ArgumentError("d must be a power of two >= 4")
    h = d // 2
    phi = np.zeros(d)
    psi = np.zeros(d)
    phi[:h] = 1.0
    psi[d // 4 : d // 4 + h] = 1.0
    scale = 1.0 / math.sqrt(h)
    return PureState.from_amplitudes(phi * scale), PureState.from_amplitudes(psi * scale)


def distortion_expected(d: int) -> dict[str, tuple[float, float]]:
    """Analytic values per distance: (pair value, basis-pair value)."""
    return {
        "D": (math.sqrt(3 / 4), 1.0),
        "L1": (math.sqrt(d / 2), 2.0),
        "L2": (1.0, math.sqrt(2)),
        "L1_prime": (1.0, 2.0),
        "L2_prime": (math.sqrt(2 / d), math.sqrt(2)),
    }


def distortion_factors(d: int) -> dict[str, float]:
    """Distortion of each distance relative to ``D`` on the two test pairs.

    Defined as ``max(r, 1/r)`` with ``r`` the ratio of ``dist/D`` between the
    pairs; this reproduces the tabulated column (sqrt(d/6), sqrt(3/2), sqrt(3),
    sqrt(3d/4)).
    """
    phi, psi = half_support_pair(d)
    e0 = PureState.basis(int(math.log2(d)), 0)
    e1 = PureState.basis(int(math.log2(d)), 1)
    near = distortion_table(phi, psi).as_dict()
    base = distortion_table(e0, e1).as_dict()
    out = {}
    for key in ("L1", "L2", "L1_prime", "L2_prime"):
        r = (near[key] / near["D"]) / (base[key] / base["D"])
        out[key] = max(r, 1 / r)
    return out


def density_vectorize(phi: PureState) -> np.ndarray:
    """Real and imaginary parts of ``phi phi^dagger`` flattened row-major, concatenated."""
    rho = np.outer(phi.amplitudes, phi.amplitudes.conj())
    return np.concatenate([rho.real.reshape(-1), rho.imag.reshape(-1)])


def haar_basis(d: int, rng) -> np.ndarray:
    """Haar-random unitary (columns are the basis) via QR of a Gaussian matrix."""
    rng = make_rng(rng)
    g = (rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))) / math.sqrt(2)
    q, r = np.linalg.qr(g)
    ph = np.diagonal(r) / np.abs(np.diagonal(r))
    return q * ph


@dataclass(frozen=True)
class FullBasisReport:
    d: int
    trials: int
    c_empirical: float
    frac_upper_D: float
    frac_upper_2D: float
    max_ratio: float
    mean_ratio: float


def fullbasis_check(d: int, pairs: int, rng) -> FullBasisReport:
    """Full d-outcome Haar-basis measurement: ``l1 / D`` over random pairs.

    Reports the worst lower constant ``c = min l1/D`` and how often the two
    upper bounds hold: ``l1 <= D`` as literally stated and ``l1 <= 2D``, the
    bound that follows from ``||rho - sigma||_1 = 2D``.
    """
    if d > FULL_BASIS_MAX_DIM:
        raise ArgumentError(f"full-basis oracle is capped at d <= {FULL_BASIS_MAX_DIM}")
    if pairs < 1:
        raise ArgumentError("pairs must be >= 1")
    n = d.bit_length() - 1
    if 2**n != d:
        raise ArgumentError("d must be a power of two")
    rng = make_rng(rng)
    ratios = np.empty(pairs)
    for t in range(pairs):
        a = random_haar_state(n, rng)
        b = random_haar_state(n, rng)
        u = haar_basis(d, rng)
        pa = np.abs(u.conj().T @ a.amplitudes) ** 2
        pb = np.abs(u.conj().T @ b.amplitudes) ** 2
        ratios[t] = np.abs(pa - pb).sum() / trace_distance(a, b)
    return FullBasisReport(
        d=d,
        trials=pairs,
        c_empirical=float(ratios.min()),
        frac_upper_D=float((ratios <= 1 + 1e-12).mean()),
        frac_upper_2D=float((ratios <= 2 + 1e-12).mean()),
        max_ratio=float(ratios.max()),
        mean_ratio=float(ratios.mean()),
    )


def state_at_distance(phi: PureState, dist: float, rng) -> PureState:
    """A state at trace distance exactly ``dist`` from ``phi``.

    Mixes ``phi`` with a Haar direction orthogonal to it:
    ``cos(t) phi + sin(t) chi`` has overlap ``cos(t)``, so ``D = sin(t)``.
    """
    if not 0 <= dist <= 1:
        raise ArgumentError("trace distance must lie in [0, 1]")
    rng = make_rng(rng)
    chi = random_haar_state(phi.num_qubits, rng).amplitudes
    chi = chi - np.vdot(phi.amplitudes, chi) * phi.amplitudes
    chi /= np.linalg.norm(chi)
    t = math.asin(dist)
    return PureState.from_amplitudes(math.cos(t) * phi.amplitudes + math.sin(t) * chi, normalize=True)
