"""Vector sketches and sketch-based trace-distance estimates.

A sketch is the k-outcome distribution of a shared random measurement.
Distances between sketches, rescaled, estimate the trace distance:

    D ~ sqrt(d/k) * c_tau * ||p - q||_1        (L1 flavour)
    D ~ sqrt(d/2) * ||p - q||_2                 (L2 flavour)

``c_tau`` is not given in closed form.  In the large-d limit each bin
difference is Gaussian and ``c_tau -> 1/E|N(0, 2)| = sqrt(pi)/2``;
:func:`calibrate_c_tau` measures it for a concrete ``(d, k)``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError
from .measurement import SketchMeasurement, clifford_measurement, outcome_probabilities
from .statevector import PureState, make_rng, random_haar_state, trace_distance

C_TAU_DEFAULT = math.sqrt(math.pi) / 2
C_TAU_BAND = (0.4, 2.5)
DEFAULT_C_DESIGN = 1.0
DEFAULT_C_SAMPLES = 4.0

FLAVORS = ("L1", "L2")


class Verdict(str, enum.Enum):
    EQUAL = "equal"
    NOT_EQUAL = "not_equal"


@dataclass(frozen=True, eq=False)
class SketchVector:
    k: int
    d: int
    flavor: str
    probs: np.ndarray = field(repr=False)
    measurement_id: tuple
    samples: int = 0

    def __post_init__(self):
        if self.flavor not in FLAVORS:
            raise ArgumentError(f"flavor must be one of {FLAVORS}, got {self.flavor!r}")
        probs = np.array(self.probs, dtype=np.float64).reshape(-1)
        if probs.size != self.k:
            raise ArgumentError(f"expected {self.k} probabilities, got {probs.size}")
        if (probs < 0).any() or abs(probs.sum() - 1.0) > 1e-9:
            raise ArgumentError("sketch probabilities must be nonnegative and sum to 1")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "measurement_id", tuple(self.measurement_id))

    @property
    def exact(self) -> bool:
        return self.samples == 0

    def __eq__(self, other):
        if not isinstance(other, SketchVector):
            return NotImplemented
        return (
            (self.k, self.d, self.flavor, self.measurement_id, self.samples)
            == (other.k, other.d, other.flavor, other.measurement_id, other.samples)
            and np.array_equal(self.probs, other.probs)
        )


@dataclass(frozen=True)
class SketchParams:
    """Accuracy knobs and the sizes they imply.

    ``samples = 0`` requests exact sketches.
    """

    iota: float = 0.1
    delta: float = 0.01
    c_design: float = DEFAULT_C_DESIGN
    samples: int = 0
    eps_hat: float = 0.01
    c_samples: float = DEFAULT_C_SAMPLES

    def __post_init__(self):
        if self.iota <= 0:
            raise ArgumentError("iota must be positive")
        if not 0 < self.delta < 1:
            raise ArgumentError("delta must lie in (0, 1)")
        if self.eps_hat <= 0:
            raise ArgumentError("eps_hat must be positive")

    @property
    def k(self) -> int:
        raw = math.ceil(self.c_design * math.log(1 / self.delta) / self.iota**2)
        return max(2, 1 << max(0, raw - 1).bit_length())

    def samples_single(self, d: int) -> int:
        """Copies per state without the log(1/delta) factor."""
        return math.ceil(self.c_samples * d / self.eps_hat**2)

    def samples_logged(self, d: int) -> int:
        return math.ceil(self.c_samples * d * math.log(1 / self.delta) / self.eps_hat**2)

    def default_samples(self, d: int) -> int:
        return max(self.samples_single(d), self.samples_logged(d))


def build_sketch(
    state: PureState,
    m: SketchMeasurement,
    samples: int | None = 0,
    rng=None,
    flavor: str = "L2",
    exact: bool | None = None,
) -> SketchVector:
    """Sketch ``state`` under ``m``.

    ``samples=0`` (or ``exact=True``) returns the exact outcome distribution;
    otherwise ``samples`` independent sketch measurements are drawn and the
    normalised counts returned.
    """
    if state.num_qubits != m.n:
        raise ArgumentError(f"state has {state.num_qubits} qubits, measurement expects {m.n}")
    if exact is None:
        exact = samples == 0
    if exact:
        probs = outcome_probabilities(state.amplitudes, m)
        return SketchVector(m.k, m.d, flavor, probs, m.measurement_id, 0)
    if samples is None or samples < 1:
        raise ArgumentError("empirical sketches need samples >= 1 (or pass exact=True)")
    rng = make_rng(rng)
    # multinomial over the exact bin law == `samples` independent draws
    counts = rng.multinomial(samples, outcome_probabilities(state.amplitudes, m))
    return SketchVector(m.k, m.d, flavor, counts / samples, m.measurement_id, samples)


def build_sketches(states, m: SketchMeasurement, samples: int = 0, rng=None, flavor: str = "L2"):
    """Batch version of :func:`build_sketch` sharing one circuit evaluation."""
    states = list(states)
    if not states:
        return []
    amps = np.stack([s.amplitudes for s in states])
    if amps.shape[1] != m.d:
        raise ArgumentError("state dimension does not match the measurement")
    probs = outcome_probabilities(amps, m)
    if samples == 0:
        return [SketchVector(m.k, m.d, flavor, p, m.measurement_id, 0) for p in probs]
    rng = make_rng(rng)
    return [
        SketchVector(m.k, m.d, flavor, rng.multinomial(samples, p) / samples, m.measurement_id, samples)
        for p in probs
    ]


# --------------------------------------------------------------------------
# c_tau calibration


@dataclass(frozen=True)
class CTauCalibration:
    d: int
    k: int
    c_tau: float
    trials: int
    ci_halfwidth: float
    mean_ratio: float = float("nan")

    def __post_init__(self):
        lo, hi = C_TAU_BAND
        if not lo < self.c_tau < hi:
            raise ArgumentError(f"c_tau={self.c_tau} outside sanity band {C_TAU_BAND}")

    @classmethod
    def default(cls, d: int, k: int) -> "CTauCalibration":
        return cls(d, k, C_TAU_DEFAULT, 0, float("nan"), 1 / C_TAU_DEFAULT)


_CALIBRATION_CACHE: dict[tuple[int, int], CTauCalibration] = {}


def l1_ratios(d: int, k: int, trials: int, rng, min_distance: float = 0.05) -> np.ndarray:
    """``sqrt(d/k) * ||p - q||_1 / D`` for random Haar pairs and measurements."""
    n = d.bit_length() - 1
    rng = make_rng(rng)
    out = np.empty(trials)
    for t in range(trials):
        while True:
            a = random_haar_state(n, rng)
            b = random_haar_state(n, rng)
            dist = trace_distance(a, b)
            if dist >= min_distance:
                break
        m = clifford_measurement(n, k, rng=rng)
        p = outcome_probabilities(np.stack([a.amplitudes, b.amplitudes]), m)
        out[t] = math.sqrt(d / k) * np.abs(p[0] - p[1]).sum() / dist
    return out


def calibrate_c_tau(d: int, k: int, trials: int, rng, use_cache: bool = False) -> CTauCalibration:
    if trials < 100:
        raise ArgumentError("calibration needs trials >= 100")
    if use_cache and (d, k) in _CALIBRATION_CACHE:
        return _CALIBRATION_CACHE[(d, k)]
    r = l1_ratios(d, k, trials, rng)
    mean = float(r.mean())
    # delta method: c = 1/mean  =>  se(c) = se(mean) / mean^2
    half = 1.96 * float(r.std(ddof=1)) / math.sqrt(trials) / mean**2
    cal = CTauCalibration(d, k, 1.0 / mean, trials, half, mean)
    if use_cache:
        _CALIBRATION_CACHE[(d, k)] = cal
    return cal


# --------------------------------------------------------------------------
# distance estimates


def _check_comparable(a: SketchVector, b: SketchVector) -> None:
    if a.measurement_id != b.measurement_id:
        raise ArgumentError(
            f"sketches come from different measurements ({a.measurement_id} vs {b.measurement_id})"
        )
    if a.k != b.k or a.d != b.d:
        raise ArgumentError("sketch shapes differ")


def l1_scale(d: int, k: int, c_tau: float) -> float:
    return math.sqrt(d / k) * c_tau


def l2_scale(d: int) -> float:
    return math.sqrt(d / 2)


def estimate_D_l1(
    a: SketchVector, b: SketchVector, cal: CTauCalibration, iota: float = 0.01, clamp: bool = True
) -> float:
    _check_comparable(a, b)
    est = l1_scale(a.d, a.k, cal.c_tau) * float(np.abs(a.probs - b.probs).sum())
    return min(est, 1.0 + iota) if clamp else est


def estimate_D_l2(a: SketchVector, b: SketchVector, iota: float = 0.01, clamp: bool = True) -> float:
    _check_comparable(a, b)
    est = l2_scale(a.d) * float(np.linalg.norm(a.probs - b.probs))
    return min(est, 1.0 + iota) if clamp else est


def estimate_distance(
    a: SketchVector, b: SketchVector, cal: CTauCalibration | None = None, iota: float = 0.01, clamp: bool = True
) -> float:
    """Dispatch on the sketches' flavour."""
    if a.flavor != b.flavor:
        raise ArgumentError("sketch flavours differ")
    if a.flavor == "L1":
        if cal is None:
            cal = CTauCalibration.default(a.d, a.k)
        return estimate_D_l1(a, b, cal, iota, clamp)
    return estimate_D_l2(a, b, iota, clamp)


def min_feasible_beta(iota: float, eps_hat: float, eps: float) -> float:
    return 1.0 + iota + eps_hat / eps


def equality_test(
    a: SketchVector,
    b: SketchVector,
    eps: float,
    beta: float,
    cal: CTauCalibration | None = None,
    iota: float = 0.01,
    eps_hat: float | None = None,
) -> Verdict:
    """Decide ``D <= eps`` versus ``D >= beta*eps`` from two sketches.

    The threshold sits halfway through the promise gap, at
    ``(1 + beta) * eps / 2``.
    """
    if eps <= 0:
        raise ArgumentError("eps must be positive")
    if eps_hat is None:
        eps_hat = 0.01 * eps
    need = min_feasible_beta(iota, eps_hat, eps)
    if beta <= need:
        raise ArgumentError(f"beta={beta} is infeasible; it must exceed {need:.6g}")
    est = estimate_distance(a, b, cal, iota)
    return Verdict.EQUAL if est <= (1 + beta) * eps / 2 else Verdict.NOT_EQUAL
