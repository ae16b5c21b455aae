"""The state database and its approximate operations.

Records keep a sketch (for equality, search and join) and optionally a
shadow seed matrix (for selection and sorting).  Raw states are stored only
so that audits can compare against exact answers; no query path reads them.

Margins used by the shadow-based operations
-------------------------------------------
select estimates every expectation to +-eps/3 and keeps ids with
``est >= eta - eps/2``.  Then exact >= eta gives est >= eta - eps/3 (kept),
and exact <= eta - eps gives est <= eta - 2eps/3 (dropped).  Both hold for
all m records at once with probability 1 - 1/m when each estimate fails
with probability at most 1/m^2.

select_equality is select(eta - eps) minus select(eta + 2 eps), evaluated on
one set of estimates, i.e. ``eta - 1.5 eps <= est < eta + 1.5 eps``.

sort needs +-eps/2: if exact_i > exact_j + eps then est_i > est_j.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import formats, lsh, shadow
from .errors import ArgumentError, PreconditionError, ResourceError
from .measurement import SketchMeasurement, load_measurement, make_measurement, save_measurement
from .observable import K_MAX, LocalObservable, LocalTerm
from .sketch import (
    CTauCalibration,
    SketchVector,
    Verdict,
    build_sketch,
    equality_test as sketch_equality_test,
    estimate_distance,
    l1_scale,
    l2_scale,
    min_feasible_beta,
)
from .statevector import PureState, make_rng, substream

MANIFEST = "manifest.json"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class DatabaseConfig:
    """Everything needed to rebuild a database's derived data from its states.

    ``sketch_samples = 0`` keeps exact sketches; ``shadow_rows = 0`` skips
    seed matrices.  ``eps_hat_factor`` sets the sketch sampling error as a
    fraction of the query radius.
    """

    n: int
    k: int = 64
    flavor: str = "L2"
    mode: str = "clifford"
    measurement_seed: int = 0
    seed: int = 0
    iota: float = 0.01
    eps_hat_factor: float = 0.01
    sketch_samples: int = 0
    shadow_rows: int = 0
    shadow_mode: str = "cst"
    store_states: bool = True
    lsh_recall: float = 0.99

    def __post_init__(self):
        if self.flavor not in ("L1", "L2"):
            raise ArgumentError(f"flavor must be L1 or L2, got {self.flavor!r}")
        if self.shadow_mode not in shadow.MODES:
            raise ArgumentError(f"shadow mode must be one of {shadow.MODES}")
        if not 0 < self.lsh_recall < 1:
            raise ArgumentError("lsh_recall must lie in (0, 1)")


@dataclass
class StateRecord:
    id: int
    metadata: dict[str, str] = field(default_factory=dict)
    state: PureState | None = None
    sketch: SketchVector | None = None
    seed: shadow.SeedMatrix | None = None


@dataclass(frozen=True)
class SearchResult:
    id: int | None
    examined: int
    estimated_distance: float | None


@dataclass(frozen=True)
class SwapTestResult:
    verdict: Verdict
    accept_rate: float
    trials: int
    threshold: float
    consumes_fresh_copies: bool = True


class Database:
    """One writer (ingest, index rebuild) or many readers (queries)."""

    def __init__(
        self,
        config: DatabaseConfig,
        measurement: SketchMeasurement | None = None,
        calibration: CTauCalibration | None = None,
    ):
        self.config = config
        self.measurement = measurement or make_measurement(config.mode, config.n, config.k, config.measurement_seed)
        if (self.measurement.n, self.measurement.k) != (config.n, config.k):
            raise ArgumentError("measurement does not match the configured n and k")
        self.calibration = calibration or CTauCalibration.default(2**config.n, config.k)
        self.records: dict[int, StateRecord] = {}
        self._next_id = 0
        self._index: lsh.LshIndex | None = None
        self._index_radius: float | None = None

    # ---------------------------------------------------------------- ingest

    @property
    def n(self) -> int:
        return self.config.n

    @property
    def d(self) -> int:
        return 2**self.config.n

    def __len__(self):
        return len(self.records)

    def ids(self) -> list[int]:
        return sorted(self.records)

    def get(self, rid: int) -> StateRecord:
        try:
            return self.records[rid]
        except KeyError:
            raise ArgumentError(f"no record with id {rid}") from None

    def _check_state(self, state: PureState) -> None:
        if state.num_qubits != self.n:
            raise ArgumentError(f"state has {state.num_qubits} qubits, database holds {self.n}")

    def ingest(self, state: PureState, metadata: dict | None = None) -> int:
        return self.ingest_many([state], [metadata])[0]

    def ingest_many(self, states, metadata=None) -> list[int]:
        """Store states and build their sketches and seeds eagerly.

        Randomness for a record comes from substreams keyed by
        ``config.seed`` and a digest of the state itself, so results do not
        depend on batching and equal states get equal sketches and seeds
        (which makes ties in :meth:`sort` fall back to id order).
        """
        states = list(states)
        metadata = list(metadata) if metadata is not None else [None] * len(states)
        if len(metadata) != len(states):
            raise ArgumentError("metadata list length differs from states")
        for s in states:
            self._check_state(s)
        cfg = self.config
        ids = list(range(self._next_id, self._next_id + len(states)))
        for rid, st, meta in zip(ids, states, metadata):
            key = _state_key(st)
            # one state at a time: batched circuit sums can differ in the last bit
            sk = build_sketch(st, self.measurement, cfg.sketch_samples, substream(cfg.seed, key, 0), cfg.flavor)
            seed = shadow.build_seed_matrix(st, cfg.shadow_rows, substream(cfg.seed, key, 1)) if cfg.shadow_rows else None
            self.records[rid] = StateRecord(
                rid,
                {str(a): str(b) for a, b in (meta or {}).items()},
                st if cfg.store_states else None,
                sk,
                seed,
            )
        self._next_id += len(states)
        self._index = None
        return ids

    def attach_seeds(self, rows: int) -> None:
        """(Re)build seed matrices with ``rows`` rows from stored states."""
        for rid, rec in self.records.items():
            if rec.state is None:
                raise PreconditionError(f"record {rid} has no stored state to measure")
            rec.seed = shadow.build_seed_matrix(rec.state, rows, substream(self.config.seed, _state_key(rec.state), 1))
        self.config = replace(self.config, shadow_rows=rows)

    # ------------------------------------------------------------- sketches

    @property
    def scale(self) -> float:
        """Factor turning a raw sketch distance into a trace-distance estimate."""
        if self.config.flavor == "L1":
            return l1_scale(self.d, self.config.k, self.calibration.c_tau)
        return l2_scale(self.d)

    def query_sketch(self, q, rng=None) -> SketchVector:
        if isinstance(q, SketchVector):
            if q.measurement_id != self.measurement.measurement_id:
                raise ArgumentError("query sketch was built under a different measurement")
            return q
        self._check_state(q)
        samples = self.config.sketch_samples
        return build_sketch(q, self.measurement, samples, make_rng(rng), self.config.flavor)

    def estimate(self, a: SketchVector, b: SketchVector) -> float:
        return estimate_distance(a, b, self.calibration, self.config.iota, clamp=False)

    def _eps_hat(self, eps: float) -> float:
        return self.config.eps_hat_factor * eps

    def beta_nn(self, eps: float, beta: float) -> float:
        need = min_feasible_beta(self.config.iota, self._eps_hat(eps), eps)
        if beta <= need:
            raise ArgumentError(f"beta={beta} is infeasible; the minimum feasible beta is {need:.6g} (exclusive)")
        return beta / need

    def sketch_radius(self, eps: float) -> float:
        return (1 + self.config.iota) * eps / self.scale

    # ---------------------------------------------------------------- index

    def build_index(self, eps: float, beta: float, params: lsh.LshParams | None = None) -> lsh.LshIndex:
        """Batch (re)build of the LSH index for query radius ``eps``."""
        if eps <= 0:
            raise ArgumentError("eps must be positive")
        r = self.sketch_radius(eps)
        if params is None:
            family = "l1" if self.config.flavor == "L1" else "l2"
            params = lsh.suggest_params(
                max(2, len(self)), r, self.beta_nn(eps, beta), family, self.config.lsh_recall, self.config.seed
            )
        items = [(rid, rec.sketch.probs) for rid, rec in sorted(self.records.items())]
        self._index = lsh.build_index(items, params, dim=self.config.k)
        self._index_radius = eps
        return self._index

    def index_for(self, eps: float, beta: float) -> lsh.LshIndex:
        if self._index is None or self._index_radius != eps:
            self.build_index(eps, beta)
        return self._index

    @property
    def index(self) -> lsh.LshIndex | None:
        return self._index

    # ------------------------------------------------------------ operations

    def search_detail(self, q, eps: float, beta: float, rng=None, max_probes: int | None = None) -> SearchResult:
        bnn = self.beta_nn(eps, beta)
        sk = self.query_sketch(q, rng)
        index = self.index_for(eps, beta)
        rid, examined = lsh.ann_search(index, sk.probs, self.sketch_radius(eps), bnn, max_probes)
        est = None if rid is None else self.estimate(self.records[rid].sketch, sk)
        return SearchResult(rid, examined, est)

    def search(self, q, eps: float, beta: float, rng=None) -> int | None:
        """Some id within ``beta * eps`` of ``q`` (by sketch estimate), or None."""
        return self.search_detail(q, eps, beta, rng).id

    def join(self, other: "Database | None", eps: float, beta: float) -> set[tuple[int, int]]:
        """Pairs ``(id in self, id in other)`` with estimated distance below ``beta * eps``.

        ``other=None`` (or ``self``) is a self-join reporting each unordered
        pair once with the smaller id first.
        """
        bnn = self.beta_nn(eps, beta)
        index = self.index_for(eps, beta)
        r = self.sketch_radius(eps)
        if other is None or other is self:
            return lsh.join_pairs(index, None, r, bnn)
        if other.measurement.measurement_id != self.measurement.measurement_id:
            raise ArgumentError("join needs both databases to share one measurement")
        items = [(rid, rec.sketch.probs) for rid, rec in sorted(other.records.items())]
        return lsh.join_pairs(index, items, r, bnn)

    def equality_test(self, a: int, b: int, eps: float, beta: float) -> Verdict:
        ra, rb = self.get(a), self.get(b)
        return sketch_equality_test(ra.sketch, rb.sketch, eps, beta, self.calibration, self.config.iota, self._eps_hat(eps))

    # -- shadow-based

    def shadow_rows_needed(self, obs: LocalObservable, tolerance: float) -> int:
        m = max(2, len(self))
        return shadow.required_samples(obs.locality, obs.inf_norm, tolerance, 1 / m**2, self.config.shadow_mode)

    def _estimates(self, obs: LocalObservable, tolerance: float, rng=None) -> dict[int, float]:
        need = self.shadow_rows_needed(obs, tolerance)
        short = [rid for rid, rec in sorted(self.records.items()) if rec.seed is None or rec.seed.N < need]
        if short:
            shown = ", ".join(map(str, short[:20])) + (" ..." if len(short) > 20 else "")
            raise PreconditionError(f"seed matrices need N >= {need}; deficient ids: {shown}")
        base = int(make_rng(rng).integers(2**63))
        return {
            rid: shadow.estimate(rec.seed, obs, self.config.shadow_mode, substream(base, _digest(rec.seed.packed))).value
            for rid, rec in sorted(self.records.items())
        }

    def select(self, obs: LocalObservable, eta: float, eps: float, rng=None) -> set[int]:
        est = self._estimates(obs, eps / 3, rng)
        return {rid for rid, v in est.items() if v >= eta - eps / 2}

    def select_equality(self, obs: LocalObservable, eta: float, eps: float, rng=None) -> set[int]:
        est = self._estimates(obs, eps / 3, rng)
        return {rid for rid, v in est.items() if eta - 1.5 * eps <= v < eta + 1.5 * eps}

    def sort(self, obs: LocalObservable, eps: float, rng=None) -> list[int]:
        est = self._estimates(obs, eps / 2, rng)
        return sorted(est, key=lambda rid: (est[rid], rid))

    def search_via_selection(self, q: PureState, eps: float, beta: float, rng=None) -> int | None:
        """Reference search through the rank-one observable ``q q^dagger``.

        Slow (cost grows like 9^n or 4^n in the seed size); kept as a
        cross-check for :meth:`search`.  Returns the id with the smallest
        estimated distance if that estimate is within ``beta * eps``.
        """
        self._check_state(q)
        obs = rank_one_observable(q)
        base = int(make_rng(rng).integers(2**63))
        best, best_d = None, math.inf
        for rid, rec in sorted(self.records.items()):
            if rec.seed is None:
                raise PreconditionError(f"record {rid} has no seed matrix")
            val = shadow.estimate(rec.seed, obs, self.config.shadow_mode, substream(base, _digest(rec.seed.packed))).value
            dist = math.sqrt(max(0.0, 1.0 - val))
            if dist < best_d:
                best, best_d = rid, dist
        return best if best_d <= beta * eps else None

    # ---------------------------------------------------------- persistence

    def save(self, directory) -> None:
        root = Path(directory)
        for sub in ("states", "sketches", "seeds"):
            (root / sub).mkdir(parents=True, exist_ok=True)
        save_measurement(self.measurement, root / "measurement.json")
        records = []
        for rid, rec in sorted(self.records.items()):
            entry = {"id": rid, "metadata": rec.metadata}
            if rec.state is not None:
                formats.save_state(rec.state, root / "states" / f"{rid}.qds")
                entry["state"] = f"states/{rid}.qds"
            if rec.sketch is not None:
                formats.save_sketch(rec.sketch, root / "sketches" / f"{rid}.qsk")
                entry["sketch"] = f"sketches/{rid}.qsk"
            if rec.seed is not None:
                shadow.save_seed(rec.seed, root / "seeds" / f"{rid}.qsh")
                entry["seed"] = f"seeds/{rid}.qsh"
            records.append(entry)
        manifest = {
            "format_version": FORMAT_VERSION,
            "n": self.n,
            "measurement_id": list(self.measurement.measurement_id),
            "calibration": asdict(self.calibration),
            "config": asdict(self.config),
            "next_id": self._next_id,
            "index": None,
            "records": records,
        }
        if self._index is not None:
            lsh.save_index(self._index, root / "index.qli")
            manifest["index"] = {"path": "index.qli", "eps": self._index_radius}
        (root / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True))

    @classmethod
    def load(cls, directory) -> "Database":
        root = Path(directory)
        try:
            manifest = json.loads((root / MANIFEST).read_text())
        except FileNotFoundError:
            raise ArgumentError(f"{root} is not a database directory (no {MANIFEST})") from None
        if manifest.get("format_version") != FORMAT_VERSION:
            raise ArgumentError(f"unsupported database format {manifest.get('format_version')}")
        config = DatabaseConfig(**manifest["config"])
        cal = manifest["calibration"]
        db = cls(config, load_measurement(root / "measurement.json"), CTauCalibration(**cal))
        for entry in manifest["records"]:
            rid = int(entry["id"])
            db.records[rid] = StateRecord(
                rid,
                dict(entry["metadata"]),
                formats.load_state(root / entry["state"]) if "state" in entry else None,
                formats.load_sketch(root / entry["sketch"]) if "sketch" in entry else None,
                shadow.load_seed(root / entry["seed"]) if "seed" in entry else None,
            )
        db._next_id = int(manifest["next_id"])
        if manifest.get("index"):
            db._index = lsh.load_index(root / manifest["index"]["path"])
            db._index_radius = manifest["index"]["eps"]
        return db


def _digest(data: bytes) -> int:
    return int.from_bytes(hashlib.sha256(data).digest()[:8], "little") >> 1


def _state_key(state: PureState) -> int:
    """63-bit digest of the amplitudes, used to key per-record randomness."""
    return _digest(state.amplitudes.tobytes())


def rank_one_observable(q: PureState, k_max: int | None = None) -> LocalObservable:
    """``M = q q^dagger`` on the full register."""
    cap = K_MAX if k_max is None else k_max
    if q.num_qubits > cap:
        raise ResourceError(
            f"rank-one observable on {q.num_qubits} qubits exceeds k_max={cap}; use sketch search instead"
        )
    mat = np.outer(q.amplitudes, q.amplitudes.conj())
    return LocalObservable((LocalTerm(tuple(range(q.num_qubits)), mat),), cap)


def swap_test_trials(eps: float, beta: float, delta: float) -> int:
    """Bernstein-bound trial count separating the near and far acceptance rates."""
    if eps <= 0 or beta <= 1 or not 0 < delta < 1:
        raise ArgumentError("need eps > 0, beta > 1 and delta in (0, 1)")
    p_far = max(0.5, 1 - (beta * eps) ** 2 / 2)
    p_near = 1 - eps**2 / 2
    h = (p_near - p_far) / 2
    var = p_far * (1 - p_far)
    return max(1, math.ceil(math.log(1 / delta) * (2 * var + 2 * h / 3) / h**2))


def swap_test_equality(
    a: PureState,
    b: PureState,
    eps: float,
    beta: float,
    delta: float = 0.01,
    rng=None,
    trials: int | None = None,
) -> SwapTestResult:
    """Swap-test baseline: accept with probability ``1 - D^2/2`` per trial.

    Every trial uses up one fresh copy of each state.
    """
    if a.num_qubits != b.num_qubits:
        raise ArgumentError("states differ in qubit count")
    if trials is None:
        trials = swap_test_trials(eps, beta, delta)
    if trials < 1:
        raise ArgumentError("trials must be >= 1")
    fid = abs(np.vdot(a.amplitudes, b.amplitudes)) ** 2
    p = min(1.0, (1 + fid) / 2)
    accepts = int(make_rng(rng).binomial(trials, p))
    rate = accepts / trials
    p_far = max(0.5, 1 - (beta * eps) ** 2 / 2)
    threshold = (1 - eps**2 / 2 + p_far) / 2
    verdict = Verdict.EQUAL if rate >= threshold else Verdict.NOT_EQUAL
    return SwapTestResult(verdict, rate, trials, threshold)
