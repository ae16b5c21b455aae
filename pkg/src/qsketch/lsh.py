"""p-stable locality-sensitive hashing for l1 / l2 vectors.

Each hash is ``floor((a . v + b) / w)`` with ``a`` drawn from a Cauchy (l1)
or Gaussian (l2) law and ``b ~ U[0, w)``.  A table keys points by the tuple
of ``t`` such hashes; ``L`` independent tables are kept.  Every candidate is
checked against the exact distance before it is reported, so soundness
never depends on hashing luck.
"""
from __future__ import annotations

import io
import json
import math
import struct
from collections import defaultdict
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.stats import norm

from .errors import ArgumentError, FormatError

FAMILIES = ("l1", "l2")
_MAGIC = b"QLI1"
_VERSION = 1


@dataclass(frozen=True)
class LshParams:
    family: str
    tables: int
    functions_per_table: int
    bucket_width: float
    seed: int
    max_probes: int | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ArgumentError(f"family must be one of {FAMILIES}")
        if self.tables < 1 or self.functions_per_table < 1:
            raise ArgumentError("tables and functions_per_table must be >= 1")
        if not self.bucket_width > 0:
            raise ArgumentError("bucket_width must be positive")


def collision_probability(dist: float, w: float, family: str) -> float:
    """Probability that one p-stable hash puts two points ``dist`` apart together."""
    if dist <= 0:
        return 1.0
    c = dist / w
    if family == "l2":
        return float(
            1 - 2 * norm.cdf(-1 / c) - 2 * c / math.sqrt(2 * math.pi) * (1 - math.exp(-1 / (2 * c * c)))
        )
    return float(2 * math.atan(1 / c) / math.pi - c / math.pi * math.log1p(1 / (c * c)))


def suggest_params(
    m: int,
    r: float,
    beta: float,
    family: str = "l2",
    recall: float = 0.9,
    seed: int = 0,
    width_factor: float = 4.0,
    max_tables: int = 256,
) -> LshParams:
    """Pick ``(L, t)`` so a point at distance ``r`` is found with prob ``recall``.

    ``t`` drives the far-point collision rate ``p(beta r)^t`` down to about
    ``1/m``; ``L`` then restores the near-point recall.
    """
    w = width_factor * r
    p1 = collision_probability(r, w, family)
    p2 = collision_probability(beta * r, w, family)
    t = 1 if m <= 1 else max(1, math.ceil(math.log(m) / math.log(1 / p2)))
    tables = math.ceil(math.log(1 - recall) / math.log(1 - p1**t))
    return LshParams(family, min(max(tables, 1), max_tables), t, w, seed)


def _distance(family: str, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a - b
    if family == "l1":
        return np.abs(diff).sum(-1)
    return np.sqrt((diff * diff).sum(-1))


class LshIndex:
    """Immutable after construction; queries only read."""

    def __init__(self, params: LshParams, ids, vectors: np.ndarray, proj: np.ndarray, offsets: np.ndarray, tables):
        self.params = params
        self.ids = list(ids)
        self.vectors = vectors
        self.proj = proj
        self.offsets = offsets
        self.tables = tables

    @property
    def dim(self) -> int:
        return self.proj.shape[0]

    def __len__(self):
        return len(self.ids)

    def _keys(self, vecs: np.ndarray) -> np.ndarray:
        """Integer bucket coordinates, shape (points, L, t)."""
        h = np.floor((vecs @ self.proj + self.offsets) / self.params.bucket_width).astype(np.int64)
        return h.reshape(len(vecs), self.params.tables, self.params.functions_per_table)

    def expected_bucket_size(self) -> float:
        if not self.ids:
            return 0.0
        sizes = [len(b) for tab in self.tables for b in tab.values()]
        return float(np.mean(sizes))

    def default_max_probes(self) -> int:
        if self.params.max_probes is not None:
            return self.params.max_probes
        return max(1, math.ceil(3 * self.params.tables * self.expected_bucket_size()))

    def candidates(self, q: np.ndarray):
        """Stored positions sharing a bucket with ``q``, each yielded once."""
        keys = self._keys(q[None, :])[0]
        seen = set()
        for tab, key in zip(self.tables, keys):
            for pos in tab.get(key.tobytes(), ()):
                if pos not in seen:
                    seen.add(pos)
                    yield pos

    def _check_dim(self, q: np.ndarray) -> np.ndarray:
        q = np.asarray(q, dtype=np.float64).reshape(-1)
        if q.size != self.dim:
            raise ArgumentError(f"query has dimension {q.size}, index has {self.dim}")
        return q


def build_index(vectors, params: LshParams, dim: int | None = None) -> LshIndex:
    """Index ``(id, vector)`` pairs; deterministic given ``params.seed``."""
    items = list(vectors)
    ids = [int(i) for i, _ in items]
    if len(set(ids)) != len(ids):
        raise ArgumentError("duplicate ids in index input")
    if items:
        dims = {np.asarray(v).size for _, v in items}
        if len(dims) != 1:
            raise ArgumentError(f"mixed vector dimensions {sorted(dims)}")
        dim = dims.pop()
        mat = np.array([np.asarray(v, dtype=np.float64).reshape(-1) for _, v in items])
    else:
        dim = dim or 0
        mat = np.zeros((0, dim))
    rng = np.random.default_rng(params.seed)
    nfun = params.tables * params.functions_per_table
    if params.family == "l1":
        proj = rng.standard_cauchy((dim, nfun))
    else:
        proj = rng.standard_normal((dim, nfun))
    offsets = rng.uniform(0, params.bucket_width, nfun)
    index = LshIndex(params, ids, mat, proj, offsets, [])
    tables = [defaultdict(list) for _ in range(params.tables)]
    if len(mat):
        keys = index._keys(mat)
        for pos in range(len(mat)):
            for tab, key in zip(tables, keys[pos]):
                tab[key.tobytes()].append(pos)
    index.tables = [dict(t) for t in tables]
    return index


def ann_search(index: LshIndex, q, r: float, beta: float, max_probes: int | None = None):
    """Return ``(id or None, candidates_examined)``."""
    if beta <= 1:
        raise ArgumentError("beta must exceed 1")
    q = index._check_dim(q)
    limit = index.default_max_probes() if max_probes is None else max_probes
    examined = 0
    for pos in index.candidates(q):
        if examined >= limit:
            break
        examined += 1
        if _distance(index.params.family, index.vectors[pos], q) <= beta * r:
            return index.ids[pos], examined
    return None, examined


def ann_query(index: LshIndex, q, r: float, beta: float, max_probes: int | None = None):
    return ann_search(index, q, r, beta, max_probes)[0]


def range_query_all(index: LshIndex, q, r: float, beta: float) -> set[int]:
    """Every colliding id whose verified distance is below ``beta * r``."""
    if beta <= 1:
        raise ArgumentError("beta must exceed 1")
    q = index._check_dim(q)
    pos = np.fromiter(index.candidates(q), dtype=np.int64)
    if not len(pos):
        return set()
    dist = _distance(index.params.family, index.vectors[pos], q)
    return {index.ids[p] for p in pos[dist < beta * r]}


def join_pairs(index_a: LshIndex, vectors_b=None, r: float = 0.0, beta: float = 2.0) -> set[tuple[int, int]]:
    """Pairs ``(id_a, id_b)`` at verified distance below ``beta * r``.

    With ``vectors_b=None`` the index is joined with itself and each
    unordered pair is reported once as ``(smaller id, larger id)``.
    """
    out: set[tuple[int, int]] = set()
    if vectors_b is None:
        for pos, ida in enumerate(index_a.ids):
            for idb in range_query_all(index_a, index_a.vectors[pos], r, beta):
                if ida < idb:
                    out.add((ida, idb))
        return out
    for idb, vec in vectors_b:
        for ida in range_query_all(index_a, vec, r, beta):
            out.add((ida, int(idb)))
    return out


# --------------------------------------------------------------------------
# persistence


def save_index(index: LshIndex, path) -> None:
    """Binary dump: header, JSON params, ids, vectors, hash functions, tables."""
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(struct.pack("<B", _VERSION))
    meta = json.dumps(asdict(index.params)).encode()
    buf.write(struct.pack("<I", len(meta)))
    buf.write(meta)
    m, dim = len(index.ids), index.dim
    buf.write(struct.pack("<QQ", m, dim))
    buf.write(np.asarray(index.ids, dtype="<i8").tobytes())
    buf.write(np.ascontiguousarray(index.vectors, dtype="<f8").tobytes())
    buf.write(np.ascontiguousarray(index.proj, dtype="<f8").tobytes())
    buf.write(np.ascontiguousarray(index.offsets, dtype="<f8").tobytes())
    for tab in index.tables:
        buf.write(struct.pack("<Q", len(tab)))
        for key, members in tab.items():
            buf.write(np.frombuffer(key, dtype=np.int64).astype("<i8").tobytes())
            buf.write(struct.pack("<I", len(members)))
            buf.write(np.asarray(members, dtype="<u4").tobytes())
    Path(path).write_bytes(buf.getvalue())


def load_index(path) -> LshIndex:
    data = Path(path).read_bytes()
    if data[:4] != _MAGIC:
        raise FormatError(f"{path}: not an LSH index file")
    if data[4] != _VERSION:
        raise FormatError(f"{path}: unsupported index version {data[4]}")
    off = 5
    (mlen,) = struct.unpack_from("<I", data, off)
    off += 4
    params = LshParams(**json.loads(data[off : off + mlen]))
    off += mlen
    m, dim = struct.unpack_from("<QQ", data, off)
    off += 16

    def take(count, dtype):
        nonlocal off
        arr = np.frombuffer(data, dtype=dtype, count=count, offset=off)
        off += arr.nbytes
        return arr

    nfun = params.tables * params.functions_per_table
    ids = take(m, "<i8").tolist()
    vectors = take(m * dim, "<f8").reshape(m, dim).copy()
    proj = take(dim * nfun, "<f8").reshape(dim, nfun).copy()
    offsets = take(nfun, "<f8").copy()
    tables = []
    for _ in range(params.tables):
        (nb,) = struct.unpack_from("<Q", data, off)
        off += 8
        tab = {}
        for _ in range(nb):
            key = take(params.functions_per_table, "<i8").astype(np.int64).tobytes()
            (cnt,) = struct.unpack_from("<I", data, off)
            off += 4
            tab[key] = take(cnt, "<u4").astype(int).tolist()
        tables.append(tab)
    return LshIndex(params, ids, vectors, proj, offsets, tables)
