"""Binary state and sketch files.

Every file starts with a 4-byte magic and a version byte; all numbers are
little-endian.  Readers reject unknown magics and versions outright.

state  (QDS1): magic, u8 version, u8 n, 2^n x (f64 re, f64 im)
sketch (QSK1): magic, u8 version, u8 flavor (0 = L1, 1 = L2), u32 k, u64 d,
               u64 samples, u32 len + JSON measurement id, k x f64
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .sketch import FLAVORS, SketchVector
from .statevector import PureState

STATE_MAGIC = b"QDS1"
SKETCH_MAGIC = b"QSK1"
VERSION = 1


def _check_header(data: bytes, magic: bytes, what: str) -> None:
    if len(data) < 5 or data[:4] != magic:
        raise FormatError(f"not a {what} file (bad magic)")
    if data[4] != VERSION:
        raise FormatError(f"unsupported {what} file version {data[4]}")


def state_to_bytes(state: PureState) -> bytes:
    body = np.empty(2 * state.dim, dtype="<f8")
    body[0::2] = state.amplitudes.real
    body[1::2] = state.amplitudes.imag
    return STATE_MAGIC + struct.pack("<BB", VERSION, state.num_qubits) + body.tobytes()


def state_from_bytes(data: bytes) -> PureState:
    _check_header(data, STATE_MAGIC, "state")
    n = data[5]
    body = np.frombuffer(data, dtype="<f8", offset=6)
    if body.size != 2 * 2**n:
        raise FormatError(f"state file holds {body.size // 2} amplitudes, expected {2 ** n}")
    return PureState(n, body[0::2] + 1j * body[1::2])


def save_state(state: PureState, path) -> None:
    Path(path).write_bytes(state_to_bytes(state))


def load_state(path) -> PureState:
    return state_from_bytes(Path(path).read_bytes())


def sketch_to_bytes(sk: SketchVector) -> bytes:
    mid = json.dumps(list(sk.measurement_id)).encode()
    head = struct.pack("<BBIQQI", VERSION, FLAVORS.index(sk.flavor), sk.k, sk.d, sk.samples, len(mid))
    return SKETCH_MAGIC + head + mid + np.asarray(sk.probs, dtype="<f8").tobytes()


def sketch_from_bytes(data: bytes) -> SketchVector:
    _check_header(data, SKETCH_MAGIC, "sketch")
    try:
        _, flavor, k, d, samples, mlen = struct.unpack_from("<BBIQQI", data, 4)
    except struct.error as exc:
        raise FormatError("truncated sketch header") from exc
    off = 4 + struct.calcsize("<BBIQQI")
    mid = tuple(json.loads(data[off : off + mlen]))
    probs = np.frombuffer(data, dtype="<f8", offset=off + mlen)
    if probs.size != k:
        raise FormatError(f"sketch file holds {probs.size} probabilities, expected {k}")
    if flavor >= len(FLAVORS):
        raise FormatError(f"unknown sketch flavor byte {flavor}")
    return SketchVector(k, d, FLAVORS[flavor], probs, mid, samples)


def save_sketch(sk: SketchVector, path) -> None:
    Path(path).write_bytes(sketch_to_bytes(sk))


def load_sketch(path) -> SketchVector:
    return sketch_from_bytes(Path(path).read_bytes())
