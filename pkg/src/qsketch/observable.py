"""k-local observables: sums of Hermitian terms on small qubit subsets."""
from __future__ import annotations

import re
import warnings
from dataclasses import dataclass, field
from functools import cached_property, reduce
from pathlib import Path

import numpy as np

from .errors import ArgumentError, FormatError, ResourceError
from .statevector import GATE_MATRICES, PureState

K_MAX = 8
TERM_WARN = 64
HERMITIAN_TOL = 1e-12

_PAULI = {c: GATE_MATRICES[c] for c in "IXYZ"}
_FACTOR = re.compile(r"^([IXYZ])(\d+)$")


@dataclass(frozen=True, eq=False)
class LocalTerm:
    """A Hermitian matrix acting on ``support`` (qubit 0 of the support is the
    most significant tensor factor)."""

    support: tuple[int, ...]
    matrix: np.ndarray = field(repr=False)

    def __post_init__(self):
        support = tuple(int(q) for q in self.support)
        mat = np.array(self.matrix, dtype=np.complex128)
        if len(set(support)) != len(support):
            raise ArgumentError(f"repeated qubit in support {support}")
        if any(q < 0 for q in support):
            raise ArgumentError("qubit indices must be nonnegative")
        dim = 2 ** len(support)
        if mat.shape != (dim, dim):
            raise ArgumentError(f"term on {len(support)} qubits needs a {dim}x{dim} matrix")
        if not np.allclose(mat, mat.conj().T, atol=HERMITIAN_TOL, rtol=0):
            raise ArgumentError("term matrix is not Hermitian")
        order = np.argsort(support)
        if list(order) != list(range(len(support))):
            mat = _permute_operator(mat, list(order))
            support = tuple(support[i] for i in order)
        mat.setflags(write=False)
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "matrix", mat)

    @classmethod
    def pauli(cls, coeff: float, factors: dict[int, str]) -> "LocalTerm":
        factors = {q: p for q, p in factors.items() if p != "I"}
        support = tuple(sorted(factors))
        mat = reduce(np.kron, [_PAULI[factors[q]] for q in support], np.eye(1, dtype=complex))
        return cls(support, float(coeff) * mat)

    @classmethod
    def identity(cls, coeff: float) -> "LocalTerm":
        return cls((), np.array([[coeff]], dtype=complex))


def _permute_operator(mat: np.ndarray, order: list[int]) -> np.ndarray:
    """Reorder tensor factors: new factor ``i`` is old factor ``order[i]``."""
    k = len(order)
    t = mat.reshape([2] * (2 * k))
    t = t.transpose(order + [k + o for o in order])
    return t.reshape(2**k, 2**k)


def _embed(term: LocalTerm, support: tuple[int, ...]) -> np.ndarray:
    """Dense matrix of ``term`` tensored with identity on ``support``."""
    k = len(support)
    rest = [q for q in support if q not in term.support]
    full = np.kron(term.matrix, np.eye(2 ** len(rest)))
    current = list(term.support) + rest
    return _permute_operator(full, [current.index(q) for q in support]) if k else full


@dataclass(frozen=True, eq=False)
class LocalObservable:
    terms: tuple[LocalTerm, ...]
    k_max: int = K_MAX

    def __post_init__(self):
        terms = tuple(self.terms)
        if not terms:
            raise ArgumentError("an observable needs at least one term")
        if len(terms) > TERM_WARN:
            warnings.warn(f"observable has {len(terms)} terms; dense evaluation may be slow", stacklevel=2)
        object.__setattr__(self, "terms", terms)

    @property
    def support(self) -> tuple[int, ...]:
        return tuple(sorted({q for t in self.terms for q in t.support}))

    @property
    def locality(self) -> int:
        return len(self.support)

    def _check_cap(self) -> None:
        if self.locality > self.k_max:
            raise ResourceError(f"observable acts on {self.locality} qubits, above k_max={self.k_max}")

    @cached_property
    def dense(self) -> np.ndarray:
        """Matrix on the union support (2^k x 2^k)."""
        self._check_cap()
        support = self.support
        return sum(_embed(t, support) for t in self.terms)

    @cached_property
    def _eig(self) -> tuple[np.ndarray, np.ndarray]:
        vals, vecs = np.linalg.eigh(self.dense)
        return vals, vecs

    @cached_property
    def inf_norm(self) -> float:
        return float(np.abs(self._eig[0]).max())

    def __neg__(self):
        return LocalObservable(tuple(LocalTerm(t.support, -t.matrix) for t in self.terms), self.k_max)

    def __add__(self, other: "LocalObservable"):
        return LocalObservable(self.terms + other.terms, max(self.k_max, other.k_max))

    @classmethod
    def parse(cls, text: str, base: Path | None = None) -> "LocalObservable":
        return parse_observable(text, base)

    @classmethod
    def from_dense(cls, support, matrix) -> "LocalObservable":
        return cls((LocalTerm(tuple(support), matrix),))


def inf_norm(obs: LocalObservable) -> float:
    return obs.inf_norm


def eig_decompose(obs: LocalObservable) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (ascending) and eigenvectors (columns) on the union support."""
    vals, vecs = obs._eig
    return vals.copy(), vecs.copy()


def expectation_exact(state: PureState, obs: LocalObservable) -> float:
    n = state.num_qubits
    total = 0.0 + 0.0j
    psi = state.amplitudes.reshape([2] * n)
    for term in obs.terms:
        if any(q >= n for q in term.support):
            raise ArgumentError(f"term support {term.support} exceeds {n} qubits")
        s = len(term.support)
        if s == 0:
            total += term.matrix[0, 0]
            continue
        moved = np.moveaxis(psi, term.support, range(s)).reshape(2**s, -1)
        total += np.vdot(moved, term.matrix @ moved)
    if abs(total.imag) > 1e-9:
        raise ArgumentError(f"expectation has imaginary part {total.imag}; observable not Hermitian?")
    return float(total.real)


# --------------------------------------------------------------------------
# text format
#
#   # comment
#   1.5 * Z0 Z3
#   -0.5 X1
#   2.0                       (identity term)
#   0.7 * dense:term.npy 0 2  (dense matrix from a .npy sidecar on qubits 0, 2)
#
# Terms are separated by newlines, ';', or a '+' / '-' with whitespace on
# both sides ("Z0 Z1 - 0.5 * X2").


def _parse_term(line: str, base: Path | None) -> LocalTerm:
    line = line.strip()
    if line[:1] in "+-" and not re.match(r"[+-]\s*[\d.]", line):
        term = _parse_term(line[1:], base)
        return term if line[0] == "+" else LocalTerm(term.support, -term.matrix)
    coeff_txt, _, rest = line.partition("*") if "*" in line else (None, None, None)
    if coeff_txt is None:
        head, *tail = line.split()
        try:
            coeff = float(head)
            rest = " ".join(tail)
        except ValueError:
            coeff, rest = 1.0, line
    else:
        try:
            coeff = float(coeff_txt)
        except ValueError as exc:
            raise FormatError(f"bad coefficient in {line!r}") from exc
    tokens = rest.split()
    if tokens and tokens[0].startswith("dense:"):
        path = Path(tokens[0][len("dense:"):])
        if base is not None and not path.is_absolute():
            path = base / path
        try:
            matrix = np.load(path)
        except OSError as exc:
            raise FormatError(f"cannot read dense term {path}: {exc}") from exc
        return LocalTerm(tuple(int(q) for q in tokens[1:]), coeff * matrix)
    factors: dict[int, str] = {}
    for tok in tokens:
        match = _FACTOR.match(tok.upper())
        if not match:
            raise FormatError(f"bad Pauli factor {tok!r} in {line!r}")
        q = int(match.group(2))
        if q in factors:
            raise FormatError(f"qubit {q} appears twice in {line!r}")
        factors[q] = match.group(1)
    return LocalTerm.pauli(coeff, factors)


def parse_observable(text: str, base: Path | None = None, k_max: int = K_MAX) -> LocalObservable:
    terms = []
    for raw in text.splitlines():
        raw = raw.split("#", 1)[0]
        raw = re.sub(r"\s+([+-])\s+", r";\1", raw)
        for part in raw.split(";"):
            line = part.strip()
            if line:
                terms.append(_parse_term(line, base))
    return LocalObservable(tuple(terms), k_max)


def load_observable(path) -> LocalObservable:
    path = Path(path)
    return parse_observable(path.read_text(), base=path.parent)
