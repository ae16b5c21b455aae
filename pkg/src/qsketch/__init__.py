"""Sketch-based databases of simulated pure quantum states.

Vector sketches (outcome distributions of a shared random Clifford
measurement) support equality tests, nearest-neighbour search and joins;
classical-shadow seed matrices support selection and sorting by local
observables.  Exact statevector oracles back every estimator.
"""

__version__ = "0.1.0"

from .engine import Database, DatabaseConfig, StateRecord, swap_test_equality
from .errors import ArgumentError, FormatError, PreconditionError, QSketchError, ResourceError
from .measurement import SketchMeasurement, clifford_measurement, make_measurement, sample_clifford
from .observable import LocalObservable, LocalTerm, expectation_exact, parse_observable
from .shadow import SeedMatrix, build_seed_matrix, estimate_cst, estimate_qcqc, required_samples
from .sketch import CTauCalibration, SketchVector, Verdict, build_sketch, equality_test, estimate_distance
from .statevector import Gate, PureState, apply_gate, inner_product, random_haar_state, trace_distance

__all__ = [
    "ArgumentError",
    "CTauCalibration",
    "Database",
    "DatabaseConfig",
    "FormatError",
    "Gate",
    "LocalObservable",
    "LocalTerm",
    "PreconditionError",
    "PureState",
    "QSketchError",
    "ResourceError",
    "SeedMatrix",
    "SketchMeasurement",
    "SketchVector",
    "StateRecord",
    "Verdict",
    "apply_gate",
    "build_seed_matrix",
    "build_sketch",
    "clifford_measurement",
    "equality_test",
    "estimate_cst",
    "estimate_distance",
    "estimate_qcqc",
    "expectation_exact",
    "inner_product",
    "make_measurement",
    "parse_observable",
    "random_haar_state",
    "required_samples",
    "sample_clifford",
    "swap_test_equality",
    "trace_distance",
]
