"""Shadow seed matrices and the CST / QCQC expectation estimators."""
import math

import numpy as np
import pytest

import qsketch.shadow as shadow_mod

from qsketch.errors import ArgumentError, FormatError
from qsketch.observable import LocalObservable, LocalTerm, expectation_exact, parse_observable
from qsketch.shadow import (
    GATES,
    SIX_STATES,
    SeedMatrix,
    build_seed_matrix,
    estimate,
    estimate_cst,
    estimate_qcqc,
    gamma0_inverse,
    load_seed,
    required_samples,
    save_seed,
    seed_from_bytes,
    seed_to_bytes,
    shadow_traces,
)
from qsketch.statevector import PureState, random_haar_state, substream

Z0 = parse_observable("Z0")


def plus_state(n):
    return PureState.from_amplitudes(np.ones(2**n), normalize=True)


def naive_cst(seed, obs):
    """Textbook CST: build each 2^k x 2^k shadow with kron and trace it."""
    support = obs.support
    total = 0.0
    for row in seed.codes:
        rho = np.eye(1)
        for q in support:
            v = GATES[row[q] >> 1][:, row[q] & 1]
            rho = np.kron(rho, 3 * np.outer(v, v.conj()) - np.eye(2))
        total += np.trace(obs.dense @ rho).real
    return total / seed.N


# -- seed matrices -----------------------------------------------------------------


def test_zero_state_identity_rows():
    seed = build_seed_matrix(PureState.basis(4), 2000, substream(500))
    all_identity = (seed.gates == 0).all(axis=1)
    assert all_identity.any()
    assert (seed.bits[all_identity] == 0).all()


def test_gate_marginals_uniform():
    seed = build_seed_matrix(random_haar_state(3, substream(501)), 30_000, substream(502))
    freq = np.bincount(seed.gates.reshape(-1), minlength=3) / seed.gates.size
    assert np.allclose(freq, 1 / 3, atol=0.01)


def test_plus_state_hadamard_entries_read_zero():
    seed = build_seed_matrix(plus_state(5), 3000, substream(503))
    assert (seed.bits[seed.gates == 1] == 0).all()


def test_outcome_statistics_match_born_rule():
    # S^dagger H basis on |+i>: always b = 1 (|+i> is the u=2, b=1 state)
    plus_i = PureState.from_amplitudes([1, 1j], normalize=True)
    seed = build_seed_matrix(plus_i, 3000, substream(504))
    assert (seed.bits[seed.gates == 2] == 1).all()
    z_rows = seed.gates[:, 0] == 0
    assert seed.bits[z_rows, 0].mean() == pytest.approx(0.5, abs=0.05)


def test_six_states_convention():
    expected = np.array([[1, 0], [0, 1], [1, 1], [1, -1], [1, -1j], [1, 1j]]) / np.array(
        [[1], [1], [math.sqrt(2)], [math.sqrt(2)], [math.sqrt(2)], [math.sqrt(2)]]
    )
    for got, want in zip(SIX_STATES, expected):
        assert abs(abs(np.vdot(got, want)) - 1) < 1e-12


def test_seed_deterministic():
    s = random_haar_state(4, substream(505))
    assert build_seed_matrix(s, 500, substream(506)) == build_seed_matrix(s, 500, substream(506))


def test_table_and_chunked_paths_agree(monkeypatch):
    s = random_haar_state(4, substream(507))
    fast = build_seed_matrix(s, 4000, substream(508))
    monkeypatch.setattr(shadow_mod, "_TABLE_AMPS", 0)
    slow = build_seed_matrix(s, 4000, substream(508))
    assert fast == slow


def test_packing_round_trip():
    rng = substream(509)
    bits = rng.integers(0, 2, (37, 5))
    gates = rng.integers(0, 3, (37, 5))
    seed = SeedMatrix.from_arrays(bits, gates)
    assert len(seed.packed) == math.ceil(3 * 37 * 5 / 8)
    assert np.array_equal(seed.bits, bits) and np.array_equal(seed.gates, gates)
    assert seed_from_bytes(seed_to_bytes(seed)) == seed


def test_seed_file_round_trip(tmp_path):
    seed = build_seed_matrix(random_haar_state(3, substream(510)), 100, substream(511))
    save_seed(seed, tmp_path / "s.qsh")
    assert load_seed(tmp_path / "s.qsh") == seed
    raw = (tmp_path / "s.qsh").read_bytes()
    assert raw[:4] == b"QSH1"
    with pytest.raises(FormatError):
        seed_from_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError):
        seed_from_bytes(raw[:4] + b"\x09" + raw[5:])
    with pytest.raises(FormatError):
        seed_from_bytes(raw[:-1])


def test_corrupt_code_detected():
    packed = np.packbits(np.array([1, 1, 1, 0, 0, 0, 0, 0], dtype=np.uint8)).tobytes()
    with pytest.raises(FormatError):
        SeedMatrix(1, 1, packed).codes


def test_from_arrays_validation():
    with pytest.raises(ArgumentError):
        SeedMatrix.from_arrays(np.zeros((2, 2)), np.full((2, 2), 3))
    with pytest.raises(ArgumentError):
        build_seed_matrix(PureState.basis(1), 0)


# -- CST -------------------------------------------------------------------------------


def test_cst_matches_naive_shadows():
    rng = substream(512)
    seed = build_seed_matrix(random_haar_state(4, rng), 300, rng)
    obs = parse_observable("0.7 * X0 Z2; -0.3 Y1; 0.2 * Z0 Z1")
    assert estimate_cst(seed, obs).value == pytest.approx(naive_cst(seed, obs), abs=1e-12)


def test_cst_z_on_zero_state():
    seed = build_seed_matrix(PureState.basis(6), 5000, substream(513))
    assert abs(estimate_cst(seed, Z0).value - 1) <= 0.1


def test_cst_identity_term_exact():
    obs = parse_observable("-1.75")
    for N in (1, 7, 500):
        seed = build_seed_matrix(random_haar_state(3, substream(514, N)), N, substream(515, N))
        assert estimate_cst(seed, obs).value == -1.75


def test_shadow_traces_exactly_one():
    seed = build_seed_matrix(random_haar_state(5, substream(516)), 1000, substream(517))
    assert (shadow_traces(seed, (0, 2, 4)) == 1.0).all()


def test_cst_unbiased():
    rng = substream(518)
    s = random_haar_state(3, rng)
    obs = parse_observable("X0 Y2 + 0.5 * Z1")
    vals = [estimate_cst(build_seed_matrix(s, 100, rng), obs).value for _ in range(200)]
    se = np.std(vals, ddof=1) / math.sqrt(len(vals))
    assert abs(np.mean(vals) - expectation_exact(s, obs)) < 3 * se


def test_cst_large_n_accuracy():
    rng = substream(519)
    paulis = "XYZ"
    for t in range(20):
        n = int(rng.integers(2, 9))
        s = random_haar_state(n, rng)
        q = rng.choice(n, size=2, replace=False)
        text = f"{paulis[rng.integers(3)]}{q[0]} {paulis[rng.integers(3)]}{q[1]}"
        obs = parse_observable(text)
        seed = build_seed_matrix(s, 200_000, rng)
        assert abs(estimate_cst(seed, obs).value - expectation_exact(s, obs)) <= 0.02, text


def test_cst_stderr_reported():
    seed = build_seed_matrix(random_haar_state(3, substream(520)), 2000, substream(521))
    est = estimate_cst(seed, parse_observable("X0 X1"))
    # single-shot variance of a weight-2 Pauli shadow is at most 9
    assert 0 < est.stderr < 3 / math.sqrt(2000) * 1.2
    assert est.N_used == 2000 and est.mode == "cst"


def test_support_checks():
    seed = build_seed_matrix(PureState.basis(2), 10, substream(522))
    with pytest.raises(ArgumentError):
        estimate_cst(seed, parse_observable("Z2"))
    with pytest.raises(ArgumentError):
        estimate(seed, Z0, "median")


# -- QCQC -----------------------------------------------------------------------------------


def test_qcqc_z_on_zero_state():
    # S_i = +-3 with mean 1, so Var = 8.  At delta = 0.05 the displayed sample
    # rule gives N = 674 and only ~93% coverage; delta = 0.01 gives ~98%.
    N = required_samples(1, 1.0, 0.2, 0.01, "qcqc")
    assert N == 1037
    coverage = math.erf(0.2 / math.sqrt(8 / N) / math.sqrt(2))
    assert coverage > 0.97
    ok = 0
    for t in range(100):
        seed = build_seed_matrix(PureState.basis(4), N, substream(523, t))
        ok += abs(estimate_qcqc(seed, Z0, substream(524, t)).value - 1) <= 0.2
    assert ok >= 95


def test_qcqc_sample_bound():
    rng = substream(525)
    obs = parse_observable("1.3 * X0 Z1 - 0.4 * Y2")
    seed = build_seed_matrix(random_haar_state(3, rng), 5000, rng)
    est = estimate_qcqc(seed, obs, rng)
    assert est.max_abs_sample <= 3**3 * obs.inf_norm * (1 + 1e-12)


def test_qcqc_unbiased_grand_mean():
    rng = substream(526)
    s = random_haar_state(3, rng)
    obs = parse_observable("Z0 X1")
    vals = [estimate_qcqc(build_seed_matrix(s, 50, rng), obs, rng).value for _ in range(500)]
    se = np.std(vals, ddof=1) / math.sqrt(len(vals))
    assert abs(np.mean(vals) - expectation_exact(s, obs)) < 3 * se


def test_qcqc_deterministic_given_rng():
    seed = build_seed_matrix(random_haar_state(3, substream(527)), 700, substream(528))
    a = estimate_qcqc(seed, parse_observable("X0 Y1"), substream(529))
    b = estimate_qcqc(seed, parse_observable("X0 Y1"), substream(529))
    assert a == b


@pytest.mark.parametrize("mode", ["cst", "qcqc"])
def test_row_permutation_invariance(mode):
    rng = substream(530)
    seed = build_seed_matrix(random_haar_state(4, rng), 9000, rng)
    shuffled = seed.rows(rng.permutation(seed.N))
    obs = parse_observable("X0 Z3 + 0.5 * Y1")
    a = estimate(seed, obs, mode, substream(531))
    b = estimate(shuffled, obs, mode, substream(531))
    assert a.value == b.value


def test_seed_reuse_for_two_observables():
    rng = substream(532)
    s = random_haar_state(6, rng)
    N = required_samples(2, 1.0, 0.1, 0.05, "cst")
    seed = build_seed_matrix(s, N, rng)
    for text in ("X0 X1", "Z2 Y5"):
        obs = parse_observable(text)
        assert abs(estimate_cst(seed, obs).value - expectation_exact(s, obs)) <= 0.1


# -- channel inverse and sample counts ---------------------------------------------------------


def test_gamma0_inverse_of_zero_projector():
    assert np.allclose(gamma0_inverse(np.diag([1, 0])), np.diag([2, -1]))


def test_gamma0_inverse_trace_preserving():
    rng = substream(533)
    v = rng.standard_normal(2) + 1j * rng.standard_normal(2)
    rho = np.outer(v, v.conj()) / np.vdot(v, v)
    assert np.trace(gamma0_inverse(rho)) == pytest.approx(1)


def test_gamma0_inverse_closed_form():
    a0, a1 = 0.6, 0.8j
    rho = np.outer([a0, a1], np.conj([a0, a1]))
    want = [
        [2 * abs(a0) ** 2 - abs(a1) ** 2, 3 * a0 * np.conj(a1)],
        [3 * np.conj(a0) * a1, 2 * abs(a1) ** 2 - abs(a0) ** 2],
    ]
    assert np.allclose(gamma0_inverse(rho), want)


def test_gamma0_inverse_rejects_non_hermitian():
    with pytest.raises(ArgumentError):
        gamma0_inverse([[0, 1], [0, 0]])


def test_channel_inversion_recovers_state():
    rng = substream(534)
    v = rng.standard_normal(2) + 1j * rng.standard_normal(2)
    psi = v / np.linalg.norm(v)
    exact = np.zeros((2, 2), dtype=complex)
    for u in range(3):
        for b in range(2):
            w = GATES[u][:, b]
            p = abs(np.vdot(w, psi)) ** 2
            exact += p / 3 * gamma0_inverse(np.outer(w, w.conj()))
    assert np.allclose(exact, np.outer(psi, psi.conj()), atol=1e-12)
    # Monte Carlo over simulated measurements
    seed = build_seed_matrix(PureState.from_amplitudes(psi), 60_000, rng)
    vecs = GATES[seed.gates[:, 0], :, seed.bits[:, 0]]
    mc = np.mean([gamma0_inverse(np.outer(w, w.conj())) for w in vecs[:20_000]], axis=0)
    assert np.allclose(mc, np.outer(psi, psi.conj()), atol=0.05)


def test_required_samples_values():
    assert required_samples(2, 1.0, 0.1, 0.05, "cst") == 4794
    assert required_samples(2, 1.0, 0.1, 0.05, "qcqc") == 24266
    assert required_samples(0, 1.0, 1.0, 1 / math.e, "cst") == 1
    assert required_samples(0, 3.0, 1.0, 1 / math.e, "cst") == 9


def test_required_samples_ratio():
    for k in (1, 3, 5):
        cst = 4**k * 2.0**2 * math.log(1 / 0.01) / 0.05**2
        ratio = required_samples(k, 2.0, 0.05, 0.01, "qcqc") / required_samples(k, 2.0, 0.05, 0.01, "cst")
        assert ratio == pytest.approx((9 / 4) ** k, rel=1 / cst)


def test_required_samples_validation():
    with pytest.raises(ArgumentError):
        required_samples(1, 1.0, 0.1, 0.05, "shadow")
    with pytest.raises(ArgumentError):
        required_samples(1, 1.0, 0.1, 1.5)


def test_dense_observable_estimate():
    rng = substream(535)
    a = rng.standard_normal((4, 4))
    obs = LocalObservable((LocalTerm((1, 3), (a + a.T) / 4),))
    s = random_haar_state(4, rng)
    seed = build_seed_matrix(s, 50_000, rng)
    assert estimate_cst(seed, obs).value == pytest.approx(expectation_exact(s, obs), abs=0.05)
