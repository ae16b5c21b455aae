"""Seeded Monte Carlo experiments shared by ``bench`` and the acceptance suite.

Each experiment returns an :class:`Outcome`: a pass flag, a one-line detail,
summary numbers, and per-trial rows that serialise to CSV.  Trial ``t`` of
an experiment seeded with ``s`` draws from ``substream(s, t)``, so output
does not depend on how many worker threads ran it.
"""
from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import shadow
from .engine import Database, DatabaseConfig, swap_test_equality
from .formats import save_state
from .measurement import clifford_measurement, outcome_probabilities, validate_design_moments
from .observable import LocalObservable, LocalTerm, expectation_exact, parse_observable
from .oracle import (
    density_vectorize,
    distortion_factors,
    distortion_table,
    state_at_distance,
    distortion_expected,
    half_support_pair,
)
from .sketch import (
    SketchVector,
    Verdict,
    calibrate_c_tau,
    equality_test,
    l1_scale,
    l2_scale,
)
from .statevector import PureState, random_haar_state, substream, trace_distance


@dataclass
class Outcome:
    name: str
    passed: bool
    detail: str
    summary: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)
    seconds: float = 0.0

    def csv_bytes(self) -> bytes:
        if not self.rows:
            return b""
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=list(self.rows[0]), lineterminator="\n")
        writer.writeheader()
        for row in self.rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
        return buf.getvalue().encode()


def _map(fn, count: int, threads: int = 1):
    if threads <= 1:
        return [fn(t) for t in range(count)]
    with ThreadPoolExecutor(threads) as pool:
        return list(pool.map(fn, range(count)))


def _timed(fn):
    def wrapper(*args, **kwargs):
        start = time.perf_counter()
        out = fn(*args, **kwargs)
        out.seconds = time.perf_counter() - start
        return out

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def _band(lo: float, hi: float, values: np.ndarray) -> float:
    return float(((values >= lo) & (values <= hi)).mean())


# --------------------------------------------------------------------------
# 1. 2-design moments


@_timed
def moments(seed: int = 1, n: int = 4, trials: int = 100_000, tol: float = 0.05, threads: int = 1) -> Outcome:
    stats = validate_design_moments(n, 2, trials, substream(seed, 0))
    err = stats.relative_errors()
    rows = [
        {"statistic": "fourth", "estimate": stats.est_fourth, "target": stats.target_fourth, "rel_err": err["fourth"]},
        {"statistic": "cross", "estimate": stats.est_cross, "target": stats.target_cross, "rel_err": err["cross"]},
        {"statistic": "var_w", "estimate": stats.est_var_w, "target": stats.target_var_w, "rel_err": err["var_w"]},
        {"statistic": "second", "estimate": stats.est_second, "target": stats.target_second, "rel_err": err["second"]},
    ]
    worst = max(err["fourth"], err["cross"], err["var_w"])
    return Outcome(
        "moments",
        worst <= tol,
        f"d={2 ** n} trials={trials} rel errs fourth={err['fourth']:.4f} cross={err['cross']:.4f} var_w={err['var_w']:.4f}",
        {"relative_errors": err},
        rows,
    )


# --------------------------------------------------------------------------
# 2-3. embedding distortion


def _ratio_trial(seed: int, n: int, k: int, flavor: str, c_tau: float):
    d = 2**n

    def run(t: int):
        rng = substream(seed, t)
        a = random_haar_state(n, rng)
        b = random_haar_state(n, rng)
        m = clifford_measurement(n, k, rng=rng)
        p = outcome_probabilities(np.stack([a.amplitudes, b.amplitudes]), m)
        dist = trace_distance(a, b)
        if flavor == "L1":
            est = l1_scale(d, k, c_tau) * float(np.abs(p[0] - p[1]).sum())
        else:
            est = l2_scale(d) * float(np.linalg.norm(p[0] - p[1]))
        return {"trial": t, "k": k, "D": dist, "estimate": est, "ratio": est / dist}

    return run


def distortion_rows(seed: int, n: int, k: int, trials: int, flavor: str, c_tau: float = 1.0, threads: int = 1):
    return _map(_ratio_trial(seed, n, k, flavor, c_tau), trials, threads)


@_timed
def l1_embedding(
    seed: int = 2, n: int = 10, ks=(64, 256), trials: int = 500, cal_trials: int = 500, threads: int = 1
) -> Outcome:
    """Calibrate c_tau per k on an independent stream, then measure ratios."""
    rows, bands, inside, cals = [], {}, {}, {}
    for i, k in enumerate(ks):
        cal = calibrate_c_tau(2**n, k, cal_trials, substream(seed, 1000 + i))
        cals[k] = cal.c_tau
        r = distortion_rows(seed + 7919 * (i + 1), n, k, trials, "L1", cal.c_tau, threads)
        ratios = np.array([row["ratio"] for row in r])
        lo, hi = np.percentile(ratios, [5, 95])
        bands[k] = float(hi - lo)
        inside[k] = _band(0.65, 1.35, ratios)
        rows += r
    first, last = ks[0], ks[-1]
    ok = inside[first] >= 0.9 and bands[last] < bands[first]
    detail = (
        f"k={first}: {inside[first]:.1%} in [0.65,1.35], c_tau={cals[first]:.4f}; "
        f"90% band width k={first}: {bands[first]:.4f} vs k={last}: {bands[last]:.4f}"
    )
    return Outcome("l1_embedding", ok, detail, {"c_tau": cals, "band_width": bands, "inside": inside}, rows)


@_timed
def l2_embedding(seed: int = 3, n: int = 10, k: int = 64, trials: int = 500, threads: int = 1) -> Outcome:
    rows = distortion_rows(seed, n, k, trials, "L2", threads=threads)
    ratios = np.array([row["ratio"] for row in rows])
    mean, inside = float(ratios.mean()), _band(0.65, 1.35, ratios)
    ok = 0.95 <= mean <= 1.05 and inside >= 0.9
    return Outcome("l2_embedding", ok, f"mean ratio {mean:.4f}, {inside:.1%} in [0.65,1.35]", {"mean": mean, "inside": inside}, rows)


# --------------------------------------------------------------------------
# 4. equality test


@_timed
def equality(
    seed: int = 4, n: int = 10, k: int = 64, pairs: int = 100, eps: float = 0.1, beta: float = 4.0, threads: int = 1
) -> Outcome:
    """Near pairs at D in (0, eps], far pairs at D in [beta*eps, 1]; fresh measurement per pair."""

    def run(t: int):
        rng = substream(seed, t)
        near = t < pairs
        dist = rng.uniform(0, eps) if near else rng.uniform(beta * eps, 1.0)
        a = random_haar_state(n, rng)
        b = state_at_distance(a, dist, rng)
        m = clifford_measurement(n, k, rng=rng)
        p = outcome_probabilities(np.stack([a.amplitudes, b.amplitudes]), m)
        sa = SketchVector(k, 2**n, "L2", p[0] / p[0].sum(), m.measurement_id)
        sb = SketchVector(k, 2**n, "L2", p[1] / p[1].sum(), m.measurement_id)
        verdict = equality_test(sa, sb, eps, beta)
        return {"trial": t, "class": "near" if near else "far", "D": trace_distance(a, b), "verdict": verdict.value}

    rows = _map(run, 2 * pairs, threads)
    misses = sum(r["class"] == "near" and r["verdict"] != Verdict.EQUAL.value for r in rows)
    false_eq = sum(r["class"] == "far" and r["verdict"] == Verdict.EQUAL.value for r in rows)
    ok = false_eq == 0 and misses <= 5
    return Outcome("equality", ok, f"near misses {misses}/{pairs}, far misclassified {false_eq}/{pairs}", {"near_misses": misses, "far_errors": false_eq}, rows)


# --------------------------------------------------------------------------
# 5-6. search and join


@_timed
def search(
    seed: int = 5,
    n: int = 10,
    m: int = 1000,
    queries: int = 100,
    eps: float = 0.1,
    beta: float = 4.0,
    k: int = 64,
    flavor: str = "L2",
    threads: int = 1,
) -> Outcome:
    """Haar database; query ``i`` is planted within ``eps`` of record ``i``.

    For each query the other m-1 records are Haar decoys (D near 1).
    """
    rng = substream(seed, 0)
    states = [random_haar_state(n, rng) for _ in range(m)]
    db = Database(DatabaseConfig(n=n, k=k, flavor=flavor, measurement_seed=seed, seed=seed))
    db.ingest_many(states)
    db.build_index(eps, beta)

    def run(t: int):
        qrng = substream(seed, 1, t)
        target = t % m
        q = state_at_distance(states[target], qrng.uniform(0, eps), qrng)
        res = db.search_detail(q, eps, beta)
        true_d = trace_distance(states[res.id], q) if res.id is not None else float("nan")
        return {
            "query": t,
            "planted": target,
            "returned": -1 if res.id is None else res.id,
            "examined": res.examined,
            "true_D": true_d,
        }

    rows = _map(run, queries, threads)
    hits = sum(r["returned"] == r["planted"] for r in rows)
    bad = sum(r["returned"] >= 0 and r["true_D"] > beta * eps for r in rows)
    mean_exam = float(np.mean([r["examined"] for r in rows]))
    ok = hits >= 0.95 * queries and bad == 0 and mean_exam < m / 4
    detail = f"planted returned {hits}/{queries}, far returns {bad}, mean candidates {mean_exam:.2f} (m={m})"
    return Outcome("search", ok, detail, {"hits": hits, "bad": bad, "mean_examined": mean_exam, "lsh": vars(db.index.params)}, rows)


@_timed
def join(
    seed: int = 6, n: int = 10, pairs: int = 100, decoys: int = 900, eps: float = 0.1, beta: float = 4.0, k: int = 64
) -> Outcome:
    rng = substream(seed, 0)
    xs = [random_haar_state(n, rng) for _ in range(pairs + decoys)]
    ys = [state_at_distance(xs[i], rng.uniform(0, eps), rng) for i in range(pairs)]
    cfg = DatabaseConfig(n=n, k=k, measurement_seed=seed, seed=seed)
    dx, dy = Database(cfg), Database(cfg)
    dx.ingest_many(xs)
    dy.ingest_many(ys)
    found = dx.join(dy, eps, beta)
    rows = []
    for a, b in sorted(found):
        rows.append({"x": a, "y": b, "true_D": trace_distance(xs[a], ys[b])})
    matched = sum((i, i) in found for i in range(pairs))
    bad = sum(r["true_D"] > beta * eps for r in rows)
    ok = matched >= 0.9 * pairs and bad == 0
    return Outcome("join", ok, f"matched pairs {matched}/{pairs}, pairs returned {len(found)}, far pairs {bad}", {"matched": matched, "returned": len(found), "bad": bad}, rows)


# --------------------------------------------------------------------------
# 7-8. shadow estimators


def random_local_observable(n: int, k: int, rng) -> LocalObservable:
    """Random Hermitian term on ``k`` distinct qubits, scaled to unit sup-norm."""
    support = tuple(sorted(rng.choice(n, size=k, replace=False).tolist()))
    dim = 2**k
    a = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    h = a + a.conj().T
    h /= np.abs(np.linalg.eigvalsh(h)).max()
    return LocalObservable((LocalTerm(support, h),))


def _shadow_trials(seed: int, n: int, k: int, N: int, mode: str, trials: int, threads: int):
    def run(t: int):
        rng = substream(seed, t)
        state = random_haar_state(n, rng)
        obs = random_local_observable(n, k, rng)
        seed_matrix = shadow.build_seed_matrix(state, N, rng)
        est = shadow.estimate(seed_matrix, obs, mode, rng)
        exact = expectation_exact(state, obs)
        traces_ok = bool((shadow.shadow_traces(seed_matrix, obs.support) == 1.0).all())
        return {
            "trial": t,
            "exact": exact,
            "estimate": est.value,
            "error": est.value - exact,
            "stderr": est.stderr,
            "max_abs_sample": est.max_abs_sample,
            "bound": 3**k * obs.inf_norm if mode == "qcqc" else float("nan"),
            "traces_one": traces_ok,
        }

    return _map(run, trials, threads)


@_timed
def cst(seed: int = 7, n: int = 8, k: int = 2, eps: float = 0.1, delta: float = 0.05, trials: int = 100, threads: int = 1) -> Outcome:
    N = shadow.required_samples(k, 1.0, eps, delta, "cst")
    rows = _shadow_trials(seed, n, k, N, "cst", trials, threads)
    within = sum(abs(r["error"]) <= eps for r in rows)
    traces = all(r["traces_one"] for r in rows)
    ok = within >= 0.95 * trials and traces
    return Outcome("cst", ok, f"N={N}: {within}/{trials} within {eps}; all shadow traces exactly 1: {traces}", {"N": N, "within": within}, rows)


@_timed
def qcqc(seed: int = 8, n: int = 8, k: int = 2, eps: float = 0.1, delta: float = 0.05, trials: int = 100, threads: int = 1) -> Outcome:
    N = shadow.required_samples(k, 1.0, eps, delta, "qcqc")
    rows = _shadow_trials(seed, n, k, N, "qcqc", trials, threads)
    within = sum(abs(r["error"]) <= eps for r in rows)
    errors = np.array([r["error"] for r in rows])
    se = math.sqrt(sum(r["stderr"] ** 2 for r in rows)) / trials
    z = float(errors.mean() / se)
    bounded = all(r["max_abs_sample"] <= r["bound"] * (1 + 1e-12) for r in rows)
    ok = within >= 0.95 * trials and abs(z) <= 3 and bounded
    detail = f"N={N}: {within}/{trials} within {eps}; grand-mean bias {errors.mean():+.5f} = {z:+.2f} stderr; |S_i| bound held: {bounded}"
    return Outcome("qcqc", ok, detail, {"N": N, "within": within, "z": z}, rows)


# --------------------------------------------------------------------------
# 9. selection and sorting


@_timed
def selection(
    seed: int = 9, n: int = 4, m: int = 200, eps: float = 0.25, eta: float = 0.0, trials: int = 20, obs_text: str = "Z0 Z1"
) -> Outcome:
    obs = parse_observable(obs_text)
    rows = []
    for t in range(trials):
        rng = substream(seed, t)
        states = [random_haar_state(n, rng) for _ in range(m)]
        db = Database(DatabaseConfig(n=n, k=2, seed=seed * 1000 + t, measurement_seed=seed))
        db.ingest_many(states)
        db.attach_seeds(db.shadow_rows_needed(obs, eps / 3))
        exact = {i: expectation_exact(s, obs) for i, s in enumerate(states)}
        sel = db.select(obs, eta, eps, rng)
        v_sel = sum((e >= eta and i not in sel) or (e <= eta - eps and i in sel) for i, e in exact.items())
        seq = db.select_equality(obs, eta, eps, rng)
        v_eq = sum(
            (eta - eps <= e <= eta + eps and i not in seq) or ((e <= eta - 2 * eps or e >= eta + 2 * eps) and i in seq)
            for i, e in exact.items()
        )
        order = db.sort(obs, eps, rng)
        v_sort = sum(exact[a] > exact[b] + eps for a, b in zip(order, order[1:]))
        rows.append(
            {"trial": t, "rows": db.config.shadow_rows, "selected": len(sel), "band": len(seq),
             "select_violations": v_sel, "equality_violations": v_eq, "sort_violations": v_sort}
        )
    total = {key: sum(r[key] for r in rows) for key in ("select_violations", "equality_violations", "sort_violations")}
    ok = not any(total.values())
    return Outcome("selection", ok, f"m={m}, {trials} trials: violations {total}", total, rows)


# --------------------------------------------------------------------------
# 10. swap test


@_timed
def swap(seed: int = 10, n: int = 4, trials: int = 100_000, eps: float = 0.1, beta: float = 4.0) -> Outcome:
    rng = substream(seed, 0)
    a = PureState.basis(n, 0)
    b = PureState.basis(n, 1)
    orth = swap_test_equality(a, b, eps, beta, rng=rng, trials=trials)
    same = swap_test_equality(a, a, eps, beta, rng=rng, trials=trials)
    rows = [
        {"pair": "orthogonal", "trials": trials, "accept_rate": orth.accept_rate, "verdict": orth.verdict.value},
        {"pair": "identical", "trials": trials, "accept_rate": same.accept_rate, "verdict": same.verdict.value},
    ]
    ok = abs(orth.accept_rate - 0.5) <= 0.01 and same.accept_rate >= 0.999
    return Outcome("swap", ok, f"orthogonal accept {orth.accept_rate:.4f}, identical accept {same.accept_rate:.4f}", {}, rows)


# --------------------------------------------------------------------------
# 11. distortion table and density vectorization


@_timed
def distortion_values(seed: int = 11, d: int = 16, pairs: int = 100, tol: float = 1e-9) -> Outcome:
    n = int(math.log2(d))
    phi, psi = half_support_pair(d)
    got_pair = distortion_table(phi, psi).as_dict()
    got_basis = distortion_table(PureState.basis(n, 0), PureState.basis(n, 1)).as_dict()
    rows, worst = [], 0.0
    for key, (want_pair, want_basis) in distortion_expected(d).items():
        for column, got, want in (("phi_psi", got_pair[key], want_pair), ("zero_one", got_basis[key], want_basis)):
            worst = max(worst, abs(got - want))
            rows.append({"quantity": key, "column": column, "value": got, "expected": want})
    factors = distortion_factors(d)
    rng = substream(seed, 0)
    vec_err = 0.0
    for _ in range(pairs):
        a, b = random_haar_state(n, rng), random_haar_state(n, rng)
        lhs = float(np.linalg.norm(density_vectorize(a) - density_vectorize(b)))
        vec_err = max(vec_err, abs(lhs - math.sqrt(2) * trace_distance(a, b)))
    for key, val in factors.items():
        rows.append({"quantity": f"distortion_{key}", "column": "factor", "value": val, "expected": float("nan")})
    ok = worst <= tol and vec_err <= 1e-10
    return Outcome("distortion-values", ok, f"10 table values max abs err {worst:.2e}; vectorization max err {vec_err:.2e}", {"factors": factors}, rows)


CRITERIA = {
    1: ("2-design moments", moments),
    2: ("L1 embedding", l1_embedding),
    3: ("L2 embedding", l2_embedding),
    4: ("equality test", equality),
    5: ("search", search),
    6: ("join", join),
    7: ("CST estimator", cst),
    8: ("QCQC estimator", qcqc),
    9: ("selection and sorting", selection),
    10: ("swap test", swap),
    11: ("distortion table", distortion_values),
}


# --------------------------------------------------------------------------
# shipped CLI fixture


def write_planted_fixture(directory, seed: int = 2024, n: int = 6, m: int = 64, k: int = 16, planted: int = 17) -> dict:
    """Database of ``m`` Haar states plus a query within 0.05 of record ``planted``."""
    root = Path(directory)
    rng = substream(seed, 0)
    states = [random_haar_state(n, rng) for _ in range(m)]
    db = Database(DatabaseConfig(n=n, k=k, measurement_seed=seed, seed=seed))
    db.ingest_many(states, [{"source": "fixture", "index": str(i)} for i in range(m)])
    db.save(root / "db")
    query = state_at_distance(states[planted], 0.05, rng)
    save_state(query, root / "query.qds")
    info = {"planted_id": planted, "eps": 0.1, "beta": 4.0, "true_distance": trace_distance(query, states[planted])}
    (root / "expected.json").write_text(json.dumps(info, indent=1, sort_keys=True))
    return info
