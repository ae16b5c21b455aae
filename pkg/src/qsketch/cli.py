"""Command-line front end.

Every verb prints one JSON object on stdout (validated against the shipped
``summary.schema.json`` in the tests) and logs human-readable progress on
stderr.  Exit codes: 0 ok, 2 bad arguments, 3 unmet precondition, 4
resource cap, 1 anything else.

Settings come from ``--config FILE`` (JSON) overlaid by explicit flags.
``QDS_SEED`` in the environment overrides the seed from either source.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import __version__, experiments, formats, lsh, shadow
from .engine import Database, DatabaseConfig, swap_test_equality
from .errors import ArgumentError, QSketchError
from .measurement import make_measurement
from .observable import expectation_exact, load_observable, parse_observable
from .oracle import state_at_distance
from .sketch import CTauCalibration, build_sketch, calibrate_c_tau, equality_test
from .statevector import random_haar_state, substream

log = logging.getLogger("qsketch")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    n: int = 8
    k: int = 64
    flavor: str = "L2"
    mode: str = "clifford"
    iota: float = 0.01
    delta: float = 0.01
    eps_hat_factor: float = 0.01
    eps: float = 0.1
    beta: float = 4.0
    eta: float = 0.0
    shadow_mode: str = "cst"
    shadow_rows: int = 0
    threads: int = 0

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, ValueError) as exc:
            raise ArgumentError(f"cannot read config {path}: {exc}") from exc
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ArgumentError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)


def _resolve(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = {f.name: getattr(args, f.name) for f in fields(RunConfig) if getattr(args, f.name, None) is not None}
    cfg = replace(cfg, **overrides)
    env = os.environ.get("QDS_SEED")
    if env:
        try:
            cfg = replace(cfg, seed=int(env))
        except ValueError:
            raise ArgumentError(f"QDS_SEED must be an integer, got {env!r}") from None
    if cfg.threads <= 0:
        cfg = replace(cfg, threads=os.cpu_count() or 1)
    return cfg


def _sha(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _db_config(cfg: RunConfig) -> DatabaseConfig:
    return DatabaseConfig(
        n=cfg.n,
        k=cfg.k,
        flavor=cfg.flavor,
        mode=cfg.mode,
        measurement_seed=cfg.seed,
        seed=cfg.seed,
        iota=cfg.iota,
        eps_hat_factor=cfg.eps_hat_factor,
        shadow_rows=cfg.shadow_rows,
        shadow_mode=cfg.shadow_mode,
    )


def _obs(text: str):
    path = Path(text)
    return load_observable(path) if path.is_file() else parse_observable(text)


# --------------------------------------------------------------------------
# verbs: each returns (result dict, artifact paths)


def cmd_gen(args, cfg):
    """Haar states, optionally with planted neighbours of the first one."""
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = substream(cfg.seed, 0)
    paths = []
    base = None
    for i in range(args.count):
        if args.planted and i > 0 and i <= args.planted:
            st = state_at_distance(base, float(rng.uniform(0, args.planted_dist)), rng)
        else:
            st = random_haar_state(cfg.n, rng)
        if i == 0:
            base = st
        path = out / f"state_{i:05d}.qds"
        formats.save_state(st, path)
        paths.append(path)
    log.info("wrote %d states to %s", len(paths), out)
    return {"count": len(paths), "n": cfg.n, "sha256": [_sha(p) for p in paths]}, paths


def cmd_ingest(args, cfg):
    root = Path(args.db)
    if (root / "manifest.json").exists():
        db = Database.load(root)
    else:
        db = Database(_db_config(cfg))
    states = [formats.load_state(p) for p in args.states]
    meta = [{"source": str(p)} for p in args.states]
    ids = db.ingest_many(states, meta)
    db.save(root)
    log.info("ingested %d states into %s (now %d records)", len(ids), root, len(db))
    return {"ids": ids, "records": len(db)}, [root / "manifest.json"]


def cmd_index(args, cfg):
    db = Database.load(args.db)
    params = None
    if args.tables or args.functions or args.width:
        if not (args.tables and args.functions and args.width):
            raise ArgumentError("--tables, --functions and --width must be given together")
        params = lsh.LshParams("l1" if db.config.flavor == "L1" else "l2", args.tables, args.functions, args.width, cfg.seed)
    index = db.build_index(cfg.eps, cfg.beta, params)
    db.save(args.db)
    p = index.params
    return {"tables": p.tables, "functions_per_table": p.functions_per_table, "bucket_width": p.bucket_width,
            "records": len(index), "eps": cfg.eps}, [Path(args.db) / "index.qli"]


def cmd_sketch(args, cfg):
    state = formats.load_state(args.state)
    m = Database.load(args.db).measurement if args.db else make_measurement(cfg.mode, state.num_qubits, cfg.k, cfg.seed)
    sk = build_sketch(state, m, args.samples, substream(cfg.seed, 2), cfg.flavor)
    formats.save_sketch(sk, args.out)
    return {"k": sk.k, "d": sk.d, "samples": sk.samples, "measurement_id": list(sk.measurement_id)}, [Path(args.out)]


def cmd_shadow(args, cfg):
    if args.shadow_cmd == "build":
        state = formats.load_state(args.state)
        seed = shadow.build_seed_matrix(state, args.N, substream(cfg.seed, 3))
        shadow.save_seed(seed, args.out)
        return {"N": seed.N, "n": seed.n, "bytes": len(seed.packed)}, [Path(args.out)]
    seed = shadow.load_seed(args.seed_file)
    obs = _obs(args.obs)
    est = shadow.estimate(seed, obs, args.estimator or cfg.shadow_mode, substream(cfg.seed, 4))
    result = {"value": est.value, "stderr": est.stderr, "N": est.N_used, "mode": est.mode,
              "locality": obs.locality, "inf_norm": obs.inf_norm}
    if args.state:
        result["exact"] = expectation_exact(formats.load_state(args.state), obs)
    return result, []


def cmd_search(args, cfg):
    db = Database.load(args.db)
    q = formats.load_state(args.query)
    res = db.search_detail(q, cfg.eps, cfg.beta, substream(cfg.seed, 5))
    if res.id is not None:
        log.info("found record %d (estimated D %.4f)", res.id, res.estimated_distance)
    else:
        log.info("no record within beta*eps")
    meta = db.records[res.id].metadata if res.id is not None else None
    return {"id": res.id, "examined": res.examined, "estimated_distance": res.estimated_distance, "metadata": meta}, []


def cmd_join(args, cfg):
    dx = Database.load(args.db)
    dy = Database.load(args.other) if args.other else None
    pairs = sorted(dx.join(dy, cfg.eps, cfg.beta))
    arts = []
    if args.out:
        Path(args.out).write_text("x,y\n" + "".join(f"{a},{b}\n" for a, b in pairs))
        arts.append(Path(args.out))
    return {"pairs": [list(p) for p in pairs], "count": len(pairs)}, arts


def cmd_eqtest(args, cfg):
    a, b = formats.load_state(args.a), formats.load_state(args.b)
    if args.method == "swap":
        res = swap_test_equality(a, b, cfg.eps, cfg.beta, cfg.delta, substream(cfg.seed, 6), args.trials)
        return {"verdict": res.verdict.value, "accept_rate": res.accept_rate, "trials": res.trials,
                "consumes_fresh_copies": res.consumes_fresh_copies}, []
    m = make_measurement(cfg.mode, a.num_qubits, cfg.k, cfg.seed)
    sa = build_sketch(a, m, 0, flavor=cfg.flavor)
    sb = build_sketch(b, m, 0, flavor=cfg.flavor)
    verdict = equality_test(sa, sb, cfg.eps, cfg.beta, None, cfg.iota, cfg.eps_hat_factor * cfg.eps)
    return {"verdict": verdict.value, "method": "sketch"}, []


def _shadow_db(args, cfg, obs, tolerance):
    db = Database.load(args.db)
    if args.attach_seeds:
        db.attach_seeds(db.shadow_rows_needed(obs, tolerance))
        db.save(args.db)
    return db


def cmd_select(args, cfg):
    obs = _obs(args.obs)
    db = _shadow_db(args, cfg, obs, cfg.eps / 3)
    rng = substream(cfg.seed, 7)
    if args.equality:
        ids = db.select_equality(obs, cfg.eta, cfg.eps, rng)
    else:
        ids = db.select(obs, cfg.eta, cfg.eps, rng)
    return {"ids": sorted(ids), "count": len(ids), "equality": bool(args.equality)}, []


def cmd_sort(args, cfg):
    obs = _obs(args.obs)
    db = _shadow_db(args, cfg, obs, cfg.eps / 2)
    return {"order": db.sort(obs, cfg.eps, substream(cfg.seed, 8))}, []


_BENCHES = {
    "moments": lambda a, c: experiments.moments(c.seed, n=a.n or 4, trials=a.trials or 100_000),
    "distortion": lambda a, c: _distortion_bench(a, c),
    "search": lambda a, c: experiments.search(c.seed, n=a.n or 10, m=a.m or 1000, queries=a.trials or 100,
                                              eps=c.eps, beta=c.beta, k=a.k or 64, flavor=c.flavor, threads=c.threads),
    "join": lambda a, c: experiments.join(c.seed, n=a.n or 10, eps=c.eps, beta=c.beta, k=a.k or 64),
    "distortion-values": lambda a, c: experiments.distortion_values(c.seed, d=a.d or 16),
    "equality": lambda a, c: experiments.equality(c.seed, n=a.n or 10, k=a.k or 64, eps=c.eps, beta=c.beta, threads=c.threads),
    "cst": lambda a, c: experiments.cst(c.seed, n=a.n or 8, trials=a.trials or 100, threads=c.threads),
    "qcqc": lambda a, c: experiments.qcqc(c.seed, n=a.n or 8, trials=a.trials or 100, threads=c.threads),
    "selection": lambda a, c: experiments.selection(c.seed, n=a.n or 4, m=a.m or 200, trials=a.trials or 20),
    "swap": lambda a, c: experiments.swap(c.seed, trials=a.trials or 100_000),
}


def _distortion_bench(a, c):
    d = a.d or 1024
    n = d.bit_length() - 1
    k = a.k or 64
    trials = a.trials or 500
    cal = calibrate_c_tau(d, k, max(100, trials), substream(c.seed, 1000)) if c.flavor == "L1" else None
    rows = experiments.distortion_rows(c.seed, n, k, trials, c.flavor, cal.c_tau if cal else 1.0, c.threads)
    ratios = np.array([r["ratio"] for r in rows])
    lo, hi = np.percentile(ratios, [5, 95])
    out = experiments.Outcome(
        "distortion", bool(lo <= 1.0 <= hi), f"5-95% ratio band [{lo:.4f}, {hi:.4f}]",
        {"p5": float(lo), "p95": float(hi), "mean": float(ratios.mean()), "c_tau": cal.c_tau if cal else None},
        rows,
    )
    return out


def cmd_bench(args, cfg):
    outcome = _BENCHES[args.bench](args, cfg)
    arts = []
    if args.out:
        path = Path(args.out)
        if args.format == "csv":
            path.write_bytes(outcome.csv_bytes())
        else:
            path.write_text(json.dumps({"summary": outcome.summary, "rows": outcome.rows}, default=_jsonable))
        arts.append(path)
    elif args.format == "csv":
        sys.stderr.write(outcome.csv_bytes().decode())
    log.info("%s: %s (%s)", outcome.name, "PASS" if outcome.passed else "FAIL", outcome.detail)
    return {"bench": outcome.name, "passed": outcome.passed, "detail": outcome.detail,
            "summary": outcome.summary, "rows": len(outcome.rows)}, arts


def cmd_calibrate(args, cfg):
    d = args.d or 2**cfg.n
    cal = calibrate_c_tau(d, cfg.k, args.trials, substream(cfg.seed, 9))
    arts = []
    if args.db:
        db = Database.load(args.db)
        if (db.d, db.config.k) != (d, cfg.k):
            raise ArgumentError(f"database has d={db.d}, k={db.config.k}; calibrated d={d}, k={cfg.k}")
        db.calibration = cal
        db.save(args.db)
        arts.append(Path(args.db) / "manifest.json")
    return asdict(cal), arts


# --------------------------------------------------------------------------
# parser


def _common(p: argparse.ArgumentParser, measurement_mode: bool = True) -> None:
    g = p.add_argument_group("run configuration (overrides --config)")
    g.add_argument("--config", help="JSON file with RunConfig fields")
    g.add_argument("--seed", type=int)
    g.add_argument("--n", type=int)
    g.add_argument("--k", type=int)
    g.add_argument("--flavor", choices=["L1", "L2"])
    if measurement_mode:
        g.add_argument("--mode", choices=["clifford", "pgm"], help="sketch measurement construction")
    g.add_argument("--iota", type=float)
    g.add_argument("--delta", type=float)
    g.add_argument("--eps-hat-factor", dest="eps_hat_factor", type=float)
    g.add_argument("--eps", type=float)
    g.add_argument("--beta", type=float)
    g.add_argument("--eta", type=float)
    g.add_argument("--shadow-mode", dest="shadow_mode", choices=list(shadow.MODES))
    g.add_argument("--shadow-rows", dest="shadow_rows", type=int, help="seed-matrix rows built at ingest")
    g.add_argument("--threads", type=int, help="worker threads (default: all cores)")
    g.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qsketch", description="Sketch databases of simulated quantum states.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate Haar-random state files")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--planted", type=int, default=0, help="plant this many neighbours of state 0")
    p.add_argument("--planted-dist", type=float, default=0.1)

    p = sub.add_parser("ingest", help="add state files to a database directory")
    p.add_argument("--db", required=True)
    p.add_argument("states", nargs="+")

    p = sub.add_parser("index", help="build the LSH index for radius --eps")
    p.add_argument("--db", required=True)
    p.add_argument("--tables", type=int, help="L")
    p.add_argument("--functions", type=int, help="t, hashes per table")
    p.add_argument("--width", type=float, help="w, bucket width in sketch units")

    p = sub.add_parser("sketch", help="sketch one state file")
    p.add_argument("--state", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--db", help="use this database's measurement")
    p.add_argument("--samples", type=int, default=0, help="0 = exact sketch")

    p = sub.add_parser("shadow", help="build or query shadow seed matrices")
    ssub = p.add_subparsers(dest="shadow_cmd", required=True)
    b = ssub.add_parser("build")
    b.add_argument("--state", required=True)
    b.add_argument("--N", type=int, required=True)
    b.add_argument("--out", required=True)
    e = ssub.add_parser("estimate")
    e.add_argument("--seed-file", required=True)
    e.add_argument("--obs", required=True, help="observable file or inline text such as 'Z0 Z1'")
    e.add_argument("--mode", choices=list(shadow.MODES), dest="estimator")
    e.add_argument("--state", help="also report the exact expectation")

    p = sub.add_parser("search", help="(eps, beta)-search for a query state")
    p.add_argument("--db", required=True)
    p.add_argument("--query", required=True)

    p = sub.add_parser("join", help="(eps, beta)-join of two databases (or a self-join)")
    p.add_argument("--db", required=True)
    p.add_argument("--other")
    p.add_argument("--out", help="CSV of pairs")

    p = sub.add_parser("eqtest", help="(eps, beta)-equality test of two state files")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--method", choices=["sketch", "swap"], default="sketch")
    p.add_argument("--trials", type=int, help="swap-test trials (default from the Bernstein bound)")

    for verb, text in (("select", "(eta, eps)-selection"), ("sort", "eps-sorting")):
        p = sub.add_parser(verb, help=text + " by a local observable")
        p.add_argument("--db", required=True)
        p.add_argument("--obs", required=True)
        p.add_argument("--attach-seeds", action="store_true", help="rebuild seeds at the required size first")
        if verb == "select":
            p.add_argument("--equality", action="store_true", help="select_equality instead")

    p = sub.add_parser("bench", help="run a seeded experiment")
    p.add_argument("bench", choices=sorted(_BENCHES))
    p.add_argument("--format", choices=["json", "csv"], default="json")
    p.add_argument("--out")
    p.add_argument("--d", type=int)
    p.add_argument("--m", type=int)
    p.add_argument("--trials", type=int)

    p = sub.add_parser("calibrate", help="Monte Carlo calibration of c_tau")
    p.add_argument("--d", type=int)
    p.add_argument("--trials", type=int, default=500)
    p.add_argument("--db", help="store the calibration in this database")

    for name, sp in sub.choices.items():
        if name != "shadow":
            _common(sp)
    _common(b)
    _common(e, measurement_mode=False)
    return parser


_VERBS = {
    "gen": cmd_gen, "ingest": cmd_ingest, "index": cmd_index, "sketch": cmd_sketch, "shadow": cmd_shadow,
    "search": cmd_search, "join": cmd_join, "eqtest": cmd_eqtest, "select": cmd_select, "sort": cmd_sort,
    "bench": cmd_bench, "calibrate": cmd_calibrate,
}


def _jsonable(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (Path,)):
        return str(obj)
    if isinstance(obj, (set, tuple)):
        return list(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _emit(doc: dict, stream) -> None:
    stream.write(json.dumps(doc, default=_jsonable, sort_keys=True) + "\n")
    stream.flush()


def run_command(argv=None, stdout=None) -> int:
    stdout = stdout or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.DEBUG if getattr(args, "verbose", False) else logging.INFO,
        format="%(levelname)s %(message)s",
        stream=sys.stderr,
        force=True,
    )
    command = args.command if args.command != "shadow" else f"shadow {args.shadow_cmd}"
    cfg = None
    try:
        cfg = _resolve(args)
        result, artifacts = _VERBS[args.command](args, cfg)
    except QSketchError as exc:
        log.error("%s", exc)
        _emit({"command": command, "ok": False, "seed": cfg.seed if cfg else None,
               "error": {"type": type(exc).__name__, "message": str(exc)}, "exit_code": exc.exit_code}, stdout)
        return exc.exit_code
    _emit({"command": command, "ok": True, "seed": cfg.seed, "config": asdict(cfg), "result": result,
           "artifacts": [str(a) for a in artifacts]}, stdout)
    return 0


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
