"""``hsrtrain`` command line: gen, train, ntk, hsr-selftest, bench.

Every command writes newline-delimited JSON records. The first record of
every output is ``{"type": "config", ...}`` carrying the resolved parameters
and the library version.

A flat JSON object passed with ``--config`` supplies parameters by their
long-flag names (dashes or underscores); flags given on the command line win.

Exit codes: 0 ok, 1 usage or configuration error, 2 infeasible generation,
3 divergence, 4 mismatch (self-test or ``--compare``), 5 unreliable lambda.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__
from .data import export_csv, gen_separated, ingest_csv
from .errors import (
    ConfigError,
    DatasetFormatError,
    DegenerateDataError,
    DivergenceError,
    HsrTrainError,
    PackingInfeasibleError,
    UnreliableLambdaError,
)
from .geometry import hsr_init
from .model import ShiftPolicy, init_network
from .ntk import check_spectral_gap, h_continuous_mc
from .numerics import Rng
from .trainer import MAINTENANCE, MODES, STREAM_INIT, TrainConfig, auto_eta, convergence_fit, train

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_DIVERGED, EXIT_MISMATCH, EXIT_UNRELIABLE = range(6)
COMPARE_RTOL = 1e-8


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ------------------------------------------------------------------- output
def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


class _Sink:
    def __init__(self, fh):
        self.fh = fh

    def emit(self, type_, **fields):
        self.fh.write(json.dumps(_clean({"type": type_, **fields})) + "\n")
        self.fh.flush()


@contextmanager
def _sink(path):
    if path in (None, "-"):
        yield _Sink(sys.stdout)
    else:
        with open(path, "w") as fh:
            yield _Sink(fh)


def _config_record(sink, command, args):
    params = {k: v for k, v in vars(args).items() if k not in ("func", "config", "inject_fault")}
    sink.emit("config", command=command, version=__version__, params=params)


# ------------------------------------------------------------------ commands
def cmd_gen(args) -> int:
    if args.out is None:
        raise UsageError("gen: --out is required")
    rng = Rng(args.seed, STREAM_INIT)
    ds = gen_separated(rng, args.n, args.d, args.delta, args.labels)
    export_csv(ds, args.out)
    with _sink(args.report) as sink:
        _config_record(sink, "gen", args)
        sink.emit("summary", n=ds.n, d=ds.d, delta=ds.delta, out=str(args.out))
    return EXIT_OK


def _train_config(args) -> TrainConfig:
    try:
        shift = ShiftPolicy.parse(args.shift)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    cfg = TrainConfig(
        mode=args.mode,
        m=args.m,
        T=args.T,
        eta=args.eta,
        shift=shift,
        seed=args.seed,
        stop_threshold=args.stop_threshold,
        leaf_capacity=args.leaf_capacity,
        rebuild_fraction=args.rebuild_fraction,
        mc_samples=args.mc_samples,
        maintenance=args.maintenance,
        check_ledger=args.check_ledger,
    )
    try:
        cfg.validate()
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    return cfg


def cmd_train(args) -> int:
    if args.compare:
        return _compare(*args.compare)
    if args.data is None:
        raise UsageError("train: --data is required")
    cfg = _train_config(args)
    ds = ingest_csv(args.data)
    with _sink(args.out) as sink:
        _config_record(sink, "train", args)
        try:
            _, trace = train(cfg, ds)
        except DivergenceError as exc:
            for rec in exc.trace.records:
                sink.emit("iter", **rec.to_dict())
            sink.emit("summary", diverged=True, message=str(exc))
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_DIVERGED
        sink.emit("header", **trace.header())
        for rec in trace.records:
            sink.emit("iter", **rec.to_dict())
        rho, r2 = (None, None)
        if len(trace.records) >= 10:
            rho, r2 = convergence_fit(trace)
        sink.emit(
            "summary",
            converged=trace.converged,
            iterations=len(trace.records) - 1,
            err2_0=trace.records[0].err2,
            err2_final=trace.records[-1].err2,
            rho=rho,
            r2=r2,
            lambda_hat=trace.lambda_hat,
            eta=trace.eta,
            b=trace.b,
        )
    return EXIT_OK


def _read_err2(path) -> list[float]:
    out = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                if rec.get("type") == "iter":
                    out.append(rec["err2"])
    return out


def _compare(a, b) -> int:
    ea, eb = _read_err2(a), _read_err2(b)
    first_bad, worst = None, 0.0
    for t, (x, y) in enumerate(zip(ea, eb)):
        rel = abs(x - y) / max(abs(x), abs(y), np.finfo(float).tiny)
        worst = max(worst, rel)
        if rel > COMPARE_RTOL and first_bad is None:
            first_bad = t
    ok = len(ea) == len(eb) and first_bad is None
    _Sink(sys.stdout).emit(
        "compare", a=str(a), b=str(b), len_a=len(ea), len_b=len(eb), max_rel=worst, first_mismatch=first_bad, rtol=COMPARE_RTOL, ok=ok
    )
    return EXIT_OK if ok else EXIT_MISMATCH


def cmd_ntk(args) -> int:
    if not args.b:
        raise UsageError("ntk: at least one --b value is required")
    ds = ingest_csv(args.data)
    unreliable = False
    with _sink(args.out) as sink:
        _config_record(sink, "ntk", args)
        for j, b in enumerate(args.b):
            rep = h_continuous_mc(Rng(args.seed, 100 + j), ds, b, args.mc_samples)
            gap = check_spectral_gap(rep, ds.delta, ds.n, b)
            unreliable |= not gap.reliable
            sink.emit(
                "kernel",
                b=b,
                lambda_hat=rep.lambda_min,
                lambda_se=rep.lambda_se,
                lower_bound=gap.lower_bound,
                upper_bound=gap.upper_bound,
                reliable=gap.reliable,
                passed=gap.ok and gap.reliable,
            )
    if unreliable:
        print("error: lambda estimate within 3 standard errors of the lower bound; raise --mc-samples", file=sys.stderr)
        return EXIT_UNRELIABLE
    return EXIT_OK


def selftest(n: int, dims, steps: int, seed: int, fault: bool = False, leaf_capacity: int = 16):
    """Replay one random insert/delete/query trace per dimension on both backends.

    Returns ``(ok, first_divergence)`` where the latter describes the first
    step whose results differ, or ``None``.
    """
    for d in dims:
        rng = Rng(seed, 10_000 + d)
        pts = rng.normal((n, d))
        tree = hsr_init(pts, "tree", dim=d, leaf_capacity=leaf_capacity, _fault=fault)
        naive = hsr_init(pts, "naive", dim=d)
        for step in range(steps):
            op = int(rng.integers(3, 1)[0])
            live = tree.ids()
            if op == 0:
                k = 1 + int(rng.integers(8, 1)[0])
                new = rng.normal((k, d))
                got, want = tree.insert_many(new), naive.insert_many(new)
            elif op == 1 and len(live):
                k = min(len(live), 1 + int(rng.integers(8, 1)[0]))
                victims = live[rng.permutation(len(live))[:k]]
                tree.delete_many(victims)
                naive.delete_many(victims)
                got, want = tree.ids(), naive.ids()
            else:
                a = rng.normal(d)
                b = float(rng.normal(1)[0]) * float(np.linalg.norm(a))
                got, want = tree.query(a, b), naive.query(a, b)
            if not np.array_equal(got, want):
                return False, {"d": d, "step": step, "op": ("insert", "delete", "query")[op], "tree": len(got), "naive": len(want)}
    return True, None


def cmd_hsr_selftest(args) -> int:
    ok, where = selftest(args.n, args.dims, args.steps, args.seed, fault=args.inject_fault)
    with _sink(args.out) as sink:
        _config_record(sink, "hsr-selftest", args)
        sink.emit("selftest", passed=ok, first_divergence=where)
    return EXIT_OK if ok else EXIT_MISMATCH


def fit_exponent(ms, ops) -> float:
    """Least-squares slope of ``log ops`` against ``log m``."""
    x, y = np.log(np.asarray(ms, float)), np.log(np.asarray(ops, float))
    xc = x - x.mean()
    return float(xc @ (y - y.mean()) / (xc @ xc))


def bench(ds, m_grid, modes, iters: int, seed: int, maintenance: str = "requery", mc_samples: int = 100_000, shift=ShiftPolicy()):
    """Median per-iteration cost for each (m, mode); returns rows and per-mode exponents."""
    rows = []
    for m in m_grid:
        b = shift.resolve(m)
        est = auto_eta(ds, b, mc_samples, Rng(seed, 1))
        for mode in modes:
            cfg = TrainConfig(mode=mode, m=m, T=iters, seed=seed, shift=shift, stop_threshold=1e-300, maintenance=maintenance)
            net = init_network(Rng(seed, STREAM_INIT), ds.d, m, shift)
            _, tr = train(cfg, ds, net=net, eta_info=(est.eta, est.lambda_hat, est.lambda_se))
            steps = tr.records[:-1]  # the final record has no update or maintenance phase
            ops = float(np.median([r.ops_total for r in steps]))
            rows.append(
                {
                    "m": m,
                    "mode": mode,
                    "ops_per_iter": ops,
                    "dense_equiv": ds.n * m,
                    "ratio": ops / (ds.n * m),
                    "ms_per_iter": float(np.median([r.millis for r in steps])),
                    "init_ops": tr.init_ops,
                    "b": b,
                }
            )
    exps = {}
    if len(m_grid) >= 2:
        for mode in modes:
            sel = [r for r in rows if r["mode"] == mode]
            exps[mode] = fit_exponent([r["m"] for r in sel], [r["ops_per_iter"] for r in sel])
    return rows, exps


def cmd_bench(args) -> int:
    if args.data:
        ds = ingest_csv(args.data)
    else:
        ds = gen_separated(Rng(args.seed, 2), args.n, args.d, args.delta)
    with _sink(args.out) as sink:
        _config_record(sink, "bench", args)
        rows, exps = bench(ds, sorted(args.m_grid), args.modes, args.iters, args.seed, args.maintenance, args.mc_samples)
        for r in rows:
            sink.emit("bench", **r)
        sink.emit("fit", exponents=exps)
    return EXIT_OK


# -------------------------------------------------------------------- parser
def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hsrtrain", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"hsrtrain {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a separated unit-norm dataset")
    g.add_argument("--n", type=int, default=32)
    g.add_argument("--d", type=int, default=8)
    g.add_argument("--delta", type=float, default=0.5)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--labels", choices=("pm-one", "uniform"), default="pm-one")
    g.add_argument("--out", help="CSV path (required)")
    g.add_argument("--report", help="summary output (default stdout)")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a network and write its trace")
    t.add_argument("--data", help="dataset CSV")
    t.add_argument("--mode", choices=MODES, default="dense")
    t.add_argument("--m", type=int, default=1024, help="width")
    t.add_argument("--T", type=int, default=1000, help="iteration cap")
    t.add_argument("--eta", type=float, default=None, help="learning rate (default: lambda_hat / (4 n^2))")
    t.add_argument("--shift", default="default", help="default | alpha:<a> | fixed:<b>")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--stop-threshold", type=float, default=1e-3)
    t.add_argument("--leaf-capacity", type=int, default=16)
    t.add_argument("--rebuild-fraction", type=float, default=0.25)
    t.add_argument("--mc-samples", type=int, default=100_000)
    t.add_argument("--maintenance", choices=MAINTENANCE, default="requery")
    t.add_argument("--check-ledger", action="store_true", help="compare every ledger with a fresh scan")
    t.add_argument("--out", help="trace output (default stdout)")
    t.add_argument("--compare", nargs=2, metavar=("TRACE_A", "TRACE_B"), help="compare two traces' err2 columns")
    t.set_defaults(func=cmd_train)

    k = sub.add_parser("ntk", help="spectral gap of the continuous kernel")
    k.add_argument("--data", required=True)
    k.add_argument("--b", type=float, nargs="*", default=None, help="one or more shifts")
    k.add_argument("--mc-samples", type=int, default=1_000_000)
    k.add_argument("--seed", type=int, default=0)
    k.add_argument("--out")
    k.set_defaults(func=cmd_ntk)

    s = sub.add_parser("hsr-selftest", help="replay random traces on tree and naive backends")
    s.add_argument("--n", type=int, default=2000, help="initial points per trace")
    s.add_argument("--dims", type=int, nargs="+", default=[2, 4, 6, 8, 12])
    s.add_argument("--steps", type=int, default=300, help="operations per trace")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
    s.set_defaults(func=cmd_hsr_selftest)

    c = sub.add_parser("bench", help="per-iteration cost against width")
    c.add_argument("--data", help="dataset CSV (default: generate one)")
    c.add_argument("--n", type=int, default=32)
    c.add_argument("--d", type=int, default=8)
    c.add_argument("--delta", type=float, default=0.5)
    c.add_argument("--m-grid", type=int, nargs="+", default=[1024, 4096, 16384])
    c.add_argument("--modes", nargs="+", choices=MODES, default=list(MODES))
    c.add_argument("--iters", type=int, default=20)
    c.add_argument("--maintenance", choices=MAINTENANCE, default="requery")
    c.add_argument("--mc-samples", type=int, default=100_000)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out")
    c.set_defaults(func=cmd_bench)

    for sp in (g, t, k, s, c):
        sp.add_argument("--config", help="flat JSON file of parameters")
    return p


def _apply_config(parser, sub, argv):
    """Re-parse with the config file's values installed as defaults."""
    args = parser.parse_args(argv)
    if not getattr(args, "config", None):
        return args
    try:
        raw = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config: {exc}") from None
    if not isinstance(raw, dict):
        raise UsageError("config must be a flat JSON object")
    known = {a.dest: a for a in sub.choices[args.command]._actions if a.dest not in ("help", "config", "inject_fault")}
    values = {}
    for key, val in raw.items():
        dest = key.replace("-", "_")
        if dest not in known:
            raise UsageError(f"unknown config key {key!r}")
        if isinstance(val, (dict,)):
            raise UsageError(f"config key {key!r} must be a scalar or list")
        values[dest] = val
    sub.choices[args.command].set_defaults(**values)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    try:
        args = _apply_config(parser, sub, argv)
        if not getattr(args, "func", None):
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except PackingInfeasibleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except UnreliableLambdaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNRELIABLE
    except (ConfigError, DatasetFormatError, DegenerateDataError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except HsrTrainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
