"""Command-line entry point: ``angsync {gen,solve,train,sweep,snl}``.

Configuration comes from a flat ``key=value`` file (``--config``) with
``--set key=value`` overrides on top.  Exit codes: 0 ok, 1 usage or input
error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import snl
from .graph import read_edgelist, write_edgelist
from .metrics import mse_k
from .model import (LOSSES, PGDConfig, TrainConfig, TrainingDiverged, evaluate_losses,
                    save_checkpoint, train)
from .spectral import SOLVERS
from .synth import SyntheticConfig, gen_offset_graph, read_ground_truth, write_ground_truth

log = logging.getLogger("angsync")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2
WORKERS_ENV = "ANGSYNC_MAX_WORKERS"
BASE_COLUMNS = ["model", "n", "p", "k", "eta", "option", "seed", "method", "loss", "mse"]
TAIL_COLUMNS = ["ane", "upset", "cycle", "runtime_s"]


class UsageError(Exception):
    pass


class NumericalFailure(Exception):
    pass


# -- config --------------------------------------------------------------------

def parse_config(text: str) -> dict:
    out = {}
    for num, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {num}: expected key=value, got {raw!r}")
        key, val = line.split("=", 1)
        out[key.strip()] = val.strip()
    return out


def load_config(path=None, overrides=()) -> dict:
    cfg = {}
    if path is not None:
        try:
            cfg.update(parse_config(Path(path).read_text()))
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from exc
    for item in overrides or ():
        cfg.update(parse_config(item))
    return cfg


def _get(cfg, key, cast, default):
    if key not in cfg:
        return default
    try:
        return cast(cfg[key])
    except ValueError as exc:
        raise UsageError(f"bad value for {key}: {cfg[key]!r}") from exc


def _list(cfg, key, cast, default):
    if key not in cfg:
        return list(default)
    try:
        return [cast(v.strip()) for v in cfg[key].split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"bad list for {key}: {cfg[key]!r}") from exc


def _flag(v: str) -> bool:
    v = v.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off", ""):
        return False
    raise ValueError(v)


def synthetic_config(cfg) -> SyntheticConfig:
    try:
        return SyntheticConfig(
            model=_get(cfg, "model", str, "ERO"),
            n=_get(cfg, "n", int, 360),
            p=_get(cfg, "p", float, 0.15),
            k=_get(cfg, "k", int, 1),
            eta=_get(cfg, "eta", float, 0.0),
            option=_get(cfg, "option", int, 1),
            seed=_get(cfg, "seed", int, 0),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


# -- records -------------------------------------------------------------------

@dataclass
class RunRecord:
    model: str = ""
    n: int | None = None
    p: float | None = None
    k: int = 1
    eta: float | None = None
    option: int | None = None
    seed: int | None = None
    method: str = ""
    loss: str = ""
    mse: float | None = None
    mse_layers: list = field(default_factory=list)
    ane: float | None = None
    upset: float | None = None
    cycle: float | None = None
    runtime_s: float | None = None
    error: str = ""

    def sort_key(self):
        def num(x):
            return (x is None, x if x is not None else 0)
        return (self.model, num(self.n), num(self.p), self.k, num(self.eta), num(self.option),
                num(self.seed), self.method, self.loss)

    def check_finite(self):
        for v in [self.mse, self.ane, self.upset, self.cycle, *self.mse_layers]:
            if v is not None and not math.isfinite(v):
                raise NumericalFailure(f"non-finite metric in {self.method} run")


def columns(max_k: int) -> list:
    return BASE_COLUMNS + [f"mse_l{l}" for l in range(1, max_k + 1)] + TAIL_COLUMNS


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def format_csv(records) -> str:
    records = sorted(records, key=RunRecord.sort_key)
    max_k = max([r.k for r in records] + [1])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns(max_k))
    for r in records:
        layers = list(r.mse_layers) + [None] * (max_k - len(r.mse_layers))
        w.writerow([_fmt(v) for v in (r.model, r.n, r.p, r.k, r.eta, r.option, r.seed,
                                      r.method, r.loss, r.mse, *layers,
                                      r.ane, r.upset, r.cycle, r.runtime_s)])
    return buf.getvalue()


# -- angles files ----------------------------------------------------------------

def write_angles(angles, path):
    angles = np.asarray(angles, dtype=np.float64)
    if angles.ndim == 1:
        angles = angles[:, None]
    n, k = angles.shape
    lines = [f"# n={n} k={k}"]
    for i in range(n):
        lines.append(" ".join([str(i)] + [repr(float(v)) for v in angles[i]]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_angles(path):
    rows = []
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        rows.append((int(parts[0]), [float(v) for v in parts[1:]]))
    rows.sort()
    return np.array([v for _, v in rows], dtype=np.float64)


# -- shared evaluation -----------------------------------------------------------

def _score(rec: RunRecord, g, angles, theta):
    k = rec.k
    rec.upset, rec.cycle = evaluate_losses(g, angles, k)
    if theta is not None:
        rec.mse, _, rec.mse_layers = mse_k(angles, theta, k, return_perm=True)
    rec.check_finite()
    return rec


def run_solver(method, g, k):
    if method not in SOLVERS:
        raise UsageError(f"unknown method {method!r}; expected one of {sorted(SOLVERS)}")
    with np.errstate(over="raise", invalid="raise", divide="raise"):
        try:
            angles = np.asarray(SOLVERS[method](g, k), dtype=np.float64).reshape(g.n, k)
        except (FloatingPointError, np.linalg.LinAlgError) as exc:
            raise NumericalFailure(f"{method}: {exc}") from exc
    if not np.all(np.isfinite(angles)):
        raise NumericalFailure(f"{method} produced non-finite angles")
    return angles


def run_training(g, k, loss, seed, epochs=1000, pgd_steps=5, tau=1.0):
    if loss not in LOSSES:
        raise UsageError(f"unknown loss {loss!r}; expected one of {LOSSES}")
    try:
        return train(g, None, k, TrainConfig(loss=loss, seed=seed, max_epochs=epochs, tau=tau),
                     PGDConfig(steps=pgd_steps))
    except (TrainingDiverged, FloatingPointError, np.linalg.LinAlgError) as exc:
        raise NumericalFailure(str(exc)) from exc


# -- commands --------------------------------------------------------------------

def cmd_gen(args):
    cfg = load_config(args.config, args.set)
    sc = synthetic_config(cfg)
    out = args.out or cfg.get("out") or f"{sc.model}_n{sc.n}_seed{sc.seed}"
    g, gt = gen_offset_graph(sc)
    write_edgelist(g, f"{out}.edges", sc.k)
    write_ground_truth(gt, g, f"{out}.truth")
    print(f"wrote {out}.edges ({g.m} edges) and {out}.truth")
    return EXIT_OK


def _load_graph(path):
    try:
        return read_edgelist(path)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read graph {path}: {exc}") from exc


def _load_truth(path):
    if path is None:
        return None
    try:
        return read_ground_truth(path)[0]
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read ground truth {path}: {exc}") from exc


def cmd_solve(args):
    g, k_file = _load_graph(args.graph)
    k = args.k or k_file
    theta = _load_truth(args.truth)
    t0 = time.perf_counter()
    angles = run_solver(args.method, g, k)
    rec = RunRecord(n=g.n, k=k, method=args.method)
    if args.timing:
        rec.runtime_s = time.perf_counter() - t0
    _score(rec, g, angles, theta)
    if args.out:
        write_angles(angles, args.out)
    sys.stdout.write(format_csv([rec]))
    return EXIT_OK


def cmd_train(args):
    g, k_file = _load_graph(args.graph)
    k = args.k or k_file
    theta = _load_truth(args.truth)
    seeds = _list({"s": args.seeds}, "s", int, [0])
    records = []
    for seed in seeds:
        t0 = time.perf_counter()
        res = run_training(g, k, args.loss, seed, args.epochs, args.pgd_steps, args.tau)
        rec = RunRecord(n=g.n, k=k, seed=seed, method="gnnsync", loss=args.loss)
        if args.timing:
            rec.runtime_s = time.perf_counter() - t0
        _score(rec, g, res.angles, theta)
        records.append(rec)
        if args.out:
            write_angles(res.angles, f"{args.out}.seed{seed}.angles")
            save_checkpoint(res.model.named_tensors(), f"{args.out}.seed{seed}.ckpt")
    sys.stdout.write(format_csv(records))
    return EXIT_OK


@dataclass(frozen=True)
class SweepJob:
    sc: SyntheticConfig
    method: str
    loss: str
    epochs: int
    timing: bool


def _run_job(job: SweepJob) -> RunRecord:
    sc = job.sc
    rec = RunRecord(sc.model, sc.n, sc.p, sc.k, sc.eta, sc.option, sc.seed, job.method, job.loss)
    try:
        g, gt = gen_offset_graph(sc)
        t0 = time.perf_counter()
        if job.method == "gnnsync":
            angles = run_training(g, sc.k, job.loss, sc.seed, job.epochs).angles
        else:
            angles = run_solver(job.method, g, sc.k)
        if job.timing:
            rec.runtime_s = time.perf_counter() - t0
        _score(rec, g, angles, gt.theta)
    except (NumericalFailure, RuntimeError, ValueError) as exc:
        rec.mse = rec.upset = rec.cycle = rec.runtime_s = None
        rec.mse_layers = []
        rec.error = f"{type(exc).__name__}: {exc}"
    return rec


def sweep_jobs(cfg) -> list:
    methods = _list(cfg, "methods", str, ["spectral", "spectral_rn", "gpm", "trivial"])
    losses = _list(cfg, "losses", str, ["upset"])
    for m in methods:
        if m != "gnnsync" and m not in SOLVERS:
            raise UsageError(f"unknown method {m!r}")
    for lo in losses:
        if lo not in LOSSES:
            raise UsageError(f"unknown loss {lo!r}")
    epochs = _get(cfg, "epochs", int, 1000)
    timing = _get(cfg, "timing", _flag, False)
    grid = itertools.product(
        _list(cfg, "model", str, ["ERO"]), _list(cfg, "n", int, [360]),
        _list(cfg, "p", float, [0.15]), _list(cfg, "k", int, [1]),
        _list(cfg, "eta", float, [0.0]), _list(cfg, "option", int, [1]),
        _list(cfg, "seed", int, [0]))
    jobs = []
    for model, n, p, k, eta, option, seed in grid:
        try:
            sc = SyntheticConfig(model, n, p, k, eta, option, seed)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        for m in methods:
            for lo in (losses if m == "gnnsync" else [""]):
                jobs.append(SweepJob(sc, m, lo, epochs, timing))
    return jobs


def worker_count(requested):
    cap = os.environ.get(WORKERS_ENV)
    n = requested if requested else 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise UsageError(f"{WORKERS_ENV} must be an integer") from None
    return max(1, n)


def run_sweep(cfg, workers=1) -> tuple:
    jobs = sweep_jobs(cfg)
    workers = worker_count(workers)
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            records = list(ex.map(_run_job, jobs))
    else:
        records = [_run_job(j) for j in jobs]
    return format_csv(records), [r for r in records if r.error]


def cmd_sweep(args):
    cfg = load_config(args.config, args.set)
    workers = args.workers or _get(cfg, "workers", int, 1)
    text, failed = run_sweep(cfg, workers)
    out = args.out or cfg.get("out")
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)
    for r in failed:
        print(f"failed: {r.model} n={r.n} p={r.p} k={r.k} eta={r.eta} seed={r.seed} "
              f"{r.method} {r.loss}: {r.error}", file=sys.stderr)
    return EXIT_NUMERIC if failed else EXIT_OK


def cmd_snl(args):
    cfg = load_config(args.config, args.set)
    seed = _get(cfg, "seed", int, 0)
    method = args.method or cfg.get("method", "spectral")
    if args.cloud:
        try:
            cloud, _ = snl.read_cloud(args.cloud)
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read cloud: {exc}") from exc
    else:
        try:
            cloud = snl.synth_cloud(cfg.get("shape", "uniform-square"),
                                    _get(cfg, "n", int, 400), seed)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    if method == "exact":
        solver = "exact"
    elif method in SOLVERS:
        solver = lambda g: SOLVERS[method](g, 1)  # noqa: E731
    else:
        raise UsageError(f"unknown method {method!r}")
    eta = _get(cfg, "eta", float, 0.0)
    t0 = time.perf_counter()
    try:
        res = snl.run_pipeline(cloud, solver, eta=eta,
                               k_patch=_get(cfg, "k_patch", int, 50),
                               k_thres=_get(cfg, "k_thres", int, 6),
                               option=_get(cfg, "option", int, 1), seed=seed,
                               circular=_get(cfg, "circular_shift", _flag, False))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    rec = RunRecord(model="SNL", n=cloud.n, eta=eta, seed=seed, method=method, ane=res.ane)
    if args.timing:
        rec.runtime_s = time.perf_counter() - t0
    rec.check_finite()
    out = args.out or cfg.get("out")
    if out:
        snl.write_cloud(res.cloud, out, res.ane)
    sys.stdout.write(format_csv([rec]))
    return EXIT_OK


# -- parser ----------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser():
    ap = _Parser(prog="angsync", description="Angular synchronization toolkit.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, config=True):
        if config:
            p.add_argument("--config", help="key=value config file")
            p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                           help="override a config key (repeatable)")
        p.add_argument("--timing", action="store_true", help="fill the runtime_s column")

    p = sub.add_parser("gen", help="generate a synthetic offset graph")
    common(p)
    p.add_argument("-o", "--out", help="output prefix (.edges and .truth are appended)")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("solve", help="run a classical synchronizer")
    common(p, config=False)
    p.add_argument("graph")
    p.add_argument("--method", default="spectral", choices=sorted(SOLVERS))
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--truth")
    p.add_argument("-o", "--out", help="angles output file")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("train", help="train GNNSync on one graph")
    common(p, config=False)
    p.add_argument("graph")
    p.add_argument("--loss", default="upset", choices=LOSSES)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--seeds", default="0", help="comma-separated seeds")
    p.add_argument("--epochs", type=int, default=1000)
    p.add_argument("--pgd-steps", type=int, default=5)
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--truth")
    p.add_argument("-o", "--out", help="output prefix for angles and checkpoints")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="grid of configurations to CSV")
    common(p)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("snl", help="sensor network localization pipeline")
    common(p)
    p.add_argument("--cloud", help="input point cloud (x y per line)")
    p.add_argument("--method", help="spectral, spectral_rn, gpm, trivial or exact")
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_snl)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"angsync: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalFailure as exc:
        print(f"angsync: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
