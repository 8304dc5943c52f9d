"""Command-line entry point: ``run``, ``validate`` and ``synth``."""

from __future__ import annotations

import argparse
import csv
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import analysis as an
from . import experiments as ex
from .core import Skeleton, validate_skeleton
from .models import MODEL_KINDS, save_csv, synth_gaussian, synth_logistic, synth_nonident
from .samplers import BoundViolation, ConfigurationError, NoEventError


def atomic_write(path: Path, text: str) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def skeleton_csv(sk: Skeleton) -> str:
    d = sk.dim
    header = ["t"] + [f"xi_{i + 1}" for i in range(d)] + [f"theta_{i + 1}" for i in range(d)]
    lines = [",".join(header)]
    for k in range(len(sk)):
        row = [an.fmt(sk.times[k])] + [an.fmt(x) for x in sk.positions[k]] + [str(int(v)) for v in sk.velocities[k]]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def read_skeleton(path) -> Skeleton:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError("empty skeleton file")
    header = rows[0]
    d = sum(1 for h in header if h.startswith("xi_"))
    if header != ["t"] + [f"xi_{i + 1}" for i in range(d)] + [f"theta_{i + 1}" for i in range(d)]:
        raise ValueError(f"unexpected skeleton header {header}")
    data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float).reshape(-1, 1 + 2 * d)
    return Skeleton(data[:, 0], data[:, 1:1 + d], data[:, 1 + d:])


def samples_csv(samples: an.SampleSet) -> str:
    d = samples.positions.shape[1]
    lines = [",".join(["t"] + [f"xi_{i + 1}" for i in range(d)])]
    for t, x in zip(samples.times, samples.positions):
        lines.append(",".join([an.fmt(t)] + [an.fmt(v) for v in x]))
    return "\n".join(lines) + "\n"


def _cell_job(args):
    cfg, cell, out = args
    res = ex.run_cell(cfg, cell)
    met = res["metrics"]
    cdir = Path(out) / "cells" / cell.key
    if cfg.write_skeleton and res["skeleton"] is not None:
        atomic_write(cdir / "skeleton.csv", skeleton_csv(res["skeleton"]))
    if cfg.write_samples and res["samples"] is not None:
        atomic_write(cdir / "samples.csv", samples_csv(res["samples"]))
    atomic_write(cdir / "metrics.json", an.metrics_json(met))
    return met


def run(cfg: ex.ExperimentConfig, out: Path, workers: int = 1) -> dict:
    """Run every cell of the sweep and write the outputs under ``out``."""
    jobs = [(cfg, c, str(out)) for c in ex.cells(cfg)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            metrics = list(pool.map(_cell_job, jobs))
    else:
        metrics = [_cell_job(j) for j in jobs]
    summary = ex.summarize(cfg, metrics)
    wall = sum(float(m.get("wall_time", 0.0)) for m in metrics)
    for m in metrics:
        m.pop("wall_time", None)
    doc = {"experiment": cfg.experiment, "config": ex.config_text(cfg).splitlines(),
           "summary": summary, "cells": {ex.Cell(m["method"], m["n"], m["replicate"]).key: m for m in metrics}}
    atomic_write(out / "metrics.json", an.metrics_json(doc))
    atomic_write(out / "metrics.csv", an.metrics_csv(ex.long_rows(cfg, metrics)))
    atomic_write(out / "timing.json", an.metrics_json({"wall_time": wall}))
    atomic_write(out / "config.txt", ex.config_text(cfg))
    if len(jobs) == 1:
        # single-cell runs also expose their files at the top level
        key = jobs[0][1].key
        for name in ("skeleton.csv", "samples.csv"):
            src = out / "cells" / key / name
            if src.exists():
                atomic_write(out / name, src.read_text())
    return doc


def _cmd_run(args) -> int:
    lines = Path(args.config).read_text().splitlines() if args.config else []
    cfg = ex.make_config(lines, args.set or [])
    out = Path(args.out)
    try:
        doc = run(cfg, out, args.workers)
    except BoundViolation as exc:
        print(f"bound violation: {exc}", file=sys.stderr)
        print(f"  coordinate={exc.coordinate} time={exc.time!r} position={exc.position.tolist()} "
              f"velocity={exc.velocity.tolist()} rate={exc.rate!r} bound={exc.bound!r}", file=sys.stderr)
        return 3
    except NoEventError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    for key, row in doc["summary"].items():
        if "slope" in row:
            print(f"{key}: slope={row['slope']:.3f}")
    print(f"wrote {out}")
    return 0


def _cmd_validate(args) -> int:
    try:
        sk = read_skeleton(args.skeleton)
    except (OSError, ValueError) as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return 1
    ok, msgs = validate_skeleton(sk)
    for m in msgs:
        print(m)
    print("valid" if ok else "invalid")
    return 0 if ok else 1


def _cmd_synth(args) -> int:
    if args.model == "gaussian":
        model = synth_gaussian(args.n, args.xi0[0] if args.xi0 else 1.0, seed=args.seed)
    elif args.model == "logistic":
        xi = tuple(args.xi0) if args.xi0 else (1.0, 2.0)
        model = synth_logistic(args.n, len(xi), xi, args.seed)
    else:
        xi = tuple(args.xi0) if args.xi0 else (-2.0, 1.0)
        model = synth_nonident(args.n, xi, args.seed)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_csv(model, args.out)
    print(f"wrote {args.n} rows to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="zigzag", description="Zig-Zag sampling experiments")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment sweep")
    r.add_argument("--config", help="key=value config file")
    r.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--out", default="out")
    r.set_defaults(func=_cmd_run)

    v = sub.add_parser("validate", help="check a skeleton CSV")
    v.add_argument("--skeleton", required=True)
    v.set_defaults(func=_cmd_validate)

    s = sub.add_parser("synth", help="write a synthetic dataset as CSV")
    s.add_argument("--model", required=True, choices=MODEL_KINDS)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--xi0", type=float, nargs="+", help="true parameter")
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_synth)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "workers", 1) < 1:
        print("error: --workers must be at least 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (ConfigurationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
