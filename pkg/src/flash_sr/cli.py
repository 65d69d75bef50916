"""Command-line surface: conversion, synthesis, training, inference,
evaluation, benchmarking, and the HTTP service.

Exit codes: 0 success, 1 runtime failure, 2 usage error. Heavy imports are
deferred until after --threads / FLASH_THREADS is applied, since BLAS pools
size themselves at load time.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "VECLIB_MAXIMUM_THREADS", "NUMEXPR_NUM_THREADS")


def _apply_threads(count: int | None) -> None:
    if count is None:
        env = os.environ.get("FLASH_THREADS")
        if not env:
            return
        count = int(env)
    if count < 1:
        raise ValueError("--threads must be >= 1")
    for var in _THREAD_VARS:
        os.environ[var] = str(count)


def _emit(summary: dict) -> None:
    table = summary.pop("table", None)
    if table:
        print(table)
    print(json.dumps(summary, indent=2))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flash",
        description="Range-image super-resolution toolkit: geometry "
                    "conversion, synthetic data, training, inference, and "
                    "evaluation.")
    parser.add_argument("--threads", type=int, default=None,
                        help="cap numeric worker threads (env: FLASH_THREADS)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("project", help="point cloud (.bin/.ply) -> .frim")
    p.add_argument("--in", dest="in_path", required=True,
                   help="input cloud (.bin packed floats or ascii .ply)")
    p.add_argument("--out", dest="out_path", required=True,
                   help="output range image (.frim)")
    p.add_argument("--dims", default=None, help="grid HxW (default 64x1024)")
    p.add_argument("--fov", default=None,
                   help="vertical field of view degUp:degDown "
                        "(default 2.0:-24.8)")

    p = sub.add_parser("unproject", help=".frim -> point cloud (.ply/.bin)")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--out", dest="out_path", required=True)
    p.add_argument("--fov", default=None)

    p = sub.add_parser("synth", help="write paired low/high synthetic scenes")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0, help="first scene seed")
    p.add_argument("--dims", default=None, help="high-res grid HxW")
    p.add_argument("--fov", default=None)

    p = sub.add_parser("train", help="train on a directory of paired scenes")
    p.add_argument("--data", required=True, help="dir of *_low/_high.frim")
    p.add_argument("--out", required=True, help="output dir for checkpoints")
    p.add_argument("--config", default=None, help="KEY = VALUE config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config entry (repeatable)")

    p = sub.add_parser("infer", help="super-resolve a low-res .frim")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--out", dest="out_path", required=True)
    p.add_argument("--mc-samples", type=int, default=None,
                   help="enable stochastic inference with N passes")
    p.add_argument("--mc-batch", type=int, default=8)
    p.add_argument("--dropout", type=float, default=0.2)
    p.add_argument("--ply", default=None, help="also export the cloud")
    p.add_argument("--svg", default=None, help="also export a heatmap")
    p.add_argument("--fov", default=None)

    p = sub.add_parser("eval", help="compare predicted vs ground-truth .frim")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--bins", default="0:30,30:60",
                   help="distance bins lo:hi[,lo:hi...] in meters")
    p.add_argument("--report", default=None, help="write the JSON report here")
    p.add_argument("--fov", default=None)

    p = sub.add_parser("bench", help="latency of the forward pass")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--mc-samples", type=int, default=None)
    p.add_argument("--mc-batch", type=int, default=8)
    p.add_argument("--dropout", type=float, default=0.2)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)

    return parser


def _parse_overrides(pairs: list[str]) -> dict[str, str]:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ValueError(f"--set expects KEY=VALUE, got {pair!r}")
        key, value = pair.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _dispatch(args: argparse.Namespace) -> None:
    from . import ops

    if args.command == "project":
        _emit(ops.op_project(args.in_path, args.out_path, dims=args.dims,
                             fov=args.fov))
    elif args.command == "unproject":
        _emit(ops.op_unproject(args.in_path, args.out_path, fov=args.fov))
    elif args.command == "synth":
        _emit(ops.op_synth(args.out_dir, args.count, seed=args.seed,
                           dims=args.dims, fov=args.fov))
    elif args.command == "train":
        _emit(ops.op_train(args.data, args.out, config_path=args.config,
                           overrides=_parse_overrides(args.set)))
    elif args.command == "infer":
        _emit(ops.op_infer(args.ckpt, args.in_path, args.out_path,
                           mc_samples=args.mc_samples, mc_batch=args.mc_batch,
                           dropout=args.dropout, ply=args.ply, svg=args.svg,
                           fov=args.fov))
    elif args.command == "eval":
        _emit(ops.op_eval(args.pred, args.gt, bins=args.bins,
                          report_path=args.report, fov=args.fov))
    elif args.command == "bench":
        _emit(ops.op_bench(args.ckpt, reps=args.reps, warmup=args.warmup,
                           mc_samples=args.mc_samples, mc_batch=args.mc_batch,
                           dropout=args.dropout))
    elif args.command == "serve":
        import uvicorn

        from .service.app import create_app
        uvicorn.run(create_app(), host=args.host, port=args.port)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _apply_threads(args.threads)
        _dispatch(args)
    except (ValueError, OSError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
