"""Command-line entry point: ``run``, ``compare`` and ``render-preview``."""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from contextlib import nullcontext
from pathlib import Path

import numpy as np
import yaml

from ..generator.container import write_sample
from ..generator.pipeline import CsgPipeline
from ..generator.sampling import SeedString, stream_id
from ..generator.toy import ToyPipeline
from .config import ConfigError, load_config
from .experiments import run_experiment
from .records import (
    RecordError,
    comparison_rows,
    format_table,
    load_record,
    rows_to_csv,
    target_table,
    write_record,
)

OUT_ENV = "HYBRIDGEN_OUT"
DEFAULT_OUT = "runs"

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


def default_out_dir() -> str:
    return os.environ.get(OUT_ENV, DEFAULT_OUT)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hybridgen", description="Optimize a procedural data generator "
                                     "for a downstream network and compare against baselines.")
    parser.add_argument("--threads", type=int, default=1, help="worker threads for independent probe "
                        "evaluations (default 1)")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one configured experiment")
    run.add_argument("--config", required=True, help="experiment YAML file")
    run.add_argument("--seed", type=int, help="override the master seed")
    run.add_argument("--out", help=f"output root (default: config out_dir, ${OUT_ENV}, or ./{DEFAULT_OUT})")
    run.add_argument("--quiet", action="store_true", help="no per-step progress")

    cmp_ = sub.add_parser("compare", help="tabulate run records for plotting")
    cmp_.add_argument("--runs", nargs="+", required=True, help="run directories")
    cmp_.add_argument("--out", required=True, help="CSV path")
    cmp_.add_argument("--target", type=float, help="loss target for the evaluations-to-target table")
    cmp_.add_argument("--window", type=int, default=1, help="trailing-mean window for the target test")

    prev = sub.add_parser("render-preview", help="write sampled images and targets for inspection")
    prev.add_argument("--beta", required=True, help="YAML/JSON file: full vector or name -> value overrides")
    prev.add_argument("--n", type=int, required=True, help="number of samples")
    prev.add_argument("--out", required=True, help="output directory")
    prev.add_argument("--seed", type=int, default=0)
    prev.add_argument("--pipeline", choices=("csg", "toy"), default="csg")
    prev.add_argument("--task", choices=("normal", "depth"), default="normal")
    prev.add_argument("--resolution", type=int, nargs=2, default=(16, 16), metavar=("H", "W"))
    return parser


def _fail(message: str, code: int) -> int:
    print(f"hybridgen: error: {message}", file=sys.stderr)
    return code


def cmd_run(args) -> int:
    try:
        config = load_config(args.config)
    except ConfigError as exc:
        return _fail(str(exc), EXIT_USAGE)
    if args.seed is not None:
        config = config.with_seed(args.seed)
    root = Path(args.out or config.out_dir or default_out_dir())
    directory = root / f"{config.name}-seed{config.seed}"

    def progress(state):
        if not args.quiet:
            rec = state.trajectory[-1]
            print(f"t={rec['t']:4d}  L={rec['L']:.4f}  generator_calls={rec['generator_calls']}  "
                  f"sgd_steps={rec['sgd_steps']}", flush=True)

    pool = ThreadPoolExecutor(args.threads) if args.threads > 1 else nullcontext()
    try:
        with pool as executor:
            result = run_experiment(config, executor=executor, progress=progress)
    except Exception as exc:  # noqa: BLE001 - report any failure as a diagnostic
        return _fail(f"run failed: {type(exc).__name__}: {exc}", EXIT_RUNTIME)
    record = write_record(directory, result.trajectory, config, result.wall_ms)
    print(f"wrote {directory}  best L={record.summary['best_L']:.4f}  "
          f"generator_calls={record.summary['generator_calls']}  sgd_steps={record.summary['sgd_steps']}")
    return EXIT_OK


def cmd_compare(args) -> int:
    try:
        records = [load_record(d) for d in args.runs]
    except RecordError as exc:
        return _fail(str(exc), EXIT_RUNTIME)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(rows_to_csv(comparison_rows(records)))
    print(f"wrote {args.out}")
    if args.target is not None:
        sys.stdout.write(format_table(target_table(records, args.target, args.window), args.target))
    return EXIT_OK


def load_beta(path: str | Path, layout) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"beta file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: cannot parse: {exc}") from None
    if isinstance(data, list):
        if len(data) != layout.size:
            raise ConfigError(f"{path}: expected {layout.size} values, got {len(data)}")
        return layout.clip(np.array(data, dtype=np.float64))
    if isinstance(data, dict):
        beta = layout.default().values.copy()
        for name, value in data.items():
            if name not in layout.names:
                raise ConfigError(f"{path}: unknown decision entry {name!r}")
            beta[layout.index(name)] = float(value)
        return layout.clip(beta)
    raise ConfigError(f"{path}: expected a list of values or a mapping of entry names")


def write_pgm(path: Path, image: np.ndarray) -> None:
    h, w = image.shape[:2]
    pixels = np.clip(np.round(image.reshape(h, w) * 255.0), 0, 255).astype(np.uint8)
    path.write_bytes(f"P5\n{w} {h}\n255\n".encode() + pixels.tobytes())


def write_pfm(path: Path, data: np.ndarray) -> None:
    """Portable float map: little-endian, rows stored bottom to top."""
    h, w = data.shape[:2]
    channels = data.shape[2] if data.ndim == 3 else 1
    if channels not in (1, 3):
        raise ValueError("PFM holds 1 or 3 channels")
    tag = "PF" if channels == 3 else "Pf"
    body = np.ascontiguousarray(data.reshape(h, w, channels)[::-1], dtype="<f4").tobytes()
    path.write_bytes(f"{tag}\n{w} {h}\n-1.0\n".encode() + body)


def read_pfm(path: Path) -> np.ndarray:
    raw = path.read_bytes()
    tag, dims, scale, body = raw.split(b"\n", 3)
    w, h = (int(v) for v in dims.split())
    channels = 3 if tag == b"PF" else 1
    dtype = "<f4" if float(scale) < 0 else ">f4"
    return np.frombuffer(body, dtype=dtype).reshape(h, w, channels)[::-1].astype(np.float64)


def cmd_render_preview(args) -> int:
    if args.n < 0:
        return _fail("--n must be nonnegative", EXIT_USAGE)
    res = tuple(args.resolution)
    pipeline = ToyPipeline(resolution=res) if args.pipeline == "toy" else CsgPipeline(resolution=res, task=args.task)
    try:
        beta = load_beta(args.beta, pipeline.layout)
    except ConfigError as exc:
        return _fail(str(exc), EXIT_USAGE)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stream = stream_id("preview", args.seed)
    for k in range(args.n):
        sample = pipeline(beta, SeedString(stream, k))
        write_pgm(out / f"sample_{k:03d}_image.pgm", sample.image)
        write_pfm(out / f"sample_{k:03d}_target.pfm", sample.target)
        write_sample(out / f"sample_{k:03d}.sample", sample)
    (out / "beta.json").write_text(json.dumps(dict(zip(pipeline.layout.names, map(float, beta))), indent=2) + "\n")
    print(f"wrote {args.n} samples to {out}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads < 1:
        return _fail("--threads must be at least 1", EXIT_USAGE)
    if args.command == "run":
        return cmd_run(args)
    if args.command == "compare":
        return cmd_compare(args)
    return cmd_render_preview(args)


if __name__ == "__main__":
    sys.exit(main())
