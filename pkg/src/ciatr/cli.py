"""Command-line entry point.

Exit codes: 0 ok, 2 config error, 3 I/O error, 4 non-finite loss,
5 checkpoint/data shape mismatch.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from .augment import augment_trace
from .config import ConfigError, RunConfig, load_config
from .core import STREAM_DATA, STREAM_PREVIEW, SeedStream, derive_sample_seed
from .experiment import run_grid
from .model import CheckpointError, encode_checkpoint, load_checkpoint
from .pgm import PGMError, encode_pgm, read_pgm
from .synthdata import gen_dataset, load_split, write_dataset
from .training import EvalReport, NonFiniteLossError, evaluate, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4
EXIT_SHAPE = 5

ABLATIONS = {
    "ce-only": {"augment_on": False, "ld_on": False},
    "augment": {"augment_on": True, "ld_on": False},
    "full": {"augment_on": True, "ld_on": True},
}

PREVIEW_STAGES = ("original", "spectrum", "masked_spectrum", "inverted", "final")

logger = logging.getLogger("ciatr")


def _fail(code: int, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def eval_json(report: EvalReport) -> str:
    return json.dumps(report.to_json(), indent=2) + "\n"


def confusion_csv(report: EvalReport) -> str:
    c = len(report.confusion)
    lines = ["true\\pred," + ",".join(str(k) for k in range(c))]
    lines += [f"{k}," + ",".join(str(v) for v in row) for k, row in enumerate(report.confusion)]
    return "\n".join(lines) + "\n"


def _threads() -> int | None:
    raw = os.environ.get("CIATR_THREADS")
    if not raw:
        return None
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError("CIATR_THREADS", f"expected an integer, got {raw!r}") from None


def cmd_gen_data(cfg: RunConfig) -> int:
    train_set, test_set = gen_dataset(cfg.confound(), SeedStream(cfg.data_seed, STREAM_DATA))
    try:
        write_dataset(cfg.data_dir, train_set, test_set)
    except OSError as exc:
        return _fail(EXIT_IO, f"cannot write dataset to {cfg.data_dir}: {exc}")
    print(f"wrote {len(train_set)} train and {len(test_set)} test images to {cfg.data_dir}")
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    try:
        X, y = load_split(cfg.data_dir, "train")
        Xt, yt = load_split(cfg.data_dir, "test")
    except (OSError, PGMError, ValueError, KeyError) as exc:
        return _fail(EXIT_IO, f"cannot read dataset from {cfg.data_dir}: {exc}")
    if y.max() >= cfg.num_classes or yt.max() >= cfg.num_classes:
        return _fail(EXIT_CONFIG, "num_classes: dataset has more classes than configured")
    try:
        params, history = train(X, y, cfg.train(), cfg.augment(), num_classes=cfg.num_classes)
    except NonFiniteLossError as exc:
        return _fail(EXIT_NUMERIC, str(exc))
    report = evaluate(params, Xt, yt)
    h, w = X.shape[1:]
    artifacts = {
        cfg.checkpoint_path: encode_checkpoint(params, h, w),
        Path(cfg.out_dir) / "metrics.jsonl": "".join(json.dumps(r.to_json()) + "\n" for r in history).encode(),
        Path(cfg.out_dir) / "eval.json": eval_json(report).encode(),
        Path(cfg.out_dir) / "confusion.csv": confusion_csv(report).encode(),
    }
    try:
        _write_all(artifacts)
    except OSError as exc:
        return _fail(EXIT_IO, f"cannot write outputs: {exc}")
    print(f"final train L_ce={history[-1].L_ce:.4f} L_d={history[-1].L_d:.4f}; test accuracy {report.accuracy:.4f}")
    return EXIT_OK


def _write_all(files: dict[Path, bytes]) -> None:
    # stage everything first so a failure leaves no partial artifact set
    staged = []
    try:
        for path, data in files.items():
            path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
            with os.fdopen(fd, "wb") as f:
                f.write(data)
            staged.append((tmp, path))
    except OSError:
        for tmp, _ in staged:
            os.unlink(tmp)
        raise
    for tmp, path in staged:
        os.replace(tmp, path)


def cmd_eval(checkpoint: str, data_dir: str) -> int:
    try:
        params, h, w = load_checkpoint(checkpoint)
    except (OSError, CheckpointError) as exc:
        return _fail(EXIT_IO, f"cannot load checkpoint {checkpoint}: {exc}")
    try:
        X, y = load_split(data_dir, "test")
    except (OSError, PGMError, ValueError, KeyError) as exc:
        return _fail(EXIT_IO, f"cannot read dataset from {data_dir}: {exc}")
    if X.shape[1:] != (h, w) or y.max() >= params.num_classes:
        return _fail(EXIT_SHAPE, f"checkpoint expects {h}x{w} images with {params.num_classes} classes, "
                                 f"data has {X.shape[1]}x{X.shape[2]} with labels up to {y.max()}")
    sys.stdout.write(eval_json(evaluate(params, X, y)))
    return EXIT_OK


def _spectrum_view(spec: np.ndarray, scale: float) -> np.ndarray:
    mag = np.log1p(np.abs(np.fft.fftshift(spec)))
    return mag / scale if scale > 0 else mag


def cmd_augment_preview(cfg: RunConfig, image: str, count: int) -> int:
    try:
        img = read_pgm(image)
    except (OSError, PGMError) as exc:
        return _fail(EXIT_IO, f"cannot read image {image}: {exc}")
    if count < 1:
        return _fail(EXIT_CONFIG, "count: must be >= 1")
    out_dir = Path(cfg.out_dir) / "preview"
    root = SeedStream(cfg.seed).child(STREAM_PREVIEW)
    files = {}
    try:
        for d in range(count):
            trace = augment_trace(img, derive_sample_seed(root, 0, d), cfg.augment())
            scale = np.log1p(np.abs(trace.spectrum)).max()
            stages = (trace.original, _spectrum_view(trace.spectrum, scale),
                      _spectrum_view(trace.masked_spectrum, scale), np.clip(trace.inverted, 0.0, 1.0), trace.final)
            for k, (name, arr) in enumerate(zip(PREVIEW_STAGES, stages)):
                files[out_dir / f"draw{d:03d}_{k}_{name}.pgm"] = encode_pgm(arr)
    except ValueError as exc:
        return _fail(EXIT_CONFIG, str(exc))
    try:
        _write_all(files)
    except OSError as exc:
        return _fail(EXIT_IO, f"cannot write preview: {exc}")
    print(f"wrote {len(files)} files to {out_dir}")
    return EXIT_OK


def cmd_experiment(cfg: RunConfig) -> int:
    try:
        workers = _threads()
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, str(exc))
    out_dir = Path(cfg.out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        rows = run_grid(out_dir, cfg.seeds, cfg.n_values, cfg.variants, cfg.confound(), cfg.train(),
                        cfg.augment(), workers)
    except NonFiniteLossError as exc:
        return _fail(EXIT_NUMERIC, str(exc))
    except OSError as exc:
        return _fail(EXIT_IO, str(exc))
    seen = set()
    for r in rows:
        key = (r["n_per_class"], r["variant"])
        if key not in seen:
            seen.add(key)
            print(f"n={key[0]:<4d} {key[1]:<12s} mean={r['mean_accuracy']:.4f} std={r['std_accuracy']:.4f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ciatr", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write the synthetic confounded dataset")
    p.add_argument("config")

    p = sub.add_parser("train", help="train one model and evaluate it on the test split")
    p.add_argument("config")
    p.add_argument("--ablate", choices=sorted(ABLATIONS), help="override augment_on / ld_on")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset's test split")
    p.add_argument("checkpoint")
    p.add_argument("data_dir")

    p = sub.add_parser("augment-preview", help="dump every augmentation stage as PGM")
    p.add_argument("config")
    p.add_argument("image")
    p.add_argument("count", type=int)

    p = sub.add_parser("experiment", help="run the seeds x n x variant grid")
    p.add_argument("config")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    if args.command == "eval":
        return cmd_eval(args.checkpoint, args.data_dir)
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, str(exc))
    if args.command == "gen-data":
        return cmd_gen_data(cfg)
    if args.command == "train":
        if args.ablate:
            for key, value in ABLATIONS[args.ablate].items():
                setattr(cfg, key, value)
        return cmd_train(cfg)
    if args.command == "augment-preview":
        return cmd_augment_preview(cfg, args.image, args.count)
    return cmd_experiment(cfg)


if __name__ == "__main__":
    sys.exit(main())
