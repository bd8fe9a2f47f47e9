"""Ablation grid: seeds x samples-per-class x method variants."""

from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .augment import AugmentConfig
from .core import STREAM_DATA, SeedStream
from .synthdata import ConfoundConfig, as_arrays, gen_dataset
from .training import EvalReport, TrainConfig, evaluate, train

logger = logging.getLogger(__name__)

VARIANTS = {
    "ce-only": {"augment_on": False, "ld_on": False},
    "augment": {"augment_on": True, "ld_on": False},
    "augment+ld": {"augment_on": True, "ld_on": True},
}

SUMMARY_FIELDS = ["n_per_class", "variant", "seed", "accuracy", "mean_accuracy", "std_accuracy"]


def apply_variant(cfg: TrainConfig, variant: str) -> TrainConfig:
    try:
        return replace(cfg, **VARIANTS[variant])
    except KeyError:
        raise ValueError(f"unknown variant {variant!r}; expected one of {sorted(VARIANTS)}") from None


def run_cell(seed: int, n_per_class: int, variant: str, ccfg: ConfoundConfig, tcfg: TrainConfig,
             acfg: AugmentConfig) -> EvalReport:
    """Generate data for ``seed``, train one variant and evaluate on the test split.

    The dataset for a ``(seed, n_per_class)`` pair is shared across variants;
    the variant changes only the training recipe.
    """
    ccfg = replace(ccfg, n_per_class=n_per_class)
    train_set, test_set = gen_dataset(ccfg, SeedStream(seed, STREAM_DATA))
    X, y = as_arrays(train_set)
    Xt, yt = as_arrays(test_set)
    cfg = apply_variant(replace(tcfg, seed=seed), variant)
    params, _ = train(X, y, cfg, acfg, num_classes=ccfg.num_classes)
    return evaluate(params, Xt, yt)


def _cell_dir(out_dir: Path, seed: int, n: int, variant: str) -> Path:
    return out_dir / "cells" / f"n{n}" / variant / f"seed{seed}"


def _run_and_record(args) -> tuple[int, int, str, float]:
    seed, n, variant, ccfg, tcfg, acfg, cell = args
    report = run_cell(seed, n, variant, ccfg, tcfg, acfg)
    cell.mkdir(parents=True, exist_ok=True)
    tmp = cell / "eval.json.tmp"
    tmp.write_text(json.dumps(report.to_json()) + "\n", encoding="utf-8")
    os.replace(tmp, cell / "eval.json")
    # the marker is written last so an interrupted cell is simply rerun
    (cell / "DONE").write_text("", encoding="utf-8")
    return seed, n, variant, report.accuracy


def run_grid(out_dir: str | os.PathLike, seeds, n_values, variants, ccfg: ConfoundConfig, tcfg: TrainConfig,
             acfg: AugmentConfig, workers: int | None = None) -> list[dict]:
    """Run every missing cell, then write ``summary.csv`` and return its rows.

    Cells with a ``DONE`` marker are skipped. ``workers`` > 1 runs cells in
    separate processes; each cell is still a sequential, deterministic run.
    """
    out_dir = Path(out_dir)
    todo = []
    for n in n_values:
        for variant in variants:
            apply_variant(tcfg, variant)
            for seed in seeds:
                cell = _cell_dir(out_dir, seed, n, variant)
                if (cell / "DONE").exists():
                    logger.info("skip %s", cell)
                    continue
                todo.append((seed, n, variant, ccfg, tcfg, acfg, cell))
    if workers and workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for seed, n, variant, acc in pool.map(_run_and_record, todo):
                logger.info("n=%d %s seed=%d acc=%.4f", n, variant, seed, acc)
    else:
        for job in todo:
            seed, n, variant, acc = _run_and_record(job)
            logger.info("n=%d %s seed=%d acc=%.4f", n, variant, seed, acc)
    return write_summary(out_dir, seeds, n_values, variants)


def cell_accuracy(out_dir: Path, seed: int, n: int, variant: str) -> float:
    data = json.loads((_cell_dir(out_dir, seed, n, variant) / "eval.json").read_text(encoding="utf-8"))
    return float(data["accuracy"])


def write_summary(out_dir: str | os.PathLike, seeds, n_values, variants) -> list[dict]:
    """One row per cell; each row also carries the mean and population std of
    its ``(n_per_class, variant)`` group across seeds."""
    out_dir = Path(out_dir)
    rows = []
    for n in n_values:
        for variant in variants:
            accs = [cell_accuracy(out_dir, s, n, variant) for s in seeds]
            mean = sum(accs) / len(accs)
            std = float(np.std(accs))
            for seed, acc in zip(seeds, accs):
                rows.append({"n_per_class": n, "variant": variant, "seed": seed, "accuracy": acc,
                             "mean_accuracy": mean, "std_accuracy": std})
    with open(out_dir / "summary.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=SUMMARY_FIELDS)
        writer.writeheader()
        writer.writerows(rows)
    return rows


def group_means(rows: list[dict]) -> dict[tuple[int, str], float]:
    return {(r["n_per_class"], r["variant"]): r["mean_accuracy"] for r in rows}
