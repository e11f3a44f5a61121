"""Train-then-evaluate runs and preset ablations, shared by the CLI and the acceptance suite."""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import __version__
from .embedder import CHECKPOINT_VERSION
from .evaluator import Summary, build_eval_matrix, emit_report, summary_metrics
from .trainer import TrainConfig, init_model, preset, run_sequence
from .worldgen import DATASET_VERSION, Dataset, content_hash

CONFIG_VERSION = 1
DEFAULT_SEEDS = (0, 1, 2, 3, 4)
ABLATION_PRESETS = ("finetune", "naive-queue", "random-mining", "hard-mining", "no-rmas", "no-pkd", "full-viper")
COMPARISON_HEADER = ("preset", "runs", "ap", "bwt", "fwt", "fwt_raw")


def format_versions() -> dict:
    return {"config": CONFIG_VERSION, "checkpoint": CHECKPOINT_VERSION, "dataset": DATASET_VERSION}


def config_digest(cfg: TrainConfig) -> str:
    return hashlib.sha256(json.dumps(cfg.to_dict(), sort_keys=True).encode()).hexdigest()


def write_manifest(path, command: str, **entries) -> None:
    body = {"command": command, "package_version": __version__, "format_versions": format_versions(), **entries}
    Path(path).write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")


@dataclass
class RunResult:
    preset: str
    seed: int
    summary: Summary
    P: np.ndarray


def train_and_evaluate(dataset: Dataset, cfg: TrainConfig, out_dir=None) -> tuple[Summary, np.ndarray]:
    """One full run.  The untrained model with the same seed is the FWT baseline."""
    art = run_sequence(dataset, cfg, out_dir)
    baseline = init_model(cfg, dataset.spec.raw_channels)
    mat = build_eval_matrix(art.params_history, dataset, baseline=baseline)
    metrics = summary_metrics(mat)
    if out_dir is not None:
        emit_report(mat, metrics, out_dir, config_digest(cfg))
        write_manifest(
            Path(out_dir) / "manifest.json",
            "train+eval",
            config=cfg.to_dict(),
            seed=cfg.seed,
            dataset_sha256=content_hash(dataset),
            world=dataset.spec.to_dict(),
        )
    return metrics, mat.P


def run_ablation(
    world_for_seed: Callable[[int], Dataset],
    presets: Sequence[str] = ABLATION_PRESETS,
    seeds: Iterable[int] = DEFAULT_SEEDS,
    base: TrainConfig | None = None,
    out_dir=None,
    progress: Callable[[RunResult], None] | None = None,
) -> list[RunResult]:
    """Every preset on every seed.  ``world_for_seed`` may return the same dataset each time."""
    base = base or TrainConfig()
    results = []
    for seed in seeds:
        ds = world_for_seed(seed)
        for name in presets:
            cfg = preset(name, replace(base, seed=seed))
            run_dir = None if out_dir is None else Path(out_dir) / name / f"seed{seed}"
            metrics, P = train_and_evaluate(ds, cfg, run_dir)
            res = RunResult(name, seed, metrics, P)
            results.append(res)
            if progress:
                progress(res)
    return results


def seed_averages(results: Sequence[RunResult]) -> dict[str, dict[str, float]]:
    table: dict[str, dict[str, float]] = {}
    for name in dict.fromkeys(r.preset for r in results):
        rows = [r.summary for r in results if r.preset == name]
        table[name] = {
            "runs": len(rows),
            "ap": float(np.mean([s.ap for s in rows])),
            "bwt": float(np.mean([s.bwt for s in rows])),
            "fwt": float(np.mean([s.fwt for s in rows])),
            "fwt_raw": float(np.mean([s.fwt_raw for s in rows])),
        }
    return table


def write_comparison(path, table: dict[str, dict[str, float]]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(COMPARISON_HEADER)
        for name, row in table.items():
            w.writerow([name, row["runs"], *(repr(row[k]) for k in COMPARISON_HEADER[2:])])

