"""Retrieval evaluation: recall at 100% precision, the T x T matrix, AP / BWT / FWT."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .embedder import EmbedderParams, Observation, describe
from .membank import PairLabeler, same_place
from .mining import POSITIVE


@dataclass
class RetrievalIndex:
    database: np.ndarray
    db_meta: list[Observation]
    queries: np.ndarray
    query_meta: list[Observation]

    def __post_init__(self):
        overlap = {o.key for o in self.db_meta} & {o.key for o in self.query_meta}
        if overlap:
            raise ValueError(f"database and queries share {len(overlap)} observation(s)")


@dataclass
class EvalMatrix:
    P: np.ndarray
    baseline: np.ndarray | None = None

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=np.float64)
        if self.P.ndim != 2 or self.P.shape[0] != self.P.shape[1]:
            raise ValueError(f"evaluation matrix must be square, got {self.P.shape}")
        if np.any(self.P < 0) or np.any(self.P > 1):
            raise ValueError("recalls must lie in [0, 1]")

    @property
    def T(self) -> int:
        return self.P.shape[0]


@dataclass(frozen=True)
class Summary:
    ap: float
    bwt: float | None
    fwt: float | None
    fwt_raw: float | None


def split_environment(observations: Sequence[Observation]) -> tuple[list[Observation], list[Observation]]:
    """Split each place's visits by capture order: even visits to the database, odd to queries.

    Visits are ranked per (env, place) by sequence index, so the split stays
    balanced whatever the traversal order.
    """
    rank: dict[tuple[int, int], int] = {}
    db, qs = [], []
    for o in sorted(observations, key=lambda o: (o.env_id, o.seq_index)):
        k = rank.get((o.env_id, o.place_id), 0)
        rank[(o.env_id, o.place_id)] = k + 1
        (db if k % 2 == 0 else qs).append(o)
    return db, qs


def top1(index: RetrievalIndex) -> tuple[np.ndarray, np.ndarray]:
    sims = index.queries @ index.database.T
    best = np.argmax(sims, axis=1)
    return best, sims[np.arange(len(best)), best]


def recall_from_scores(scores: Sequence[float], correct: Sequence[bool], num_answerable: int) -> float:
    """Longest all-correct prefix of queries ranked by descending score, over answerable queries.

    Equal scores keep the original query order.
    """
    if num_answerable <= 0:
        raise ValueError("no query has a true match in the database")
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    ok = np.asarray(correct, dtype=bool)[order]
    prefix = len(ok) if ok.all() else int(np.argmin(ok))
    return prefix / num_answerable


def recall_at_full_precision(index: RetrievalIndex, labeler: PairLabeler = PairLabeler(same_place)) -> float:
    if len(index.database) == 0:
        raise ValueError("empty database")
    best, scores = top1(index)
    correct = [labeler(q, index.db_meta[b]) == POSITIVE for q, b in zip(index.query_meta, best)]
    answerable = sum(any(labeler(q, d) == POSITIVE for d in index.db_meta) for q in index.query_meta)
    return recall_from_scores(scores, correct, answerable)


def build_index(params: EmbedderParams, observations: Sequence[Observation]) -> RetrievalIndex:
    db, qs = split_environment(observations)
    return RetrievalIndex(describe(params, db), db, describe(params, qs), qs)


def build_eval_matrix(
    checkpoints: Sequence[EmbedderParams | None],
    dataset,
    baseline: EmbedderParams | None = None,
) -> EvalMatrix:
    """P[i, j]: recall of the model trained through environment i on environment j's test split."""
    T = dataset.num_envs
    if len(checkpoints) != T:
        raise ValueError(f"expected {T} checkpoints, got {len(checkpoints)}")
    for i, c in enumerate(checkpoints):
        if c is None:
            raise ValueError(f"missing checkpoint {i}")
    envs = [dataset.environment(j) for j in range(T)]
    labeler = dataset.labeler
    P = np.array([[recall_at_full_precision(build_index(c, env), labeler) for env in envs] for c in checkpoints])
    b = None
    if baseline is not None:
        b = np.array([recall_at_full_precision(build_index(baseline, env), labeler) for env in envs])
    return EvalMatrix(P, b)


def summary_metrics(mat: EvalMatrix) -> Summary:
    P, T = mat.P, mat.T
    ap = float(P[T - 1].mean())
    if T < 2:
        return Summary(ap, None, None, None)
    bwt = float(np.mean([P[T - 1, j] - P[j, j] for j in range(T - 1)]))
    fwd = np.array([P[j - 1, j] for j in range(1, T)])
    fwt_raw = float(fwd.mean())
    fwt = fwt_raw if mat.baseline is None else float(np.mean(fwd - mat.baseline[1:]))
    return Summary(ap, bwt, fwt, fwt_raw)


def emit_report(mat: EvalMatrix, metrics: Summary, out_dir, config_digest: str = "", env_names: Sequence[str] | None = None) -> dict[str, Path]:
    """Write matrix.csv, long.csv and summary.json into ``out_dir``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        names = list(env_names) if env_names else [f"env{j}" for j in range(mat.T)]
        matrix_path, long_path, summary_path = out / "matrix.csv", out / "long.csv", out / "summary.json"
        with matrix_path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(names)
            for row in mat.P:
                w.writerow([repr(float(v)) for v in row])
        with long_path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["trained_after", "evaluated_on", "recall"])
            for i in range(mat.T):
                for j in range(mat.T):
                    w.writerow([names[i], names[j], repr(float(mat.P[i, j]))])
        summary = {
            "ap": metrics.ap,
            "bwt": metrics.bwt,
            "fwt": metrics.fwt,
            "fwt_raw": metrics.fwt_raw,
            "baseline": None if mat.baseline is None else [float(v) for v in mat.baseline],
            "config_digest": config_digest,
        }
        summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write report to {out}: {exc}") from exc
    return {"matrix": matrix_path, "long": long_path, "summary": summary_path}


def read_matrix_csv(path) -> tuple[list[str], np.ndarray]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array([[float(v) for v in r] for r in rows[1:]])


def metrics_finite(metrics: Summary) -> bool:
    return all(v is None or math.isfinite(v) for v in (metrics.ap, metrics.bwt, metrics.fwt, metrics.fwt_raw))
