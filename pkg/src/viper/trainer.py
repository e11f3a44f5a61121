"""Sequential-environment training loop.

Per step: ingest the next stream observation into memory, build a triplet
whose anchor is that observation and whose candidates come from memory, mine
one positive and one negative, and minimise

    triplet + lambda1 * rmas + lambda2 * pkd

with SGD + momentum.  At each environment boundary the model is snapshotted
as the frozen reference, the importance map is folded into the carried one,
the memory transitions and a checkpoint is written.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .embedder import EmbedderParams, Observation, embed_batch, init_params, save_checkpoint, snapshot
from .membank import MemoryBank, NaiveQueue, PairLabeler, same_place
from .mining import ADAPTIVE, HARD, RANDOM, STRATEGIES, MiningState, make_triplet, mine_adaptive, mine_hard, mine_random, triplet_loss
from .regularizers import (
    FrozenReference,
    ImportanceMap,
    gram_norm_grads,
    merge_importance,
    pkd_loss,
    pkd_similarity_matrix,
    rmas_accumulate,
    rmas_loss,
)

log = logging.getLogger(__name__)

MULTISTAGE = "multistage"
NAIVE_QUEUE = "naive_queue"
NO_MEMORY = "none"
MEMORY_KINDS = (MULTISTAGE, NAIVE_QUEUE, NO_MEMORY)

LOSS_LOG_HEADER = ("step", "env", "l_triplet", "l_rmas", "l_pkd", "total")


@dataclass(frozen=True)
class TrainConfig:
    # mining
    m: int = 1
    n: int = 5
    delta: float = 1.0
    T_d: float = 0.05
    T_e: float = 0.03
    mining: str = ADAPTIVE
    # memory
    memory: str = MULTISTAGE
    l_sn: int = 50
    l_wk: int = 40
    l_lt: int = 10
    omega: float = 0.5
    # loss weights and optimiser
    use_rmas: bool = True
    use_pkd: bool = True
    lambda1: float = 1.0
    lambda2: float = 1.0
    lr: float = 0.002
    momentum: float = 0.9
    steps_per_env: int | None = None
    passes_per_env: int = 4
    pkd_batch: int = 8
    seed: int = 0
    # model
    aggregator: str = "netvlad"
    channels: int = 16
    clusters: int = 8
    out_dim: int = 32
    gem_p: float = 3.0

    def __post_init__(self):
        errors = []
        if not self.lr > 0:
            errors.append("lr must be > 0")
        if not 0 <= self.momentum < 1:
            errors.append("momentum must lie in [0, 1)")
        if self.lambda1 < 0 or self.lambda2 < 0:
            errors.append("lambda1 and lambda2 must be >= 0")
        if self.m < 1 or self.n < 1:
            errors.append("m and n must be >= 1")
        if self.mining not in STRATEGIES:
            errors.append(f"mining must be one of {STRATEGIES}")
        if self.memory not in MEMORY_KINDS:
            errors.append(f"memory must be one of {MEMORY_KINDS}")
        if self.steps_per_env is not None and self.steps_per_env < 0:
            errors.append("steps_per_env must be >= 0")
        if self.pkd_batch < 2:
            errors.append("pkd_batch must be >= 2")
        if errors:
            raise ValueError("; ".join(errors))

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(raw) - names
        if unknown:
            raise ValueError(f"unknown TrainConfig field(s): {', '.join(sorted(unknown))}")
        return cls(**raw)

    def to_dict(self) -> dict:
        return asdict(self)


PRESETS: dict[str, dict] = {
    "finetune": dict(memory=NO_MEMORY, use_rmas=False, use_pkd=False, mining=RANDOM, lambda1=0.0, lambda2=0.0),
    "naive-queue": dict(memory=NAIVE_QUEUE),
    "random-mining": dict(mining=RANDOM),
    "hard-mining": dict(mining=HARD),
    "no-rmas": dict(use_rmas=False),
    "no-pkd": dict(use_pkd=False),
    "full-viper": dict(),
}


def preset(name: str, base: TrainConfig | None = None, **overrides) -> TrainConfig:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return replace(base or TrainConfig(), **{**PRESETS[name], **overrides})


@dataclass
class RunArtifacts:
    checkpoints: list[Path] = field(default_factory=list)
    params_history: list[EmbedderParams] = field(default_factory=list)
    loss_log: list[tuple] = field(default_factory=list)
    importance: ImportanceMap | None = None
    skipped_steps: int = 0


def sgd_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: dict[str, np.ndarray], lr: float, momentum: float) -> None:
    """v <- momentum * v + g;  theta <- theta - lr * v  (buffers start at zero)."""
    for name, theta in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros(theta.shape)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
        v = state.get(name)
        v = g.copy() if v is None else momentum * v + g
        state[name] = v
        theta.data = theta.data - lr * v


def make_memory(cfg: TrainConfig, rng: np.random.Generator):
    if cfg.memory == MULTISTAGE:
        return MemoryBank(cfg.l_sn, cfg.l_wk, cfg.l_lt, cfg.omega, rng=rng)
    total = cfg.l_sn + cfg.l_wk + cfg.l_lt
    return NaiveQueue(total, clear_on_transition=cfg.memory == NO_MEMORY)


def init_model(cfg: TrainConfig, raw_channels: int) -> EmbedderParams:
    return init_params(
        raw_channels=raw_channels,
        channels=cfg.channels,
        aggregator=cfg.aggregator,
        clusters=cfg.clusters,
        out_dim=cfg.out_dim,
        gem_p=cfg.gem_p,
        seed=cfg.seed,
    )


class Trainer:
    """Mutable training state shared across environments."""

    def __init__(self, cfg: TrainConfig, params: EmbedderParams, labeler: PairLabeler | None = None):
        self.cfg = cfg
        self.params = params
        self.labeler = labeler or PairLabeler(same_place)
        trainer_seq, memory_seq = np.random.SeedSequence([cfg.seed, 0x7A1]).spawn(2)
        self.rng = np.random.default_rng(trainer_seq)
        self.memory = make_memory(cfg, np.random.default_rng(memory_seq))
        self.velocity: dict[str, np.ndarray] = {}
        self.reference: FrozenReference | None = None
        self.carried: ImportanceMap | None = None
        self.envs_done = 0
        self.step = 0
        self.skipped = 0

    def _mine(self, state: MiningState, s_ap: np.ndarray, s_an: np.ndarray) -> tuple[int, int, MiningState]:
        cfg = self.cfg
        if cfg.mining == RANDOM:
            i, j = mine_random((len(s_ap), len(s_an)), self.rng)
            return i, j, state
        if cfg.mining == HARD:
            i, j = mine_hard(s_ap, s_an)
            return i, j, state
        return mine_adaptive(state, s_ap, s_an, cfg.delta)

    def train_environment(self, env_id: int, env_data: Sequence[Observation]) -> tuple[list[tuple], ImportanceMap]:
        cfg = self.cfg
        params = self.params
        named = params.trainable()
        stream = sorted(env_data, key=lambda o: o.seq_index)
        steps = cfg.steps_per_env if cfg.steps_per_env is not None else cfg.passes_per_env * len(stream)
        importance = ImportanceMap.zeros_like(params)
        state = MiningState(T_d=cfg.T_d, T_e=cfg.T_e)
        ref = self.reference
        rows = []
        for k in range(steps):
            anchor = stream[k % len(stream)]
            self.memory.insert(anchor)
            trip = make_triplet(anchor, self.memory.items(), self.labeler, self.rng, cfg.m, cfg.n)
            if trip is None:
                log.debug("env %d step %d: no valid triplet yet, skipped", env_id, k)
                self.skipped += 1
                continue

            desc = embed_batch(params, trip.observations())
            m = trip.m
            s_ap = desc.data[1 : 1 + m] @ desc.data[0]
            s_an = desc.data[1 + m :] @ desc.data[0]
            i, j, state = self._mine(state, s_ap, s_an)
            a, p, n = desc[0], desc[1 + i], desc[1 + m + j]
            l_trip = triplet_loss(ad.dot(a, p), ad.dot(a, n), cfg.delta)

            if cfg.use_rmas:
                rmas_accumulate(importance, gram_norm_grads(a, p, n, params))
            l_rmas = rmas_loss(params, ref) if cfg.use_rmas and ref is not None else Tensor(0.0)
            l_pkd = Tensor(0.0)
            if cfg.use_pkd and ref is not None:
                batch = self.memory.sample(self.rng, cfg.pkd_batch)
                if len(batch) >= 2:
                    with ad.no_grad():
                        h_prev = pkd_similarity_matrix(embed_batch(ref.params_prev, batch))
                    l_pkd = pkd_loss(h_prev, pkd_similarity_matrix(embed_batch(params, batch)))

            total = ad.add(ad.add(l_trip, ad.mul(l_rmas, cfg.lambda1)), ad.mul(l_pkd, cfg.lambda2))
            params.zero_grad()
            if total.requires_grad:
                ad.backward(total)
            sgd_step(named, {k_: t.grad for k_, t in named.items() if t.grad is not None}, self.velocity, cfg.lr, cfg.momentum)
            params.zero_grad()
            rows.append((self.step, env_id, l_trip.item(), l_rmas.item(), l_pkd.item(), total.item()))
            self.step += 1
        return rows, importance

    def end_environment(self, importance: ImportanceMap) -> None:
        self.carried = merge_importance(self.carried, importance, self.envs_done)
        self.envs_done += 1
        self.reference = FrozenReference(snapshot(self.params), self.carried.copy())
        self.memory.transition()


def train_environment(trainer: Trainer, env_id: int, env_data: Sequence[Observation]) -> tuple[list[tuple], ImportanceMap]:
    return trainer.train_environment(env_id, env_data)


def write_loss_log(path, rows: Sequence[tuple]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOSS_LOG_HEADER)
        for step, env, *vals in rows:
            w.writerow([step, env, *(repr(float(v)) for v in vals)])


def run_sequence(dataset, cfg: TrainConfig, out_dir=None, params: EmbedderParams | None = None) -> RunArtifacts:
    """Train on each environment in turn; optionally write checkpoints and the loss log."""
    if dataset.num_envs < 1:
        raise ValueError("dataset has no environments")
    raw_channels = dataset.observations[0].patches.shape[1]
    params = params or init_model(cfg, raw_channels)
    trainer = Trainer(cfg, params, dataset.labeler)
    art = RunArtifacts()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    for t in range(dataset.num_envs):
        rows, importance = trainer.train_environment(t, dataset.environment(t))
        art.loss_log.extend(rows)
        trainer.end_environment(importance)
        art.params_history.append(trainer.reference.params_prev)
        if out is not None:
            path = out / f"checkpoint_{t}.vipr"
            try:
                save_checkpoint(path, trainer.params, trainer.carried.omega)
            except OSError:
                (out / "PARTIAL").write_text(f"checkpoint {t} failed\n")
                raise
            art.checkpoints.append(path)
    art.importance = trainer.carried
    art.skipped_steps = trainer.skipped
    if out is not None:
        write_loss_log(out / "loss_log.csv", art.loss_log)
    return art
