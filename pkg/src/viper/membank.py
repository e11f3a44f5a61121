"""Rehearsal memories: the three-stage bank and the plain FIFO baseline.

The bank keeps

* a sensory FIFO of the most recent observations of the current environment,
* a working list fed by sensory evictions; once full, an evicted item is
  kept with probability ``l_wk / num_seen`` and overwrites a random slot,
* a long-term list that survives environment boundaries and is rebuilt at
  each boundary from a fixed share of working memory plus old long-term items.

Pair labels (the adjacency relation between stored places) are not stored;
they are computed on demand by a :class:`PairLabeler`.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .embedder import Observation
from .mining import IGNORE, NEGATIVE, POSITIVE, Triplet, make_triplet

SENSORY = "sensory"
WORKING = "working"
LONGTERM = "longterm"
QUEUE = "queue"


def same_place(a: Observation, b: Observation) -> str:
    return POSITIVE if (a.place_id == b.place_id and a.env_id == b.env_id) else NEGATIVE


@dataclass(frozen=True)
class PairLabeler:
    """Symmetric pair rule returning positive / negative / ignore."""

    rule: Callable[[Observation, Observation], str] = same_place

    def __call__(self, a: Observation, b: Observation) -> str:
        lab = self.rule(a, b)
        if lab not in (POSITIVE, NEGATIVE, IGNORE):
            raise ValueError(f"pair rule returned {lab!r}")
        return lab


class MemoryBank:
    def __init__(
        self,
        l_sn: int = 50,
        l_wk: int = 40,
        l_lt: int = 10,
        omega: float = 0.5,
        rng: np.random.Generator | int | None = None,
    ):
        if min(l_sn, l_wk, l_lt) < 0:
            raise ValueError("capacities must be non-negative")
        if not 0.0 <= omega <= 1.0:
            raise ValueError("omega must lie in [0, 1]")
        self.l_sn, self.l_wk, self.l_lt, self.omega = l_sn, l_wk, l_lt, omega
        self.rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        self.sensory: deque[Observation] = deque()
        self.working: list[Observation] = []
        self.longterm: list[Observation] = []
        self.num_seen = 0

    def __len__(self) -> int:
        return len(self.sensory) + len(self.working) + len(self.longterm)

    @property
    def capacity(self) -> int:
        return self.l_sn + self.l_wk + self.l_lt

    def acceptance_probability(self) -> float:
        """Chance that a sensory eviction enters a full working memory right now."""
        return min(1.0, self.l_wk / self.num_seen) if self.num_seen else 1.0

    def insert(self, obs: Observation) -> None:
        self.num_seen += 1
        self.sensory.append(obs)
        if len(self.sensory) <= self.l_sn:
            return
        evicted = self.sensory.popleft()
        if len(self.working) < self.l_wk:
            self.working.append(evicted)
        elif self.l_wk and self.rng.random() < self.acceptance_probability():
            self.working[self.rng.integers(self.l_wk)] = evicted

    def transition(self) -> None:
        """Environment boundary: rebuild long-term memory, clear the per-environment stages."""
        target = int(np.floor(self.omega * self.l_lt + 0.5))
        wk_order = self.rng.permutation(len(self.working))
        lt_order = self.rng.permutation(len(self.longterm))
        take_wk = min(target, len(self.working))
        take_lt = min(self.l_lt - take_wk, len(self.longterm))
        # top up from whichever source still has items when the other ran short
        extra_wk = min(self.l_lt - take_wk - take_lt, len(self.working) - take_wk)
        new = [self.working[i] for i in wk_order[: take_wk + extra_wk]]
        new += [self.longterm[i] for i in lt_order[:take_lt]]
        self.longterm = new
        self.sensory.clear()
        self.working = []
        self.num_seen = 0

    def stages(self) -> Iterable[tuple[str, Observation]]:
        for obs in self.sensory:
            yield SENSORY, obs
        for obs in self.working:
            yield WORKING, obs
        for obs in self.longterm:
            yield LONGTERM, obs

    def items(self) -> list[Observation]:
        return [*self.sensory, *self.working, *self.longterm]

    def sample(self, rng: np.random.Generator, size: int) -> list[Observation]:
        """Uniform draw without replacement from all stages (fewer if the bank is small)."""
        pool = self.items()
        idx = rng.choice(len(pool), size=min(size, len(pool)), replace=False)
        return [pool[i] for i in idx]

    def dump_jsonl(self, path) -> None:
        write_jsonl(path, self.stages())


class NaiveQueue:
    """Single FIFO of fixed capacity; persists across environment boundaries."""

    def __init__(self, capacity: int, clear_on_transition: bool = False):
        self.capacity = capacity
        self.clear_on_transition = clear_on_transition
        self.queue: deque[Observation] = deque()

    def __len__(self) -> int:
        return len(self.queue)

    def insert(self, obs: Observation) -> None:
        naive_queue_insert(self.queue, obs, self.capacity)

    def transition(self) -> None:
        if self.clear_on_transition:
            self.queue.clear()

    def stages(self) -> Iterable[tuple[str, Observation]]:
        for obs in self.queue:
            yield QUEUE, obs

    def items(self) -> list[Observation]:
        return list(self.queue)

    def sample(self, rng: np.random.Generator, size: int) -> list[Observation]:
        pool = self.items()
        idx = rng.choice(len(pool), size=min(size, len(pool)), replace=False)
        return [pool[i] for i in idx]

    def dump_jsonl(self, path) -> None:
        write_jsonl(path, self.stages())


def naive_queue_insert(queue: deque, obs, capacity: int) -> None:
    queue.append(obs)
    while len(queue) > capacity:
        queue.popleft()


def sample_rehearsal(
    bank: MemoryBank | NaiveQueue,
    labeler: PairLabeler,
    rng: np.random.Generator,
    m: int = 1,
    n: int = 5,
) -> Triplet | None:
    """Rehearsal triplet: anchor uniform over everything stored, candidates from the bank."""
    pool = bank.items()
    if not pool:
        raise ValueError("cannot rehearse from an empty memory")
    anchor = pool[rng.integers(len(pool))]
    return make_triplet(anchor, pool, labeler, rng, m, n)


def write_jsonl(path, records: Iterable[tuple[str, Observation]]) -> None:
    with Path(path).open("w") as fh:
        for stage, obs in records:
            rec = {"stage": stage, "env_id": obs.env_id, "place_id": obs.place_id, "seq_index": obs.seq_index}
            fh.write(json.dumps(rec) + "\n")
