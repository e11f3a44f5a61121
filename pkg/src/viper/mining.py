"""Triplet construction, triplet loss and the random / hard / adaptive miners."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .embedder import GlobalDescriptor, Observation

POSITIVE = "positive"
NEGATIVE = "negative"
IGNORE = "ignore"

RANDOM = "random"
HARD = "hard"
ADAPTIVE = "adaptive"
STRATEGIES = (RANDOM, HARD, ADAPTIVE)


@dataclass
class Triplet:
    anchor: Observation
    positives: list[Observation]
    negatives: list[Observation]

    def __post_init__(self):
        if not self.positives or not self.negatives:
            raise ValueError("a triplet needs at least one positive and one negative")

    @property
    def m(self) -> int:
        return len(self.positives)

    @property
    def n(self) -> int:
        return len(self.negatives)

    def observations(self) -> list[Observation]:
        """anchor, positives..., negatives... in that order."""
        return [self.anchor, *self.positives, *self.negatives]


@dataclass(frozen=True)
class MiningState:
    """Rank-space cursor for adaptive mining; rank 0 is the hardest sample."""

    pos_index: int = 0
    neg_index: int = 0
    prev_loss: float | None = None
    T_d: float = 0.05
    T_e: float = 0.03

    def __post_init__(self):
        # equal infinite thresholds freeze the cursor (fixed-rank mining)
        frozen = np.isinf(self.T_d) and np.isinf(self.T_e)
        if not (self.T_d > self.T_e > 0 or frozen):
            raise ValueError(f"need T_d > T_e > 0, got T_d={self.T_d}, T_e={self.T_e}")


def make_triplet(
    anchor: Observation,
    pool: Sequence[Observation],
    label: Callable[[Observation, Observation], str],
    rng: np.random.Generator,
    m: int = 1,
    n: int = 5,
) -> Triplet | None:
    """Draw up to ``m`` positives and ``n`` negatives for ``anchor`` from ``pool``.

    Copies of the anchor itself (same env and sequence index) are skipped.
    Returns None when the pool holds no positive or no negative.
    """
    positives, negatives = [], []
    akey = anchor.key
    for obs in pool:
        if obs.key == akey:
            continue
        lab = label(anchor, obs)
        if lab == POSITIVE:
            positives.append(obs)
        elif lab == NEGATIVE:
            negatives.append(obs)
    if not positives or not negatives:
        return None
    pi = rng.choice(len(positives), size=min(m, len(positives)), replace=False)
    ni = rng.choice(len(negatives), size=min(n, len(negatives)), replace=False)
    return Triplet(anchor, [positives[i] for i in pi], [negatives[i] for i in ni])


def similarities(desc: GlobalDescriptor | np.ndarray, others: Sequence) -> list[float]:
    """Cosine similarities of unit-norm descriptors (plain dot products)."""
    a = desc.values if isinstance(desc, GlobalDescriptor) else np.asarray(desc)
    if len(others) == 0:
        return []
    mat = np.stack([o.values if isinstance(o, GlobalDescriptor) else np.asarray(o) for o in others])
    return [float(v) for v in np.clip(mat @ a, -1.0, 1.0)]


def triplet_loss(s_ap, s_an, delta: float = 1.0) -> Tensor:
    """max(s_an - s_ap + delta, 0)."""
    return ad.max0(ad.add(ad.sub(s_an, s_ap), delta))


def hinge_value(s_ap: float, s_an: float, delta: float) -> float:
    return max(s_an - s_ap + delta, 0.0)


def mine_random(trip: Triplet | tuple[int, int], rng: np.random.Generator) -> tuple[int, int]:
    m, n = (trip.m, trip.n) if isinstance(trip, Triplet) else trip
    return int(rng.integers(m)), int(rng.integers(n))


def mine_hard(s_ap: Sequence[float], s_an: Sequence[float]) -> tuple[int, int]:
    """Least similar positive and most similar negative; ties go to the lowest index."""
    if len(s_ap) == 0 or len(s_an) == 0:
        raise ValueError("mine_hard needs non-empty similarity lists")
    return int(np.argmin(s_ap)), int(np.argmax(s_an))


def mine_adaptive(
    state: MiningState, s_ap: Sequence[float], s_an: Sequence[float], delta: float = 1.0
) -> tuple[int, int, MiningState]:
    """Move the difficulty cursor according to the change in triplet loss.

    Positives are ranked by ascending similarity and negatives by descending
    similarity, so rank 0 is the hardest pick in both lists.  If the loss rose
    by more than ``T_d`` since the previous step both ranks move one step
    toward easier samples; if it fell by more than ``T_e`` both move toward
    harder ones.  Ranks are clamped to the list lengths.

    The stored ``prev_loss`` is the loss measured at the ranks held on entry,
    before any move, so consecutive comparisons use the same cursor.
    """
    if len(s_ap) == 0 or len(s_an) == 0:
        raise ValueError("mine_adaptive needs non-empty similarity lists")
    s_ap = np.asarray(s_ap, dtype=np.float64)
    s_an = np.asarray(s_an, dtype=np.float64)
    pos_order = np.argsort(s_ap, kind="stable")
    neg_order = np.argsort(-s_an, kind="stable")
    m, n = len(s_ap), len(s_an)

    i = min(state.pos_index, m - 1)
    j = min(state.neg_index, n - 1)
    loss = hinge_value(s_ap[pos_order[i]], s_an[neg_order[j]], delta)
    change = 0.0 if state.prev_loss is None else loss - state.prev_loss
    if change > state.T_d:
        i, j = min(i + 1, m - 1), min(j + 1, n - 1)
    elif -change > state.T_e:
        i, j = max(i - 1, 0), max(j - 1, 0)

    new_state = replace(state, pos_index=i, neg_index=j, prev_loss=loss)
    return int(pos_order[i]), int(neg_order[j]), new_state
