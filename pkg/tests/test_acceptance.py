"""Acceptance suite: six criteria, each at its stated tolerance.

Run with ``pytest tests/test_acceptance.py -v``; the verdict lines are
printed in the terminal summary.
"""

import itertools
import time
from dataclasses import replace

import numpy as np
import pytest
from conftest import record

from viper import checks
from viper.cli import main
from viper.embedder import Observation
from viper.evaluator import EvalMatrix, RetrievalIndex, recall_at_full_precision, summary_metrics
from viper.experiments import train_and_evaluate
from viper.membank import MemoryBank, NaiveQueue, same_place
from viper.mining import hinge_value, mine_hard
from viper.regularizers import pkd_loss
from viper.trainer import TrainConfig, preset
from viper.worldgen import WorldSpec, generate

_GRID = np.zeros((1, 1))


def ob(seq, place=None, env=0):
    return Observation(env, seq if place is None else place, seq, _GRID)


# ----------------------------------------------------------------------
# 1. gradient suite


def test_criterion_1_gradient_suite():
    report = checks.run_suite(seeds=20, tol=1e-4)
    worst = max(report.max_error.values())
    ok = report.passed and report.seconds < 60
    record(1, ok, f"{len(report.max_error)} ops x 20 seeds, worst rel error {worst:.2e} (tol 1e-4), {report.seconds:.1f}s (< 60s)")
    assert report.passed, f"failing ops: {list(report.failures)}"
    assert report.seconds < 60


# ----------------------------------------------------------------------
# 2. memory-bank laws


def _capacity_holds(rng) -> bool:
    l_sn, l_wk, l_lt = (int(v) for v in rng.integers(1, 60, 3))
    bank = MemoryBank(l_sn, l_wk, l_lt, float(rng.uniform()), rng=rng)
    boundaries = set(rng.choice(10_000, size=5, replace=False).tolist())
    env = 0
    for i in range(10_000):
        bank.insert(ob(i, place=int(rng.integers(50)), env=env))
        if len(bank.sensory) > l_sn or len(bank.working) > l_wk or len(bank.longterm) > l_lt:
            return False
        if i in boundaries:
            bank.transition()
            env += 1
            if len(bank.longterm) > l_lt:
                return False
    return True


def _acceptance_rate(trials=100_000, l_wk=40, num=100):
    bank = MemoryBank(l_sn=1, l_wk=l_wk, l_lt=1, rng=np.random.default_rng(1))
    for i in range(l_wk + 1):
        bank.insert(ob(i))
    accepted = 0
    for k in range(trials):
        bank.num_seen = num - 1
        evicted = bank.sensory[0]
        bank.insert(ob(100_000 + k))
        accepted += any(w is evicted for w in bank.working)
    p = l_wk / num
    return accepted, trials * p, np.sqrt(trials * p * (1 - p))


def _transition_counts_hold() -> bool:
    for omega, l_lt in [(0.5, 100), (0.5, 10), (0.3, 10), (0.25, 10), (0.75, 10), (0.1, 7), (1.0, 10), (0.0, 10)]:
        bank = MemoryBank(l_sn=5, l_wk=200, l_lt=l_lt, omega=omega, rng=3)
        for i in range(205):
            bank.insert(ob(i, env=0))
        bank.transition()
        for i in range(205):
            bank.insert(ob(1000 + i, env=1))
        bank.transition()
        if len(bank.longterm) != l_lt or sum(o.env_id == 1 for o in bank.longterm) != int(np.floor(omega * l_lt + 0.5)):
            return False
    return True


def _naive_queue_is_last_k() -> bool:
    for k in (1, 2, 17, 100):
        q = NaiveQueue(k)
        stream = [ob(i) for i in range(500)]
        for i, o in enumerate(stream):
            q.insert(o)
            if q.items() != stream[max(0, i - k + 1) : i + 1]:
                return False
    return True


def test_criterion_2_memory_bank_laws():
    rng = np.random.default_rng(0)
    capacity = all(_capacity_holds(rng) for _ in range(5))
    accepted, expected, sigma = _acceptance_rate()
    rate_ok = abs(accepted - expected) < 3 * sigma
    counts = _transition_counts_hold()
    last_k = _naive_queue_is_last_k()
    ok = capacity and rate_ok and counts and last_k
    record(
        2,
        ok,
        f"capacity {capacity}; acceptance {accepted} vs {expected:.0f} ({(accepted - expected) / sigma:+.2f} sigma); "
        f"transition counts {counts}; naive last-k {last_k}",
    )
    assert capacity and rate_ok and counts and last_k


# ----------------------------------------------------------------------
# 3. oracle equivalences


def _threshold_oracle(index: RetrievalIndex) -> float:
    sims = index.queries @ index.database.T
    best = sims.argmax(axis=1)
    scores = sims[np.arange(len(best)), best]
    correct = np.array([same_place(q, index.db_meta[b]) == "positive" for q, b in zip(index.query_meta, best)])
    answerable = sum(any(same_place(q, d) == "positive" for d in index.db_meta) for q in index.query_meta)
    top = 0.0
    for thr in np.concatenate([[np.inf], scores]):
        accepted = scores >= thr
        if accepted.any() and not correct[accepted].all():
            continue
        top = max(top, correct[accepted].sum() / answerable)
    return top


def _random_index(rng):
    n_places = int(rng.integers(3, 10))
    centres = rng.standard_normal((n_places, 8))
    noise = float(rng.uniform(0.2, 1.5))

    def draw(count, start):
        places = rng.integers(n_places, size=count)
        x = centres[places] + noise * rng.standard_normal((count, 8))
        x /= np.linalg.norm(x, axis=1, keepdims=True)
        return x, [ob(start + i, place=int(p)) for i, p in enumerate(places)]

    db, db_meta = draw(int(rng.integers(5, 30)), 0)
    qs, q_meta = draw(int(rng.integers(3, 30)), 10_000)
    return RetrievalIndex(db, db_meta, qs, q_meta)


def test_criterion_3_oracle_equivalences():
    rng = np.random.default_rng(0)
    recall_checked = recall_equal = 0
    while recall_checked < 50:
        idx = _random_index(rng)
        if not any(same_place(q, d) == "positive" for q in idx.query_meta for d in idx.db_meta):
            continue
        recall_checked += 1
        recall_equal += recall_at_full_precision(idx) == _threshold_oracle(idx)

    hard_equal = 0
    for _ in range(100):
        s_ap = rng.uniform(-1, 1, int(rng.integers(1, 6))).tolist()
        s_an = rng.uniform(-1, 1, int(rng.integers(1, 8))).tolist()
        i, j = mine_hard(s_ap, s_an)
        best = max(hinge_value(a, n, 1.0) for a, n in itertools.product(s_ap, s_an))
        hard_equal += hinge_value(s_ap[i], s_an[j], 1.0) == best

    metrics_equal = 0
    for _ in range(100):
        # dyadic entries keep every partial sum exact
        P = rng.integers(0, 65, (4, 4)) / 64
        b = rng.integers(0, 65, 4) / 64
        s = summary_metrics(EvalMatrix(P, b))
        ap = sum(P[3, j] for j in range(4)) / 4
        bwt = sum(P[3, j] - P[j, j] for j in range(3)) / 3
        fwt = sum(P[j - 1, j] - b[j] for j in range(1, 4)) / 3
        metrics_equal += (s.ap, s.bwt, s.fwt) == (ap, bwt, fwt)

    ok = recall_equal == 50 and hard_equal == 100 and metrics_equal == 100
    record(3, ok, f"recall oracle {recall_equal}/50, mine_hard brute force {hard_equal}/100, AP/BWT/FWT hand values {metrics_equal}/100")
    assert recall_equal == 50 and hard_equal == 100 and metrics_equal == 100


# ----------------------------------------------------------------------
# 4. PKD laws


def test_criterion_4_pkd_laws():
    rng = np.random.default_rng(0)
    zero = all(pkd_loss(H, H).item() == 0.0 for H in (rng.standard_normal((b, b)) * 5 for b in range(2, 12)))
    nonneg = all(pkd_loss(rng.standard_normal((6, 6)) * 3, rng.standard_normal((6, 6)) * 3).item() >= 0.0 for _ in range(100))
    shift = 0.0
    for _ in range(100):
        a, b = rng.standard_normal((5, 5)), rng.standard_normal((5, 5))
        moved = pkd_loss(a + rng.uniform(-20, 20, (5, 1)), b + rng.uniform(-20, 20, (5, 1))).item()
        shift = max(shift, abs(moved - pkd_loss(a, b).item()))
    example = pkd_loss([[0.0, np.log(3.0)], [0.0, 0.0]], np.zeros((2, 2))).item()
    ok = zero and nonneg and shift <= 1e-10 and abs(example - 0.1308) <= 1e-4
    record(4, ok, f"KL(H,H)=0 {zero}; nonnegative on 100 pairs {nonneg}; max row-shift change {shift:.1e} (<= 1e-10); binary example {example:.6f} (0.1308 +- 1e-4)")
    assert zero and nonneg
    assert shift <= 1e-10
    assert abs(example - 0.1308) <= 1e-4


# ----------------------------------------------------------------------
# 5. directional forgetting result

FORGETTING_PRESETS = ("finetune", "full-viper", "naive-queue", "random-mining")
FORGETTING_SEEDS = (0, 1, 2, 3, 4)


@pytest.fixture(scope="module")
def forgetting_runs():
    start = time.perf_counter()
    summaries = {name: [] for name in FORGETTING_PRESETS}
    for seed in FORGETTING_SEEDS:
        world = generate(WorldSpec(seed=seed))
        for name in FORGETTING_PRESETS:
            summary, _ = train_and_evaluate(world, preset(name, TrainConfig(seed=seed)))
            summaries[name].append(summary)
    means = {name: (float(np.mean([s.ap for s in runs])), float(np.mean([s.bwt for s in runs]))) for name, runs in summaries.items()}
    return means, time.perf_counter() - start


def test_criterion_5_directional_forgetting(forgetting_runs):
    means, seconds = forgetting_runs
    ft_ap, ft_bwt = means["finetune"]
    vp_ap, vp_bwt = means["full-viper"]
    parts = {
        "a": vp_ap > ft_ap,
        "b": vp_bwt > ft_bwt and ft_bwt < 0,
        "c": vp_ap > means["naive-queue"][0],
        "d": vp_ap >= means["random-mining"][0],
    }
    in_budget = seconds < 15 * 60
    table = ", ".join(f"{name} AP {ap:.3f} BWT {bwt:+.3f}" for name, (ap, bwt) in means.items())
    verdicts = " ".join(f"({k}) {'ok' if v else 'no'}" for k, v in parts.items())
    record(5, all(parts.values()) and in_budget, f"{verdicts}; {table}; {seconds:.0f}s (< 900s)")
    assert in_budget
    assert parts["a"], f"full-viper AP {vp_ap:.4f} does not exceed finetune AP {ft_ap:.4f}"
    assert parts["b"], f"full-viper BWT {vp_bwt:.4f} vs finetune BWT {ft_bwt:.4f}"
    assert parts["c"], f"multistage AP {vp_ap:.4f} vs naive-queue AP {means['naive-queue'][0]:.4f}"
    assert parts["d"], f"adaptive AP {vp_ap:.4f} vs random-mining AP {means['random-mining'][0]:.4f}"


# ----------------------------------------------------------------------
# 6. determinism


def test_criterion_6_determinism(tmp_path, monkeypatch):
    monkeypatch.delenv("VIPER_SEED", raising=False)
    world = tmp_path / "world.vpwd"
    assert main(["gen-world", "--out", str(world)]) == 0
    for tag in ("a", "b"):
        assert main(["train", "--preset", "full-viper", "--world", str(world), "--out-dir", str(tmp_path / tag)]) == 0
        assert main(["eval", "--run-dir", str(tmp_path / tag), "--world", str(world), "--out", str(tmp_path / tag / "report")]) == 0
    # checkpoints, loss log and metric files; manifests record paths and are excluded
    wanted = ("checkpoint_*.vipr", "loss_log.csv", "report/matrix.csv", "report/long.csv", "report/summary.json")
    files = sorted(p.relative_to(tmp_path / "a") for pattern in wanted for p in (tmp_path / "a").glob(pattern))
    assert len(files) == 3 + 1 + 3
    differing = [str(p) for p in files if (tmp_path / "a" / p).read_bytes() != (tmp_path / "b" / p).read_bytes()]
    record(6, not differing, f"{len(files)} files compared byte for byte across two train+eval runs, {len(differing)} differ")
    assert not differing
