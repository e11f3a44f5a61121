import csv
from dataclasses import replace

import numpy as np
import pytest

from viper import trainer as tr
from viper.autodiff import Tensor
from viper.embedder import load_checkpoint
from viper.trainer import PRESETS, TrainConfig, preset, run_sequence, sgd_step
from viper.worldgen import Dataset, WorldSpec, generate

TINY = WorldSpec(num_envs=3, places_per_env=5, visits_per_place=4, seed=3)
FAST = dict(steps_per_env=25, l_sn=8, l_wk=6, l_lt=4, pkd_batch=4, channels=6, clusters=3, out_dim=8)


@pytest.fixture(scope="module")
def world():
    return generate(TINY)


def fast(name="full-viper", **kw):
    return preset(name, TrainConfig(**FAST), **kw)


def read_log(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], [[float(v) for v in r] for r in rows[1:]]


def test_sgd_momentum_recursion():
    theta = Tensor(1.0, requires_grad=True)
    state = {}
    sgd_step({"w": theta}, {"w": np.array(1.0)}, state, lr=0.1, momentum=0.9)
    assert theta.item() == pytest.approx(0.9, abs=1e-15)
    sgd_step({"w": theta}, {"w": np.array(1.0)}, state, lr=0.1, momentum=0.9)
    assert theta.item() == pytest.approx(0.9 - 0.19, abs=1e-15)


def test_sgd_plain_and_zero_gradient():
    theta = Tensor([1.0, -2.0], requires_grad=True)
    state = {}
    for _ in range(3):
        sgd_step({"w": theta}, {"w": np.array([1.0, 2.0])}, state, lr=0.5, momentum=0.0)
    np.testing.assert_array_equal(theta.data, [-0.5, -5.0])
    still = Tensor([3.0], requires_grad=True)
    state = {}
    for _ in range(10):
        sgd_step({"w": still}, {}, state, lr=0.5, momentum=0.9)
    assert still.data.tolist() == [3.0]


def test_sgd_rejects_nan_gradient():
    with pytest.raises(FloatingPointError, match="'w'"):
        sgd_step({"w": Tensor([1.0])}, {"w": np.array([np.nan])}, {}, lr=0.1, momentum=0.9)


def test_config_validation_and_presets():
    for bad in (dict(lr=0.0), dict(momentum=1.0), dict(lambda1=-1), dict(mining="greedy"), dict(memory="disk"), dict(pkd_batch=1)):
        with pytest.raises(ValueError):
            TrainConfig(**bad)
    with pytest.raises(KeyError):
        preset("nope")
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"learning_rate": 0.1})
    cfg = TrainConfig(seed=4)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    assert set(PRESETS) == {"finetune", "naive-queue", "random-mining", "hard-mining", "no-rmas", "no-pkd", "full-viper"}
    ft = preset("finetune")
    assert not ft.use_rmas and not ft.use_pkd and ft.mining == "random"
    assert preset("full-viper", TrainConfig(seed=9)).seed == 9


def test_toggles_off_leave_only_triplet(world):
    cfg = fast("finetune", memory=tr.NAIVE_QUEUE)
    art = run_sequence(world, cfg)
    assert art.loss_log
    for _step, _env, l_trip, l_rmas, l_pkd, total in art.loss_log:
        assert l_rmas == 0.0 and l_pkd == 0.0 and total == l_trip


def test_first_environment_has_no_regularizer(world):
    art = run_sequence(world, fast(lambda1=5.0, lambda2=5.0))
    first = [r for r in art.loss_log if r[1] == 0]
    later = [r for r in art.loss_log if r[1] > 0]
    assert first and all(r[3] == 0.0 and r[4] == 0.0 for r in first)
    assert any(r[3] > 0 for r in later) and any(r[4] > 0 for r in later)


def test_total_loss_is_additive(world):
    cfg = fast(lambda1=3.0, lambda2=0.5)
    art = run_sequence(world, cfg)
    for _s, _e, l_trip, l_rmas, l_pkd, total in art.loss_log:
        assert abs(total - (l_trip + cfg.lambda1 * l_rmas + cfg.lambda2 * l_pkd)) <= 1e-12


def test_frozen_reference_never_gets_gradients(world):
    t = tr.Trainer(fast(), tr.init_model(fast(), TINY.raw_channels), world.labeler)
    for env in range(2):
        rows, imp = t.train_environment(env, world.environment(env))
        t.end_environment(imp)
        assert all(p.grad is None for p in t.reference.params_prev.trainable().values())
        assert not any(p.requires_grad for p in t.reference.params_prev.trainable().values())
    assert t.envs_done == 2


def test_run_writes_checkpoints_and_log(tmp_path, world):
    cfg = fast()
    art = run_sequence(world, cfg, tmp_path)
    assert [p.name for p in art.checkpoints] == ["checkpoint_0.vipr", "checkpoint_1.vipr", "checkpoint_2.vipr"]
    header, rows = read_log(tmp_path / "loss_log.csv")
    assert tuple(header) == tr.LOSS_LOG_HEADER
    steps = [r[0] for r in rows]
    assert steps == sorted(steps) and len(set(steps)) == len(steps)
    params, omega = load_checkpoint(art.checkpoints[-1])
    for name, t in art.params_history[-1].trainable().items():
        np.testing.assert_array_equal(params.trainable()[name].data, t.data)
        assert np.all(omega[name] >= 0)


def test_run_is_deterministic(tmp_path, world):
    cfg = fast()
    run_sequence(world, cfg, tmp_path / "a")
    run_sequence(world, cfg, tmp_path / "b")
    for name in ("checkpoint_0.vipr", "checkpoint_1.vipr", "checkpoint_2.vipr", "loss_log.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    run_sequence(world, replace(cfg, seed=1), tmp_path / "c")
    assert (tmp_path / "c" / "checkpoint_2.vipr").read_bytes() != (tmp_path / "a" / "checkpoint_2.vipr").read_bytes()


class _OneEnv:
    """A single-environment dataset (WorldSpec itself requires two)."""

    def __init__(self, ds: Dataset):
        self.observations = ds.environment(0)
        self.labeler = ds.labeler
        self.num_envs = 1

    def environment(self, env_id):
        return self.observations


def test_single_environment_run(world):
    art = run_sequence(_OneEnv(world), fast())
    assert len(art.params_history) == 1
    assert all(r[3] == 0.0 and r[4] == 0.0 for r in art.loss_log)


def test_checkpoint_failure_leaves_partial_marker(tmp_path, world, monkeypatch):
    real = tr.save_checkpoint
    calls = []

    def flaky(path, params, omega=None):
        calls.append(path)
        if len(calls) == 2:
            raise OSError("disk full")
        real(path, params, omega)

    monkeypatch.setattr(tr, "save_checkpoint", flaky)
    with pytest.raises(OSError):
        run_sequence(world, fast(), tmp_path)
    assert (tmp_path / "PARTIAL").exists()
    assert (tmp_path / "checkpoint_0.vipr").exists()


def test_every_mining_and_memory_kind_trains(world):
    for name in ("hard-mining", "random-mining", "naive-queue", "no-rmas", "no-pkd"):
        art = run_sequence(world, fast(name))
        assert len(art.params_history) == 3
        assert all(np.isfinite(r[5]) for r in art.loss_log)
