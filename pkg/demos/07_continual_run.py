"""
Training across environments
============================

Train the same model over three environments with plain finetuning and
with the full method, then compare the evaluation matrices.  Row i is
the model after environment i; column j is the environment it is tested
on.  Numbers vary from seed to seed, so treat one run as an anecdote.
"""

import time

import numpy as np

from viper.experiments import train_and_evaluate
from viper.trainer import TrainConfig, preset
from viper.worldgen import WorldSpec, generate

world = generate(WorldSpec(seed=0))
for name in ("finetune", "full-viper"):
    start = time.perf_counter()
    summary, P = train_and_evaluate(world, preset(name, TrainConfig(seed=0)))
    print(f"{name}  ({time.perf_counter() - start:.0f}s)")
    print(np.round(P, 2))
    print(f"AP {summary.ap:.3f}  BWT {summary.bwt:+.3f}  FWT {summary.fwt:+.3f}\n")
