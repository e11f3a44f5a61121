"""
Global descriptors from patch grids
===================================

An observation is a grid of patch vectors.  A linear extractor with a
max0 maps every patch to local features, then GeM or a small NetVLAD
aggregates them into one unit-norm descriptor.
"""

import tempfile
from pathlib import Path

import numpy as np

from viper.embedder import GEM, NETVLAD, Observation, describe, gem_pool, init_params, load_checkpoint, save_checkpoint

rng = np.random.default_rng(1)

# GeM interpolates between the mean (p = 1) and the max (p -> inf)
feats = np.array([[1.0], [8.0]])
for p in (1, 3, 10, 50):
    print(f"GeM p={p:<3d}", gem_pool(feats, p).item())

# six observations of three places, two noisy visits each
codes = rng.standard_normal((3, 16, 24))
obs = [Observation(0, k % 3, k, codes[k % 3] + 0.3 * rng.standard_normal((16, 24))) for k in range(6)]

for agg in (GEM, NETVLAD):
    params = init_params(aggregator=agg, seed=0)
    d = describe(params, obs)
    sims = d @ d.T
    print(f"\n{agg}: descriptor shape {d.shape}, norms {np.linalg.norm(d, axis=1).round(6)}")
    print("cosine similarities (rows/cols ordered by sequence index)\n", sims.round(2))

# checkpoints round-trip bit for bit
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "model.vipr"
    save_checkpoint(path, params)
    back, _ = load_checkpoint(path)
    print("\ncheckpoint bytes", path.stat().st_size, "identical descriptors:", np.array_equal(describe(back, obs), d))
