"""
Keeping old knowledge
=====================

Two penalties tie the current model to the frozen one from the previous
environment.  The importance-weighted drift term charges for moving
parameters that mattered to the descriptor geometry.  The distillation
term compares row-softmaxed similarity matrices with a KL divergence.
"""

import numpy as np

from viper import autodiff as ad
from viper.embedder import Observation, embed_batch, init_params, snapshot
from viper.regularizers import (
    FrozenReference,
    ImportanceMap,
    gram_norm_grads,
    pkd_loss,
    pkd_similarity_matrix,
    rmas_accumulate,
    rmas_loss,
)

rng = np.random.default_rng(2)
params = init_params(seed=0)
obs = [Observation(0, k, k, rng.standard_normal((16, 24))) for k in range(6)]

# importance: running mean of squared gradients of the Gram-matrix norm
importance = ImportanceMap.zeros_like(params)
for a, p, n in [(0, 1, 2), (3, 4, 5), (1, 2, 3)]:
    d = embed_batch(params, [obs[a], obs[p], obs[n]])
    rmas_accumulate(importance, gram_norm_grads(d[0], d[1], d[2], params))
for name, om in importance.omega.items():
    print(f"{name:20s} mean importance {om.mean():.2e}")

ref = FrozenReference(snapshot(params), importance)

# nudge the model and measure both penalties
params.extractor_weight.data += 0.05 * rng.standard_normal(params.extractor_weight.shape)
print("\ndrift penalty", rmas_loss(params, ref).item())
with ad.no_grad():
    h_prev = pkd_similarity_matrix(embed_batch(ref.params_prev, obs))
h_curr = pkd_similarity_matrix(embed_batch(params, obs))
print("distillation  ", pkd_loss(h_prev, h_curr).item())

# a closed-form check: one row with odds 1:3 against a flat row
print("binary example", pkd_loss([[0.0, np.log(3.0)], [0.0, 0.0]], np.zeros((2, 2))).item())
