"""
Choosing positives and negatives
================================

Random, hard and adaptive mining pick one positive and one negative from
the candidate similarities of a triplet.  Adaptive mining moves a
difficulty cursor: when the loss jumps it eases off, when the loss falls
it pushes harder.
"""

import numpy as np

from viper.mining import MiningState, hinge_value, mine_adaptive, mine_hard, mine_random

s_ap = [0.9, 0.4, 0.7]  # anchor-positive similarities
s_an = [0.2, 0.8, 0.5, 0.1, 0.3]  # anchor-negative similarities

i, j = mine_hard(s_ap, s_an)
print("hard pick", (i, j), "loss", hinge_value(s_ap[i], s_an[j], delta=1.0))
print("random picks", [mine_random((3, 5), np.random.default_rng(s)) for s in range(4)])

# feed a stream of triplets whose difficulty drifts and watch the cursor
rng = np.random.default_rng(0)
state = MiningState()
print("\nstep  loss@cursor  neg rank")
for k in range(12):
    drift = 0.3 * np.sin(k / 2)
    ap = rng.uniform(0.3, 0.6, 3) - drift
    an = rng.uniform(0.0, 0.5, 5) + drift
    i, j, state = mine_adaptive(state, ap, an)
    print(f"{k:4d}  {state.prev_loss:11.3f}  {state.neg_index:8d}")
