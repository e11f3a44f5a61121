"""
A three-stage rehearsal memory
==============================

Sensory memory is a short FIFO.  Items leaving it enter working memory
with probability l_wk / num_seen, which keeps a uniform sample of the
whole environment.  At an environment boundary working and long-term
memory are merged into a new long-term store.
"""

from collections import Counter

import numpy as np

from viper.embedder import Observation
from viper.membank import MemoryBank, NaiveQueue

grid = np.zeros((1, 1))
bank = MemoryBank(l_sn=5, l_wk=8, l_lt=6, omega=0.5, rng=0)
queue = NaiveQueue(5 + 8 + 6)

for env in range(3):
    for k in range(60):
        o = Observation(env, k % 12, k, grid)
        bank.insert(o)
        queue.insert(o)
    print(f"end of env {env}: sensory {[o.seq_index for o in bank.sensory]}")
    print(f"               working {sorted(o.seq_index for o in bank.working)}")
    bank.transition()
    queue.transition()
    print(f"  long-term envs after transition {Counter(o.env_id for o in bank.longterm)}")

# the plain queue only remembers the last environment
print("\nnaive queue envs", Counter(o.env_id for o in queue.items()))
print("multistage envs ", Counter(o.env_id for o in bank.items()))
