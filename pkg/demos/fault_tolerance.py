"""
Training through a silent guest
===============================

The host keeps the last activation each guest sent. If a guest misses a
round, that activation and its entity id are used again, and the label is
blended accordingly. Here one guest drops out of 10% of the rounds.
"""

import numpy as np

from entityaug.data import EntityRegistry, FeatureTable, LabelStore, PartitionSpec, build_round_plan, vertical_split
from entityaug.nn import Activation, MlpSpec
from entityaug.protocol import FaultScript, evaluate, init_state, train_epoch

I, R = Activation.IDENTITY, Activation.RELU

# three Gaussian blobs in 6 dimensions, split 3/3 between two guests
rng = np.random.default_rng(0)
n = 600
y = rng.integers(0, 3, n)
x = rng.normal(size=(n, 6)) + 2.0 * np.eye(3)[y].repeat(2, axis=1)
table = FeatureTable(np.arange(n), x, ())
parts = vertical_split(table, PartitionSpec.even(6, 2))
labels = LabelStore(EntityRegistry("host", tuple(range(n))), np.eye(3)[y], (0, 1, 2))
train, test = list(range(480)), list(range(480, 600))


def run(faults):
    state = init_state([MlpSpec([3, 8, 4], [I, R])] * 2, MlpSpec([8, 3], [I]), parts, labels, 0.01, seed=1)
    for epoch in range(15):
        # every guest walks the whole training set in its own order
        plan = build_round_plan([], [train, train], epoch_seed=epoch)
        train_epoch(state, plan, faults=faults, batch_size=16)
    return state


rounds = 15 * 30
faults = FaultScript.random_drops(range(1, rounds), guest=1, fraction=0.1, seed=0)
clean, faulty = run(FaultScript()), run(faults)
q = faulty.host.queues
print(f"guest 1 silent in {len(faults.drops)} of {rounds} rounds")
print(f"host reads {q.reads}, consumed per guest {q.consumed}, stale reuses {q.stale_reuses}")
print(f"test accuracy without faults {evaluate(clean, test):.3f}, with faults {evaluate(faulty, test):.3f}")
