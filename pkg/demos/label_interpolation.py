"""
Labels for misaligned inputs
============================

When guests send activations of different entities, the host trains against
a blend of those entities' labels, weighted by how much of the host input
each guest produced.
"""

import numpy as np

from entityaug.augment import GuestContribution, interpolate_label
from entityaug.data import EntityRegistry, LabelStore, build_round_plan

# ten entities, entity k is digit k
labels = LabelStore(EntityRegistry("host", tuple(range(10))), np.eye(10), tuple(range(10)))

# two guests with 70-wide activations: one encoded a "1", the other a "0"
mixed = interpolate_label([GuestContribution(0, 1, 70), GuestContribution(1, 0, 70)], labels)
print("half 1, half 0:", mixed.vector)

# unequal widths shift the weight
skewed = interpolate_label([GuestContribution(0, 3, 2), GuestContribution(1, 8, 6)], labels)
print("widths 2 and 6:", skewed.vector, skewed.provenance)

# when both guests send the same entity nothing is blended at all
same = interpolate_label([GuestContribution(0, 5, 70), GuestContribution(1, 5, 70)], labels)
print("aligned:", same.vector)

# a round plan mixes aligned rounds with pairs of unrelated entities
plan = build_round_plan(aligned=[0, 1], misaligned=[[2, 3], [7, 8, 9]], epoch_seed=0)
print(plan.to_text())
