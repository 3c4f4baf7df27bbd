"""Entity augmentation: labels for host inputs assembled from different entities.

When guest ``i`` contributes an activation of width ``w_i`` computed from
entity ``j_i``, the host trains against

    y = sum_i w_i * y[j_i] / sum_i w_i

i.e. each entity's label counts in proportion to the share of the host input
it produced. If every guest sent the same entity this is exactly that
entity's label, so aligned training is the special case.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import LabelStore, RoundPlan


@dataclass(frozen=True)
class GuestContribution:
    guest: int
    entity: int
    weight: float

    def __post_init__(self) -> None:
        if not self.weight >= 1:
            raise ValueError(f"contribution weight must be >= 1, got {self.weight}")


@dataclass(frozen=True)
class AugmentedLabel:
    vector: np.ndarray
    provenance: tuple[tuple[int, float], ...]


def _lookup(labels: LabelStore, entities: Sequence[int] | np.ndarray) -> np.ndarray:
    try:
        return labels.rows(entities)
    except KeyError as exc:
        raise KeyError(f"host holds no label for {exc.args[0]}") from None


def interpolate_label(contributions: Sequence[GuestContribution], labels: LabelStore) -> AugmentedLabel:
    if not contributions:
        raise ValueError("at least one contribution is required")
    ys = _lookup(labels, [c.entity for c in contributions])
    num = np.zeros(labels.width)
    den = 0.0
    for c, y in zip(contributions, ys):
        num = num + c.weight * y
        den = den + c.weight
    provenance = tuple((c.entity, c.weight / den) for c in contributions)
    return AugmentedLabel(num / den, provenance)


def interpolate_batch(entities: np.ndarray, weights: Sequence[float], labels: LabelStore) -> np.ndarray:
    """Row-wise :func:`interpolate_label` for a ``(batch, guests)`` id matrix.

    Accumulates guests in the same order with the same operations, so each
    row is bit-identical to the scalar version.
    """
    entities = np.asarray(entities, dtype=np.int64)
    if entities.ndim != 2 or entities.shape[1] != len(weights):
        raise ValueError(f"entity matrix {entities.shape} does not match {len(weights)} guest weights")
    if any(not w >= 1 for w in weights):
        raise ValueError(f"weights must be >= 1, got {list(weights)}")
    num = np.zeros((entities.shape[0], labels.width))
    den = 0.0
    for g, w in enumerate(weights):
        num = num + w * _lookup(labels, entities[:, g])
        den = den + w
    return num / den


def precompute_augmented_labels(
    plan: RoundPlan, labels: LabelStore, weights: Sequence[float]
) -> dict[int, AugmentedLabel]:
    """Label table for a whole plan, computed before training starts."""
    if plan.num_guests != len(weights):
        raise ValueError(f"plan has {plan.num_guests} guests but {len(weights)} weights given")
    vectors = interpolate_batch(plan.entities, weights, labels)
    den = 0.0
    for w in weights:
        den = den + w
    table = {}
    for r, (row, vec) in enumerate(zip(plan.entities, vectors)):
        table[r] = AugmentedLabel(vec, tuple((int(e), w / den) for e, w in zip(row, weights)))
    return table
