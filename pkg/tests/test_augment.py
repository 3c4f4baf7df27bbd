import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from entityaug.augment import (
    GuestContribution,
    interpolate_batch,
    interpolate_label,
    precompute_augmented_labels,
)
from entityaug.data import EntityRegistry, LabelStore, build_round_plan


def digits(n=10):
    """Entity k has class k % n."""
    reg = EntityRegistry("host", tuple(range(3 * n)))
    return LabelStore(reg, np.eye(n)[np.arange(3 * n) % n], tuple(range(n)))


LABELS = digits()


def gc(guest, entity, weight):
    return GuestContribution(guest, entity, weight)


class TestInterpolateLabel:
    def test_half_one_half_zero(self):
        out = interpolate_label([gc(0, 1, 70), gc(1, 0, 70)], LABELS)
        want = np.zeros(10)
        want[[0, 1]] = 0.5
        assert np.array_equal(out.vector, want)
        assert [w for _, w in out.provenance] == [0.5, 0.5]

    def test_single_guest_identity(self):
        out = interpolate_label([gc(0, 7, 3)], LABELS)
        assert np.array_equal(out.vector, LABELS.label(7))

    def test_two_six(self):
        out = interpolate_label([gc(0, 2, 2), gc(1, 5, 6)], LABELS)
        want = np.zeros(10)
        want[2], want[5] = 0.25, 0.75
        assert np.array_equal(out.vector, want)

    def test_same_entity_exact(self):
        out = interpolate_label([gc(g, 4, w) for g, w in enumerate((70, 70, 70, 70, 70, 70))], LABELS)
        assert np.array_equal(out.vector, LABELS.label(4))

    def test_unlabeled_entity(self):
        with pytest.raises(KeyError, match="no label"):
            interpolate_label([gc(0, 999, 1)], LABELS)

    def test_empty(self):
        with pytest.raises(ValueError):
            interpolate_label([], LABELS)

    def test_weight_below_one(self):
        with pytest.raises(ValueError):
            gc(0, 1, 0.5)


contribution_lists = st.lists(
    st.tuples(st.integers(0, 29), st.integers(1, 200)), min_size=1, max_size=6
)


@settings(max_examples=150, deadline=None)
@given(contribution_lists)
def test_convex(pairs):
    out = interpolate_label([gc(g, e, w) for g, (e, w) in enumerate(pairs)], LABELS).vector
    assert np.all((out >= 0) & (out <= 1))
    assert abs(out.sum() - 1.0) <= 1e-12
    assert abs(sum(w for _, w in interpolate_label([gc(0, e, w) for e, w in pairs], LABELS).provenance) - 1) <= 1e-12


@settings(max_examples=150, deadline=None)
@given(contribution_lists, st.randoms(use_true_random=False))
def test_permutation_symmetric(pairs, rnd):
    base = interpolate_label([gc(g, e, w) for g, (e, w) in enumerate(pairs)], LABELS).vector
    shuffled = list(enumerate(pairs))
    rnd.shuffle(shuffled)
    perm = interpolate_label([gc(g, e, w) for g, (e, w) in shuffled], LABELS).vector
    np.testing.assert_allclose(perm, base, rtol=0, atol=1e-12)


@settings(max_examples=150, deadline=None)
@given(contribution_lists, st.floats(1, 1000))
def test_scale_invariant(pairs, k):
    a = interpolate_label([gc(g, e, w) for g, (e, w) in enumerate(pairs)], LABELS).vector
    b = interpolate_label([gc(g, e, w * k) for g, (e, w) in enumerate(pairs)], LABELS).vector
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 29), min_size=1, max_size=6))
def test_equal_weights_mean(entities):
    out = interpolate_label([gc(g, e, 5) for g, e in enumerate(entities)], LABELS).vector
    np.testing.assert_allclose(out, LABELS.rows(entities).mean(axis=0), rtol=0, atol=1e-12)


class TestPrecompute:
    def test_aligned_only_gives_own_labels(self):
        plan = build_round_plan([3, 8, 11], [[], []], 0)
        table = precompute_augmented_labels(plan, LABELS, [70, 70])
        for r, row in enumerate(plan.entities):
            assert np.array_equal(table[r].vector, LABELS.label(int(row[0])))

    def test_two_misaligned_rounds_by_hand(self):
        plan = build_round_plan([], [[1, 2], [3, 4]], 0, shuffle_within_guest=False)
        table = precompute_augmented_labels(plan, LABELS, [1, 3])
        assert len(table) == 2
        for r, (a, b) in enumerate(plan.entities.tolist()):
            want = np.zeros(10)
            want[a] += 0.25
            want[b] += 0.75
            assert np.array_equal(table[r].vector, want)
        assert {tuple(row) for row in plan.entities.tolist()} == {(1, 3), (2, 4)}

    def test_memo_bit_identical_to_on_the_fly(self):
        rng = np.random.default_rng(0)
        weights = [70, 120, 33]
        mis = [rng.choice(30, 9, replace=False).tolist() for _ in weights]
        plan = build_round_plan([0, 1, 2, 3], mis, 7)
        table = precompute_augmented_labels(plan, LABELS, weights)
        for r, row in enumerate(plan.entities.tolist()):
            live = interpolate_label([gc(g, e, w) for g, (e, w) in enumerate(zip(row, weights))], LABELS)
            assert table[r].vector.tobytes() == live.vector.tobytes()

    def test_batch_bit_identical(self):
        ents = np.array([[1, 2, 3], [4, 4, 4], [9, 0, 9]])
        batch = interpolate_batch(ents, [6, 7, 11], LABELS)
        for row, got in zip(ents, batch):
            want = interpolate_label([gc(g, int(e), w) for g, (e, w) in enumerate(zip(row, [6, 7, 11]))], LABELS)
            assert got.tobytes() == want.vector.tobytes()

    def test_unlabeled_planned_entity(self):
        plan = build_round_plan([500], [[], []], 0)
        with pytest.raises(KeyError):
            precompute_augmented_labels(plan, LABELS, [1, 1])

    def test_weight_count_mismatch(self):
        with pytest.raises(ValueError):
            precompute_augmented_labels(build_round_plan([1], [[], []], 0), LABELS, [1, 1, 1])
