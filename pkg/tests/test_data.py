import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from entityaug.data import (
    DataError,
    EntityRegistry,
    FeatureTable,
    LabelStore,
    PartitionSpec,
    build_round_plan,
    intersect,
    load_csv,
    load_idx_pair,
    make_overlap_split,
    parse_assignment,
    read_idx,
    standardize,
    train_test_split,
    vertical_split,
    write_idx,
)
from entityaug.datasets import MFEAT_VIEWS


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def table(n_rows, n_cols):
    vals = np.arange(n_rows * n_cols, dtype=float).reshape(n_rows, n_cols)
    return FeatureTable(np.arange(n_rows), vals, tuple(f"c{i}" for i in range(n_cols)))


class TestLoadCsv:
    def test_three_rows_two_classes(self, tmp_path):
        p = write(tmp_path, "id,a,b,y\n0,1.5,2,0\n1,3,4,1\n2,5,6,0\n")
        t, labels = load_csv(p, "id", "y")
        assert t.width == 2 and t.values.dtype == np.float64
        assert labels.width == 2
        np.testing.assert_array_equal(labels.matrix, [[1, 0], [0, 1], [1, 0]])
        np.testing.assert_array_equal(t.values[0], [1.5, 2.0])

    def test_binary_as_column(self, tmp_path):
        p = write(tmp_path, "id,a,y\n0,1,0\n1,2,1\n")
        _, labels = load_csv(p, "id", "y", binary_as_column=True)
        assert labels.width == 1
        np.testing.assert_array_equal(labels.matrix[:, 0], [0, 1])

    def test_classes_sorted(self, tmp_path):
        p = write(tmp_path, "id,a,y\n0,1,7\n1,2,3\n2,2,5\n")
        _, labels = load_csv(p, "id", "y")
        assert labels.classes == (3.0, 5.0, 7.0)
        assert labels.class_index([0, 1, 2]).tolist() == [2, 0, 1]

    def test_duplicate_id_named(self, tmp_path):
        p = write(tmp_path, "id,a,y\n4,1,0\n4,2,1\n")
        with pytest.raises(DataError, match="4"):
            load_csv(p, "id", "y")

    def test_missing_label_column(self, tmp_path):
        p = write(tmp_path, "id,a,b\n0,1,2\n")
        with pytest.raises(DataError, match="label column"):
            load_csv(p, "id", "y")

    def test_missing_feature_column(self, tmp_path):
        p = write(tmp_path, "id,a,y\n0,1,0\n")
        with pytest.raises(DataError, match="zz"):
            load_csv(p, "id", "y", feature_columns=["a", "zz"])

    def test_non_numeric_reports_row(self, tmp_path):
        p = write(tmp_path, "id,a,y\n0,1,0\n1,oops,1\n")
        with pytest.raises(DataError, match="row 3"):
            load_csv(p, "id", "y")

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_csv(tmp_path / "none.csv", "id", "y")

    def test_row_index_ids_and_skip(self, tmp_path):
        p = write(tmp_path, "junk line\na,y\n1,0\n2,1\n")
        t, _ = load_csv(p, None, "y", skip_rows=1)
        assert t.ids.tolist() == [0, 1]


class TestIdx:
    def test_roundtrip_gz(self, tmp_path):
        arr = np.arange(2 * 3 * 4, dtype=np.uint8).reshape(2, 3, 4)
        write_idx(tmp_path / "x.gz", arr)
        back = read_idx(tmp_path / "x.gz")
        assert back.shape == (2, 3, 4)
        np.testing.assert_array_equal(back, arr)

    def test_pair_scaled(self, tmp_path):
        write_idx(tmp_path / "i", np.full((3, 2, 2), 255, np.uint8))
        write_idx(tmp_path / "l", np.array([1, 0, 1], np.uint8))
        t, raw = load_idx_pair(tmp_path / "i", tmp_path / "l", limit=2, first_id=10)
        assert t.ids.tolist() == [10, 11]
        assert np.all(t.values == 1.0)
        assert raw.tolist() == [1, 0]

    def test_bad_magic(self, tmp_path):
        (tmp_path / "b").write_bytes(b"\x01\x02\x08\x01\x00\x00\x00\x01\x00")
        with pytest.raises(DataError):
            read_idx(tmp_path / "b")


class TestRegistry:
    def test_duplicate(self):
        with pytest.raises(DataError, match="9"):
            EntityRegistry("g", (1, 9, 9))

    def test_negative(self):
        with pytest.raises(DataError):
            EntityRegistry("g", (-1,))

    def test_label_store_needs_one_hot(self):
        reg = EntityRegistry("h", (0, 1))
        with pytest.raises(ValueError):
            LabelStore(reg, np.array([[1.0, 1.0], [0.0, 1.0]]), (0, 1))


class TestVerticalSplit:
    def test_even_four_by_two(self):
        parts = vertical_split(table(3, 4), PartitionSpec.even(4, 2))
        assert [p.width for p in parts] == [2, 2]
        np.testing.assert_array_equal(parts[1].rows([2]), [[10.0, 11.0]])

    def test_even_ceil_first(self):
        assert PartitionSpec.even(23, 2).widths == [12, 11]

    def test_mnist_halves(self):
        spec = PartitionSpec.image_halves(28, 28)
        parts = vertical_split(table(2, 784), spec)
        assert [p.width for p in parts] == [392, 392]
        # first pixel row: columns 0..13 left, 14..27 right
        assert spec.column_assignment[0][:15] == tuple(range(14)) + (28,)
        assert spec.column_assignment[1][:14] == tuple(range(14, 28))

    def test_handwritten_view_widths(self):
        widths = [w for _, w in MFEAT_VIEWS]
        assert widths == [76, 216, 64, 240, 47, 6] and sum(widths) == 649
        parts = vertical_split(table(2, 649), parse_assignment(widths, 649, 6))
        assert [p.width for p in parts] == widths

    def test_overlapping_assignment(self):
        with pytest.raises(DataError, match="overlap"):
            vertical_split(table(2, 4), PartitionSpec(2, ((0, 1, 2), (2, 3))))

    def test_incomplete_assignment(self):
        with pytest.raises(DataError):
            vertical_split(table(2, 4), PartitionSpec(2, ((0,), (1, 2))))

    def test_all_entities_present(self):
        parts = vertical_split(table(5, 4), PartitionSpec.even(4, 2))
        assert all(p.registry.ids == (0, 1, 2, 3, 4) for p in parts)

    def test_unknown_entity(self):
        parts = vertical_split(table(2, 2), PartitionSpec.even(2, 2))
        with pytest.raises(KeyError):
            parts[0].rows([7])


class TestIntersect:
    def test_three_way(self):
        r = intersect([EntityRegistry("a", (1, 2, 3)), EntityRegistry("b", (2, 3, 4)), EntityRegistry("c", (3, 4))])
        assert r.ids == (3,)

    def test_disjoint(self):
        assert intersect([EntityRegistry("a", (1,)), EntityRegistry("b", (2,))]).ids == ()

    def test_identical_keeps_order(self):
        ids = (5, 1, 9)
        assert intersect([EntityRegistry("a", ids), EntityRegistry("b", (9, 5, 1))]).ids == ids

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.sets(st.integers(0, 999), max_size=200), min_size=1, max_size=4))
    def test_matches_brute_force(self, sets):
        regs = [EntityRegistry(str(k), tuple(sorted(s))) for k, s in enumerate(sets)]
        got = intersect(regs).ids
        want = [i for i in regs[0].ids if all(i in s for s in sets)]
        assert list(got) == want


class TestOverlapSplit:
    def test_ten_percent(self):
        aligned, mis = make_overlap_split(range(100), 10, 2, seed=0)
        assert len(aligned) == 10 and [len(m) for m in mis] == [45, 45]

    def test_all_aligned(self):
        aligned, mis = make_overlap_split(range(20), 100, 2, seed=0)
        assert sorted(aligned) == list(range(20)) and mis == [[], []]

    def test_zero_aligned_uneven(self):
        aligned, mis = make_overlap_split(range(7), 0, 2, seed=0)
        assert aligned == [] and [len(m) for m in mis] == [4, 3]

    @pytest.mark.parametrize("x", [-1, 100.5])
    def test_out_of_range(self, x):
        with pytest.raises(ValueError):
            make_overlap_split(range(10), x, 2, 0)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 300), st.floats(0, 100), st.integers(1, 5), st.integers(0, 2**31))
    def test_partition_invariants(self, n, x, g, seed):
        ids = list(range(1000, 1000 + n))
        aligned, mis = make_overlap_split(ids, x, g, seed)
        parts = [aligned, *mis]
        flat = [i for p in parts for i in p]
        assert sorted(flat) == ids
        assert len(set(flat)) == len(flat)
        assert len(aligned) == int(np.floor(n * x / 100 + 1e-9))
        sizes = [len(m) for m in mis]
        assert max(sizes) - min(sizes) <= 1

    def test_deterministic(self):
        assert make_overlap_split(range(50), 30, 3, 4) == make_overlap_split(range(50), 30, 3, 4)


class TestRoundPlan:
    def test_hand_enumerated(self):
        a, b, c, d, e = 1, 2, 3, 4, 5
        plan = build_round_plan([a, b], [[c], [d, e]], epoch_seed=0)
        assert len(plan) == 4
        rows = sorted(map(tuple, plan.entities.tolist()))
        assert rows == [(a, a), (b, b), (c, d), (c, e)]
        assert plan.guest_ids(0).count(c) == 2
        assert sum(plan.aligned) == 2

    def test_only_aligned(self):
        plan = build_round_plan([7, 8, 9], [[], []], epoch_seed=3)
        assert sorted(plan.guest_ids(0)) == [7, 8, 9]
        assert plan.guest_ids(0) == plan.guest_ids(1)
        assert plan.aligned.all()

    def test_fully_misaligned(self):
        plan = build_round_plan([], [[1, 2, 3], [4, 5, 6]], epoch_seed=1)
        assert len(plan) == 3
        assert all(r[0] != r[1] for r in plan.entities.tolist())
        assert not plan.aligned.any()

    def test_empty(self):
        plan = build_round_plan([], [[], []], 0)
        assert len(plan) == 0 and plan.num_guests == 2

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 60), st.floats(0, 100), st.integers(1, 4), st.integers(0, 1000))
    def test_flag_invariants(self, n, x, g, seed):
        aligned, mis = make_overlap_split(range(n), x, g, seed)
        if any(len(m) == 0 for m in mis) and any(len(m) for m in mis):
            return
        plan = build_round_plan(aligned, mis, seed)
        assert len(plan) == len(aligned) + max(len(m) for m in mis)
        for row, flag in zip(plan.entities.tolist(), plan.aligned):
            if flag:
                assert len(set(row)) == 1 and row[0] in aligned
            else:
                assert all(row[k] in mis[k] for k in range(g))

    def test_deterministic_and_epoch_dependent(self):
        args = ([1, 2, 3], [[4, 5, 6, 7], [8, 9, 10, 11]])
        p0, p1 = build_round_plan(*args, 5), build_round_plan(*args, 5)
        assert p0.to_text() == p1.to_text()
        assert build_round_plan(*args, 6).to_text() != p0.to_text()

    def test_text_format(self):
        text = build_round_plan([3], [[], []], 0).to_text()
        assert text == "round flag guest0 guest1\n0 aligned 3 3\n"


class TestSplitAndScale:
    def test_stratified_disjoint(self):
        reg = EntityRegistry("h", tuple(range(100)))
        raw = np.array([0] * 80 + [1] * 20, dtype=float)
        onehot = np.eye(2)[raw.astype(int)]
        labels = LabelStore(reg, onehot, (0.0, 1.0))
        train, test = train_test_split(labels, 0.2, 0)
        assert not set(train) & set(test)
        assert len(train) + len(test) == 100
        assert sum(1 for i in test if i >= 80) == 4

    def test_standardize_train_only(self):
        parts = vertical_split(table(4, 2), PartitionSpec.even(2, 2))
        scaled = standardize(parts, [0, 1])
        fit = scaled[0].rows([0, 1])
        np.testing.assert_allclose(fit.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(fit.std(axis=0), 1.0, atol=1e-12)
        assert scaled[0].rows([3])[0, 0] == pytest.approx(5.0)

    def test_parse_assignment_forms(self):
        assert parse_assignment("even", 5, 2).widths == [3, 2]
        assert parse_assignment("halves:4x4", 16, 2).widths == [8, 8]
        assert parse_assignment([1, 4], 5, 2).widths == [1, 4]
