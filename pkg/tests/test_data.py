import numpy as np
import pytest

from recedit.data import (
    Dataset,
    DuplicatePair,
    EmptyAfterFiltering,
    EmptyDataset,
    InsufficientCandidates,
    MalformedRow,
    MaskedPairRankQuery,
    RecSnapshot,
    apply_k_core,
    build_editing_split,
    load_dataset,
    split_train_test,
)

from oracles import brute_order


def write(tmp_path, text):
    path = tmp_path / "interactions.csv"
    path.write_text(text)
    return path


class TestLoad:
    def test_densifies_tokens(self, tmp_path):
        d = load_dataset(write(tmp_path, "a,x,pos\na,y,neg\nb,x,pos\n"))
        assert (d.n_users, d.n_items) == (2, 2)
        assert len(d.positives) == 2
        assert len(d.negatives) == 1
        assert d.user_ids == ["a", "b"]
        assert d.item_ids == ["x", "y"]

    def test_header_is_optional(self, tmp_path):
        with_header = load_dataset(write(tmp_path, "user,item,feedback\na,x,pos\n"))
        assert len(with_header.positives) == 1

    def test_malformed_feedback_token(self, tmp_path):
        with pytest.raises(MalformedRow):
            load_dataset(write(tmp_path, "a,x,maybe\n"))

    def test_malformed_column_count(self, tmp_path):
        with pytest.raises(MalformedRow):
            load_dataset(write(tmp_path, "a,x\n"))

    def test_duplicate_pair(self, tmp_path):
        with pytest.raises(DuplicatePair):
            load_dataset(write(tmp_path, "a,x,pos\na,x,pos\n"))

    def test_same_pair_both_polarities_ok(self, tmp_path):
        d = load_dataset(write(tmp_path, "a,x,pos\na,x,neg\n"))
        assert len(d.positives) == len(d.negatives) == 1

    def test_empty_file(self, tmp_path):
        with pytest.raises(EmptyDataset):
            load_dataset(write(tmp_path, ""))


class TestKCore:
    def test_star_graph_collapses(self):
        # 10 users with a single positive each: k=2 removes every user, then
        # the hub item has degree 0 and goes too
        pairs = [(u, 0) for u in range(10)]
        d = Dataset.from_pairs(10, 1, pairs, [])
        with pytest.raises(EmptyAfterFiltering):
            apply_k_core(d, 2)

    def test_fixpoint_at_input(self):
        pairs = [(u, i) for u in range(3) for i in range(3)]
        d = Dataset.from_pairs(3, 3, pairs, [(0, 0)])
        out = apply_k_core(d, 2)
        assert out.n_users == 3 and out.n_items == 3
        assert len(out.positives) == 9
        assert len(out.negatives) == 1

    def test_two_round_cascade(self):
        # u1-i1, u1-i2, u2-i2: u2 and i1 fall first, then u1 and i2 follow
        d = Dataset.from_pairs(2, 2, [(0, 0), (0, 1), (1, 1)], [])
        with pytest.raises(EmptyAfterFiltering):
            apply_k_core(d, 2)

    def test_redensifies_and_drops_dangling_negatives(self):
        pairs = [(u, i) for u in range(2) for i in range(2)]  # 2x2 complete
        pairs += [(2, 2)]  # degree-1 user and item
        negs = [(2, 0), (0, 2), (1, 1)]
        out = apply_k_core(Dataset.from_pairs(3, 3, pairs, negs), 2)
        assert (out.n_users, out.n_items) == (2, 2)
        assert out.negatives.tolist() == [[1, 1]]
        assert out.user_ids == ["0", "1"]

    def test_postcondition_degrees(self):
        rng = np.random.default_rng(7)
        for trial in range(20):
            n_u, n_i = rng.integers(3, 12, size=2)
            density = rng.uniform(0.2, 0.7)
            mask = rng.random((n_u, n_i)) < density
            pairs = np.argwhere(mask)
            if len(pairs) == 0:
                continue
            d = Dataset.from_pairs(n_u, n_i, pairs, [])
            k = int(rng.integers(1, 4))
            try:
                out = apply_k_core(d, k)
            except EmptyAfterFiltering:
                continue
            assert all(len(items) >= k for items in out.pos_by_user)
            item_deg = np.bincount(out.positives[:, 1], minlength=out.n_items)
            assert (item_deg >= k).all()


class TestSplit:
    def _dataset(self, n):
        return Dataset.from_pairs(n, 1, [(u, 0) for u in range(n)], [])

    def test_sizes_ratio_08(self):
        split = split_train_test(self._dataset(10), 0.8, seed=0)
        assert (len(split.train_positives), len(split.test_positives)) == (8, 2)

    def test_floor_on_five(self):
        split = split_train_test(self._dataset(5), 0.8, seed=0)
        assert (len(split.train_positives), len(split.test_positives)) == (4, 1)

    def test_deterministic(self):
        d = self._dataset(30)
        a = split_train_test(d, 0.8, seed=3)
        b = split_train_test(d, 0.8, seed=3)
        assert np.array_equal(a.train_positives, b.train_positives)
        assert np.array_equal(a.test_positives, b.test_positives)

    def test_partition(self):
        d = self._dataset(17)
        split = split_train_test(d, 0.6, seed=1)
        got = sorted(map(tuple, np.concatenate(
            [split.train_positives, split.test_positives]).tolist()))
        assert got == sorted(map(tuple, d.positives.tolist()))


def snapshot_from_scores(scores, k, masks=None):
    scores = np.asarray(scores, dtype=float)
    n_users = scores.shape[0]
    masks = masks or [np.array([], dtype=np.int64)] * n_users
    return RecSnapshot(np.eye(n_users), scores.T, k, masks)


class TestSnapshot:
    def test_topk_ordering(self):
        snap = snapshot_from_scores([[0.9, 0.1, 0.5]], k=2)
        assert snap.topk(0).tolist() == [0, 2]

    def test_tie_breaks_by_lower_index(self):
        snap = snapshot_from_scores([[0.5, 0.5, 0.1]], k=1)
        assert snap.topk(0).tolist() == [0]

    def test_rank_skips_masked_items(self):
        snap = snapshot_from_scores([[0.9, 0.1, 0.5]], k=2, masks=[np.array([0])])
        assert snap.rank(0, 2) == 1

    def test_masked_query_raises(self):
        snap = snapshot_from_scores([[0.9, 0.1, 0.5]], k=2, masks=[np.array([0])])
        with pytest.raises(MaskedPairRankQuery):
            snap.rank(0, 0)

    def test_list_length_respects_mask(self):
        snap = snapshot_from_scores([[0.9, 0.1, 0.5]], k=5, masks=[np.array([1])])
        assert len(snap.topk(0)) == 2  # min(k, n_items - |mask|)

    def test_rank_consistent_with_list_position(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            scores = rng.standard_normal((4, 9))
            masks = [rng.choice(9, size=rng.integers(0, 3), replace=False)
                     for _ in range(4)]
            snap = snapshot_from_scores(scores, k=6, masks=masks)
            for u in range(4):
                for pos, item in enumerate(snap.topk(u), start=1):
                    assert snap.rank(u, int(item)) == pos

    def test_matches_brute_force_ordering(self):
        rng = np.random.default_rng(5)
        scores = rng.standard_normal((3, 8))
        snap = snapshot_from_scores(scores, k=8)
        for u in range(3):
            assert snap.topk(u).tolist() == brute_order(scores[u], set())


class TestEditingSplit:
    def test_two_candidate_example(self):
        # u0's top-1 is item0, u1's is item2; only those negatives qualify
        snap = snapshot_from_scores([[3.0, 1.0, 2.0], [0.0, 0.0, 5.0]], k=1)
        d = Dataset.from_pairs(2, 3, [(0, 2)], [(0, 0), (0, 1), (1, 2)])
        split = build_editing_split(snap, d, n_explicit=2, seed=0)
        assert split.explicit.tolist() == [[0, 0], [1, 2]]
        assert split.implicit.tolist() == [[0, 1]]

    def test_insufficient_candidates(self):
        snap = snapshot_from_scores([[3.0, 1.0, 2.0], [0.0, 0.0, 5.0]], k=1)
        d = Dataset.from_pairs(2, 3, [(0, 2)], [(0, 0), (0, 1), (1, 2)])
        with pytest.raises(InsufficientCandidates):
            build_editing_split(snap, d, n_explicit=3, seed=0)

    def test_partition_property(self):
        rng = np.random.default_rng(2)
        for trial in range(10):
            n_u, n_i = 5, 12
            scores = rng.standard_normal((n_u, n_i))
            neg = np.argwhere(rng.random((n_u, n_i)) < 0.3)
            if len(neg) < 4:
                continue
            snap = snapshot_from_scores(scores, k=4)
            try:
                split = build_editing_split(snap, Dataset.from_pairs(n_u, n_i, [(0, 0)], neg),
                                            n_explicit=2, seed=trial)
            except InsufficientCandidates:
                continue
            exp = set(map(tuple, split.explicit.tolist()))
            imp = set(map(tuple, split.implicit.tolist()))
            assert not exp & imp
            assert exp | imp == set(map(tuple, neg.tolist()))
            # every explicit pair really is in the pre-edit top-k
            for u, i in exp:
                assert i in set(split.pre_snapshot.topk(u, split.k_edit).tolist())

    def test_deterministic(self):
        rng = np.random.default_rng(9)
        scores = rng.standard_normal((6, 15))
        neg = np.argwhere(rng.random((6, 15)) < 0.4)
        d = Dataset.from_pairs(6, 15, [(0, 0)], neg)
        snap = snapshot_from_scores(scores, k=5)
        a = build_editing_split(snap, d, 3, seed=4)
        b = build_editing_split(snap, d, 3, seed=4)
        assert np.array_equal(a.explicit, b.explicit)
        assert np.array_equal(a.implicit, b.implicit)
