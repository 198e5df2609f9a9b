"""Interaction data model: loading, k-core filtering, splits, ranking snapshots.

Feedback is binary: positive interactions train the recommender, negative
interactions define what should be edited away.  All user/item ids are
densified to contiguous 0-based indices on load; the original tokens are kept
so reports stay readable.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np


class DataError(Exception):
    """Base class for interaction-data errors."""


class MalformedRow(DataError):
    def __init__(self, line_no, line):
        super().__init__(f"line {line_no}: cannot parse row {line!r}")
        self.line_no = line_no


class DuplicatePair(DataError):
    def __init__(self, user, item, polarity):
        super().__init__(f"duplicate {polarity} pair (user={user!r}, item={item!r})")
        self.user, self.item, self.polarity = user, item, polarity


class EmptyDataset(DataError):
    pass


class EmptyAfterFiltering(DataError):
    pass


class MaskedPairRankQuery(DataError):
    def __init__(self, user, item):
        super().__init__(f"rank query for masked pair (user={user}, item={item})")


class InsufficientCandidates(DataError):
    def __init__(self, n_candidates, n_requested):
        super().__init__(
            f"only {n_candidates} negative pairs inside the pre-edit top-k, "
            f"need {n_requested}"
        )
        self.n_candidates = n_candidates
        self.n_requested = n_requested


def _index_by_user(pairs: np.ndarray, n_users: int) -> list[np.ndarray]:
    """Per-user sorted item arrays from an (n, 2) pair array."""
    out = [[] for _ in range(n_users)]
    for u, i in pairs:
        out[u].append(i)
    return [np.array(sorted(items), dtype=np.int64) for items in out]


@dataclass
class Dataset:
    """Users, items and signed interactions with per-user index structures.

    ``positives`` / ``negatives`` are (n, 2) int arrays of (user, item) rows;
    ``pos_by_user`` / ``neg_by_user`` are per-user sorted item-index arrays
    consistent with them.  ``user_ids`` / ``item_ids`` map dense indices back
    to the original tokens.
    """

    n_users: int
    n_items: int
    positives: np.ndarray
    negatives: np.ndarray
    pos_by_user: list[np.ndarray] = field(repr=False)
    neg_by_user: list[np.ndarray] = field(repr=False)
    user_ids: list[str] = field(repr=False)
    item_ids: list[str] = field(repr=False)

    @classmethod
    def from_pairs(cls, n_users, n_items, positives, negatives,
                   user_ids=None, item_ids=None) -> "Dataset":
        positives = np.asarray(positives, dtype=np.int64).reshape(-1, 2)
        negatives = np.asarray(negatives, dtype=np.int64).reshape(-1, 2)
        return cls(
            n_users=n_users,
            n_items=n_items,
            positives=positives,
            negatives=negatives,
            pos_by_user=_index_by_user(positives, n_users),
            neg_by_user=_index_by_user(negatives, n_users),
            user_ids=list(user_ids) if user_ids is not None else [str(u) for u in range(n_users)],
            item_ids=list(item_ids) if item_ids is not None else [str(i) for i in range(n_items)],
        )


_FEEDBACK_TOKENS = {"pos": True, "neg": False}


def load_dataset(path) -> Dataset:
    """Read a `user,item,feedback` CSV and densify tokens to 0-based indices.

    Feedback tokens must be `pos` or `neg`.  Raises MalformedRow,
    DuplicatePair or EmptyDataset.
    """
    user_index: dict[str, int] = {}
    item_index: dict[str, int] = {}
    pos_pairs: list[tuple[int, int]] = []
    neg_pairs: list[tuple[int, int]] = []
    seen = set()

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        for line_no, row in enumerate(reader, start=1):
            if not row or (line_no == 1 and [c.strip().lower() for c in row] == ["user", "item", "feedback"]):
                continue
            if len(row) != 3 or row[2].strip() not in _FEEDBACK_TOKENS:
                raise MalformedRow(line_no, ",".join(row))
            user_tok, item_tok, fb_tok = (c.strip() for c in row)
            u = user_index.setdefault(user_tok, len(user_index))
            i = item_index.setdefault(item_tok, len(item_index))
            positive = _FEEDBACK_TOKENS[fb_tok]
            key = (u, i, positive)
            if key in seen:
                raise DuplicatePair(user_tok, item_tok, "pos" if positive else "neg")
            seen.add(key)
            (pos_pairs if positive else neg_pairs).append((u, i))

    if not pos_pairs and not neg_pairs:
        raise EmptyDataset(f"no interactions in {path}")

    return Dataset.from_pairs(
        n_users=len(user_index),
        n_items=len(item_index),
        positives=pos_pairs or np.empty((0, 2), dtype=np.int64),
        negatives=neg_pairs or np.empty((0, 2), dtype=np.int64),
        user_ids=list(user_index),
        item_ids=list(item_index),
    )


def save_id_maps(dataset: Dataset, path) -> None:
    """Write the dense-index -> original-token mapping as ids.json."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"users": dataset.user_ids, "items": dataset.item_ids}, fh)


def apply_k_core(dataset: Dataset, k: int) -> Dataset:
    """Iteratively drop users/items with fewer than k positives until fixpoint.

    Only positive interactions count toward degrees.  Survivors are
    re-densified; negatives touching removed users/items are dropped.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    keep_u = np.ones(dataset.n_users, dtype=bool)
    keep_i = np.ones(dataset.n_items, dtype=bool)
    pos = dataset.positives
    while True:
        alive = keep_u[pos[:, 0]] & keep_i[pos[:, 1]] if len(pos) else np.zeros(0, dtype=bool)
        u_deg = np.bincount(pos[alive, 0], minlength=dataset.n_users)
        i_deg = np.bincount(pos[alive, 1], minlength=dataset.n_items)
        new_u = keep_u & (u_deg >= k)
        new_i = keep_i & (i_deg >= k)
        if new_u.sum() == keep_u.sum() and new_i.sum() == keep_i.sum():
            break
        keep_u, keep_i = new_u, new_i
    if not keep_u.any() or not keep_i.any():
        raise EmptyAfterFiltering(f"nothing survives {k}-core filtering")

    u_map = -np.ones(dataset.n_users, dtype=np.int64)
    i_map = -np.ones(dataset.n_items, dtype=np.int64)
    u_map[keep_u] = np.arange(keep_u.sum())
    i_map[keep_i] = np.arange(keep_i.sum())

    def remap(pairs):
        if len(pairs) == 0:
            return np.empty((0, 2), dtype=np.int64)
        ok = keep_u[pairs[:, 0]] & keep_i[pairs[:, 1]]
        kept = pairs[ok]
        return np.stack([u_map[kept[:, 0]], i_map[kept[:, 1]]], axis=1)

    return Dataset.from_pairs(
        n_users=int(keep_u.sum()),
        n_items=int(keep_i.sum()),
        positives=remap(dataset.positives),
        negatives=remap(dataset.negatives),
        user_ids=[t for t, keep in zip(dataset.user_ids, keep_u) if keep],
        item_ids=[t for t, keep in zip(dataset.item_ids, keep_i) if keep],
    )


@dataclass
class TrainTestSplit:
    """Disjoint train/test partition of the positive interactions."""

    train_positives: np.ndarray
    test_positives: np.ndarray
    seed: int

    def train_items_by_user(self, n_users: int) -> list[np.ndarray]:
        return _index_by_user(self.train_positives, n_users)

    def test_items_by_user(self, n_users: int) -> list[np.ndarray]:
        return _index_by_user(self.test_positives, n_users)


def split_train_test(dataset: Dataset, ratio: float = 0.8, seed: int = 0) -> TrainTestSplit:
    """Seeded global permutation split; first floor(ratio*n) positives train."""
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must be in (0, 1)")
    n = len(dataset.positives)
    if n < 2:
        raise ValueError("need at least 2 positive interactions to split")
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(np.floor(ratio * n))
    return TrainTestSplit(
        train_positives=dataset.positives[order[:n_train]],
        test_positives=dataset.positives[order[n_train:]],
        seed=seed,
    )


def pair_ranks(scores: np.ndarray, masked_items: np.ndarray, u: int,
               items: np.ndarray) -> np.ndarray:
    """1-based ranks of items in one user's score row, mask excluded.

    rank = 1 + #(unmasked scoring higher) + #(unmasked tied with lower index).
    Raises MaskedPairRankQuery if any queried item is masked.
    """
    items = np.asarray(items, dtype=np.int64)
    masked = set(np.asarray(masked_items, dtype=np.int64).tolist())
    for i in items:
        if int(i) in masked:
            raise MaskedPairRankQuery(u, int(i))
    allowed = np.ones(len(scores), dtype=bool)
    allowed[np.asarray(masked_items, dtype=np.int64)] = False
    s_allowed = scores[allowed]
    idx_allowed = np.flatnonzero(allowed)
    out = np.empty(len(items), dtype=np.int64)
    for pos, i in enumerate(items):
        s = scores[i]
        higher = np.count_nonzero(s_allowed > s)
        tied_before = np.count_nonzero((s_allowed == s) & (idx_allowed < i))
        out[pos] = 1 + higher + tied_before
    return out


class RecSnapshot:
    """Frozen per-user ranking of one model: top-k lists plus rank queries.

    Ordering is score descending with ascending item index on ties.  Items in
    a user's mask (their training positives) are excluded from both the lists
    and the rank universe.
    """

    def __init__(self, user_emb: np.ndarray, item_emb: np.ndarray, k: int,
                 mask: list[np.ndarray]):
        if k < 1:
            raise ValueError("k must be >= 1")
        self.k = k
        self.n_users, _ = user_emb.shape
        self.n_items = item_emb.shape[0]
        self._P = np.array(user_emb, dtype=np.float64, copy=True)
        self._Q = np.array(item_emb, dtype=np.float64, copy=True)
        self.mask = [np.asarray(m, dtype=np.int64) for m in mask]
        self._lists = [self._build_list(u) for u in range(self.n_users)]

    def _scores(self, u: int) -> np.ndarray:
        return self._P[u] @ self._Q.T

    def _build_list(self, u: int) -> np.ndarray:
        scores = self._scores(u)
        allowed = np.ones(self.n_items, dtype=bool)
        allowed[self.mask[u]] = False
        idx = np.flatnonzero(allowed)
        # primary: score desc; secondary: item index asc
        order = np.lexsort((idx, -scores[idx]))
        return idx[order][: self.k]

    def topk(self, u: int, k: int | None = None) -> np.ndarray:
        """User u's ranked item list, truncated to k (defaults to snapshot k)."""
        lst = self._lists[u]
        return lst if k is None else lst[:k]

    def score(self, u: int, i: int) -> float:
        return float(self._P[u] @ self._Q[i])

    def rank(self, u: int, i: int) -> int:
        return int(self.ranks(u, np.array([i]))[0])

    def ranks(self, u: int, items: np.ndarray) -> np.ndarray:
        """1-based ranks of the given items for user u (vectorized).

        A masked item has no rank; querying one raises MaskedPairRankQuery.
        """
        return pair_ranks(self._P[u] @ self._Q.T, self.mask[u], u, items)


def snapshot_topk(model, k: int, mask: list[np.ndarray]) -> RecSnapshot:
    """Snapshot the model's final-embedding ranking at cutoff k."""
    return RecSnapshot(model.final.P, model.final.Q, k, mask)


@dataclass
class EditingSplit:
    """Explicit/implicit partition of the negative feedback.

    Explicit pairs were sampled from negatives sitting inside the pre-edit
    top-k; everything else negative is implicit.  The pre-edit snapshot is
    kept because the editing loss anchors on it.
    """

    explicit: np.ndarray
    implicit: np.ndarray
    pre_snapshot: RecSnapshot
    k_edit: int

    @property
    def all_pairs(self) -> np.ndarray:
        if len(self.explicit) == 0:
            return self.implicit
        if len(self.implicit) == 0:
            return self.explicit
        return np.concatenate([self.explicit, self.implicit], axis=0)


def build_editing_split(pre: RecSnapshot, dataset: Dataset, n_explicit: int,
                        seed: int, k_edit: int | None = None) -> EditingSplit:
    """Sample explicit pairs from negatives inside the pre-edit top-k.

    Candidates are negative pairs (u, i) with i in pre.topk(u, k_edit); a
    seeded uniform sample of n_explicit becomes the explicit set, the rest of
    the negatives the implicit set.
    """
    k_edit = pre.k if k_edit is None else k_edit
    if k_edit > pre.k:
        raise ValueError(f"k_edit={k_edit} exceeds snapshot cutoff {pre.k}")
    topk_sets = [set(pre.topk(u, k_edit).tolist()) for u in range(pre.n_users)]
    negatives = sorted(map(tuple, dataset.negatives.tolist()))
    candidates = [p for p in negatives if p[1] in topk_sets[p[0]]]
    if len(candidates) < n_explicit:
        raise InsufficientCandidates(len(candidates), n_explicit)
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(candidates), size=n_explicit, replace=False)
    explicit = sorted(candidates[j] for j in chosen)
    explicit_set = set(explicit)
    implicit = [p for p in negatives if p not in explicit_set]
    return EditingSplit(
        explicit=np.array(explicit, dtype=np.int64).reshape(-1, 2),
        implicit=np.array(implicit, dtype=np.int64).reshape(-1, 2),
        pre_snapshot=pre,
        k_edit=k_edit,
    )
