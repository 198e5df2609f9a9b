"""Editing and ranking metrics computed from pre/post-edit snapshots.

"Recommended" uniformly means rank <= k.  The four editing metrics:

* ea - fraction of explicit pairs whose post-edit rank left the top-k.
* ec - fraction of implicit pairs edited collaboratively: pairs that were
  recommended must leave the top-k, pairs that were not must lose rank.
* ep - Jaccard overlap of pre and post recommended sets over the pairs that
  should not move (micro-aggregated over users, edit pairs excluded).
* es - harmonic mean of ec and ep.

Recall and NDCG are standard binary-relevance macro averages over users with
a nonempty test set.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .data import RecSnapshot


class MetricError(Exception):
    pass


class EmptyExplicitSet(MetricError):
    pass


class EmptyImplicitSet(MetricError):
    pass


class DegenerateUnion(MetricError):
    pass


class NoEligibleUsers(MetricError):
    pass


@dataclass
class MetricReport:
    ea: float
    ec: float
    ep: float
    es: float
    recall: float
    ndcg: float
    k_edit: int
    k_eval: int

    def as_dict(self) -> dict:
        return {"ea": self.ea, "ec": self.ec, "ep": self.ep, "es": self.es,
                "recall": self.recall, "ndcg": self.ndcg,
                "k_edit": self.k_edit, "k_eval": self.k_eval}


def _ranks_by_user(snapshot: RecSnapshot, pairs: np.ndarray) -> dict[tuple[int, int], int]:
    """Rank every (u, i) pair, grouping queries per user."""
    by_user: dict[int, list[int]] = defaultdict(list)
    for u, i in pairs:
        by_user[int(u)].append(int(i))
    out: dict[tuple[int, int], int] = {}
    for u in sorted(by_user):
        items = np.array(by_user[u], dtype=np.int64)
        for i, r in zip(items, snapshot.ranks(u, items)):
            out[(u, int(i))] = int(r)
    return out


def editing_accuracy(post: RecSnapshot, explicit: np.ndarray, k: int) -> float:
    """Fraction of explicit pairs ranked below the top-k after editing."""
    explicit = np.asarray(explicit, dtype=np.int64).reshape(-1, 2)
    if len(explicit) == 0:
        raise EmptyExplicitSet("no explicit editing pairs")
    ranks = _ranks_by_user(post, explicit)
    edited = sum(1 for p in map(tuple, explicit.tolist()) if ranks[p] > k)
    return edited / len(explicit)


def editing_collaboration(pre: RecSnapshot, post: RecSnapshot,
                          implicit: np.ndarray, k: int) -> float:
    """Fraction of implicit pairs that moved the right way.

    Formerly-recommended pairs succeed by leaving the top-k; the rest succeed
    when their post-edit rank is strictly worse than before.
    """
    implicit = np.asarray(implicit, dtype=np.int64).reshape(-1, 2)
    if len(implicit) == 0:
        raise EmptyImplicitSet("no implicit editing pairs")
    pre_ranks = _ranks_by_user(pre, implicit)
    post_ranks = _ranks_by_user(post, implicit)
    ok = 0
    for p in map(tuple, implicit.tolist()):
        before, after = pre_ranks[p], post_ranks[p]
        if before <= k:
            ok += after > k
        else:
            ok += after > before
    return ok / len(implicit)


def editing_prudence(pre: RecSnapshot, post: RecSnapshot,
                     edit_pairs: np.ndarray, k: int) -> float:
    """Micro-aggregated Jaccard of pre/post top-k sets, edit pairs excluded."""
    edit_items: dict[int, set[int]] = defaultdict(set)
    for u, i in np.asarray(edit_pairs, dtype=np.int64).reshape(-1, 2):
        edit_items[int(u)].add(int(i))
    inter = 0
    union = 0
    for u in range(pre.n_users):
        excluded = edit_items.get(u, set())
        before = set(pre.topk(u, k).tolist()) - excluded
        after = set(post.topk(u, k).tolist()) - excluded
        inter += len(before & after)
        union += len(before | after)
    if union == 0:
        raise DegenerateUnion("no unnecessary-edit recommendations on either side")
    return inter / union


def editing_score(ec: float, ep: float) -> float:
    """Harmonic mean of collaboration and prudence; 0 when both vanish."""
    if ec + ep == 0:
        return 0.0
    return 2.0 * ec * ep / (ec + ep)


def recall_at_k(snapshot: RecSnapshot, test_by_user: list[np.ndarray], k: int) -> float:
    """Macro-averaged hit fraction over users with a nonempty test set."""
    vals = []
    for u in range(snapshot.n_users):
        test_items = test_by_user[u]
        if len(test_items) == 0:
            continue
        hits = len(set(snapshot.topk(u, k).tolist()) & set(test_items.tolist()))
        vals.append(hits / len(test_items))
    if not vals:
        raise NoEligibleUsers("every user has an empty test set")
    return sum(vals) / len(vals)


def ndcg_at_k(snapshot: RecSnapshot, test_by_user: list[np.ndarray], k: int) -> float:
    """Macro-averaged binary-relevance NDCG with log2 position discounts."""
    vals = []
    for u in range(snapshot.n_users):
        test_items = test_by_user[u]
        if len(test_items) == 0:
            continue
        test_set = set(test_items.tolist())
        dcg = 0.0
        for pos, item in enumerate(snapshot.topk(u, k).tolist(), start=1):
            if item in test_set:
                dcg += 1.0 / math.log2(pos + 1)
        idcg = sum(1.0 / math.log2(p + 1) for p in range(1, min(k, len(test_items)) + 1))
        vals.append(dcg / idcg)
    if not vals:
        raise NoEligibleUsers("every user has an empty test set")
    return sum(vals) / len(vals)


def full_report(pre: RecSnapshot, post: RecSnapshot, explicit: np.ndarray,
                implicit: np.ndarray, test_by_user: list[np.ndarray],
                k_edit: int, k_eval: int) -> MetricReport:
    """All six headline metrics for one edit run."""
    ec = editing_collaboration(pre, post, implicit, k_edit)
    all_pairs = np.concatenate([
        np.asarray(explicit, dtype=np.int64).reshape(-1, 2),
        np.asarray(implicit, dtype=np.int64).reshape(-1, 2),
    ])
    ep = editing_prudence(pre, post, all_pairs, k_edit)
    return MetricReport(
        ea=editing_accuracy(post, explicit, k_edit),
        ec=ec,
        ep=ep,
        es=editing_score(ec, ep),
        recall=recall_at_k(post, test_by_user, k_eval),
        ndcg=ndcg_at_k(post, test_by_user, k_eval),
        k_edit=k_edit,
        k_eval=k_eval,
    )
