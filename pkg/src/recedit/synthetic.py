"""Desk-scale synthetic interaction data with planted low-rank preferences.

Every user's true affinity for every item is a latent inner product plus
noise.  Positives are each user's top items by true score.  Negatives mostly
sit at the bottom of true preference, but a configurable fraction is planted
just below the positives so that a well-fit model still ranks some negatives
highly - otherwise there would be nothing to edit.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .data import Dataset


class SpecInfeasible(Exception):
    pass


@dataclass
class SyntheticSpec:
    n_users: int = 200
    n_items: int = 300
    d_true: int = 8
    pos_per_user: int = 20
    neg_per_user: int = 6
    noise: float = 0.1
    adversarial_neg_fraction: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.d_true < 1:
            raise SpecInfeasible("d_true must be >= 1")
        if self.pos_per_user + self.neg_per_user > self.n_items:
            raise SpecInfeasible(
                f"{self.pos_per_user} positives + {self.neg_per_user} negatives "
                f"per user exceed {self.n_items} items")
        if not 0.0 <= self.adversarial_neg_fraction <= 1.0:
            raise SpecInfeasible("adversarial_neg_fraction must be in [0, 1]")


def true_scores(spec: SyntheticSpec) -> np.ndarray:
    """Latent score matrix U V^T + noise used to plant the feedback."""
    rng = np.random.default_rng(spec.seed)
    latent_users = rng.standard_normal((spec.n_users, spec.d_true))
    latent_items = rng.standard_normal((spec.n_items, spec.d_true))
    scores = latent_users @ latent_items.T
    if spec.noise > 0:
        scores = scores + spec.noise * rng.standard_normal(scores.shape)
    return scores


def generate(spec: SyntheticSpec) -> Dataset:
    """Plant per-user positives and negatives from the true score ordering.

    Positives are the top `pos_per_user` items.  Of the negatives,
    round(adversarial_neg_fraction * neg_per_user) are the items immediately
    below the positives (high true score, so they crack the model's top-k),
    the rest are the lowest-scored items.
    """
    scores = true_scores(spec)
    n_adv = int(round(spec.adversarial_neg_fraction * spec.neg_per_user))
    n_adv = min(n_adv, spec.neg_per_user)
    if spec.pos_per_user + n_adv + (spec.neg_per_user - n_adv) > spec.n_items:
        raise SpecInfeasible("per-user feedback exceeds the item count")

    pos_pairs = []
    neg_pairs = []
    for u in range(spec.n_users):
        row = scores[u]
        # true-preference order: score desc, item index asc on ties
        order = np.lexsort((np.arange(spec.n_items), -row))
        for i in order[: spec.pos_per_user]:
            pos_pairs.append((u, int(i)))
        for i in order[spec.pos_per_user: spec.pos_per_user + n_adv]:
            neg_pairs.append((u, int(i)))
        n_bottom = spec.neg_per_user - n_adv
        if n_bottom:
            for i in order[spec.n_items - n_bottom:]:
                neg_pairs.append((u, int(i)))

    return Dataset.from_pairs(
        n_users=spec.n_users,
        n_items=spec.n_items,
        positives=pos_pairs,
        negatives=neg_pairs,
    )


def write_csv(dataset: Dataset, path) -> None:
    """Emit the dataset in the `user,item,feedback` format the loader reads."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user", "item", "feedback"])
        for u, i in dataset.positives:
            writer.writerow([dataset.user_ids[u], dataset.item_ids[i], "pos"])
        for u, i in dataset.negatives:
            writer.writerow([dataset.user_ids[u], dataset.item_ids[i], "neg"])


def planted_auc(dataset: Dataset, model) -> float:
    """Fraction of same-user (positive, negative) pairs the model orders right.

    Exhaustive over all pairs; ties resolve by the ranking tie-break (lower
    item index wins), matching the deterministic snapshot ordering.
    """
    correct = 0
    total = 0
    for u in range(dataset.n_users):
        pos_items = dataset.pos_by_user[u]
        neg_items = dataset.neg_by_user[u]
        if len(pos_items) == 0 or len(neg_items) == 0:
            continue
        s_pos = model.final.Q[pos_items] @ model.final.P[u]
        s_neg = model.final.Q[neg_items] @ model.final.P[u]
        for ip, spos in zip(pos_items, s_pos):
            better = (s_neg < spos) | ((s_neg == spos) & (neg_items > ip))
            correct += int(np.count_nonzero(better))
            total += len(neg_items)
    return correct / total if total else 0.0
