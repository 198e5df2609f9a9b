"""Editing objectives and the editor family built around them.

The pairwise editing loss demotes each flagged item below the user's other
pre-edit top-k items; the pointwise variant just pushes the flagged score
down.  Editors differ in where gradients land (original parameters vs the
detached final embeddings) and in what they add to the objective
(regularizers, per-pair confidence weights, replayed training interactions).
Each runs a capped fixpoint loop: update, re-rank the flagged pairs, stop
once all of them have left the top-k.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .backbones import (
    BACKBONE_LIGHTGCN,
    AdamState,
    EmbeddingTable,
    ModelState,
    positives_as_sets,
    propagate_adjoint,
    sample_negatives,
    sigmoid,
    softplus,
)
from .data import EditingSplit, pair_ranks


class EditingError(Exception):
    pass


class EmptyEditSet(EditingError):
    pass


class DegenerateRecommendationList(EditingError):
    def __init__(self, user, item):
        super().__init__(
            f"user {user}'s pre-edit list holds nothing but the edited item {item}")


class NotEnoughTrainingData(EditingError):
    pass


EDITOR_TAGS = ("ft", "eft", "lwf", "l2", "sriu", "rsr", "spmf")
OBJECTIVE_TAGS = ("ebpr", "ebce")


@dataclass
class EditorConfig:
    method: str
    objective: str = "ebpr"
    lr: float = 0.01
    max_rounds: int = 20
    reg_weight: float = 0.01  # lambda for lwf / l2
    n_replay: int = 10  # N for rsr / spmf
    seed: int = 0

    def __post_init__(self):
        if self.method not in EDITOR_TAGS:
            raise ValueError(f"unknown editor {self.method!r}; expected one of {EDITOR_TAGS}")
        if self.objective not in OBJECTIVE_TAGS:
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.max_rounds < 1 or self.n_replay < 1 or self.reg_weight < 0:
            raise ValueError("max_rounds and n_replay must be >= 1, reg_weight >= 0")

    @property
    def tag(self) -> str:
        return f"{self.method}:{self.objective}"


@dataclass
class EditSet:
    """Explicit pairs plus their frozen pre-edit top-k anchor lists.

    ``anchors[e]`` is the user's pre-edit top-k with the edited item removed;
    it never changes across rounds.  ``weights[e]`` scales pair e's objective
    terms (all ones except for confidence-weighted editing).
    """

    users: np.ndarray
    items: np.ndarray
    anchors: list[np.ndarray]
    weights: np.ndarray = None

    def __post_init__(self):
        if len(self.users) == 0:
            raise EmptyEditSet("no explicit pairs to edit")
        if self.weights is None:
            self.weights = np.ones(len(self.users))
        for u, i, anchor in zip(self.users, self.items, self.anchors):
            if len(anchor) == 0:
                raise DegenerateRecommendationList(int(u), int(i))


def build_edit_set(split: EditingSplit) -> EditSet:
    users = split.explicit[:, 0]
    items = split.explicit[:, 1]
    anchors = []
    for u, i in zip(users, items):
        topk = split.pre_snapshot.topk(int(u), split.k_edit)
        anchors.append(topk[topk != i])
    return EditSet(users=users, items=items, anchors=anchors)


def _flatten_terms(edits: EditSet):
    """One row per (pair, anchor) term: user, anchor item, edited item, weight."""
    t_user = np.concatenate([
        np.full(len(a), u, dtype=np.int64) for u, a in zip(edits.users, edits.anchors)])
    t_anchor = np.concatenate(edits.anchors)
    t_item = np.concatenate([
        np.full(len(a), i, dtype=np.int64) for i, a in zip(edits.items, edits.anchors)])
    t_weight = np.concatenate([
        np.full(len(a), w) for w, a in zip(edits.weights, edits.anchors)])
    return t_user, t_anchor, t_item, t_weight


def ebpr_loss_and_grads(P: np.ndarray, Q: np.ndarray, edits: EditSet):
    """Pairwise editing loss and dense gradients wrt the given embeddings.

    Sum over pairs e and anchors j of -log sigmoid(x_uj - x_uie), each term
    scaled by the pair weight.  The per-term gradient wrt the edited score is
    sigmoid(x_uie - x_uj).
    """
    t_user, t_anchor, t_item, t_weight = _flatten_terms(edits)
    pu = P[t_user]
    x_anchor = np.sum(pu * Q[t_anchor], axis=1)
    x_edit = np.sum(pu * Q[t_item], axis=1)
    loss = float(np.sum(t_weight * softplus(x_edit - x_anchor)))
    coeff = t_weight * sigmoid(x_edit - x_anchor)
    grad_P = np.zeros_like(P)
    grad_Q = np.zeros_like(Q)
    np.add.at(grad_P, t_user, coeff[:, None] * (Q[t_item] - Q[t_anchor]))
    np.add.at(grad_Q, t_item, coeff[:, None] * pu)
    np.add.at(grad_Q, t_anchor, -coeff[:, None] * pu)
    return loss, grad_P, grad_Q


def ebce_loss_and_grads(P: np.ndarray, Q: np.ndarray, edits: EditSet):
    """Pointwise label-0 loss on the edited pairs: sum of -log(1 - sigmoid(x))."""
    users, items, weights = edits.users, edits.items, edits.weights
    pu = P[users]
    x = np.sum(pu * Q[items], axis=1)
    loss = float(np.sum(weights * softplus(x)))
    coeff = weights * sigmoid(x)
    grad_P = np.zeros_like(P)
    grad_Q = np.zeros_like(Q)
    np.add.at(grad_P, users, coeff[:, None] * Q[items])
    np.add.at(grad_Q, items, coeff[:, None] * pu)
    return loss, grad_P, grad_Q


def confidence_weights(original: ModelState, explicit: np.ndarray) -> np.ndarray:
    """Softmax of z-normalized original scores, rescaled to sum to |pairs|.

    Pairs the original model recommended most confidently get edited hardest;
    identical scores degrade to equal weights.
    """
    scores = np.array([original.score(int(u), int(i)) for u, i in explicit])
    std = float(np.std(scores))
    z = (scores - np.mean(scores)) / std if std > 0 else np.zeros_like(scores)
    expz = np.exp(z - np.max(z))
    return len(scores) * expz / np.sum(expz)


@dataclass
class ReplayBuffer:
    """Training interactions mixed into the edit objective each round."""

    kind: str  # "rsr" | "spmf"
    pos_users: np.ndarray
    pos_items: np.ndarray
    neg_users: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    neg_items: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))


def sample_replay(kind: str, n_replay: int, train_positives: np.ndarray,
                  original: ModelState, rng: np.random.Generator) -> ReplayBuffer:
    """Draw the replay interactions once, before the edit loop.

    "rsr" draws positives uniformly without replacement.  "spmf" draws
    positives with probability proportional to the softmax of the original
    model's scores on the training positives, plus the same number of
    negatives uniform over all non-interacted pairs.
    """
    train_positives = np.asarray(train_positives, dtype=np.int64).reshape(-1, 2)
    if len(train_positives) == 0:
        raise NotEnoughTrainingData("replay editing needs training positives")
    if kind == "rsr":
        if len(train_positives) < n_replay:
            raise NotEnoughTrainingData(
                f"need {n_replay} training positives, have {len(train_positives)}")
        rows = rng.choice(len(train_positives), size=n_replay, replace=False)
        chosen = train_positives[np.sort(rows)]
        return ReplayBuffer(kind=kind, pos_users=chosen[:, 0], pos_items=chosen[:, 1])

    scores = np.sum(original.final.P[train_positives[:, 0]]
                    * original.final.Q[train_positives[:, 1]], axis=1)
    expx = np.exp(scores - np.max(scores))
    rows = rng.choice(len(train_positives), size=n_replay, replace=True,
                      p=expx / np.sum(expx))
    chosen = train_positives[rows]

    n_users = original.final.P.shape[0]
    n_items = original.final.Q.shape[0]
    pos_sets = positives_as_sets(train_positives, n_users)
    free_per_user = np.array([n_items - len(s) for s in pos_sets], dtype=np.int64)
    if free_per_user.sum() == 0:
        raise NotEnoughTrainingData("no non-interacted pairs to sample negatives from")
    cum = np.cumsum(free_per_user)
    neg_users = np.empty(n_replay, dtype=np.int64)
    neg_items = np.empty(n_replay, dtype=np.int64)
    for k in range(n_replay):
        # uniform over the set of non-interacted (user, item) pairs
        flat = rng.integers(0, cum[-1])
        u = int(np.searchsorted(cum, flat, side="right"))
        local = flat - (cum[u - 1] if u else 0)
        allowed = np.setdiff1d(np.arange(n_items), np.fromiter(pos_sets[u], dtype=np.int64))
        neg_users[k] = u
        neg_items[k] = allowed[local]
    return ReplayBuffer(kind=kind, pos_users=chosen[:, 0], pos_items=chosen[:, 1],
                        neg_users=neg_users, neg_items=neg_items)


def _replay_grads(P, Q, buf: ReplayBuffer, pos_sets, rng):
    """Loss and gradients of the replay terms on the current embeddings."""
    grad_P = np.zeros_like(P)
    grad_Q = np.zeros_like(Q)
    if buf.kind == "rsr":
        # pairwise terms against a fresh uniform negative per replayed positive
        neg = sample_negatives(rng, buf.pos_users, pos_sets, Q.shape[0])
        pu = P[buf.pos_users]
        margin = np.sum(pu * (Q[buf.pos_items] - Q[neg]), axis=1)
        loss = float(np.sum(softplus(-margin)))
        coeff = -sigmoid(-margin)
        np.add.at(grad_P, buf.pos_users, coeff[:, None] * (Q[buf.pos_items] - Q[neg]))
        np.add.at(grad_Q, buf.pos_items, coeff[:, None] * pu)
        np.add.at(grad_Q, neg, -coeff[:, None] * pu)
        return loss, grad_P, grad_Q

    # pointwise terms: replayed positives keep label 1, sampled negatives label 0
    pu = P[buf.pos_users]
    x_pos = np.sum(pu * Q[buf.pos_items], axis=1)
    loss = float(np.sum(softplus(-x_pos)))
    coeff = -sigmoid(-x_pos)
    np.add.at(grad_P, buf.pos_users, coeff[:, None] * Q[buf.pos_items])
    np.add.at(grad_Q, buf.pos_items, coeff[:, None] * pu)

    pn = P[buf.neg_users]
    x_neg = np.sum(pn * Q[buf.neg_items], axis=1)
    loss += float(np.sum(softplus(x_neg)))
    coeff = sigmoid(x_neg)
    np.add.at(grad_P, buf.neg_users, coeff[:, None] * Q[buf.neg_items])
    np.add.at(grad_Q, buf.neg_items, coeff[:, None] * pn)
    return loss, grad_P, grad_Q


@dataclass
class EditOutcome:
    edited_model: ModelState
    rounds_used: int
    wall_time: float
    converged: bool
    n_propagations: int = 0


def _explicit_ranks(final: EmbeddingTable, edits: EditSet, mask) -> np.ndarray:
    ranks = np.empty(len(edits.users), dtype=np.int64)
    for e, (u, i) in enumerate(zip(edits.users, edits.items)):
        scores = final.P[int(u)] @ final.Q.T
        ranks[e] = pair_ranks(scores, mask[int(u)], int(u), np.array([int(i)]))[0]
    return ranks


def run_edit(model: ModelState, split: EditingSplit, cfg: EditorConfig,
             train_positives: np.ndarray | None = None) -> EditOutcome:
    """Run one editor against a private copy of the model.

    Each round takes one Adam step on the full objective, then re-ranks the
    explicit pairs against the updated final embeddings; the loop stops when
    every explicit pair has rank > k_edit or the round cap is hit.  Only the
    loop is timed.  Replay editors require ``train_positives``.
    """
    if len(split.explicit) == 0:
        raise EmptyEditSet("editing split has no explicit pairs")
    edits = build_edit_set(split)
    if cfg.method == "sriu":
        edits.weights = confidence_weights(model, split.explicit)

    rng = np.random.default_rng(cfg.seed)
    replay = None
    pos_sets = None
    if cfg.method in ("rsr", "spmf"):
        if train_positives is None or len(train_positives) == 0:
            raise NotEnoughTrainingData(f"{cfg.method} needs training positives")
        pos_sets = positives_as_sets(train_positives, model.final.P.shape[0])
        replay = sample_replay(cfg.method, cfg.n_replay, train_positives, model, rng)

    objective = ebpr_loss_and_grads if cfg.objective == "ebpr" else ebce_loss_and_grads

    if cfg.method == "eft":
        # final embeddings become free parameters; backbone never consulted
        work = model.final.copy()
        edited = model.with_final(work)
        params = {"P": work.P, "Q": work.Q}
        route_to_base = False
    else:
        edited = model.copy()
        params = {"P": edited.base.P, "Q": edited.base.Q}
        route_to_base = True

    theta0 = None
    if cfg.method == "l2":
        theta0 = {k: v.copy() for k, v in params.items()}
        theta0_size = sum(v.size for v in theta0.values())
    x0_explicit = None
    if cfg.method == "lwf":
        x0_explicit = np.sum(model.final.P[edits.users] * model.final.Q[edits.items], axis=1)

    adam = AdamState(params, lr=cfg.lr)
    mask = split.pre_snapshot.mask
    n_prop = 0
    is_graph = model.backbone == BACKBONE_LIGHTGCN

    start = time.perf_counter()
    rounds = 0
    converged = bool(np.all(_explicit_ranks(edited.final, edits, mask) > split.k_edit))
    while not converged and rounds < cfg.max_rounds:
        rounds += 1
        final = edited.final
        _, gP, gQ = objective(final.P, final.Q, edits)

        if cfg.method == "lwf":
            x = np.sum(final.P[edits.users] * final.Q[edits.items], axis=1)
            coeff = cfg.reg_weight * 2.0 * (x - x0_explicit) / len(x)
            np.add.at(gP, edits.users, coeff[:, None] * final.Q[edits.items])
            np.add.at(gQ, edits.items, coeff[:, None] * final.P[edits.users])

        if replay is not None:
            _, rP, rQ = _replay_grads(final.P, final.Q, replay, pos_sets, rng)
            gP += rP
            gQ += rQ

        if route_to_base and is_graph:
            g = propagate_adjoint(EmbeddingTable(gP, gQ), edited.adjacency, edited.n_layers)
            n_prop += 1
            grads = {"P": g.P, "Q": g.Q}
        else:
            grads = {"P": gP, "Q": gQ}

        if theta0 is not None:
            for key in grads:
                grads[key] = grads[key] + cfg.reg_weight * 2.0 * (
                    params[key] - theta0[key]) / theta0_size

        adam.step(params, grads)
        if route_to_base:
            edited.refresh_final()
            if is_graph:
                n_prop += 1
        converged = bool(np.all(_explicit_ranks(edited.final, edits, mask) > split.k_edit))
    wall = time.perf_counter() - start

    return EditOutcome(edited_model=edited, rounds_used=rounds, wall_time=wall,
                       converged=converged, n_propagations=n_prop)
