"""Embedding backbones: matrix factorization and linear graph propagation.

Both backbones score a (user, item) pair as the inner product of final
embeddings.  MF's final embeddings are its trainable tables; the graph
backbone propagates the trainable tables over the normalized interaction
graph and averages the layers.  Training is BPR with hand-derived gradients
and Adam, all in float64 so gradient checks and determinism are exact.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp


class BackboneError(Exception):
    pass


class NonFiniteGradient(BackboneError):
    pass


class NoNegativeCandidates(BackboneError):
    def __init__(self, user):
        super().__init__(f"user {user} has positive feedback on every item")
        self.user = user


BACKBONE_MF = "mf"
BACKBONE_LIGHTGCN = "lightgcn"


@dataclass
class EmbeddingTable:
    """User matrix P (n_users x d) and item matrix Q (n_items x d)."""

    P: np.ndarray
    Q: np.ndarray

    @property
    def d(self) -> int:
        return self.P.shape[1]

    def copy(self) -> "EmbeddingTable":
        return EmbeddingTable(self.P.copy(), self.Q.copy())


@dataclass
class TrainConfig:
    d: int = 64
    lr: float = 0.001
    batch: int = 2048
    weight_decay: float = 0.0001
    n_layers: int = 3
    epochs: int = 200
    seed: int = 0
    # early stop: quit once the epoch loss has improved by less than
    # `early_stop_tol` for `early_stop_patience` consecutive epochs
    early_stop_tol: float = 1e-4
    early_stop_patience: int = 5

    def __post_init__(self):
        if min(self.d, self.batch, self.n_layers + 1, self.epochs) < 1:
            raise ValueError("d, batch and epochs must be positive; n_layers >= 0")
        if self.lr <= 0 or self.weight_decay < 0:
            raise ValueError("lr must be positive, weight_decay non-negative")


def init_embeddings(n_users: int, n_items: int, d: int, seed: int) -> EmbeddingTable:
    """Xavier-uniform tables: entries in [-a, a] with a = sqrt(6 / (d + d))."""
    if d < 1:
        raise ValueError("d must be >= 1")
    bound = np.sqrt(6.0 / (d + d))
    rng = np.random.default_rng(seed)
    return EmbeddingTable(
        P=rng.uniform(-bound, bound, size=(n_users, d)),
        Q=rng.uniform(-bound, bound, size=(n_items, d)),
    )


def build_norm_adjacency(n_users: int, n_items: int, positives: np.ndarray) -> sp.csr_matrix:
    """Symmetric-normalized bipartite adjacency over training positives.

    Square matrix of size n_users + n_items with item nodes offset by
    n_users; edge weight 1/sqrt(deg_u * deg_i).  Isolated nodes simply get
    empty rows.
    """
    n = n_users + n_items
    positives = np.asarray(positives, dtype=np.int64).reshape(-1, 2)
    if len(positives) == 0:
        return sp.csr_matrix((n, n))
    rows = positives[:, 0]
    cols = positives[:, 1] + n_users
    data = np.ones(len(positives))
    adj = sp.coo_matrix((data, (rows, cols)), shape=(n, n))
    adj = adj + adj.T
    deg = np.asarray(adj.sum(axis=1)).ravel()
    inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    d_mat = sp.diags(inv_sqrt)
    return (d_mat @ adj @ d_mat).tocsr()


def lightgcn_propagate(base: EmbeddingTable, adj: sp.csr_matrix, n_layers: int) -> EmbeddingTable:
    """Mean of embeddings propagated 0..n_layers steps over the graph."""
    n_users = base.P.shape[0]
    emb = np.concatenate([base.P, base.Q], axis=0)
    acc = emb.copy()
    for _ in range(n_layers):
        emb = adj @ emb
        acc += emb
    acc /= n_layers + 1
    return EmbeddingTable(P=acc[:n_users], Q=acc[n_users:])


def propagate_adjoint(grad_final: EmbeddingTable, adj: sp.csr_matrix, n_layers: int) -> EmbeddingTable:
    """Adjoint of the layer-mean propagation applied to final-embedding grads.

    The propagation operator is (1/(L+1)) sum_l A^l with A symmetric, so the
    adjoint is the operator itself.
    """
    return lightgcn_propagate(grad_final, adj, n_layers)


@dataclass
class ModelState:
    """Trainable base tables plus the backbone's derived final tables.

    For MF ``final`` aliases ``base``; for the graph backbone it is the
    propagated layer mean and must be refreshed after base updates.
    """

    base: EmbeddingTable
    backbone: str
    n_layers: int = 0
    adjacency: sp.csr_matrix | None = field(default=None, repr=False)
    final: EmbeddingTable | None = None
    # set when final was edited directly and no longer derives from base
    final_detached: bool = False

    def __post_init__(self):
        if self.backbone not in (BACKBONE_MF, BACKBONE_LIGHTGCN):
            raise ValueError(f"unknown backbone {self.backbone!r}")
        if self.backbone == BACKBONE_LIGHTGCN and self.adjacency is None:
            raise ValueError("graph backbone needs an adjacency matrix")
        if self.final is None:
            self.refresh_final()

    def refresh_final(self) -> None:
        if self.backbone == BACKBONE_MF:
            self.final = self.base
        else:
            self.final = lightgcn_propagate(self.base, self.adjacency, self.n_layers)

    def copy(self) -> "ModelState":
        new_base = self.base.copy()
        return ModelState(
            base=new_base,
            backbone=self.backbone,
            n_layers=self.n_layers,
            adjacency=self.adjacency,
            final=new_base if self.backbone == BACKBONE_MF else self.final.copy(),
        )

    def with_final(self, final: EmbeddingTable) -> "ModelState":
        """Copy whose final tables are replaced (base left untouched)."""
        return ModelState(
            base=self.base,
            backbone=self.backbone,
            n_layers=self.n_layers,
            adjacency=self.adjacency,
            final=final,
            final_detached=True,
        )

    def score(self, u: int, i: int) -> float:
        return float(self.final.P[u] @ self.final.Q[i])


def score(model: ModelState, u: int, i: int) -> float:
    """Inner product of the final user and item embeddings."""
    return model.score(u, i)


class AdamState:
    """Adam moments for a dict of named parameter arrays."""

    def __init__(self, params: dict[str, np.ndarray], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        """Bias-corrected Adam update, applied to params in place."""
        for g in grads.values():
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradient("gradient contains NaN or inf")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for key, g in grads.items():
            m = self.m[key]
            v = self.v[key]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[key] -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softplus(x):
    """log(1 + e^x), numerically stable."""
    return np.logaddexp(0.0, x)


def bpr_loss_and_grads(P: np.ndarray, Q: np.ndarray, users: np.ndarray,
                       pos_items: np.ndarray, neg_items: np.ndarray):
    """Mean BPR loss over (u, i, j) triples and dense gradients wrt P, Q.

    Per triple: -log sigmoid(P_u.Q_i - P_u.Q_j).  Gradients are scaled by
    1/n_triples to match the mean loss.
    """
    n = len(users)
    pu = P[users]
    qi = Q[pos_items]
    qj = Q[neg_items]
    margin = np.sum(pu * (qi - qj), axis=1)
    loss = float(np.mean(softplus(-margin)))
    # d(-log sigmoid(s))/ds = -sigmoid(-s)
    coeff = -sigmoid(-margin) / n
    grad_P = np.zeros_like(P)
    grad_Q = np.zeros_like(Q)
    np.add.at(grad_P, users, coeff[:, None] * (qi - qj))
    np.add.at(grad_Q, pos_items, coeff[:, None] * pu)
    np.add.at(grad_Q, neg_items, -coeff[:, None] * pu)
    return loss, grad_P, grad_Q


def sample_negatives(rng: np.random.Generator, users: np.ndarray,
                     pos_sets: list[frozenset], n_items: int) -> np.ndarray:
    """One uniform non-interacted item per user occurrence, by redraw."""
    out = rng.integers(0, n_items, size=len(users))
    pending = np.flatnonzero([out[k] in pos_sets[u] for k, u in enumerate(users)])
    while len(pending):
        for k in pending:
            if len(pos_sets[users[k]]) >= n_items:
                raise NoNegativeCandidates(int(users[k]))
        out[pending] = rng.integers(0, n_items, size=len(pending))
        pending = pending[[out[k] in pos_sets[users[k]] for k in pending]]
    return out


def bpr_train_epoch(model: ModelState, train_positives: np.ndarray,
                    cfg: TrainConfig, adam: AdamState,
                    rng: np.random.Generator,
                    pos_sets: list[frozenset] | None = None) -> float:
    """One shuffled mini-batch pass of BPR over the training positives.

    Each positive gets one fresh uniform negative.  The BPR gradient goes
    through Adam; weight decay is applied decoupled, shrinking only the rows
    the batch touched.  Returns the mean per-triple loss (BPR term plus the
    decay contribution of the touched rows).
    """
    train_positives = np.asarray(train_positives, dtype=np.int64).reshape(-1, 2)
    if len(train_positives) == 0:
        raise ValueError("no training positives")
    if pos_sets is None:
        pos_sets = positives_as_sets(train_positives, model.base.P.shape[0])
    order = rng.permutation(len(train_positives))
    total = 0.0
    for start in range(0, len(order), cfg.batch):
        batch = train_positives[order[start:start + cfg.batch]]
        users, pos_items = batch[:, 0], batch[:, 1]
        neg_items = sample_negatives(rng, users, pos_sets, model.base.Q.shape[0])

        loss, gP_final, gQ_final = bpr_loss_and_grads(
            model.final.P, model.final.Q, users, pos_items, neg_items)
        if model.backbone == BACKBONE_LIGHTGCN:
            g_base = propagate_adjoint(
                EmbeddingTable(gP_final, gQ_final), model.adjacency, model.n_layers)
        else:
            g_base = EmbeddingTable(gP_final, gQ_final)
        adam.step({"P": model.base.P, "Q": model.base.Q},
                  {"P": g_base.P, "Q": g_base.Q})

        u_rows = np.unique(users)
        i_rows = np.unique(np.concatenate([pos_items, neg_items]))
        decay_term = cfg.weight_decay * (
            np.sum(model.base.P[u_rows] ** 2) + np.sum(model.base.Q[i_rows] ** 2)
        ) / len(batch)
        model.base.P[u_rows] *= 1.0 - cfg.lr * cfg.weight_decay
        model.base.Q[i_rows] *= 1.0 - cfg.lr * cfg.weight_decay

        model.refresh_final()
        total += (loss + decay_term) * len(batch)
    return total / len(train_positives)


def positives_as_sets(train_positives: np.ndarray, n_users: int) -> list[frozenset]:
    sets = [set() for _ in range(n_users)]
    for u, i in np.asarray(train_positives, dtype=np.int64).reshape(-1, 2):
        sets[u].add(int(i))
    return [frozenset(s) for s in sets]


def train_backbone(n_users: int, n_items: int, train_positives: np.ndarray,
                   backbone: str, cfg: TrainConfig) -> tuple[ModelState, list[float]]:
    """Train a backbone from scratch; returns the model and epoch loss trace."""
    base = init_embeddings(n_users, n_items, cfg.d, cfg.seed)
    if backbone == BACKBONE_LIGHTGCN:
        adj = build_norm_adjacency(n_users, n_items, train_positives)
        model = ModelState(base=base, backbone=backbone, n_layers=cfg.n_layers, adjacency=adj)
    else:
        model = ModelState(base=base, backbone=backbone)
    adam = AdamState({"P": model.base.P, "Q": model.base.Q}, lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    pos_sets = positives_as_sets(train_positives, n_users)

    losses: list[float] = []
    best = np.inf
    stall = 0
    for _ in range(cfg.epochs):
        loss = bpr_train_epoch(model, train_positives, cfg, adam, rng, pos_sets)
        losses.append(loss)
        if best - loss < cfg.early_stop_tol:
            stall += 1
            if stall >= cfg.early_stop_patience:
                break
        else:
            stall = 0
        best = min(best, loss)
    return model, losses


CHECKPOINT_VERSION = 1


def checkpoint_hash(model: ModelState, meta: dict) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(model.base.P).tobytes())
    h.update(np.ascontiguousarray(model.base.Q).tobytes())
    if model.final_detached:
        h.update(np.ascontiguousarray(model.final.P).tobytes())
        h.update(np.ascontiguousarray(model.final.Q).tobytes())
    h.update(json.dumps(meta, sort_keys=True).encode())
    return h.hexdigest()


def save_checkpoint(model: ModelState, path, train_seed: int | None = None,
                    config_echo: dict | None = None) -> str:
    """Write a bitwise round-trippable checkpoint; returns its content hash."""
    meta = {
        "version": CHECKPOINT_VERSION,
        "backbone": model.backbone,
        "d": model.base.d,
        "n_layers": model.n_layers,
        "final_detached": model.final_detached,
        "train_seed": train_seed,
        "config": config_echo or {},
    }
    content_hash = checkpoint_hash(model, meta)
    meta["hash"] = content_hash
    arrays = {"P": model.base.P, "Q": model.base.Q, "meta": json.dumps(meta)}
    if model.final_detached:
        arrays.update(final_P=model.final.P, final_Q=model.final.Q)
    if model.backbone == BACKBONE_LIGHTGCN:
        coo = model.adjacency.tocoo()
        arrays.update(adj_row=coo.row, adj_col=coo.col, adj_data=coo.data,
                      adj_shape=np.array(coo.shape))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return content_hash


def load_checkpoint(path) -> tuple[ModelState, dict]:
    """Inverse of save_checkpoint; returns the model and its metadata."""
    with np.load(path, allow_pickle=False) as npz:
        meta = json.loads(str(npz["meta"]))
        base = EmbeddingTable(P=npz["P"].copy(), Q=npz["Q"].copy())
        final = None
        if meta.get("final_detached"):
            final = EmbeddingTable(P=npz["final_P"].copy(), Q=npz["final_Q"].copy())
        adjacency = None
        if meta["backbone"] == BACKBONE_LIGHTGCN:
            shape = tuple(npz["adj_shape"])
            adjacency = sp.coo_matrix(
                (npz["adj_data"], (npz["adj_row"], npz["adj_col"])), shape=shape
            ).tocsr()
    model = ModelState(base=base, backbone=meta["backbone"],
                       n_layers=meta["n_layers"], adjacency=adjacency,
                       final=final, final_detached=bool(meta.get("final_detached")))
    return model, meta
