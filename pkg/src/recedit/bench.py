"""Experiment orchestration: train once, edit many times, aggregate, report.

One experiment trains a single backbone, snapshots its rankings, then for
each repeat builds a fresh editing split and hands a private model copy to
every configured editor.  Editors are timed around their edit loop only.
Per-run metric rows, their mean/std aggregates, and wall-clock timings are
written as versioned CSV/JSON reports (plus rendered figures).
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import metrics as metrics_mod
from .backbones import TrainConfig, checkpoint_hash, train_backbone
from .data import (
    Dataset,
    apply_k_core,
    build_editing_split,
    load_dataset,
    save_id_maps,
    snapshot_topk,
    split_train_test,
)
from .editing import EditorConfig, run_edit
from .synthetic import SyntheticSpec, generate


class BenchError(Exception):
    pass


class SplitModelMismatch(BenchError):
    def __init__(self, expected, got):
        super().__init__(
            f"editing split was built against checkpoint {expected[:12]}..., "
            f"got {got[:12]}...")


SCHEMA_VERSION = 1

REPORT_COLUMNS = ("editor", "objective", "repeat", "ea", "ec", "ep", "es",
                  "recall", "ndcg", "recall_at_k_edit", "ndcg_at_k_edit",
                  "rounds", "converged")
TIMING_COLUMNS = ("editor", "objective", "repeat", "wall_time_s")
_NUMERIC = ("ea", "ec", "ep", "es", "recall", "ndcg",
            "recall_at_k_edit", "ndcg_at_k_edit", "rounds", "converged")


@dataclass
class ExperimentConfig:
    dataset_path: str | None = None
    synthetic: SyntheticSpec | None = None
    k_core: int = 1
    split_ratio: float = 0.8
    backbone: str = "mf"
    train: TrainConfig = field(default_factory=TrainConfig)
    editors: list[EditorConfig] = field(default_factory=lambda: [EditorConfig("eft")])
    k_edit: int = 50
    k_eval: int = 20
    n_explicit: int = 10
    repeats: int = 10
    seed: int = 0

    def __post_init__(self):
        if (self.dataset_path is None) == (self.synthetic is None):
            raise ValueError("configure exactly one of dataset_path / synthetic")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if not self.editors:
            raise ValueError("need at least one editor")

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        raw = dict(raw)
        raw.pop("schema_version", None)
        dataset = raw.pop("dataset", {})
        synthetic = dataset.get("synthetic")
        editors = [EditorConfig(**e) if isinstance(e, dict) else EditorConfig(e)
                   for e in raw.pop("editors", [{"method": "eft"}])]
        return cls(
            dataset_path=dataset.get("path"),
            synthetic=SyntheticSpec(**synthetic) if synthetic is not None else None,
            train=TrainConfig(**raw.pop("train", {})),
            editors=editors,
            **raw,
        )

    def resolved(self) -> dict:
        """Full config with every default made explicit, for provenance."""
        out = {
            "schema_version": SCHEMA_VERSION,
            "dataset": ({"path": self.dataset_path} if self.dataset_path
                        else {"synthetic": asdict(self.synthetic)}),
            "k_core": self.k_core,
            "split_ratio": self.split_ratio,
            "backbone": self.backbone,
            "train": asdict(self.train),
            "editors": [asdict(e) for e in self.editors],
            "k_edit": self.k_edit,
            "k_eval": self.k_eval,
            "n_explicit": self.n_explicit,
            "repeats": self.repeats,
            "seed": self.seed,
        }
        return out


@dataclass
class AggregateReport:
    config: dict
    rows: list[dict]
    timing: list[dict]
    summary: list[dict]
    pre_edit: dict
    checkpoint: str
    partial: bool = False
    dataset: Dataset | None = field(default=None, repr=False)


def _load_or_generate(cfg: ExperimentConfig) -> Dataset:
    if cfg.dataset_path:
        return load_dataset(cfg.dataset_path)
    return generate(cfg.synthetic)


def summarize(rows: list[dict]) -> list[dict]:
    """Population mean/std of every numeric column per (editor, objective)."""
    groups: dict[tuple[str, str], list[dict]] = {}
    for row in rows:
        groups.setdefault((row["editor"], row["objective"]), []).append(row)
    out = []
    for (editor, objective), grp in groups.items():
        entry = {"editor": editor, "objective": objective, "n": len(grp)}
        for col in _NUMERIC:
            vals = np.array([float(r[col]) for r in grp])
            entry[f"{col}_mean"] = float(np.mean(vals))
            entry[f"{col}_std"] = float(np.std(vals))
        out.append(entry)
    return out


def run_experiment(cfg: ExperimentConfig, progress=None,
                   flush_dir=None) -> AggregateReport:
    """Execute the full train -> edit -> evaluate pipeline.

    The backbone is trained once; every editor in every repeat edits a fresh
    copy of that same initial model.  Repeats only move the editing-split
    seed (base+repeat) and each editor's own seed.  If ``flush_dir`` is set,
    whatever rows exist are written there before an error propagates.
    """
    say = progress or (lambda msg: None)
    dataset = _load_or_generate(cfg)
    dataset = apply_k_core(dataset, cfg.k_core)
    split = split_train_test(dataset, cfg.split_ratio, seed=cfg.seed)
    say(f"dataset: {dataset.n_users} users x {dataset.n_items} items, "
        f"{len(dataset.positives)} pos / {len(dataset.negatives)} neg")

    model, losses = train_backbone(dataset.n_users, dataset.n_items,
                                   split.train_positives, cfg.backbone, cfg.train)
    say(f"trained {cfg.backbone} for {len(losses)} epochs "
        f"(final loss {losses[-1]:.4f})")

    masks = split.train_items_by_user(dataset.n_users)
    test_by_user = split.test_items_by_user(dataset.n_users)
    k_snap = max(cfg.k_edit, cfg.k_eval)
    pre = snapshot_topk(model, k_snap, masks)
    pre_edit = {
        "recall": metrics_mod.recall_at_k(pre, test_by_user, cfg.k_eval),
        "ndcg": metrics_mod.ndcg_at_k(pre, test_by_user, cfg.k_eval),
        "recall_at_k_edit": metrics_mod.recall_at_k(pre, test_by_user, cfg.k_edit),
        "ndcg_at_k_edit": metrics_mod.ndcg_at_k(pre, test_by_user, cfg.k_edit),
        "epochs": len(losses),
    }

    report = AggregateReport(
        config=cfg.resolved(), rows=[], timing=[], summary=[],
        pre_edit=pre_edit, checkpoint=checkpoint_hash(model, {"stage": "pre"}),
        dataset=dataset,
    )
    try:
        for r in range(cfg.repeats):
            edit_split = build_editing_split(
                pre, dataset, cfg.n_explicit, seed=cfg.seed + r, k_edit=cfg.k_edit)
            for ecfg in cfg.editors:
                run_cfg = replace(ecfg, seed=ecfg.seed + r)
                outcome = run_edit(model, edit_split, run_cfg,
                                   train_positives=split.train_positives)
                post = snapshot_topk(outcome.edited_model, k_snap, masks)
                mrep = metrics_mod.full_report(
                    pre, post, edit_split.explicit, edit_split.implicit,
                    test_by_user, cfg.k_edit, cfg.k_eval)
                report.rows.append({
                    "editor": ecfg.method, "objective": ecfg.objective, "repeat": r,
                    "ea": mrep.ea, "ec": mrep.ec, "ep": mrep.ep, "es": mrep.es,
                    "recall": mrep.recall, "ndcg": mrep.ndcg,
                    "recall_at_k_edit": metrics_mod.recall_at_k(post, test_by_user, cfg.k_edit),
                    "ndcg_at_k_edit": metrics_mod.ndcg_at_k(post, test_by_user, cfg.k_edit),
                    "rounds": outcome.rounds_used,
                    "converged": int(outcome.converged),
                })
                report.timing.append({
                    "editor": ecfg.method, "objective": ecfg.objective, "repeat": r,
                    "wall_time_s": outcome.wall_time,
                })
                say(f"repeat {r} {ecfg.tag}: es={mrep.es:.4f} ea={mrep.ea:.2f} "
                    f"rounds={outcome.rounds_used}")
    except Exception:
        report.partial = True
        report.summary = summarize(report.rows) if report.rows else []
        if flush_dir is not None:
            emit_report(report, flush_dir, figures=False)
        raise

    report.summary = summarize(report.rows)
    return report


def _atomic_write(path, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(columns, rows) -> str:
    lines = [f"# schema_version={SCHEMA_VERSION}", ",".join(columns)]
    for row in rows:
        cells = []
        for col in columns:
            val = row[col]
            cells.append(str(float(val)) if isinstance(val, float) else str(val))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def emit_report(report: AggregateReport, out_dir, figures: bool = True) -> list[str]:
    """Write report.csv, summary.csv, timing.csv, report.json (and figures).

    All files are written atomically.  Returns the paths written.
    """
    os.makedirs(out_dir, exist_ok=True)
    written = []

    path = os.path.join(out_dir, "report.csv")
    _atomic_write(path, _csv_text(REPORT_COLUMNS, report.rows))
    written.append(path)

    summary_cols = ["editor", "objective", "n"]
    for col in _NUMERIC:
        summary_cols += [f"{col}_mean", f"{col}_std"]
    path = os.path.join(out_dir, "summary.csv")
    _atomic_write(path, _csv_text(summary_cols, report.summary))
    written.append(path)

    path = os.path.join(out_dir, "timing.csv")
    _atomic_write(path, _csv_text(TIMING_COLUMNS, report.timing))
    written.append(path)

    payload = {
        "schema_version": SCHEMA_VERSION,
        "partial": report.partial,
        "config": report.config,
        "checkpoint": report.checkpoint,
        "pre_edit": report.pre_edit,
        "rows": report.rows,
        "timing": report.timing,
        "summary": report.summary,
    }
    path = os.path.join(out_dir, "report.json")
    _atomic_write(path, json.dumps(payload, indent=2) + "\n")
    written.append(path)

    if report.dataset is not None:
        path = os.path.join(out_dir, "ids.json")
        save_id_maps(report.dataset, path)
        written.append(path)

    if figures and report.rows:
        from .figures import render_report_figures
        written += render_report_figures(report, out_dir)
    return written


def save_split_file(split, checkpoint: str, path, seed: int | None = None) -> None:
    """Persist an editing split, pinned to its source checkpoint's hash."""
    payload = {
        "schema_version": SCHEMA_VERSION,
        "checkpoint_hash": checkpoint,
        "k_edit": int(split.k_edit),
        "seed": seed,
        "explicit": [[int(u), int(i)] for u, i in split.explicit],
    }
    _atomic_write(path, json.dumps(payload, indent=2) + "\n")


def load_split_file(path, dataset: Dataset, pre_snapshot, expected_hash: str):
    """Rebuild an EditingSplit from file; hard error on checkpoint mismatch."""
    from .data import EditingSplit

    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload["checkpoint_hash"] != expected_hash:
        raise SplitModelMismatch(payload["checkpoint_hash"], expected_hash)
    explicit = sorted((int(u), int(i)) for u, i in payload["explicit"])
    explicit_set = set(explicit)
    negatives = sorted(map(tuple, dataset.negatives.tolist()))
    implicit = [p for p in negatives if p not in explicit_set]
    return EditingSplit(
        explicit=np.array(explicit, dtype=np.int64).reshape(-1, 2),
        implicit=np.array(implicit, dtype=np.int64).reshape(-1, 2),
        pre_snapshot=pre_snapshot,
        k_edit=int(payload["k_edit"]),
    )


def parse_report_csv(path) -> list[dict]:
    """Read back a versioned report/timing CSV into row dicts."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if not ln.startswith("#")]
    header = lines[0].split(",")
    rows = []
    for line in lines[1:]:
        if not line:
            continue
        rows.append(dict(zip(header, line.split(","))))
    return rows
