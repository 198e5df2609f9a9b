"""Command-line front end.

Subcommands: ``generate`` a synthetic interactions CSV, ``train`` a backbone
checkpoint, ``edit`` a checkpoint with one editor, ``bench`` a full
experiment from a JSON config, ``metrics`` recomputed from a pre/post
checkpoint pair plus a split file.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict

import numpy as np

from . import bench as bench_mod
from .backbones import TrainConfig, load_checkpoint, save_checkpoint, train_backbone
from .data import apply_k_core, load_dataset, save_id_maps, snapshot_topk, split_train_test
from .editing import EDITOR_TAGS, OBJECTIVE_TAGS, EditorConfig, run_edit
from .metrics import full_report, ndcg_at_k, recall_at_k
from .synthetic import SyntheticSpec, generate, write_csv


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="recedit",
                     description="Train, edit and benchmark implicit-feedback recommenders.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="write a synthetic interactions CSV")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--users", type=int, default=200)
    p.add_argument("--items", type=int, default=300)
    p.add_argument("--d-true", type=int, default=8)
    p.add_argument("--pos-per-user", type=int, default=20)
    p.add_argument("--neg-per-user", type=int, default=6)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--adversarial-neg-fraction", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a backbone and save a checkpoint")
    p.add_argument("--data", required=True, help="interactions CSV")
    p.add_argument("--backbone", choices=["mf", "lightgcn"], default="mf")
    p.add_argument("--out", required=True, help="checkpoint path (.npz)")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--d", type=int, default=64)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--batch", type=int, default=2048)
    p.add_argument("--weight-decay", type=float, default=0.0001)
    p.add_argument("--n-layers", type=int, default=3)
    p.add_argument("--k-core", type=int, default=1)
    p.add_argument("--split-ratio", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("edit", help="run one editor against a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="interactions CSV (defaults to the path the checkpoint echoes)")
    p.add_argument("--editor", required=True, help="|".join(EDITOR_TAGS))
    p.add_argument("--objective", choices=list(OBJECTIVE_TAGS), default="ebpr")
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--max-rounds", type=int, default=20)
    p.add_argument("--reg-weight", type=float, default=0.01)
    p.add_argument("--n-replay", type=int, default=10)
    p.add_argument("--k-edit", type=int, default=50)
    p.add_argument("--n-explicit", type=int, default=10)
    p.add_argument("--split", help="reuse an existing split file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_edit)

    p = sub.add_parser("bench", help="run a full experiment from a config")
    p.add_argument("--config", help="experiment config JSON (defaults to the synthetic benchmark)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--editors", help="comma-separated editor tags overriding the config")
    p.add_argument("--objective", choices=list(OBJECTIVE_TAGS),
                   help="objective applied to all editors")
    p.add_argument("--seed", type=int, help="override the base seed")
    p.add_argument("--repeats", type=int, help="override the repeat count")
    p.add_argument("--no-figures", action="store_true", help="skip PNG rendering")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("metrics", help="recompute metrics from two checkpoints and a split")
    p.add_argument("--pre", required=True, help="pre-edit checkpoint")
    p.add_argument("--post", required=True, help="post-edit checkpoint")
    p.add_argument("--split", required=True, help="split file")
    p.add_argument("--data", help="interactions CSV (defaults to the checkpoint echo)")
    p.add_argument("--k-edit", type=int, default=50)
    p.add_argument("--k-eval", type=int, default=20)
    p.add_argument("--out", help="optional metrics JSON path")
    p.set_defaults(func=cmd_metrics)
    return parser


def cmd_generate(args) -> int:
    spec = SyntheticSpec(
        n_users=args.users, n_items=args.items, d_true=args.d_true,
        pos_per_user=args.pos_per_user, neg_per_user=args.neg_per_user,
        noise=args.noise, adversarial_neg_fraction=args.adversarial_neg_fraction,
        seed=args.seed)
    dataset = generate(spec)
    write_csv(dataset, args.out)
    print(f"wrote {args.out}: {dataset.n_users} users, {dataset.n_items} items, "
          f"{len(dataset.positives)} pos, {len(dataset.negatives)} neg")
    return 0


def _pipeline_from_echo(data_path, echo: dict):
    """Rebuild dataset and train/test split exactly as at training time."""
    dataset = load_dataset(data_path)
    dataset = apply_k_core(dataset, echo["k_core"])
    split = split_train_test(dataset, echo["split_ratio"], seed=echo["split_seed"])
    return dataset, split


def cmd_train(args) -> int:
    cfg = TrainConfig(d=args.d, lr=args.lr, batch=args.batch,
                      weight_decay=args.weight_decay, n_layers=args.n_layers,
                      epochs=args.epochs, seed=args.seed)
    echo = {"data": os.path.abspath(args.data), "k_core": args.k_core,
            "split_ratio": args.split_ratio, "split_seed": args.seed,
            **asdict(cfg)}
    dataset, split = _pipeline_from_echo(args.data, echo)
    model, losses = train_backbone(dataset.n_users, dataset.n_items,
                                   split.train_positives, args.backbone, cfg)
    content = save_checkpoint(model, args.out, train_seed=args.seed, config_echo=echo)
    save_id_maps(dataset, os.path.splitext(args.out)[0] + ".ids.json")
    print(f"trained {args.backbone} ({len(losses)} epochs, final loss {losses[-1]:.4f})")
    print(f"checkpoint {args.out} hash {content[:12]}")
    return 0


def _resolve_data_path(arg_path, meta) -> str:
    path = arg_path or meta.get("config", {}).get("data")
    if not path:
        raise UsageError("--data is required (checkpoint carries no data path)")
    return path


def cmd_edit(args) -> int:
    if args.editor not in EDITOR_TAGS:
        raise UsageError(f"unknown editor {args.editor!r}; expected one of {EDITOR_TAGS}")
    model, meta = load_checkpoint(args.checkpoint)
    data_path = _resolve_data_path(args.data, meta)
    dataset, split = _pipeline_from_echo(data_path, meta["config"])
    masks = split.train_items_by_user(dataset.n_users)
    pre = snapshot_topk(model, args.k_edit, masks)
    if args.split:
        edit_split = bench_mod.load_split_file(args.split, dataset, pre, meta["hash"])
    else:
        from .data import build_editing_split
        edit_split = build_editing_split(pre, dataset, args.n_explicit,
                                         seed=args.seed, k_edit=args.k_edit)
    ecfg = EditorConfig(method=args.editor, objective=args.objective, lr=args.lr,
                        max_rounds=args.max_rounds, reg_weight=args.reg_weight,
                        n_replay=args.n_replay, seed=args.seed)
    outcome = run_edit(model, edit_split, ecfg, train_positives=split.train_positives)

    os.makedirs(args.out, exist_ok=True)
    edited_path = os.path.join(args.out, "edited.npz")
    save_checkpoint(outcome.edited_model, edited_path,
                    config_echo={**meta["config"], "edited_with": asdict(ecfg),
                                 "source_checkpoint": meta["hash"]})
    bench_mod.save_split_file(edit_split, meta["hash"],
                              os.path.join(args.out, "split.json"), seed=args.seed)
    outcome_payload = {
        "editor": ecfg.method, "objective": ecfg.objective,
        "rounds_used": outcome.rounds_used, "wall_time_s": outcome.wall_time,
        "converged": outcome.converged, "n_propagations": outcome.n_propagations,
    }
    with open(os.path.join(args.out, "outcome.json"), "w", encoding="utf-8") as fh:
        json.dump(outcome_payload, fh, indent=2)
    print(f"{ecfg.tag}: rounds={outcome.rounds_used} converged={outcome.converged} "
          f"wall={outcome.wall_time:.3f}s")
    return 0


def cmd_bench(args) -> int:
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            raw = json.load(fh)
    else:
        raw = {"dataset": {"synthetic": {}},
               "editors": [{"method": m} for m in ("ft", "eft")]}
    if args.editors:
        tags = [t.strip() for t in args.editors.split(",") if t.strip()]
        raw["editors"] = [{"method": t} for t in tags]
    if args.objective:
        for e in raw.get("editors", []):
            if isinstance(e, dict):
                e["objective"] = args.objective
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.repeats is not None:
        raw["repeats"] = args.repeats
    try:
        cfg = bench_mod.ExperimentConfig.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad config: {exc}") from exc

    report = bench_mod.run_experiment(cfg, progress=print, flush_dir=args.out)
    written = bench_mod.emit_report(report, args.out, figures=not args.no_figures)
    for path in written:
        print(f"wrote {path}")
    return 0


def cmd_metrics(args) -> int:
    pre_model, pre_meta = load_checkpoint(args.pre)
    post_model, _ = load_checkpoint(args.post)
    data_path = _resolve_data_path(args.data, pre_meta)
    dataset, split = _pipeline_from_echo(data_path, pre_meta["config"])
    masks = split.train_items_by_user(dataset.n_users)
    test_by_user = split.test_items_by_user(dataset.n_users)
    k_snap = max(args.k_edit, args.k_eval)
    pre = snapshot_topk(pre_model, k_snap, masks)
    post = snapshot_topk(post_model, k_snap, masks)
    edit_split = bench_mod.load_split_file(args.split, dataset, pre, pre_meta["hash"])

    rep = full_report(pre, post, edit_split.explicit, edit_split.implicit,
                      test_by_user, args.k_edit, args.k_eval)
    payload = rep.as_dict()
    payload["recall_at_k_edit"] = recall_at_k(post, test_by_user, args.k_edit)
    payload["ndcg_at_k_edit"] = ndcg_at_k(post, test_by_user, args.k_edit)
    for key, val in payload.items():
        print(f"{key}={val}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
    return 0


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except SystemExit as exc:  # --help and friends
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
