import json

import numpy as np
import pytest

from recedit.bench import (
    ExperimentConfig,
    SplitModelMismatch,
    emit_report,
    load_split_file,
    parse_report_csv,
    run_experiment,
    save_split_file,
    summarize,
)
from recedit.backbones import TrainConfig
from recedit.data import snapshot_topk
from recedit.editing import EditorConfig, NotEnoughTrainingData
from recedit.synthetic import SyntheticSpec


def small_config(**overrides):
    base = dict(
        synthetic=SyntheticSpec(n_users=25, n_items=40, d_true=3, pos_per_user=8,
                                neg_per_user=4, adversarial_neg_fraction=0.5, seed=0),
        train=TrainConfig(d=8, epochs=15, batch=256, seed=0),
        editors=[EditorConfig("eft"), EditorConfig("ft")],
        k_edit=10,
        k_eval=5,
        n_explicit=3,
        repeats=2,
        seed=0,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


@pytest.fixture(scope="module")
def small_report():
    return run_experiment(small_config())


class TestRunExperiment:
    def test_row_and_timing_counts(self, small_report):
        assert len(small_report.rows) == 4  # 2 editors x 2 repeats
        assert len(small_report.timing) == 4
        assert len(small_report.summary) == 2

    def test_row_schema(self, small_report):
        row = small_report.rows[0]
        for col in ("editor", "objective", "repeat", "ea", "ec", "ep", "es",
                    "recall", "ndcg", "rounds", "converged"):
            assert col in row
        assert "wall_time_s" not in row  # timings live in timing.csv only

    def test_single_repeat_has_zero_std(self):
        report = run_experiment(small_config(repeats=1))
        for entry in report.summary:
            for key, val in entry.items():
                if key.endswith("_std"):
                    assert val == 0.0

    def test_means_inside_min_max(self, small_report):
        for entry in small_report.summary:
            editor = entry["editor"]
            vals = [r["es"] for r in small_report.rows if r["editor"] == editor]
            assert min(vals) <= entry["es_mean"] <= max(vals)

    def test_deterministic_rows_across_runs(self):
        a = run_experiment(small_config())
        b = run_experiment(small_config())
        assert a.rows == b.rows
        assert a.summary == b.summary

    def test_editors_see_identical_initial_model(self, small_report):
        # both editors at repeat 0 report metrics against the same checkpoint
        assert small_report.checkpoint
        # identical-seed eft/ft on the mf backbone must coincide exactly
        eft = [r for r in small_report.rows if r["editor"] == "eft"]
        ft = [r for r in small_report.rows if r["editor"] == "ft"]
        for a, b in zip(eft, ft):
            assert a["es"] == b["es"] and a["rounds"] == b["rounds"]

    def test_partial_flush_on_failure(self, tmp_path):
        cfg = small_config(
            editors=[EditorConfig("eft"),
                     EditorConfig("rsr", n_replay=10 ** 6)])  # forces a failure
        with pytest.raises(NotEnoughTrainingData):
            run_experiment(cfg, flush_dir=tmp_path)
        payload = json.loads((tmp_path / "report.json").read_text())
        assert payload["partial"] is True
        assert len(payload["rows"]) == 1  # the eft row from repeat 0 survived

    def test_config_validation(self):
        with pytest.raises(ValueError):
            ExperimentConfig()  # neither path nor synthetic
        with pytest.raises(ValueError):
            small_config(repeats=0)
        with pytest.raises(ValueError):
            ExperimentConfig.from_dict({"dataset": {"synthetic": {}},
                                        "editors": [{"method": "nope"}]})

    def test_from_dict_round_trips_resolved(self):
        cfg = small_config()
        again = ExperimentConfig.from_dict(cfg.resolved())
        assert again.resolved() == cfg.resolved()


class TestEmit:
    def test_files_written(self, small_report, tmp_path):
        written = emit_report(small_report, tmp_path, figures=False)
        names = {p.split("/")[-1] for p in written}
        assert {"report.csv", "summary.csv", "timing.csv", "report.json",
                "ids.json"} <= names

    def test_figures_rendered(self, small_report, tmp_path):
        written = emit_report(small_report, tmp_path, figures=True)
        names = {p.split("/")[-1] for p in written}
        assert {"metrics.png", "timing.png"} <= names
        assert (tmp_path / "metrics.png").stat().st_size > 0

    def test_schema_version_header(self, small_report, tmp_path):
        emit_report(small_report, tmp_path, figures=False)
        first = (tmp_path / "report.csv").read_text().splitlines()[0]
        assert first == "# schema_version=1"

    def test_json_round_trip(self, small_report, tmp_path):
        emit_report(small_report, tmp_path, figures=False)
        payload = json.loads((tmp_path / "report.json").read_text())
        assert payload["rows"] == small_report.rows
        assert payload["summary"] == small_report.summary
        assert payload["config"] == small_report.config

    def test_timing_row_count(self, small_report, tmp_path):
        emit_report(small_report, tmp_path, figures=False)
        rows = parse_report_csv(tmp_path / "timing.csv")
        assert len(rows) == len(small_report.timing)

    def test_summary_recomputable_from_report_csv(self, small_report, tmp_path):
        emit_report(small_report, tmp_path, figures=False)
        rows = parse_report_csv(tmp_path / "report.csv")
        for row in rows:
            for key in row:
                if key not in ("editor", "objective"):
                    row[key] = float(row[key])
        recomputed = summarize(rows)
        stored = parse_report_csv(tmp_path / "summary.csv")
        assert len(recomputed) == len(stored)
        for want, got in zip(recomputed, stored):
            for key, val in want.items():
                if isinstance(val, float):
                    assert float(got[key]) == val
                else:
                    assert str(val) == got[key]


class TestSplitFiles:
    def test_round_trip_and_mismatch(self, small_report, tmp_path):
        from recedit.data import apply_k_core, build_editing_split, split_train_test
        from recedit.backbones import train_backbone
        from recedit.synthetic import generate

        cfg = small_config()
        dataset = apply_k_core(generate(cfg.synthetic), 1)
        split = split_train_test(dataset, 0.8, seed=0)
        model, _ = train_backbone(dataset.n_users, dataset.n_items,
                                  split.train_positives, "mf", cfg.train)
        masks = split.train_items_by_user(dataset.n_users)
        pre = snapshot_topk(model, cfg.k_edit, masks)
        edit_split = build_editing_split(pre, dataset, 3, seed=0)

        path = tmp_path / "split.json"
        save_split_file(edit_split, "hash-a", path, seed=0)
        loaded = load_split_file(path, dataset, pre, "hash-a")
        assert np.array_equal(loaded.explicit, edit_split.explicit)
        assert np.array_equal(loaded.implicit, edit_split.implicit)

        with pytest.raises(SplitModelMismatch):
            load_split_file(path, dataset, pre, "hash-b")
