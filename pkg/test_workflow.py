"""
Test the fold harness and the end-to-end experiment run.
"""

import json
import os
import sys
import tempfile
from dataclasses import replace
from decimal import Decimal
sys.path.insert(0, 'src')

import pandas as pd

from bias.metrics import METRICS, build_bias_report
from bias.popularity import compute_popularity
from data.dataset import Dataset, make_split_plan
from utils.config import VARIANTS, FilterConfig
from utils.errors import ExperimentError
from utils.helpers import config_hash, format_cell, format_report_tsv, read_per_user
from workflow import NO_RECOMMENDABLE_ITEMS, run_experiment, run_fold, train_model, write_outputs
from fixtures import quick_config, synthetic_frames, whole_catalog_frames

_CACHE = {}


def _fold_setup(frames):
    dataset = Dataset.from_frames(*frames)
    plan = make_split_plan(dataset, (0.6, 0.2, 0.2), 5, 0.8, seed=42)
    return dataset, plan, compute_popularity(dataset)


def _experiment():
    """Full six-algorithm run on a seeded synthetic dataset (computed once)."""
    if "result" not in _CACHE:
        interactions, users = synthetic_frames(n_users=300, n_items=400, mean_history=20, seed=7)
        config = quick_config(algorithms=VARIANTS)
        _CACHE["result"] = run_experiment(config, interactions, users)
    return _CACHE["result"]


def test_run_fold_evaluates_every_test_user():
    print("\n=== Testing run_fold ===")
    dataset, plan, index = _fold_setup(synthetic_frames())
    config = quick_config()

    result = run_fold(0, dataset, plan, config, index)
    assert result.n_test_users == 20
    assert result.is_valid
    assert not result.failures
    for variant in config.algorithms:
        users = [r.user_id for r in result.records if r.algorithm == variant]
        assert users == sorted(str(u) for u in plan.folds[0].test)
    assert set(result.training_seconds) == set(config.algorithms)

    again = run_fold(0, dataset, plan, config, index)
    assert [r.as_dict() for r in again.records] == [r.as_dict() for r in result.records]
    print("✓ 20 records per algorithm, identical on a second run")


def test_recommendations_never_contain_input_items():
    dataset, plan, _ = _fold_setup(synthetic_frames())
    assignment = plan.folds[1]
    for variant in ("RAND", "POP", "ItemKNN"):
        model = train_model(variant, quick_config().hyperparameters, dataset, assignment.train)
        for user_id in assignment.test:
            holdout = plan.holdout(1, user_id)
            ranked = model.recommend(model.fold_in(holdout.input_items), 10, exclude=holdout.input_items)
            assert not set(ranked.items) & set(holdout.input_items)
            assert len(set(ranked.items)) == 10
    print("✓ No test user is ever recommended an input item")


def test_whole_catalog_user_is_skipped():
    print("\n=== Testing users who consumed the whole catalog ===")
    dataset, plan, index = _fold_setup(whole_catalog_frames())
    fold = next(a.fold for a in plan.folds if "zz_all" in set(a.test))
    config = quick_config(algorithms=("POP", "ItemKNN"), max_failure_rate=1.0)

    result = run_fold(fold, dataset, plan, config, index)
    skipped = [f for f in result.failures if f.user_id == "zz_all"]
    assert [f.algorithm for f in skipped] == ["POP", "ItemKNN"]
    assert all(NO_RECOMMENDABLE_ITEMS in f.reason for f in skipped)
    assert "zz_all" not in {r.user_id for r in result.records}
    assert len(result.records) == 2 * (result.n_test_users - 1)

    strict = run_fold(fold, dataset, plan, replace(config, runtime=replace(config.runtime, max_failure_rate=0.0)),
                      index)
    assert not strict.is_valid
    assert strict.invalid_algorithms == ["POP", "ItemKNN"]
    assert strict.diagnostics()["failure_rates"]["POP"] > 0
    print("✓ Skipped with a reason; fold invalid once the failure budget is zero")


def test_invalid_fold_aborts_the_run():
    interactions, users = whole_catalog_frames()
    config = quick_config(algorithms=("POP",), max_failure_rate=0.0)
    config = replace(config, filters=FilterConfig(min_play_count=1, min_users_per_item=1, min_items_per_user=1))
    try:
        run_experiment(config, interactions, users)
        assert False, "Expected ExperimentError"
    except ExperimentError as e:
        assert "invalid" in str(e)
        assert e.diagnostics["folds"]
        assert any(fold["invalid_algorithms"] == ["POP"] for fold in e.diagnostics["folds"])
    print("✓ An invalid fold raises ExperimentError with per-fold diagnostics")


def test_experiment_pools_every_user_once():
    print("\n=== Testing the end-to-end experiment ===")
    result = _experiment()
    n_users = result.provenance["n_users"]

    for variant in VARIANTS:
        records = [r for r in result.records if r.algorithm == variant]
        failed = [f for f in result.failures if f.algorithm == variant]
        assert len(records) + len(failed) == n_users
        assert len({r.user_id for r in records}) == len(records)
        assert result.report.blocks[variant].n_users["All"] == len(records)
    assert result.report.algorithms == list(VARIANTS)
    assert result.provenance["config_hash"] == config_hash(result.config.to_dict())
    assert len(result.bins) == 10
    print(f"✓ {n_users} users pooled across five folds for all six algorithms")


def test_experiment_report_identity():
    result = _experiment()
    for block in result.report.blocks.values():
        for group in ("Female", "Male"):
            assert block.n_users[group] > 0
            for metric in METRICS:
                delta = block.deltas[group][metric]
                if delta is not None:
                    assert block.all_row[metric] + delta == block.group_rows[group][metric]
    print("✓ All + delta equals the group value in every defined cell")


def test_experiment_shows_popularity_bias():
    result = _experiment()
    rows = {name: block.all_row for name, block in result.report.blocks.items()}

    assert rows["POP"]["pct_delta_mean"] > 0 > rows["RAND"]["pct_delta_mean"]
    assert rows["POP"]["kl"] > rows["ItemKNN"]["kl"]
    for variant in ("ItemKNN", "SLIM", "ALS", "BPR"):
        assert rows[variant]["ndcg_at_10"] > rows["RAND"]["ndcg_at_10"], variant
    print("✓ POP inflates popularity, RAND deflates it, learned models beat RAND on NDCG")


def test_outputs_and_report_rebuild():
    print("\n=== Testing written outputs ===")
    result = _experiment()
    with tempfile.TemporaryDirectory() as tmp:
        paths = write_outputs(result, tmp)
        for name in ("report_tsv", "report_json", "per_user", "provenance", "bins", "dataset_stats",
                     "filter_report", "popularity_histogram"):
            assert os.path.exists(paths[name]), name

        with open(paths["report_tsv"], encoding='utf-8') as f:
            written = f.read()
        rebuilt = build_bias_report(read_per_user(paths["per_user"]))
        assert format_report_tsv(rebuilt) == written
        assert written.splitlines()[1].startswith("RAND\tAll\t")

        histogram = pd.read_csv(paths["popularity_histogram"], sep="\t")
        assert list(histogram.columns) == ["bin_index", "lower", "upper", "item_count"]
        assert len(histogram) == 10
        assert int(histogram["item_count"].sum()) == sum(row["item_count"] for row in result.bins)

        with open(paths["report_json"], encoding='utf-8') as f:
            blocks = json.load(f)["algorithms"]
    checked = 0
    for algorithm, block in blocks.items():
        for group in ("Female", "Male"):
            for metric in METRICS:
                cells = (block["All"][metric], block["deltas"][group][metric], block["groups"][group][metric])
                if None in cells:
                    continue
                all_value, delta, value = (Decimal(c) for c in cells)
                assert all_value + delta == value, (algorithm, group, metric)
                assert cells[0] == format_cell(result.report.blocks[algorithm].all_row[metric])
                checked += 1
    assert checked > 0
    print("✓ The report rebuilt from per_user.tsv is byte-identical; report.json keeps exact cells")


def test_runs_are_reproducible_across_worker_counts():
    interactions, users = synthetic_frames()
    outputs = []
    with tempfile.TemporaryDirectory() as tmp:
        for workers in (1, 2):
            config = quick_config(workers=workers)
            directory = os.path.join(tmp, f"w{workers}")
            write_outputs(run_experiment(config, interactions.copy(), users.copy()), directory)
            files = {}
            for name in ("report.tsv", "per_user.tsv"):
                with open(os.path.join(directory, name), 'rb') as f:
                    files[name] = f.read()
            outputs.append(files)
    assert outputs[0] == outputs[1]
    print("✓ report.tsv and per_user.tsv are byte-identical for 1 and 2 workers")


def main():
    """Run all tests."""
    print("\n" + "=" * 60)
    print("TESTING WORKFLOW")
    print("=" * 60)

    try:
        test_run_fold_evaluates_every_test_user()
        test_recommendations_never_contain_input_items()
        test_whole_catalog_user_is_skipped()
        test_invalid_fold_aborts_the_run()
        test_experiment_pools_every_user_once()
        test_experiment_report_identity()
        test_experiment_shows_popularity_bias()
        test_outputs_and_report_rebuild()
        test_runs_are_reproducible_across_worker_counts()

        print("\n" + "=" * 60)
        print("✅ ALL WORKFLOW TESTS PASSED")
        print("=" * 60)

    except Exception as e:
        print("\n" + "=" * 60)
        print(f"❌ TESTS FAILED: {e}")
        print("=" * 60)
        import traceback
        traceback.print_exc()
        sys.exit(1)


if __name__ == "__main__":
    main()
