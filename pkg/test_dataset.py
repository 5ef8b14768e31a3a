"""
Test dataset ingestion, the filter cascade, item sampling and the split plan.
"""

import os
import sys
import tempfile
sys.path.insert(0, 'src')

import numpy as np
import pandas as pd

from data.dataset import (
    MAX_PLAY_COUNT,
    Dataset,
    FilterReport,
    UserRecord,
    apply_filters,
    dataset_statistics,
    holdout_size,
    load_dataset,
    make_split_plan,
    parse_interactions,
    parse_users,
    sample_items,
    write_dataset,
)
from utils.config import FilterConfig
from utils.errors import DataError
from fixtures import (
    FILTER_FIXTURE_CONFIG,
    FILTER_FIXTURE_EXPECTED,
    filter_fixture_frames,
    synthetic_frames,
    write_filter_fixture,
)


def _write(directory, name, text):
    path = os.path.join(directory, name)
    with open(path, 'w', encoding='utf-8') as f:
        f.write(text)
    return path


def test_parse_interactions_skips_malformed():
    """Bad lines are counted and skipped; duplicates are aggregated."""
    print("\n=== Testing parse_interactions ===")
    with tempfile.TemporaryDirectory() as tmp:
        path = _write(tmp, "interactions.tsv", (
            "u1\tt1\t3\t100\n"
            "u1\tt1\t2\t250\n"
            "u1\tt2\t4\n"
            "u2\tt1\tseven\n"
            "u2\t\t3\n"
            "u2\tt3\t5\n"
        ))
        frame = parse_interactions(path)

    assert frame.attrs["malformed_lines"] == 2
    assert len(frame) == 3
    row = frame[(frame["user_id"] == "u1") & (frame["item_id"] == "t1")].iloc[0]
    assert row["play_count"] == 5
    assert row["timestamp"] == 250
    assert pd.isna(frame[frame["item_id"] == "t2"]["timestamp"].iloc[0])
    print("✓ Malformed lines counted, duplicates summed with the latest timestamp")


def test_parse_interactions_rejects_out_of_range_counts():
    with tempfile.TemporaryDirectory() as tmp:
        path = _write(tmp, "interactions.tsv", (
            "u1\tt1\tinf\n"
            "u1\tt2\t1e30\n"
            "u1\tt3\t99999999999999999999\n"
            "u1\tt4\t-inf\n"
            "u1\tt5\t3\tinf\n"
            f"u1\tt6\t{MAX_PLAY_COUNT + 1}\n"
            "u2\tt1\t3\n"
            "u2\tt2\t4\t100\n"
            "u2\tt3\t1\n"
            "u2\tt4\t2\n"
            "u2\tt5\t5\n"
            f"u2\tt6\t{MAX_PLAY_COUNT}\n"
        ))
        frame = parse_interactions(path)

    assert frame.attrs["malformed_lines"] == 6
    assert list(frame["user_id"].unique()) == ["u2"]
    assert frame["play_count"].max() == MAX_PLAY_COUNT
    assert str(frame["play_count"].dtype) == "int64"
    print("✓ Non-finite and oversized play counts are counted as malformed")


def test_parse_interactions_rejects_wrong_format():
    print("\n=== Testing parse_interactions on a non-TSV file ===")
    with tempfile.TemporaryDirectory() as tmp:
        path = _write(tmp, "interactions.csv", "u1,t1,3\nu1,t2,4\nu2,t1,1\n")
        try:
            parse_interactions(path)
            assert False, "Expected DataError"
        except DataError as e:
            assert "malformed" in str(e)
    print("✓ More than half malformed lines raises DataError")


def test_parse_interactions_missing_file():
    try:
        parse_interactions("/nonexistent/interactions.tsv")
        assert False, "Expected DataError"
    except DataError:
        pass
    print("✓ Missing file raises DataError")


def test_parse_users_normalizes_gender():
    print("\n=== Testing parse_users ===")
    with tempfile.TemporaryDirectory() as tmp:
        path = _write(tmp, "users.tsv", "u1\tf\nu2\tM\nu3\tn/a\nu4\t\nu1\tm\n")
        users = parse_users(path)
    genders = dict(zip(users["user_id"], users["gender"]))
    assert genders == {"u1": "F", "u2": "M", "u3": "unknown", "u4": "unknown"}
    print("✓ f/m map to F/M, anything else to unknown, first duplicate wins")


def test_filter_fixture_matches_hand_enumeration():
    print("\n=== Testing the filter cascade on the 8-user fixture ===")
    interactions, users = filter_fixture_frames()
    dataset, report = apply_filters(interactions, users, FILTER_FIXTURE_CONFIG)

    assert report.to_dict() == FILTER_FIXTURE_EXPECTED
    assert list(dataset.user_ids) == ["u1", "u2", "u3", "u4", "u7"]
    assert list(dataset.items) == ["t01", "t02", "t03"]
    assert dataset.gender_of("u3") == "F"
    assert dataset.gender_of("u7") == "M"
    assert dataset.binary_matrix.shape == (5, 3)
    assert dataset.binary_matrix.sum() == 11
    print("✓ Stage counts match the hand enumeration")


def test_filter_is_idempotent_on_its_output():
    interactions, users = filter_fixture_frames()
    dataset, _ = apply_filters(interactions, users, FILTER_FIXTURE_CONFIG)
    again, report = apply_filters(dataset.interactions, dataset.users, FILTER_FIXTURE_CONFIG)
    assert again.interactions.equals(dataset.interactions)
    assert all(stage["removed_interactions"] == 0 for stage in report.stages.values())
    print("✓ Filtering the filtered dataset removes nothing")


def test_filter_fixpoint_iterates_cores():
    print("\n=== Testing fixpoint filtering ===")
    rows = [("u1", "a", 2), ("u1", "b", 2), ("u2", "a", 2), ("u2", "b", 2),
            ("u3", "b", 2), ("u3", "c", 2), ("u4", "c", 2)]
    frame = pd.DataFrame(rows, columns=["user_id", "item_id", "play_count"])
    single = FilterConfig(min_play_count=2, min_users_per_item=2, min_items_per_user=2)
    fixpoint = FilterConfig(min_play_count=2, min_users_per_item=2, min_items_per_user=2,
                            iterate_to_fixpoint=True)

    once, report_once = apply_filters(frame, None, single)
    assert len(once) == 6
    assert report_once.fixpoint_rounds == 1

    stable, report = apply_filters(frame, None, fixpoint)
    assert len(stable) == 4
    assert list(stable.user_ids) == ["u1", "u2"]
    assert report.fixpoint_rounds == 3
    assert "item_core_2" in report.stages and "user_core_3" in report.stages
    assert report.stages["item_core_2"]["removed_interactions"] == 1
    print("✓ Single pass leaves 6 interactions, fixpoint converges to 4 in 3 rounds")


def test_time_window_applies_before_aggregation():
    rows = [("u1", "a", 2, 0.0), ("u1", "a", 3, 200000.0), ("u1", "b", 2, 200000.0), ("u1", "c", 4, np.nan)]
    frame = pd.DataFrame(rows, columns=["user_id", "item_id", "play_count", "timestamp"])
    config = FilterConfig(min_play_count=1, min_users_per_item=1, min_items_per_user=1, time_window_days=1)
    dataset, report = apply_filters(frame, None, config)
    counts = dict(zip(dataset.interactions["item_id"], dataset.interactions["play_count"]))
    assert counts == {"a": 3, "b": 2, "c": 4}
    assert report.stages["time_window"]["interactions"] == 3
    print("✓ Events older than the window are dropped before play counts are summed")


def test_filter_empty_result_raises():
    interactions, users = filter_fixture_frames()
    strict = FilterConfig(min_play_count=100)
    try:
        apply_filters(interactions, users, strict)
        assert False, "Expected DataError"
    except DataError as e:
        assert "play_count" in str(e)
    print("✓ Empty filter result raises DataError naming the stage")


def test_sample_items():
    print("\n=== Testing sample_items ===")
    interactions, users = synthetic_frames(n_users=60, n_items=80)
    dataset = Dataset.from_frames(interactions, users)

    sampled = sample_items(dataset, 40, seed=1)
    assert sampled.n_items == 40
    assert set(sampled.items) <= set(dataset.items)
    assert list(sample_items(dataset, 40, seed=1).items) == list(sampled.items)
    assert list(sample_items(dataset, 40, seed=2).items) != list(sampled.items)

    try:
        sample_items(dataset, dataset.n_items + 1, seed=1)
        assert False, "Expected DataError"
    except DataError:
        pass
    print("✓ Exactly n items, reproducible per seed; oversized sample rejected")


def test_sample_items_records_the_user_core():
    interactions, users = synthetic_frames(n_users=100, n_items=200)
    dataset = Dataset.from_frames(interactions, users)

    report = FilterReport()
    exact = sample_items(dataset, 60, seed=3, report=report)
    assert exact.n_items == 60
    assert list(report.stages) == ["sample"]
    assert report.stages["sample"]["items"] == 60

    report = FilterReport()
    cored = sample_items(dataset, 60, seed=3, min_items_per_user=5, report=report)
    assert list(report.stages) == ["sample", "sample_user_core"]
    assert report.stages["sample"]["items"] == 60
    assert report.stages["sample_user_core"]["items"] == cored.n_items <= 60
    assert report.stages["sample_user_core"]["users"] == cored.n_users < exact.n_users
    assert cored.interactions.groupby("user_id")["item_id"].nunique().min() >= 5
    print("✓ Sampling records exactly n items, then the re-applied user core")


def test_sample_items_inclusion_is_binomial():
    # 500 users with ten private items each: every item stays reachable after sampling
    n_items, n, seeds = 5000, 1000, 200
    interactions = pd.DataFrame({
        "user_id": [f"u{j // 10:03d}" for j in range(n_items)],
        "item_id": [f"t{j:04d}" for j in range(n_items)],
        "play_count": 3,
        "timestamp": None,
    })
    dataset = Dataset.from_frames(interactions)

    hits = pd.Series(0, index=dataset.items)
    for seed in range(seeds):
        sampled = sample_items(dataset, n, seed=seed)
        assert sampled.n_items == n
        hits.loc[list(sampled.items)] += 1

    p = n / n_items
    frequency = hits / seeds
    sigma = np.sqrt(p * (1 - p) / seeds)
    deviation = (frequency - p).abs()
    assert abs(frequency.mean() - p) < 1e-12
    assert (deviation > 3 * sigma).mean() <= 0.01
    assert (deviation <= 5 * sigma).all()
    print("✓ Per-item inclusion frequency matches 0.2 within binomial bounds over 200 seeds")


def test_holdout_size_rounding():
    assert holdout_size(5, 0.2) == 1
    assert holdout_size(7, 0.2) == 1
    assert holdout_size(8, 0.2) == 2
    assert holdout_size(10, 0.25) == 3
    assert holdout_size(1, 0.2) == 1
    assert holdout_size(2, 0.9) == 1
    print("✓ Holdout sizes round half up, keep one holdout and one input item")


def test_split_plan_invariants():
    print("\n=== Testing the split plan ===")
    interactions, users = synthetic_frames(n_users=100, n_items=200)
    dataset = Dataset.from_frames(interactions, users)
    plan = make_split_plan(dataset, (0.6, 0.2, 0.2), 5, 0.8, seed=11)

    test_counts = {u: 0 for u in dataset.user_ids}
    for assignment in plan.folds:
        assert (len(assignment.train), len(assignment.validation), len(assignment.test)) == (60, 20, 20)
        roles = [set(assignment.train), set(assignment.validation), set(assignment.test)]
        assert not (roles[0] & roles[1]) and not (roles[0] & roles[2]) and not (roles[1] & roles[2])
        assert set().union(*roles) == set(dataset.user_ids)
        for user_id in assignment.test:
            test_counts[user_id] += 1
        for user_id in np.concatenate([assignment.validation, assignment.test]):
            holdout = plan.holdout(assignment.fold, user_id)
            items = set(dataset.user_items(user_id))
            assert len(holdout.holdout_items) >= 1
            assert not set(holdout.input_items) & set(holdout.holdout_items)
            assert set(holdout.input_items) | set(holdout.holdout_items) == items
            assert len(holdout.holdout_items) == holdout_size(len(items), 0.2)

    assert set(test_counts.values()) == {1}
    print("✓ 60/20/20 roles, every user tested exactly once, holdouts partition histories")

    again = make_split_plan(dataset, (0.6, 0.2, 0.2), 5, 0.8, seed=11)
    for a, b in zip(plan.folds, again.folds):
        assert list(a.test) == list(b.test)
    user = plan.folds[0].test[0]
    assert list(plan.holdout(0, user).holdout_items) == list(again.holdout(0, user).holdout_items)
    print("✓ Same seed, same plan")


def test_split_plan_rejects_too_few_users():
    interactions, users = filter_fixture_frames()
    dataset = Dataset.from_frames(interactions.iloc[:7], users)
    assert dataset.n_users == 2
    try:
        make_split_plan(dataset, (0.6, 0.2, 0.2), 5, 0.8, seed=1)
        assert False, "Expected DataError"
    except DataError:
        pass
    print("✓ Fewer users than folds raises DataError")


def test_dataset_statistics_and_roundtrip():
    print("\n=== Testing dataset statistics and persistence ===")
    interactions, users = filter_fixture_frames()
    dataset, _ = apply_filters(interactions, users, FILTER_FIXTURE_CONFIG)

    stats = dataset_statistics(dataset)
    assert stats["All"]["users"] == 5
    assert stats["All"]["tracks"] == 3
    assert stats["All"]["listening_events"] == int(dataset.interactions["play_count"].sum())
    assert stats["F"]["users"] == 2
    assert stats["M"]["users"] == 3

    items = list(dataset.items)
    assert list(dataset.item_positions(["t03", "t01"])) == [items.index("t03"), items.index("t01")]
    try:
        dataset.item_positions(["t99"])
        assert False, "Expected DataError"
    except DataError:
        pass

    with tempfile.TemporaryDirectory() as tmp:
        paths = write_dataset(dataset, tmp)
        loaded = load_dataset(paths["interactions"], paths["users"])
    assert list(loaded.user_ids) == list(dataset.user_ids)
    assert list(loaded.interactions["play_count"]) == list(dataset.interactions["play_count"])
    assert list(loaded.users["gender"]) == list(dataset.users["gender"])
    assert loaded.user_record("u3") == UserRecord("u3", "F")
    print("✓ Statistics per group; written dataset reads back unchanged")


def test_ingest_from_files():
    with tempfile.TemporaryDirectory() as tmp:
        interactions_path, users_path = write_filter_fixture(tmp)
        dataset, report = apply_filters(parse_interactions(interactions_path), parse_users(users_path),
                                        FILTER_FIXTURE_CONFIG)
    assert report.to_dict() == FILTER_FIXTURE_EXPECTED
    assert dataset.n_users == 5
    print("✓ Parsing and filtering the fixture files reproduces the hand enumeration")


def main():
    """Run all tests."""
    print("\n" + "=" * 60)
    print("TESTING DATASET")
    print("=" * 60)

    try:
        test_parse_interactions_skips_malformed()
        test_parse_interactions_rejects_out_of_range_counts()
        test_parse_interactions_rejects_wrong_format()
        test_parse_interactions_missing_file()
        test_parse_users_normalizes_gender()
        test_filter_fixture_matches_hand_enumeration()
        test_filter_is_idempotent_on_its_output()
        test_filter_fixpoint_iterates_cores()
        test_time_window_applies_before_aggregation()
        test_filter_empty_result_raises()
        test_sample_items()
        test_sample_items_records_the_user_core()
        test_sample_items_inclusion_is_binomial()
        test_holdout_size_rounding()
        test_split_plan_invariants()
        test_split_plan_rejects_too_few_users()
        test_dataset_statistics_and_roundtrip()
        test_ingest_from_files()

        print("\n" + "=" * 60)
        print("✅ ALL DATASET TESTS PASSED")
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
