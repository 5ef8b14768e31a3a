"""
Test the recommender contract, the six variants and model persistence.
"""

import os
import sys
import tempfile
sys.path.insert(0, 'src')

import numpy as np
import pandas as pd
import scipy.sparse as sp

from data.dataset import Dataset
from bias.metrics import ndcg_at_k
from recommenders.base import UserRepresentation, create_recommender
from recommenders.item_knn import cosine_similarity
from recommenders.persistence import load_model, save_model
from utils.config import ALSConfig, BPRConfig, ItemKNNConfig, PopConfig, RandConfig, SLIMConfig
from utils.errors import ModelError
from workflow import train_model
from fixtures import quick_hyperparameters, synthetic_frames, two_block_matrix

TOY_BLOCKS = {
    "ItemKNN": ItemKNNConfig(),
    "SLIM": SLIMConfig(),
    "ALS": ALSConfig(factors=2, iterations=15),
    "BPR": BPRConfig(factors=2, learning_rate=0.1, regularization=0.001, epochs=1000, validation_triplets=8),
}


def _small_dataset():
    interactions, users = synthetic_frames(n_users=60, n_items=80)
    return Dataset.from_frames(interactions, users)


def _trained(variant, block, matrix, items):
    return create_recommender(variant, block).fit(matrix, items)


def test_toy_blocks_recommend_the_partner_item():
    print("\n=== Testing learned models on two disjoint blocks ===")
    matrix, items = two_block_matrix()
    for variant, block in TOY_BLOCKS.items():
        model = _trained(variant, block, matrix, items)
        for given, partner in (("i1", "i2"), ("i2", "i1"), ("i3", "i4"), ("i4", "i3")):
            ranked = model.recommend(model.fold_in([given]), 1, exclude=[given])
            assert list(ranked.items) == [partner], (variant, given, list(ranked.items))
        print(f"✓ {variant} recommends the co-consumed item")


def test_pop_ordering_ties_and_exclusion():
    items = np.array(["i1", "i2", "i3", "i4"], dtype=object)
    matrix = sp.csr_matrix(np.array([[1, 1, 0, 0], [1, 1, 1, 0]], dtype=np.float64))
    model = _trained("POP", None, matrix, items)

    ranked = model.recommend(model.fold_in(["i4"]), 3, exclude=["i4"], user_id="u9")
    assert list(ranked.items) == ["i1", "i2", "i3"]
    assert list(ranked.scores) == [2.0, 2.0, 1.0]
    assert ranked.user_id == "u9"

    ranked = model.recommend(model.fold_in(["i1"]), 2, exclude=["i1"])
    assert list(ranked.items) == ["i2", "i3"]

    keep_consumed = _trained("POP", PopConfig(exclude_consumed=False), matrix, items)
    ranked = keep_consumed.recommend(keep_consumed.fold_in(["i1"]), 2, exclude=["i1"])
    assert list(ranked.items) == ["i1", "i2"]
    print("✓ POP on a binary matrix counts consumers; ties by item id; consumed items excluded")


def test_pop_ranks_by_summed_play_counts():
    # user counts: b=2, d=2, a=1, c=1; play counts: a=100, b=4, d=2, c=1
    interactions = pd.DataFrame({
        "user_id": ["u1", "u2", "u2", "u3", "u3", "u3"],
        "item_id": ["a", "b", "d", "b", "c", "d"],
        "play_count": [100, 2, 1, 2, 1, 1],
        "timestamp": [None] * 6,
    })
    dataset = Dataset.from_frames(interactions)

    model = train_model("POP", None, dataset, ["u1", "u2", "u3"])
    ranked = model.recommend(model.fold_in(["c"]), 3, exclude=["c"])
    assert list(ranked.items) == ["a", "b", "d"]
    assert list(ranked.scores) == [100.0, 4.0, 2.0]

    without_u1 = train_model("POP", None, dataset, ["u2", "u3"])
    ranked = without_u1.recommend(without_u1.fold_in(["c"]), 3, exclude=["c"])
    assert list(ranked.items) == ["b", "d", "a"]
    assert ranked.scores[-1] == 0.0

    try:
        create_recommender("POP").fit(dataset.binary_matrix, dataset.items, play_counts=dataset.count_matrix[:2])
        assert False, "Expected ModelError"
    except ModelError:
        pass
    print("✓ POP ranks by play counts of the training users only")


def test_rand_is_reproducible():
    items = np.array([f"t{j:02d}" for j in range(50)], dtype=object)
    matrix = sp.csr_matrix(sp.eye(50))
    model = _trained("RAND", RandConfig(seed=3), matrix, items)

    first = model.recommend(model.fold_in(["t01", "t02"]), 10, exclude=["t01", "t02"])
    again = model.recommend(model.fold_in(["t02", "t01"]), 10, exclude=["t01", "t02"])
    other_user = model.recommend(model.fold_in(["t03"]), 10, exclude=["t03"])
    reseeded = _trained("RAND", RandConfig(seed=4), matrix, items)
    other_seed = reseeded.recommend(reseeded.fold_in(["t01", "t02"]), 10, exclude=["t01", "t02"])

    assert list(first.items) == list(again.items)
    assert list(first.items) != list(other_user.items)
    assert list(first.items) != list(other_seed.items)
    assert not {"t01", "t02"} & set(first.items)
    print("✓ RAND is fixed per seed and input items")


def test_model_errors():
    print("\n=== Testing recommender error cases ===")
    matrix, items = two_block_matrix()
    model = _trained("ItemKNN", None, matrix, items)

    cases = {
        "too many items": lambda: model.recommend(model.fold_in(["i1"]), 4, exclude=["i1"]),
        "unknown input": lambda: model.fold_in(["zz"]),
        "untrained": lambda: create_recommender("POP").fold_in(["i1"]),
        "unknown variant": lambda: create_recommender("NeuMF"),
        "empty training matrix": lambda: create_recommender("POP").fit(sp.csr_matrix((2, 4)), items),
    }
    for name, call in cases.items():
        try:
            call()
            assert False, f"Expected ModelError for {name}"
        except ModelError:
            print(f"✓ ModelError on {name}")

    ranked = model.recommend(model.fold_in(["i1", "zz"]), 3, exclude=["i1", "zz"])
    assert "i1" not in set(ranked.items)
    print("✓ Unknown ids in the input are ignored when some are known")


def test_slim_weights_are_sparse_nonnegative():
    dataset = _small_dataset()
    model = _trained("SLIM", SLIMConfig(neighbors=30, max_sweeps=30), dataset.binary_matrix, dataset.items)
    weights = model.similarity
    assert weights.shape == (dataset.n_items, dataset.n_items)
    assert weights.nnz > 0
    assert weights.data.min() > 0
    assert np.all(weights.diagonal() == 0)
    print("✓ SLIM weights are non-negative with a zero diagonal")


def test_als_objective_never_increases():
    dataset = _small_dataset()
    model = _trained("ALS", ALSConfig(factors=8, iterations=10), dataset.binary_matrix, dataset.items)
    losses = model.loss_history
    assert len(losses) == 10
    for previous, current in zip(losses, losses[1:]):
        assert current <= previous * (1 + 1e-9) + 1e-9
    print("✓ ALS objective is non-increasing over sweeps")


def test_als_fold_in_matches_trained_factor():
    matrix, items = two_block_matrix()
    model = _trained("ALS", TOY_BLOCKS["ALS"], matrix, items)
    for row in range(matrix.shape[0]):
        own = list(items[matrix[row].indices])
        for given in own:
            held_out = [t for t in own if t != given]
            folded = model.recommend(model.fold_in([given]), 3, exclude=[given])
            trained_repr = UserRepresentation(input_positions=model.known_positions([given]),
                                              vector=model.user_factors[row])
            trained = model.recommend(trained_repr, 3, exclude=[given])
            folded_ndcg = ndcg_at_k(list(folded.items), held_out)
            trained_ndcg = ndcg_at_k(list(trained.items), held_out)
            assert folded_ndcg >= 0.95 * trained_ndcg, (row, given, folded_ndcg, trained_ndcg)
            assert folded_ndcg == 1.0
    print("✓ ALS fold-in ranks held-out items as well as the trained user factor")


def test_bpr_validation_loss_decreases():
    dataset = _small_dataset()
    block = BPRConfig(factors=16, epochs=30, validation_triplets=500)
    model = _trained("BPR", block, dataset.binary_matrix, dataset.items)
    assert len(model.loss_history) == 31
    assert model.loss_history[-1] < model.loss_history[0]

    again = _trained("BPR", block, dataset.binary_matrix, dataset.items)
    assert np.array_equal(model.item_factors, again.item_factors)
    print("✓ BPR validation loss drops and serial training is reproducible")


def test_persistence_roundtrip():
    print("\n=== Testing model persistence ===")
    dataset = _small_dataset()
    hyper = quick_hyperparameters()
    user = dataset.user_ids[0]
    given = list(dataset.user_items(user))

    with tempfile.TemporaryDirectory() as tmp:
        for variant in ("RAND", "POP", "ItemKNN", "SLIM", "ALS", "BPR"):
            model = _trained(variant, hyper.for_variant(variant), dataset.binary_matrix, dataset.items)
            paths = save_model(model, os.path.join(tmp, variant.lower()))
            assert os.path.exists(paths["container"]) and os.path.exists(paths["metadata"])

            loaded = load_model(paths["container"])
            assert loaded.VARIANT == variant
            assert loaded.hyperparameters == model.hyperparameters
            before = model.recommend(model.fold_in(given), 10, exclude=given)
            after = loaded.recommend(loaded.fold_in(given), 10, exclude=given)
            assert list(before.items) == list(after.items)
            assert np.array_equal(before.scores, after.scores)
            print(f"✓ {variant} ranks identically after save/load")

        try:
            save_model(create_recommender("POP"), os.path.join(tmp, "untrained"))
            assert False, "Expected ModelError"
        except ModelError:
            pass


def test_cosine_similarity():
    matrix, _ = two_block_matrix()
    similarity = cosine_similarity(matrix).toarray()
    assert abs(similarity[0, 1] - 1.0) < 1e-12 and abs(similarity[2, 3] - 1.0) < 1e-12
    assert similarity[0, 2] == 0.0
    assert np.all(np.diag(similarity) == 0)

    shrunk = cosine_similarity(matrix, shrinkage=1.0).toarray()
    assert abs(shrunk[0, 1] - 2.0 / 3.0) < 1e-12

    dataset = _small_dataset()
    full = cosine_similarity(dataset.binary_matrix, block_size=7).toarray()
    reference = cosine_similarity(dataset.binary_matrix).toarray()
    assert np.allclose(full, reference)
    assert np.allclose(full, full.T)
    pruned = cosine_similarity(dataset.binary_matrix, neighbors=5)
    assert np.all(np.diff(pruned.indptr) <= 5)
    print("✓ Cosine similarity: exact on blocks, symmetric, pruned to k neighbors")


def main():
    """Run all tests."""
    print("\n" + "=" * 60)
    print("TESTING RECOMMENDERS")
    print("=" * 60)

    try:
        test_toy_blocks_recommend_the_partner_item()
        test_pop_ordering_ties_and_exclusion()
        test_pop_ranks_by_summed_play_counts()
        test_rand_is_reproducible()
        test_model_errors()
        test_slim_weights_are_sparse_nonnegative()
        test_als_objective_never_increases()
        test_als_fold_in_matches_trained_factor()
        test_bpr_validation_loss_decreases()
        test_persistence_roundtrip()
        test_cosine_similarity()

        print("\n" + "=" * 60)
        print("✅ ALL RECOMMENDER TESTS PASSED")
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
