"""
Shared hand-built fixtures for the test modules.

- FILTER_FIXTURE: 8 users x 12 items with a hand-enumerated filter outcome
- two_block_matrix(): 4 users x 4 items, two disjoint co-consumption blocks
- synthetic_frames(): small seeded long-tail datasets (one taste cluster unless asked)
- quick_config(): an experiment configuration sized for tests
"""

import sys
sys.path.insert(0, 'src')

import numpy as np
import pandas as pd
import scipy.sparse as sp

from data.synthetic import SyntheticSpec, generate_synthetic
from utils.config import (
    ALSConfig,
    BPRConfig,
    ExperimentConfig,
    FilterConfig,
    Hyperparameters,
    ItemKNNConfig,
    OutputConfig,
    RuntimeConfig,
    SLIMConfig,
)

# (user, item, play_count)
FILTER_FIXTURE = [
    ("u1", "t01", 3), ("u1", "t02", 2), ("u1", "t03", 5), ("u1", "t04", 1),
    ("u2", "t01", 2), ("u2", "t02", 4), ("u2", "t03", 1), ("u2", "t05", 2),
    ("u3", "t01", 6), ("u3", "t03", 2), ("u3", "t06", 2),
    ("u4", "t02", 3), ("u4", "t03", 3), ("u4", "t07", 2),
    ("u5", "t01", 1), ("u5", "t08", 1), ("u5", "t09", 5),
    ("u6", "t04", 2), ("u6", "t10", 2), ("u6", "t11", 2),
    ("u7", "t01", 2), ("u7", "t02", 2), ("u7", "t12", 2),
    ("u8", "t05", 1), ("u8", "t06", 1),
]
FILTER_FIXTURE_GENDERS = {"u1": "f", "u2": "m", "u3": "F", "u4": "m", "u5": "x", "u6": "f", "u7": "M", "u8": "m"}
FILTER_FIXTURE_CONFIG = FilterConfig(min_play_count=2, min_users_per_item=2, min_items_per_user=2)

# Worked by hand:
# play_count drops the six records with PC 1 (u8 loses everything, t08 disappears);
# item_core keeps t01, t02, t03 (the only items with two or more users);
# user_core keeps u1, u2, u3, u4, u7.
FILTER_FIXTURE_EXPECTED = {
    "input": {"users": 8, "items": 12, "interactions": 25, "removed_interactions": 0},
    "time_window": {"users": 8, "items": 12, "interactions": 25, "removed_interactions": 0},
    "play_count": {"users": 7, "items": 11, "interactions": 19, "removed_interactions": 6},
    "item_core": {"users": 5, "items": 3, "interactions": 11, "removed_interactions": 8},
    "user_core": {"users": 5, "items": 3, "interactions": 11, "removed_interactions": 0},
}


def filter_fixture_frames():
    """Interactions and users of the 8-user fixture, in parsed-frame form."""
    interactions = pd.DataFrame(FILTER_FIXTURE, columns=["user_id", "item_id", "play_count"])
    interactions["timestamp"] = np.nan
    users = pd.DataFrame(sorted(FILTER_FIXTURE_GENDERS.items()), columns=["user_id", "gender"])
    return interactions, users


def write_filter_fixture(directory: str):
    """Write the 8-user fixture as raw TSV files; returns (interactions path, users path)."""
    interactions_path = f"{directory}/interactions.tsv"
    users_path = f"{directory}/users.tsv"
    with open(interactions_path, 'w', encoding='utf-8') as f:
        for user, item, count in FILTER_FIXTURE:
            f.write(f"{user}\t{item}\t{count}\n")
    with open(users_path, 'w', encoding='utf-8') as f:
        for user, gender in sorted(FILTER_FIXTURE_GENDERS.items()):
            f.write(f"{user}\t{gender}\n")
    return interactions_path, users_path


def two_block_matrix():
    """
    Users a, b consume items i1, i2; users c, d consume i3, i4.

    Returns:
        (binary CSR matrix, item ids)
    """
    dense = np.array([
        [1, 1, 0, 0],
        [1, 1, 0, 0],
        [0, 0, 1, 1],
        [0, 0, 1, 1],
    ], dtype=np.float64)
    return sp.csr_matrix(dense), np.array(["i1", "i2", "i3", "i4"], dtype=object)


def synthetic_frames(n_users: int = 100, n_items: int = 200, mean_history: int = 10, seed: int = 7,
                     exponent: float = 1.0, n_clusters: int = 1):
    return generate_synthetic(SyntheticSpec(
        n_users=n_users, n_items=n_items, mean_history=mean_history, exponent=exponent, seed=seed,
        n_clusters=n_clusters,
    ))


def whole_catalog_frames(n_items: int = 30, n_users: int = 20, seed: int = 3):
    """Users with five random items each plus one user 'zz_all' who consumed the whole catalog."""
    rng = np.random.default_rng(seed)
    items = [f"t{i:02d}" for i in range(n_items)]
    rows = []
    for u in range(n_users):
        for t in rng.choice(n_items, size=5, replace=False):
            rows.append((f"u{u:02d}", items[t], 2))
    rows.extend(("zz_all", t, 2) for t in items)
    interactions = pd.DataFrame(rows, columns=["user_id", "item_id", "play_count"])
    genders = ["f" if u % 2 else "m" for u in range(n_users)] + ["f"]
    users = pd.DataFrame({"user_id": [f"u{u:02d}" for u in range(n_users)] + ["zz_all"], "gender": genders})
    return interactions, users


def quick_hyperparameters() -> Hyperparameters:
    return Hyperparameters(
        itemknn=ItemKNNConfig(neighbors=50),
        slim=SLIMConfig(neighbors=30, max_sweeps=30),
        als=ALSConfig(factors=16, iterations=8),
        bpr=BPRConfig(factors=16, epochs=30, validation_triplets=500),
    )


def quick_config(algorithms=("RAND", "POP", "ItemKNN"), output_dir: str = "audit_output",
                 workers: int = 1, max_failure_rate: float = 0.2) -> ExperimentConfig:
    return ExperimentConfig(
        runtime=RuntimeConfig(workers=workers, max_failure_rate=max_failure_rate),
        output=OutputConfig(directory=output_dir),
        algorithms=tuple(algorithms),
        hyperparameters=quick_hyperparameters(),
    )
