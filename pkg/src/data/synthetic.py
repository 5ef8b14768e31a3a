"""
Synthetic Long-Tail Listening Data

Generates interaction and user files with a power-law item popularity, a
per-user mix between popularity-proportional and uniform item choice, and taste
clusters that give the histories co-consumption structure, so the whole
pipeline can run at desk scale.
"""

import os
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Dict, Tuple

import numpy as np
import pandas as pd

from utils.errors import DataError
from utils.logger import get_logger

logger = get_logger(__name__)

MIN_HISTORY = 5
CLUSTER_STREAM = 1


@dataclass(frozen=True)
class SyntheticSpec:
    """
    Generator parameters.

    mainstreaminess_spread: 0 makes every user sample purely by popularity; 1
    spreads each user's popularity weight uniformly over [0, 1].
    gender_ratio: Fraction of users labelled female.
    play_count_floor: Smallest generated play count.
    n_clusters: Taste clusters the catalog is split into (at most one per
        item); 1 disables them.
    cluster_affinity: Share of each user's draw weight placed on the items of
        their own cluster.
    """
    n_users: int = 2000
    n_items: int = 5000
    exponent: float = 1.0
    mean_history: int = 40
    mainstreaminess_spread: float = 1.0
    gender_ratio: float = 0.25
    play_count_floor: int = 2
    n_clusters: int = 20
    cluster_affinity: float = 0.8
    seed: int = 42

    def validate(self) -> None:
        if self.n_users < 10 or self.n_items < 10:
            raise DataError("Synthetic data needs at least 10 users and 10 items")
        if self.exponent < 0:
            raise DataError("Popularity exponent must be non-negative")
        if self.mean_history < 1:
            raise DataError("Mean history length must be positive")
        if self.mean_history > self.n_items or MIN_HISTORY > self.n_items:
            raise DataError(
                f"History length {max(self.mean_history, MIN_HISTORY)} exceeds the catalog of {self.n_items} items"
            )
        if not 0.0 <= self.mainstreaminess_spread <= 1.0:
            raise DataError("Mainstreaminess spread must lie in [0, 1]")
        if not 0.0 <= self.gender_ratio <= 1.0:
            raise DataError("Gender ratio must lie in [0, 1]")
        if self.play_count_floor < 1:
            raise DataError("Play count floor must be at least 1")
        if self.n_clusters < 1:
            raise DataError("At least one taste cluster is needed")
        if not 0.0 <= self.cluster_affinity < 1.0:
            raise DataError("Cluster affinity must lie in [0, 1)")

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


def item_weights(n_items: int, exponent: float) -> np.ndarray:
    """Discrete power law over item ranks: weight of rank r is proportional to r^-exponent."""
    ranks = np.arange(1, n_items + 1, dtype=np.float64)
    weights = ranks ** (-exponent)
    return weights / weights.sum()


def item_id(rank: int, n_items: int) -> str:
    return f"i{rank:0{len(str(n_items))}d}"


def user_id(index: int, n_users: int) -> str:
    return f"u{index:0{len(str(n_users))}d}"


def taste_clusters(spec: SyntheticSpec) -> np.ndarray:
    """
    Cluster label of every item, indexed by popularity rank - 1.

    Items are dealt round-robin over a seeded shuffle, so every cluster spans
    head and tail. Labels come from their own stream and do not shift the
    user draws.
    """
    n_clusters = min(spec.n_clusters, spec.n_items)
    rng = np.random.default_rng([spec.seed, CLUSTER_STREAM])
    return rng.permutation(spec.n_items) % n_clusters


def generate_synthetic(spec: SyntheticSpec) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """
    Generate interactions and users.

    Item ids follow popularity rank (i0001 is the most popular). History
    lengths are geometric with the requested mean, floored at 5; play counts
    are geometric shifted to start at ``play_count_floor``. Each user joins
    one taste cluster (see ``taste_clusters``) and draws from

        affinity * base restricted to their cluster + (1 - affinity) * base

    where base is their popularity/uniform mix.

    Returns:
        (interactions frame: user_id, item_id, play_count; users frame: user_id, gender)

    Raises:
        DataError: On an infeasible spec
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    popularity = item_weights(spec.n_items, spec.exponent)
    uniform = np.full(spec.n_items, 1.0 / spec.n_items)
    items = np.array([item_id(r, spec.n_items) for r in range(1, spec.n_items + 1)], dtype=object)
    users = np.array([user_id(u, spec.n_users) for u in range(1, spec.n_users + 1)], dtype=object)

    genders = np.where(rng.random(spec.n_users) < spec.gender_ratio, "f", "m")
    clusters = taste_clusters(spec)
    n_clusters = int(clusters.max()) + 1

    user_col, item_col, count_col = [], [], []
    for index in range(spec.n_users):
        length = int(min(max(MIN_HISTORY, rng.geometric(1.0 / spec.mean_history)), spec.n_items))
        mainstream = 1.0 - spec.mainstreaminess_spread * rng.random()
        weights = mainstream * popularity + (1.0 - mainstream) * uniform
        if n_clusters > 1:
            own = np.where(clusters == rng.integers(n_clusters), weights, 0.0)
            weights = spec.cluster_affinity * own / own.sum() + (1.0 - spec.cluster_affinity) * weights
        chosen = rng.choice(spec.n_items, size=length, replace=False, p=weights)
        counts = (spec.play_count_floor - 1) + rng.geometric(0.5, size=length)

        user_col.append(np.full(length, users[index], dtype=object))
        item_col.append(items[np.sort(chosen)])
        count_col.append(counts[np.argsort(chosen)])

    interactions = pd.DataFrame({
        "user_id": np.concatenate(user_col),
        "item_id": np.concatenate(item_col),
        "play_count": np.concatenate(count_col).astype(np.int64),
    })
    users_frame = pd.DataFrame({"user_id": users, "gender": genders})

    logger.info(
        f"✓ Generated {len(interactions)} interactions for {spec.n_users} users over {spec.n_items} items"
    )
    return interactions, users_frame


def write_synthetic(interactions: pd.DataFrame, users: pd.DataFrame, directory: str) -> Dict[str, str]:
    """Write generated data as headerless TSV files."""
    Path(directory).mkdir(parents=True, exist_ok=True)
    paths = {
        "interactions": os.path.join(directory, "interactions.tsv"),
        "users": os.path.join(directory, "users.tsv"),
    }
    interactions.to_csv(paths["interactions"], sep="\t", header=False, index=False)
    users.to_csv(paths["users"], sep="\t", header=False, index=False)
    logger.info(f"✓ Saved synthetic data to: {directory}")
    return paths
