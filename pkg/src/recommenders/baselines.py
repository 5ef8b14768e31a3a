"""
Baseline Recommenders

RAND recommends uniformly random unseen items; POP recommends the globally
most popular items of the training users.
"""

import zlib
from typing import Dict, Iterable

import numpy as np
import scipy.sparse as sp

from recommenders.base import Recommender, RecommendationList, UserRepresentation
from utils.config import PopConfig, RandConfig


class RandomRecommender(Recommender):
    """Uniform random ranking, reproducible per (seed, input items)."""

    VARIANT = "RAND"

    def __init__(self, hyperparameters: RandConfig = None, seed: int = None):
        hyperparameters = hyperparameters or RandConfig()
        super().__init__(hyperparameters, seed=hyperparameters.seed if seed is None else seed)

    def _fit(self, matrix: sp.csr_matrix) -> None:
        pass

    def _fold_in(self, positions: np.ndarray):
        return None

    def score(self, representation: UserRepresentation) -> np.ndarray:
        # Distinct users get distinct streams; the same user always gets the same one.
        key = zlib.crc32(np.ascontiguousarray(representation.input_positions, dtype=np.int64).tobytes())
        rng = np.random.default_rng([int(self.seed), key])
        return rng.random(self.n_items)

    def get_state(self) -> Dict[str, np.ndarray]:
        return {}

    def set_state(self, state: Dict[str, np.ndarray]) -> None:
        pass


class PopularityRecommender(Recommender):
    """
    Ranks items by P(t) over the training users: their summed play counts.

    Without play counts (a bare binary matrix) every consumption counts once.
    """

    VARIANT = "POP"

    def __init__(self, hyperparameters: PopConfig = None, seed: int = None):
        super().__init__(hyperparameters or PopConfig(), seed=seed)
        self.popularity = None

    def _fit(self, matrix: sp.csr_matrix) -> None:
        source = matrix if self.train_play_counts is None else self.train_play_counts
        self.popularity = np.asarray(source.sum(axis=0), dtype=np.float64).ravel()

    def _fold_in(self, positions: np.ndarray):
        return None

    def score(self, representation: UserRepresentation) -> np.ndarray:
        return self.popularity

    def recommend(self, representation: UserRepresentation, n: int,
                  exclude: Iterable[str] = (), user_id: str = "") -> RecommendationList:
        if not self.hyperparameters.exclude_consumed:
            exclude = ()
        return super().recommend(representation, n, exclude=exclude, user_id=user_id)

    def get_state(self) -> Dict[str, np.ndarray]:
        return {"popularity": self.popularity}

    def set_state(self, state: Dict[str, np.ndarray]) -> None:
        self.popularity = np.asarray(state["popularity"], dtype=np.float64)
