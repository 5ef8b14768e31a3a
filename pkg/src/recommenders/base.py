"""
Recommender Abstraction

Every algorithm implements the same train / fold-in / score contract; ranking,
exclusion and tie-breaking are shared here.
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass, asdict, is_dataclass
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from utils.errors import ModelError
from utils.logger import get_logger

logger = get_logger(__name__)


@dataclass(frozen=True, eq=False)
class UserRepresentation:
    """What a model needs to score one user: known input items and, for factor models, a factor."""
    input_positions: np.ndarray
    vector: Optional[np.ndarray] = None


@dataclass(frozen=True, eq=False)
class RecommendationList:
    """Ranked items for one user, descending score, ties by ascending item id."""
    user_id: str
    items: np.ndarray
    scores: np.ndarray

    def __len__(self) -> int:
        return len(self.items)

    def pairs(self) -> List[Tuple[str, float]]:
        return [(t, float(s)) for t, s in zip(self.items, self.scores)]


class Recommender(ABC):
    """Base class for all recommendation algorithms."""

    VARIANT = ""

    def __init__(self, hyperparameters=None, seed: Optional[int] = None):
        """
        Initialize an untrained model.

        Args:
            hyperparameters: Variant-specific config block (dataclass) or None for defaults
            seed: Seed for stochastic variants
        """
        self.hyperparameters = hyperparameters
        self.seed = seed
        self.item_ids: Optional[np.ndarray] = None
        self._item_pos: Dict[str, int] = {}
        # only set while _fit runs
        self.train_play_counts: Optional[sp.csr_matrix] = None

    @property
    def is_fitted(self) -> bool:
        return self.item_ids is not None

    @property
    def n_items(self) -> int:
        self._require_fitted()
        return len(self.item_ids)

    def _require_fitted(self) -> None:
        if self.item_ids is None:
            raise ModelError(f"{self.VARIANT} model is not trained")

    def fit(
        self,
        train_matrix: sp.csr_matrix,
        item_ids: Sequence[str],
        play_counts: Optional[sp.csr_matrix] = None,
    ) -> "Recommender":
        """
        Train on the binary user x item matrix of the training users.

        Args:
            train_matrix: Binary CSR matrix (rows: train users, columns: catalog)
            item_ids: Catalog item ids, aligned with the matrix columns (sorted)
            play_counts: Summed play counts of the same rows; variants that rank
                by play volume read them, the others ignore them

        Returns:
            self
        """
        if train_matrix.nnz == 0:
            raise ModelError("Training matrix is empty")
        if train_matrix.shape[1] != len(item_ids):
            raise ModelError("Training matrix columns do not match the catalog")
        if play_counts is not None and play_counts.shape != train_matrix.shape:
            raise ModelError("Play-count matrix does not match the training matrix")
        self._set_catalog(item_ids)
        matrix = sp.csr_matrix(train_matrix, dtype=np.float64)
        matrix.sort_indices()
        self.train_play_counts = None if play_counts is None else sp.csr_matrix(play_counts, dtype=np.float64)
        try:
            self._fit(matrix)
        finally:
            self.train_play_counts = None
        return self

    def _set_catalog(self, item_ids: Sequence[str]) -> None:
        self.item_ids = np.asarray(item_ids, dtype=object)
        self._item_pos = {t: i for i, t in enumerate(self.item_ids)}

    def known_positions(self, item_ids: Iterable[str]) -> np.ndarray:
        """Sorted catalog positions of the known ids; unknown ids are ignored."""
        positions = [self._item_pos[t] for t in item_ids if t in self._item_pos]
        return np.unique(np.asarray(positions, dtype=np.int64))

    def fold_in(self, input_items: Iterable[str]) -> UserRepresentation:
        """
        Represent a user unseen during training from their input items.

        Raises:
            ModelError: If none of the input items is known to the model
        """
        self._require_fitted()
        positions = self.known_positions(input_items)
        if len(positions) == 0:
            raise ModelError("None of the input items is known to the model")
        return UserRepresentation(input_positions=positions, vector=self._fold_in(positions))

    def incidence_vector(self, positions: np.ndarray) -> np.ndarray:
        vector = np.zeros(self.n_items, dtype=np.float64)
        vector[positions] = 1.0
        return vector

    def recommend(
        self,
        representation: UserRepresentation,
        n: int,
        exclude: Iterable[str] = (),
        user_id: str = "",
    ) -> RecommendationList:
        """
        Top-n items by score, never including excluded items.

        Raises:
            ModelError: If fewer than n items remain after exclusion
        """
        self._require_fitted()
        scores = np.asarray(self.score(representation), dtype=np.float64)

        available = np.ones(self.n_items, dtype=bool)
        available[self.known_positions(exclude)] = False
        candidates = np.flatnonzero(available)
        if n > len(candidates):
            raise ModelError(f"Requested {n} items but only {len(candidates)} are recommendable")

        # primary key: descending score; secondary: ascending position (= item id order)
        order = np.lexsort((candidates, -scores[candidates]))
        top = candidates[order[:n]]
        return RecommendationList(user_id=user_id, items=self.item_ids[top], scores=scores[top])

    def hyperparameters_dict(self) -> Dict[str, Any]:
        if is_dataclass(self.hyperparameters):
            return asdict(self.hyperparameters)
        return dict(self.hyperparameters or {})

    @abstractmethod
    def _fit(self, matrix: sp.csr_matrix) -> None:
        """Learn the variant's parameters."""

    @abstractmethod
    def _fold_in(self, positions: np.ndarray) -> Optional[np.ndarray]:
        """Variant-specific user vector for the given input positions."""

    @abstractmethod
    def score(self, representation: UserRepresentation) -> np.ndarray:
        """Scores for every catalog item."""

    @abstractmethod
    def get_state(self) -> Dict[str, np.ndarray]:
        """Learned parameter arrays (for persistence)."""

    @abstractmethod
    def set_state(self, state: Dict[str, np.ndarray]) -> None:
        """Restore learned parameters produced by get_state."""


def sparse_state(prefix: str, matrix: sp.csr_matrix) -> Dict[str, np.ndarray]:
    matrix = matrix.tocsr()
    return {
        f"{prefix}_data": matrix.data,
        f"{prefix}_indices": matrix.indices,
        f"{prefix}_indptr": matrix.indptr,
        f"{prefix}_shape": np.asarray(matrix.shape, dtype=np.int64),
    }


def sparse_from_state(prefix: str, state: Dict[str, np.ndarray]) -> sp.csr_matrix:
    return sp.csr_matrix(
        (state[f"{prefix}_data"], state[f"{prefix}_indices"], state[f"{prefix}_indptr"]),
        shape=tuple(int(v) for v in state[f"{prefix}_shape"]),
    )


def create_recommender(variant: str, hyperparameters=None, seed: Optional[int] = None) -> Recommender:
    """
    Factory function to create an untrained recommender.

    Args:
        variant: One of RAND, POP, ItemKNN, SLIM, ALS, BPR
        hyperparameters: Either the full Hyperparameters config or the variant's block
        seed: Overrides the seed of the hyperparameter block for seeded variants

    Returns:
        Untrained recommender

    Raises:
        ModelError: If the variant is unknown
    """
    # Imported here to keep the concrete modules free of a cycle through this one.
    from recommenders.baselines import PopularityRecommender, RandomRecommender
    from recommenders.item_knn import ItemKNNRecommender
    from recommenders.slim import SLIMRecommender
    from recommenders.als import ALSRecommender
    from recommenders.bpr import BPRRecommender

    registry = {
        "RAND": RandomRecommender,
        "POP": PopularityRecommender,
        "ItemKNN": ItemKNNRecommender,
        "SLIM": SLIMRecommender,
        "ALS": ALSRecommender,
        "BPR": BPRRecommender,
    }
    if variant not in registry:
        raise ModelError(f"Unknown recommender: {variant}. Supported: {', '.join(registry)}")

    block = hyperparameters
    if hyperparameters is not None and hasattr(hyperparameters, "for_variant"):
        block = hyperparameters.for_variant(variant)
    if seed is None and block is not None:
        seed = getattr(block, "seed", None)
    return registry[variant](block, seed=seed)
