"""
Bayesian Personalized Ranking Matrix Factorization

Pairwise SGD on (user, positive, negative) triplets maximizing
log sigmoid(x_ui - x_uj) with L2 regularization. One uniformly sampled
non-consumed negative per positive per epoch.
"""

from typing import Dict, List, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from numba import njit, prange
from tqdm import tqdm

from recommenders.base import Recommender, UserRepresentation
from utils.config import BPRConfig
from utils.logger import get_logger

logger = get_logger(__name__)

INIT_SCALE = 0.1


@njit(cache=True)
def _log_sigmoid_loss(x):
    # -log(sigmoid(x)) without overflow
    if x > 0:
        return np.log1p(np.exp(-x))
    return -x + np.log1p(np.exp(x))


@njit(cache=True)
def _sgd_epoch(user_factors, item_factors, users, positives, negatives, learning_rate, regularization):
    n_factors = user_factors.shape[1]
    total = 0.0
    for t in range(users.shape[0]):
        u = users[t]
        i = positives[t]
        j = negatives[t]
        x = 0.0
        for f in range(n_factors):
            x += user_factors[u, f] * (item_factors[i, f] - item_factors[j, f])
        total += _log_sigmoid_loss(x)
        weight = 1.0 / (1.0 + np.exp(x))
        for f in range(n_factors):
            wu = user_factors[u, f]
            wi = item_factors[i, f]
            wj = item_factors[j, f]
            user_factors[u, f] += learning_rate * (weight * (wi - wj) - regularization * wu)
            item_factors[i, f] += learning_rate * (weight * wu - regularization * wi)
            item_factors[j, f] += learning_rate * (-weight * wu - regularization * wj)
    return total / max(users.shape[0], 1)


@njit(cache=True, parallel=True)
def _sgd_epoch_parallel(user_factors, item_factors, users, positives, negatives, learning_rate, regularization):
    # lock-free updates; results depend on thread scheduling
    n_factors = user_factors.shape[1]
    total = 0.0
    for t in prange(users.shape[0]):
        u = users[t]
        i = positives[t]
        j = negatives[t]
        x = 0.0
        for f in range(n_factors):
            x += user_factors[u, f] * (item_factors[i, f] - item_factors[j, f])
        total += _log_sigmoid_loss(x)
        weight = 1.0 / (1.0 + np.exp(x))
        for f in range(n_factors):
            wu = user_factors[u, f]
            wi = item_factors[i, f]
            wj = item_factors[j, f]
            user_factors[u, f] += learning_rate * (weight * (wi - wj) - regularization * wu)
            item_factors[i, f] += learning_rate * (weight * wu - regularization * wi)
            item_factors[j, f] += learning_rate * (-weight * wu - regularization * wj)
    return total / max(users.shape[0], 1)


def sample_negatives(rng: np.random.Generator, matrix: sp.csr_matrix, users: np.ndarray) -> np.ndarray:
    """Uniform non-consumed item per user entry (rejection sampling)."""
    n_items = matrix.shape[1]
    coo = matrix.tocoo()
    positive_codes = np.sort(coo.row.astype(np.int64) * n_items + coo.col)

    def _is_positive(u, j):
        codes = u.astype(np.int64) * n_items + j
        found = np.searchsorted(positive_codes, codes)
        found = np.minimum(found, len(positive_codes) - 1)
        return positive_codes[found] == codes

    negatives = rng.integers(0, n_items, size=len(users))
    pending = np.flatnonzero(_is_positive(users, negatives))
    while len(pending):
        negatives[pending] = rng.integers(0, n_items, size=len(pending))
        pending = pending[_is_positive(users[pending], negatives[pending])]
    return negatives


def mean_ranking_loss(user_factors: np.ndarray, item_factors: np.ndarray,
                      triplets: Tuple[np.ndarray, np.ndarray, np.ndarray]) -> float:
    """Mean -log sigmoid(x_ui - x_uj) over fixed triplets."""
    users, positives, negatives = triplets
    x = np.einsum("ij,ij->i", user_factors[users], item_factors[positives] - item_factors[negatives])
    return float(np.mean(np.logaddexp(0.0, -x)))


class BPRRecommender(Recommender):
    """BPR-MF; cold users are folded in by a ridge projection onto the item factors."""

    VARIANT = "BPR"

    def __init__(self, hyperparameters: BPRConfig = None, seed: int = None, show_progress: bool = False):
        hyperparameters = hyperparameters or BPRConfig()
        super().__init__(hyperparameters, seed=hyperparameters.seed if seed is None else seed)
        self.show_progress = show_progress
        self.user_factors: Optional[np.ndarray] = None
        self.item_factors: Optional[np.ndarray] = None
        self.loss_history: List[float] = []
        self._projection: Optional[np.ndarray] = None

    def _fit(self, matrix: sp.csr_matrix) -> None:
        params = self.hyperparameters
        rng = np.random.default_rng(self.seed)
        n_users, n_items = matrix.shape
        users_f = rng.normal(0.0, INIT_SCALE, size=(n_users, params.factors))
        items_f = rng.normal(0.0, INIT_SCALE, size=(n_items, params.factors))

        coo = matrix.tocoo()
        # users who consumed the whole catalog have no negatives
        row_lengths = np.diff(matrix.indptr)
        usable = row_lengths[coo.row] < n_items
        pos_users = coo.row[usable].astype(np.int64)
        pos_items = coo.col[usable].astype(np.int64)

        validation_rng = np.random.default_rng([int(self.seed), 1])
        size = min(params.validation_triplets, len(pos_users))
        picked = validation_rng.choice(len(pos_users), size=size, replace=False)
        validation = (pos_users[picked], pos_items[picked],
                      sample_negatives(validation_rng, matrix, pos_users[picked]))

        epoch_kernel = _sgd_epoch_parallel if params.parallel else _sgd_epoch
        if params.parallel:
            logger.warning("BPR parallel mode is enabled; training is not deterministic")

        self.loss_history = [mean_ranking_loss(users_f, items_f, validation)]
        for epoch in tqdm(range(params.epochs), desc="BPR epochs", disable=not self.show_progress):
            order = rng.permutation(len(pos_users))
            users = pos_users[order]
            positives = pos_items[order]
            negatives = sample_negatives(rng, matrix, users)
            train_loss = epoch_kernel(users_f, items_f, users, positives, negatives,
                                      params.learning_rate, params.regularization)
            self.loss_history.append(mean_ranking_loss(users_f, items_f, validation))
            logger.debug(f"BPR epoch {epoch + 1}: train loss {train_loss:.5f}, "
                         f"validation loss {self.loss_history[-1]:.5f}")

        self.user_factors = users_f
        self.item_factors = items_f
        self._set_projection()
        logger.info(f"✓ BPR trained: {params.epochs} epochs, validation loss "
                    f"{self.loss_history[0]:.4f} -> {self.loss_history[-1]:.4f}")

    def _set_projection(self) -> None:
        gram = self.item_factors.T @ self.item_factors
        gram += self.hyperparameters.regularization * np.eye(gram.shape[0])
        # x_u = (V^T V + reg I)^-1 V^T p_u
        self._projection = np.linalg.solve(gram, self.item_factors.T)

    def _fold_in(self, positions: np.ndarray) -> np.ndarray:
        return self._projection[:, positions].sum(axis=1)

    def score(self, representation: UserRepresentation) -> np.ndarray:
        return self.item_factors @ representation.vector

    def get_state(self) -> Dict[str, np.ndarray]:
        return {"user_factors": self.user_factors, "item_factors": self.item_factors,
                "loss_history": np.asarray(self.loss_history)}

    def set_state(self, state: Dict[str, np.ndarray]) -> None:
        self.user_factors = np.asarray(state["user_factors"])
        self.item_factors = np.asarray(state["item_factors"])
        self.loss_history = [float(v) for v in state.get("loss_history", [])]
        self._set_projection()
