"""
Item k-Nearest-Neighbors Recommender

Item-to-item cosine similarity over the binary interaction matrix; a user's
score for an item sums the similarities of that item's neighbors the user consumed.
"""

from typing import Dict, Optional

import numpy as np
import scipy.sparse as sp

from recommenders.base import Recommender, UserRepresentation, sparse_from_state, sparse_state
from utils.config import ItemKNNConfig
from utils.logger import get_logger

logger = get_logger(__name__)

BLOCK_SIZE = 1000


def cosine_similarity(
    matrix: sp.spmatrix,
    neighbors: Optional[int] = None,
    shrinkage: float = 0.0,
    block_size: int = BLOCK_SIZE,
) -> sp.csc_matrix:
    """
    Column-wise cosine similarity with zero diagonal.

    Column j of the result holds the similarities of item j's neighbors; with
    ``neighbors`` set only the top-k positive entries per column are kept.

    Args:
        matrix: users x items interaction matrix
        neighbors: Neighbors kept per item (None keeps every non-zero similarity)
        shrinkage: Added to the norm product in the denominator

    Returns:
        items x items CSC matrix
    """
    X = sp.csc_matrix(matrix, dtype=np.float64)
    n_items = X.shape[1]
    norms = np.sqrt(np.asarray(X.multiply(X).sum(axis=0)).ravel())
    Xt = X.T.tocsr()

    rows, cols, values = [], [], []
    for start in range(0, n_items, block_size):
        stop = min(start + block_size, n_items)
        block = np.asarray((Xt @ X[:, start:stop]).todense())
        denominator = np.outer(norms, norms[start:stop]) + shrinkage
        with np.errstate(divide="ignore", invalid="ignore"):
            block = np.where(denominator > 0, block / denominator, 0.0)
        block[np.arange(start, stop), np.arange(stop - start)] = 0.0

        if neighbors is not None and neighbors < n_items:
            top = np.argpartition(-block, neighbors - 1, axis=0)[:neighbors]
            top_values = np.take_along_axis(block, top, axis=0)
            keep = top_values > 0
            rows.append(top[keep])
            cols.append((np.nonzero(keep)[1] + start))
            values.append(top_values[keep])
        else:
            r, c = np.nonzero(block > 0)
            rows.append(r)
            cols.append(c + start)
            values.append(block[r, c])

    similarity = sp.csc_matrix(
        (np.concatenate(values), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_items, n_items),
    )
    similarity.sort_indices()
    return similarity


class ItemKNNRecommender(Recommender):
    """Neighborhood model over item-item cosine similarity."""

    VARIANT = "ItemKNN"

    def __init__(self, hyperparameters: ItemKNNConfig = None, seed: int = None):
        super().__init__(hyperparameters or ItemKNNConfig(), seed=seed)
        self.similarity: Optional[sp.csr_matrix] = None
        self._scoring: Optional[sp.csr_matrix] = None

    def _fit(self, matrix: sp.csr_matrix) -> None:
        params = self.hyperparameters
        logger.info(f"Computing item similarities (k={params.neighbors}, shrink={params.shrinkage})")
        self._set_similarity(cosine_similarity(matrix, params.neighbors, params.shrinkage))
        logger.info(f"✓ ItemKNN trained: {self.similarity.nnz} similarity entries")

    def _set_similarity(self, similarity: sp.spmatrix) -> None:
        self.similarity = sp.csr_matrix(similarity)
        # scores = W^T x, precomputed in row-major layout
        self._scoring = self.similarity.T.tocsr()

    def _fold_in(self, positions: np.ndarray) -> np.ndarray:
        return self.incidence_vector(positions)

    def score(self, representation: UserRepresentation) -> np.ndarray:
        return self._scoring @ representation.vector

    def get_state(self) -> Dict[str, np.ndarray]:
        return sparse_state("similarity", self.similarity)

    def set_state(self, state: Dict[str, np.ndarray]) -> None:
        self._set_similarity(sparse_from_state("similarity", state))
