"""
SLIM Recommender

Sparse linear item-item model: every column of the similarity matrix is an
elastic-net regression of that item's column on the other items, with
non-negative coefficients and a zero diagonal, solved by cyclic coordinate
descent.
"""

import warnings
from typing import Dict, Optional

import numpy as np
import scipy.sparse as sp
from sklearn.exceptions import ConvergenceWarning
from sklearn.linear_model import ElasticNet
from tqdm import tqdm

from recommenders.base import Recommender, UserRepresentation, sparse_from_state, sparse_state
from recommenders.item_knn import cosine_similarity
from utils.config import SLIMConfig
from utils.errors import ModelError
from utils.logger import get_logger

logger = get_logger(__name__)


class SLIMRecommender(Recommender):
    """
    Elastic-net item regression.

    Only items co-occurring with the target can receive a positive weight, so
    each regression is restricted to them (or to the ``neighbors`` most
    cosine-similar of them when ``neighbors`` > 0).
    """

    VARIANT = "SLIM"

    def __init__(self, hyperparameters: SLIMConfig = None, seed: int = None, show_progress: bool = False):
        super().__init__(hyperparameters or SLIMConfig(), seed=seed)
        self.show_progress = show_progress
        self.similarity: Optional[sp.csr_matrix] = None
        self._scoring: Optional[sp.csr_matrix] = None
        self.non_converged_columns = 0

    def _fit(self, matrix: sp.csr_matrix) -> None:
        params = self.hyperparameters
        alpha = params.l1 + params.l2
        if alpha <= 0:
            raise ModelError("SLIM needs a positive l1 + l2 penalty")

        X = matrix.tocsc()
        n_items = X.shape[1]
        neighbors = params.neighbors if 0 < params.neighbors < n_items else None
        candidates = cosine_similarity(X, neighbors=neighbors)

        solver = ElasticNet(
            alpha=alpha,
            l1_ratio=params.l1 / alpha,
            positive=True,
            fit_intercept=False,
            max_iter=params.max_sweeps,
            tol=params.tolerance,
            selection="cyclic",
        )

        rows, cols, values = [], [], []
        self.non_converged_columns = 0
        for item in tqdm(range(n_items), desc="SLIM columns", disable=not self.show_progress):
            features = candidates.indices[candidates.indptr[item]:candidates.indptr[item + 1]]
            if len(features) == 0:
                continue
            target = X[:, item].toarray().ravel()
            design = X[:, features].toarray()

            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always", ConvergenceWarning)
                solver.fit(design, target)
            if any(issubclass(w.category, ConvergenceWarning) for w in caught):
                self.non_converged_columns += 1
                logger.debug(f"SLIM column {item} hit the sweep cap; keeping last iterate")

            coef = solver.coef_
            keep = coef > 0
            rows.append(features[keep])
            cols.append(np.full(int(keep.sum()), item, dtype=np.int64))
            values.append(coef[keep])

        if self.non_converged_columns:
            logger.warning(
                f"{self.non_converged_columns} SLIM column(s) did not converge within "
                f"{params.max_sweeps} sweeps"
            )

        if rows:
            weights = sp.csr_matrix(
                (np.concatenate(values), (np.concatenate(rows), np.concatenate(cols))),
                shape=(n_items, n_items),
            )
        else:
            weights = sp.csr_matrix((n_items, n_items))
        weights.setdiag(0.0)
        weights.eliminate_zeros()
        self._set_similarity(weights)
        logger.info(f"✓ SLIM trained: {self.similarity.nnz} non-zero weights")

    def _set_similarity(self, similarity: sp.spmatrix) -> None:
        self.similarity = sp.csr_matrix(similarity)
        self._scoring = self.similarity.T.tocsr()

    def _fold_in(self, positions: np.ndarray) -> np.ndarray:
        return self.incidence_vector(positions)

    def score(self, representation: UserRepresentation) -> np.ndarray:
        return self._scoring @ representation.vector

    def get_state(self) -> Dict[str, np.ndarray]:
        return sparse_state("similarity", self.similarity)

    def set_state(self, state: Dict[str, np.ndarray]) -> None:
        self._set_similarity(sparse_from_state("similarity", state))
