"""
Hyperparameter Grid Search

Scores every combination of a hyperparameter grid on one fold's validation
users by mean NDCG. Never part of the default audit run.
"""

import itertools
from dataclasses import asdict, dataclass, fields, replace
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from bias.metrics import ndcg_at_k
from data.dataset import Dataset, SplitPlan
from utils.config import Hyperparameters
from utils.errors import ConfigError, DataError, ModelError
from utils.logger import get_logger
from workflow import train_model

logger = get_logger(__name__)


@dataclass
class TuningResult:
    """Validation score of one hyperparameter combination."""
    hyperparameters: Dict[str, Any]
    mean_ndcg: float
    n_users: int
    n_skipped: int


def expand_grid(grid: Dict[str, Sequence[Any]]) -> List[Dict[str, Any]]:
    """All combinations of the grid, in key order."""
    keys = list(grid)
    return [dict(zip(keys, values)) for values in itertools.product(*(grid[k] for k in keys))]


def grid_search(
    dataset: Dataset,
    plan: SplitPlan,
    fold: int,
    variant: str,
    grid: Dict[str, Sequence[Any]],
    hyperparameters: Optional[Hyperparameters] = None,
    ndcg_k: int = 10,
) -> List[TuningResult]:
    """
    Evaluate a hyperparameter grid on the validation users of one fold.

    Each combination is trained on the fold's training users; validation users
    are folded in on their input items and scored by NDCG@k against their
    holdout, with the input items excluded from the list.

    Args:
        dataset: Filtered dataset
        plan: Split plan (must assign validation users)
        fold: Fold to tune on
        variant: Algorithm name
        grid: Parameter name -> candidate values
        hyperparameters: Base hyperparameters (defaults if None)
        ndcg_k: Cutoff

    Returns:
        Results sorted by descending mean NDCG (ties keep grid order)

    Raises:
        ConfigError: On a parameter the variant does not have
        DataError: If the fold has no validation users
    """
    base = (hyperparameters or Hyperparameters()).for_variant(variant)
    known = {f.name for f in fields(base)}
    unknown = sorted(set(grid) - known)
    if unknown:
        raise ConfigError(f"{variant} has no hyperparameter(s): {', '.join(unknown)}")

    assignment = plan.folds[fold]
    if len(assignment.validation) == 0:
        raise DataError(f"Fold {fold} has no validation users")

    results = []
    for combination in expand_grid(grid):
        block = replace(base, **combination)
        model = train_model(variant, block, dataset, assignment.train)

        scores, skipped = [], 0
        for user_id in assignment.validation:
            holdout = plan.holdout(fold, user_id)
            if model.n_items - len(holdout.input_items) < ndcg_k:
                skipped += 1
                continue
            try:
                representation = model.fold_in(holdout.input_items)
                ranked = model.recommend(representation, ndcg_k, exclude=holdout.input_items)
            except ModelError as e:
                logger.debug(f"Validation user {user_id} skipped: {e}")
                skipped += 1
                continue
            scores.append(ndcg_at_k(ranked.items, holdout.holdout_items, ndcg_k))

        mean = float(np.mean(scores)) if scores else 0.0
        results.append(TuningResult(asdict(block), mean, len(scores), skipped))
        logger.info(f"{variant} {combination}: mean NDCG@{ndcg_k} {mean:.4f} over {len(scores)} users")

    results.sort(key=lambda r: -r.mean_ndcg)
    return results

