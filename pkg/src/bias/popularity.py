"""
Item Popularity and Popularity Distributions

Responsibility: Measure how popular every track is and describe a user's
history or recommendation list by the popularity of its tracks.
- P(t): summed play counts of a track over all users
- Per-user popularity distributions for histories and length-matched recommendations
- Decile bins holding ~10% of the catalog's popularity mass each
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from data.dataset import Dataset
from utils.errors import DataError
from utils.logger import get_logger

logger = get_logger(__name__)

N_BINS = 10
DEFAULT_EPSILON = 1e-10


@dataclass(frozen=True, eq=False)
class DecileBins:
    """
    Popularity-ordered partition of the catalog into ten bins.

    ``labels[j]`` is the 0-based bin of the index item at position j; bin 0
    holds the least popular items.
    """
    labels: np.ndarray
    bin_sizes: np.ndarray
    bin_masses: np.ndarray

    @property
    def n_bins(self) -> int:
        return len(self.bin_sizes)

    def members(self, bin_index: int) -> np.ndarray:
        """Item positions of one bin."""
        return np.flatnonzero(self.labels == bin_index)


@dataclass(frozen=True, eq=False)
class PopularityIndex:
    """P(t) for every catalog item, aligned with the dataset's sorted item ids."""
    items: np.ndarray
    popularity: np.ndarray
    total_mass: int
    bins: Optional[DecileBins] = None
    _pos: Dict[str, int] = field(repr=False, compare=False, default_factory=dict)

    def __len__(self) -> int:
        return len(self.items)

    def __contains__(self, item_id: str) -> bool:
        return item_id in self._pos

    def positions(self, item_ids: Sequence[str]) -> np.ndarray:
        try:
            return np.array([self._pos[t] for t in item_ids], dtype=np.int64)
        except KeyError as e:
            raise DataError(f"Item {e.args[0]} has no popularity value") from None

    def popularity_of(self, item_id: str) -> int:
        return int(self.popularity[self.positions([item_id])[0]])

    def as_dict(self) -> Dict[str, int]:
        return {t: int(p) for t, p in zip(self.items, self.popularity)}


@dataclass(frozen=True, eq=False)
class PopularityDistribution:
    """Popularity values of the tracks in one history or recommendation list."""
    owner: str
    kind: str
    items: np.ndarray
    values: np.ndarray

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True, eq=False)
class BinnedDistribution:
    counts: np.ndarray
    normalized: np.ndarray


def compute_popularity(dataset: Dataset, with_bins: bool = True) -> PopularityIndex:
    """
    Compute P(t) over all users of the (filtered, sampled) dataset.

    Args:
        dataset: Dataset whose aggregated play counts define popularity
        with_bins: Also build the decile bins (needs at least 10 items)

    Returns:
        PopularityIndex aligned with ``dataset.items``
    """
    totals = dataset.interactions.groupby("item_id")["play_count"].sum()
    # dataset.items is sorted and every item has at least one interaction
    items = np.asarray(totals.index.to_numpy(dtype=object))
    popularity = totals.to_numpy(dtype=np.int64)
    index = PopularityIndex(
        items=items,
        popularity=popularity,
        total_mass=int(popularity.sum()),
        _pos={t: i for i, t in enumerate(items)},
    )
    if with_bins and len(items) >= N_BINS:
        index = PopularityIndex(
            items=index.items,
            popularity=index.popularity,
            total_mass=index.total_mass,
            bins=build_decile_bins(index),
            _pos=index._pos,
        )
    elif with_bins:
        logger.warning(f"Catalog has only {len(items)} items; decile bins not built")

    logger.info(f"✓ Popularity index: {len(items)} items, total mass {index.total_mass}")
    return index


def history_distribution(
    user_id: str,
    dataset: Dataset,
    index: PopularityIndex,
    restrict_to: Optional[Sequence[str]] = None,
) -> PopularityDistribution:
    """
    Popularity distribution over a user's listening history.

    Each consumed track contributes its P(t) once. ``restrict_to`` limits the
    history to a subset of the user's items (the fold-in input).
    """
    items = dataset.user_items(user_id)
    if restrict_to is not None:
        items = np.intersect1d(items, np.asarray(restrict_to, dtype=object))
    if len(items) == 0:
        raise DataError(f"User {user_id} has no items for a history distribution")
    positions = index.positions(items)
    return PopularityDistribution(user_id, "history", positions, index.popularity[positions])


def recommendation_distribution(rec_list, k: int, index: PopularityIndex) -> PopularityDistribution:
    """
    Popularity distribution over the top-k of a recommendation list.

    Args:
        rec_list: RecommendationList (ranked ``items``)
        k: Length of the matched listening history
        index: Popularity index

    Raises:
        DataError: If k < 1 or the list holds fewer than k items
    """
    if k < 1:
        raise DataError("History length must be at least 1")
    if len(rec_list.items) < k:
        raise DataError(
            f"Recommendation list for {rec_list.user_id} has {len(rec_list.items)} items, needs {k}"
        )
    positions = index.positions(rec_list.items[:k])
    return PopularityDistribution(rec_list.user_id, "recommendation", positions, index.popularity[positions])


def build_decile_bins(index: PopularityIndex, n_bins: int = N_BINS) -> DecileBins:
    """
    Split the catalog into bins of ~1/n_bins of the total popularity mass.

    Items are swept by ascending popularity (ties by item id). Bin j closes at
    the first item whose inclusion brings the cumulative mass to at least
    j/n_bins of the total. Each bin keeps at least one item.

    Raises:
        DataError: If the catalog has fewer than n_bins items
    """
    n = len(index.items)
    if n < n_bins:
        raise DataError(f"Need at least {n_bins} items for decile binning, got {n}")

    # items are sorted by id, so a stable sort breaks popularity ties by id
    order = np.argsort(index.popularity, kind="stable")
    scaled_cumulative = np.cumsum(index.popularity[order]) * n_bins
    total = int(index.popularity.sum())

    labels = np.empty(n, dtype=np.int64)
    start = 0
    for j in range(1, n_bins + 1):
        if j == n_bins:
            close = n - 1
        else:
            close = int(np.searchsorted(scaled_cumulative, j * total, side="left"))
            close = max(close, start)
            close = min(close, n - (n_bins - j) - 1)
        labels[order[start:close + 1]] = j - 1
        start = close + 1

    bin_sizes = np.bincount(labels, minlength=n_bins)
    bin_masses = np.bincount(labels, weights=index.popularity, minlength=n_bins).astype(np.int64)
    logger.debug(f"Decile bin sizes: {bin_sizes.tolist()}")
    return DecileBins(labels=labels, bin_sizes=bin_sizes, bin_masses=bin_masses)


def bin_distribution(
    dist: PopularityDistribution,
    bins: DecileBins,
    epsilon: float = DEFAULT_EPSILON,
) -> BinnedDistribution:
    """
    Count a distribution's tracks per decile bin and normalize with smoothing.

    normalized_j = (counts_j + epsilon) / (sum(counts) + n_bins * epsilon)
    """
    counts = np.bincount(bins.labels[dist.items], minlength=bins.n_bins).astype(np.int64)
    normalized = (counts + epsilon) / (counts.sum() + bins.n_bins * epsilon)
    return BinnedDistribution(counts=counts, normalized=normalized)


def equal_width_histogram(
    dist: PopularityDistribution,
    n_bins: int = N_BINS,
    value_range: Optional[Tuple[float, float]] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Evenly binned popularity counts (for plotting only; metrics use decile bins)."""
    counts, edges = np.histogram(dist.values, bins=n_bins, range=value_range)
    return counts, edges


def bin_table(index: PopularityIndex, bins: Optional[DecileBins] = None) -> List[Dict[str, float]]:
    """Rows of the bin boundary dump: bin, popularity range, item count, mass share."""
    bins = bins or index.bins
    if bins is None:
        raise DataError("Popularity index has no decile bins")
    rows = []
    for j in range(bins.n_bins):
        members = index.popularity[bins.labels == j]
        rows.append({
            "bin_index": j + 1,
            "min_popularity": int(members.min()),
            "max_popularity": int(members.max()),
            "item_count": int(len(members)),
            "mass_share": float(members.sum() / index.total_mass),
        })
    return rows


def popularity_histogram(index: PopularityIndex, n_bins: int = N_BINS) -> List[Dict[str, float]]:
    """Rows of the catalog popularity histogram: bin, value range, item count."""
    catalog = PopularityDistribution("catalog", "catalog", np.arange(len(index)), index.popularity)
    counts, edges = equal_width_histogram(catalog, n_bins=n_bins)
    return [
        {"bin_index": j + 1, "lower": float(edges[j]), "upper": float(edges[j + 1]), "item_count": int(counts[j])}
        for j in range(n_bins)
    ]
