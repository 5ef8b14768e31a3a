"""
Popularity Bias and Accuracy Metrics

Responsibility: Compare a user's history and recommendation popularity
distributions and aggregate the per-user results into report rows.
- Moment summaries and their percent deltas (mean, median, variance, skewness, kurtosis)
- KL divergence and Kendall's tau over decile-binned distributions
- NDCG@k against the holdout
- Median aggregation per user group and group deltas relative to All
"""

from dataclasses import dataclass, field, asdict
from decimal import Decimal, ROUND_HALF_EVEN
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Union

import numpy as np
from scipy import stats

from bias.popularity import BinnedDistribution, DecileBins, PopularityDistribution, bin_distribution
from utils.errors import DataError
from utils.logger import get_logger

logger = get_logger(__name__)

MOMENTS = ("mean", "median", "variance", "skewness", "kurtosis")
PCT_DELTA_METRICS = tuple(f"pct_delta_{m}" for m in MOMENTS)
BIAS_METRICS = PCT_DELTA_METRICS + ("kl", "kendall_tau")
METRICS = BIAS_METRICS + ("ndcg_at_10",)

GROUPS = {"Female": "F", "Male": "M"}

# Report cells are fixed-point so that All + delta reproduces the group value exactly.
CELL_QUANTUM = Decimal("1e-9")


@dataclass(frozen=True)
class MomentSummary:
    """Population moments; skewness and kurtosis are None for zero variance."""
    mean: float
    median: float
    variance: float
    skewness: Optional[float]
    kurtosis: Optional[float]

    def get(self, name: str) -> Optional[float]:
        return getattr(self, name)


def moment_summary(values: Sequence[float]) -> MomentSummary:
    """
    Mean, median, population variance, skewness and excess kurtosis.

    Raises:
        DataError: On empty input
    """
    data = np.asarray(values, dtype=np.float64)
    if data.size == 0:
        raise DataError("Cannot summarize an empty distribution")

    m2 = float(stats.moment(data, 2))
    if m2 > 0.0:
        m3 = float(stats.moment(data, 3))
        m4 = float(stats.moment(data, 4))
        skewness = m3 / m2 ** 1.5
        kurtosis = m4 / m2 ** 2 - 3.0
    else:
        skewness = kurtosis = None

    return MomentSummary(
        mean=float(np.mean(data)),
        median=float(np.median(data)),
        variance=m2,
        skewness=skewness,
        kurtosis=kurtosis,
    )


def percent_delta(metric_of_h: Optional[float], metric_of_r: Optional[float]) -> Optional[float]:
    """(M(R) - M(H)) / M(H) * 100; None when undefined."""
    if metric_of_h is None or metric_of_r is None or metric_of_h == 0:
        return None
    return (metric_of_r - metric_of_h) / metric_of_h * 100.0


def kl_divergence(h_binned: BinnedDistribution, r_binned: BinnedDistribution) -> float:
    """KL(H || R) in nats over smoothed, normalized bin distributions."""
    if len(h_binned.normalized) != len(r_binned.normalized):
        raise DataError("Binned distributions use different bins")
    return float(stats.entropy(h_binned.normalized, r_binned.normalized))


def kendall_tau_binned(h_counts: Sequence[float], r_counts: Sequence[float]) -> Optional[float]:
    """
    (C - D) / (C + D) over all bin pairs ranked by count.

    Pairs tied in either distribution count as neither concordant nor
    discordant. None when no pair is untied.
    """
    h = np.asarray(h_counts, dtype=np.float64)
    r = np.asarray(r_counts, dtype=np.float64)
    if h.shape != r.shape:
        raise DataError("Count sequences have different lengths")

    upper = np.triu_indices(len(h), k=1)
    product = (np.sign(h[:, None] - h[None, :]) * np.sign(r[:, None] - r[None, :]))[upper]
    concordant = int(np.count_nonzero(product > 0))
    discordant = int(np.count_nonzero(product < 0))
    if concordant + discordant == 0:
        return None
    return (concordant - discordant) / (concordant + discordant)


def ndcg_at_k(rec_items: Sequence[str], holdout_items: Iterable[str], k: int = 10) -> float:
    """
    Binary-relevance NDCG@k.

    Raises:
        DataError: If the holdout is empty
    """
    holdout = set(holdout_items)
    if not holdout:
        raise DataError("NDCG needs at least one holdout item")

    top = list(rec_items[:k])
    discounts = 1.0 / np.log2(np.arange(2, k + 2))
    gains = np.array([1.0 if item in holdout else 0.0 for item in top])
    dcg = float(np.sum(gains * discounts[:len(top)]))
    idcg = float(np.sum(discounts[:min(k, len(holdout))]))
    return dcg / idcg


@dataclass
class PerUserBiasRecord:
    """Seven bias metrics plus NDCG for one (user, algorithm, fold)."""
    user_id: str
    gender: str
    algorithm: str
    fold: int
    pct_delta_mean: Optional[float] = None
    pct_delta_median: Optional[float] = None
    pct_delta_variance: Optional[float] = None
    pct_delta_skewness: Optional[float] = None
    pct_delta_kurtosis: Optional[float] = None
    kl: Optional[float] = None
    kendall_tau: Optional[float] = None
    ndcg_at_10: Optional[float] = None

    def value(self, metric: str) -> Optional[float]:
        return getattr(self, metric)

    @property
    def undefined(self) -> List[str]:
        return [m for m in METRICS if self.value(m) is None]

    def as_dict(self) -> Dict[str, object]:
        return asdict(self)


def user_bias_record(
    user_id: str,
    gender: str,
    algorithm: str,
    fold: int,
    history: PopularityDistribution,
    recommended: PopularityDistribution,
    bins: DecileBins,
    ranked_items: Sequence[str],
    holdout_items: Sequence[str],
    epsilon: float = 1e-10,
    k: int = 10,
) -> PerUserBiasRecord:
    """Compute every per-user metric from the two distributions and the ranking."""
    h_moments = moment_summary(history.values)
    r_moments = moment_summary(recommended.values)
    h_binned = bin_distribution(history, bins, epsilon)
    r_binned = bin_distribution(recommended, bins, epsilon)

    record = PerUserBiasRecord(user_id=user_id, gender=gender, algorithm=algorithm, fold=fold)
    for moment in MOMENTS:
        setattr(record, f"pct_delta_{moment}", percent_delta(h_moments.get(moment), r_moments.get(moment)))
    record.kl = kl_divergence(h_binned, r_binned)
    record.kendall_tau = kendall_tau_binned(h_binned.counts, r_binned.counts)
    record.ndcg_at_10 = ndcg_at_k(ranked_items, holdout_items, k)
    return record


@dataclass
class AggregateRow:
    """Group-level values: medians of bias metrics, mean NDCG."""
    group: str
    n_users: int
    values: Dict[str, Optional[float]] = field(default_factory=dict)
    skipped: Dict[str, int] = field(default_factory=dict)


GroupFilter = Union[None, str, Callable[[PerUserBiasRecord], bool]]


def aggregate(records: Sequence[PerUserBiasRecord], group_filter: GroupFilter = None,
              name: str = "All") -> AggregateRow:
    """
    Aggregate per-user records of one group.

    Args:
        records: Per-user records (one algorithm)
        group_filter: None for all users, a gender label, or a predicate
        name: Row name

    Returns:
        AggregateRow with medians (bias metrics, undefined values skipped) and
        the mean NDCG

    Raises:
        DataError: If no record belongs to the group
    """
    if group_filter is None:
        selected = list(records)
    elif isinstance(group_filter, str):
        selected = [r for r in records if r.gender == group_filter]
    else:
        selected = [r for r in records if group_filter(r)]
    if not selected:
        raise DataError(f"Group '{name}' has no users")

    selected.sort(key=lambda r: (r.user_id, r.fold))
    row = AggregateRow(group=name, n_users=len(selected))
    for metric in METRICS:
        defined = [r.value(metric) for r in selected if r.value(metric) is not None]
        row.skipped[metric] = len(selected) - len(defined)
        if not defined:
            row.values[metric] = None
        elif metric == "ndcg_at_10":
            row.values[metric] = float(np.mean(defined))
        else:
            row.values[metric] = float(np.median(defined))
    return row


def to_cell(value: Optional[float]) -> Optional[Decimal]:
    """Fixed-point report cell."""
    if value is None:
        return None
    return Decimal(repr(value)).quantize(CELL_QUANTUM, rounding=ROUND_HALF_EVEN)


def group_delta(group_row: Dict[str, Optional[Decimal]],
                all_row: Dict[str, Optional[Decimal]]) -> Dict[str, Optional[Decimal]]:
    """Per-metric group value minus All value (None where either side is undefined)."""
    if set(group_row) != set(all_row):
        raise DataError("Rows carry different metrics")
    return {
        metric: None if group_row[metric] is None or all_row[metric] is None
        else group_row[metric] - all_row[metric]
        for metric in all_row
    }


@dataclass
class AlgorithmBlock:
    """All row, group rows and their deltas for one algorithm."""
    algorithm: str
    all_row: Dict[str, Optional[Decimal]]
    group_rows: Dict[str, Dict[str, Optional[Decimal]]]
    deltas: Dict[str, Dict[str, Optional[Decimal]]]
    n_users: Dict[str, int]
    skipped: Dict[str, Dict[str, int]]


@dataclass
class BiasReport:
    blocks: Dict[str, AlgorithmBlock] = field(default_factory=dict)

    @property
    def algorithms(self) -> List[str]:
        return list(self.blocks)


def build_bias_report(records: Sequence[PerUserBiasRecord],
                      algorithms: Optional[Sequence[str]] = None) -> BiasReport:
    """
    Assemble the report: per algorithm an All row and one delta row per gender group.

    Algorithms appear in the given order (default: first appearance in records).
    """
    if algorithms is None:
        algorithms = list(dict.fromkeys(r.algorithm for r in records))

    report = BiasReport()
    for algorithm in algorithms:
        subset = [r for r in records if r.algorithm == algorithm]
        all_agg = aggregate(subset, None, "All")
        all_row = {m: to_cell(v) for m, v in all_agg.values.items()}

        group_rows, deltas = {}, {}
        n_users = {"All": all_agg.n_users}
        skipped = {"All": all_agg.skipped}
        for group, label in GROUPS.items():
            try:
                agg = aggregate(subset, label, group)
            except DataError:
                logger.warning(f"{algorithm}: no {group} users; delta row left empty")
                group_rows[group] = {m: None for m in METRICS}
                deltas[group] = {m: None for m in METRICS}
                n_users[group] = 0
                skipped[group] = {m: 0 for m in METRICS}
                continue
            group_rows[group] = {m: to_cell(v) for m, v in agg.values.items()}
            deltas[group] = group_delta(group_rows[group], all_row)
            n_users[group] = agg.n_users
            skipped[group] = agg.skipped

        report.blocks[algorithm] = AlgorithmBlock(algorithm, all_row, group_rows, deltas, n_users, skipped)
        logger.debug(f"{algorithm}: aggregated {all_agg.n_users} users")

    return report
