"""
Dataset Ingestion and Preparation

Responsibility: Turn raw listening logs into the filtered, binarized user-item
dataset the experiment runs on.
- Parse interaction and user TSV files
- Apply the filter cascade (time window, play count, item core, user core)
- Sample the item catalog uniformly at random
- Build the user-based cross-validation split plan with per-user holdouts
"""

import csv
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
import scipy.sparse as sp

from utils.config import FilterConfig
from utils.errors import DataError
from utils.logger import get_logger

logger = get_logger(__name__)

INTERACTION_COLUMNS = ["user_id", "item_id", "play_count", "timestamp"]
USER_COLUMNS = ["user_id", "gender"]
GENDERS = ("F", "M", "unknown")
SECONDS_PER_DAY = 86400.0

# Share of malformed lines above which the input is assumed to be in the wrong format.
MAX_MALFORMED_SHARE = 0.5
# per line; summed duplicates stay far inside int64
MAX_PLAY_COUNT = 2 ** 31 - 1


@dataclass(frozen=True)
class UserRecord:
    user_id: str
    gender: str = "unknown"


def normalize_gender(value) -> str:
    """Map raw gender labels onto F / M / unknown."""
    if isinstance(value, str):
        label = value.strip().lower()
        if label == "f":
            return "F"
        if label == "m":
            return "M"
    return "unknown"


def _read_tsv(source, columns: List[str], what: str) -> Tuple[pd.DataFrame, int]:
    """Read a headerless TSV as strings, counting lines with too many fields."""
    bad_lines: List[List[str]] = []

    def _on_bad_line(line):
        bad_lines.append(line)
        return None

    try:
        frame = pd.read_csv(
            source,
            sep="\t",
            header=None,
            names=columns,
            dtype=str,
            engine="python",
            on_bad_lines=_on_bad_line,
            keep_default_na=False,
            skip_blank_lines=True,
            quoting=csv.QUOTE_NONE,
            encoding="utf-8",
        )
    except pd.errors.EmptyDataError:
        frame = pd.DataFrame(columns=columns, dtype=str)
    except (OSError, UnicodeDecodeError) as e:
        raise DataError(f"Cannot read {what} source: {e}") from e

    return frame, len(bad_lines)


def aggregate_interactions(frame: pd.DataFrame) -> pd.DataFrame:
    """Sum play counts of duplicate (user, item) pairs, keeping the latest timestamp."""
    if frame.empty:
        return _empty_interactions()
    grouped = frame.groupby(["user_id", "item_id"], sort=True, as_index=False).agg(
        play_count=("play_count", "sum"),
        timestamp=("timestamp", "max"),
    )
    grouped["play_count"] = grouped["play_count"].astype(np.int64)
    return grouped[INTERACTION_COLUMNS].reset_index(drop=True)


def _empty_interactions() -> pd.DataFrame:
    return pd.DataFrame({
        "user_id": pd.Series(dtype=object),
        "item_id": pd.Series(dtype=object),
        "play_count": pd.Series(dtype=np.int64),
        "timestamp": pd.Series(dtype=float),
    })


def parse_interactions(source, aggregate: bool = True) -> pd.DataFrame:
    """
    Parse a tab-separated interactions file.

    Each line holds user_id, item_id, play_count and an optional timestamp.
    Malformed lines are skipped and counted (``frame.attrs["malformed_lines"]``).

    Args:
        source: Path or binary stream with UTF-8 TSV content
        aggregate: Sum duplicate (user, item) pairs into one record

    Returns:
        DataFrame with columns user_id, item_id, play_count, timestamp

    Raises:
        DataError: If the source is unreadable or more than half of the lines are malformed
    """
    raw, too_wide = _read_tsv(source, INTERACTION_COLUMNS, "interactions")

    users = raw["user_id"].fillna("").str.strip()
    items = raw["item_id"].fillna("").str.strip()
    play_counts = pd.to_numeric(raw["play_count"], errors="coerce")
    raw_ts = raw["timestamp"].fillna("").str.strip()
    timestamps = pd.to_numeric(raw_ts.replace("", np.nan), errors="coerce")

    valid = (
        (users != "")
        & (items != "")
        & play_counts.notna()
        & np.isfinite(play_counts)
        & (play_counts >= 0)
        & (play_counts <= MAX_PLAY_COUNT)
        & (play_counts == np.floor(play_counts))
        & ((raw_ts == "") | np.isfinite(timestamps))
    )
    malformed = int((~valid).sum()) + too_wide
    total = len(raw) + too_wide

    if total and malformed / total > MAX_MALFORMED_SHARE:
        raise DataError(
            f"{malformed} of {total} interaction lines are malformed; "
            f"expected tab-separated user_id, item_id, play_count[, timestamp]"
        )
    if malformed:
        logger.warning(f"Skipped {malformed} malformed interaction line(s) of {total}")

    frame = pd.DataFrame({
        "user_id": users[valid].astype(object),
        "item_id": items[valid].astype(object),
        "play_count": play_counts[valid].astype(np.int64),
        "timestamp": timestamps[valid].astype(float),
    }).reset_index(drop=True)
    if frame.empty:
        frame = _empty_interactions()

    if aggregate:
        frame = aggregate_interactions(frame)
    else:
        frame = frame.sort_values(["user_id", "item_id"], kind="mergesort").reset_index(drop=True)

    frame.attrs["malformed_lines"] = malformed
    logger.info(f"✓ Parsed {len(frame)} interaction records ({malformed} malformed lines skipped)")
    return frame


def parse_users(source) -> pd.DataFrame:
    """
    Parse a tab-separated users file (user_id, gender).

    Returns:
        DataFrame with columns user_id, gender (F / M / unknown), one row per user
    """
    raw, too_wide = _read_tsv(source, USER_COLUMNS, "users")
    users = raw["user_id"].fillna("").str.strip()
    frame = pd.DataFrame({
        "user_id": users.astype(object),
        "gender": raw["gender"].map(normalize_gender).astype(object),
    })
    frame = frame[users != ""]
    malformed = int((users == "").sum()) + too_wide
    if malformed:
        logger.warning(f"Skipped {malformed} malformed user line(s)")

    duplicated = frame["user_id"].duplicated(keep="first")
    if duplicated.any():
        logger.warning(f"Ignoring {int(duplicated.sum())} duplicate user record(s)")
        frame = frame[~duplicated]

    frame = frame.sort_values("user_id", kind="mergesort").reset_index(drop=True)
    frame.attrs["malformed_lines"] = malformed
    return frame


@dataclass(frozen=True, eq=False)
class Dataset:
    """
    Filtered, aggregated interactions plus the derived binary user-item matrix.

    Rows and columns of ``binary_matrix`` and ``count_matrix`` (summed play
    counts) follow the sorted ``user_ids`` and ``items`` arrays. Treat every
    field as read-only.
    """
    interactions: pd.DataFrame
    users: pd.DataFrame
    items: np.ndarray
    user_ids: np.ndarray
    binary_matrix: sp.csr_matrix
    count_matrix: sp.csr_matrix
    _user_pos: Dict[str, int] = field(repr=False, compare=False, default_factory=dict)
    _item_pos: Dict[str, int] = field(repr=False, compare=False, default_factory=dict)

    @classmethod
    def from_frames(cls, interactions: pd.DataFrame, users: Optional[pd.DataFrame] = None) -> "Dataset":
        """
        Build a dataset from aggregated interactions and user attributes.

        Records with play_count < 1 carry no consumption and are dropped. Users
        without a user record get gender 'unknown'; user records without
        interactions are dropped.
        """
        interactions = interactions.reindex(columns=INTERACTION_COLUMNS)
        interactions = interactions[interactions["play_count"] >= 1]
        interactions = interactions.sort_values(["user_id", "item_id"], kind="mergesort")
        interactions = interactions.reset_index(drop=True)

        user_ids = np.array(sorted(interactions["user_id"].unique()), dtype=object)
        items = np.array(sorted(interactions["item_id"].unique()), dtype=object)

        if users is None:
            users = pd.DataFrame({"user_id": pd.Series(dtype=object), "gender": pd.Series(dtype=object)})
        genders = dict(zip(users["user_id"], users["gender"]))
        missing = [u for u in user_ids if u not in genders]
        if missing and len(users):
            logger.warning(f"{len(missing)} user(s) have no user record; gender set to 'unknown'")
        user_frame = pd.DataFrame({
            "user_id": user_ids,
            "gender": [normalize_gender(genders.get(u)) for u in user_ids],
        })

        user_pos = {u: i for i, u in enumerate(user_ids)}
        item_pos = {t: i for i, t in enumerate(items)}
        rows = interactions["user_id"].map(user_pos).to_numpy(dtype=np.int64)
        cols = interactions["item_id"].map(item_pos).to_numpy(dtype=np.int64)
        shape = (len(user_ids), len(items))
        matrix = sp.csr_matrix((np.ones(len(rows), dtype=np.float64), (rows, cols)), shape=shape)
        matrix.sort_indices()
        counts = interactions["play_count"].to_numpy(dtype=np.float64)
        count_matrix = sp.csr_matrix((counts, (rows, cols)), shape=shape)
        count_matrix.sort_indices()

        return cls(
            interactions=interactions,
            users=user_frame,
            items=items,
            user_ids=user_ids,
            binary_matrix=matrix,
            count_matrix=count_matrix,
            _user_pos=user_pos,
            _item_pos=item_pos,
        )

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.items)

    def __len__(self) -> int:
        return len(self.interactions)

    def user_position(self, user_id: str) -> int:
        try:
            return self._user_pos[user_id]
        except KeyError:
            raise DataError(f"Unknown user: {user_id}") from None

    def item_positions(self, item_ids) -> np.ndarray:
        """Column indices of the given item ids (unknown ids raise DataError)."""
        try:
            return np.array([self._item_pos[t] for t in item_ids], dtype=np.int64)
        except KeyError as e:
            raise DataError(f"Unknown item: {e.args[0]}") from None

    def user_item_indices(self, user_id: str) -> np.ndarray:
        """Sorted column indices of the items a user consumed."""
        row = self.user_position(user_id)
        start, end = self.binary_matrix.indptr[row], self.binary_matrix.indptr[row + 1]
        return self.binary_matrix.indices[start:end].copy()

    def user_items(self, user_id: str) -> np.ndarray:
        """Sorted item ids a user consumed."""
        return self.items[self.user_item_indices(user_id)]

    def gender_of(self, user_id: str) -> str:
        return self.users["gender"].iat[self.user_position(user_id)]

    def user_record(self, user_id: str) -> UserRecord:
        return UserRecord(user_id=user_id, gender=self.gender_of(user_id))

    @property
    def has_timestamps(self) -> bool:
        return bool(self.interactions["timestamp"].notna().any())


@dataclass
class FilterReport:
    """
    Survivor counts after each filter stage, in application order.

    Fixpoint rounds after the first are recorded as item_core_2, user_core_2, ...
    """
    stages: Dict[str, Dict[str, int]] = field(default_factory=dict)
    fixpoint_rounds: int = 1

    def record(self, stage: str, frame: pd.DataFrame) -> None:
        counts = {
            "users": int(frame["user_id"].nunique()),
            "items": int(frame["item_id"].nunique()),
            "interactions": int(len(frame)),
        }
        previous = list(self.stages.values())[-1] if self.stages else None
        counts["removed_interactions"] = (
            previous["interactions"] - counts["interactions"] if previous else 0
        )
        self.stages[stage] = counts
        logger.info(
            f"  - {stage}: {counts['users']} users, {counts['items']} items, "
            f"{counts['interactions']} interactions (removed {counts['removed_interactions']})"
        )

    def to_dict(self) -> Dict[str, Dict[str, int]]:
        return {stage: dict(counts) for stage, counts in self.stages.items()}


def _core_filter(frame: pd.DataFrame, key: str, other: str, minimum: int) -> pd.DataFrame:
    """Keep rows whose `key` has at least `minimum` distinct `other` values."""
    counts = frame.groupby(key)[other].nunique()
    keep = counts.index[counts >= minimum]
    return frame[frame[key].isin(keep)]


def apply_filters(
    interactions: pd.DataFrame,
    users: Optional[pd.DataFrame],
    config: FilterConfig,
) -> Tuple[Dataset, FilterReport]:
    """
    Apply the filter cascade and build the binarized dataset.

    Order: time window -> play count -> item core -> user core. The cores run
    once unless ``config.iterate_to_fixpoint`` is set.

    Args:
        interactions: Parsed interactions (aggregated or raw events)
        users: Parsed user records (may be None)
        config: Filter thresholds

    Returns:
        (dataset, filter report)

    Raises:
        DataError: If a stage leaves no interactions
    """
    report = FilterReport()
    # the timestamp column is optional
    frame = interactions.reindex(columns=INTERACTION_COLUMNS)
    logger.info("Applying filter cascade")
    report.record("input", frame)

    def _check(stage: str, current: pd.DataFrame) -> None:
        if current.empty:
            raise DataError(
                f"No interactions left after filter stage '{stage}'; "
                f"stage counts: {report.to_dict()}"
            )

    _check("input", frame)

    if config.time_window_days is not None and frame["timestamp"].notna().any():
        reference = config.reference_time
        if reference is None:
            reference = float(frame["timestamp"].max())
        cutoff = reference - config.time_window_days * SECONDS_PER_DAY
        # rows without a timestamp are not subject to the window
        frame = frame[frame["timestamp"].isna() | (frame["timestamp"] >= cutoff)]
    frame = aggregate_interactions(frame)
    report.record("time_window", frame)
    _check("time_window", frame)

    frame = frame[frame["play_count"] >= config.min_play_count]
    report.record("play_count", frame)
    _check("play_count", frame)

    rounds = 0
    while True:
        rounds += 1
        before = len(frame)
        frame = _core_filter(frame, "item_id", "user_id", config.min_users_per_item)
        suffix = "" if rounds == 1 else f"_{rounds}"
        report.record("item_core" + suffix, frame)
        _check("item_core" + suffix, frame)
        frame = _core_filter(frame, "user_id", "item_id", config.min_items_per_user)
        report.record("user_core" + suffix, frame)
        _check("user_core" + suffix, frame)
        if not config.iterate_to_fixpoint or len(frame) == before:
            break
    report.fixpoint_rounds = rounds

    dataset = Dataset.from_frames(frame.reset_index(drop=True), users)
    logger.info(
        f"✓ Filtered dataset: {dataset.n_users} users, {dataset.n_items} items, "
        f"{len(dataset)} interactions"
    )
    return dataset, report


def sample_items(
    dataset: Dataset,
    n: int,
    seed: int,
    min_items_per_user: int = 1,
    report: Optional[FilterReport] = None,
) -> Dataset:
    """
    Keep exactly ``n`` catalog items chosen uniformly at random.

    Interactions with removed items are dropped, then users left with fewer
    than ``min_items_per_user`` items. With the default of 1 only users left
    with nothing disappear and exactly ``n`` items survive; a higher threshold
    re-applies the user core and can drop items only those users held.

    Args:
        report: If given, records the ``sample`` stage (exactly n items) and,
            for a threshold above 1, the ``sample_user_core`` stage

    Raises:
        DataError: If n exceeds the catalog size
    """
    if n > dataset.n_items:
        raise DataError(f"Cannot sample {n} items from a catalog of {dataset.n_items}")
    if n < 1:
        raise DataError("Sample size must be positive")

    rng = np.random.default_rng(seed)
    chosen = set(rng.choice(dataset.items, size=n, replace=False))

    frame = dataset.interactions[dataset.interactions["item_id"].isin(chosen)]
    if report is not None:
        report.record("sample", frame)
    per_user = frame.groupby("user_id")["item_id"].nunique()
    keep_users = per_user.index[per_user >= min_items_per_user]
    frame = frame[frame["user_id"].isin(keep_users)]
    if report is not None and min_items_per_user > 1:
        report.record("sample_user_core", frame)
    if frame.empty:
        raise DataError(f"Item sample of size {n} left no users")

    sampled = Dataset.from_frames(frame.reset_index(drop=True), dataset.users)
    if sampled.n_items != n:
        logger.warning(f"Sampled {n} items but only {sampled.n_items} kept interactions after the user threshold")
    logger.info(f"✓ Sampled {sampled.n_items} items; {sampled.n_users} users remain")
    return sampled


@dataclass(frozen=True, eq=False)
class FoldAssignment:
    """User roles in one cross-validation fold."""
    fold: int
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray


@dataclass(frozen=True, eq=False)
class Holdout:
    """Per-user partition of items into model input and evaluation holdout."""
    input_items: np.ndarray
    holdout_items: np.ndarray


@dataclass(frozen=True, eq=False)
class SplitPlan:
    folds: Tuple[FoldAssignment, ...]
    holdouts: Dict[Tuple[int, str], Holdout]
    seed: int

    def holdout(self, fold: int, user_id: str) -> Holdout:
        try:
            return self.holdouts[(fold, user_id)]
        except KeyError:
            raise DataError(f"User {user_id} is a training user in fold {fold}; no holdout") from None


def holdout_size(n_items: int, holdout_fraction: float) -> int:
    """Round half up, at least one holdout item and (if possible) one input item."""
    size = max(1, int(math.floor(holdout_fraction * n_items + 0.5)))
    if n_items >= 2:
        size = min(size, n_items - 1)
    return size


def _blocks_for(ratio: float, folds: int, role: str) -> int:
    blocks = ratio * folds
    if abs(blocks - round(blocks)) > 1e-9:
        raise DataError(f"{role} ratio {ratio} is not a multiple of 1/{folds}")
    return int(round(blocks))


def make_split_plan(
    dataset: Dataset,
    ratios: Tuple[float, float, float] = (0.6, 0.2, 0.2),
    folds: int = 5,
    input_fraction: float = 0.8,
    seed: int = 42,
) -> SplitPlan:
    """
    Build the round-robin user split with per-user 80/20 holdouts.

    Users are shuffled once and cut into ``folds`` near-equal blocks; in fold f
    the test role goes to block f, validation to the following block(s) and
    training to the rest, so every user is a test user in exactly one fold.

    Args:
        dataset: Filtered dataset
        ratios: (train, validation, test) user shares, multiples of 1/folds
        folds: Number of folds
        input_fraction: Share of a non-train user's items given to the model
        seed: Seed for the user shuffle and the holdout draws

    Returns:
        SplitPlan

    Raises:
        DataError: If there are fewer users than folds or the ratios do not fit
    """
    if dataset.n_users == 0:
        raise DataError("Cannot split an empty dataset")
    if dataset.n_users < folds:
        raise DataError(f"Need at least {folds} users for {folds} folds, got {dataset.n_users}")

    n_train = _blocks_for(ratios[0], folds, "train")
    n_val = _blocks_for(ratios[1], folds, "validation")
    n_test = _blocks_for(ratios[2], folds, "test")
    if n_test != 1 or n_train + n_val + n_test != folds:
        raise DataError(f"Ratios {ratios} must assign exactly one test block out of {folds}")

    rng = np.random.default_rng(seed)
    blocks = np.array_split(rng.permutation(dataset.user_ids), folds)
    holdout_fraction = round(1.0 - input_fraction, 12)

    assignments: List[FoldAssignment] = []
    holdouts: Dict[Tuple[int, str], Holdout] = {}
    for fold in range(folds):
        order = [(fold + k) % folds for k in range(folds)]
        test = np.sort(blocks[order[0]])
        validation = np.sort(np.concatenate([blocks[b] for b in order[1:1 + n_val]])) \
            if n_val else np.array([], dtype=object)
        train = np.sort(np.concatenate([blocks[b] for b in order[1 + n_val:]]))
        assignments.append(FoldAssignment(fold, train, validation, test))

        for user_id in np.concatenate([validation, test]):
            position = dataset.user_position(user_id)
            items = dataset.user_items(user_id)
            user_rng = np.random.default_rng([seed, fold, position])
            permuted = items[user_rng.permutation(len(items))]
            size = holdout_size(len(items), holdout_fraction)
            holdouts[(fold, user_id)] = Holdout(
                input_items=np.sort(permuted[size:]),
                holdout_items=np.sort(permuted[:size]),
            )

        logger.debug(f"Fold {fold}: {len(train)} train / {len(validation)} validation / {len(test)} test users")

    logger.info(f"✓ Split plan: {folds} folds over {dataset.n_users} users")
    return SplitPlan(folds=tuple(assignments), holdouts=holdouts, seed=seed)


def dataset_statistics(dataset: Dataset) -> Dict[str, Dict[str, float]]:
    """
    Per-group dataset statistics (All, F, M).

    Listening events (LEs) are the summed play counts.
    """
    frame = dataset.interactions.merge(dataset.users, on="user_id", how="left")
    groups = {"All": frame, "F": frame[frame["gender"] == "F"], "M": frame[frame["gender"] == "M"]}

    stats: Dict[str, Dict[str, float]] = {}
    for name, part in groups.items():
        per_user = part.groupby("user_id").agg(tracks=("item_id", "nunique"), les=("play_count", "sum"))
        stats[name] = {
            "users": int(len(per_user)),
            "tracks": int(part["item_id"].nunique()),
            "listening_events": int(part["play_count"].sum()),
            "tracks_per_user_mean": float(per_user["tracks"].mean()) if len(per_user) else 0.0,
            "tracks_per_user_std": float(per_user["tracks"].std()) if len(per_user) > 1 else 0.0,
            "les_per_user_mean": float(per_user["les"].mean()) if len(per_user) else 0.0,
            "les_per_user_std": float(per_user["les"].std()) if len(per_user) > 1 else 0.0,
        }
    return stats


def write_dataset(dataset: Dataset, directory: str) -> Dict[str, str]:
    """Write the dataset as interactions.tsv + users.tsv (the ingestion formats)."""
    Path(directory).mkdir(parents=True, exist_ok=True)
    interactions_path = os.path.join(directory, "interactions.tsv")
    users_path = os.path.join(directory, "users.tsv")

    frame = dataset.interactions
    if not dataset.has_timestamps:
        frame = frame.drop(columns=["timestamp"])
    frame.to_csv(interactions_path, sep="\t", header=False, index=False, float_format="%.17g")

    genders = dataset.users["gender"].map({"F": "f", "M": "m"}).fillna("")
    pd.DataFrame({"user_id": dataset.users["user_id"], "gender": genders}).to_csv(
        users_path, sep="\t", header=False, index=False
    )
    return {"interactions": interactions_path, "users": users_path}


def load_dataset(interactions_path: str, users_path: Optional[str] = None) -> Dataset:
    """Load an already filtered dataset without re-running the filters."""
    interactions = parse_interactions(interactions_path)
    users = parse_users(users_path) if users_path else None
    return Dataset.from_frames(interactions, users)
