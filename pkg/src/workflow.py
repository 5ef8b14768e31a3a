"""
LangGraph Workflow for the Popularity Bias Audit

Uses LangGraph to orchestrate the experiment:
Load -> Filter -> Sample -> Popularity -> Split -> Folds -> Aggregate
"""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, TypedDict, Union

import numba
import numpy as np
import pandas as pd
import scipy
import sklearn
from langgraph.graph import StateGraph, END
from tqdm import tqdm

from bias.metrics import BiasReport, PerUserBiasRecord, build_bias_report, user_bias_record
from bias.popularity import (
    PopularityIndex,
    bin_table,
    compute_popularity,
    history_distribution,
    popularity_histogram,
    recommendation_distribution,
)
from data.dataset import (
    Dataset,
    FilterReport,
    SplitPlan,
    apply_filters,
    dataset_statistics,
    make_split_plan,
    parse_interactions,
    parse_users,
    sample_items,
)
from recommenders.base import Recommender, create_recommender
from utils import __version__
from utils.config import ExperimentConfig, MetricConfig
from utils.errors import AuditError, ConfigError, DataError, ExperimentError
from utils.helpers import config_hash, save_json_report, write_bins, write_per_user, write_report
from utils.logger import get_logger

logger = get_logger(__name__)

NO_RECOMMENDABLE_ITEMS = "no recommendable items"


@dataclass
class UserFailure:
    """A test user that produced no record for one algorithm."""
    user_id: str
    algorithm: str
    fold: int
    reason: str


@dataclass
class FoldResult:
    fold: int
    records: List[PerUserBiasRecord]
    failures: List[UserFailure]
    n_test_users: int
    max_failure_rate: float
    training_seconds: Dict[str, float] = field(default_factory=dict)

    def failure_rate(self, algorithm: str) -> float:
        if self.n_test_users == 0:
            return 0.0
        failed = sum(1 for f in self.failures if f.algorithm == algorithm)
        return failed / self.n_test_users

    @property
    def invalid_algorithms(self) -> List[str]:
        algorithms = dict.fromkeys(f.algorithm for f in self.failures)
        return [a for a in algorithms if self.failure_rate(a) > self.max_failure_rate]

    @property
    def is_valid(self) -> bool:
        return not self.invalid_algorithms

    def diagnostics(self) -> Dict[str, Any]:
        algorithms = dict.fromkeys([r.algorithm for r in self.records] + [f.algorithm for f in self.failures])
        return {
            "fold": self.fold,
            "n_test_users": self.n_test_users,
            "failure_rates": {a: self.failure_rate(a) for a in algorithms},
            "invalid_algorithms": self.invalid_algorithms,
            "training_seconds": dict(self.training_seconds),
            "failures": [asdict(f) for f in self.failures[:20]],
        }


@dataclass
class ExperimentResult:
    """Report, pooled per-user dump and provenance of one audit run."""
    config: ExperimentConfig
    report: BiasReport
    records: List[PerUserBiasRecord]
    provenance: Dict[str, Any]
    failures: List[UserFailure] = field(default_factory=list)
    filter_report: Optional[FilterReport] = None
    dataset_stats: Dict[str, Dict[str, float]] = field(default_factory=dict)
    bins: List[Dict[str, float]] = field(default_factory=list)
    histogram: List[Dict[str, float]] = field(default_factory=list)
    malformed_lines: int = 0


class AuditState(TypedDict):
    """State object that flows through the workflow."""
    # Input
    config: ExperimentConfig
    interactions: Optional[pd.DataFrame]
    users: Optional[pd.DataFrame]

    # Stage outputs
    dataset: Optional[Dataset]
    filter_report: Optional[FilterReport]
    popularity: Optional[PopularityIndex]
    split_plan: Optional[SplitPlan]
    records: List[PerUserBiasRecord]
    failures: List[UserFailure]
    fold_diagnostics: List[Dict[str, Any]]
    report: Optional[BiasReport]

    # Metadata
    timings: Dict[str, float]
    exception: Optional[Exception]
    error: str
    status: str


def train_model(
    variant: str,
    hyperparameters,
    dataset: Dataset,
    train_users: Sequence[str],
    show_progress: bool = False,
) -> Recommender:
    """
    Train one variant on the rows of the given training users only.

    Args:
        variant: Algorithm name
        hyperparameters: Full Hyperparameters config or the variant's block
        dataset: Filtered dataset (the catalog is every dataset item)
        train_users: Ids of the fold's training users
        show_progress: Show tqdm bars for the iterative trainers

    Returns:
        Trained recommender
    """
    model = create_recommender(variant, hyperparameters)
    if hasattr(model, "show_progress"):
        model.show_progress = show_progress
    rows = np.sort(np.array([dataset.user_position(u) for u in train_users], dtype=np.int64))
    return model.fit(dataset.binary_matrix[rows], dataset.items, play_counts=dataset.count_matrix[rows])


def evaluate_user(
    model: Recommender,
    user_id: str,
    fold: int,
    dataset: Dataset,
    plan: SplitPlan,
    index: PopularityIndex,
    metrics: MetricConfig,
) -> PerUserBiasRecord:
    """
    Fold in one held-out user and compute their bias record.

    The model sees the user's input items only; the list holds
    max(ndcg_k, |history|) items and never contains an input item.

    Raises:
        DataError: If the catalog minus the input cannot fill the list
    """
    holdout = plan.holdout(fold, user_id)
    if metrics.history_scope == "fold_in":
        history = history_distribution(user_id, dataset, index, restrict_to=holdout.input_items)
    else:
        history = history_distribution(user_id, dataset, index)

    n = max(metrics.ndcg_k, len(history))
    available = model.n_items - len(holdout.input_items)
    if available < n:
        raise DataError(f"{NO_RECOMMENDABLE_ITEMS} (list of {n} needs more than {available} items)")

    representation = model.fold_in(holdout.input_items)
    ranked = model.recommend(representation, n, exclude=holdout.input_items, user_id=user_id)
    recommended = recommendation_distribution(ranked, len(history), index)
    return user_bias_record(
        user_id=user_id,
        gender=dataset.user_record(user_id).gender,
        algorithm=model.VARIANT,
        fold=fold,
        history=history,
        recommended=recommended,
        bins=index.bins,
        ranked_items=ranked.items,
        holdout_items=holdout.holdout_items,
        epsilon=metrics.epsilon,
        k=metrics.ndcg_k,
    )


def run_fold(
    fold_index: int,
    dataset: Dataset,
    split_plan: SplitPlan,
    config: ExperimentConfig,
    popularity: PopularityIndex,
) -> FoldResult:
    """
    Train every algorithm on the fold's training users and evaluate its test users.

    Per-user problems are recorded as failures and never abort the fold.
    Records come back ordered by algorithm roster, then user id.

    Args:
        fold_index: Fold number
        dataset: Filtered dataset
        split_plan: Split plan built on the dataset
        config: Experiment configuration
        popularity: Popularity index with decile bins

    Returns:
        FoldResult (check ``is_valid``)
    """
    assignment = split_plan.folds[fold_index]
    test_users = [str(u) for u in assignment.test]
    runtime = config.runtime
    result = FoldResult(
        fold=fold_index,
        records=[],
        failures=[],
        n_test_users=len(test_users),
        max_failure_rate=runtime.max_failure_rate,
    )

    for variant in config.algorithms:
        started = time.perf_counter()
        try:
            model = train_model(variant, config.hyperparameters, dataset, assignment.train,
                                show_progress=runtime.show_progress)
        except (AuditError, ValueError, np.linalg.LinAlgError) as e:
            logger.error(f"Fold {fold_index}: training {variant} failed: {e}")
            result.failures.extend(UserFailure(u, variant, fold_index, f"training failed: {e}") for u in test_users)
            continue
        result.training_seconds[variant] = time.perf_counter() - started
        logger.info(f"Fold {fold_index}: trained {variant} in {result.training_seconds[variant]:.2f}s")

        def _evaluate(user_id: str) -> Union[PerUserBiasRecord, UserFailure]:
            try:
                return evaluate_user(model, user_id, fold_index, dataset, split_plan, popularity, config.metrics)
            except Exception as e:
                logger.warning(f"Fold {fold_index} {variant}: skipped user {user_id}: {e}")
                return UserFailure(user_id, variant, fold_index, str(e))

        progress = dict(total=len(test_users), desc=f"Fold {fold_index} {variant}",
                        disable=not runtime.show_progress)
        if runtime.workers > 1:
            with ThreadPoolExecutor(max_workers=runtime.workers) as pool:
                # map keeps input order, so the dump does not depend on scheduling
                outcomes = list(tqdm(pool.map(_evaluate, test_users), **progress))
        else:
            outcomes = [_evaluate(u) for u in tqdm(test_users, **progress)]

        for outcome in outcomes:
            if isinstance(outcome, UserFailure):
                result.failures.append(outcome)
            else:
                result.records.append(outcome)

    return result


class AuditWorkflow:
    """LangGraph workflow for the audit pipeline."""

    def __init__(self, config: ExperimentConfig):
        """
        Initialize workflow with an experiment configuration.

        Args:
            config: Validated experiment configuration
        """
        self.config = config
        self.graph = self._build_graph()

    def _build_graph(self):
        """
        Build the LangGraph workflow.

        Flow: load -> filter -> sample -> popularity -> split -> folds -> aggregate -> end
        """
        workflow = StateGraph(AuditState)

        workflow.add_node("load", self._load_node)
        workflow.add_node("filter", self._filter_node)
        workflow.add_node("sample", self._sample_node)
        workflow.add_node("popularity", self._popularity_node)
        workflow.add_node("split", self._split_node)
        workflow.add_node("folds", self._folds_node)
        workflow.add_node("aggregate", self._aggregate_node)

        workflow.set_entry_point("load")
        workflow.add_edge("load", "filter")
        workflow.add_edge("filter", "sample")
        workflow.add_edge("sample", "popularity")
        workflow.add_edge("popularity", "split")
        workflow.add_edge("split", "folds")
        workflow.add_edge("folds", "aggregate")
        workflow.add_edge("aggregate", END)

        return workflow.compile()

    @staticmethod
    def _skip(state: AuditState, stage: str) -> bool:
        if state["status"].endswith(("_failed", "_skipped")):
            print(f"✗ Skipping {stage} due to earlier failure")
            state["status"] = f"{stage}_skipped"
            return True
        return False

    @staticmethod
    def _fail(state: AuditState, stage: str, error: Exception) -> AuditState:
        print(f"✗ {stage.capitalize()} failed: {error}")
        logger.error(f"Stage {stage} failed: {error}")
        state["exception"] = error
        state["error"] = str(error)
        state["status"] = f"{stage}_failed"
        return state

    def _timed(self, state: AuditState, stage: str, started: float) -> None:
        state["timings"][stage] = time.perf_counter() - started

    def _load_node(self, state: AuditState) -> AuditState:
        """Node: Parse the interaction and user files (unless frames were passed in)."""
        print("\n[Stage: Load] Reading interaction and user files...")
        started = time.perf_counter()
        try:
            data = self.config.data
            if state["interactions"] is None:
                state["interactions"] = parse_interactions(data.interactions_path)
                if state["users"] is None and data.users_path:
                    state["users"] = parse_users(data.users_path)
            n_users = 0 if state["users"] is None else len(state["users"])
            print(f"✓ Loaded {len(state['interactions'])} interaction records, {n_users} user records")
            state["status"] = "load_complete"
        except Exception as e:
            return self._fail(state, "load", e)
        self._timed(state, "load", started)
        return state

    def _filter_node(self, state: AuditState) -> AuditState:
        """Node: Apply the filter cascade and binarize."""
        print("\n[Stage: Filter] Applying filter cascade...")
        if self._skip(state, "filter"):
            return state
        started = time.perf_counter()
        try:
            dataset, report = apply_filters(state["interactions"], state["users"], self.config.filters)
            print(f"✓ {dataset.n_users} users, {dataset.n_items} items, {len(dataset)} interactions")
            state["dataset"] = dataset
            state["filter_report"] = report
            state["status"] = "filter_complete"
        except Exception as e:
            return self._fail(state, "filter", e)
        self._timed(state, "filter", started)
        return state

    def _sample_node(self, state: AuditState) -> AuditState:
        """Node: Sample the item catalog (no-op without a sample size)."""
        print("\n[Stage: Sample] Sampling items...")
        if self._skip(state, "sample"):
            return state
        sampling = self.config.sampling
        if sampling.n_items is None:
            print("✓ No sample size configured; keeping the full catalog")
            state["status"] = "sample_complete"
            return state
        try:
            state["dataset"] = sample_items(
                state["dataset"], sampling.n_items, sampling.seed,
                min_items_per_user=self.config.filters.min_items_per_user,
                report=state["filter_report"],
            )
            print(f"✓ {state['dataset'].n_items} items, {state['dataset'].n_users} users")
            state["status"] = "sample_complete"
        except Exception as e:
            return self._fail(state, "sample", e)
        return state

    def _popularity_node(self, state: AuditState) -> AuditState:
        """Node: Item popularity and decile bins."""
        print("\n[Stage: Popularity] Computing item popularity and decile bins...")
        if self._skip(state, "popularity"):
            return state
        try:
            index = compute_popularity(state["dataset"])
            if index.bins is None:
                raise DataError(f"Decile binning needs at least 10 items, got {len(index)}")
            print(f"✓ Bin sizes (least to most popular): {index.bins.bin_sizes.tolist()}")
            state["popularity"] = index
            state["status"] = "popularity_complete"
        except Exception as e:
            return self._fail(state, "popularity", e)
        return state

    def _split_node(self, state: AuditState) -> AuditState:
        """Node: User-based round-robin split with per-user holdouts."""
        print("\n[Stage: Split] Building cross-validation folds...")
        if self._skip(state, "split"):
            return state
        try:
            split = self.config.split
            plan = make_split_plan(state["dataset"], split.ratios, split.folds, split.input_fraction, split.seed)
            for assignment in plan.folds:
                print(f"  - Fold {assignment.fold}: {len(assignment.train)} train / "
                      f"{len(assignment.validation)} validation / {len(assignment.test)} test users")
            state["split_plan"] = plan
            state["status"] = "split_complete"
        except Exception as e:
            return self._fail(state, "split", e)
        return state

    def _folds_node(self, state: AuditState) -> AuditState:
        """Node: Train, fold in and score every fold sequentially."""
        print("\n[Stage: Folds] Training and evaluating recommenders...")
        if self._skip(state, "folds"):
            return state
        started = time.perf_counter()
        try:
            for assignment in state["split_plan"].folds:
                result = run_fold(assignment.fold, state["dataset"], state["split_plan"], self.config,
                                  state["popularity"])
                state["records"].extend(result.records)
                state["failures"].extend(result.failures)
                state["fold_diagnostics"].append(result.diagnostics())
                print(f"✓ Fold {assignment.fold}: {len(result.records)} records, {len(result.failures)} skipped")
                if not result.is_valid:
                    raise ExperimentError(
                        f"Fold {assignment.fold} is invalid: failure rate above "
                        f"{self.config.runtime.max_failure_rate:.0%} for {', '.join(result.invalid_algorithms)}",
                        diagnostics={"folds": state["fold_diagnostics"]},
                    )
            state["status"] = "folds_complete"
        except Exception as e:
            return self._fail(state, "folds", e)
        self._timed(state, "folds", started)
        return state

    def _aggregate_node(self, state: AuditState) -> AuditState:
        """Node: Pool the per-user records and build the report."""
        print("\n[Stage: Aggregate] Pooling per-user records...")
        if self._skip(state, "aggregate"):
            return state
        try:
            order = {a: i for i, a in enumerate(self.config.algorithms)}
            state["records"].sort(key=lambda r: (order[r.algorithm], r.user_id, r.fold))
            state["report"] = build_bias_report(state["records"], self.config.algorithms)
            print(f"✓ Report built for {len(state['report'].algorithms)} algorithms")
            state["status"] = "aggregate_complete"
        except Exception as e:
            return self._fail(state, "aggregate", e)
        return state

    def run(self, interactions: Optional[pd.DataFrame] = None,
            users: Optional[pd.DataFrame] = None) -> AuditState:
        """
        Execute the workflow.

        Args:
            interactions: Already parsed interactions (read from the config paths if None)
            users: Already parsed users

        Returns:
            Final workflow state with all outputs
        """
        initial_state: AuditState = {
            "config": self.config,
            "interactions": interactions,
            "users": users,
            "dataset": None,
            "filter_report": None,
            "popularity": None,
            "split_plan": None,
            "records": [],
            "failures": [],
            "fold_diagnostics": [],
            "report": None,
            "timings": {},
            "exception": None,
            "error": "",
            "status": "initialized",
        }

        print("\n" + "=" * 60)
        print("STARTING AUDIT WORKFLOW")
        print("=" * 60)

        final_state = self.graph.invoke(initial_state)

        print("\n" + "=" * 60)
        print("WORKFLOW COMPLETE")
        print(f"Final Status: {final_state['status']}")
        print("=" * 60)

        return final_state


def _provenance(config: ExperimentConfig, state: AuditState, started_at: datetime, wall_clock: float) -> Dict[str, Any]:
    hyper = config.hyperparameters
    dataset = state["dataset"]
    return {
        "config_hash": config_hash(config.to_dict()),
        "config": config.to_dict(),
        "seeds": {
            "sampling": config.sampling.seed,
            "split": config.split.seed,
            "rand": hyper.rand.seed,
            "als": hyper.als.seed,
            "bpr": hyper.bpr.seed,
        },
        "library_version": __version__,
        "dependencies": {
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "pandas": pd.__version__,
            "scikit-learn": sklearn.__version__,
            "numba": numba.__version__,
        },
        "aggregation": "per-user records pooled across folds; median for bias metrics, mean for NDCG",
        "algorithms": list(config.algorithms),
        "hyperparameters": {v: asdict(hyper.for_variant(v)) for v in config.algorithms},
        "n_users": dataset.n_users,
        "n_items": dataset.n_items,
        "n_records": len(state["records"]),
        "n_skipped": len(state["failures"]),
        "folds": state["fold_diagnostics"],
        "timings_seconds": dict(state["timings"]),
        "started_at": started_at.isoformat(),
        "wall_clock_seconds": wall_clock,
    }


def run_experiment(
    config: ExperimentConfig,
    interactions: Optional[pd.DataFrame] = None,
    users: Optional[pd.DataFrame] = None,
) -> ExperimentResult:
    """
    Run all folds and assemble the pooled report.

    Args:
        config: Validated experiment configuration
        interactions: Optional pre-parsed interactions (otherwise read from config.data)
        users: Optional pre-parsed users

    Returns:
        ExperimentResult

    Raises:
        DataError / ConfigError: If a data stage rejected the input
        ExperimentError: If a fold is invalid or another stage failed
    """
    started_at = datetime.now(timezone.utc)
    started = time.perf_counter()
    state = AuditWorkflow(config).run(interactions, users)

    if state["status"] != "aggregate_complete":
        error = state.get("exception")
        if isinstance(error, (DataError, ConfigError)):
            raise error
        diagnostics = dict(getattr(error, "diagnostics", {}) or {})
        diagnostics.setdefault("folds", state["fold_diagnostics"])
        diagnostics["status"] = state["status"]
        raise ExperimentError(f"Workflow failed: {state.get('error') or 'unknown error'}", diagnostics) from error

    dataset = state["dataset"]
    return ExperimentResult(
        config=config,
        report=state["report"],
        records=state["records"],
        provenance=_provenance(config, state, started_at, time.perf_counter() - started),
        failures=state["failures"],
        filter_report=state["filter_report"],
        dataset_stats=dataset_statistics(dataset),
        bins=bin_table(state["popularity"]),
        histogram=popularity_histogram(state["popularity"]),
        malformed_lines=int(state["interactions"].attrs.get("malformed_lines", 0)),
    )


def filter_report_dict(report: FilterReport, malformed_lines: int = 0) -> Dict[str, Any]:
    return {
        "stages": report.to_dict(),
        "fixpoint_rounds": report.fixpoint_rounds,
        "malformed_lines": int(malformed_lines),
    }


def write_outputs(result: ExperimentResult, directory: Optional[str] = None,
                  formats: Optional[Sequence[str]] = None) -> Dict[str, str]:
    """
    Write the report, the per-user dump and the side files.

    Args:
        result: Experiment result
        directory: Output directory (default: the configured one)
        formats: Report formats (default: the configured ones)

    Returns:
        Paths of the written files
    """
    directory = directory or result.config.output.directory
    formats = formats or result.config.output.formats
    Path(directory).mkdir(parents=True, exist_ok=True)

    print("\n[Saving Outputs]")
    paths = write_report(result.report, directory, formats)
    paths["per_user"] = write_per_user(result.records, str(Path(directory) / "per_user.tsv"))
    paths["provenance"] = str(Path(directory) / "provenance.json")
    save_json_report(result.provenance, paths["provenance"])
    paths["bins"] = write_bins(result.bins, str(Path(directory) / "bins.tsv"))
    paths["popularity_histogram"] = write_bins(result.histogram, str(Path(directory) / "popularity_histogram.tsv"))
    paths["dataset_stats"] = str(Path(directory) / "dataset_stats.json")
    save_json_report(result.dataset_stats, paths["dataset_stats"])
    if result.filter_report is not None:
        paths["filter_report"] = str(Path(directory) / "filter_report.json")
        save_json_report(filter_report_dict(result.filter_report, result.malformed_lines), paths["filter_report"])

    for name, path in paths.items():
        print(f"✓ Saved {name} to: {path}")
    return paths
