"""
Experiment Configuration

Loads the sectioned JSON configuration into frozen dataclasses. Every key has
a default; keys that no dataclass declares are rejected.
"""

import json
from dataclasses import dataclass, field, fields, asdict, replace
from typing import Any, Dict, List, Optional, Tuple

from utils.errors import ConfigError

VARIANTS = ("RAND", "POP", "ItemKNN", "SLIM", "ALS", "BPR")


@dataclass(frozen=True)
class DataConfig:
    interactions_path: str = "data/interactions.tsv"
    users_path: str = "data/users.tsv"


@dataclass(frozen=True)
class FilterConfig:
    min_play_count: int = 2
    min_users_per_item: int = 5
    min_items_per_user: int = 5
    time_window_days: Optional[float] = None
    reference_time: Optional[float] = None
    iterate_to_fixpoint: bool = False


@dataclass(frozen=True)
class SamplingConfig:
    n_items: Optional[int] = None
    seed: int = 42


@dataclass(frozen=True)
class SplitConfig:
    ratios: Tuple[float, float, float] = (0.6, 0.2, 0.2)
    folds: int = 5
    input_fraction: float = 0.8
    seed: int = 42


@dataclass(frozen=True)
class MetricConfig:
    epsilon: float = 1e-10
    history_scope: str = "full"
    ndcg_k: int = 10


@dataclass(frozen=True)
class RuntimeConfig:
    workers: int = 1
    max_failure_rate: float = 0.05
    show_progress: bool = False


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "audit_output"
    formats: Tuple[str, ...] = ("tsv", "json")


@dataclass(frozen=True)
class RandConfig:
    seed: int = 42


@dataclass(frozen=True)
class PopConfig:
    exclude_consumed: bool = True


@dataclass(frozen=True)
class ItemKNNConfig:
    neighbors: int = 100
    shrinkage: float = 0.0


@dataclass(frozen=True)
class SLIMConfig:
    l1: float = 1e-3
    l2: float = 1e-3
    max_sweeps: int = 50
    tolerance: float = 1e-4
    neighbors: int = 100


@dataclass(frozen=True)
class ALSConfig:
    factors: int = 64
    regularization: float = 0.01
    alpha: float = 40.0
    iterations: int = 15
    seed: int = 42


@dataclass(frozen=True)
class BPRConfig:
    factors: int = 64
    learning_rate: float = 0.05
    regularization: float = 0.0025
    epochs: int = 30
    seed: int = 42
    parallel: bool = False
    validation_triplets: int = 2000


@dataclass(frozen=True)
class Hyperparameters:
    rand: RandConfig = field(default_factory=RandConfig)
    pop: PopConfig = field(default_factory=PopConfig)
    itemknn: ItemKNNConfig = field(default_factory=ItemKNNConfig)
    slim: SLIMConfig = field(default_factory=SLIMConfig)
    als: ALSConfig = field(default_factory=ALSConfig)
    bpr: BPRConfig = field(default_factory=BPRConfig)

    def for_variant(self, variant: str):
        """Return the hyperparameter block of one algorithm variant."""
        return getattr(self, variant.lower())


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    filters: FilterConfig = field(default_factory=FilterConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    metrics: MetricConfig = field(default_factory=MetricConfig)
    runtime: RuntimeConfig = field(default_factory=RuntimeConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    algorithms: Tuple[str, ...] = VARIANTS
    hyperparameters: Hyperparameters = field(default_factory=Hyperparameters)

    def to_dict(self) -> Dict[str, Any]:
        """Canonical nested dict (the form that is hashed for provenance)."""
        raw = asdict(self)
        hyper = raw.pop("hyperparameters")
        raw.update(hyper)
        return json.loads(json.dumps(raw))

    def with_overrides(self, seed: Optional[int] = None, output_dir: Optional[str] = None,
                       workers: Optional[int] = None) -> "ExperimentConfig":
        """Apply CLI overrides; --seed reseeds every seeded stage."""
        config = self
        if seed is not None:
            hyper = config.hyperparameters
            config = replace(
                config,
                sampling=replace(config.sampling, seed=seed),
                split=replace(config.split, seed=seed),
                hyperparameters=replace(
                    hyper,
                    rand=replace(hyper.rand, seed=seed),
                    als=replace(hyper.als, seed=seed),
                    bpr=replace(hyper.bpr, seed=seed),
                ),
            )
        if output_dir is not None:
            config = replace(config, output=replace(config.output, directory=output_dir))
        if workers is not None:
            config = replace(config, runtime=replace(config.runtime, workers=workers))
        validate_config(config)
        return config


_SECTIONS = {
    "data": DataConfig,
    "filters": FilterConfig,
    "sampling": SamplingConfig,
    "split": SplitConfig,
    "metrics": MetricConfig,
    "runtime": RuntimeConfig,
    "output": OutputConfig,
}

_ALGORITHM_SECTIONS = {f.name: f.default_factory for f in fields(Hyperparameters)}


def _build_section(name: str, cls, values: Any):
    if not isinstance(values, dict):
        raise ConfigError(f"Section '{name}' must be an object, got {type(values).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"Unknown key(s) in section '{name}': {', '.join(unknown)}")
    kwargs = {}
    for key, value in values.items():
        # JSON has no tuples
        kwargs[key] = tuple(value) if isinstance(value, list) else value
    return cls(**kwargs)


def config_from_dict(raw: Dict[str, Any]) -> ExperimentConfig:
    """
    Build an ExperimentConfig from the parsed JSON object.

    Args:
        raw: Dictionary with optional sections; missing keys take defaults

    Returns:
        Validated configuration

    Raises:
        ConfigError: On unknown sections/keys or invalid values
    """
    unknown = sorted(set(raw) - set(_SECTIONS) - set(_ALGORITHM_SECTIONS) - {"algorithms"})
    if unknown:
        raise ConfigError(f"Unknown configuration section(s): {', '.join(unknown)}")

    kwargs = {name: _build_section(name, cls, raw[name])
              for name, cls in _SECTIONS.items() if name in raw}
    hyper = {name: _build_section(name, factory, raw[name])
             for name, factory in _ALGORITHM_SECTIONS.items() if name in raw}
    if "algorithms" in raw:
        kwargs["algorithms"] = tuple(raw["algorithms"])

    config = ExperimentConfig(hyperparameters=Hyperparameters(**hyper), **kwargs)
    validate_config(config)
    return config


def load_config(config_path: str) -> ExperimentConfig:
    """
    Load configuration from a JSON file.

    Args:
        config_path: Path to JSON configuration file

    Returns:
        Validated configuration
    """
    try:
        with open(config_path, 'r', encoding='utf-8') as f:
            raw = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"Configuration file {config_path} is not valid JSON: {e}")
    if not isinstance(raw, dict):
        raise ConfigError("Configuration root must be a JSON object")
    return config_from_dict(raw)


def validate_config(config: ExperimentConfig) -> None:
    """Check value ranges that the dataclasses cannot express."""
    problems: List[str] = []

    if not config.algorithms:
        problems.append("algorithm roster is empty")
    for variant in config.algorithms:
        if variant not in VARIANTS:
            problems.append(f"unknown algorithm '{variant}' (supported: {', '.join(VARIANTS)})")

    f = config.filters
    if f.min_play_count < 0 or f.min_users_per_item < 1 or f.min_items_per_user < 1:
        problems.append("filter thresholds must be positive")
    if f.time_window_days is not None and f.time_window_days <= 0:
        problems.append("filters.time_window_days must be positive")

    s = config.split
    if len(s.ratios) != 3 or abs(sum(s.ratios) - 1.0) > 1e-9:
        problems.append("split.ratios must be three fractions summing to 1")
    if s.folds < 2:
        problems.append("split.folds must be at least 2")
    if not 0.0 < s.input_fraction < 1.0:
        problems.append("split.input_fraction must lie strictly between 0 and 1")

    m = config.metrics
    if m.epsilon <= 0:
        problems.append("metrics.epsilon must be positive")
    if m.history_scope not in ("full", "fold_in"):
        problems.append("metrics.history_scope must be 'full' or 'fold_in'")
    if m.ndcg_k < 1:
        problems.append("metrics.ndcg_k must be positive")

    if config.runtime.workers < 1:
        problems.append("runtime.workers must be at least 1")
    for fmt in config.output.formats:
        if fmt not in ("tsv", "json"):
            problems.append(f"unknown output format '{fmt}'")

    h = config.hyperparameters
    positive = {
        "itemknn.neighbors": h.itemknn.neighbors,
        "slim.max_sweeps": h.slim.max_sweeps,
        "slim.tolerance": h.slim.tolerance,
        "als.factors": h.als.factors,
        "als.iterations": h.als.iterations,
        "als.regularization": h.als.regularization,
        "bpr.factors": h.bpr.factors,
        "bpr.learning_rate": h.bpr.learning_rate,
        "bpr.epochs": h.bpr.epochs,
    }
    for key, value in positive.items():
        if value <= 0:
            problems.append(f"{key} must be positive")
    for key, value in {"itemknn.shrinkage": h.itemknn.shrinkage, "slim.l1": h.slim.l1,
                       "slim.l2": h.slim.l2, "slim.neighbors": h.slim.neighbors,
                       "als.alpha": h.als.alpha, "bpr.regularization": h.bpr.regularization}.items():
        if value < 0:
            problems.append(f"{key} must be non-negative")

    if problems:
        raise ConfigError("Invalid configuration: " + "; ".join(problems))
