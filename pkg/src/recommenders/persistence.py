"""
Model Persistence

A trained model is stored as a versioned ``.npz`` container (variant tag,
seed, hyperparameters, catalog, parameter arrays) next to a human-readable
``.json`` metadata sidecar.
"""

import json
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, Tuple

import numpy as np

from recommenders.base import Recommender, create_recommender
from utils.config import ALSConfig, BPRConfig, ItemKNNConfig, PopConfig, RandConfig, SLIMConfig
from utils.errors import ModelError
from utils.logger import get_logger

logger = get_logger(__name__)

FORMAT_VERSION = 1
PARAM_PREFIX = "param__"

_CONFIG_TYPES = {
    "RAND": RandConfig,
    "POP": PopConfig,
    "ItemKNN": ItemKNNConfig,
    "SLIM": SLIMConfig,
    "ALS": ALSConfig,
    "BPR": BPRConfig,
}


def _paths(path: str) -> Tuple[Path, Path]:
    base = Path(path)
    if base.suffix == ".npz":
        base = base.with_suffix("")
    return base.with_suffix(".npz"), base.with_suffix(".json")


def save_model(model: Recommender, path: str) -> Dict[str, str]:
    """
    Save a trained model.

    Args:
        model: Trained recommender
        path: Target path (``.npz`` suffix optional)

    Returns:
        Paths of the container and the sidecar
    """
    if not model.is_fitted:
        raise ModelError("Cannot save an untrained model")
    container, sidecar = _paths(path)
    container.parent.mkdir(parents=True, exist_ok=True)

    hyperparameters = model.hyperparameters_dict()
    arrays = {PARAM_PREFIX + name: np.asarray(value) for name, value in model.get_state().items()}
    np.savez(
        container,
        format_version=np.array(FORMAT_VERSION),
        variant=np.array(model.VARIANT),
        seed=np.array(-1 if model.seed is None else int(model.seed)),
        hyperparameters=np.array(json.dumps(hyperparameters, sort_keys=True)),
        item_ids=np.asarray(model.item_ids, dtype=str),
        **arrays,
    )

    metadata = {
        "format_version": FORMAT_VERSION,
        "variant": model.VARIANT,
        "seed": model.seed,
        "hyperparameters": hyperparameters,
        "n_items": model.n_items,
        "parameters": {name[len(PARAM_PREFIX):]: list(np.shape(value)) for name, value in arrays.items()},
        "saved_at": datetime.now(timezone.utc).isoformat(),
    }
    with open(sidecar, 'w', encoding='utf-8') as f:
        json.dump(metadata, f, indent=2)

    logger.info(f"✓ Saved {model.VARIANT} model to: {container}")
    return {"container": str(container), "metadata": str(sidecar)}


def load_model(path: str) -> Recommender:
    """
    Load a model saved by save_model.

    Raises:
        ModelError: On an unknown format version or variant
    """
    container, _ = _paths(path)
    with np.load(container, allow_pickle=False) as data:
        version = int(data["format_version"])
        if version != FORMAT_VERSION:
            raise ModelError(f"Unsupported model format version {version} (expected {FORMAT_VERSION})")
        variant = str(data["variant"])
        if variant not in _CONFIG_TYPES:
            raise ModelError(f"Unknown model variant in {container}: {variant}")
        seed = int(data["seed"])
        hyperparameters = _CONFIG_TYPES[variant](**json.loads(str(data["hyperparameters"])))
        item_ids = data["item_ids"].astype(object)
        state = {name[len(PARAM_PREFIX):]: data[name] for name in data.files if name.startswith(PARAM_PREFIX)}

    model = create_recommender(variant, hyperparameters, seed=None if seed < 0 else seed)
    model._set_catalog(item_ids)
    model.set_state(state)
    logger.info(f"✓ Loaded {variant} model from: {container}")
    return model
