"""Filter recommendation by pairwise aesthetic comparison."""

import json
import os
from typing import Iterable, Mapping

from ._core import (
    FiltrankError,
    Model,
    apply_filter,
    category_names,
    filter_names,
    load_image,
    pair_design,
    paircomp_loss,
    random_baseline,
    save_image,
    test_chart,
)
from . import _core

__all__ = [
    "FiltrankError",
    "Model",
    "apply_filter",
    "category_names",
    "filter_names",
    "ground_truth",
    "load_image",
    "pair_design",
    "paircomp_loss",
    "random_baseline",
    "save_image",
    "score_labels",
    "test_chart",
    "train",
]


def score_labels(labels: Iterable[Mapping]) -> dict[str, dict[str, int]]:
    """Per-reference filter scores in [-3, 3] from label records
    ({"ref_id", "a", "b", "verdict", ...}, as in labels.jsonl)."""
    return _core._score_labels(json.dumps(list(labels)))


def ground_truth(labels: Iterable[Mapping]) -> dict[str, list[str]]:
    """Filters scoring +3 for each reference."""
    return _core._ground_truth(json.dumps(list(labels)))


def train(data_dir: str | os.PathLike, config: Mapping | str, out: str | os.PathLike) -> list[dict]:
    """Trains on a CLI data directory and writes the checkpoint to `out`.

    `config` is either key = value text or a mapping of the same keys.
    Returns per-epoch metrics.
    """
    if not isinstance(config, str):
        config = "\n".join(f"{k} = {_fmt(v)}" for k, v in config.items())
    return _core._train(os.fspath(data_dir), config, os.fspath(out))


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)
