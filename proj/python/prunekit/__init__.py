# SPDX-License-Identifier: Apache-2.0
"""Filter pruning and multi-tap recovery for small CNNs.

Configurations, specs, plans and reports are plain dicts; tensors are numpy
arrays. Long-running calls release the GIL.
"""
from __future__ import annotations

import json
import os
from typing import Any, Iterable, Sequence

import numpy as np

from . import _prunekit as _core
from ._prunekit import ConfigError, FormatError, PrunekitError, ShapeError, SpecError

__version__ = _core.__version__

__all__ = [
    "ConfigError",
    "FormatError",
    "PrunekitError",
    "ShapeError",
    "SpecError",
    "channel_distribution",
    "default_config",
    "flops",
    "layer_scores",
    "load_checkpoint",
    "mimic",
    "predict",
    "resolve_config",
    "run_pipeline",
    "run_stage",
    "synth",
    "train",
    "write_report",
    "zoo_names",
    "zoo_spec",
]

PathLike = str | os.PathLike


def _dump(config: dict[str, Any] | None) -> str:
    return json.dumps(config if config is not None else {})


def default_config() -> dict[str, Any]:
    return json.loads(_core.default_config())


def resolve_config(config: dict[str, Any] | None = None, overrides: Iterable[str] = ()) -> dict[str, Any]:
    """Merge a partial config over the defaults, apply key=value overrides, validate."""
    return json.loads(_core.resolve_config(_dump(config), list(overrides)))


def zoo_names() -> list[str]:
    return list(_core.zoo_names())


def zoo_spec(name: str, input_shape: Sequence[int], classes: int, width: int = 16) -> dict[str, Any]:
    return json.loads(_core.zoo_spec(name, list(input_shape), classes, width))


def flops(spec: dict[str, Any]) -> dict[str, Any]:
    return json.loads(_core.flops(json.dumps(spec)))


def mimic(name: str, teacher: np.ndarray, student: np.ndarray, eps: float = 1e-12) -> tuple[float, np.ndarray]:
    """Mimic loss (mse, lasso, kl, js) and its gradient with respect to the student."""
    return _core.mimic(name, teacher, student, eps)


def channel_distribution(x: np.ndarray) -> np.ndarray:
    return _core.channel_distribution(x)


def layer_scores(profile: dict[str, Any], reduction: str = "mean") -> list[dict[str, Any]]:
    return json.loads(_core.layer_scores(json.dumps(profile), reduction))


def synth(classes: int, shape: Sequence[int], train: int, test: int, seed: int = 0):
    """Seeded synthetic image classification data: (x_train, y_train, x_test, y_test)."""
    xtr, ytr, xte, yte = _core.synth(classes, list(shape), train, test, seed)
    return xtr, np.asarray(ytr, dtype=np.int64), xte, np.asarray(yte, dtype=np.int64)


def run_pipeline(config: dict[str, Any] | None = None) -> dict[str, Any]:
    """Train, learn importance, plan, prune, recover, finetune and evaluate."""
    return json.loads(_core.run_pipeline(_dump(config)))


def train(config: dict[str, Any] | None, out: PathLike, log: PathLike | None = None) -> dict[str, Any]:
    return json.loads(_core.train(_dump(config), os.fspath(out), None if log is None else os.fspath(log)))


def run_stage(stage: str, config: dict[str, Any] | None, input: PathLike, out: PathLike,
              log: PathLike | None = None) -> dict[str, Any]:
    """Run one pipeline stage on a checkpoint; returns the output checkpoint's metrics."""
    return json.loads(_core.run_stage(stage, _dump(config), os.fspath(input), os.fspath(out),
                                      None if log is None else os.fspath(log)))


def load_checkpoint(path: PathLike) -> dict[str, Any]:
    raw = _core.load_checkpoint(os.fspath(path))
    out = json.loads(raw["header"])
    out["params"] = dict(raw["params"])
    out["has_teacher"] = raw["has_teacher"]
    return out


def predict(path: PathLike, images: np.ndarray) -> np.ndarray:
    """Logits of the checkpoint's model for a float32 batch shaped [N, C, H, W]."""
    return _core.predict(os.fspath(path), images)


def write_report(inputs: Iterable[PathLike], out_dir: PathLike) -> dict[str, Any]:
    return json.loads(_core.write_report([os.fspath(p) for p in inputs], os.fspath(out_dir)))
