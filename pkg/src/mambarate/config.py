"""JSON run configuration for ``mambarate train``.

Example::

    {
      "seed": 7,
      "data": {"embedding_dir": "emb/", "manifest": "ratings.csv",
               "split": [0.9, 0.1, 0.0], "target_mode": "median"},
      "model": {"num_blocks": 5},
      "train": {"max_epochs": 60},
      "rbf": {},
      "output": "runs/t16"
    }

Relative paths resolve against the config file's directory. Unknown keys
are rejected at every level. Sub-seeds (split, init, noise, shuffle) derive
from the top-level ``seed`` unless ``data.seed`` / ``train.seed`` pin them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any

from .errors import ConfigError
from .model import ModelConfig
from .rbf import RbfConfig
from .train import TrainConfig, sub_seeds

_TOP_KEYS = {"seed", "data", "model", "train", "rbf", "output"}
_DATA_KEYS = {"embedding_dir", "manifest", "split", "seed", "target_mode"}


@dataclass
class DataConfig:
    embedding_dir: Path
    manifest: Path
    split: tuple[float, float, float] = (0.9, 0.1, 0.0)
    seed: int = 0
    target_mode: str = "mean"


@dataclass
class RunConfig:
    seed: int
    data: DataConfig
    model: dict[str, Any]  # ModelConfig fields; input_dim may be inferred from data
    train: TrainConfig
    rbf: RbfConfig
    output: Path

    def model_config(self, input_dim: int | None = None) -> ModelConfig:
        kwargs = dict(self.model)
        if "input_dim" not in kwargs and input_dim is not None:
            kwargs["input_dim"] = input_dim
        try:
            return ModelConfig(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"model: {exc}") from None


def _check_keys(section: str, d: Any, allowed: set[str]) -> dict:
    if not isinstance(d, dict):
        raise ConfigError(f"{section}: expected a JSON object")
    unknown = sorted(set(d) - allowed)
    if unknown:
        raise ConfigError(f"{section}: unknown key(s) {', '.join(unknown)}")
    return d


def _names(cls) -> set[str]:
    return {f.name for f in fields(cls)}


def parse_run_config(raw: dict, base_dir: Path = Path(".")) -> RunConfig:
    raw = _check_keys("config", raw, _TOP_KEYS)
    for required in ("data", "output"):
        if required not in raw:
            raise ConfigError(f"config: missing required section {required!r}")
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed must be a nonnegative integer")
    derived = sub_seeds(seed)

    d = _check_keys("data", raw["data"], _DATA_KEYS)
    for required in ("embedding_dir", "manifest"):
        if required not in d:
            raise ConfigError(f"data: missing required key {required!r}")
    try:
        split = tuple(float(f) for f in d.get("split", (0.9, 0.1, 0.0)))
    except (TypeError, ValueError):
        raise ConfigError("data.split must be a list of numbers") from None
    if len(split) == 2:
        split = (*split, 0.0)
    if len(split) != 3:
        raise ConfigError("data.split must have two or three fractions")

    model = dict(_check_keys("model", raw.get("model", {}), _names(ModelConfig)))

    t = dict(_check_keys("train", raw.get("train", {}), _names(TrainConfig)))
    mode = d.get("target_mode", t.get("target_mode", "mean"))
    if "target_mode" in t and t["target_mode"] != mode:
        raise ConfigError("data.target_mode and train.target_mode disagree")
    t["target_mode"] = mode
    t.setdefault("seed", seed)
    try:
        train = TrainConfig(**t)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"train: {exc}") from None

    r = dict(_check_keys("rbf", raw.get("rbf", {}), _names(RbfConfig)))
    r.setdefault("noise_scale", train.noise_scale)
    r.setdefault("num_centers", model.get("output_dim", 16))
    try:
        rbf = RbfConfig(**r)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"rbf: {exc}") from None
    if rbf.num_centers != model.get("output_dim", 16):
        raise ConfigError("rbf.num_centers must equal model.output_dim")

    if not isinstance(raw["output"], str):
        raise ConfigError("output must be a directory path string")

    data = DataConfig(
        embedding_dir=base_dir / d["embedding_dir"],
        manifest=base_dir / d["manifest"],
        split=split,
        seed=int(d.get("seed", derived["split"])),
        target_mode=mode,
    )
    return RunConfig(seed, data, model, train, rbf, base_dir / raw["output"])


def load_run_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return parse_run_config(raw, path.parent)
