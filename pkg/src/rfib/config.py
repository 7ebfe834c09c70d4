"""JSON run configuration with strict key checking.

Top-level sections: ``data``, ``model``, ``train``, and optionally ``sweep``
and ``baseline``.  Unknown keys at any level are rejected by name.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .datasets import Dataset, SyntheticSpec, load_csv, missing_subgroup_split
from .errors import ConfigError, InvalidSpec
from .loss import RfibConfig
from .metrics import BaselineSummary
from .trainer import SweepGrid, TrainSettings, linear_alphas, linear_betas


def _reject_unknown(section: str, data, allowed):
    if not isinstance(data, dict):
        raise ConfigError(f"section '{section}' must be a JSON object")
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in '{section}': {', '.join(unknown)}")


def _build(cls, section: str, data: dict):
    _reject_unknown(section, data, [f.name for f in fields(cls)])
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"section '{section}': {exc}") from None


@dataclass
class DataSection:
    synthetic: SyntheticSpec | None = None
    held_out_cell: tuple[int, int] = (1, 1)
    test_per_cell: int = 250
    train_csv: Path | None = None
    test_csv: Path | None = None

    def load(self) -> tuple[Dataset, Dataset]:
        if self.synthetic is not None:
            return missing_subgroup_split(self.synthetic, self.held_out_cell, self.test_per_cell)
        return load_csv(self.train_csv), load_csv(self.test_csv)


DATA_KEYS = ("synthetic", "held_out_cell", "test_per_cell", "train_csv", "test_csv")


def parse_data_section(data: dict, base_dir: Path = Path(".")) -> DataSection:
    _reject_unknown("data", data, DATA_KEYS)
    has_csv = "train_csv" in data or "test_csv" in data
    if has_csv:
        if "synthetic" in data:
            raise ConfigError("data: give either 'synthetic' or 'train_csv'/'test_csv', not both")
        if not ("train_csv" in data and "test_csv" in data):
            raise ConfigError("data: both 'train_csv' and 'test_csv' are required")
        return DataSection(train_csv=base_dir / data["train_csv"], test_csv=base_dir / data["test_csv"])
    synthetic = data.get("synthetic", {})
    if not isinstance(synthetic, dict):
        raise InvalidSpec("data.synthetic must be a JSON object")
    spec = SyntheticSpec.from_dict(synthetic)
    cell = data.get("held_out_cell", [1, 1])
    if not (isinstance(cell, list) and len(cell) == 2 and all(v in (0, 1) for v in cell)):
        raise InvalidSpec(f"held_out_cell must be a pair of 0/1 values, got {cell!r}")
    test_per_cell = data.get("test_per_cell", 250)
    if not isinstance(test_per_cell, int) or test_per_cell < 1:
        raise InvalidSpec(f"test_per_cell must be a positive integer, got {test_per_cell!r}")
    return DataSection(synthetic=spec, held_out_cell=tuple(cell), test_per_cell=test_per_cell)


@dataclass
class SweepSection:
    grid: SweepGrid
    include_baseline: bool = True


def parse_sweep_section(data: dict) -> SweepSection:
    _reject_unknown("sweep", data, ("alphas", "beta1s", "beta2s", "include_baseline"))
    grid = SweepGrid(
        alphas=data.get("alphas", linear_alphas()),
        beta1s=data.get("beta1s", linear_betas()),
        beta2s=data.get("beta2s", linear_betas()),
    )
    return SweepSection(grid=grid, include_baseline=bool(data.get("include_baseline", True)))


@dataclass
class RunConfig:
    data: DataSection = field(default_factory=DataSection)
    model: RfibConfig = field(default_factory=RfibConfig)
    train: TrainSettings = field(default_factory=TrainSettings)
    sweep: SweepSection | None = None
    baseline: BaselineSummary | None = None


def parse_config(doc: dict, base_dir: Path = Path(".")) -> RunConfig:
    _reject_unknown("config", doc, ("data", "model", "train", "sweep", "baseline"))
    cfg = RunConfig()
    cfg.data = parse_data_section(doc.get("data", {}), base_dir)
    cfg.model = _build(RfibConfig, "model", doc.get("model", {}))
    cfg.train = _build(TrainSettings, "train", doc.get("train", {}))
    if "sweep" in doc:
        cfg.sweep = parse_sweep_section(doc["sweep"])
    if "baseline" in doc:
        cfg.baseline = _build(BaselineSummary, "baseline", doc["baseline"])
    return cfg


def load_json(path) -> dict:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return doc


def load_config(path) -> RunConfig:
    path = Path(path)
    return parse_config(load_json(path), path.parent)
