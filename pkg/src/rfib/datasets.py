"""Synthetic biased data with a missing (y, s) cell, and CSV ingestion."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import InvalidSpec, NonBinaryLabel, ParseError
from .io import atomic_open

CELLS = ((0, 0), (0, 1), (1, 0), (1, 1))

TRAIN_STREAM = 0
TEST_STREAM = 1


def _default_signal(p=16):
    v = np.zeros(p)
    v[: min(8, p)] = 2.0 / math.sqrt(min(8, p))
    return v.tolist()


def _default_bias(p=16):
    v = np.zeros(p)
    k = min(8, p)
    v[p - k:] = 1.5 / math.sqrt(k)
    return v.tolist()


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    s: np.ndarray
    provenance: str = ""

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        self.s = np.asarray(self.s, dtype=np.int64)
        if self.X.ndim != 2 or not (len(self.X) == len(self.y) == len(self.s)):
            raise ValueError("X, y and s must have consistent lengths")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("X contains non-finite values")

    def __len__(self):
        return len(self.y)

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx], self.s[idx], self.provenance)

    def cell_counts(self) -> dict[tuple[int, int], int]:
        return {c: int(np.sum((self.y == c[0]) & (self.s == c[1]))) for c in CELLS}


@dataclass
class SyntheticSpec:
    """Gaussian clusters ``x = y*signal_shift + s*bias_shift + noise``.

    ``n_per_cell`` is ordered as cells (0,0), (0,1), (1,0), (1,1).
    """

    p: int = 16
    n_per_cell: list[int] = field(default_factory=lambda: [1000, 1000, 2000, 1000])
    signal_shift: list[float] | None = None
    bias_shift: list[float] | None = None
    noise_sd: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.signal_shift is None:
            self.signal_shift = _default_signal(self.p)
        if self.bias_shift is None:
            self.bias_shift = _default_bias(self.p)
        self.validate()

    def validate(self):
        if not isinstance(self.p, int) or self.p < 1:
            raise InvalidSpec(f"p must be a positive integer, got {self.p!r}")
        if len(self.n_per_cell) != 4 or any(
            not isinstance(n, int) or isinstance(n, bool) or n < 0 for n in self.n_per_cell
        ):
            raise InvalidSpec("n_per_cell must be four non-negative integers")
        if sum(n > 0 for n in self.n_per_cell) < 2:
            raise InvalidSpec("at least two cells must be nonempty")
        for name in ("signal_shift", "bias_shift"):
            if len(getattr(self, name)) != self.p:
                raise InvalidSpec(f"{name} must have length p={self.p}")
        if not (isinstance(self.noise_sd, (int, float)) and self.noise_sd > 0):
            raise InvalidSpec(f"noise_sd must be > 0, got {self.noise_sd!r}")
        if not isinstance(self.seed, int):
            raise InvalidSpec(f"seed must be an integer, got {self.seed!r}")

    @classmethod
    def from_dict(cls, data: dict) -> "SyntheticSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = sorted(set(data) - known)
        if unknown:
            raise InvalidSpec(f"unknown key(s) in synthetic spec: {', '.join(unknown)}")
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]


def _cell_rng(seed: int, stream: int, cell: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(stream, cell)))


def _draw(spec: SyntheticSpec, counts, stream: int, tag: str) -> Dataset:
    signal = np.asarray(spec.signal_shift, dtype=np.float64)
    bias = np.asarray(spec.bias_shift, dtype=np.float64)
    xs, ys, ss = [], [], []
    for i, ((y, s), n) in enumerate(zip(CELLS, counts)):
        if n == 0:
            continue
        noise = _cell_rng(spec.seed, stream, i).standard_normal((n, spec.p)) * spec.noise_sd
        xs.append(y * signal + s * bias + noise)
        ys.append(np.full(n, y))
        ss.append(np.full(n, s))
    return Dataset(np.vstack(xs), np.concatenate(ys), np.concatenate(ss), f"synthetic:{spec.digest()}:{tag}")


def generate(spec: SyntheticSpec) -> Dataset:
    spec.validate()
    return _draw(spec, spec.n_per_cell, TRAIN_STREAM, "train")


def missing_subgroup_split(spec: SyntheticSpec, held_out_cell=(1, 1), test_per_cell: int = 250):
    """Training set without ``held_out_cell`` and a balanced test set.

    Train and test come from disjoint random streams, so the test size has
    no effect on the training draws.
    """
    held_out_cell = tuple(int(v) for v in held_out_cell)
    if held_out_cell not in CELLS:
        raise InvalidSpec(f"held_out_cell must be one of {CELLS}, got {held_out_cell}")
    if test_per_cell < 1:
        raise InvalidSpec("test_per_cell must be >= 1")
    counts = list(spec.n_per_cell)
    counts[CELLS.index(held_out_cell)] = 0
    train_spec = replace(spec, n_per_cell=counts)
    train = _draw(train_spec, counts, TRAIN_STREAM, "train")
    test = _draw(spec, [test_per_cell] * 4, TEST_STREAM, "test")
    return train, test


def _parse_label(value: str, name: str, line: int) -> int:
    try:
        v = float(value)
    except ValueError:
        raise NonBinaryLabel(f"line {line}: {name}={value!r} is not a number", line=line) from None
    if v not in (0.0, 1.0):
        raise NonBinaryLabel(f"line {line}: {name}={value!r} is not 0 or 1", line=line)
    return int(v)


def load_csv(path) -> Dataset:
    """Read a CSV whose header names feature columns plus ``y`` and ``s``."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file", line=1) from None
        header = [h.strip() for h in header]
        if "y" not in header or "s" not in header:
            raise ParseError(f"{path}: header must contain 'y' and 's' columns", line=1)
        iy, is_ = header.index("y"), header.index("s")
        feat_idx = [i for i, h in enumerate(header) if h not in ("y", "s")]
        X, y, s = [], [], []
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"line {line}: expected {len(header)} fields, got {len(row)}", line=line)
            try:
                X.append([float(row[i]) for i in feat_idx])
            except ValueError as exc:
                raise ParseError(f"line {line}: {exc}", line=line) from None
            y.append(_parse_label(row[iy], "y", line))
            s.append(_parse_label(row[is_], "s", line))
    if not y:
        raise ParseError(f"{path}: no data rows", line=2)
    X = np.asarray(X, dtype=np.float64).reshape(len(y), len(feat_idx))
    if not np.all(np.isfinite(X)):
        raise ParseError(f"{path}: non-finite feature values")
    return Dataset(X, y, s, str(path))


def format_float(v: float) -> str:
    return format(float(v), ".17g")


def write_csv(data: Dataset, path, feature_names=None):
    names = feature_names or [f"x{i}" for i in range(data.p)]
    with atomic_open(path, newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*names, "y", "s"])
        for row, yi, si in zip(data.X, data.y, data.s):
            w.writerow([*(format_float(v) for v in row), int(yi), int(si)])
