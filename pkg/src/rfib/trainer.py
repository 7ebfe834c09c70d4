"""Training loop, downstream classifier, evaluation and hyperparameter sweeps."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from itertools import product

import numpy as np

from .datasets import CELLS, Dataset
from .errors import (
    ConfigError,
    EmptyDataset,
    NonFiniteActivation,
    NonFiniteLoss,
    RfibError,
    SingleClassTraining,
)
from .loss import RfibConfig
from .metrics import BaselineSummary, MetricsReport, metrics_report
from .model import ModelParams, NoiseSource, decode_y, embed_mean, loss_value, value_and_grad

log = logging.getLogger(__name__)

# stream ids for SeedSequence children of one run seed
_SPLIT, _INIT, _SHUFFLE, _NOISE, _VAL_NOISE = range(5)


@dataclass(frozen=True)
class TrainSettings:
    lr: float = 0.001
    batch_size: int = 64
    max_epochs: int = 20
    patience: int = 5
    min_delta: float = 0.0
    val_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if not 0 < self.val_fraction < 1:
            raise ConfigError(f"val_fraction must lie in (0, 1), got {self.val_fraction}")
        if int(self.batch_size) != self.batch_size or self.batch_size < 1:
            raise ConfigError(f"batch_size must be a positive integer, got {self.batch_size}")
        if int(self.max_epochs) != self.max_epochs or self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be a positive integer, got {self.max_epochs}")
        if int(self.patience) != self.patience or not 1 <= self.patience <= self.max_epochs:
            raise ConfigError("patience must be an integer in [1, max_epochs]")
        if self.min_delta < 0 or math.isnan(self.min_delta):
            raise ConfigError(f"min_delta must be >= 0, got {self.min_delta}")
        if int(self.seed) != self.seed:
            raise ConfigError(f"seed must be an integer, got {self.seed}")


@dataclass(frozen=True)
class SweepGrid:
    alphas: tuple[float, ...]
    beta1s: tuple[float, ...]
    beta2s: tuple[float, ...]

    def __post_init__(self):
        for name in ("alphas", "beta1s", "beta2s"):
            values = tuple(float(v) for v in getattr(self, name))
            if not values:
                raise ConfigError(f"sweep grid {name} must be nonempty")
            object.__setattr__(self, name, values)

    def configs(self, base: RfibConfig) -> list[RfibConfig]:
        return [
            replace(base, alpha=a, beta1=b1, beta2=b2)
            for a, b1, b2 in product(self.alphas, self.beta1s, self.beta2s)
        ]


def linear_betas(step: int = 7, lo: int = 1, hi: int = 50) -> list[float]:
    """Beta values from ``lo`` to ``hi`` in integer steps (1, 8, ..., 50 by default)."""
    return [float(b) for b in range(lo, hi + 1, step)]


def linear_alphas(step: float = 0.1) -> list[float]:
    n = int(round(1 / step))
    return [round(i * step, 10) for i in range(n + 1)]


class Adam:
    """Adam on a flat parameter vector, updated in place."""

    def __init__(self, size: int, lr: float = 0.001, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray):
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        params -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def stream_seed(seed: int, stream: int) -> int:
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=(stream,))
    return int(ss.generate_state(1, np.uint64)[0])


def derive_seed(seed: int, cfg: RfibConfig) -> int:
    """Run seed for one configuration; independent of any grid it sits in."""
    key = json.dumps({"seed": int(seed), "config": asdict(cfg)}, sort_keys=True)
    return int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "little") >> 1


def validation_split(data: Dataset, val_fraction: float, seed: int):
    """Split off a validation set, stratified by (y, s) when every present cell has >= 5 rows."""
    n = len(data)
    if n < 2:
        raise EmptyDataset(f"need at least 2 examples to split, got {n}")
    rng = np.random.default_rng(stream_seed(seed, _SPLIT))
    counts = {c: k for c, k in data.cell_counts().items() if k > 0}
    if all(k >= 5 for k in counts.values()):
        val_idx = []
        for y, s in CELLS:
            idx = np.flatnonzero((data.y == y) & (data.s == s))
            if idx.size == 0:
                continue
            idx = rng.permutation(idx)
            val_idx.append(idx[: int(round(val_fraction * idx.size))])
        val_idx = np.sort(np.concatenate(val_idx))
    else:
        k = min(max(1, int(round(val_fraction * n))), n - 1)
        val_idx = np.sort(rng.permutation(n)[:k])
    mask = np.zeros(n, dtype=bool)
    mask[val_idx] = True
    return data.subset(np.flatnonzero(~mask)), data.subset(val_idx)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    compression: float
    utility_loglik: float
    conditional_loglik: float
    head_f_val_acc: float


LOG_COLUMNS = [f for f in EpochRecord.__dataclass_fields__]


@dataclass
class TrainingLog:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0

    @property
    def final_epoch(self) -> int:
        return self.records[-1].epoch if self.records else 0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for r in self.records:
            w.writerow([r.epoch, *(format(getattr(r, c), ".17g") for c in LOG_COLUMNS[1:])])
        return buf.getvalue()


def _batch(data: Dataset):
    return data.X, data.y, data.s


def train(data: Dataset, cfg: RfibConfig, settings: TrainSettings):
    """Minimise the RFIB objective with Adam and validation-based early stopping.

    Returns the parameters from the epoch with the lowest validation loss and
    the per-epoch log.
    """
    if len(data) == 0:
        raise EmptyDataset("training set is empty")
    train_set, val_set = validation_split(data, settings.val_fraction, settings.seed)
    params = ModelParams.initialize(data.p, cfg.d, np.random.default_rng(stream_seed(settings.seed, _INIT)))
    opt = Adam(params.size, lr=settings.lr)
    shuffle_rng = np.random.default_rng(stream_seed(settings.seed, _SHUFFLE))
    noise = NoiseSource(stream_seed(settings.seed, _NOISE))
    val_noise = NoiseSource(stream_seed(settings.seed, _VAL_NOISE))

    history = TrainingLog()
    best_val = None
    best_params = params.copy()
    wait = 0
    n = len(train_set)
    for epoch in range(1, settings.max_epochs + 1):
        order = shuffle_rng.permutation(n)
        sums = np.zeros(4)
        for b, start in enumerate(range(0, n, settings.batch_size)):
            idx = order[start:start + settings.batch_size]
            try:
                loss, grad = value_and_grad(params, _batch(train_set.subset(idx)), cfg, noise)
            except NonFiniteActivation as exc:
                raise NonFiniteLoss(f"epoch {epoch}, batch {b}: {exc}", epoch=epoch, batch=b) from exc
            if not (math.isfinite(loss.total) and np.all(np.isfinite(grad))):
                raise NonFiniteLoss(f"non-finite loss at epoch {epoch}, batch {b}", epoch=epoch, batch=b)
            opt.step(params.flat, grad)
            sums += len(idx) * np.array([loss.total, loss.compression, loss.utility_loglik, loss.conditional_loglik])
        sums /= n

        val_noise.reset()
        try:
            val = loss_value(params, _batch(val_set), cfg, val_noise).total
            head_acc = float(np.mean((decode_y(params, embed_mean(params, val_set.X)) > 0.5) == val_set.y))
        except NonFiniteActivation as exc:
            raise NonFiniteLoss(f"epoch {epoch}, validation: {exc}", epoch=epoch) from exc
        if not math.isfinite(val):
            raise NonFiniteLoss(f"non-finite validation loss at epoch {epoch}", epoch=epoch)
        history.records.append(EpochRecord(epoch, float(sums[0]), float(val), *map(float, sums[1:]), head_acc))
        log.debug("epoch %d train %.5f val %.5f", epoch, sums[0], val)

        if best_val is None or val < best_val - settings.min_delta:
            best_val = val
            best_params = params.copy()
            history.best_epoch = epoch
            wait = 0
        else:
            wait += 1
            if wait >= settings.patience:
                break
    return best_params, history


@dataclass
class LinearClassifier:
    coef: np.ndarray
    intercept: float
    n_iter: int = 0

    def decision_function(self, z) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) @ self.coef + self.intercept

    def predict_proba(self, z) -> np.ndarray:
        return np.exp(-np.logaddexp(0.0, -self.decision_function(z)))

    def predict(self, z) -> np.ndarray:
        return (self.predict_proba(z) > 0.5).astype(int)


def fit_downstream(z_train, y_train, l2: float = 1.0, tol: float = 1e-6, max_iter: int = 1000) -> LinearClassifier:
    """L2-regularised logistic regression with an unpenalised intercept.

    Minimises ``sum_i logloss_i + (l2/2)*||w||^2`` by damped Newton steps.
    """
    z = np.asarray(z_train, dtype=np.float64)
    y = np.asarray(y_train, dtype=np.float64)
    if z.ndim != 2 or len(z) != len(y):
        raise ValueError("z_train must be (N, d) with one label per row")
    if len(y) < 2 or np.all(y == y[0]):
        raise SingleClassTraining("logistic regression needs both classes in the training labels")
    n, d = z.shape
    Z = np.hstack([z, np.ones((n, 1))])
    reg = np.full(d + 1, l2)
    reg[-1] = 0.0
    theta = np.zeros(d + 1)

    def objective(th):
        eta = Z @ th
        return np.sum(np.logaddexp(0.0, eta) - y * eta) + 0.5 * np.sum(reg * th * th)

    f = objective(theta)
    it = 0
    for it in range(1, max_iter + 1):
        prob = np.exp(-np.logaddexp(0.0, -(Z @ theta)))
        grad = Z.T @ (prob - y) + reg * theta
        if np.linalg.norm(grad) < tol:
            break
        hess = (Z * (prob * (1 - prob))[:, None]).T @ Z + np.diag(reg) + 1e-12 * np.eye(d + 1)
        step = np.linalg.solve(hess, grad)
        t = 1.0
        while True:
            cand = theta - t * step
            f_new = objective(cand)
            if f_new <= f - 1e-4 * t * (grad @ step) or t < 1e-10:
                break
            t *= 0.5
        theta, f = cand, f_new
    return LinearClassifier(coef=theta[:-1].copy(), intercept=float(theta[-1]), n_iter=it)


def evaluate(params: ModelParams, clf: LinearClassifier, test: Dataset,
             baseline: BaselineSummary | None = None) -> MetricsReport:
    """Embed with the encoder mean, classify, and score utility and fairness."""
    if len(test) == 0:
        raise EmptyDataset("test set is empty")
    y_hat = clf.predict(embed_mean(params, test.X))
    return metrics_report(y_hat, test.y, test.s, baseline)


@dataclass
class RunResult:
    config: RfibConfig
    metrics: MetricsReport | None
    final_epoch: int
    seed: int
    checkpoint: str | None = None
    error: str | None = None
    params: ModelParams | None = None
    log: TrainingLog | None = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def row(self) -> dict:
        out = {**asdict(self.config), "method": self.config.method, "seed": self.seed,
               "final_epoch": self.final_epoch}
        metric_keys = ["acc", "acc_gap", "acc_min", "acc_min_group", "dp_gap", "eqodds_gap", "cai_05", "cai_075"]
        pct = self.metrics.as_percent() if self.metrics else {}
        out.update({k: pct.get(k) for k in metric_keys})
        out["error"] = self.error or ""
        return out


def run_point(train_set: Dataset, test_set: Dataset, cfg: RfibConfig, settings: TrainSettings,
              baseline: BaselineSummary | None = None) -> RunResult:
    """Train, fit the downstream classifier on training embeddings, evaluate."""
    seed = derive_seed(settings.seed, cfg)
    params, history = train(train_set, cfg, replace(settings, seed=seed))
    clf = fit_downstream(embed_mean(params, train_set.X), train_set.y)
    report = evaluate(params, clf, test_set, baseline)
    return RunResult(cfg, report, history.final_epoch, seed, params=params, log=history)


def _safe_point(args) -> RunResult:
    train_set, test_set, cfg, settings, keep_params = args
    try:
        res = run_point(train_set, test_set, cfg, settings)
    except RfibError as exc:
        return RunResult(cfg, None, 0, derive_seed(settings.seed, cfg), error=f"{type(exc).__name__}: {exc}")
    if not keep_params:
        res.params = None
    return res


def baseline_config(base: RfibConfig) -> RfibConfig:
    """Reference run for CAI: the IB reduction at the base beta1."""
    return replace(base, alpha=1.0, beta2=0.0)


def _sort_key(res: RunResult, by_cai: bool):
    c = res.config
    tie = (c.alpha, c.beta1, c.beta2)
    if not res.ok:
        return (1, 0.0, tie)
    primary = res.metrics.cai_05 if by_cai else res.metrics.acc
    return (0, -primary, tie)


def sweep(data, grid: SweepGrid, settings: TrainSettings, base: RfibConfig | None = None,
          include_baseline: bool = False, jobs: int = 1, keep_params: bool = False) -> list[RunResult]:
    """Train and evaluate every grid point.

    ``data`` is ``(train_set, test_set)``.  Failed points are returned with
    ``error`` set.  With ``include_baseline`` the IB reference run is added
    (if not already in the grid), CAI is filled in for every successful row
    and rows are ordered by CAI_0.5; otherwise by accuracy.
    """
    train_set, test_set = data
    base = base or RfibConfig()
    configs = grid.configs(base)
    ref = baseline_config(base)
    if include_baseline and ref not in configs:
        configs.append(ref)
    tasks = [(train_set, test_set, cfg, settings, keep_params) for cfg in configs]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_safe_point, tasks))
    else:
        results = [_safe_point(t) for t in tasks]

    by_cai = False
    if include_baseline:
        ref_result = results[configs.index(ref)]
        if ref_result.ok:
            summary = BaselineSummary(100 * ref_result.metrics.acc, 100 * ref_result.metrics.acc_gap)
            for res in results:
                if res.ok:
                    res.metrics.with_baseline(summary)
            by_cai = True
    return sorted(results, key=lambda r: _sort_key(r, by_cai))


SWEEP_COLUMNS = [
    "alpha", "beta1", "beta2", "gamma2", "d", "mc_samples", "method", "seed", "final_epoch",
    "acc", "acc_gap", "acc_min", "acc_min_group", "dp_gap", "eqodds_gap", "cai_05", "cai_075", "error",
]


def sweep_table(results: list[RunResult]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
    w.writeheader()
    for res in results:
        row = res.row()
        w.writerow({k: ("" if row[k] is None else format(row[k], ".17g") if isinstance(row[k], float) else row[k])
                    for k in SWEEP_COLUMNS})
    return buf.getvalue()
