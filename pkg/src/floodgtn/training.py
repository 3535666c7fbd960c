"""Training loop, error metrics, the F.P.C. ablation and timing harness."""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from ._fields import coerce_fields
from .data import DataError, WindowSet, fit_scaler, split_train_test
from .models import ModelConfig, build_model
from .models.base import Forecaster
from .nn import Adam, Tensor, clip_grad_norm, mse

ARMS = ("with", "without")
REPORT_COLUMNS = ("model", "arm", "mae_ft", "rmse_ft")
TIMING_COLUMNS = ("model", "arm", "train_s", "predict_s")
TIMED_REPORT_COLUMNS = ("model", "arm", "mae_ft", "rmse_ft", "train_s", "predict_s")
# a batch loss this many times the first one counts as divergence even while finite
EXPLOSION_FACTOR = 1e6


class TrainingDivergence(RuntimeError):
    pass


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patience: int = 5
    val_fraction: float = 0.1
    seed: int = 0
    clip_norm: float = 1.0
    precision: str = "float64"
    samples_per_epoch: int = 0      # 0 means every training window each epoch

    def __post_init__(self):
        for name in ("epochs", "batch_size", "patience"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("lr", "eps", "clip_norm"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if not 0.0 < self.val_fraction < 0.5:
            raise ValueError(f"val_fraction must lie in (0, 0.5), got {self.val_fraction}")
        if self.precision not in ("float64", "float32"):
            raise ValueError(f"precision must be float64 or float32, got {self.precision!r}")
        if self.samples_per_epoch < 0:
            raise ValueError("samples_per_epoch must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown train config fields: {sorted(unknown)}")
        return cls(**coerce_fields(cls, d))


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_mae: float | None


@dataclass
class TrainResult:
    state: dict[str, np.ndarray]
    history: list[EpochRecord]
    best_epoch: int
    train_s: float = 0.0

    @property
    def losses(self) -> list[float]:
        return [r.train_loss for r in self.history]


def _validation_split(samples: WindowSet, fraction: float) -> tuple[WindowSet, WindowSet | None]:
    """Chronological tail for early stopping; tiny sets train without one."""
    try:
        return split_train_test(samples, 1.0 - fraction)
    except DataError:
        return samples, None


def _batch_loss(model: Forecaster, x_past, x_cov, y) -> Tensor:
    return mse(model.net(x_past, x_cov), Tensor(y))


def train(model: Forecaster, samples: WindowSet, cfg: TrainConfig) -> TrainResult:
    """Fit ``model`` in place on normalized targets and return the best parameters.

    The model keeps the parameters of the epoch with the lowest validation
    MAE (or the last epoch when the set is too small to hold out a tail).
    """
    if len(samples) == 0:
        raise DataError("cannot train on an empty sample set")
    start = time.perf_counter()
    model.check_windows(samples)
    fit_set, val_set = _validation_split(samples, cfg.val_fraction)
    if model.scaler is None:
        model.scaler = fit_scaler(samples)
    model.set_precision(cfg.precision)
    x_past, x_cov = model.prepare(fit_set)
    y = model.scaler.transform(fit_set).y_true.astype(model.dtype)

    params = model.parameters()
    opt = Adam(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    shuffle_seq, dropout_seq = np.random.SeedSequence(cfg.seed).spawn(2)
    shuffle_rng = np.random.default_rng(shuffle_seq)
    model.train_mode(dropout_seq)

    n = len(fit_set)
    per_epoch = min(cfg.samples_per_epoch or n, n)
    history: list[EpochRecord] = []
    best = (math.inf, 0, params.state())
    reference_loss = None
    stale = 0
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(n)[:per_epoch]
        total = 0.0
        for lo in range(0, per_epoch, cfg.batch_size):
            idx = np.sort(order[lo : lo + cfg.batch_size])
            params.zero_grad()
            loss = _batch_loss(model, x_past[idx], x_cov[idx], y[idx])
            value = float(loss.item())
            if reference_loss is None:
                reference_loss = max(value, 1e-12)
            if not math.isfinite(value) or value > EXPLOSION_FACTOR * reference_loss:
                model.eval_mode()
                raise TrainingDivergence(f"divergence at epoch {epoch} (lr={cfg.lr:g}): batch loss {value:.6g}")
            loss.backward()
            clip_grad_norm(params, cfg.clip_norm)
            opt.step()
            total += value * len(idx)
            if not params.all_finite():
                model.eval_mode()
                raise TrainingDivergence(f"divergence at epoch {epoch} (lr={cfg.lr:g}): non-finite parameters")
        train_loss = total / per_epoch

        val_mae = None
        if val_set is not None:
            val_mae = evaluate(model, val_set).mae   # predict() restores the dropout stream
        history.append(EpochRecord(epoch, train_loss, val_mae))

        score = train_loss if val_mae is None else val_mae
        if score < best[0]:
            best = (score, epoch, params.state())
            stale = 0
        else:
            stale += 1
            if val_set is not None and stale >= cfg.patience:
                break

    model.eval_mode()
    params.load_state(best[2])
    return TrainResult(best[2], history, best[1], time.perf_counter() - start)


# -- metrics --------------------------------------------------------------------

@dataclass(frozen=True)
class Metrics:
    mae: float
    rmse: float
    mae_by_step: np.ndarray
    rmse_by_step: np.ndarray


def forecast_errors(y_hat: np.ndarray, y_true: np.ndarray) -> Metrics:
    """MAE and RMSE over samples x steps x targets, plus their per-step breakdown."""
    y_hat = np.asarray(y_hat, dtype=np.float64)
    y_true = np.asarray(y_true, dtype=np.float64)
    if y_hat.shape != y_true.shape:
        raise EvaluationError(f"prediction shape {y_hat.shape} does not match truth {y_true.shape}")
    if y_hat.ndim != 3 or y_hat.size == 0:
        raise EvaluationError("empty test set")
    abs_err = np.abs(y_hat - y_true)
    return Metrics(
        float(abs_err.mean()),
        float(_rms(abs_err, None)),
        abs_err.mean(axis=(0, 2)),
        _rms(abs_err, (0, 2)),
    )


def _rms(abs_err: np.ndarray, axis):
    """Root mean square, rescaled first so tiny errors do not underflow when squared."""
    scale = abs_err.max(axis=axis, keepdims=True)
    safe = np.where(scale > 0, scale, 1.0)
    out = safe * np.sqrt(np.mean((abs_err / safe) ** 2, axis=axis, keepdims=True))
    return out.reshape(()) if axis is None else out.squeeze(axis)


def evaluate(model: Forecaster, samples: WindowSet) -> Metrics:
    if len(samples) == 0:
        raise EvaluationError("empty test set")
    return forecast_errors(model.predict(samples), samples.y_true)


# -- ablation report --------------------------------------------------------------

@dataclass(frozen=True)
class ReportRow:
    model: str
    arm: str
    mae_ft: float
    rmse_ft: float
    mae_by_step: tuple[float, ...] = ()
    train_s: float = 0.0
    predict_s: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.mae_ft <= self.rmse_ft * (1 + 1e-12):
            raise EvaluationError(f"{self.model}/{self.arm}: MAE {self.mae_ft} exceeds RMSE {self.rmse_ft}")


def _csv_text(columns, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    writer.writerows(rows)
    return buf.getvalue()


@dataclass
class EvalReport:
    rows: list[ReportRow] = field(default_factory=list)

    def add(self, row: ReportRow) -> None:
        self.rows.append(row)
        self.rows.sort(key=lambda r: (r.model, ARMS.index(r.arm)))

    def get(self, model: str, arm: str) -> ReportRow:
        for row in self.rows:
            if row.model == model and row.arm == arm:
                return row
        raise KeyError(f"no report row for {model}/{arm}")

    @property
    def models(self) -> list[str]:
        return sorted({r.model for r in self.rows})

    def table(self) -> str:
        """Aligned text table: MAE/RMSE with and without F.P.C. per model."""
        header = ("Model", "MAE w/ FPC", "RMSE w/ FPC", "MAE w/o FPC", "RMSE w/o FPC")
        lines = [header]
        for name in self.models:
            cells = [name]
            for arm in ARMS:
                try:
                    row = self.get(name, arm)
                    cells += [f"{row.mae_ft:.4f}", f"{row.rmse_ft:.4f}"]
                except KeyError:
                    cells += ["-", "-"]
            lines.append(tuple(cells))
        widths = [max(len(line[i]) for line in lines) for i in range(len(header))]
        out = []
        for j, line in enumerate(lines):
            out.append("  ".join(c.ljust(widths[0]) if i == 0 else c.rjust(widths[i]) for i, c in enumerate(line)))
            if j == 0:
                out.append("  ".join("-" * wd for wd in widths))
        return "\n".join(out) + "\n"

    def timing_table(self) -> str:
        """Train time in minutes and test-set prediction time in seconds."""
        lines = [("Model", "Arm", "Train (min)", "Predict (s)")]
        for r in self.rows:
            lines.append((r.model, r.arm, f"{r.train_s / 60.0:.3f}", f"{r.predict_s:.4f}"))
        widths = [max(len(line[i]) for line in lines) for i in range(4)]
        return "\n".join("  ".join(c.ljust(widths[i]) if i < 2 else c.rjust(widths[i])
                                   for i, c in enumerate(line)) for line in lines) + "\n"

    def csv_text(self) -> str:
        """Metrics only; reproducible to the byte for a fixed seed in 64-bit mode."""
        return _csv_text(REPORT_COLUMNS, [(r.model, r.arm, repr(r.mae_ft), repr(r.rmse_ft)) for r in self.rows])

    def timing_csv_text(self) -> str:
        return _csv_text(TIMING_COLUMNS, [(r.model, r.arm, f"{r.train_s:.6f}", f"{r.predict_s:.6f}") for r in self.rows])

    def timed_csv_text(self) -> str:
        return _csv_text(TIMED_REPORT_COLUMNS, [(r.model, r.arm, repr(r.mae_ft), repr(r.rmse_ft),
                                                 f"{r.train_s:.6f}", f"{r.predict_s:.6f}") for r in self.rows])

    def steps_csv_text(self) -> str:
        rows = [(r.model, r.arm, j + 1, repr(v)) for r in self.rows for j, v in enumerate(r.mae_by_step)]
        return _csv_text(("model", "arm", "step", "mae_ft"), rows)


def time_prediction(model: Forecaster, samples: WindowSet, repeats: int = 3) -> float:
    """Median wall-clock seconds for predicting the whole set."""
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        model.predict(samples)
        times.append(time.perf_counter() - start)
    return float(np.median(times))


def time_models(models: dict[str, Forecaster], samples: WindowSet,
                train_seconds: dict[str, float] | None = None, repeats: int = 3) -> list[tuple[str, float, float]]:
    """``(name, train_s, predict_s)`` per model; ``models`` must already be trained."""
    train_seconds = train_seconds or {}
    out = []
    for name, model in models.items():
        if model is None:
            raise EvaluationError(f"missing checkpoint for {name}")
        out.append((name, float(train_seconds.get(name, 0.0)), time_prediction(model, samples, repeats)))
    return out


def arm_config(config: ModelConfig, arm: str) -> ModelConfig:
    if arm not in ARMS:
        raise ValueError(f"unknown arm {arm!r}")
    return replace(config, use_future_covariates=(arm == "with"))


def run_ablation(model_configs: list[ModelConfig], train_set: WindowSet, test_set: WindowSet,
                 cfg: TrainConfig, progress=None) -> tuple[EvalReport, dict[tuple[str, str], Forecaster]]:
    """Train every architecture with and without future covariates and score both arms.

    Persistence needs no training and is scored once, then reported for both arms.
    """
    report = EvalReport()
    trained: dict[tuple[str, str], Forecaster] = {}
    scaler = fit_scaler(train_set)
    for base in model_configs:
        name = base.architecture
        arms = ARMS[:1] if name == "persistence" else ARMS
        for arm in arms:
            model = build_model(arm_config(base, arm), train_set.layout)
            model.scaler = scaler
            train_s = 0.0
            if name != "persistence":
                train_s = train(model, train_set, cfg).train_s
            metrics = evaluate(model, test_set)
            predict_s = time_prediction(model, test_set)
            row = ReportRow(name, arm, metrics.mae, metrics.rmse, tuple(metrics.mae_by_step.tolist()),
                            train_s, predict_s)
            report.add(row)
            trained[(name, arm)] = model
            if progress is not None:
                progress(row)
        if name == "persistence":
            report.add(replace(report.get(name, "with"), arm="without"))
            trained[(name, "without")] = trained[(name, "with")]
    return report, trained
