"""Shared forecaster contract: normalized arrays in, k x M water levels out."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from datetime import datetime

import numpy as np

from .._fields import coerce_fields
from ..data import Layout, Scaler, WindowSet, mask_future_covariates
from ..nn import Module, Tensor, no_grad
from ..nn.checkpoint import CheckpointError, load_checkpoint, save_checkpoint

ARCHITECTURES = ("gtn-parallel", "gtn-series", "rnn", "cnn", "tcn", "gcn", "transformer", "persistence")
LEARNED_ARCHITECTURES = ARCHITECTURES[:-1]
DEFAULT_W = 72
DEFAULT_K = 24


class ModelError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    architecture: str
    w: int = DEFAULT_W
    k: int = DEFAULT_K
    hidden_dim: int = 64
    n_heads: int = 4
    n_encoder_layers: int = 2
    n_gcn_layers: int = 2
    lstm_layers: int = 1
    dropout: float = 0.1
    use_future_covariates: bool = True
    ff_dim: int = 0                 # 0 means 2 * hidden_dim
    conv_layers: int = 3
    tcn_layers: int = 6
    kernel_size: int = 3
    patch_len: int = 12             # hours per covariate token in gtn-parallel
    seed: int = 0

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.architecture!r}; choose from {', '.join(ARCHITECTURES)}")
        if self.w < 1 or self.k < 1:
            raise ValueError(f"w and k must be >= 1 (w={self.w}, k={self.k})")
        if self.hidden_dim < 1 or self.hidden_dim % self.n_heads:
            raise ValueError(f"hidden_dim {self.hidden_dim} must be a positive multiple of n_heads {self.n_heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        for name in ("n_encoder_layers", "n_gcn_layers", "lstm_layers", "conv_layers", "tcn_layers", "kernel_size",
                     "patch_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def feed_forward_dim(self) -> int:
        return self.ff_dim or 2 * self.hidden_dim

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config fields: {sorted(unknown)}")
        return cls(**coerce_fields(cls, d))


@dataclass(frozen=True)
class Forecast:
    y_hat: np.ndarray                       # (k, M) feet
    anchor: datetime
    target_names: tuple[str, ...]
    attention: np.ndarray | None = None     # (M, k, C), rows sum to 1
    covariate_names: tuple[str, ...] = ()


class Forecaster(Module):
    """Base class.  Subclasses build layers in ``_build`` and implement ``net``.

    ``net`` maps normalized ``x_past`` (B, w, F) and ``x_cov`` (B, k, C)
    arrays to a normalized (B, k, M) tensor.
    """

    has_attention = False

    def __init__(self, config: ModelConfig, layout: Layout):
        self.config = config
        self.layout = layout
        self.scaler: Scaler | None = None
        self.dtype = np.float64
        self._dropout_rng: np.random.Generator | None = None
        self._build(np.random.default_rng(config.seed))

    def _build(self, rng: np.random.Generator) -> None:
        raise NotImplementedError

    def net(self, x_past: np.ndarray, x_cov: np.ndarray) -> Tensor:
        raise NotImplementedError

    # -- modes -----------------------------------------------------------
    @property
    def training(self) -> bool:
        return self._dropout_rng is not None

    def train_mode(self, seed: int) -> None:
        self._dropout_rng = np.random.default_rng(seed)

    def eval_mode(self) -> None:
        self._dropout_rng = None

    @property
    def drop_rng(self) -> np.random.Generator | None:
        return self._dropout_rng

    def set_precision(self, dtype) -> None:
        self.dtype = np.dtype(dtype).type
        self.parameters().cast(self.dtype)

    # -- data handling ---------------------------------------------------
    def check_windows(self, windows: WindowSet) -> None:
        cfg = self.config
        if windows.w != cfg.w or windows.k != cfg.k:
            raise ModelError(f"windows have w={windows.w}, k={windows.k}; model expects w={cfg.w}, k={cfg.k}")
        if windows.layout.channels != self.layout.channels:
            raise ModelError("window channels differ from the model's channel layout")

    def prepare(self, windows: WindowSet) -> tuple[np.ndarray, np.ndarray]:
        """Mask (when future covariates are disabled) and normalize physical windows."""
        self.check_windows(windows)
        if self.scaler is None:
            raise ModelError("model has no fitted scaler")
        if not self.config.use_future_covariates:
            windows = mask_future_covariates(windows)
        norm = self.scaler.transform(windows)
        return norm.x_past.astype(self.dtype), norm.x_cov_future.astype(self.dtype)

    def predict(self, windows: WindowSet, batch_size: int = 256) -> np.ndarray:
        """Physical-unit forecasts (N, k, M) for every window."""
        x_past, x_cov = self.prepare(windows)
        was = self._dropout_rng
        self.eval_mode()
        outs = []
        with no_grad():
            for start in range(0, len(x_past), batch_size):
                y = self.net(x_past[start : start + batch_size], x_cov[start : start + batch_size]).data
                outs.append(y)
        self._dropout_rng = was
        y = np.concatenate(outs).astype(np.float64) if outs else np.zeros((0, self.config.k, len(self.layout.target_columns)))
        if not np.isfinite(y).all():
            raise ModelError("non-finite forecast (model diverged)")
        return self.scaler.inverse_targets(y)

    # -- persistence -----------------------------------------------------
    def checkpoint_meta(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "layout": self.layout.to_dict(),
            "scaler": None if self.scaler is None else self.scaler.to_dict(),
        }

    def save(self, path) -> None:
        save_checkpoint(path, self.parameters(), self.checkpoint_meta())


def load_model(path, expected: ModelConfig | None = None) -> Forecaster:
    from . import build_model

    meta, state = load_checkpoint(path)
    config = ModelConfig.from_dict(meta["config"])
    if expected is not None and expected != config:
        raise CheckpointError(f"{path}: checkpoint config {config} does not match expected {expected}")
    model = build_model(config, Layout.from_dict(meta["layout"]))
    model.parameters().load_state(state)
    if meta.get("scaler") is not None:
        model.scaler = Scaler.from_dict(meta["scaler"])
    return model
