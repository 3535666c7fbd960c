"""Forecaster assemblies sharing one contract: windows in, k x M levels out."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..data import Layout, WindowedSample, WindowSet
from ..nn import no_grad
from .base import (
    ARCHITECTURES,
    DEFAULT_K,
    DEFAULT_W,
    LEARNED_ARCHITECTURES,
    Forecast,
    Forecaster,
    ModelConfig,
    ModelError,
    load_model,
)
from .baselines import (
    CNNForecaster,
    GCNForecaster,
    Persistence,
    RNNForecaster,
    TCNForecaster,
    TransformerForecaster,
    tcn_receptive_field,
)
from .gtn import GTNParallel, GTNSeries

_REGISTRY = {
    "gtn-parallel": GTNParallel,
    "gtn-series": GTNSeries,
    "rnn": RNNForecaster,
    "cnn": CNNForecaster,
    "tcn": TCNForecaster,
    "gcn": GCNForecaster,
    "transformer": TransformerForecaster,
    "persistence": Persistence,
}


class AttentionNotSupported(ModelError):
    pass


def build_model(config: ModelConfig, layout: Layout) -> Forecaster:
    return _REGISTRY[config.architecture](config, layout)


def _as_windows(model: Forecaster, sample) -> WindowSet:
    if isinstance(sample, WindowSet):
        return sample
    if isinstance(sample, WindowedSample):
        return WindowSet.from_sample(sample, model.layout)
    raise TypeError(f"expected WindowedSample or WindowSet, got {type(sample).__name__}")


def forward(model: Forecaster, sample: WindowedSample) -> Forecast:
    """Forecast one window in feet; attention is attached for attention-fused models."""
    windows = _as_windows(model, sample)
    y = model.predict(windows)[0]
    attention = None
    if model.has_attention:
        attention = _attention(model, windows)[0]
    return Forecast(y, windows.anchor_time(0), tuple(model.layout.graph.targets), attention,
                    tuple(model.layout.covariate_names))


def _attention(model: Forecaster, windows: WindowSet, batch_size: int = 256) -> np.ndarray:
    x_past, x_cov = model.prepare(windows)
    was = model.drop_rng
    model.eval_mode()
    out = []
    with no_grad():
        for s in range(0, len(x_past), batch_size):
            out.append(model.attend(x_past[s : s + batch_size], x_cov[s : s + batch_size])[1])
    model._dropout_rng = was
    # renormalize in 64-bit so rows sum to 1 even for float32-trained models
    weights = np.concatenate(out).astype(np.float64)
    return weights / weights.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class AttentionTable:
    """Mean fusion attention: ``weights[m, j, c]`` for target m, horizon step j, covariate c."""

    weights: np.ndarray
    targets: tuple[str, ...]
    covariates: tuple[str, ...]

    def mean_by_target(self) -> np.ndarray:
        """(M, C) weights averaged over horizon steps."""
        return self.weights.mean(axis=1)

    def rows(self):
        for m, target in enumerate(self.targets):
            for j in range(self.weights.shape[1]):
                for c, cov in enumerate(self.covariates):
                    yield target, j + 1, cov, float(self.weights[m, j, c])


def extract_attention(model: Forecaster, samples) -> AttentionTable:
    """Per target and horizon step, the distribution of fusion attention over covariate channels."""
    if not model.has_attention:
        raise AttentionNotSupported(f"attention extraction is not supported for {model.config.architecture}")
    weights = _attention(model, _as_windows(model, samples)).mean(axis=0)
    return AttentionTable(weights, tuple(model.layout.graph.targets), tuple(model.layout.covariate_names))


__all__ = [
    "ARCHITECTURES",
    "DEFAULT_K",
    "DEFAULT_W",
    "LEARNED_ARCHITECTURES",
    "AttentionNotSupported",
    "AttentionTable",
    "Forecast",
    "Forecaster",
    "ModelConfig",
    "ModelError",
    "build_model",
    "extract_attention",
    "forward",
    "load_model",
    "tcn_receptive_field",
]
