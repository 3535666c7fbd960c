"""Baseline forecasters: RNN, CNN, TCN, GCN, Transformer and persistence."""

from __future__ import annotations

import numpy as np

from ..graph import normalized_adjacency
from ..nn import RNN, Conv1d, GCNLayer, Linear, Tensor, TransformerEncoder, dropout, max_over, relu
from .base import Forecaster
from .features import NODE_FEATURES, FeatureMap


def tcn_receptive_field(layers: int, kernel: int) -> int:
    """Receptive field of a causal stack with dilations 1, 2, 4, ..."""
    return 1 + (kernel - 1) * (2**layers - 1)


class _SequenceModel(Forecaster):
    """Shared plumbing for models reading the flat (B, w+k, F+1) hour sequence."""

    def _build(self, rng):
        self.features = FeatureMap(self.layout)
        self.n_inputs = self.layout.n_channels + 1
        self.n_targets = len(self.layout.target_columns)
        self._build_body(rng)

    def _build_body(self, rng):
        raise NotImplementedError

    def sequence(self, x_past, x_cov) -> Tensor:
        return Tensor(self.features.sequence(x_past, x_cov))


class RNNForecaster(_SequenceModel):
    """Elman RNN over the hour sequence; a linear head reads each forecast hour's state."""

    def _build_body(self, rng):
        d = self.config.hidden_dim
        self.rnn = RNN(rng, self.n_inputs, d)
        self.head = Linear(rng, d, self.n_targets)

    def net(self, x_past, x_cov):
        h = self.rnn(self.sequence(x_past, x_cov))[:, self.config.w :, :]
        return self.head(dropout(h, self.config.dropout, self.drop_rng))


class CNNForecaster(_SequenceModel):
    """Stacked width-3 convolutions with max pooling, flattened into a linear head."""

    def _build_body(self, rng):
        cfg, d = self.config, self.config.hidden_dim
        length = cfg.w + cfg.k
        self.convs = []
        for i in range(cfg.conv_layers):
            self.convs.append(Conv1d(rng, self.n_inputs if i == 0 else d, d, cfg.kernel_size))
            length //= 2
        if length < 1:
            raise ValueError(f"{cfg.conv_layers} pooling layers leave no time steps from w+k={cfg.w + cfg.k}")
        self.flat_len = length * d
        self.head = Linear(rng, self.flat_len, cfg.k * self.n_targets)

    def net(self, x_past, x_cov):
        x = self.sequence(x_past, x_cov)
        b = x.shape[0]
        for conv in self.convs:
            x = relu(conv(x))
            t = (x.shape[1] // 2) * 2
            x = max_over(x[:, :t, :].reshape(b, t // 2, 2, x.shape[2]), axis=2)
        x = dropout(x.reshape(b, self.flat_len), self.config.dropout, self.drop_rng)
        return self.head(x).reshape(b, self.config.k, self.n_targets)


class TCNForecaster(_SequenceModel):
    """Causal dilated convolutions (dilation doubling per layer) with residual links."""

    def _build_body(self, rng):
        cfg, d = self.config, self.config.hidden_dim
        self.inp = Linear(rng, self.n_inputs, d)
        self.convs = [Conv1d(rng, d, d, cfg.kernel_size, dilation=2**i, causal=True) for i in range(cfg.tcn_layers)]
        self.head = Linear(rng, d, self.n_targets)

    @property
    def receptive_field(self) -> int:
        return tcn_receptive_field(self.config.tcn_layers, self.config.kernel_size)

    def net(self, x_past, x_cov):
        x = self.inp(self.sequence(x_past, x_cov))
        for conv in self.convs:
            x = x + dropout(relu(conv(x)), self.config.dropout, self.drop_rng)
        return self.head(x[:, self.config.w :, :])


class TransformerForecaster(_SequenceModel):
    """Transformer encoder over hours; a linear head reads each forecast hour's encoding."""

    def _build_body(self, rng):
        cfg, d = self.config, self.config.hidden_dim
        self.inp = Linear(rng, self.n_inputs, d)
        self.encoder = TransformerEncoder(rng, d, cfg.n_heads, cfg.feed_forward_dim, cfg.n_encoder_layers, cfg.dropout)
        self.head = Linear(rng, d, self.n_targets)

    def net(self, x_past, x_cov):
        h = self.encoder(self.inp(self.sequence(x_past, x_cov)), self.drop_rng)
        return self.head(h[:, self.config.w :, :])


class GCNForecaster(Forecaster):
    """GCN over nodes whose features are their whole (w+k)-hour channel trace."""

    def _build(self, rng):
        cfg, d = self.config, self.config.hidden_dim
        self.features = FeatureMap(self.layout)
        self.adjacency = normalized_adjacency(self.layout.graph).values
        d_in = (cfg.w + cfg.k) * NODE_FEATURES
        self.gcn = [GCNLayer(rng, d_in if i == 0 else d, d) for i in range(cfg.n_gcn_layers)]
        self.head = Linear(rng, d, cfg.k)

    def net(self, x_past, x_cov):
        x = self.features.node_slots(x_past, x_cov)
        b, t, n, f = x.shape
        h = Tensor(x.transpose(0, 2, 1, 3).reshape(b, n, t * f))
        adjacency = self.adjacency.astype(h.dtype)
        for layer in self.gcn:
            h = layer(h, adjacency)
        h = dropout(h[:, self.features.target_nodes, :], self.config.dropout, self.drop_rng)
        return self.head(h).transpose(0, 2, 1)


class Persistence(Forecaster):
    """Every forecast hour repeats the last observed level; no parameters."""

    def _build(self, rng):
        self.target_columns = np.array(self.layout.target_columns)

    def net(self, x_past, x_cov):
        last = x_past[:, -1:, self.target_columns]
        return Tensor(np.repeat(last, self.config.k, axis=1))
