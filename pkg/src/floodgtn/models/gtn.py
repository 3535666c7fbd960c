"""FloodGTN assemblies: parallel and series wiring of Transformer and GCN-LSTM."""

from __future__ import annotations

import numpy as np

from ..graph import normalized_adjacency
from ..nn import (
    LSTM,
    GCNLayer,
    Linear,
    MultiHeadAttention,
    Tensor,
    TransformerEncoder,
    dropout,
)
from ..nn.layers import glorot, zeros
from .base import Forecaster
from .features import NODE_FEATURES, FeatureMap


class GTNParallel(Forecaster):
    """Water levels through GCN-LSTM, covariates through a Transformer, fused by cross-attention.

    Branch A runs GCN layers over the station graph at every past hour and an
    LSTM along time per node; the final hidden state of each target node is
    its summary.  Branch B cuts each covariate channel's past+future trace
    into patches and runs a shared Transformer along each channel's patch
    sequence; the mean encoding is that channel's token.  Channels never mix
    before fusion, so each token carries only its own channel.  For every
    (target, horizon step) a query built from the target summary plus a
    learned step offset attends over the covariate tokens; those softmax
    weights are the per-covariate attribution.  A linear head per target and
    step reads the target summary and the attended covariate vector.
    """

    has_attention = True

    def _build(self, rng):
        cfg, d = self.config, self.config.hidden_dim
        self.features = FeatureMap(self.layout)
        self.adjacency = normalized_adjacency(self.layout.graph).values
        self.gcn = [GCNLayer(rng, 2 if i == 0 else d, d) for i in range(cfg.n_gcn_layers)]
        self.lstm = LSTM(rng, d, d, cfg.lstm_layers)
        self.cov_embed = Linear(rng, cfg.patch_len, d)
        self.channel_embed = glorot(rng, len(self.layout.covariate_columns), d)
        self.cov_encoder = TransformerEncoder(rng, d, cfg.n_heads, cfg.feed_forward_dim,
                                              cfg.n_encoder_layers, cfg.dropout)
        self.query = Linear(rng, d, d)
        self.step_embed = glorot(rng, cfg.k, d)
        self.fusion = MultiHeadAttention(rng, d, cfg.n_heads)
        # one linear read-out per target station and horizon step
        m = len(self.layout.graph.targets)
        self.head_state = glorot(rng, d, cfg.k, shape=(m, cfg.k, d))
        self.head_fused = glorot(rng, d, cfg.k, shape=(m, cfg.k, d))
        self.head_bias = zeros((m, cfg.k))
        # test hook: zero the covariate memory to check the fusion path is live
        self.ablate_covariates = False

    def node_states(self, x_past: np.ndarray) -> Tensor:
        """(B, M, d) final LSTM state of each target node."""
        h = Tensor(self.features.node_levels(x_past))
        adjacency = self.adjacency.astype(h.dtype)
        for layer in self.gcn:
            h = layer(h, adjacency)
        # LSTM nodes are independent, so only target nodes need to be unrolled
        h = h[:, :, self.features.target_nodes, :].transpose(0, 2, 1, 3)
        return self.lstm(h)[:, :, -1, :]

    def covariate_memory(self, x_past: np.ndarray, x_cov: np.ndarray) -> Tensor:
        """(B, C, d) one token per covariate channel."""
        patches = self.features.covariate_patches(x_past, x_cov, self.config.patch_len)
        b, c, p, _ = patches.shape
        h = self.cov_embed(Tensor(patches)) + self.channel_embed.reshape(c, 1, -1)
        h = self.cov_encoder(h.reshape(b * c, p, -1), self.drop_rng)
        return h.mean(axis=1).reshape(b, c, -1)

    def net(self, x_past, x_cov):
        return self.attend(x_past, x_cov)[0]

    def attend(self, x_past, x_cov) -> tuple[Tensor, np.ndarray]:
        """Normalized forecast (B, k, M) and head-averaged fusion weights (B, M, k, C)."""
        cfg, d = self.config, self.config.hidden_dim
        b = x_past.shape[0]
        state = self.node_states(x_past)
        m = state.shape[1]
        memory = self.covariate_memory(x_past, x_cov)
        if self.ablate_covariates:
            memory = memory * 0.0
        queries = self.query(state).reshape(b, m, 1, d) + self.step_embed
        fused, weights = self.fusion(queries.reshape(b, m * cfg.k, d), memory)
        attention = weights.mean(axis=1).reshape(b, m, cfg.k, -1)
        fused = dropout(fused, cfg.dropout, self.drop_rng).reshape(b, m, cfg.k, d)
        y = (state.reshape(b, m, 1, d) * self.head_state).sum(axis=-1)
        y = y + (fused * self.head_fused).sum(axis=-1) + self.head_bias
        return y.transpose(0, 2, 1), attention


class GTNSeries(Forecaster):
    """Per-station Transformer, then GCN across stations per hour, then LSTM along time.

    One encoder (shared by all stations) turns each node's own channel trace
    over ``w + k`` hours into per-hour embeddings.  GCN layers mix those
    embeddings across the river graph hour by hour, an LSTM runs along time at
    each target node, and a per-step linear head reads the LSTM state at each
    forecast hour.
    """

    def _build(self, rng):
        cfg, d = self.config, self.config.hidden_dim
        self.features = FeatureMap(self.layout)
        self.adjacency = normalized_adjacency(self.layout.graph).values
        self.embed = Linear(rng, NODE_FEATURES, d)
        self.encoder = TransformerEncoder(rng, d, cfg.n_heads, cfg.feed_forward_dim,
                                          cfg.n_encoder_layers, cfg.dropout)
        self.gcn = [GCNLayer(rng, d, d) for _ in range(cfg.n_gcn_layers)]
        self.lstm = LSTM(rng, d, d, cfg.lstm_layers)
        self.head = glorot(rng, d, cfg.k, shape=(cfg.k, d))
        self.head_bias = zeros(cfg.k)

    def station_embeddings(self, x_past, x_cov) -> Tensor:
        """(B, T, N, d) per-station, per-hour encoder output."""
        x = self.features.node_slots(x_past, x_cov)
        b, t, n, f = x.shape
        seqs = Tensor(x.transpose(0, 2, 1, 3).reshape(b * n, t, f))
        enc = self.encoder(self.embed(seqs), self.drop_rng)
        return enc.reshape(b, n, t, -1).transpose(0, 2, 1, 3)

    def net(self, x_past, x_cov):
        cfg = self.config
        h = self.station_embeddings(x_past, x_cov)
        adjacency = self.adjacency.astype(h.dtype)
        for layer in self.gcn:
            h = layer(h, adjacency)
        h = h[:, :, self.features.target_nodes, :].transpose(0, 2, 1, 3)
        h = self.lstm(h)[:, :, cfg.w :, :]
        h = dropout(h, cfg.dropout, self.drop_rng)
        y = (h * self.head).sum(axis=-1) + self.head_bias
        return y.transpose(0, 2, 1)
