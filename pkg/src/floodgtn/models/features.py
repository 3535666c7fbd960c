"""Arrange normalized windows into the input tensors each architecture consumes.

Future water levels are unknown at forecast time, so every representation
that spans the horizon zeroes them and carries a 0/1 "future hour" flag.
"""

from __future__ import annotations

import numpy as np

from ..data import Layout
from ..graph import NODE_KINDS

SLOT_KINDS = ("water-level", "rainfall", "tide", "gate-opening", "pump-flow")
NODE_FEATURES = len(SLOT_KINDS) + 1 + len(NODE_KINDS)


class FeatureMap:
    """Index bookkeeping from frame columns to nodes and slots."""

    def __init__(self, layout: Layout):
        graph = layout.graph
        self.n_nodes = len(graph)
        self.n_channels = layout.n_channels
        self.channel_node = np.array([graph.index(c.node_id) for c in layout.channels])
        self.channel_slot = np.array([SLOT_KINDS.index(c.kind) for c in layout.channels])
        self.level_columns = np.array(layout.level_columns, dtype=int)
        self.covariate_columns = np.array(layout.covariate_columns, dtype=int)
        self.target_nodes = np.array([graph.index(t) for t in graph.targets])
        kind_onehot = np.zeros((self.n_nodes, len(NODE_KINDS)))
        for i, node in enumerate(graph.nodes):
            kind_onehot[i, NODE_KINDS.index(node.kind)] = 1.0
        self.kind_onehot = kind_onehot
        self.is_station = kind_onehot[:, NODE_KINDS.index("water-level-station")]

    def sequence(self, x_past: np.ndarray, x_cov: np.ndarray) -> np.ndarray:
        """(B, w+k, F+1): every channel per hour, future levels zeroed, plus the future flag."""
        b, w, f = x_past.shape
        k = x_cov.shape[1]
        out = np.zeros((b, w + k, f + 1), dtype=x_past.dtype)
        out[:, :w, :f] = x_past
        out[:, w:, self.covariate_columns] = x_cov
        out[:, w:, f] = 1.0
        return out

    def node_slots(self, x_past: np.ndarray, x_cov: np.ndarray) -> np.ndarray:
        """(B, w+k, N, NODE_FEATURES): per-node channel slots, future flag, node-kind one-hot."""
        seq = self.sequence(x_past, x_cov)
        b, t, _ = seq.shape
        out = np.zeros((b, t, self.n_nodes, NODE_FEATURES), dtype=x_past.dtype)
        out[:, :, self.channel_node, self.channel_slot] = seq[:, :, : self.n_channels]
        out[:, :, :, len(SLOT_KINDS)] = seq[:, :, -1:]
        out[:, :, :, len(SLOT_KINDS) + 1 :] = self.kind_onehot
        return out

    def node_levels(self, x_past: np.ndarray) -> np.ndarray:
        """(B, w, N, 2): past water level per node (0 where none) and a station flag."""
        b, w, _ = x_past.shape
        out = np.zeros((b, w, self.n_nodes, 2), dtype=x_past.dtype)
        out[:, :, self.channel_node[self.level_columns], 0] = x_past[:, :, self.level_columns]
        out[:, :, :, 1] = self.is_station
        return out

    def covariate_patches(self, x_past: np.ndarray, x_cov: np.ndarray, patch_len: int) -> np.ndarray:
        """(B, C, P, patch_len): each covariate's past+future trace cut into consecutive patches.

        The trace is zero-padded at its start so its length is a multiple of ``patch_len``.
        """
        trace = np.concatenate([x_past[:, :, self.covariate_columns], x_cov], axis=1).transpose(0, 2, 1)
        b, c, t = trace.shape
        n_patches = -(-t // patch_len)
        out = np.zeros((b, c, n_patches * patch_len), dtype=x_past.dtype)
        out[:, :, n_patches * patch_len - t :] = trace
        return out.reshape(b, c, n_patches, patch_len)
