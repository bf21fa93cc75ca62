"""Multi-layer GIN encoder with jumping concatenation and sum readout.

Each layer computes MLP((1 + eps) * h_v + sum of neighbor h_u) with a
two-linear-layer MLP (ReLU between) and eps fixed at 0. Patch vectors are
the column-concatenation of every layer's output; graph vectors are the
per-graph sums of those, kept both per layer and concatenated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import GraphBatch
from .errors import ShapeError
from .tensor import Tensor


@dataclass
class Encoding:
    """All representations produced by one encoder pass over a batch."""

    per_layer_patch: list[Tensor]   # K tensors, N x hidden
    patch: Tensor                   # N x (K * hidden)
    per_layer_global: list[Tensor]  # K tensors, B x hidden
    global_: Tensor                 # B x (K * hidden)


class GinLayer:
    """One GIN aggregation step followed by a 2-layer MLP."""

    def __init__(self, in_dim: int, hidden_dim: int, rng: np.random.Generator):
        self.in_dim = in_dim
        self.hidden_dim = hidden_dim
        self.eps = 0.0
        self.w1 = T.glorot(in_dim, hidden_dim, rng)
        self.b1 = T.zeros(1, hidden_dim)
        self.w2 = T.glorot(hidden_dim, hidden_dim, rng)
        self.b2 = T.zeros(1, hidden_dim)

    def parameters(self, prefix: str) -> T.Params:
        return [(f"{prefix}.w1", self.w1), (f"{prefix}.b1", self.b1),
                (f"{prefix}.w2", self.w2), (f"{prefix}.b2", self.b2)]

    def forward(self, batch: GraphBatch, h_prev: Tensor) -> Tensor:
        if h_prev.shape[1] != self.in_dim:
            raise ShapeError(
                f"gin layer expects width {self.in_dim}, got {h_prev.shape}"
            )
        # Neighbor sum: gather source rows, segment-sum them onto destinations.
        if batch.edge_src.size:
            messages = T.gather_rows(h_prev, batch.edge_src)
            agg = T.segment_sum(messages, batch.edge_dst, batch.total_nodes)
            combined = T.add(T.scale(h_prev, 1.0 + self.eps), agg)
        else:
            combined = T.scale(h_prev, 1.0 + self.eps)
        hidden = T.relu(T.add_bias(T.matmul(combined, self.w1), self.b1))
        return T.add_bias(T.matmul(hidden, self.w2), self.b2)


class Encoder:
    """Stack of K GIN layers; embedding size is K * hidden_dim."""

    def __init__(self, feature_dim: int, hidden_dim: int, num_layers: int,
                 rng: np.random.Generator):
        self.feature_dim = feature_dim
        self.hidden_dim = hidden_dim
        self.num_layers = num_layers
        self.layers = [
            GinLayer(feature_dim if k == 0 else hidden_dim, hidden_dim, rng)
            for k in range(num_layers)
        ]

    @property
    def embedding_dim(self) -> int:
        return self.num_layers * self.hidden_dim

    def parameters(self, prefix: str = "enc") -> T.Params:
        params: T.Params = []
        for k, layer in enumerate(self.layers):
            params.extend(layer.parameters(f"{prefix}.layer{k}"))
        return params

    def encode(self, batch: GraphBatch) -> Encoding:
        """Run all layers and assemble patch and global representations."""
        if batch.node_features.shape[1] != self.feature_dim:
            raise ShapeError(
                f"encoder expects feature width {self.feature_dim}, "
                f"got {batch.node_features.shape}"
            )
        h = Tensor(batch.node_features)
        per_layer_patch = []
        for layer in self.layers:
            h = layer.forward(batch, h)
            per_layer_patch.append(h)
        per_layer_global = [
            T.segment_sum(p, batch.node2graph, batch.num_graphs)
            for p in per_layer_patch
        ]
        return Encoding(
            per_layer_patch=per_layer_patch,
            patch=T.concat_cols(per_layer_patch),
            per_layer_global=per_layer_global,
            global_=T.concat_cols(per_layer_global),
        )
