"""Pair scoring and the Jensen-Shannon mutual-information loss.

The discriminator projects patch and graph vectors through two separate
3-layer feed-forward networks (ReLU after the first two linear maps) with a
linear skip from input to output, then scores every (patch, graph) pair by
a dot product — one matrix product of the projected matrices.

Within a batch of B graphs and N nodes, the N matched pairs are positives;
the remaining B*N - N cross-graph pairs are negatives. The loss averages
softplus terms per graph (positives over its own nodes, negatives over the
other graphs' nodes) and then over the batch, so its scale does not change
with batch size. All scores at zero give loss exactly 2*ln 2.
"""

from __future__ import annotations

import logging

import numpy as np

from . import tensor as T
from .data import GraphBatch
from .encoder import Encoder
from .errors import ShapeError
from .tensor import Tensor

log = logging.getLogger(__name__)


class Projector:
    """3-layer feed-forward net with a linear skip from input to output."""

    def __init__(self, dim: int, rng: np.random.Generator):
        self.dim = dim
        self.w1 = T.glorot(dim, dim, rng)
        self.b1 = T.zeros(1, dim)
        self.w2 = T.glorot(dim, dim, rng)
        self.b2 = T.zeros(1, dim)
        self.w3 = T.glorot(dim, dim, rng)
        self.b3 = T.zeros(1, dim)
        self.w_skip = T.glorot(dim, dim, rng)

    def parameters(self, prefix: str) -> T.Params:
        return [(f"{prefix}.w1", self.w1), (f"{prefix}.b1", self.b1),
                (f"{prefix}.w2", self.w2), (f"{prefix}.b2", self.b2),
                (f"{prefix}.w3", self.w3), (f"{prefix}.b3", self.b3),
                (f"{prefix}.w_skip", self.w_skip)]

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.dim:
            raise ShapeError(f"projector expects width {self.dim}, got {x.shape}")
        h = T.relu(T.add_bias(T.matmul(x, self.w1), self.b1))
        h = T.relu(T.add_bias(T.matmul(h, self.w2), self.b2))
        h = T.add_bias(T.matmul(h, self.w3), self.b3)
        return T.add(h, T.matmul(x, self.w_skip))


class Discriminator:
    """Two projection networks whose outputs are scored by dot products."""

    def __init__(self, dim: int, rng: np.random.Generator):
        self.dim = dim
        self.local_proj = Projector(dim, rng)
        self.global_proj = Projector(dim, rng)

    def parameters(self, prefix: str = "disc") -> T.Params:
        return (self.local_proj.parameters(f"{prefix}.local")
                + self.global_proj.parameters(f"{prefix}.global"))

    def score_pairs(self, patch: Tensor, global_: Tensor) -> Tensor:
        """N x B score matrix: S[i, g] = <local(patch_i), global(graph_g)>."""
        if patch.shape[1] != self.dim or global_.shape[1] != self.dim:
            raise ShapeError(
                f"score_pairs: widths {patch.shape} / {global_.shape} "
                f"do not match discriminator width {self.dim}"
            )
        return T.matmul(self.local_proj.forward(patch),
                        T.transpose(self.global_proj.forward(global_)))


def pair_weights(node2graph: np.ndarray, sizes: np.ndarray):
    """Positive and negative averaging masks for an N x B score matrix.

    Positives weigh each graph's own nodes by 1 / (B * |G_g|); negatives
    weigh the other graphs' nodes by 1 / (B * (N - |G_g|)). Each mask sums
    to 1 (the negative mask is all zero when B = 1).
    """
    n = node2graph.shape[0]
    b = sizes.shape[0]
    member = node2graph[:, None] == np.arange(b)[None, :]
    w_pos = member / (b * sizes)[None, :]
    if b == 1:
        w_neg = np.zeros((n, 1))
    else:
        w_neg = (~member) / (b * (n - sizes))[None, :]
    return w_pos, w_neg


def jsd_mi_loss(scores: Tensor, node2graph: np.ndarray,
                sizes: np.ndarray) -> Tensor:
    """Jensen-Shannon MI loss over a score matrix (lower is better).

    loss = sum(W_pos * sp(-S)) + sum(W_neg * sp(S)); minimizing it raises
    the per-graph MI estimates. With a single graph in the batch there are
    no negatives and the negative term is zero (logged).
    """
    n, b = scores.shape
    if node2graph.shape[0] != n:
        raise ShapeError(
            f"jsd_mi_loss: node2graph length {node2graph.shape[0]} != rows {n}"
        )
    if sizes.shape[0] != b:
        raise ShapeError(f"jsd_mi_loss: {sizes.shape[0]} sizes for {b} columns")
    if b == 1:
        log.warning("batch has a single graph: no negative pairs, "
                    "negative term set to 0")
    w_pos, w_neg = pair_weights(node2graph, sizes)
    pos = T.sum_all(T.mul(Tensor(w_pos), T.softplus(T.negate(scores))))
    neg = T.sum_all(T.mul(Tensor(w_neg), T.softplus(scores)))
    return T.add(pos, neg)


def unsup_loss(encoder: Encoder, disc: Discriminator,
               batch: GraphBatch) -> Tensor:
    """Encode, score all (patch, graph) pairs, and apply the JSD loss."""
    enc = encoder.encode(batch)
    scores = disc.score_pairs(enc.patch, enc.global_)
    return jsd_mi_loss(scores, batch.node2graph, batch.graph_sizes)
