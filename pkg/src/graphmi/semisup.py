"""Semi-supervised objectives: single-encoder and dual-encoder variants.

The single-encoder (``semi-combined``) objective adds the unsupervised
pair loss, weighted by lambda, to the regression loss on the same encoder.
The dual-encoder (``semi-star``) objective keeps a separate unsupervised
encoder and transfers its knowledge to the supervised one by maximizing
mutual information between the two encoders' per-layer graph vectors —
one uniformly drawn layer per optimization step (or all layers when
configured) — on top of the supervised and unsupervised terms.
"""

from __future__ import annotations

import logging

import numpy as np

from . import tensor as T
from .data import Graph, GraphBatch, make_batch
from .encoder import Encoder
from .errors import ShapeError
from .infomax import Discriminator, jsd_mi_loss
from .tensor import Tensor

log = logging.getLogger(__name__)


class RegressionHead:
    """Linear map from graph vectors to targets."""

    def __init__(self, in_dim: int, target_dim: int, rng: np.random.Generator):
        self.w = T.glorot(in_dim, target_dim, rng)
        self.b = T.zeros(1, target_dim)

    def parameters(self, prefix: str) -> T.Params:
        return [(f"{prefix}.w", self.w), (f"{prefix}.b", self.b)]

    def forward(self, global_: Tensor) -> Tensor:
        return T.add_bias(T.matmul(global_, self.w), self.b)


class SemiModel:
    """Two same-architecture encoders, a regression head, discriminators.

    ``sup_encoder`` feeds the head; ``unsup_encoder`` carries the pair loss
    via ``patch_disc``; ``layer_discs[k]`` scores layer-k graph-vector pairs
    across the two encoders for the transfer term.
    """

    def __init__(self, feature_dim: int, hidden_dim: int, num_layers: int,
                 target_dim: int, rng: np.random.Generator, lam: float,
                 transfer_size_weight: bool = True,
                 transfer_all_layers: bool = False):
        if lam < 0:
            raise ValueError(f"lambda must be >= 0, got {lam}")
        self.lam = float(lam)
        self.transfer_size_weight = transfer_size_weight
        self.transfer_all_layers = transfer_all_layers
        self.sup_encoder = Encoder(feature_dim, hidden_dim, num_layers, rng)
        self.unsup_encoder = Encoder(feature_dim, hidden_dim, num_layers, rng)
        self.head = RegressionHead(self.sup_encoder.embedding_dim, target_dim, rng)
        self.patch_disc = Discriminator(self.unsup_encoder.embedding_dim, rng)
        self.layer_discs = [Discriminator(hidden_dim, rng)
                            for _ in range(num_layers)]

    @property
    def num_layers(self) -> int:
        return self.sup_encoder.num_layers

    def parameters(self) -> T.Params:
        params = self.sup_encoder.parameters("sup")
        params += self.unsup_encoder.parameters("uns")
        params += self.head.parameters("head")
        params += self.patch_disc.parameters("pdisc")
        for k, disc in enumerate(self.layer_discs):
            params += disc.parameters(f"ldisc{k}")
        return params

    def predict(self, batch: GraphBatch) -> np.ndarray:
        """Head outputs for a batch (values only, no tape use intended)."""
        enc = self.sup_encoder.encode(batch)
        return self.head.forward(enc.global_).values


def merge_batches(labeled: GraphBatch | None,
                  unlabeled: GraphBatch | None,
                  graphs_l: list[Graph] | None = None,
                  graphs_u: list[Graph] | None = None) -> GraphBatch:
    """Disjoint union of two batches (labeled graphs first)."""
    if graphs_l is not None or graphs_u is not None:
        return make_batch((graphs_l or []) + (graphs_u or []))
    if labeled is None and unlabeled is None:
        raise ValueError("both batches empty")
    if labeled is None:
        return unlabeled
    if unlabeled is None:
        return labeled
    if labeled.feature_dim != unlabeled.feature_dim:
        raise ShapeError(
            f"feature widths differ: {labeled.feature_dim} vs {unlabeled.feature_dim}"
        )
    off = labeled.total_nodes
    return GraphBatch(
        total_nodes=off + unlabeled.total_nodes,
        node_features=np.concatenate(
            [labeled.node_features, unlabeled.node_features], axis=0),
        edge_src=np.concatenate([labeled.edge_src, unlabeled.edge_src + off]),
        edge_dst=np.concatenate([labeled.edge_dst, unlabeled.edge_dst + off]),
        node2graph=np.concatenate(
            [labeled.node2graph, unlabeled.node2graph + labeled.num_graphs]),
        num_graphs=labeled.num_graphs + unlabeled.num_graphs,
        graph_sizes=np.concatenate([labeled.graph_sizes, unlabeled.graph_sizes]),
    )


def supervised_loss(model: SemiModel, batch: GraphBatch) -> Tensor:
    """Mean squared error of the head over graphs and target dimensions."""
    if batch.targets is None:
        raise ValueError("supervised_loss: batch carries no targets")
    preds = model.head.forward(model.sup_encoder.encode(batch).global_)
    diff = T.sub(preds, Tensor(batch.targets))
    return T.scale(T.sum_all(T.square(diff)), 1.0 / batch.targets.size)


def _pair_loss(model: SemiModel, encoder: Encoder,
               batch: GraphBatch) -> Tensor:
    enc = encoder.encode(batch)
    scores = model.patch_disc.score_pairs(enc.patch, enc.global_)
    return jsd_mi_loss(scores, batch.node2graph, batch.graph_sizes)


def combined_terms(model: SemiModel, labeled: GraphBatch | None,
                   unlabeled: GraphBatch | None):
    """(supervised term, unsupervised term) of the single-encoder objective.

    The unsupervised term runs on labeled + unlabeled through the *same*
    encoder as the head; it is None when lambda is 0 (zero contribution).
    """
    sup = supervised_loss(model, labeled) if labeled is not None else None
    uns = None
    if model.lam != 0.0:
        uns = _pair_loss(model, model.sup_encoder, merge_batches(labeled, unlabeled))
    return sup, uns


def combined_loss(model: SemiModel, labeled: GraphBatch | None,
                  unlabeled: GraphBatch | None) -> Tensor:
    sup, uns = combined_terms(model, labeled, unlabeled)
    if sup is None and uns is None:
        raise ValueError("combined_loss: nothing to optimize (no data, lambda=0)")
    if sup is None:
        return T.scale(uns, model.lam)
    if uns is None:
        return sup
    return T.add(sup, T.scale(uns, model.lam))


def transfer_pair_weights(sizes: np.ndarray, size_weight: bool):
    """Masks for a B x B cross-encoder score matrix, positives on the diagonal.

    Column j belongs to graph j: one positive (j, j) and B - 1 negatives
    (i, j), averaged, optionally weighted by 1 / |G_j|, then averaged over
    the batch.
    """
    b = sizes.shape[0]
    w = (1.0 / sizes) if size_weight else np.ones(b)
    pos = np.diag(w / b)
    if b == 1:
        neg = np.zeros((1, 1))
    else:
        neg = (1.0 - np.eye(b)) * (w / (b * (b - 1.0)))[None, :]
    return pos, neg


def transfer_loss(model: SemiModel, sup_globals: Tensor, uns_globals: Tensor,
                  sizes: np.ndarray, layer: int) -> Tensor:
    """JSD loss aligning the two encoders' layer-``layer`` graph vectors."""
    scores = model.layer_discs[layer].score_pairs(sup_globals, uns_globals)
    if sizes.shape[0] == 1:
        log.warning("transfer term with a single graph: no negative pairs")
    w_pos, w_neg = transfer_pair_weights(sizes, model.transfer_size_weight)
    pos = T.sum_all(T.mul(Tensor(w_pos), T.softplus(T.negate(scores))))
    neg = T.sum_all(T.mul(Tensor(w_neg), T.softplus(scores)))
    return T.add(pos, neg)


def draw_layer(rng: np.random.Generator, num_layers: int) -> int:
    """Uniform layer choice for the per-step transfer term."""
    return int(rng.integers(num_layers))


def star_terms(model: SemiModel, labeled: GraphBatch | None,
               unlabeled: GraphBatch | None, rng: np.random.Generator):
    """(supervised, unsupervised, transfer, drawn layer) for the dual-encoder loss.

    The layer is drawn uniformly per call even when lambda is 0 (the draw
    belongs to the step protocol); the transfer term is None in that case.
    """
    term1 = supervised_loss(model, labeled) if labeled is not None else None
    combined = merge_batches(labeled, unlabeled)
    term2 = _pair_loss(model, model.unsup_encoder, combined)
    layer = draw_layer(rng, model.num_layers)
    term3 = None
    if model.lam != 0.0:
        enc_sup = model.sup_encoder.encode(combined)
        enc_uns = model.unsup_encoder.encode(combined)
        if model.transfer_all_layers:
            parts = [transfer_loss(model, enc_sup.per_layer_global[k],
                                   enc_uns.per_layer_global[k],
                                   combined.graph_sizes, k)
                     for k in range(model.num_layers)]
            acc = parts[0]
            for p in parts[1:]:
                acc = T.add(acc, p)
            term3 = T.scale(acc, 1.0 / model.num_layers)
        else:
            term3 = transfer_loss(model, enc_sup.per_layer_global[layer],
                                  enc_uns.per_layer_global[layer],
                                  combined.graph_sizes, layer)
    return term1, term2, term3, layer


def star_loss(model: SemiModel, labeled: GraphBatch | None,
              unlabeled: GraphBatch | None,
              rng: np.random.Generator) -> Tensor:
    """term1 + term2 + lambda * term3 as a minimizable scalar."""
    term1, term2, term3, _ = star_terms(model, labeled, unlabeled, rng)
    total = term2 if term1 is None else T.add(term1, term2)
    if term3 is not None:
        total = T.add(total, T.scale(term3, model.lam))
    return total


def error_ratio(model_mae: float, supervised_mae: float) -> float:
    """Model MAE relative to the supervised baseline; < 1 is an improvement."""
    if supervised_mae <= 0:
        raise ValueError(f"supervised MAE must be positive, got {supervised_mae}")
    return model_mae / supervised_mae
