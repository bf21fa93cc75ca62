"""Training loops, configuration, metrics, and checkpointing.

Every run is a pure function of (dataset, config): a single seed feeds
named substreams (``init``, ``shuffle``, ``layer-draw``), the epoch
schedule is deterministic, and metrics lines are written with a stable
key order, so identical inputs produce bit-identical metrics files.
Wall-clock timings go to the log, never into metrics files.

Checkpoints (``.npz``) round-trip parameters, Adam state, substream
states, and the config hash exactly; resuming from one reproduces the
uninterrupted trajectory bit for bit.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Iterable

import numpy as np

from . import tensor as T
from .data import Dataset, make_batch
from .encoder import Encoder
from .errors import ConfigError, NumericError
from .infomax import Discriminator, unsup_loss
from .rng import RunRng
from .semisup import SemiModel, combined_terms, star_terms
from .tensor import AdamState, adam_step, zero_grads

log = logging.getLogger(__name__)

MODES = ("unsup", "semi-combined", "semi-star")


@dataclass
class TrainConfig:
    """Hyperparameters and run plumbing for one training run.

    ``lam`` is required for the semi modes (and ignored by ``unsup``).
    ``checkpoint_path``/``metrics_path`` do not affect the trajectory and
    are excluded from the config hash.
    """

    mode: str = "unsup"
    num_layers: int = 3
    hidden_dim: int = 32
    lr: float = 1e-3
    epochs: int = 100
    batch_size: int = 128
    lam: float | None = None
    feature_mode: str = "degree"
    degree_cap: int = 6
    seed: int = 0
    transfer_size_weight: bool = True
    transfer_all_layers: bool = False
    checkpoint_path: str | None = None
    metrics_path: str | None = None

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        for name in ("num_layers", "hidden_dim", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.mode != "unsup":
            if self.lam is None:
                raise ConfigError(f"mode {self.mode!r} requires lambda")
            if self.lam < 0:
                raise ConfigError(f"lambda must be >= 0, got {self.lam}")
        if self.feature_mode not in ("degree", "node-labels"):
            raise ConfigError(f"unknown feature mode {self.feature_mode!r}")

    def hash(self) -> str:
        # epochs is a stopping point, not a trajectory parameter: a run may
        # resume from a shorter run's checkpoint. Paths never shape training.
        fields = {k: v for k, v in asdict(self).items()
                  if k not in ("checkpoint_path", "metrics_path", "epochs")}
        blob = "\n".join(f"{k}={fields[k]!r}" for k in sorted(fields))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


@dataclass
class MetricsRecord:
    """Per-epoch loss terms; the total carries lambda already applied."""

    epoch: int
    loss_total: float
    loss_sup: float
    loss_unsup: float
    loss_transfer: float
    val_mae: float | None
    seed: int
    config_hash: str

    def to_json_line(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json_line(cls, line: str) -> "MetricsRecord":
        return cls(**json.loads(line))


class _MetricsWriter:
    def __init__(self, path: str | None, append: bool):
        self.fh = open(path, "a" if append else "w", encoding="utf-8") if path else None

    def write(self, record: MetricsRecord) -> None:
        if self.fh:
            self.fh.write(record.to_json_line() + "\n")
            self.fh.flush()

    def close(self) -> None:
        if self.fh:
            self.fh.close()


def _epoch_batches(n: int, batch_size: int, rng: np.random.Generator,
                   require_pairs: bool) -> Iterable[np.ndarray]:
    """Shuffled index batches; size-1 remainders are dropped when pairs
    are required (cross-graph negatives need at least 2 graphs)."""
    perm = rng.permutation(n)
    batches = []
    for start in range(0, n, batch_size):
        chunk = perm[start:start + batch_size]
        if require_pairs and chunk.shape[0] < 2:
            log.info("dropping final batch of size 1 (no negatives possible)")
            continue
        batches.append(chunk)
    return batches


def _check_finite(value: float, what: str) -> float:
    if not np.isfinite(value):
        raise NumericError(f"non-finite {what}: {value}")
    return value


# ---------------------------------------------------------------------------
# Model construction and checkpoint plumbing

def build_unsup_model(config: TrainConfig, feature_dim: int):
    """Encoder and discriminator with seed-determined initialization."""
    rng = RunRng(config.seed).get("init")
    encoder = Encoder(feature_dim, config.hidden_dim, config.num_layers, rng)
    disc = Discriminator(encoder.embedding_dim, rng)
    return encoder, disc


def build_semi_model(config: TrainConfig, feature_dim: int,
                     target_dim: int) -> SemiModel:
    rng = RunRng(config.seed).get("init")
    return SemiModel(feature_dim, config.hidden_dim, config.num_layers,
                     target_dim, rng, lam=config.lam,
                     transfer_size_weight=config.transfer_size_weight,
                     transfer_all_layers=config.transfer_all_layers)


def checkpoint_save(path: str, *, config: TrainConfig, params: T.Params,
                    adam: AdamState, rng: RunRng, epoch: int, kind: str,
                    data_meta: dict, best: dict | None = None,
                    best_params: list[np.ndarray] | None = None) -> None:
    """Write a versioned checkpoint that round-trips all run state exactly."""
    meta = {
        "version": 1,
        "kind": kind,
        "config": asdict(config),
        "config_hash": config.hash(),
        "epoch": epoch,
        "adam_t": adam.t,
        "rng": rng.state(),
        "param_names": [name for name, _ in params],
        "data_meta": data_meta,
        "best": best,
    }
    arrays = {}
    for i, (_, p) in enumerate(params):
        arrays[f"param_{i:04d}"] = p.values
        arrays[f"adam_m_{i:04d}"] = adam.m[i]
        arrays[f"adam_v_{i:04d}"] = adam.v[i]
    if best_params is not None:
        for i, arr in enumerate(best_params):
            arrays[f"best_{i:04d}"] = arr
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.frombuffer(
            json.dumps(meta).encode("utf-8"), dtype=np.uint8), **arrays)


def checkpoint_load(path: str, expect_config: TrainConfig | None = None) -> dict:
    """Read a checkpoint; refuses to load under a different config hash."""
    with np.load(path) as npz:
        meta = json.loads(bytes(npz["meta"]).decode("utf-8"))
        if meta.get("version") != 1:
            raise ConfigError(f"unsupported checkpoint version {meta.get('version')}")
        if expect_config is not None and meta["config_hash"] != expect_config.hash():
            raise ConfigError(
                "config-hash mismatch: checkpoint was written under hash "
                f"{meta['config_hash']}, current config hashes to {expect_config.hash()}"
            )
        count = len(meta["param_names"])
        meta["param_values"] = [npz[f"param_{i:04d}"] for i in range(count)]
        meta["adam_m"] = [npz[f"adam_m_{i:04d}"] for i in range(count)]
        meta["adam_v"] = [npz[f"adam_v_{i:04d}"] for i in range(count)]
        if f"best_{0:04d}" in npz.files:
            meta["best_params"] = [npz[f"best_{i:04d}"] for i in range(count)]
    return meta


def _restore(params: T.Params, adam: AdamState, rng: RunRng, state: dict) -> int:
    names = [name for name, _ in params]
    if names != state["param_names"]:
        raise ConfigError("checkpoint parameter names do not match the model")
    for (_, p), values in zip(params, state["param_values"]):
        p.values[...] = values
    for i in range(len(params)):
        adam.m[i][...] = state["adam_m"][i]
        adam.v[i][...] = state["adam_v"][i]
    adam.t = state["adam_t"]
    rng.set_state(state["rng"])
    return int(state["epoch"])


# ---------------------------------------------------------------------------
# Unsupervised training

def train_unsupervised(dataset: Dataset, config: TrainConfig,
                       resume: str | None = None):
    """Optimize encoder and discriminator on the pair loss over the dataset.

    Returns (encoder, discriminator, metrics records). Fully reproducible
    from (dataset, config); ``resume`` continues from a checkpoint written
    by an identical configuration.
    """
    config.validate()
    if config.mode != "unsup":
        raise ConfigError(f"train_unsupervised called with mode {config.mode!r}")
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    if len(dataset) < 2 or (config.batch_size == 1):
        raise ConfigError(
            "every batch would have fewer than 2 graphs; no negative pairs"
        )

    encoder, disc = build_unsup_model(config, dataset.feature_dim)
    params = encoder.parameters("enc") + disc.parameters("disc")
    adam = AdamState.for_params(params)
    rng = RunRng(config.seed)
    rng.get("init")  # materialized during build; registered for state dumps
    start_epoch = 0
    if resume is not None:
        state = checkpoint_load(resume, expect_config=config)
        start_epoch = _restore(params, adam, rng, state)

    records: list[MetricsRecord] = []
    writer = _MetricsWriter(config.metrics_path, append=start_epoch > 0)
    shuffle = rng.get("shuffle")
    try:
        for epoch in range(start_epoch + 1, config.epochs + 1):
            t0 = time.perf_counter()
            losses = []
            for chunk in _epoch_batches(len(dataset), config.batch_size,
                                        shuffle, require_pairs=True):
                batch = make_batch(dataset.subset(chunk))
                zero_grads(params)
                loss = unsup_loss(encoder, disc, batch)
                losses.append(_check_finite(loss.item(), "loss"))
                T.backward(loss)
                adam_step(params, adam, config.lr)
            if not losses:
                raise ConfigError("all batches degenerate (fewer than 2 graphs)")
            mean_loss = float(np.mean(losses))
            record = MetricsRecord(
                epoch=epoch, loss_total=mean_loss, loss_sup=0.0,
                loss_unsup=mean_loss, loss_transfer=0.0, val_mae=None,
                seed=config.seed, config_hash=config.hash())
            records.append(record)
            writer.write(record)
            log.info("epoch %d loss %.6f (%.2fs)", epoch, mean_loss,
                     time.perf_counter() - t0)
            if config.checkpoint_path:
                checkpoint_save(
                    config.checkpoint_path, config=config, params=params,
                    adam=adam, rng=rng, epoch=epoch, kind="unsup",
                    data_meta={"feature_dim": dataset.feature_dim})
    finally:
        writer.close()
    return encoder, disc, records


# ---------------------------------------------------------------------------
# Semi-supervised training

def _val_mae(model: SemiModel, valid: Dataset, batch_size: int) -> float:
    errors = []
    for start in range(0, len(valid), batch_size):
        batch = make_batch(valid.graphs[start:start + batch_size])
        errors.append(np.abs(model.predict(batch) - batch.targets))
    return float(np.concatenate(errors).mean())


def train_semisupervised(labeled: Dataset, unlabeled: Dataset | None,
                         valid: Dataset | None, config: TrainConfig,
                         resume: str | None = None):
    """Alternating labeled/unlabeled batches on the chosen semi objective.

    Each step pairs one labeled batch with one unlabeled batch (sampled
    without replacement within the step); validation MAE is computed after
    every epoch and the best-validation parameters are restored into the
    returned model. Returns (model, metrics records).
    """
    config.validate()
    if config.mode not in ("semi-combined", "semi-star"):
        raise ConfigError(f"train_semisupervised called with mode {config.mode!r}")
    if labeled is None or len(labeled) == 0:
        raise ValueError("labeled dataset is empty")
    if labeled.target_dim is None:
        raise ValueError("labeled dataset carries no regression targets")

    model = build_semi_model(config, labeled.feature_dim, labeled.target_dim)
    params = model.parameters()
    adam = AdamState.for_params(params)
    rng = RunRng(config.seed)
    rng.get("init")
    start_epoch = 0
    best = {"val_mae": None, "epoch": None}
    best_params = None
    if resume is not None:
        state = checkpoint_load(resume, expect_config=config)
        start_epoch = _restore(params, adam, rng, state)
        if state.get("best") and state["best"].get("val_mae") is not None:
            best = state["best"]
            best_params = state.get("best_params")

    n_unlab = len(unlabeled) if unlabeled is not None else 0
    records: list[MetricsRecord] = []
    writer = _MetricsWriter(config.metrics_path, append=start_epoch > 0)
    shuffle = rng.get("shuffle")
    layer_draw = rng.get("layer-draw")
    try:
        for epoch in range(start_epoch + 1, config.epochs + 1):
            t0 = time.perf_counter()
            sup_vals, uns_vals, tr_vals, tot_vals = [], [], [], []
            for chunk in _epoch_batches(len(labeled), config.batch_size,
                                        shuffle, require_pairs=False):
                lab_batch = make_batch(labeled.subset(chunk))
                unlab_batch = None
                if n_unlab:
                    take = min(config.batch_size, n_unlab)
                    idx = shuffle.choice(n_unlab, size=take, replace=False)
                    unlab_batch = make_batch(unlabeled.subset(idx))
                zero_grads(params)
                if config.mode == "semi-combined":
                    sup, uns = combined_terms(model, lab_batch, unlab_batch)
                    transfer = None
                else:
                    sup, uns, transfer, _ = star_terms(
                        model, lab_batch, unlab_batch, layer_draw)
                total = sup
                if uns is not None:
                    weight = config.lam if config.mode == "semi-combined" else 1.0
                    total = T.add(total, T.scale(uns, weight))
                if transfer is not None:
                    total = T.add(total, T.scale(transfer, config.lam))
                sup_vals.append(_check_finite(sup.item(), "supervised loss"))
                uns_vals.append(uns.item() if uns is not None else 0.0)
                tr_vals.append(transfer.item() if transfer is not None else 0.0)
                tot_vals.append(_check_finite(total.item(), "total loss"))
                T.backward(total)
                adam_step(params, adam, config.lr)

            val = _val_mae(model, valid, config.batch_size) if valid else None
            if val is not None and (best["val_mae"] is None or val < best["val_mae"]):
                best = {"val_mae": val, "epoch": epoch}
                best_params = [p.values.copy() for _, p in params]
            record = MetricsRecord(
                epoch=epoch, loss_total=float(np.mean(tot_vals)),
                loss_sup=float(np.mean(sup_vals)),
                loss_unsup=float(np.mean(uns_vals)),
                loss_transfer=float(np.mean(tr_vals)),
                val_mae=val, seed=config.seed, config_hash=config.hash())
            records.append(record)
            writer.write(record)
            log.info("epoch %d total %.6f val_mae %s (%.2fs)", epoch,
                     record.loss_total, f"{val:.4f}" if val is not None else "-",
                     time.perf_counter() - t0)
            if config.checkpoint_path:
                checkpoint_save(
                    config.checkpoint_path, config=config, params=params,
                    adam=adam, rng=rng, epoch=epoch, kind="semi",
                    data_meta={"feature_dim": labeled.feature_dim,
                               "target_dim": labeled.target_dim},
                    best=best, best_params=best_params)
    finally:
        writer.close()

    if best_params is not None:
        for (_, p), values in zip(params, best_params):
            p.values[...] = values
        log.info("restored best checkpoint: epoch %s val_mae %.4f",
                 best["epoch"], best["val_mae"])
    return model, records
