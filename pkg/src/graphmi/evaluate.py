"""Downstream evaluation: embeddings, cross-validated classification, MAE.

The downstream classifier is an L2-regularized multinomial logistic
regression fitted by full-batch adaptive gradient descent — deterministic
given (embeddings, labels, seed). Its C grid mirrors inverse-regularization
strengths; features are standardized on each training fold only. Reports
state this classifier choice in their header.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from .data import Dataset, kfold_split, make_batch
from .encoder import Encoder
from .errors import DataFormatError, ShapeError

log = logging.getLogger(__name__)

C_GRID = (1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3)


@dataclass
class EmbeddingMatrix:
    """Graph embeddings, row order aligned to the dataset's graph order."""

    matrix: np.ndarray
    dim: int

    def __post_init__(self):
        if not np.all(np.isfinite(self.matrix)):
            raise ValueError("embedding matrix contains non-finite entries")


def embed_dataset(encoder: Encoder, dataset: Dataset,
                  batch_size: int = 32) -> EmbeddingMatrix:
    """Graph vectors under frozen parameters; batch size does not matter."""
    if dataset.feature_dim != encoder.feature_dim:
        raise ShapeError(
            f"dataset feature width {dataset.feature_dim} != encoder "
            f"width {encoder.feature_dim}"
        )
    rows = []
    for start in range(0, len(dataset), batch_size):
        batch = make_batch(dataset.graphs[start:start + batch_size])
        rows.append(encoder.encode(batch).global_.values)
    return EmbeddingMatrix(np.concatenate(rows, axis=0), encoder.embedding_dim)


def save_embeddings(emb: EmbeddingMatrix, path: str) -> None:
    """Text matrix: one header line (rows, cols, dim), one row per line."""
    r, c = emb.matrix.shape
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"graphmi-embeddings v1 {r} {c} {emb.dim}\n")
        for row in emb.matrix:
            fh.write(" ".join(repr(float(x)) for x in row) + "\n")


def load_embeddings(path: str) -> EmbeddingMatrix:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if header[:2] != ["graphmi-embeddings", "v1"] or len(header) != 5:
            raise DataFormatError(f"{path}: not a graphmi-embeddings v1 file")
        r, c, dim = int(header[2]), int(header[3]), int(header[4])
        matrix = np.array([[float(x) for x in fh.readline().split()]
                           for _ in range(r)])
    if matrix.shape != (r, c):
        raise DataFormatError(f"{path}: expected {r}x{c} matrix")
    return EmbeddingMatrix(matrix, dim)


# ---------------------------------------------------------------------------
# Logistic regression downstream classifier

def _fit_logistic(x: np.ndarray, y: np.ndarray, num_classes: int, c: float,
                  iters: int = 300, lr: float = 0.1):
    """Full-batch softmax regression with L2 strength 1/(c*n); zero init,
    adaptive moments, fully deterministic."""
    n, d = x.shape
    w = np.zeros((d, num_classes))
    b = np.zeros((1, num_classes))
    onehot = np.zeros((n, num_classes))
    onehot[np.arange(n), y] = 1.0
    mw = np.zeros_like(w); vw = np.zeros_like(w)
    mb = np.zeros_like(b); vb = np.zeros_like(b)
    b1, b2, eps = 0.9, 0.999, 1e-8
    for t in range(1, iters + 1):
        logits = x @ w + b
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        g = (p - onehot) / n
        gw = x.T @ g + w / (c * n)
        gb = g.sum(axis=0, keepdims=True)
        for grad, buf_m, buf_v, param in ((gw, mw, vw, w), (gb, mb, vb, b)):
            buf_m *= b1; buf_m += (1 - b1) * grad
            buf_v *= b2; buf_v += (1 - b2) * grad * grad
            param -= lr * (buf_m / (1 - b1 ** t)) / (
                np.sqrt(buf_v / (1 - b2 ** t)) + eps)
    return w, b


def _predict_logistic(w, b, x):
    return np.argmax(x @ w + b, axis=1)


def _standardizer(x: np.ndarray):
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    sd = np.where(sd < 1e-12, 1.0, sd)
    return lambda z: (z - mu) / sd


def logistic_cv(emb: EmbeddingMatrix | np.ndarray, labels: np.ndarray,
                k: int = 10, seed: int = 0, c_grid=C_GRID):
    """k-fold cross-validated accuracy of the logistic classifier.

    Per fold, features are standardized on the training split, C is picked
    by accuracy on a held-out 10% of that split, and the classifier is
    refitted on the full split. Folds whose training split misses a class
    are skipped with a warning. Returns (mean, std, fold accuracies).
    """
    x = emb.matrix if isinstance(emb, EmbeddingMatrix) else np.asarray(emb, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape[0] != x.shape[0]:
        raise ValueError(f"{labels.shape[0]} labels for {x.shape[0]} embeddings")
    num_classes = int(labels.max()) + 1
    accs = []
    for fold, (train_idx, test_idx) in enumerate(kfold_split(len(labels), k, seed)):
        y_train = labels[train_idx]
        if len(np.unique(y_train)) < num_classes:
            log.warning("fold %d training split misses a class; skipped", fold)
            continue
        norm = _standardizer(x[train_idx])
        x_train, x_test = norm(x[train_idx]), norm(x[test_idx])

        inner_rng = np.random.default_rng(np.random.SeedSequence([seed, fold]))
        perm = inner_rng.permutation(len(train_idx))
        n_hold = max(1, len(train_idx) // 10)
        hold, fit = perm[:n_hold], perm[n_hold:]
        best_c, best_acc = None, -1.0
        if len(np.unique(y_train[fit])) == num_classes:
            for c in c_grid:
                w, b = _fit_logistic(x_train[fit], y_train[fit], num_classes, c)
                acc = float(np.mean(
                    _predict_logistic(w, b, x_train[hold]) == y_train[hold]))
                if acc > best_acc:
                    best_c, best_acc = c, acc
        else:
            best_c = c_grid[len(c_grid) // 2]
            log.warning("fold %d inner split misses a class; using C=%g",
                        fold, best_c)
        w, b = _fit_logistic(x_train, y_train, num_classes, best_c)
        accs.append(float(np.mean(_predict_logistic(w, b, x_test) == labels[test_idx])))
    if not accs:
        raise ValueError("no usable folds")
    return float(np.mean(accs)), float(np.std(accs)), accs


def majority_rate(labels: np.ndarray) -> float:
    """Accuracy of always predicting the most frequent class."""
    labels = np.asarray(labels)
    _, counts = np.unique(labels, return_counts=True)
    return float(counts.max() / labels.shape[0])


# ---------------------------------------------------------------------------
# Regression metrics

def mae(predictions: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Mean absolute error per target dimension."""
    predictions = np.asarray(predictions, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if predictions.shape != targets.shape:
        raise ShapeError(
            f"mae: shapes {predictions.shape} and {targets.shape} differ"
        )
    return np.abs(predictions - targets).mean(axis=0)


# ---------------------------------------------------------------------------
# Report formatting

REPORT_HEADER = (
    "# graphmi report\n"
    "# downstream classifier: L2-regularized multinomial logistic regression\n"
    "# (C selected per fold from a held-out tenth of the training split;\n"
    "#  features standardized on training folds only)\n"
)


def format_accuracy_table(rows: list[dict]) -> str:
    """Rows like {'name': ..., 'mean_acc': 0.8901, 'std_acc': 0.0113}."""
    lines = ["name                          accuracy"]
    for row in rows:
        acc = f"{100 * row['mean_acc']:.2f} ± {100 * row['std_acc']:.2f}"
        lines.append(f"{row['name']:<28}  {acc}")
    return "\n".join(lines) + "\n"


def format_mae_table(rows: list[dict]) -> str:
    """Rows like {'name': ..., 'mae': float, 'mae_raw': float or None,
    'error_ratio': float or None}; ratios < 1 are starred."""
    lines = ["name                          mae        mae(raw)   error-ratio"]
    for row in rows:
        ratio = row.get("error_ratio")
        if ratio is None:
            ratio_s = "-"
        else:
            ratio_s = f"{ratio:.2f}"
            if ratio < 1.0:
                ratio_s = f"*{ratio_s}*"
        raw = row.get("mae_raw")
        raw_s = f"{raw:.4f}" if raw is not None else "-"
        lines.append(f"{row['name']:<28}  {row['mae']:.4f}     {raw_s:<9}  {ratio_s}")
    return "\n".join(lines) + "\n"


def write_report(path_prefix: str, tables: list[str], records: list[dict]) -> None:
    """Aligned text to ``<prefix>.txt`` plus one JSON record per line to
    ``<prefix>.jsonl``."""
    with open(path_prefix + ".txt", "w", encoding="utf-8") as fh:
        fh.write(REPORT_HEADER)
        for table in tables:
            fh.write("\n" + table)
    with open(path_prefix + ".jsonl", "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
