"""graphmi: whole-graph embeddings by local-global MI maximization."""

from .data import (Dataset, Graph, GraphBatch, build_features, kfold_split,
                   load_dataset, make_batch, parse_tu_dataset, save_dataset,
                   synth_classification, synth_regression, write_tu_dataset)
from .encoder import Encoder, Encoding, GinLayer
from .evaluate import EmbeddingMatrix, embed_dataset, logistic_cv, mae
from .infomax import Discriminator, jsd_mi_loss, unsup_loss
from .semisup import (SemiModel, combined_loss, error_ratio, star_loss,
                      supervised_loss)
from .tensor import AdamState, Tensor, adam_step, backward, zero_grads
from .train import (MetricsRecord, TrainConfig, checkpoint_load,
                    checkpoint_save, train_semisupervised, train_unsupervised)

__version__ = "0.1.0"
__all__ = [name for name in dir() if not name.startswith("_")]
