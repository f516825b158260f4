"""Teacher-guided contrastive feature alignment at desk scale."""

from . import autodiff
from .alignment import AlignmentLoss, ProjectionHead, alignment_loss, infonce_directional
from .data import (
    Dataset,
    Sample,
    batch_iter,
    dataset_stats,
    generate_synthetic,
    read_fixture,
    write_fixture,
)
from .encoders import FixtureTeacher, ImageEncoder, SyntheticTeacher, TextEncoder, patchify
from .fusion import FusionConfig, SentimentLexicon, build_fusion
from .model import AlignmentModel, ModelConfig
from .train_eval import (
    AdamW,
    EpochRecord,
    LossReport,
    MetricsReport,
    TrainConfig,
    evaluate,
    heatmap,
    lr_schedule,
    metrics_from_confusion,
    total_loss,
    train,
)

__version__ = "0.1.0"
