"""Unpaired image-to-image translation with semantic consistency."""
from .core_types import IGNORE, ClassTaxonomy, LabeledSample, TaxonomyError, apply_mask, one_hot
from .config import ConfigError, TrainConfig
from .losses import (LossRecord, LossWeights, NonFiniteLossError, adversarial_d_loss, adversarial_g_loss,
                     cycle_loss, identity_loss, seg_consistency_loss, total_generator_loss)
from .semantic_dropout import DropoutConfig, apply_semantic_dropout, get_labels, get_mask
from .models import (DiscriminatorCfg, GeneratorCfg, SegmenterCfg, build_discriminator, build_generator,
                     build_segmenter, discriminate, segment, translate)
from .data import Dataset, augment, load_dataset, sample_unpaired_batch, split_dataset
from .evaluation import GroundTruthEcho, MetricsReport, evaluate_translation, metrics_from_confusion
from .trainer import TrainingError, TrainState, build_state, load_checkpoint, save_checkpoint, train, training_step

__version__ = "0.1.0"
