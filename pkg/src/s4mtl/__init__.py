"""Semi-supervised multitask segmentation and classification with a class-aware discriminator."""
from .annealing import TsaConfig, tsa_threshold, tsa_weights
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .data import (DatasetError, DatasetSplit, Sample, SplitError, load_dataset, make_synthetic,
                   preprocess, save_dataset, stratified_split)
from .experiment import ConfigError, load_config, parse_config
from .losses import LossReport, LossWeights, abs_kl_loss, dice_loss, total_D, total_G
from .metrics import average_hausdorff, classification_metrics, segmentation_metrics
from .models import (METHODS, DiscriminatorConfig, GeneratorConfig, ModelParams, build_model)
from .stats import (bland_altman, independent_t, one_way_anova, paired_t, pearson,
                    wilcoxon_signed_rank)
from .trainer import NonFiniteLossError, TrainerConfig, TrainHistory, TrainingError, train, train_baseline
from .transforms import CATALOG, apply_transform, sample_proxy_batch

__version__ = "0.1.0"
