"""U-Net encoder-backbone toolkit for binary polyp segmentation."""
from .augment import AugmentationPolicy, AugmentOp, apply_policy
from .dataset import DatasetManifest, ImageSample, load_sample, scan_dataset, split_manifest
from .evaluation import MetricsReport, compare, evaluate, predict
from .metrics import ConfusionCounts, MetricsResult, accuracy, binarize, confusion, dice, jaccard
from .models import build_baseline, build_model, forward, list_encoders, load_checkpoint, save_checkpoint
from .preprocess import NormalizationSpec, PreprocessConfig
from .training import TrainConfig, TrainHistory, loss_fn, resume, train

__version__ = "0.1.0"
