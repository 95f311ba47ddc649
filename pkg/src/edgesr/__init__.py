"""Edge-guided two-stage single-image super-resolution.

Stage one predicts a high-resolution edge map from the low-resolution image
and its Canny edges; stage two fills a zero-inserted high-resolution image
guided by those edges.
"""
from .checkpoint import Checkpoint, CheckpointError
from .imaging import canny, degrade, interpolate, offset_upsample, to_grayscale
from .losses import ConfigError, LossWeights
from .metrics import MetricsReport, edge_precision_recall, psnr, ssim
from .networks import edge_discriminator, edge_generator, image_discriminator, image_generator
from .training import Pipeline, TrainConfig, train_edge_stage, train_sr_stage

__version__ = "0.1.0"
