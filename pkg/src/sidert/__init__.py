"""Toy-scale monocular depth estimation with cross-scale attention and multi-scale refinement.

Built on a small numpy reverse-mode autodiff engine (:mod:`sidert.tensor`).
"""

from .data import AugmentConfig, DepthSample, augment, generate_scene, read_dataset, synthetic_dataset, write_dataset
from .decoder import DecoderConfig, MultiStagePrediction, csa_forward, decode, msr_forward, receptive_field_map
from .encoder import EncoderConfig, FeaturePyramid, encode
from .loss import LossConfig, mss_loss, silog_sqrt_loss
from .metrics import MetricReport, aggregate, compute_metrics, eval_protocol
from .model import ModelConfig, SideRT
from .nn import ConfigError
from .tensor import Tensor, backward
from .train import TrainConfig, TrainState, adamw_step, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"
