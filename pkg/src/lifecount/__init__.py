"""Lifelong (domain-incremental) density counting on synthetic desk-scale data."""

from .config import AugmentConfig, RunConfig
from .density import DensityMap, build_binary_map, density_from_heads, downsample_density, gaussian_density
from .lifelong import DomainQueues, ReplayViolation, RunResult, RunStats, evaluate_seen, run_lifelong
from .losses import LossBreakdown, LossConfig, bdf_loss, count_loss, distill_loss, l1_count_loss, normalized_reg, pixel_l2_loss
from .metrics import EvalMatrix, mae, mmae, mrmse, nbwt, nbwt_rmse, rmse
from .model import DensityRegressor, FrozenSnapshot, ModelConfig, load_checkpoint, make_optimizer, predict_counts, save_checkpoint, snapshot, train_step
from .synth import AnnotatedImage, CountDistribution, DomainDataset, DomainSpec, augment, crop, generate_domain, hflip, load_dataset, save_dataset
from .transport import CostMatrix, OTParams, OTResult, build_cost_matrix, ot_loss_and_grad, sinkhorn

__version__ = "0.1.0"
