"""Out-of-distribution detection from diffusion denoising-trajectory statistics."""

from .errors import *  # noqa: F401,F403
from .gmm import GmmGrid, GmmModel, fit_em, grid_search, log_likelihood
from .harness import BenchmarkSpec, Dataset, auroc, emit_report, run_benchmark
from .predictors import AnalyticPredictor, GaussianMixtureDataModel, file_predictor
from .schedule import DiffusionSchedule, forward_noise, make_linear_schedule, true_noise
from .scoring import compute_score, mse_trajectory, ssim_map
from .tensor import ImageTensor, normalize, read_tensor_file, resize_bilinear, write_tensor_file
from .trajectory import TrajectoryConfig, TrajectoryRecord, ddim_invert, stochastic_forward

__version__ = "0.1.0"
