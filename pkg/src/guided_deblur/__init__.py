"""Conditional diffusion image deblurring with multiscale structure guidance."""

__version__ = "0.1.0"

from .blur import (
    BlurKernel,
    Dataset,
    GenerationConfig,
    apply_blur,
    gen_motion_kernel,
    gen_sharp_image,
    load_dataset,
    make_dataset,
    save_dataset,
)
from .denoiser import UNet, denoising_loss, total_loss
from .estimator import DiffusionDeblurrer, check_image_batch
from .guidance import GuidanceNet, GuidancePyramid, guidance_loss, phi
from .images import (
    downsample,
    from_model_range,
    load_image,
    save_image,
    to_grayscale,
    to_model_range,
)
from .metrics import MetricReport, psnr, ssim, sweep_report
from .sampling import SamplerConfig, grid_sweep, sample, sample_average
from .schedule import DiscreteSchedule, Schedule, discretize, forward_diffuse, make_schedule, sampler_grid
from .training import (
    LossRecord,
    TrainConfig,
    TrainState,
    init_state,
    load_checkpoint,
    loss_ramp,
    lr_at,
    save_checkpoint,
    train,
    train_step,
)

__all__ = [
    "BlurKernel",
    "Dataset",
    "DiffusionDeblurrer",
    "DiscreteSchedule",
    "GenerationConfig",
    "GuidanceNet",
    "GuidancePyramid",
    "LossRecord",
    "MetricReport",
    "SamplerConfig",
    "Schedule",
    "TrainConfig",
    "TrainState",
    "UNet",
    "apply_blur",
    "check_image_batch",
    "denoising_loss",
    "discretize",
    "downsample",
    "forward_diffuse",
    "from_model_range",
    "gen_motion_kernel",
    "gen_sharp_image",
    "grid_sweep",
    "guidance_loss",
    "init_state",
    "load_checkpoint",
    "load_dataset",
    "load_image",
    "loss_ramp",
    "lr_at",
    "make_dataset",
    "make_schedule",
    "phi",
    "psnr",
    "sample",
    "sample_average",
    "sampler_grid",
    "save_checkpoint",
    "save_dataset",
    "save_image",
    "ssim",
    "sweep_report",
    "to_grayscale",
    "to_model_range",
    "total_loss",
    "train",
    "train_step",
]
