from .io import load_denoiser, save_denoiser
from .model import Denoiser, normalize_condition, predict_x0
from .sample import encode_boundary, sample
from .schedule import NoiseSchedule, forward_noise, linear_schedule, symmetric_noise
from .train import TrainConfig, fine_tune, train
from .unet import DenoiserSpec, DenoiserUNet

__all__ = [
    "Denoiser",
    "DenoiserSpec",
    "DenoiserUNet",
    "NoiseSchedule",
    "TrainConfig",
    "encode_boundary",
    "fine_tune",
    "forward_noise",
    "linear_schedule",
    "load_denoiser",
    "normalize_condition",
    "predict_x0",
    "sample",
    "save_denoiser",
    "symmetric_noise",
    "train",
]
