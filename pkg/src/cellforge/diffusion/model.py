"""Denoiser bundle: network + schedule + condition normalization.

The public prediction contract is numpy-in/numpy-out: estimates of x0 are
clamped to [-1, 1] and diagonal-symmetrized, so downstream quarter
expansion always yields an exactly D4-symmetric cell.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from ..errors import DimensionError
from ..fea import ElasticTensor3
from ..property_space import DEFAULT_RANGES
from .schedule import NoiseSchedule
from .unet import DenoiserSpec, DenoiserUNet

DEFAULT_NORM_RANGES = tuple((float(lo), float(hi)) for lo, hi in DEFAULT_RANGES)


def normalize_condition(tensor, ranges=DEFAULT_NORM_RANGES) -> np.ndarray:
    """Map (c11, c12, c33) onto [0, 1] per the property-space axis ranges."""
    c = np.asarray(
        tensor.as_array() if isinstance(tensor, ElasticTensor3) else tensor, dtype=float
    )
    lo = np.array([r[0] for r in ranges])
    hi = np.array([r[1] for r in ranges])
    return (c - lo) / (hi - lo)


def diagonal_symmetrize(x: torch.Tensor) -> torch.Tensor:
    return 0.5 * (x + x.transpose(-1, -2))


@dataclass
class Denoiser:
    spec: DenoiserSpec
    schedule: NoiseSchedule
    net: DenoiserUNet
    norm_ranges: tuple = DEFAULT_NORM_RANGES
    seed: int = 0

    @classmethod
    def create(cls, spec: DenoiserSpec, schedule: NoiseSchedule, seed: int = 0) -> "Denoiser":
        torch.manual_seed(seed)
        return cls(spec=spec, schedule=schedule, net=DenoiserUNet(spec), seed=seed)

    def predict_batch(
        self,
        x_t: torch.Tensor,
        x_prev: torch.Tensor,
        boundary_img: torch.Tensor,
        t: torch.Tensor,
        cond: torch.Tensor | None,
        guidance_scale: float = 1.0,
    ) -> torch.Tensor:
        """Guided, clamped, diagonal-symmetric x0 estimate (torch side).

        guidance_scale g blends (1+s)*conditional - s*unconditional with
        s = g - 1; at g = 1 only the conditional pass runs.
        """
        s = guidance_scale - 1.0
        out = self.net(x_t, x_prev, boundary_img, t, cond)
        if s != 0.0 and cond is not None:
            out_null = self.net(x_t, x_prev, boundary_img, t, None)
            out = (1.0 + s) * out - s * out_null
        return diagonal_symmetrize(out.clamp(-1.0, 1.0))


def predict_x0(
    denoiser: Denoiser,
    x_t: np.ndarray,
    prev_estimate: np.ndarray | None,
    t: int,
    boundary_image: np.ndarray,
    condition=None,
    guidance_scale: float = 1.0,
) -> np.ndarray:
    """Single-field x0 estimate; condition=None uses the null embedding."""
    m = denoiser.spec.size
    x_t = np.asarray(x_t, dtype=np.float32)
    if x_t.shape != (m, m):
        raise DimensionError(f"x_t shape {x_t.shape} != ({m}, {m})")
    if prev_estimate is None:
        prev_estimate = np.zeros((m, m), dtype=np.float32)
    bimg = np.asarray(boundary_image, dtype=np.float32)
    if bimg.shape != (m, m):
        raise DimensionError(f"boundary image shape {bimg.shape} != ({m}, {m})")
    cond_t = None
    if condition is not None:
        cond_t = torch.tensor(
            normalize_condition(condition, denoiser.norm_ranges), dtype=torch.float32
        )[None, :]
    with torch.no_grad():
        out = denoiser.predict_batch(
            torch.tensor(x_t)[None, None],
            torch.tensor(np.asarray(prev_estimate, dtype=np.float32))[None, None],
            torch.tensor(bimg)[None, None],
            torch.tensor([t]),
            cond_t,
            guidance_scale,
        )
    return out[0, 0].numpy()
