"""Ancestral sampling over the strided sub-schedule, plus boundary encoding.

Chains start from symmetric Gaussian noise; each step predicts x0 (with the
previous estimate as the self-conditioning channel), optionally pins the
boundary row/column, and draws the posterior for the next-lower time. The
final estimate is thresholded at 0 and mirrored into a full D4-symmetric
cell.
"""

from __future__ import annotations

import math

import numpy as np
import torch

from ..cells import BoundaryVector, CellGrid, QuarterGrid, expand_quarter
from ..errors import DimensionError, InputError, InvariantError
from .model import Denoiser, normalize_condition
from .schedule import symmetric_noise


def encode_boundary(b: BoundaryVector, m: int) -> np.ndarray:
    """m x m image with row 0 and column 0 carrying the first m boundary bits."""
    bits = b.bits if isinstance(b, BoundaryVector) else np.asarray(b)
    if bits.ndim != 1 or bits.size != 2 * m:
        raise DimensionError(f"boundary length {bits.size} != 2*m = {2 * m}")
    if not np.array_equal(bits, bits[::-1]):
        raise InvariantError("boundary must be palindromic to encode a quarter")
    img = np.zeros((m, m), dtype=np.float32)
    img[0, :] = bits[:m]
    img[:, 0] = bits[:m]
    return img


def _mask_boundary(x0h: torch.Tensor, bits_pm: torch.Tensor) -> None:
    x0h[:, 0, 0, :] = bits_pm
    x0h[:, 0, :, 0] = bits_pm


def sample(
    denoiser: Denoiser,
    boundary: BoundaryVector,
    targets,
    rng,
    steps: int = 50,
    hard_mask: bool = True,
    guidance_scale: float = 1.0,
) -> list[CellGrid]:
    """Generate one cell per target tensor, all under one boundary.

    Returns exactly D4-symmetric cells of side 2*m. All randomness is drawn
    from `rng` (a numpy Generator), so runs are reproducible.
    """
    m = denoiser.spec.size
    targets = list(targets)
    if not targets:
        raise InputError("no target tensors supplied")
    count = len(targets)
    bimg = encode_boundary(boundary, m)
    bits_pm = torch.tensor(2.0 * bimg[0, :] - 1.0, dtype=torch.float32)
    bimg_t = torch.tensor(bimg)[None, None].expand(count, 1, m, m)
    cond = torch.tensor(
        np.stack([normalize_condition(t, denoiser.norm_ranges) for t in targets]).astype(
            np.float32
        )
    )
    grid = denoiser.schedule.sampling_grid(steps)  # descending T ... 0
    gammas = denoiser.schedule.gammas
    x = torch.tensor(
        np.stack([symmetric_noise(m, rng) for _ in range(count)]).astype(np.float32)
    )[:, None]
    prev = torch.zeros_like(x)
    net = denoiser.net
    net.eval()
    with torch.no_grad():
        for i in range(len(grid) - 1):
            t, s = int(grid[i]), int(grid[i + 1])
            tt = torch.full((count,), t, dtype=torch.long)
            x0h = denoiser.predict_batch(x, prev, bimg_t, tt, cond, guidance_scale)
            if hard_mask:
                _mask_boundary(x0h, bits_pm)
            g_t, g_s = float(gammas[t]), float(gammas[s])
            alpha = g_t / g_s
            mean = (
                math.sqrt(alpha) * (1 - g_s) * x + math.sqrt(g_s) * (1 - alpha) * x0h
            ) / (1 - g_t)
            if s > 0:
                var = (1 - g_s) * (1 - alpha) / (1 - g_t)
                noise = torch.tensor(
                    np.stack([symmetric_noise(m, rng) for _ in range(count)]).astype(
                        np.float32
                    )
                )[:, None]
                x = mean + math.sqrt(max(var, 0.0)) * noise
            else:
                x = x0h
            prev = x0h
    cells = []
    for k in range(count):
        q = QuarterGrid(x[k, 0].numpy().astype(float))
        cells.append(expand_quarter(q))
    return cells
