"""Training loop: denoising loss on x0 with self-conditioning and random
condition nulling for classifier-free guidance.

Each step draws a batch, a timestep per sample and symmetric noise, forms
x_t, and regresses the network output to x0. Half the steps first compute a
no-self-condition estimate and feed it back as the extra channel; 20% of
samples get their tensor condition replaced by the null embedding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import torch
import torch.nn.functional as F

from ..errors import InputError, SolverError
from .model import Denoiser, normalize_condition
from .sample import encode_boundary
from .schedule import NoiseSchedule
from .unet import DenoiserSpec


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 32
    lr: float = 1e-4
    weight_decay: float = 1e-4
    self_cond_prob: float = 0.5
    null_prob: float = 0.2
    seed: int = 0
    eval_batch_size: int = 40
    eval_every: int = 0  # 0 = epochs // 10 (first and last always evaluated)


def _pack_samples(samples, spec: DenoiserSpec, norm_ranges):
    m = spec.size
    x0, conds, bimgs = [], [], []
    for quarter, tensor, boundary in samples:
        q = np.asarray(quarter.data if hasattr(quarter, "data") else quarter, dtype=np.float32)
        if q.shape != (m, m):
            raise InputError(f"sample quarter {q.shape} does not match spec size {m}")
        x0.append(q)
        conds.append(normalize_condition(tensor, norm_ranges).astype(np.float32))
        bits = boundary.bits if hasattr(boundary, "bits") else np.asarray(boundary)
        bimgs.append(
            encode_boundary(boundary, m) if bits.ndim == 1 else np.asarray(boundary, np.float32)
        )
    X0 = torch.tensor(np.stack(x0))[:, None]
    C = torch.tensor(np.stack(conds))
    B = torch.tensor(np.stack(bimgs).astype(np.float32))[:, None]
    return X0, C, B


def _symmetric_noise_t(shape, gen) -> torch.Tensor:
    g = torch.randn(shape, generator=gen)
    z = (g + g.transpose(-1, -2)) / math.sqrt(2.0)
    idx = torch.arange(shape[-1])
    z[..., idx, idx] = g[..., idx, idx]
    return z


class _EvalBatch:
    """Frozen (x_t, t, noise) set for comparable loss readings across epochs."""

    def __init__(self, X0, C, B, gammas, size, seed=123):
        gen = torch.Generator().manual_seed(seed)
        n = X0.shape[0]
        reps = max(1, size // n)
        idx = torch.arange(n).repeat(reps)[:size]
        self.x0 = X0[idx]
        self.cond = C[idx]
        self.bimg = B[idx]
        tgrid = torch.tensor([100, 300, 500, 700, 900])
        self.t = tgrid.repeat_interleave(max(1, len(idx) // 5))[: len(idx)]
        g = gammas[self.t][:, None, None, None].float()
        eps = _symmetric_noise_t(self.x0.shape, gen)
        self.xt = torch.sqrt(g) * self.x0 + torch.sqrt(1 - g) * eps

    @torch.no_grad()
    def loss(self, net) -> float:
        prev = net(self.xt, torch.zeros_like(self.xt), self.bimg, self.t, self.cond)
        pred = net(self.xt, prev, self.bimg, self.t, self.cond)
        return float(F.mse_loss(pred, self.x0))


def _run_training(denoiser: Denoiser, samples, config: TrainConfig, epochs: int):
    X0, C, B = _pack_samples(samples, denoiser.spec, denoiser.norm_ranges)
    n = X0.shape[0]
    if n == 0:
        raise InputError("training set is empty")
    gammas = torch.tensor(denoiser.schedule.gammas, dtype=torch.float32)
    T = denoiser.schedule.T
    net = denoiser.net
    opt = torch.optim.AdamW(net.parameters(), lr=config.lr, weight_decay=config.weight_decay)
    gen = torch.Generator().manual_seed(config.seed)
    evaluation = _EvalBatch(X0, C, B, gammas, min(config.eval_batch_size, 5 * n))
    steps_per_epoch = max(1, n // config.batch_size)
    history = {"loss": [], "eval_loss": []}
    net.train()
    for epoch in range(epochs):
        for _ in range(steps_per_epoch):
            idx = torch.randint(0, n, (min(config.batch_size, n),), generator=gen)
            x0, cond, bimg = X0[idx], C[idx], B[idx]
            t = torch.randint(1, T + 1, (len(idx),), generator=gen)
            g = gammas[t][:, None, None, None]
            eps = _symmetric_noise_t(x0.shape, gen)
            xt = torch.sqrt(g) * x0 + torch.sqrt(1 - g) * eps
            null_mask = torch.rand(len(idx), generator=gen) < config.null_prob
            cond_in = cond.clone()
            # null rows ride the learned null embedding via a split forward
            if torch.rand((), generator=gen) < config.self_cond_prob:
                with torch.no_grad():
                    prev = _split_forward(net, xt, torch.zeros_like(xt), bimg, t, cond_in, null_mask)
            else:
                prev = torch.zeros_like(xt)
            pred = _split_forward(net, xt, prev, bimg, t, cond_in, null_mask)
            loss = F.mse_loss(pred, x0)
            if not torch.isfinite(loss):
                raise SolverError(f"training diverged at epoch {epoch}: loss={loss.item()}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            history["loss"].append(float(loss))
        history["eval_loss"].append(evaluation.loss(net))
    net.eval()
    return history


def _split_forward(net, xt, prev, bimg, t, cond, null_mask):
    """One forward pass where null_mask rows use the null embedding."""
    if not null_mask.any():
        return net(xt, prev, bimg, t, cond)
    if null_mask.all():
        return net(xt, prev, bimg, t, None)
    out = torch.empty_like(xt[:, :1])
    keep = ~null_mask
    out[keep] = net(xt[keep], prev[keep], bimg[keep], t[keep], cond[keep])
    out[null_mask] = net(xt[null_mask], prev[null_mask], bimg[null_mask], t[null_mask], None)
    return out


def train(
    samples,
    spec: DenoiserSpec,
    schedule: NoiseSchedule,
    config: TrainConfig = TrainConfig(),
) -> tuple[Denoiser, dict]:
    """Train a fresh denoiser; returns (denoiser, loss history)."""
    torch.manual_seed(config.seed)
    denoiser = Denoiser.create(spec, schedule, seed=config.seed)
    history = _run_training(denoiser, samples, config, config.epochs)
    return denoiser, history


def fine_tune(
    denoiser: Denoiser,
    samples,
    epochs: int = 50,
    config: TrainConfig | None = None,
) -> dict:
    """Continue training an existing denoiser in place; returns the history."""
    config = config if config is not None else TrainConfig()
    return _run_training(denoiser, samples, config, epochs)
