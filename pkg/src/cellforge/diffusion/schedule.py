"""Noise schedule and the forward (noising) process.

gamma_t is the cumulative signal fraction: x_t = sqrt(gamma_t) x0 +
sqrt(1 - gamma_t) eps, with gamma_0 = 1 and gamma_T near the schedule
floor. The default is the linear-beta construction gamma_t =
prod_{s<=t}(1 - beta_s), beta in [1e-4, 0.02].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InputError, InvariantError


@dataclass(frozen=True)
class NoiseSchedule:
    gammas: np.ndarray  # length T+1, gammas[0] = 1, strictly decreasing

    def __post_init__(self):
        g = np.asarray(self.gammas, dtype=float)
        if g.ndim != 1 or g.size < 2:
            raise InputError("schedule needs at least gamma_0 and gamma_1")
        if abs(g[0] - 1.0) > 1e-6:
            raise InvariantError(f"gamma_0 = {g[0]} must be 1")
        if not (np.diff(g) < 0).all():
            raise InvariantError("gamma must be strictly decreasing")
        if g[-1] < 0:
            raise InvariantError("gamma must stay nonnegative")
        g = g.copy()
        g.setflags(write=False)
        object.__setattr__(self, "gammas", g)

    @property
    def T(self) -> int:
        return self.gammas.size - 1

    def gamma(self, t) -> np.ndarray:
        return self.gammas[np.asarray(t)]

    def sampling_grid(self, steps: int) -> np.ndarray:
        """Uniformly strided sub-schedule T = t_0 > t_1 > ... > t_steps = 0."""
        if not 1 <= steps <= self.T:
            raise InputError(f"steps must be in [1, {self.T}]")
        return np.unique(np.linspace(self.T, 0, steps + 1).round().astype(int))[::-1]


def linear_schedule(T: int = 1000, beta_min: float = 1e-4, beta_max: float = 0.02) -> NoiseSchedule:
    betas = np.linspace(beta_min, beta_max, T)
    gammas = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    return NoiseSchedule(gammas)


def symmetric_noise(m: int, rng) -> np.ndarray:
    """Diagonal-symmetric Gaussian field with unit marginal variance.

    Off-diagonal entries are (g_ij + g_ji)/sqrt(2); the diagonal keeps g_ii
    so every entry is marginally standard normal.
    """
    g = rng.standard_normal((m, m))
    z = (g + g.T) / np.sqrt(2.0)
    np.fill_diagonal(z, np.diag(g))
    return z


def forward_noise(x0, t: int, eps: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """x_t = sqrt(gamma_t) x0 + sqrt(1 - gamma_t) eps."""
    x0 = np.asarray(x0.data if hasattr(x0, "data") else x0, dtype=float)
    if eps.shape != x0.shape:
        raise InputError("noise shape differs from the sample shape")
    g = float(schedule.gamma(t))
    return np.sqrt(g) * x0 + np.sqrt(1.0 - g) * eps
