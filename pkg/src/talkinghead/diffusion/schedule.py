"""Linear beta schedule, forward corruption, and deterministic DDIM sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, ShapeError


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray       # (T,) float64, increasing in (0, 1)
    alphas: np.ndarray      # 1 - betas
    alpha_bars: np.ndarray  # cumulative products, strictly decreasing

    @property
    def t_steps(self) -> int:
        return self.betas.shape[0]


def make_schedule(t_steps: int = 100, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Linear betas from beta_start to beta_end over t_steps entries.

    t_steps=1 degenerates to betas=[beta_start], so alpha_bars=[1-beta_start].
    """
    if t_steps < 1:
        raise ConfigError(f"t_steps must be >= 1, got {t_steps}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ConfigError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    betas = np.linspace(beta_start, beta_end, t_steps, dtype=np.float64)
    alphas = 1.0 - betas
    return NoiseSchedule(betas=betas, alphas=alphas, alpha_bars=np.cumprod(alphas))


def q_sample(x0: np.ndarray, t: int, eps: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps."""
    if not 0 <= t < schedule.t_steps:
        raise ShapeError(f"t={t} outside schedule of {schedule.t_steps} steps")
    x0 = np.asarray(x0)
    eps = np.asarray(eps)
    if eps.shape != x0.shape:
        raise ShapeError(f"eps shape {eps.shape} does not match x0 {x0.shape}")
    ab = schedule.alpha_bars[t]
    return np.sqrt(ab).astype(x0.dtype) * x0 + np.sqrt(1.0 - ab).astype(x0.dtype) * eps


def ddim_sample(shape, steps: int, schedule: NoiseSchedule, denoise_fn, seed: int = 0,
                conditioning=None, x_init: np.ndarray | None = None,
                t_start: int | None = None) -> np.ndarray:
    """Deterministic DDIM (eta=0) over an evenly spaced timestep subset.

    denoise_fn(x, t, conditioning) -> predicted noise, same shape as x.
    Starts from standard normal noise drawn with the given seed unless
    x_init is supplied; t_start defaults to the last schedule step.  The
    final step returns the clean estimate x0_hat directly.
    """
    if t_start is None:
        t_start = schedule.t_steps - 1
    if not 0 <= t_start < schedule.t_steps:
        raise ShapeError(f"t_start={t_start} outside schedule of {schedule.t_steps} steps")
    if not 1 <= steps <= schedule.t_steps:
        raise ShapeError(f"steps={steps} must be in [1, {schedule.t_steps}]")
    if x_init is None:
        x = np.random.default_rng(seed).standard_normal(shape).astype(np.float32)
    else:
        x = np.asarray(x_init, dtype=np.float32)
        if x.shape != tuple(shape):
            raise ShapeError(f"x_init shape {x.shape} does not match {tuple(shape)}")
    ts = np.unique(np.round(np.linspace(t_start, 0, steps)).astype(int))[::-1]
    for i, t in enumerate(ts):
        eps_hat = denoise_fn(x, int(t), conditioning)
        if eps_hat.shape != x.shape:
            raise ShapeError(f"denoiser returned {eps_hat.shape} for input {x.shape}")
        ab_t = schedule.alpha_bars[t]
        x0_hat = (x - np.float32(np.sqrt(1.0 - ab_t)) * eps_hat) / np.float32(np.sqrt(ab_t))
        if i + 1 == len(ts):
            return x0_hat
        ab_next = schedule.alpha_bars[ts[i + 1]]
        x = np.float32(np.sqrt(ab_next)) * x0_hat + np.float32(np.sqrt(1.0 - ab_next)) * eps_hat
    return x
