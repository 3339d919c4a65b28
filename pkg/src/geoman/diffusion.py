"""Noise schedule, forward process, v-parameterization and the DDIM / ancestral sampler."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch

from .errors import DivergenceError, ValidationError

KINDS = ("linear", "scaled-linear")


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray  # (T,), index t-1 holds beta_t

    @property
    def T(self) -> int:
        return len(self.betas)

    @property
    def alphas_cumprod(self) -> np.ndarray:
        return np.cumprod(1.0 - self.betas)

    def alpha_bar(self, t: int) -> float:
        """Cumulative product at integer step t in [0, T]; t = 0 is the clean end (1.0)."""
        return 1.0 if t == 0 else float(self.alphas_cumprod[t - 1])

    def alpha(self, t: int) -> float:
        return float(np.sqrt(self.alpha_bar(t)))

    def sigma(self, t: int) -> float:
        return float(np.sqrt(1.0 - self.alpha_bar(t)))

    def coefficients(self, t, ndim: int, like: torch.Tensor | None = None) -> tuple[torch.Tensor, torch.Tensor]:
        """(alpha_t, sigma_t) for an int or a (B,) tensor of steps, shaped to broadcast over ``ndim`` dims."""
        ab = np.concatenate([[1.0], self.alphas_cumprod])
        idx = torch.as_tensor(t).long().reshape(-1)
        if (idx < 0).any() or (idx > self.T).any():
            raise ValidationError(f"timestep outside [0, {self.T}]")
        a = torch.as_tensor(np.sqrt(ab))[idx]
        s = torch.as_tensor(np.sqrt(1.0 - ab))[idx]
        shape = (-1,) + (1,) * (ndim - 1)
        dtype = like.dtype if like is not None else torch.float64
        return a.to(dtype).reshape(shape), s.to(dtype).reshape(shape)

    def _check_t(self, t):
        tt = torch.as_tensor(t)
        if (tt < 1).any() or (tt > self.T).any():
            raise ValidationError(f"timestep must lie in [1, {self.T}]")

    def add_noise(self, x0: torch.Tensor, eps: torch.Tensor, t) -> torch.Tensor:
        self._check_t(t)
        a, s = self.coefficients(t, x0.ndim, x0)
        return add_noise_coef(x0, eps, a, s)

    def v_from(self, x0, eps, t):
        self._check_t(t)
        a, s = self.coefficients(t, x0.ndim, x0)
        return v_from_coef(x0, eps, a, s)

    def x0_from_v(self, x_t, v, t):
        self._check_t(t)
        a, s = self.coefficients(t, x_t.ndim, x_t)
        return x0_from_v_coef(x_t, v, a, s)

    def eps_from_v(self, x_t, v, t):
        self._check_t(t)
        a, s = self.coefficients(t, x_t.ndim, x_t)
        return eps_from_v_coef(x_t, v, a, s)


def _check_shapes(a, b):
    if a.shape != b.shape:
        raise ValidationError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def add_noise_coef(x0, eps, alpha, sigma):
    _check_shapes(x0, eps)
    return alpha * x0 + sigma * eps


def v_from_coef(x0, eps, alpha, sigma):
    _check_shapes(x0, eps)
    return alpha * eps - sigma * x0


def x0_from_v_coef(x_t, v, alpha, sigma):
    return alpha * x_t - sigma * v


def eps_from_v_coef(x_t, v, alpha, sigma):
    return sigma * x_t + alpha * v


def make_schedule(T: int = 1000, beta_start: float = 8.5e-4, beta_end: float = 1.2e-2, kind: str = "scaled-linear") -> NoiseSchedule:
    if T < 1:
        raise ValidationError(f"T must be >= 1, got {T}")
    if not 0 < beta_start <= beta_end < 1:
        raise ValidationError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    if kind == "linear":
        betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    elif kind == "scaled-linear":
        betas = np.linspace(np.sqrt(beta_start), np.sqrt(beta_end), T, dtype=np.float64) ** 2
    else:
        raise ValidationError(f"schedule kind must be one of {KINDS}, got {kind!r}")
    return NoiseSchedule(betas)


def inference_timesteps(T: int, steps: int) -> list[int]:
    """``steps`` timesteps spread uniformly over [1, T], descending from T."""
    if not 1 <= steps <= T:
        raise ValidationError(f"sampler steps must lie in [1, T={T}], got {steps}")
    return [int(round(T * (steps - i) / steps)) for i in range(steps)]


Denoiser = Callable[[torch.Tensor, object, int], torch.Tensor]


@torch.no_grad()
def sample(
    denoiser: Denoiser,
    conditioning,
    shape,
    schedule: NoiseSchedule,
    steps: int = 100,
    seed: int = 0,
    mode: str = "ddim",
    x_init: torch.Tensor | None = None,
    t_start: int | None = None,
    callback: Callable[[int, int, torch.Tensor], None] | None = None,
    dtype=torch.float32,
) -> torch.Tensor:
    """Integrate the reverse process from ``t_start`` (default T) to a clean estimate.

    ``denoiser(x_t, conditioning, t)`` returns the v-prediction. With
    ``x_init``/``t_start`` the trajectory starts from a given noisy state;
    ``callback(i, t, x0_hat)`` sees every intermediate clean-sample estimate.
    """
    if mode not in ("ddim", "ancestral"):
        raise ValidationError(f"sampler mode must be 'ddim' or 'ancestral', got {mode!r}")
    gen = torch.Generator().manual_seed(int(seed))
    T0 = schedule.T if t_start is None else int(t_start)
    ts = [t for t in inference_timesteps(schedule.T, steps) if t <= T0]
    if not ts or ts[0] != T0:
        ts = [T0] + ts
    x = torch.randn(tuple(shape), generator=gen, dtype=dtype) if x_init is None else x_init.to(dtype).clone()
    x0 = x
    for i, t in enumerate(ts):
        t_prev = ts[i + 1] if i + 1 < len(ts) else 0
        v = denoiser(x, conditioning, t)
        a, s = schedule.alpha(t), schedule.sigma(t)
        x0 = a * x - s * v
        eps = s * x + a * v
        if callback is not None:
            callback(i, t, x0)
        if t_prev == 0:
            x = x0
        elif mode == "ddim":
            x = schedule.alpha(t_prev) * x0 + schedule.sigma(t_prev) * eps
        else:
            ab, ab_prev = schedule.alpha_bar(t), schedule.alpha_bar(t_prev)
            var = (1.0 - ab_prev) / (1.0 - ab) * (1.0 - ab / ab_prev)
            noise = torch.randn(x.shape, generator=gen, dtype=dtype)
            x = np.sqrt(ab_prev) * x0 + np.sqrt(max(1.0 - ab_prev - var, 0.0)) * eps + np.sqrt(var) * noise
        if not torch.isfinite(x).all():
            raise DivergenceError("non-finite value in sampling trajectory", step=i)
    return x
