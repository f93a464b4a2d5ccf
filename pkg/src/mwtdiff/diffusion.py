"""DDPM noise schedule, forward corruption, training loss, and sampling.

Timesteps are 1-indexed: t runs over {1, ..., T} with alpha_bar[0] := 1
reserved for the clean signal. The sampler walks a strided subset of the
training schedule (tau_i = floor(i * T / S)) and applies the standard
posterior update derived from the predicted noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch


@dataclass
class NoiseSchedule:
    """Linear-beta schedule tables, float64, with alpha_bar[0] = 1."""

    betas: np.ndarray  # shape (T+1,); betas[0] unused (set to 0)
    alphas: np.ndarray = field(init=False)
    alpha_bars: np.ndarray = field(init=False)

    def __post_init__(self):
        self.betas = np.asarray(self.betas, dtype=np.float64)
        if self.betas.ndim != 1 or self.betas.shape[0] < 2:
            raise ValueError("betas must be a 1-D array with at least one step")
        if self.betas[0] != 0.0:
            raise ValueError("betas[0] is reserved for t=0 and must be 0")
        steps = self.betas[1:]
        if np.any(steps <= 0.0) or np.any(steps >= 1.0):
            raise ValueError("all betas for t >= 1 must lie in (0, 1)")
        self.alphas = 1.0 - self.betas
        self.alpha_bars = np.cumprod(self.alphas)

    @classmethod
    def linear(cls, num_steps: int, beta_start: float = 1e-4, beta_end: float = 2e-2) -> "NoiseSchedule":
        """Evenly spaced betas from beta_start at t=1 to beta_end at t=T."""
        if num_steps < 1:
            raise ValueError(f"num_steps must be >= 1, got {num_steps}")
        if not 0.0 < beta_start <= beta_end < 1.0:
            raise ValueError(
                f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
            )
        betas = np.zeros(num_steps + 1, dtype=np.float64)
        betas[1:] = np.linspace(beta_start, beta_end, num_steps)
        return cls(betas=betas)

    @property
    def num_steps(self) -> int:
        return self.betas.shape[0] - 1

    def alpha_bar(self, t: int | np.ndarray) -> np.ndarray | float:
        return self.alpha_bars[t]

    def check_t(self, t_steps: torch.Tensor) -> None:
        if t_steps.is_floating_point():
            raise ValueError("t_steps must be integer-typed")
        if torch.any(t_steps < 1) or torch.any(t_steps > self.num_steps):
            raise ValueError(
                f"timesteps must lie in [1, {self.num_steps}], "
                f"got range [{int(t_steps.min())}, {int(t_steps.max())}]"
            )


def forward_noise(
    schedule: NoiseSchedule,
    z0: torch.Tensor,
    t_steps: torch.Tensor,
    epsilon: torch.Tensor,
) -> torch.Tensor:
    """Corrupt clean latents: z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps.

    ``t_steps`` is a (B,) integer tensor of per-sample timesteps.
    """
    if epsilon.shape != z0.shape:
        raise ValueError(f"epsilon shape {tuple(epsilon.shape)} != z0 {tuple(z0.shape)}")
    if t_steps.dim() != 1 or t_steps.shape[0] != z0.shape[0]:
        raise ValueError("t_steps must be a (B,) tensor matching the batch")
    schedule.check_t(t_steps)
    abar = torch.from_numpy(schedule.alpha_bars[t_steps.numpy()]).to(z0.dtype)
    shape = (-1,) + (1,) * (z0.dim() - 1)
    return abar.sqrt().view(shape) * z0 + (1.0 - abar).sqrt().view(shape) * epsilon


def noise_prediction_loss(
    schedule: NoiseSchedule,
    denoise_fn,
    z0: torch.Tensor,
    t_steps: torch.Tensor,
    epsilon: torch.Tensor,
) -> torch.Tensor:
    """Mean squared error between true and predicted noise.

    ``denoise_fn(z_t, t_steps) -> eps_hat`` closes over whatever
    conditioning the caller wants; this function owns only the corruption
    and the objective.
    """
    z_t = forward_noise(schedule, z0, t_steps, epsilon)
    eps_hat = denoise_fn(z_t, t_steps)
    if eps_hat.shape != epsilon.shape:
        raise ValueError(
            f"denoiser returned shape {tuple(eps_hat.shape)}, expected {tuple(epsilon.shape)}"
        )
    return torch.mean((epsilon - eps_hat) ** 2)


def sample_timesteps(schedule: NoiseSchedule, num_steps: int) -> np.ndarray:
    """Strided inference timesteps: tau_i = floor(i * T / S), i = 1..S.

    Returned ascending; the sampler visits them in reverse. With S == T
    this is exactly 1..T.
    """
    T = schedule.num_steps
    if not 1 <= num_steps <= T:
        raise ValueError(f"num_steps must lie in [1, {T}], got {num_steps}")
    taus = np.unique((np.arange(1, num_steps + 1) * T) // num_steps)
    if taus.shape[0] != num_steps:
        raise ValueError(
            f"stride collapsed {num_steps} requested steps to {taus.shape[0]}"
        )
    return taus.astype(np.int64)


def ddpm_step(
    schedule: NoiseSchedule,
    z_t: torch.Tensor,
    eps_hat: torch.Tensor,
    t: int,
    t_prev: int,
    noise: torch.Tensor | None,
    x0_clip: float | None = None,
) -> torch.Tensor:
    """One posterior update from timestep ``t`` down to ``t_prev``.

    Reconstructs z0 from the predicted noise, then samples the posterior
    q(z_{t_prev} | z_t, z0) generalized to the strided pair (t, t_prev).
    ``noise`` must be None exactly when t_prev == 0 (the final, noiseless
    step).

    ``x0_clip`` bounds the reconstructed z0 to [-x0_clip, x0_clip] before
    the posterior mean is formed, the usual clip-to-data-range guard on
    the denoised estimate. At high t the 1/sqrt(abar_t) factor amplifies
    small prediction errors into arbitrarily large z0 values; without the
    bound those early estimates can walk the whole trajectory off the
    data distribution. None disables the guard.
    """
    if not (0 <= t_prev < t <= schedule.num_steps):
        raise ValueError(f"need 0 <= t_prev < t <= T, got t={t}, t_prev={t_prev}")
    if x0_clip is not None and x0_clip <= 0:
        raise ValueError(f"x0_clip must be positive or None, got {x0_clip}")
    abar_t = float(schedule.alpha_bars[t])
    abar_p = float(schedule.alpha_bars[t_prev])
    alpha_tilde = abar_t / abar_p
    beta_tilde = 1.0 - alpha_tilde

    dtype = z_t.dtype
    sqrt_abar_t = torch.tensor(abar_t, dtype=dtype).sqrt()
    sqrt_one_minus = torch.tensor(1.0 - abar_t, dtype=dtype).sqrt()
    z0_hat = (z_t - sqrt_one_minus * eps_hat) / sqrt_abar_t
    if x0_clip is not None:
        z0_hat = z0_hat.clamp(-x0_clip, x0_clip)

    coef_z0 = (abar_p**0.5) * beta_tilde / (1.0 - abar_t)
    coef_zt = (alpha_tilde**0.5) * (1.0 - abar_p) / (1.0 - abar_t)
    mean = coef_z0 * z0_hat + coef_zt * z_t

    var = beta_tilde * (1.0 - abar_p) / (1.0 - abar_t)
    if t_prev == 0:
        if noise is not None:
            raise ValueError("the final step is deterministic; pass noise=None")
        return mean
    if noise is None:
        raise ValueError(f"intermediate step to t_prev={t_prev} requires noise")
    return mean + (var**0.5) * noise


def ddpm_sample(
    schedule: NoiseSchedule,
    denoise_fn,
    shape: tuple[int, ...],
    num_steps: int,
    seed: int,
    dtype: torch.dtype = torch.float32,
    callback=None,
    x0_clip: float | None = None,
) -> torch.Tensor:
    """Draw a sample by walking the strided schedule from pure noise.

    Randomness comes from a dedicated generator seeded with ``seed``; the
    initial z_T is drawn first, then one noise tensor per intermediate
    step in descending-t order, so a given seed fully determines the
    trajectory.

    ``denoise_fn(z_t, t_steps)`` receives a (B,) int64 tensor filled with
    the current timestep. ``x0_clip`` is forwarded to every posterior
    update; see :func:`ddpm_step`.
    """
    taus = sample_timesteps(schedule, num_steps)
    gen = torch.Generator(device="cpu").manual_seed(seed)
    z = torch.randn(shape, generator=gen, dtype=dtype)
    path = list(taus[::-1]) + [0]
    for t, t_prev in zip(path[:-1], path[1:]):
        t_batch = torch.full((shape[0],), int(t), dtype=torch.int64)
        eps_hat = denoise_fn(z, t_batch)
        noise = None
        if t_prev > 0:
            noise = torch.randn(shape, generator=gen, dtype=dtype)
        z = ddpm_step(schedule, z, eps_hat, int(t), int(t_prev), noise, x0_clip)
        if callback is not None:
            callback(int(t), z)
    return z
