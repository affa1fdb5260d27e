"""Noise schedule, forward process, guidance and the DDIM sampler."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff.tensor import DimensionError, NumericError
from ..vocab import ConfigurationError
from .codec import latent_to_video, patch_decode, patch_encode


@dataclass(frozen=True)
class NoiseSchedule:
    """Tables indexed by step t = 1..T (stored at position t - 1)."""

    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    @property
    def T(self) -> int:
        return len(self.beta)

    def abar(self, t: int) -> float:
        """ᾱ_t with the convention ᾱ_0 = 1."""
        if t == 0:
            return 1.0
        if not 1 <= t <= self.T:
            raise ConfigurationError(f"step {t} outside 1..{self.T}")
        return float(self.alpha_bar[t - 1])

    @classmethod
    def from_betas(cls, betas) -> "NoiseSchedule":
        beta = np.asarray(betas, dtype=np.float64)
        if beta.ndim != 1 or beta.size == 0:
            raise ConfigurationError("betas must be a non-empty vector")
        if (beta < 0).any() or (beta >= 1).any():
            raise ConfigurationError("betas must lie in [0, 1)")
        alpha = 1.0 - beta
        return cls(beta, alpha, np.cumprod(alpha))


def default_beta_range(T: int) -> tuple[float, float]:
    """The common 1e-4..0.02 ramp for 1000 steps, rescaled to T steps.

    For very short chains (T < 21) the rescaled end value would reach 1, so
    both ends are capped at 0.999.
    """
    cap = 0.999
    return min(1e-4 * 1000.0 / T, cap), min(0.02 * 1000.0 / T, cap)


def make_schedule(T: int = 100, beta_start: float | None = None, beta_end: float | None = None) -> NoiseSchedule:
    if T < 1:
        raise ConfigurationError("T must be at least 1")
    lo, hi = default_beta_range(T)
    beta_start = lo if beta_start is None else beta_start
    beta_end = hi if beta_end is None else beta_end
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ConfigurationError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    return NoiseSchedule.from_betas(np.linspace(beta_start, beta_end, T))


def q_sample(z, t: int, eps, schedule: NoiseSchedule) -> np.ndarray:
    """z_t = sqrt(ᾱ_t) z + sqrt(1 - ᾱ_t) ε."""
    z, eps = np.asarray(z), np.asarray(eps)
    if z.shape != eps.shape:
        raise DimensionError(f"noise shape {eps.shape} != latent shape {z.shape}")
    if not 1 <= int(t) <= schedule.T:
        raise ConfigurationError(f"q_sample needs 1 <= t <= {schedule.T}, got {t}")
    ab = schedule.abar(int(t))
    return np.sqrt(ab) * z + np.sqrt(1.0 - ab) * eps


def cfg_combine(eps_uncond, eps_cond, w: float) -> np.ndarray:
    """ε̂ = ε_u + w (ε_c − ε_u); w = 1 and w = 0 return a branch unchanged."""
    eps_uncond, eps_cond = np.asarray(eps_uncond), np.asarray(eps_cond)
    if eps_uncond.shape != eps_cond.shape:
        raise DimensionError(f"guidance branches differ in shape: {eps_uncond.shape} vs {eps_cond.shape}")
    if w == 1.0:
        return eps_cond.copy()
    if w == 0.0:
        return eps_uncond.copy()
    return eps_uncond + w * (eps_cond - eps_uncond)


def ddim_timesteps(T: int, n_steps: int) -> list[int]:
    """Evenly spaced decreasing steps starting at T."""
    if not 1 <= n_steps <= T:
        raise ConfigurationError(f"n_steps={n_steps} must lie in [1, T={T}]")
    return [int(round(T * (n_steps - k) / n_steps)) for k in range(n_steps)]


def _predictor(net):
    return getattr(net, "predict", net)


def clip_latent(z: np.ndarray) -> np.ndarray:
    """Project a latent onto the codec image of [-1, 1] pixels (exact, the codec is orthonormal)."""
    return patch_encode(np.clip(patch_decode(z), -1.0, 1.0))


def ddim_sample(net, schedule: NoiseSchedule, n_steps: int, z_a, text_emb, w: float = 3.0, seed: int = 0,
                shape=None, clip_x0: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic DDIM from seeded Gaussian z_T; returns (z_0, decoded video).

    ``net`` is either a model exposing ``predict(z_t, t, text_emb, z_a)`` or such
    a callable.  Guidance is over the text: the unconditional branch passes
    ``text_emb=None`` and keeps ``z_a``.  With ``clip_x0`` the predicted clean
    latent is projected onto the valid pixel range and ε̂ is recomputed from it;
    at large t, where 1/sqrt(ᾱ_t) is in the hundreds, this keeps small noise
    errors from saturating the sample.  For predictions already inside the
    range it is a no-op.
    """
    predict = _predictor(net)
    if shape is None:
        if z_a is None:
            raise ConfigurationError("pass a latent shape when sampling without a condition video")
        shape = np.shape(z_a)
    steps = ddim_timesteps(schedule.T, n_steps)
    z = np.random.default_rng(seed).standard_normal(shape)
    for i, t in enumerate(steps):
        t_prev = steps[i + 1] if i + 1 < len(steps) else 0
        eps_c = np.asarray(predict(z, t, text_emb, z_a), dtype=np.float64)
        if w == 1.0:
            eps = eps_c
        else:
            eps_u = np.asarray(predict(z, t, None, z_a), dtype=np.float64)
            eps = cfg_combine(eps_u, eps_c, w)
        ab, ab_prev = schedule.abar(t), schedule.abar(t_prev)
        z0_hat = (z - np.sqrt(1.0 - ab) * eps) / np.sqrt(ab)
        if clip_x0 and ab < 1.0:
            z0_hat = clip_latent(z0_hat)
            eps = (z - np.sqrt(ab) * z0_hat) / np.sqrt(1.0 - ab)
        z = np.sqrt(ab_prev) * z0_hat + np.sqrt(1.0 - ab_prev) * eps
        if not np.isfinite(z).all():
            raise NumericError(f"non-finite latent at DDIM step t={t}")
    return z, latent_to_video(z)
