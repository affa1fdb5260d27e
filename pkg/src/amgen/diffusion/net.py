"""The denoiser ε_θ and its training objective.

Layout inside the network is (frames, channels, rows, cols); latents outside
are channel-last (frames, rows, cols, 12).  Spatial convolutions use a
(1, 3, 3) kernel and a separate (3, 1, 1) temporal convolution mixes frames.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from ..autodiff.tensor import (
    DimensionError,
    Tensor,
    add,
    as_tensor,
    concat,
    conv3d,
    expand,
    group_norm,
    mse_loss,
    permute,
    reshape,
    silu,
    take,
)
from ..nn import Linear, Module, init_normal, zeros
from .codec import C_LAT
from .schedule import NoiseSchedule, q_sample


@dataclass(frozen=True)
class NetConfig:
    c_lat: int = C_LAT
    channels: int = 32
    emb_dim: int = 64
    text_dim: int = 64
    groups: int = 8
    n_blocks: int = 2
    seed: int = 0


def timestep_embedding(t: int, dim: int) -> np.ndarray:
    """Sinusoidal features of the integer step ``t``; shape (1, dim)."""
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    ang = float(t) * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)])[None, :]


class FirstConv(Module):
    """Input convolution; after expansion it also reads the condition latent.

    The expanded layer computes ``conv(z_t, W) + b + conv(z_a, W_new)``, which
    is the same linear map as one convolution over the channel concatenation
    ``z_t ⊕ z_a`` with kernel ``[W | W_new]``.  Splitting the sum keeps the
    original term's arithmetic unchanged, so zero ``W_new`` reproduces the
    unexpanded output bit for bit.
    """

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator):
        self.weight = init_normal(rng, (c_out, c_in, 1, 3, 3), 1.0 / math.sqrt(9 * c_in))
        self.bias = zeros((c_out,))
        self.cond_weight = None

    @property
    def expanded(self) -> bool:
        return self.cond_weight is not None

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1] * (2 if self.expanded else 1)

    def full_kernel(self) -> np.ndarray:
        """The kernel over all input channels, (out, in_channels, 1, 3, 3)."""
        if not self.expanded:
            return self.weight.data
        return np.concatenate([self.weight.data, self.cond_weight.data], axis=1)

    def __call__(self, x: Tensor) -> Tensor:
        c = self.weight.shape[1]
        if x.shape[1] != self.in_channels:
            raise DimensionError(f"first conv expects {self.in_channels} input channels, got {x.shape[1]}")
        if not self.expanded:
            return conv3d(x, self.weight, self.bias)
        base = conv3d(take(x, 0, c, axis=1), self.weight, self.bias)
        return add(base, conv3d(take(x, c, 2 * c, axis=1), self.cond_weight))


def _norm(channels: int) -> tuple[Tensor, Tensor]:
    return Tensor(np.ones(channels), requires_grad=True), zeros((channels,))


def _pointwise(x: Tensor, layer) -> Tensor:
    """Apply a (C -> C') linear layer at every (frame, row, col) site."""
    f, c, h, w = x.shape
    rows = reshape(permute(x, (0, 2, 3, 1)), (f * h * w, c))
    y = layer(rows)
    return permute(reshape(y, (f, h, w, y.shape[1])), (0, 3, 1, 2))


def _channel_bias(x: Tensor, v: Tensor) -> Tensor:
    """Add a (1, C) vector to every site of a (f, C, h, w) tensor."""
    return add(x, expand(reshape(v, (1, v.shape[1], 1, 1)), x.shape))


class ResBlock(Module):
    def __init__(self, channels: int, emb_dim: int, groups: int, rng: np.random.Generator):
        self._groups = groups
        self.norm1_w, self.norm1_b = _norm(channels)
        self.conv = init_normal(rng, (channels, channels, 1, 3, 3), 1.0 / math.sqrt(9 * channels))
        self.conv_b = zeros((channels,))
        self.emb_proj = Linear(emb_dim, channels, rng)
        self.norm2_w, self.norm2_b = _norm(channels)
        self.pointwise = Linear(channels, channels, rng, scale=0.5)

    def __call__(self, x: Tensor, emb: Tensor) -> Tensor:
        h = silu(group_norm(x, self._groups, self.norm1_w, self.norm1_b))
        h = conv3d(h, self.conv, self.conv_b)
        h = _channel_bias(h, self.emb_proj(emb))
        h = silu(group_norm(h, self._groups, self.norm2_w, self.norm2_b))
        return add(x, _pointwise(h, self.pointwise))


class DenoiserNet(Module):
    """ε_θ(z_t, t, text, z_a) for channel-last latents (f, h, w, c_lat)."""

    def __init__(self, cfg: NetConfig = NetConfig()):
        self._cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        C, E = cfg.channels, cfg.emb_dim
        self.conv_in = FirstConv(cfg.c_lat, C, rng)
        self.time_mlp1 = Linear(E, E, rng)
        self.time_mlp2 = Linear(E, E, rng)
        self.text_proj = Linear(cfg.text_dim, E, rng)
        self.null_text = init_normal(rng, (cfg.text_dim,), 1.0 / math.sqrt(cfg.text_dim))
        self.blocks = [ResBlock(C, E, cfg.groups, rng) for _ in range(cfg.n_blocks)]
        self.temporal = init_normal(rng, (C, C, 3, 1, 1), 0.5 / math.sqrt(3 * C))
        self.temporal_b = zeros((C,))
        self.out_norm_w, self.out_norm_b = _norm(C)
        self.conv_out = init_normal(rng, (cfg.c_lat, C, 1, 3, 3), 0.5 / math.sqrt(9 * C))
        self.conv_out_b = zeros((cfg.c_lat,))

    @property
    def config(self) -> NetConfig:
        return self._cfg

    def embed(self, t: int, text_emb) -> Tensor:
        temb = Tensor(timestep_embedding(t, self._cfg.emb_dim))
        temb = self.time_mlp2(silu(self.time_mlp1(temb)))
        if text_emb is None:
            text = reshape(self.null_text, (1, self._cfg.text_dim))
        else:
            text = as_tensor(text_emb)
            if text.size != self._cfg.text_dim:
                raise DimensionError(f"text embedding must have {self._cfg.text_dim} entries, got {text.shape}")
            text = reshape(text, (1, self._cfg.text_dim))
        return silu(add(temb, self.text_proj(text)))

    def __call__(self, z_t, t: int, text_emb=None, z_a=None) -> Tensor:
        z_t = as_tensor(z_t)
        if z_t.ndim != 4 or z_t.shape[-1] != self._cfg.c_lat:
            raise DimensionError(f"latent must be (f, h, w, {self._cfg.c_lat}), got {z_t.shape}")
        x = permute(z_t, (0, 3, 1, 2))
        if self.conv_in.expanded:
            if z_a is None:
                raise DimensionError("the conditional model needs a condition latent z_a")
            z_a = as_tensor(z_a)
            if z_a.shape != z_t.shape:
                raise DimensionError(f"condition latent {z_a.shape} != noisy latent {z_t.shape}")
            x = concat([x, permute(z_a, (0, 3, 1, 2))], axis=1)
        elif z_a is not None and np.shape(getattr(z_a, "data", z_a)) != z_t.shape:
            raise DimensionError(f"condition latent {np.shape(z_a)} != noisy latent {z_t.shape}")

        emb = self.embed(t, text_emb)
        h = self.conv_in(x)
        for block in self.blocks:
            h = block(h, emb)
        h = add(h, conv3d(h, self.temporal, self.temporal_b))
        h = silu(group_norm(h, self._cfg.groups, self.out_norm_w, self.out_norm_b))
        out = conv3d(h, self.conv_out, self.conv_out_b)
        return permute(out, (0, 2, 3, 1))

    def predict(self, z_t, t: int, text_emb=None, z_a=None) -> np.ndarray:
        """Forward pass on plain arrays without recording a graph."""
        saved = [(p, p.requires_grad) for p in self.parameters()]
        for p, _ in saved:
            p.requires_grad = False
        try:
            dtype = self.conv_in.weight.dtype
            za = None if z_a is None else np.asarray(z_a, dtype=dtype)
            return self(np.asarray(z_t, dtype=dtype), t, text_emb, za).data
        finally:
            for p, flag in saved:
                p.requires_grad = flag

    def config_dict(self) -> dict:
        return asdict(self._cfg)


# -- objective ------------------------------------------------------------------

@dataclass
class TrainItem:
    z: np.ndarray            # clean latent (f, h, w, c)
    text_emb: np.ndarray     # caption embedding
    z_a: np.ndarray | None = None


def draw_noise(rng: np.random.Generator, items, schedule: NoiseSchedule) -> list[tuple[int, np.ndarray]]:
    """Uniform step and Gaussian noise for each item."""
    return [(int(rng.integers(1, schedule.T + 1)), rng.standard_normal(np.shape(item.z))) for item in items]


def training_loss(net, items, schedule: NoiseSchedule, rng: np.random.Generator | None = None,
                  draws=None, text_drop: float = 0.0, conditional: bool = True) -> Tensor:
    """Mean over items of ‖ε − ε_θ(z_t, t, y, z_a)‖² (per-entry mean).

    ``draws`` fixes the (t, ε) pairs; otherwise they are sampled from ``rng``.
    With ``text_drop`` > 0 each caption is replaced by the null embedding with
    that probability.  ``conditional=False`` never passes ``z_a`` (stage one).
    """
    items = list(items)
    if not items:
        raise DimensionError("training_loss needs a non-empty batch")
    if draws is None:
        if rng is None:
            raise ValueError("pass either rng or draws")
        draws = draw_noise(rng, items, schedule)
    total = None
    for item, (t, eps) in zip(items, draws):
        z_t = q_sample(item.z, t, eps, schedule)
        text = item.text_emb
        if text_drop > 0.0 and rng is not None and rng.random() < text_drop:
            text = None
        dtype = _dtype_of(net)
        pred = net(np.asarray(z_t, dtype=dtype), t, text,
                   None if not conditional or item.z_a is None else np.asarray(item.z_a, dtype=dtype))
        loss = mse_loss(pred, np.asarray(eps, dtype=pred.dtype))
        total = loss if total is None else add(total, loss)
    if len(items) > 1:
        total = total * (1.0 / len(items))
    return total


def _dtype_of(net):
    try:
        return net.conv_in.weight.dtype
    except AttributeError:
        return np.float64
