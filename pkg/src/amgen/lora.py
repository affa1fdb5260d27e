"""Low-rank adapters and the conditional surgery on a trained denoiser.

A wrapped layer computes ``Y = X W + b + s (X L1) L2`` with ``W`` and ``b``
frozen.  ``L1`` starts as a seeded Gaussian scaled by 1/sqrt(h) and ``L2`` as
zeros, so a freshly wrapped layer reproduces the base layer exactly.
"""

from __future__ import annotations

import copy
import logging
from pathlib import Path

import numpy as np

from .autodiff.io import load_archive, save_archive
from .autodiff.tensor import ContractError, DimensionError, Tensor, add, as_tensor, matmul
from .config import format_config, read_config
from .nn import Linear, Module, add_bias
from .vocab import ConfigurationError

log = logging.getLogger(__name__)


class LoRALinear(Module):
    """Frozen dense layer plus a trainable rank-r correction."""

    def __init__(self, weight: Tensor, bias: Tensor | None, rank: int, scale: float = 1.0, seed: int = 0):
        h, o = weight.shape
        if not 1 <= rank <= min(h, o):
            raise ConfigurationError(f"LoRA rank {rank} must lie in [1, min({h}, {o})]")
        self.weight = weight
        self.bias = bias
        self.weight.requires_grad = False
        if self.bias is not None:
            self.bias.requires_grad = False
        rng = np.random.default_rng(seed)
        dtype = weight.dtype
        self.L1 = Tensor(rng.standard_normal((h, rank)) / np.sqrt(h), requires_grad=True, dtype=dtype)
        self.L2 = Tensor(np.zeros((rank, o)), requires_grad=True, dtype=dtype)
        self._scale = float(scale)

    @property
    def rank(self) -> int:
        return self.L1.shape[1]

    @property
    def scale(self) -> float:
        return self._scale

    @property
    def n_in(self) -> int:
        return self.weight.shape[0]

    @property
    def n_out(self) -> int:
        return self.weight.shape[1]

    def __call__(self, x: Tensor) -> Tensor:
        x = as_tensor(x)
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise DimensionError(f"LoRA layer expects (n, {self.n_in}) input, got {x.shape}")
        y = matmul(x, self.weight)
        if self.bias is not None:
            y = add_bias(y, self.bias)
        low = matmul(matmul(x, self.L1), self.L2)
        return add(y, low * self._scale)


def lora_wrap(W, r: int, s: float = 1.0, seed: int = 0, bias=None) -> LoRALinear:
    """Wrap a dense (h, o) weight; ``W`` is frozen in place when it is a Tensor."""
    w = W if isinstance(W, Tensor) else Tensor(W)
    b = None if bias is None else (bias if isinstance(bias, Tensor) else Tensor(bias))
    return LoRALinear(w, b, r, s, seed)


def wrap_linear(layer: Linear, r: int, s: float = 1.0, seed: int = 0) -> LoRALinear:
    return LoRALinear(layer.weight, layer.bias, r, s, seed)


def lora_forward(layer: LoRALinear, X) -> Tensor:
    return layer(X)


def merge_lora(layer: LoRALinear) -> np.ndarray:
    """Dense weight ``W + s L1 L2`` (bias unchanged)."""
    w = layer.weight.data.astype(np.float64)
    return (w + layer.scale * (layer.L1.data.astype(np.float64) @ layer.L2.data.astype(np.float64))).astype(
        layer.weight.dtype)


def expand_first_layer(conv) -> None:
    """Double the input channels of the denoiser's first convolution in place.

    The original kernel is kept (and frozen by the caller's policy); the new
    channels start at zero and are trainable.
    """
    if getattr(conv, "cond_weight", None) is not None:
        raise ContractError("first layer is already expanded")
    conv.cond_weight = Tensor(np.zeros(conv.weight.shape), requires_grad=True, dtype=conv.weight.dtype)


# -- conditional model ------------------------------------------------------------

def lora_targets(net) -> list[tuple[str, object, str]]:
    """(dotted name, owner, attribute) of every linear layer that receives an adapter."""
    out = [("text_proj", net, "text_proj")]
    for i, block in enumerate(net.blocks):
        out.append((f"blocks.{i}.emb_proj", block, "emb_proj"))
        out.append((f"blocks.{i}.pointwise", block, "pointwise"))
    return out


def make_conditional(base, rank: int = 4, scale: float = 1.0, seed: int = 0):
    """Stage-two model: a frozen copy of ``base`` with adapters and an expanded first layer."""
    if base.conv_in.expanded:
        raise ContractError("model is already conditional")
    net = copy.deepcopy(base)
    net.freeze()
    for k, (_, owner, attr) in enumerate(lora_targets(net)):
        setattr(owner, attr, wrap_linear(getattr(owner, attr), rank, scale, seed=seed + k))
    expand_first_layer(net.conv_in)
    net._lora = {"rank": rank, "scale": scale, "seed": seed}
    return net


def freeze_policy(net) -> dict[str, bool]:
    """Parameter name -> trainable flag."""
    return {name: p.requires_grad for name, p in net.named_parameters()}


def expected_trainable_count(net) -> int:
    """Σ r (h + o) over wrapped layers plus the new first-layer channels."""
    total = 0
    for _, owner, attr in lora_targets(net):
        layer = getattr(owner, attr)
        if isinstance(layer, LoRALinear):
            total += layer.rank * (layer.n_in + layer.n_out)
    if net.conv_in.expanded:
        total += net.conv_in.cond_weight.size
    return total


def trainable_count(net) -> int:
    return sum(p.size for _, p in net.trainable())


def adapter_state(net) -> dict[str, np.ndarray]:
    return {name: p.data for name, p in net.trainable()}


ADAPTER_FILE = "adapter.amgt"
STATE_FILE = "training_state.txt"


def save_adapter(net, directory, base_sha256: str, extra: dict | None = None) -> str:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    digest = save_archive(d / ADAPTER_FILE, adapter_state(net))
    state = {"kind": "adapter", "base_sha256": base_sha256, **getattr(net, "_lora", {}), **(extra or {})}
    (d / STATE_FILE).write_text(format_config(state))
    return digest


def load_adapter(base, directory, base_sha256: str):
    """Re-attach a stored adapter to the matching base model."""
    d = Path(directory)
    state = read_config(d / STATE_FILE)
    if state.get("base_sha256") != base_sha256:
        raise ContractError("adapter was trained on a different base checkpoint")
    net = make_conditional(base, int(state["rank"]), float(state["scale"]), int(state["seed"]))
    tensors = load_archive(d / ADAPTER_FILE)
    trainable = {n for n, p in net.trainable()}
    if set(tensors) != trainable:
        raise ContractError(f"adapter tensors {sorted(tensors)} do not match trainable set {sorted(trainable)}")
    net.load_state_dict({n: tensors[n] for n in tensors}, strict=False)
    log.info("attached adapter with %d tensors", len(tensors))
    return net
