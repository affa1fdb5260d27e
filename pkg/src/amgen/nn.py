"""Parameter containers on top of the autodiff tensor."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .autodiff.tensor import DimensionError, Tensor, add, expand, matmul, reshape


class Module:
    """Anything holding Tensors, sub-modules or lists of sub-modules as attributes.

    Parameter names are dotted attribute paths in attribute insertion order,
    which makes checkpoints and optimiser state line up deterministically.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            full = f"{prefix}{name}"
            if isinstance(value, Tensor):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
                for i, sub in enumerate(value):
                    yield from sub.named_parameters(f"{full}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def trainable(self) -> list[tuple[str, Tensor]]:
        return [(n, p) for n, p in self.named_parameters() if p.requires_grad]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state, strict: bool = True) -> None:
        params = dict(self.named_parameters())
        if strict:
            missing = sorted(set(params) - set(state))
            extra = sorted(set(state) - set(params))
            if missing or extra:
                raise KeyError(f"state mismatch; missing {missing}, unexpected {extra}")
        for name, arr in state.items():
            if name not in params:
                continue
            p = params[name]
            arr = np.asarray(arr)
            if arr.shape != p.shape:
                raise DimensionError(f"{name}: stored shape {arr.shape} != parameter shape {p.shape}")
            p.data = arr.astype(p.dtype)

    def freeze(self) -> None:
        for p in self.parameters():
            p.requires_grad = False
            p.grad = None

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


def init_normal(rng: np.random.Generator, shape, std: float, name: str | None = None) -> Tensor:
    return Tensor(rng.standard_normal(shape) * std, requires_grad=True, name=name)


def zeros(shape, name: str | None = None) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True, name=name)


def add_bias(y: Tensor, bias: Tensor) -> Tensor:
    """Add a (o,) bias to every row of a (n, o) tensor."""
    return add(y, expand(reshape(bias, (1, bias.shape[0])), y.shape))


class Linear(Module):
    """Y = X W + b with W stored as (in, out)."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True, scale: float = 1.0):
        self.weight = init_normal(rng, (n_in, n_out), scale / np.sqrt(n_in))
        self.bias = zeros((n_out,)) if bias else None

    @property
    def n_in(self) -> int:
        return self.weight.shape[0]

    @property
    def n_out(self) -> int:
        return self.weight.shape[1]

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise DimensionError(f"linear layer expects (n, {self.n_in}) input, got {x.shape}")
        y = matmul(x, self.weight)
        return y if self.bias is None else add_bias(y, self.bias)
