"""Parameter containers.

A :class:`Module` owns :class:`Parameter` attributes and child modules (also
inside lists). ``named_parameters`` walks them in attribute definition
order, which fixes the checkpoint record order and the initialisation order.
"""

from __future__ import annotations

from typing import Iterator

import numpy as np

from sstdunet.tensor.core import Tensor


class Parameter(Tensor):
    """Leaf tensor that always tracks gradients.

    ``init`` tags how :func:`sstdunet.network.init_weights` fills it:
    ``("zeros",)``, ``("ones",)``, ``("he", fan_in)`` or ``("lecun", fan_in)``.
    """

    def __init__(self, data, dtype=None, init=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.init = init or ("zeros",)


class Module:
    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in vars(self).items():
            yield from _walk(value, f"{prefix}{name}")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def to(self, dtype) -> "Module":
        """Cast every parameter in place; used to switch to 64-bit for gradient checks."""
        for p in self.parameters():
            p.data = np.ascontiguousarray(p.data.astype(dtype))
            p.grad = None
        return self

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={missing} unexpected={unexpected}")
        for name, p in own.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"{name}: shape {arr.shape} != expected {p.shape}")
            p.data = np.ascontiguousarray(arr.copy())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


def _walk(value, name: str) -> Iterator[tuple[str, Parameter]]:
    if isinstance(value, Parameter):
        yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(prefix=name + ".")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(item, f"{name}.{i}")


def count_parameters(module: Module) -> int:
    """Exact number of learnable scalars."""
    return int(sum(p.size for p in module.parameters()))
