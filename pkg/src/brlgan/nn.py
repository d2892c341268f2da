"""Small trainable building blocks on top of :mod:`brlgan.autodiff`."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import autodiff as ad
from .tensor import Rng, gaussian_init, load_tensor, save_tensor


class Module:
    """Minimal container: parameters are collected from attributes in definition order."""

    def parameters(self) -> list[ad.Param]:
        out = []
        for v in vars(self).values():
            if isinstance(v, ad.Param):
                out.append(v)
            elif isinstance(v, Module):
                out.extend(v.parameters())
            elif isinstance(v, (list, tuple)):
                for item in v:
                    if isinstance(item, ad.Param):
                        out.append(item)
                    elif isinstance(item, Module):
                        out.extend(item.parameters())
                    elif hasattr(item, "weights"):
                        out.extend(w for w in item.weights() if isinstance(w, ad.Param))
            elif hasattr(v, "weights"):
                out.extend(w for w in v.weights() if isinstance(w, ad.Param))
        return out

    def named_parameters(self) -> dict[str, ad.Param]:
        return {p.name: p for p in self.parameters()}

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.value.copy() for p in self.parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"state is missing parameters: {sorted(missing)}")
        for name, p in params.items():
            if state[name].shape != p.value.shape:
                raise ValueError(f"{name}: stored shape {state[name].shape} != {p.value.shape}")
            p.value[...] = state[name]

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for name, p in self.named_parameters().items():
            save_tensor(d / f"{name}.ten", p.value)

    def load(self, directory) -> None:
        d = Path(directory)
        self.load_state_dict({n: load_tensor(d / f"{n}.ten") for n in self.named_parameters()})


class Conv2d(Module):
    def __init__(self, rng: Rng, name: str, c_in: int, c_out: int, k: int = 3,
                 stride: int = 1, pad: int | None = None, std: float | None = 0.02):
        if std is None:
            # fan-in scaling for leaky-ReLU(0.2) stacks
            std = float(np.sqrt(2.0 / (1.0 + 0.2**2) / (k * k * c_in)))
        self.stride = stride
        self.pad = k // 2 if pad is None else pad
        self.weight = ad.Param(gaussian_init(rng, (k, k, c_in, c_out), std), f"{name}.weight")
        self.bias = ad.Param(np.zeros(c_out), f"{name}.bias")

    def __call__(self, x):
        return ad.add_bias(ad.conv2d(x, self.weight, self.stride, self.pad), self.bias)


class Embedding(Module):
    def __init__(self, rng: Rng, name: str, n: int, dim: int, std: float = 1.0):
        self.n = n
        self.table = ad.Param(gaussian_init(rng, (n, dim), std), f"{name}.table")

    def __call__(self, ids):
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= self.n):
            bad = ids[(ids < 0) | (ids >= self.n)][0]
            raise VocabularyError(f"attribute id {int(bad)} outside vocabulary of {self.n}")
        return ad.embedding(self.table, ids)


class Linear(Module):
    def __init__(self, rng: Rng, name: str, n_in: int, n_out: int, std: float = 0.02):
        self.weight = ad.Param(gaussian_init(rng, (n_in, n_out), std), f"{name}.weight")
        self.bias = ad.Param(np.zeros(n_out), f"{name}.bias")

    def __call__(self, x):
        return ad.add_bias(ad.matmul(x, self.weight), self.bias)


class VocabularyError(KeyError):
    """Unknown attribute id."""
