"""Dense float64 tensors, seeded randomness and the ``.ten`` file format.

A tensor is a C-contiguous ``numpy.ndarray`` of float64 in row-major order.
Values returned by the functions here are marked read-only; optimizers own
their parameter buffers and update those in place.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels

Tensor = np.ndarray

MAGIC = b"TEN\x01"

_MASK64 = (1 << 64) - 1


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ParameterError(ValueError):
    """An argument lies outside its admissible range."""


class NonFiniteError(ArithmeticError):
    """A NaN or infinity appeared where a finite value is required."""


def _frozen(a: np.ndarray) -> Tensor:
    a.flags.writeable = False
    return a


def as_tensor(x, *, copy: bool = False) -> Tensor:
    a = np.array(x, dtype=np.float64, copy=copy, order="C")
    if a.ndim and 0 in a.shape:
        raise DimensionError(f"tensor has an empty dimension: shape {a.shape}")
    return a


def check_finite(x: Tensor, name: str = "tensor") -> Tensor:
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"{name} contains non-finite values")
    return x


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with a fixed left-to-right summation order over ``k``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return _frozen(check_finite(kernels.matmul_ordered(a, b), "matmul result"))


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"hadamard: shapes differ, {a.shape} vs {b.shape}")
    return _frozen(check_finite(a * b, "hadamard result"))


def tile(a: Tensor, reps: Sequence[int]) -> Tensor:
    """Repeat ``a`` along new leading axes, e.g. ``tile(c, (H, W))`` -> ``[H, W, *c.shape]``.

    This is the only broadcasting-like operation the library offers.
    """
    a = np.asarray(a, dtype=np.float64)
    reps = tuple(int(r) for r in reps)
    if any(r < 1 for r in reps):
        raise ParameterError(f"tile repetitions must be positive, got {reps}")
    out = np.broadcast_to(a, reps + a.shape).copy()
    return _frozen(out)


def splitmix64(state: int) -> tuple[int, int]:
    """One SplitMix64 step: returns ``(new_state, output)``."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


class Rng:
    """Seeded random source.

    The 64-bit seed is expanded by SplitMix64 into the 128-bit state of a
    numpy ``PCG64`` bit generator, which produces all draws. ``child(i)``
    derives an independent stream, so components can own their randomness
    without consuming the parent's sequence.
    """

    def __init__(self, seed: int):
        if not 0 <= int(seed) <= _MASK64:
            raise ParameterError(f"seed must be an unsigned 64-bit integer, got {seed}")
        self.seed = int(seed)
        s, hi = splitmix64(self.seed)
        s, lo = splitmix64(s)
        self._gen = np.random.Generator(np.random.PCG64((hi << 64) | lo))

    @property
    def counter(self) -> int:
        return int(self._gen.bit_generator.state["state"]["state"])

    def child(self, index: int) -> "Rng":
        _, out = splitmix64(self.seed ^ ((int(index) * 0xD1B54A32D192ED03) & _MASK64))
        return Rng(out)

    def normal(self, shape, std: float = 1.0) -> np.ndarray:
        return self._gen.normal(0.0, std, size=shape)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size=size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)


def gaussian_init(rng: Rng, shape, std: float) -> Tensor:
    if not std > 0:
        raise ParameterError(f"std must be positive, got {std}")
    shape = (shape,) if isinstance(shape, int) else tuple(shape)
    return _frozen(np.ascontiguousarray(rng.normal(shape, std)))


def dumps(t: Tensor) -> bytes:
    t = np.asarray(t, dtype="<f8", order="C")
    header = MAGIC + struct.pack("<Q", t.ndim) + struct.pack(f"<{t.ndim}Q", *t.shape)
    return header + t.tobytes(order="C")


def loads(buf: bytes) -> Tensor:
    if buf[:4] != MAGIC:
        raise ValueError("not a .ten tensor (bad magic bytes)")
    (rank,) = struct.unpack_from("<Q", buf, 4)
    dims = struct.unpack_from(f"<{rank}Q", buf, 12)
    offset = 12 + 8 * rank
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    if len(buf) - offset != 8 * count:
        raise ValueError(f"payload holds {len(buf) - offset} bytes, dims {dims} need {8 * count}")
    data = np.frombuffer(buf, dtype="<f8", count=count, offset=offset)
    return data.astype(np.float64).reshape(dims)


def save_tensor(path, t: Tensor) -> None:
    Path(path).write_bytes(dumps(t))


def load_tensor(path) -> Tensor:
    return loads(Path(path).read_bytes())
