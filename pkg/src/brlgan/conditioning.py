"""Conditioning layers that fuse a feature input with a conditioning vector.

All four layers act on the last axis, so a single vector ``f`` of width D
and a batch ``[..., D]`` are handled alike. Weights may be plain arrays or
:class:`~brlgan.autodiff.Param` nodes; in the latter case the result is a
differentiable node.

Row-vector convention throughout: ``f @ W_f`` with ``W_f`` of shape
``[D, O]``. The low-rank projection ``P`` has shape ``[O, d]`` and is applied
as ``z @ P.T``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .tensor import DimensionError, ParameterError, Rng, gaussian_init, load_tensor, save_tensor

INIT_STD = 0.02
MAX_BILINEAR_PARAMS = 10**7


class ConfigurationError(ValueError):
    """Layer hyperparameters are mutually inconsistent."""


def _shape(x):
    return ad.value(x).shape


def _check_input(x, width, name):
    if _shape(x)[-1:] != (width,):
        raise DimensionError(f"{name} has shape {_shape(x)}, expected last axis {width}")


class _Params:
    kind = ""

    def as_params(self, prefix: str = ""):
        """Copy with every weight wrapped as a named trainable ``Param``."""
        kw = {f.name: getattr(self, f.name) for f in fields(self)}
        for name in self.weight_names:
            kw[name] = ad.Param(ad.value(kw[name]), prefix + name)
        return type(self)(**kw)

    def weights(self):
        return [getattr(self, n) for n in self.weight_names]

    def dims(self) -> dict:
        raise NotImplementedError

    def save(self, directory) -> None:
        """Write each weight as ``<name>.ten`` plus a ``manifest.json``."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for name in self.weight_names:
            save_tensor(d / f"{name}.ten", ad.value(getattr(self, name)))
        manifest = {"kind": self.kind, **self.dims(), "weights": list(self.weight_names)}
        (d / "manifest.json").write_text(json.dumps(manifest, sort_keys=True) + "\n")


@dataclass
class ConcatParams(_Params):
    W_f: np.ndarray
    W_c: np.ndarray

    kind = "concat"
    weight_names = ("W_f", "W_c")

    def __post_init__(self):
        (D, O), (Dc, Oc) = _shape(self.W_f), _shape(self.W_c)
        if O != Oc:
            raise DimensionError(f"W_f {(D, O)} and W_c {(Dc, Oc)} disagree on output width")

    def dims(self):
        D, O = _shape(self.W_f)
        return {"D": D, "D_cond": _shape(self.W_c)[0], "O": O}

    @classmethod
    def init(cls, rng: Rng, D: int, D_cond: int, O: int, std: float = INIT_STD):
        return cls(gaussian_init(rng, (D, O), std), gaussian_init(rng, (D_cond, O), std))


@dataclass
class FiLMParams(_Params):
    W_f: np.ndarray
    W_gain: np.ndarray
    W_c: np.ndarray

    kind = "film"
    weight_names = ("W_f", "W_gain", "W_c")

    def __post_init__(self):
        D, O = _shape(self.W_f)
        if _shape(self.W_gain)[1] != O or _shape(self.W_c) != _shape(self.W_gain):
            raise DimensionError(
                f"FiLM weights disagree: W_f {_shape(self.W_f)}, "
                f"W_gain {_shape(self.W_gain)}, W_c {_shape(self.W_c)}")

    def dims(self):
        D, O = _shape(self.W_f)
        return {"D": D, "D_cond": _shape(self.W_c)[0], "O": O}

    @classmethod
    def init(cls, rng: Rng, D: int, D_cond: int, O: int, std: float = INIT_STD):
        return cls(gaussian_init(rng, (D, O), std),
                   gaussian_init(rng, (D_cond, O), std),
                   gaussian_init(rng, (D_cond, O), std))


@dataclass
class BilinearParams(_Params):
    W: np.ndarray  # [O, D, D_cond]

    kind = "bilinear"
    weight_names = ("W",)

    def __post_init__(self):
        shp = _shape(self.W)
        if len(shp) != 3:
            raise DimensionError(f"W must be [O, D, D_cond], got {shp}")
        if int(np.prod(shp)) > MAX_BILINEAR_PARAMS:
            raise ConfigurationError(
                f"full bilinear layer with {int(np.prod(shp))} weights exceeds {MAX_BILINEAR_PARAMS}")

    def dims(self):
        O, D, Dc = _shape(self.W)
        return {"D": D, "D_cond": Dc, "O": O}

    @classmethod
    def init(cls, rng: Rng, D: int, D_cond: int, O: int, std: float = INIT_STD):
        if D * D_cond * O > MAX_BILINEAR_PARAMS:
            raise ConfigurationError(f"full bilinear layer with {D * D_cond * O} weights is too large")
        return cls(gaussian_init(rng, (O, D, D_cond), std))


@dataclass
class LowRankBRLParams(_Params):
    U: np.ndarray  # [D, d]
    V: np.ndarray  # [D_cond, d]
    P: np.ndarray  # [O, d]

    kind = "brl"
    weight_names = ("U", "V", "P")

    def __post_init__(self):
        (D, d), (Dc, dv), (O, dp) = _shape(self.U), _shape(self.V), _shape(self.P)
        if not d == dv == dp:
            raise DimensionError(f"rank mismatch: U {(D, d)}, V {(Dc, dv)}, P {(O, dp)}")
        if d > min(D, Dc):
            raise ConfigurationError(f"rank d={d} exceeds min(D, D_cond)={min(D, Dc)}")

    @property
    def rank(self) -> int:
        return _shape(self.U)[1]

    def dims(self):
        return {"D": _shape(self.U)[0], "D_cond": _shape(self.V)[0], "O": _shape(self.P)[0],
                "d": self.rank}

    @classmethod
    def init(cls, rng: Rng, D: int, D_cond: int, d: int, O: int | None = None,
             std: float = INIT_STD):
        O = D if O is None else O
        return cls(gaussian_init(rng, (D, d), std), gaussian_init(rng, (D_cond, d), std),
                   gaussian_init(rng, (O, d), std))


PARAM_KINDS = {c.kind: c for c in (ConcatParams, FiLMParams, BilinearParams, LowRankBRLParams)}


def load_params(directory):
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    cls = PARAM_KINDS[manifest["kind"]]
    return cls(**{n: load_tensor(d / f"{n}.ten") for n in cls.weight_names})


def concat_condition(p: ConcatParams, f, c):
    """Concatenation conditioning, written as ``f W_f + c W_c``."""
    _check_input(f, _shape(p.W_f)[0], "feature input")
    _check_input(c, _shape(p.W_c)[0], "conditioning input")
    return ad.add(ad.matmul(f, p.W_f), ad.matmul(c, p.W_c))


def film_condition(p: FiLMParams, f, c):
    """Feature-wise gain and bias: ``(f W_f) * (c W_gain) + c W_c``."""
    _check_input(f, _shape(p.W_f)[0], "feature input")
    _check_input(c, _shape(p.W_c)[0], "conditioning input")
    gain = ad.matmul(c, p.W_gain)
    return ad.add(ad.mul(ad.matmul(f, p.W_f), gain), ad.matmul(c, p.W_c))


def bilinear_condition(p: BilinearParams, f, c):
    _, D, Dc = _shape(p.W)
    _check_input(f, D, "feature input")
    _check_input(c, Dc, "conditioning input")
    return ad.bilinear(f, p.W, c)


def low_rank_bilinear(p: LowRankBRLParams, f, c):
    """``P (f U * c V)``: each output is a bilinear form of rank at most d."""
    _check_input(f, _shape(p.U)[0], "feature input")
    _check_input(c, _shape(p.V)[0], "conditioning input")
    joint = ad.mul(ad.matmul(f, p.U), ad.matmul(c, p.V))
    return ad.matmul(joint, ad.transpose(p.P))


def low_rank_to_bilinear(p: LowRankBRLParams) -> BilinearParams:
    """The full weights ``W_i = U diag(P_i) V^T`` that ``low_rank_bilinear`` realises."""
    U, V, P = (np.asarray(ad.value(w)) for w in p.weights())
    return BilinearParams(np.einsum("ar,ir,br->iab", U, P, V))


ACTIVATIONS = ("leaky", "identity")


def _activate(x, activation):
    if activation == "leaky":
        return ad.leaky_relu(x, 0.2)
    if activation == "identity":
        return x
    raise ParameterError(f"unknown activation {activation!r}; choose from {ACTIVATIONS}")


def brl_forward(p: LowRankBRLParams, f, c, activation: str = "leaky"):
    """Bilinear residual layer over a feature map.

    ``f`` is ``[H, W, D]`` or ``[B, H, W, D]``; ``c`` is ``[D_cond]`` or
    ``[B, D_cond]``. Returns ``act(f + P(f U * tile(c) V))`` with the same
    shape as ``f``.
    """
    D, O = _shape(p.U)[0], _shape(p.P)[0]
    if O != D:
        raise ConfigurationError(f"residual shortcut needs O == D, got O={O}, D={D}")
    fshape = _shape(f)
    unbatched = len(fshape) == 3
    if unbatched:
        f = ad.reshape(f, (1,) + fshape)
        c = ad.reshape(c, (1,) + _shape(c))
    if len(_shape(f)) != 4 or len(_shape(c)) != 2 or _shape(c)[0] != _shape(f)[0]:
        raise DimensionError(f"brl_forward: feature map {fshape} and condition {_shape(c)} do not pair up")
    _check_input(f, D, "feature map")
    _check_input(c, _shape(p.V)[0], "conditioning input")
    _, H, W, _ = _shape(f)
    # c V is the same at every location, so project once and tile the result
    cond = ad.tile_spatial(ad.matmul(c, p.V), H, W)
    joint = ad.mul(ad.matmul(f, p.U), cond)
    out = _activate(ad.add(f, ad.matmul(joint, ad.transpose(p.P))), activation)
    return ad.reshape(out, fshape) if unbatched else out


class BilinearResidualLayer:
    """A BRL with its parameters; validates the residual shape when built."""

    def __init__(self, params: LowRankBRLParams, activation: str = "leaky"):
        D, O = _shape(params.U)[0], _shape(params.P)[0]
        if O != D:
            raise ConfigurationError(f"residual shortcut needs O == D, got O={O}, D={D}")
        if activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {activation!r}")
        self.params = params
        self.activation = activation

    def __call__(self, f, c):
        return brl_forward(self.params, f, c, self.activation)
