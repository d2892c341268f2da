"""Reverse-mode gradients of every conditioning layer and both GAN losses
against central differences."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .conditioning import (BilinearParams, ConcatParams, FiLMParams, LowRankBRLParams,
                           bilinear_condition, brl_forward, concat_condition, film_condition,
                           low_rank_bilinear)
from .tensor import Rng

LAYERS = ("concat", "film", "bilinear", "low_rank", "brl", "loss_d", "loss_g")
H = 1e-5
FLOOR = 1e-7
TOLERANCE = 1e-4


@dataclass
class GradcheckResult:
    layer: str
    draws: int
    checked: int
    max_rel_error: float
    redrawn: int = 0

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= TOLERANCE and self.redrawn <= self.draws


def _straddles_kink(f, x, i) -> bool:
    """True when the central difference at coordinate ``i`` is not converged in
    the step size, i.e. a leaky-ReLU kink lies within one step of ``x``.

    For a smooth function the differences at ``H`` and ``H / 10`` agree to
    O(H^2); a kink inside the stencil shifts the coarse one by O(slope jump).
    """
    coarse = ad.finite_diff_grad(f, x, H, [i]).reshape(-1)[i]
    fine = ad.finite_diff_grad(f, x, H / 10, [i]).reshape(-1)[i]
    return ad.max_relative_error(coarse, fine, FLOOR) > TOLERANCE


def _compare(loss_fn, params, rng: Rng, coords_per_param: int | None):
    """``loss_fn()`` reads the current ``params`` values; probe each one by central differences.

    Returns ``(max relative error, coordinates checked, kink hit)``. When a
    mismatching coordinate turns out to sit on a kink the draw is unusable and
    the caller redraws it.
    """
    grads = ad.backward(loss_fn())
    worst, checked = 0.0, 0
    for p in params:
        analytic = grads.get(p.name, np.zeros_like(p.value))
        size = p.value.size
        coords = None
        if coords_per_param is not None and size > coords_per_param:
            coords = np.sort(rng.permutation(size)[:coords_per_param])
        saved = p.value.copy()

        def f(x, p=p):
            p.value[...] = x
            with ad.no_grad():
                return float(ad.value(loss_fn()))

        numeric = ad.finite_diff_grad(f, saved, H, coords)
        idx = np.arange(size) if coords is None else coords
        a, n = analytic.reshape(-1), numeric.reshape(-1)
        for i in idx:
            err = ad.max_relative_error(a[i], n[i], FLOOR)
            if err > TOLERANCE and _straddles_kink(f, saved, i):
                p.value[...] = saved
                return worst, checked, True
            worst = max(worst, err)
        p.value[...] = saved
        checked += len(idx)
    return worst, checked, False


def _layer_case(layer: str, rng: Rng):
    """Unit-scale parameters and inputs; objective is a random projection of the output."""
    B, D, Dc, O, d = 3, 5, 4, 6, 3
    if layer == "concat":
        p = ConcatParams.init(rng, D, Dc, O, std=1.0)
        fn, shape = concat_condition, (B, O)
    elif layer == "film":
        p = FiLMParams.init(rng, D, Dc, O, std=1.0)
        fn, shape = film_condition, (B, O)
    elif layer == "bilinear":
        p = BilinearParams.init(rng, D, Dc, O, std=1.0)
        fn, shape = bilinear_condition, (B, O)
    elif layer == "low_rank":
        p = LowRankBRLParams.init(rng, D, Dc, d, O=O, std=1.0)
        fn, shape = low_rank_bilinear, (B, O)
    else:
        p = LowRankBRLParams.init(rng, D, Dc, d, std=1.0)
        fn, shape = brl_forward, (B, 2, 3, D)
    p = p.as_params(layer + ".")
    f = ad.Param(rng.normal(shape[:-1] + (D,)), "input_f")
    c = ad.Param(rng.normal((B, Dc)), "input_c")
    proj = rng.normal(shape)
    params = p.weights() + [f, c]

    def loss():
        return ad.sum(ad.mul(fn(p, f, c), proj))

    return loss, params


def _loss_case(layer: str, rng: Rng):
    from .data import Batch
    from .gan import Discriminator, Generator, TrainConfig, discriminator_loss, generator_loss

    cfg = TrainConfig(image_size=8, width=3, features=4, embed_dim=4, rank=2, depth=2,
                      conv_init="fan_in")
    classes = 4
    G = Generator(rng.child(0), classes, cfg)
    D = Discriminator(rng.child(1), classes, cfg)
    for layer_ in G.fuse:  # unit-scale factors so the fusion path carries signal
        for w in layer_.params.weights():
            w.value[...] = rng.normal(w.value.shape, 0.5)
    x = np.tanh(rng.normal((2, 8, 8, 3)))
    t = rng.integers(classes, size=2)
    batch = Batch(x, t, (t + 1) % classes, (t + 2) % classes)
    if layer == "loss_d":
        return (lambda: discriminator_loss(D, G, batch)), D.parameters()
    return (lambda: generator_loss(D, G, batch)), G.parameters()


def check_layer(layer: str, seed: int = 0, draws: int = 20,
                coords_per_param: int | None = 12) -> GradcheckResult:
    if layer not in LAYERS:
        raise ValueError(f"unknown layer {layer!r}; choose from {LAYERS}")
    rng = Rng(seed).child(LAYERS.index(layer))
    worst, checked, accepted, redrawn = 0.0, 0, 0, 0
    while accepted < draws and redrawn <= draws:
        if layer.startswith("loss"):
            loss, params = _loss_case(layer, rng)
            w, n, kink = _compare(loss, params, rng, coords_per_param)
        else:
            loss, params = _layer_case(layer, rng)
            w, n, kink = _compare(loss, params, rng, None)
        if kink:
            redrawn += 1
            continue
        accepted += 1
        worst, checked = max(worst, w), checked + n
    return GradcheckResult(layer, accepted, checked, worst, redrawn)
