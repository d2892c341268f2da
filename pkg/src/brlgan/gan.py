"""Attribute-editing conditional GAN with a bilinear residual fusing stack.

The generator encodes an image, fuses it with the target attribute embedding
through ``depth`` bilinear residual layers and decodes back to an image. The
discriminator scores (image, attribute) pairs; it sees the attribute only by
channel concatenation. Both are trained with least-squares objectives.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .conditioning import BilinearResidualLayer, LowRankBRLParams
from .data import Batch, ShapeDataset
from .nn import Conv2d, Embedding, Module
from .tensor import DimensionError, NonFiniteError, ParameterError, Rng

log = logging.getLogger(__name__)

ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    lr: float = 0.0002
    beta1: float = 0.5
    beta2: float = 0.999
    batch: int = 64
    epochs: int = 100
    rank: int = 8
    depth: int = 4
    seed: int = 0
    image_size: int = 16
    width: int = 16
    features: int = 32
    embed_dim: int = 16
    squash: bool = True
    conv_init: str = "fan_in"
    checkpoint_every: int = 0

    def __post_init__(self):
        for name in ("lr", "batch", "rank", "depth", "image_size", "width", "features", "embed_dim"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be positive, got {getattr(self, name)}")
        if self.epochs < 0 or self.checkpoint_every < 0 or self.seed < 0:
            raise ParameterError("epochs, checkpoint_every and seed must be non-negative")
        for name in ("beta1", "beta2"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ParameterError(f"{name} must lie in (0, 1), got {getattr(self, name)}")
        if self.conv_init not in ("fan_in", "normal"):
            raise ParameterError(f"conv_init must be 'fan_in' or 'normal', got {self.conv_init!r}")
        if self.image_size % 4:
            raise ParameterError(f"image_size must be divisible by 4, got {self.image_size}")
        if self.rank > min(self.features, self.embed_dim):
            raise ParameterError(
                f"rank {self.rank} exceeds min(features, embed_dim) = {min(self.features, self.embed_dim)}")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name: f.type for f in fields(cls)}
        unknown = set(d) - set(known)
        if unknown:
            raise ParameterError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def _conv_std(cfg: TrainConfig):
    return None if cfg.conv_init == "fan_in" else 0.02


class Generator(Module):
    """Encoder, ``depth`` bilinear residual layers, decoder with tanh output."""

    def __init__(self, rng: Rng, num_classes: int, cfg: TrainConfig, activation: str = "leaky"):
        w, D = cfg.width, cfg.features
        std = _conv_std(cfg)
        self.embed = Embedding(rng, "G.embed", num_classes, cfg.embed_dim)
        self.enc = [Conv2d(rng, "G.enc0", 3, w, std=std),
                    Conv2d(rng, "G.enc1", w, 2 * w, stride=2, std=std),
                    Conv2d(rng, "G.enc2", 2 * w, D, stride=2, std=std)]
        self.fuse = [
            BilinearResidualLayer(
                LowRankBRLParams.init(rng, D, cfg.embed_dim, cfg.rank).as_params(f"G.brl{i}."),
                activation)
            for i in range(cfg.depth)]
        self.dec = [Conv2d(rng, "G.dec0", D, 2 * w, std=std),
                    Conv2d(rng, "G.dec1", 2 * w, w, std=std),
                    Conv2d(rng, "G.dec2", w, 3, std=std)]

    def parameters(self):
        out = super().parameters()
        for layer in self.fuse:
            out.extend(layer.params.weights())
        return out

    def zero_fusion(self) -> None:
        for layer in self.fuse:
            for p in layer.params.weights():
                p.value[...] = 0.0

    def __call__(self, x, attr):
        h = x
        for conv in self.enc:
            h = ad.leaky_relu(conv(h))
        c = self.embed(attr)
        for layer in self.fuse:
            h = layer(h, c)
        h = ad.leaky_relu(self.dec[0](ad.upsample2x(h)))
        h = ad.leaky_relu(self.dec[1](ad.upsample2x(h)))
        return ad.tanh(self.dec[2](h))


class Discriminator(Module):
    """Strided convolutions, tiled-attribute concatenation, two more convolutions."""

    def __init__(self, rng: Rng, num_classes: int, cfg: TrainConfig):
        w = cfg.width
        std = _conv_std(cfg)
        self.squash = cfg.squash
        self.embed = Embedding(rng, "D.embed", num_classes, cfg.embed_dim)
        self.enc = [Conv2d(rng, "D.enc0", 3, w, stride=2, std=std),
                    Conv2d(rng, "D.enc1", w, 2 * w, stride=2, std=std)]
        s = cfg.image_size // 4
        self.joint = Conv2d(rng, "D.joint", 2 * w + cfg.embed_dim, 2 * w, std=std)
        self.out = Conv2d(rng, "D.out", 2 * w, 1, k=s, pad=0, std=std)

    def __call__(self, x, attr):
        h = x
        for conv in self.enc:
            h = ad.leaky_relu(conv(h))
        _, H, W, _ = ad.value(h).shape
        c = ad.tile_spatial(self.embed(attr), H, W)
        h = ad.leaky_relu(self.joint(ad.concat([h, c], axis=-1)))
        score = ad.reshape(self.out(h), (-1,))
        return ad.sigmoid(score) if self.squash else score


def generator_forward(G: Generator, x, t_hat):
    x = np.asarray(x, dtype=np.float64)
    if x.size and (x.min() < -1.0 or x.max() > 1.0):
        raise ParameterError("input image values must lie in [-1, 1]")
    unbatched = x.ndim == 3
    out = G(x[None] if unbatched else x, np.atleast_1d(t_hat))
    return ad.reshape(out, x.shape) if unbatched else out


def discriminator_loss(D, G, batch: Batch):
    """Least-squares discriminator objective, batch means of three terms.

    ``D(x, t_bar)^2 + (D(x, t) - 1)^2 + D(G(x, t_hat), t_hat)^2``. The
    generator is evaluated without a tape: only D is trained by this loss.
    """
    n = len(batch)
    if n == 0:
        raise ParameterError("empty batch")
    with ad.no_grad():
        fake = ad.value(G(batch.x, batch.t_hat))
    # one forward over the stacked triple; the three means share denominator n
    images = np.concatenate([batch.x, batch.x, fake])
    attrs = np.concatenate([batch.t_bar, batch.t, batch.t_hat])
    target = np.concatenate([np.zeros(n), np.ones(n), np.zeros(n)])
    scores = D(images, attrs)
    return ad.scale(ad.mean(ad.square(ad.sub(scores, target))), 3.0)


def generator_loss(D, G, batch: Batch):
    """Least-squares generator objective ``mean((D(G(x, t_hat), t_hat) - 1)^2)``."""
    if len(batch) == 0:
        raise ParameterError("empty batch")
    scores = D(G(batch.x, batch.t_hat), batch.t_hat)
    return ad.mean(ad.square(ad.sub(scores, np.ones(len(batch)))))


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adam_step(params, grads, state: AdamState, lr: float, beta1: float, beta2: float,
              eps: float = ADAM_EPS):
    """Bias-corrected Adam, updating ``params`` in place. Returns ``(params, state)``.

    Parameters with no entry in ``grads`` are left untouched.
    """
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p in params:
        g = grads.get(p.name)
        if g is None:
            continue
        if g.shape != p.value.shape:
            raise DimensionError(f"{p.name}: gradient {g.shape} vs parameter {p.value.shape}")
        m = state.m.get(p.name)
        if m is None:
            m = state.m[p.name] = np.zeros_like(p.value)
            state.v[p.name] = np.zeros_like(p.value)
        v = state.v[p.name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.value -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state


class Adam:
    def __init__(self, params, lr: float = 0.0002, beta1: float = 0.5, beta2: float = 0.999):
        self.params = list(params)
        self.lr, self.beta1, self.beta2 = lr, beta1, beta2
        self.state = AdamState()

    def step(self, grads) -> None:
        adam_step(self.params, grads, self.state, self.lr, self.beta1, self.beta2)


def first_nonfinite(modules) -> str | None:
    for m in modules:
        for p in m.parameters():
            if not np.all(np.isfinite(p.value)):
                return p.name
    return None


def _checked(loss, name: str, epoch: int, D, G) -> float:
    """Loss as a float; aborts before the update so the culprit is still the origin."""
    val = float(ad.value(loss))
    if not np.isfinite(val):
        culprit = first_nonfinite([D, G]) or name
        raise NonFiniteError(f"epoch {epoch}: non-finite value first seen in {culprit}")
    assert val >= 0.0, "least-squares losses must be non-negative"
    return val


@dataclass
class TrainResult:
    generator: Generator
    discriminator: Discriminator
    metrics: list = field(default_factory=list)  # (epoch, loss_d, loss_g, seconds)


def build_models(cfg: TrainConfig, num_classes: int) -> tuple[Generator, Discriminator]:
    rng = Rng(cfg.seed)
    return Generator(rng.child(1), num_classes, cfg), Discriminator(rng.child(2), num_classes, cfg)


def train(cfg: TrainConfig, dataset: ShapeDataset, out_dir=None, record_time: bool = False,
          models=None, callback=None) -> TrainResult:
    """Alternate one discriminator and one generator Adam step per batch.

    Edit and mismatch attributes are redrawn every epoch. Writes
    ``metrics.csv`` and ``checkpoint/`` under ``out_dir`` when given.
    ``callback(epoch, G, D)`` runs after every epoch.
    """
    if len(dataset) == 0:
        raise ParameterError("dataset is empty")
    if dataset.spec.image_size != cfg.image_size:
        raise ParameterError(f"dataset images are {dataset.spec.image_size}px, config says {cfg.image_size}")
    G, D = models if models is not None else build_models(cfg, dataset.num_classes)
    opt_g = Adam(G.parameters(), cfg.lr, cfg.beta1, cfg.beta2)
    opt_d = Adam(D.parameters(), cfg.lr, cfg.beta1, cfg.beta2)
    rng = Rng(cfg.seed).child(3)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        metrics_file = (out / "metrics.csv").open("w")
        metrics_file.write("epoch,loss_d,loss_g,seconds\n")
    result = TrainResult(G, D)
    t0 = time.perf_counter()
    try:
        for epoch in range(1, cfg.epochs + 1):
            data = dataset.redraw(rng)
            perm = rng.permutation(len(data))
            sum_d = sum_g = 0.0
            for i in range(0, len(perm), cfg.batch):
                batch = data.batch(perm[i:i + cfg.batch])
                loss_d = discriminator_loss(D, G, batch)
                ld = _checked(loss_d, "loss_d", epoch, D, G)
                opt_d.step(ad.backward(loss_d))
                with ad.frozen(D.parameters()):
                    loss_g = generator_loss(D, G, batch)
                    lg = _checked(loss_g, "loss_g", epoch, D, G)
                    opt_g.step(ad.backward(loss_g))
                n = len(batch)
                sum_d += ld * n
                sum_g += lg * n
            culprit = first_nonfinite([D, G])
            if culprit is not None:
                raise NonFiniteError(f"epoch {epoch}: non-finite value first seen in {culprit}")
            seconds = time.perf_counter() - t0 if record_time else 0.0
            row = (epoch, sum_d / len(data), sum_g / len(data), seconds)
            result.metrics.append(row)
            log.info("epoch %d loss_d %.5f loss_g %.5f", *row[:3])
            if callback is not None:
                callback(epoch, G, D)
            if out is not None:
                metrics_file.write(f"{row[0]},{row[1]!r},{row[2]!r},{row[3]:.3f}\n")
                metrics_file.flush()
                if cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0 and epoch != cfg.epochs:
                    save_checkpoint(out / f"checkpoint_epoch{epoch}", cfg, dataset, G, D)
    finally:
        if out is not None:
            metrics_file.close()
    if out is not None:
        save_checkpoint(out / "checkpoint", cfg, dataset, G, D)
    return result


def save_checkpoint(directory, cfg: TrainConfig, dataset: ShapeDataset, G: Generator,
                    D: Discriminator) -> None:
    d = Path(directory)
    G.save(d)
    D.save(d)
    spec = dataset.spec
    manifest = {
        "config": asdict(cfg),
        "dataset": {"image_size": spec.image_size, "colors": [list(c) for c in spec.colors],
                    "shapes": list(spec.shapes), "samples_per_class": spec.samples_per_class,
                    "noise_std": spec.noise_std},
        "num_classes": dataset.num_classes,
        "generator": [p.name for p in G.parameters()],
        "discriminator": [p.name for p in D.parameters()],
    }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def load_checkpoint(directory):
    """Returns ``(config, dataset spec dict, generator, discriminator)``."""
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    cfg = TrainConfig(**manifest["config"])
    G, D = build_models(cfg, manifest["num_classes"])
    G.load(d)
    D.load(d)
    return cfg, manifest["dataset"], G, D
