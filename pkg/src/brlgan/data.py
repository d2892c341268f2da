"""Synthetic coloured-shape data, an attribute classifier and the inception score."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .nn import Conv2d, Linear, Module
from .tensor import ParameterError, Rng

PALETTE = {
    "red": (1.0, 0.0, 0.0),
    "green": (0.0, 1.0, 0.0),
    "blue": (0.0, 0.0, 1.0),
    "yellow": (1.0, 1.0, 0.0),
    "magenta": (1.0, 0.0, 1.0),
    "cyan": (0.0, 1.0, 1.0),
    "white": (1.0, 1.0, 1.0),
    "orange": (1.0, 0.5, 0.0),
}
SHAPES = ("square", "circle", "triangle")
BACKGROUND = -1.0
IS_EPS = 1e-12


class ConfigurationError(ValueError):
    pass


class ClassifierTrainingError(RuntimeError):
    def __init__(self, accuracy: float, target: float):
        super().__init__(f"classifier reached {accuracy:.4f} train accuracy, needed {target}")
        self.accuracy = accuracy


@dataclass
class ShapeWorldSpec:
    image_size: int = 16
    colors: Sequence[tuple[float, float, float]] = field(
        default_factory=lambda: [PALETTE[c] for c in ("red", "green", "blue", "yellow")])
    shapes: Sequence[str] = ("square", "circle")
    samples_per_class: int = 32
    noise_std: float = 0.05

    def __post_init__(self):
        self.colors = [tuple(float(v) for v in c) for c in self.colors]
        self.shapes = tuple(self.shapes)
        if len(self.colors) < 2:
            raise ConfigurationError(f"need at least 2 colours for editing, got {len(self.colors)}")
        unknown = set(self.shapes) - set(SHAPES)
        if unknown or not self.shapes:
            raise ConfigurationError(f"shapes must be drawn from {SHAPES}, got {self.shapes}")
        if self.image_size < 8 or self.samples_per_class < 1 or self.noise_std < 0:
            raise ConfigurationError("image_size >= 8, samples_per_class >= 1, noise_std >= 0 required")

    @property
    def num_classes(self) -> int:
        return len(self.colors) * len(self.shapes)

    def class_id(self, color: int, shape: int) -> int:
        return color * len(self.shapes) + shape

    def color_of(self, cls):
        return np.asarray(cls) // len(self.shapes)

    def shape_of(self, cls):
        return np.asarray(cls) % len(self.shapes)


@dataclass
class SamplePair:
    x: np.ndarray
    t: int
    t_hat: int
    t_bar: int


@dataclass
class Batch:
    x: np.ndarray  # [B, H, W, 3]
    t: np.ndarray
    t_hat: np.ndarray
    t_bar: np.ndarray

    def __len__(self):
        return len(self.t)


class ShapeDataset:
    """Images with matching, edit and mismatch attributes, stored as arrays."""

    def __init__(self, spec: ShapeWorldSpec, images, labels, t_hat, t_bar):
        self.spec = spec
        self.images = images
        self.labels = np.asarray(labels, dtype=np.int64)
        self.t_hat = np.asarray(t_hat, dtype=np.int64)
        self.t_bar = np.asarray(t_bar, dtype=np.int64)

    @property
    def num_classes(self) -> int:
        return self.spec.num_classes

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, i) -> SamplePair:
        return SamplePair(self.images[i], int(self.labels[i]), int(self.t_hat[i]), int(self.t_bar[i]))

    def batch(self, idx) -> Batch:
        idx = np.asarray(idx)
        return Batch(self.images[idx], self.labels[idx], self.t_hat[idx], self.t_bar[idx])

    def redraw(self, rng: Rng) -> "ShapeDataset":
        """Same images with freshly sampled edit and mismatch attributes."""
        t_hat = [sample_edit(self.spec, t, rng) for t in self.labels]
        t_bar = [sample_mismatch(self, t, rng) for t in self.labels]
        return ShapeDataset(self.spec, self.images, self.labels, t_hat, t_bar)


def sample_mismatch(dataset, t: int, rng: Rng) -> int:
    """Uniform draw over attribute classes other than ``t``."""
    n = dataset.num_classes
    if n < 2:
        raise ConfigurationError("mismatch sampling needs at least two attribute classes")
    r = int(rng.integers(n - 1))
    return r + (r >= t)


def sample_edit(spec: ShapeWorldSpec, t: int, rng: Rng) -> int:
    """Same shape as ``t``, uniformly chosen different colour."""
    color, shape = int(spec.color_of(t)), int(spec.shape_of(t))
    r = int(rng.integers(len(spec.colors) - 1))
    return spec.class_id(r + (r >= color), shape)


def _mask(shape: str, size: int, cy: float, cx: float, r: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    dy, dx = yy - cy, xx - cx
    if shape == "square":
        return (np.abs(dy) <= r) & (np.abs(dx) <= r)
    if shape == "circle":
        return dy * dy + dx * dx <= r * r
    # apex up; width grows linearly to 2r at the base
    return (dy >= -r) & (dy <= r) & (np.abs(dx) <= (dy + r) / 2.0)


def render(spec: ShapeWorldSpec, cls: int, rng: Rng) -> np.ndarray:
    size = spec.image_size
    r = rng.uniform(0.22, 0.32) * size
    cy, cx = rng.uniform(r + 0.5, size - r - 0.5, size=2)
    img = np.full((size, size, 3), BACKGROUND)
    colour = 2.0 * np.asarray(spec.colors[int(spec.color_of(cls))]) - 1.0
    img[_mask(spec.shapes[int(spec.shape_of(cls))], size, cy, cx, r)] = colour
    if spec.noise_std > 0:
        img = np.clip(img + rng.normal(img.shape, spec.noise_std), -1.0, 1.0)
    return img


def generate_dataset(spec: ShapeWorldSpec, rng: Rng) -> ShapeDataset:
    labels = np.repeat(np.arange(spec.num_classes), spec.samples_per_class)
    images = np.stack([render(spec, int(c), rng) for c in labels])
    t_hat = [sample_edit(spec, int(t), rng) for t in labels]
    ds = ShapeDataset(spec, images, labels, t_hat, np.zeros_like(labels))
    ds.t_bar = np.array([sample_mismatch(ds, int(t), rng) for t in labels], dtype=np.int64)
    return ds


class ClassifierModel(Module):
    """Two strided convolutions and a linear softmax head."""

    def __init__(self, rng: Rng, num_classes: int, image_size: int = 16, width: int = 16):
        self.num_classes = num_classes
        self.conv1 = Conv2d(rng, "cls.conv1", 3, width, stride=2, std=0.2)
        self.conv2 = Conv2d(rng, "cls.conv2", width, 2 * width, stride=2, std=0.1)
        s = image_size // 4
        self.head = Linear(rng, "cls.head", s * s * 2 * width, num_classes, std=0.05)

    def logits(self, x):
        h = ad.leaky_relu(self.conv1(x))
        h = ad.leaky_relu(self.conv2(h))
        b = ad.value(h).shape[0]
        return self.head(ad.reshape(h, (b, -1)))

    def predict_proba(self, x, batch: int = 256) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        out = []
        with ad.no_grad():
            for i in range(0, len(x), batch):
                z = self.logits(x[i:i + batch])
                out.append(np.exp(ad.log_softmax(z)))
        return np.concatenate(out)

    def predict(self, x) -> np.ndarray:
        return self.predict_proba(x).argmax(axis=1)


def train_classifier(images, labels, num_classes: int, rng: Rng, *, max_epochs: int = 60,
                     lr: float = 1e-3, batch: int = 64,
                     target_accuracy: float | None = 0.99) -> ClassifierModel:
    """Fit :class:`ClassifierModel` with Adam on cross-entropy.

    Stops as soon as train accuracy reaches ``target_accuracy``; raises
    :class:`ClassifierTrainingError` if it never does. ``target_accuracy=None``
    trains for ``max_epochs`` without the check.
    """
    from .gan import Adam

    labels = np.asarray(labels, dtype=np.int64)
    if len(np.unique(labels)) < 2:
        raise ConfigurationError("classifier needs at least two distinct classes")
    images = np.asarray(images, dtype=np.float64)
    model = ClassifierModel(rng.child(0), num_classes, images.shape[1])
    opt = Adam(model.parameters(), lr=lr, beta1=0.9, beta2=0.999)
    order_rng = rng.child(1)
    acc = 0.0
    for _ in range(max_epochs):
        perm = order_rng.permutation(len(labels))
        for i in range(0, len(perm), batch):
            idx = perm[i:i + batch]
            loss = ad.cross_entropy(model.logits(images[idx]), labels[idx])
            opt.step(ad.backward(loss))
        acc = float(np.mean(model.predict(images) == labels))
        if target_accuracy is not None and acc >= target_accuracy:
            return model
    if target_accuracy is not None:
        raise ClassifierTrainingError(acc, target_accuracy)
    return model


def inception_score_from_probs(probs, splits: int = 10) -> tuple[float, float]:
    """Inception score of class posteriors ``probs`` (one row per image).

    Rows are cut into ``min(splits, n // 2)`` contiguous chunks; each chunk
    scores ``exp(mean KL(p(y|x) || p(y)))`` with ``p(y)`` the chunk mean.
    Returns mean and population standard deviation over chunks.
    """
    probs = np.asarray(probs, dtype=np.float64)
    n, c = probs.shape
    if n < 2:
        raise ParameterError(f"inception score needs at least 2 images, got {n}")
    scores = []
    for part in np.array_split(probs, max(1, min(splits, n // 2))):
        p_y = part.mean(axis=0)
        assert abs(p_y.sum() - 1.0) <= 1e-9, "class marginal does not sum to one"
        p = np.maximum(part, IS_EPS)
        kl = np.sum(part * (np.log(p) - np.log(np.maximum(p_y, IS_EPS))), axis=1)
        score = float(np.exp(kl.mean()))
        assert 1.0 - 1e-9 <= score <= c * (1.0 + 1e-9), f"inception score {score} outside [1, {c}]"
        scores.append(score)
    return float(np.mean(scores)), float(np.std(scores))


def inception_score(classifier: ClassifierModel, images, splits: int = 10) -> tuple[float, float]:
    return inception_score_from_probs(classifier.predict_proba(images), splits)


def to_bytes(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if not np.all((x >= -1.0) & (x <= 1.0)):
        raise ValueError(f"pixel values must lie in [-1, 1]; found range [{x.min()}, {x.max()}]")
    return np.floor((x + 1.0) * 127.5 + 0.5).astype(np.uint8)


def write_image_ppm(x, path) -> None:
    """Binary P6 PPM; value ``v`` maps to byte ``round((v + 1) * 127.5)``."""
    x = np.asarray(x)
    if x.ndim != 3 or x.shape[2] != 3:
        raise ValueError(f"expected an [H, W, 3] image, got shape {x.shape}")
    h, w, _ = x.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + to_bytes(x).tobytes())


def read_image_ppm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            pos = buf.index(b"\n", pos)
            continue
        end = pos
        while not buf[end:end + 1].isspace():
            end += 1
        tokens.append(buf[pos:end])
        pos = end
    if tokens[0] != b"P6" or int(tokens[3]) != 255:
        raise ValueError("only 8-bit binary P6 images are supported")
    w, h = int(tokens[1]), int(tokens[2])
    data = np.frombuffer(buf, dtype=np.uint8, count=w * h * 3, offset=pos + 1)
    return data.reshape(h, w, 3).astype(np.float64) / 127.5 - 1.0


def image_grid(images, rows: int, cols: int, pad: int = 1) -> np.ndarray:
    """Tile ``rows * cols`` images into one picture separated by dark lines."""
    images = np.asarray(images)
    h, w = images.shape[1:3]
    grid = np.full((rows * (h + pad) + pad, cols * (w + pad) + pad, 3), BACKGROUND)
    for k, img in enumerate(images[:rows * cols]):
        r, c = divmod(k, cols)
        y, x = pad + r * (h + pad), pad + c * (w + pad)
        grid[y:y + h, x:x + w] = img
    return grid
