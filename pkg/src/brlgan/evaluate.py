"""Scoring trained generators: attribute accuracy of edits and the all-pairs inception score."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .data import ClassifierModel, ShapeDataset, inception_score_from_probs
from .tensor import Rng


def edit(G, images, attrs, batch: int = 256) -> np.ndarray:
    out = []
    with ad.no_grad():
        for i in range(0, len(images), batch):
            out.append(ad.value(G(images[i:i + batch], attrs[i:i + batch])))
    return np.concatenate(out)


def recolor_targets(dataset: ShapeDataset):
    """Every (image, other colour) pair with the shape kept: returns (indices, target classes)."""
    spec = dataset.spec
    idx, targets = [], []
    for i, t in enumerate(dataset.labels):
        color, shape = int(spec.color_of(t)), int(spec.shape_of(t))
        for c in range(len(spec.colors)):
            if c != color:
                idx.append(i)
                targets.append(spec.class_id(c, shape))
    return np.array(idx), np.array(targets)


def conditioning_accuracy(G, classifier: ClassifierModel, dataset: ShapeDataset) -> float:
    """Fraction of recoloured images whose predicted colour is the requested one."""
    idx, targets = recolor_targets(dataset)
    pred = classifier.predict(edit(G, dataset.images[idx], targets))
    spec = dataset.spec
    return float(np.mean(spec.color_of(pred) == spec.color_of(targets)))


def pick_one_per_class(dataset: ShapeDataset, rng: Rng) -> np.ndarray:
    picks = []
    for c in range(dataset.num_classes):
        members = np.flatnonzero(dataset.labels == c)
        picks.append(members[int(rng.integers(len(members)))])
    return np.array(picks)


def edit_grid(G, dataset: ShapeDataset, rng: Rng):
    """One source image per class edited with every attribute, row-major by source."""
    sources = pick_one_per_class(dataset, rng)
    n = dataset.num_classes
    images = dataset.images[np.repeat(sources, n)]
    attrs = np.tile(np.arange(n), len(sources))
    return edit(G, images, attrs), sources


def grid_inception_score(G, classifier: ClassifierModel, dataset: ShapeDataset, rng: Rng,
                         splits: int = 10):
    """Inception score of the all-pairs edit grid over random splits."""
    edited, _ = edit_grid(G, dataset, rng)
    probs = classifier.predict_proba(edited)[rng.permutation(len(edited))]
    mean, std = inception_score_from_probs(probs, splits)
    return mean, std, edited
