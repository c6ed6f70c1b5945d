"""Frozen-backbone feature extraction and linear classification.

Features are the class-token embedding of a deterministic evaluation view
(segment centers at global geometry, no augmentation).  A single linear layer
is trained on top with SGD + momentum and a cosine learning-rate decay;
single-label manifests use softmax cross-entropy, multi-label manifests use
per-class sigmoid binary cross-entropy with a score threshold at prediction
time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .backbone import SpaceTimeEncoder
from .data import ClipRecord, Manifest
from .views import ViewConfig, eval_view


class ProbeError(ValueError):
    """Invalid probe inputs (e.g. a single-class training set)."""


@dataclass(frozen=True)
class ProbeConfig:
    epochs: int = 100
    batch_size: int = 32
    lr: float = 1e-3
    momentum: float = 0.9
    multi_label_threshold: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if not 0 < self.multi_label_threshold < 1:
            raise ValueError("multi_label_threshold must be in (0, 1)")


@dataclass
class LinearClassifier:
    """Trained probe weights; predicts from features without torch plumbing."""

    weight: np.ndarray  # (num_classes, feature_dim)
    bias: np.ndarray  # (num_classes,)
    multi_label: bool
    threshold: float = 0.5

    def scores(self, features: np.ndarray) -> np.ndarray:
        logits = features @ self.weight.T + self.bias
        if self.multi_label:
            return 1.0 / (1.0 + np.exp(-logits))
        return logits

    def predict(self, features: np.ndarray) -> list:
        scores = self.scores(np.atleast_2d(features))
        if self.multi_label:
            return [set(np.nonzero(row >= self.threshold)[0].tolist()) for row in scores]
        return [int(row.argmax()) for row in scores]


@torch.no_grad()
def extract_feature(record: ClipRecord, encoder: SpaceTimeEncoder, view_cfg: ViewConfig) -> np.ndarray:
    """Class-token feature of the clip's deterministic evaluation view."""
    view = eval_view(record, view_cfg)
    frames = torch.from_numpy(view.frames[None]).to(next(encoder.parameters()).dtype)
    encoder.eval()
    return encoder.encode(frames)[0].cpu().numpy()


@torch.no_grad()
def extract_features(
    manifest: Manifest, encoder: SpaceTimeEncoder, view_cfg: ViewConfig
) -> np.ndarray:
    """Features for every record, in manifest order; shape (N, m)."""
    return np.stack([extract_feature(rec, encoder, view_cfg) for rec in manifest.records])


def _label_matrix(manifest: Manifest) -> np.ndarray:
    """(N, C) multi-hot targets, or (N,) class indices for single-label data."""
    if manifest.multi_label:
        target = np.zeros((len(manifest.records), manifest.num_classes), dtype=np.float32)
        for i, rec in enumerate(manifest.records):
            for lab in rec.labels:
                target[i, lab] = 1.0
        return target
    return np.array([next(iter(rec.labels)) for rec in manifest.records], dtype=np.int64)


def fit_linear_probe(
    features: np.ndarray,
    labels: np.ndarray,
    num_classes: int,
    cfg: ProbeConfig,
    multi_label: bool = False,
) -> LinearClassifier:
    """Train the linear layer; the backbone is never touched.

    ``labels`` is (N,) class ids for single-label data or an (N, C) multi-hot
    matrix for multi-label data.
    """
    if len(features) != len(labels):
        raise ProbeError(f"got {len(features)} features but {len(labels)} labels")
    if multi_label:
        represented = int((np.asarray(labels).sum(axis=0) > 0).sum())
    else:
        represented = len(np.unique(labels))
    if represented < 2:
        raise ProbeError("training set must contain at least two classes")

    x = torch.from_numpy(np.asarray(features, dtype=np.float32))
    if multi_label:
        y = torch.from_numpy(np.asarray(labels, dtype=np.float32))
        criterion = nn.BCEWithLogitsLoss()
    else:
        y = torch.from_numpy(np.asarray(labels, dtype=np.int64))
        criterion = nn.CrossEntropyLoss()

    gen = torch.Generator().manual_seed(cfg.seed)
    layer = nn.Linear(x.shape[1], num_classes)
    with torch.no_grad():
        layer.weight.normal_(0.0, 0.01, generator=gen)
        layer.bias.zero_()
    optimizer = torch.optim.SGD(layer.parameters(), lr=cfg.lr, momentum=cfg.momentum)

    n = len(x)
    steps_per_epoch = max(1, math.ceil(n / cfg.batch_size))
    total_steps = cfg.epochs * steps_per_epoch
    step = 0
    for _ in range(cfg.epochs):
        order = torch.randperm(n, generator=gen)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            lr = 0.5 * cfg.lr * (1.0 + math.cos(math.pi * step / max(total_steps, 1)))
            for group in optimizer.param_groups:
                group["lr"] = lr
            optimizer.zero_grad()
            loss = criterion(layer(x[idx]), y[idx])
            loss.backward()
            optimizer.step()
            step += 1

    return LinearClassifier(
        weight=layer.weight.detach().numpy().copy(),
        bias=layer.bias.detach().numpy().copy(),
        multi_label=multi_label,
        threshold=cfg.multi_label_threshold,
    )


def predict(
    record: ClipRecord,
    encoder: SpaceTimeEncoder,
    classifier: LinearClassifier,
    view_cfg: ViewConfig,
):
    """Predicted label (single-label) or label set (multi-label) for one clip."""
    feature = extract_feature(record, encoder, view_cfg)
    return classifier.predict(feature)[0]
