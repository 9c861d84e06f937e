"""ColoredMNIST built from raw MNIST IDX files.

Digits 0-4 get label 0 and 5-9 label 1; each label is flipped with
probability 0.25. The image is then coloured red (colour 0) or green
(colour 1) so that colour agrees with the possibly-flipped label with
probability 0.9, 0.8 and 0.1 in the three domains.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

from ..transform import ColorTransform
from .dataset import DomainDataset
from .idx import IMAGES_MAGIC, LABELS_MAGIC, IdxFormatError, read_idx

DOMAIN_NAMES = ("+90%", "+80%", "-90%")
COLOR_AGREEMENT = (0.9, 0.8, 0.1)
LABEL_NOISE = 0.25


def _as_list(p) -> list[Path]:
    if isinstance(p, (str, Path)):
        return [Path(p)]
    return [Path(q) for q in p]


def load_mnist(idx_images, idx_labels) -> tuple[np.ndarray, np.ndarray]:
    """Concatenate one or more (images, labels) IDX pairs."""
    imgs, labs = [], []
    for ip, lp in zip(_as_list(idx_images), _as_list(idx_labels), strict=True):
        im = read_idx(ip, IMAGES_MAGIC)
        lb = read_idx(lp, LABELS_MAGIC)
        if im.ndim != 3:
            raise IdxFormatError(ip, f"expected 3-d image tensor, got {im.ndim}-d")
        if lb.ndim != 1 or len(lb) != len(im):
            raise IdxFormatError(lp, f"label count {lb.shape} does not match {len(im)} images")
        imgs.append(im)
        labs.append(lb)
    return np.concatenate(imgs), np.concatenate(labs)


def downsample(images: np.ndarray, factor: int) -> np.ndarray:
    """Average-pool ``factor x factor`` blocks of uint8 images into [0, 1] floats."""
    n, h, w = images.shape
    if factor < 1 or h % factor or w % factor:
        raise ValueError(f"cannot pool {h}x{w} images by {factor}")
    x = images.astype(np.float64) / 255.0
    return x.reshape(n, h // factor, factor, w // factor, factor).mean(axis=(2, 4))


def build_colored_mnist(
    idx_images: str | Path | Sequence[str | Path],
    idx_labels: str | Path | Sequence[str | Path],
    seed: int,
    factor: int = 2,
) -> DomainDataset:
    digits_img, digits = load_mnist(idx_images, idx_labels)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(digits))
    grey = downsample(digits_img[order], factor)
    digits = digits[order].astype(np.int64)
    n, h, w = grey.shape

    xs, ys, doms, flips, colors, kept_digits = [], [], [], [], [], []
    for e, agree in enumerate(COLOR_AGREEMENT):
        rows = np.arange(e, n, len(COLOR_AGREEMENT))
        base = (digits[rows] >= 5).astype(np.int64)
        flip = (rng.random(len(rows)) < LABEL_NOISE).astype(np.int64)
        y = base ^ flip
        color = y ^ (rng.random(len(rows)) >= agree).astype(np.int64)
        img = grey[rows].reshape(len(rows), h * w)
        green = color[:, None] == 1
        xs.append(np.hstack([np.where(green, 0.0, img), np.where(green, img, 0.0)]))
        ys.append(y)
        doms.append(np.full(len(rows), e))
        flips.append(flip)
        colors.append(color)
        kept_digits.append(digits[rows])

    return DomainDataset(
        x=np.vstack(xs),
        y=np.concatenate(ys),
        domain=np.concatenate(doms),
        n_classes=2,
        domains=[0, 1, 2],
        name="colored_mnist",
        transform=ColorTransform(h * w),
        extras={
            "digit": np.concatenate(kept_digits),
            "flipped": np.concatenate(flips),
            "color": np.concatenate(colors),
        },
    )
