"""Seeded synthetic datasets.

``render_images`` draws a continuous image per sample (a few Gaussian blobs
whose layout depends on the class) and rasterises it at any resolution, so
the same samples can be rendered at several sizes.
"""

from __future__ import annotations

import numpy as np

from .nn import LabeledDataset


def gaussian_blobs(n: int, num_classes: int = 2, dim: int = 2, separation: float = 4.0,
                   scale: float = 1.0, seed=0) -> LabeledDataset:
    """Isotropic clusters with centres spread on a circle (first two axes)."""
    rng = np.random.default_rng(seed)
    centres = np.zeros((num_classes, dim))
    angles = 2 * np.pi * np.arange(num_classes) / num_classes
    centres[:, 0] = separation * np.cos(angles)
    if dim > 1:
        centres[:, 1] = separation * np.sin(angles)
    y = rng.integers(0, num_classes, size=n)
    X = centres[y] + rng.normal(0.0, scale, size=(n, dim))
    return LabeledDataset(X, y, num_classes)


def _class_layouts(num_classes: int, channels: int, blobs: int, seed: int):
    rng = np.random.default_rng([seed, 0xC1A55])
    centres = rng.uniform(0.2, 0.8, size=(num_classes, blobs, 2))
    colours = rng.uniform(0.3, 1.0, size=(num_classes, blobs, channels))
    return centres, colours


def render_images(n: int, size: tuple, num_classes: int = 4, channels: int = 1,
                  blobs: int = 2, jitter: float = 0.06, width: float = 0.16,
                  pixel_noise: float = 0.0, seed=0, layout_seed=0) -> LabeledDataset:
    """``n`` images of ``size = (h, w)`` flattened channel-major in [0, 1].

    Samples (labels, blob jitter, brightness) depend only on ``seed``, not on
    ``size``. Class layouts depend only on ``layout_seed``, so train and test
    sets drawn with different ``seed`` share the same classes.
    """
    h, w = size
    centres, colours = _class_layouts(num_classes, channels, blobs, layout_seed)
    rng = np.random.default_rng([seed, 1])
    y = rng.integers(0, num_classes, size=n)
    shift = rng.normal(0.0, jitter, size=(n, blobs, 2))
    gain = rng.uniform(0.7, 1.0, size=(n, 1))
    rows = (np.arange(h) + 0.5) / h
    cols = (np.arange(w) + 0.5) / w
    img = np.full((n, channels, h, w), 0.05)
    for k in range(blobs):
        cy = centres[y, k, 0] + shift[:, k, 0]
        cx = centres[y, k, 1] + shift[:, k, 1]
        bump = np.exp(-(((rows[None, :, None] - cy[:, None, None]) ** 2)
                        + ((cols[None, None, :] - cx[:, None, None]) ** 2)) / (2 * width ** 2))
        img += colours[y, k][:, :, None, None] * bump[:, None, :, :]
    img = img * gain[:, :, None, None]
    if pixel_noise:
        noise_rng = np.random.default_rng([seed, 2, h, w])
        img = img + noise_rng.normal(0.0, pixel_noise, size=img.shape)
    img = np.clip(img, 0.0, 1.0)
    return LabeledDataset(img.reshape(n, -1), y, num_classes, (h, w, channels))
