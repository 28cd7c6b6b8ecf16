"""Gaussian randomized smoothing certification.

The smoothed classifier predicts the most frequent base-classifier label
under isotropic Gaussian noise. A one-sided Clopper-Pearson bound on that
label's probability gives the certified l2 radius ``sigma * Phi^-1(p_lower)``.

All N samples serve both to pick the label and to bound its probability
(single-phase estimation). This carries a small selection bias compared with
a separate selection pass.
"""

from __future__ import annotations

from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import special

# Fixed block size so the noise stream is identical for any worker count.
NOISE_BLOCK = 1024


@dataclass(frozen=True)
class SmoothingConfig:
    n_samples: int = 100_000
    sigma: float = 0.5
    alpha: float = 0.001
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")


@dataclass(frozen=True)
class SmoothingEvidence:
    label_frequencies: dict
    predicted: int
    p_lower: float
    radius: Optional[float]
    n_samples: int
    sigma: float
    alpha: float

    @property
    def abstained(self) -> bool:
        return self.radius is None


def clopper_pearson_lower(successes: int, total: int, alpha: float) -> float:
    """One-sided lower confidence bound: alpha-quantile of Beta(k, n-k+1)."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if total < 1 or not 0 <= successes <= total:
        raise ValueError("need 0 <= successes <= total and total >= 1")
    if successes == 0:
        return 0.0
    return float(special.betaincinv(successes, total - successes + 1, alpha))


def std_normal_quantile(p: float) -> float:
    if not 0 < p < 1:
        raise ValueError("p must lie in (0, 1)")
    return float(special.ndtri(p))


def noise_block(seed: int, index: int, size: int, dim: int, sigma: float) -> np.ndarray:
    """Noise for block ``index``; counter-keyed so blocks are order independent."""
    rng = np.random.default_rng([seed, index])
    return rng.normal(0.0, sigma, size=(size, dim))


def sample_counts(predict: Callable, x, cfg: SmoothingConfig, workers: int = 1) -> Counter:
    """Tally ``predict(x + noise)`` over ``cfg.n_samples`` draws.

    ``predict`` maps a batch (rows) to integer labels.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    n_blocks = -(-cfg.n_samples // NOISE_BLOCK)

    def run(index):
        size = min(NOISE_BLOCK, cfg.n_samples - index * NOISE_BLOCK)
        batch = x + noise_block(cfg.seed, index, size, x.shape[0], cfg.sigma)
        return np.asarray(predict(batch), dtype=np.int64)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            labels = list(pool.map(run, range(n_blocks)))
    else:
        labels = [run(i) for i in range(n_blocks)]
    values, counts = np.unique(np.concatenate(labels), return_counts=True)
    return Counter({int(v): int(c) for v, c in zip(values, counts)})


def evidence_from_counts(counts: dict, cfg: SmoothingConfig) -> SmoothingEvidence:
    total = sum(counts.values())
    if total != cfg.n_samples:
        raise ValueError(f"counts sum to {total}, expected {cfg.n_samples}")
    # max count, ties to the smaller label
    predicted = min(counts, key=lambda l: (-counts[l], l))
    p_lower = clopper_pearson_lower(counts[predicted], total, cfg.alpha)
    radius = cfg.sigma * std_normal_quantile(p_lower) if p_lower > 0.5 else None
    return SmoothingEvidence(dict(sorted(counts.items())), predicted, p_lower, radius,
                             cfg.n_samples, cfg.sigma, cfg.alpha)


def certify_smoothed(predict: Callable, x, cfg: SmoothingConfig = SmoothingConfig(),
                     workers: int = 1) -> SmoothingEvidence:
    """Smoothed prediction and certified radius (``None`` when abstaining)."""
    return evidence_from_counts(sample_counts(predict, x, cfg, workers), cfg)
