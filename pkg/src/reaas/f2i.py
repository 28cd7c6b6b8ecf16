"""Feature-space to input-space radius conversion.

Given an input ``x`` and a feature-space radius ``R_F`` (the downstream
prediction is stable while the feature vector moves by less than ``R_F``),
find the largest input radius ``R`` we can prove keeps the feature movement
below ``R_F``. Each candidate radius is checked with a CROWN upper bound on
the feature distance, so the result is a sound lower bound on the true
optimum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .crown import propagate_bounds
from .nn import AffineNetwork, forward


@dataclass(frozen=True)
class SearchConfig:
    rho_low_init: float = 0.0
    rho_high_init: float = 10.0
    beta: float = 0.001

    def __post_init__(self):
        if not 0 <= self.rho_low_init < self.rho_high_init:
            raise ValueError("need 0 <= rho_low_init < rho_high_init")
        if self.beta <= 0:
            raise ValueError("beta must be positive")

    @property
    def rounds(self) -> int:
        """Number of bisection rounds the search performs."""
        return max(0, math.ceil(math.log2((self.rho_high_init - self.rho_low_init) / self.beta)))


@dataclass(frozen=True)
class FeatureDistanceBound:
    per_dim_low: np.ndarray
    per_dim_high: np.ndarray
    rf_prime: float


@dataclass(frozen=True)
class SearchResult:
    radius: float
    rounds: int
    # True when no positive radius could be certified.
    degenerate: bool


def feature_distance_upper_bound(encoder: AffineNetwork, x, rho: float) -> FeatureDistanceBound:
    """Upper bound on ``max_{||d|| <= rho} ||f(x+d) - f(x)||_2``."""
    x = np.asarray(x, dtype=np.float64)
    lines = propagate_bounds(encoder, x, rho)
    lo, hi = lines.concretize()
    fx = forward(encoder, x)
    # Clamp round-off: the clean point already gives distance 0 per coordinate.
    low = np.minimum(lo - fx, 0.0)
    high = np.maximum(hi - fx, 0.0)
    rf = float(np.sqrt(np.sum(np.maximum(low ** 2, high ** 2))))
    return FeatureDistanceBound(low, high, rf)


def f2i_search(encoder: AffineNetwork, x, feature_radius: float,
               cfg: SearchConfig = SearchConfig()) -> SearchResult:
    if not feature_radius > 0:
        raise ValueError("feature radius must be positive")
    lo, hi = cfg.rho_low_init, cfg.rho_high_init
    rounds = 0
    while hi - lo > cfg.beta:
        mid = (lo + hi) / 2
        if feature_distance_upper_bound(encoder, x, mid).rf_prime < feature_radius:
            lo = mid
        else:
            hi = mid
        rounds += 1
    return SearchResult(lo, rounds, lo <= cfg.rho_low_init)


def f2i_radius(encoder: AffineNetwork, x, feature_radius: float,
               cfg: SearchConfig = SearchConfig()) -> float:
    """Input-space certified radius for feature-space radius ``feature_radius``."""
    return f2i_search(encoder, x, feature_radius, cfg).radius
