"""Spectral-norm regularised pre-training.

The Lipschitz constant of a ReLU network w.r.t. the l2 norm is bounded by
the product of the spectral norms of its affine layers (ReLU is
1-Lipschitz). Penalising that product during pre-training yields encoders
whose features move less under input perturbations, which in turn lets the
server hand out larger input-space radii.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .nn import AffineLayer, AffineNetwork, LabeledDataset, train_classifier


@dataclass(frozen=True)
class SpectralConfig:
    lam: float = 0.00075
    power_iters: int = 10

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.power_iters < 1:
            raise ValueError("power_iters must be >= 1")


@dataclass
class SpectralProfile:
    per_layer_norms: np.ndarray
    product: float
    iteration_vectors: list = field(default_factory=list)


def spectral_norm_power(layer, state: Optional[np.ndarray] = None, iters: int = 10,
                        rng: Optional[np.random.Generator] = None):
    """Power-iteration estimate of the largest singular value.

    ``layer`` may be an :class:`AffineLayer` or a bare matrix. Returns
    ``(estimate, right_singular_vector)``; pass the vector back in as
    ``state`` to warm-start the next call.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    W = layer.weight if isinstance(layer, AffineLayer) else np.asarray(layer, dtype=np.float64)
    if state is None:
        rng = rng if rng is not None else np.random.default_rng(0)
        state = rng.standard_normal(W.shape[1])
    v = np.asarray(state, dtype=np.float64)
    norm = np.linalg.norm(v)
    if norm == 0:
        raise ValueError("power iteration state must be non-zero")
    v = v / norm
    for _ in range(iters):
        w = W.T @ (W @ v)
        n = np.linalg.norm(w)
        if n == 0:
            return 0.0, v
        v = w / n
    return float(np.linalg.norm(W @ v)), v


def spectral_profile(net: AffineNetwork, iters: int = 100, states=None, seed=0) -> SpectralProfile:
    """Per-layer spectral-norm estimates and their product."""
    rng = np.random.default_rng(seed)
    norms, vecs = [], []
    for k, layer in enumerate(net.layers):
        s, v = spectral_norm_power(layer, None if states is None else states[k], iters, rng)
        norms.append(s)
        vecs.append(v)
    norms = np.array(norms)
    return SpectralProfile(norms, float(np.prod(norms)), vecs)


def exact_lipschitz_product(net: AffineNetwork) -> float:
    """Product of exact (SVD) spectral norms over all layers."""
    return float(np.prod([np.linalg.norm(l.weight, 2) for l in net.layers]))


class SpectralPenalty:
    """``lam * prod_j ||W_j||_s`` over the first ``n_layers`` layers.

    Singular vectors from the warm-started power iteration are held fixed
    when differentiating, so d||W||_s/dW = u v^T.
    """

    def __init__(self, cfg: SpectralConfig, n_layers: int, seed=0):
        self.cfg = cfg
        self.n_layers = n_layers
        self.states = [None] * n_layers
        self.rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(3)[2])
        self.last_norms = None

    def __call__(self, params):
        sigmas, outer = [], []
        for j in range(self.n_layers):
            W = params[j][0]
            s, v = spectral_norm_power(W, self.states[j], self.cfg.power_iters, self.rng)
            self.states[j] = v
            sigmas.append(s)
            outer.append(np.outer(W @ v / s, v) if s > 0 else np.zeros_like(W))
        sigmas = np.array(sigmas)
        self.last_norms = sigmas
        grads = [None] * len(params)
        for j in range(self.n_layers):
            others = np.prod(np.delete(sigmas, j))
            grads[j] = self.cfg.lam * others * outer[j]
        return self.cfg.lam * float(np.prod(sigmas)), grads


def pretrain_encoder(net: AffineNetwork, data: LabeledDataset, cfg: SpectralConfig = SpectralConfig(),
                     epochs: int = 25, lr: float = 0.06, batch: int = 512, seed=0,
                     momentum: float = 0.0, return_full: bool = False):
    """Supervised pre-training with the spectral-norm penalty.

    ``net`` is a classifier whose layers except the last form the encoder;
    the penalty covers exactly those layers. Returns the encoder (head
    removed), or the full classifier when ``return_full`` is set.
    """
    if net.depth < 2:
        raise ValueError("need at least one encoder layer plus a head")
    trained = train_classifier(net, data, epochs=epochs, lr=lr, batch=batch,
                               regularizer=cfg, seed=seed, momentum=momentum)
    return trained if return_full else trained.without_head()
