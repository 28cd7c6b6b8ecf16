"""Dense ReLU networks: representation, inference, and mini-batch training.

An :class:`AffineNetwork` is a chain of affine layers with ReLU applied
between consecutive layers (never after the last one). The same type backs
the server's encoder and the client's downstream classifier, so bound
propagation and spectral-norm estimation only need this single code path.

Labels are 0-based class indices throughout the package.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np


class RejectedInputError(ValueError):
    """Input vector does not match the network's input dimension."""


class TrainingDivergenceError(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch
        self.loss = loss


@dataclass(frozen=True)
class AffineLayer:
    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w = np.array(self.weight, dtype=np.float64)
        b = np.array(self.bias, dtype=np.float64).reshape(-1)
        if w.ndim != 2:
            raise ValueError("weight must be a matrix")
        if w.shape[0] != b.shape[0]:
            raise ValueError(
                f"weight has {w.shape[0]} rows but bias has {b.shape[0]} entries"
            )
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValueError("layer parameters must be finite")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


@dataclass(frozen=True)
class AffineNetwork:
    layers: tuple

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ValueError("network needs at least one layer")
        for k in range(len(layers) - 1):
            if layers[k].out_dim != layers[k + 1].in_dim:
                raise ValueError(
                    f"layer {k} outputs {layers[k].out_dim} values but layer "
                    f"{k + 1} expects {layers[k + 1].in_dim}"
                )
        object.__setattr__(self, "layers", layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def depth(self) -> int:
        return len(self.layers)

    def __call__(self, x):
        return forward(self, x)

    def params(self) -> list:
        return [(l.weight, l.bias) for l in self.layers]

    @classmethod
    def from_params(cls, params) -> "AffineNetwork":
        return cls(tuple(AffineLayer(w, b) for w, b in params))

    def without_head(self) -> "AffineNetwork":
        """Drop the output layer, leaving the feature extractor."""
        if self.depth < 2:
            raise ValueError("a single-layer network has no encoder part")
        return AffineNetwork(self.layers[:-1])

    def then(self, other: "AffineNetwork") -> "AffineNetwork":
        """Stack ``other`` on top of this network with a ReLU at the seam."""
        return AffineNetwork(self.layers + other.layers)

    def with_input_transform(self, matrix: np.ndarray) -> "AffineNetwork":
        """Fold a linear input map into the first layer (no ReLU inserted)."""
        first = self.layers[0]
        folded = AffineLayer(first.weight @ np.asarray(matrix, dtype=np.float64), first.bias)
        return AffineNetwork((folded,) + self.layers[1:])


@dataclass
class LabeledDataset:
    inputs: np.ndarray
    labels: np.ndarray
    num_classes: Optional[int] = None
    shape: Optional[tuple] = field(default=None)

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=np.float64))
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise ValueError("inputs and labels differ in length")
        if self.labels.size and self.labels.min() < 0:
            raise ValueError("labels must be non-negative class indices")
        if self.num_classes is None:
            self.num_classes = int(self.labels.max()) + 1 if self.labels.size else 0
        elif self.labels.size and self.labels.max() >= self.num_classes:
            raise ValueError("label out of range for num_classes")
        if self.shape is not None:
            self.shape = tuple(int(s) for s in self.shape)
            if int(np.prod(self.shape)) != self.dim:
                raise ValueError(f"shape {self.shape} does not match dim {self.dim}")

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def subset(self, index) -> "LabeledDataset":
        return LabeledDataset(self.inputs[index], self.labels[index], self.num_classes, self.shape)


def glorot_uniform(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def init_network(sizes: Sequence[int], seed=0) -> AffineNetwork:
    """Randomly initialised network with layer widths ``sizes`` (input first)."""
    if len(sizes) < 2:
        raise ValueError("need at least input and output sizes")
    rng = np.random.default_rng(seed)
    layers = [
        AffineLayer(glorot_uniform(a, b, rng), np.zeros(b))
        for a, b in zip(sizes[:-1], sizes[1:])
    ]
    return AffineNetwork(tuple(layers))


def _as_batch(net: AffineNetwork, x) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.ndim != 2 or arr.shape[1] != net.input_dim:
        raise RejectedInputError(
            f"expected input of dimension {net.input_dim}, got shape {np.shape(x)}"
        )
    return arr, single


def forward(net: AffineNetwork, x) -> np.ndarray:
    """Evaluate the network on one vector or on a batch (rows)."""
    h, single = _as_batch(net, x)
    last = net.depth - 1
    for k, layer in enumerate(net.layers):
        h = h @ layer.weight.T + layer.bias
        if k < last:
            h = np.maximum(h, 0.0)
    return h[0] if single else h


def predict(net: AffineNetwork, x) -> np.ndarray:
    """Argmax label; ties go to the smaller index."""
    return np.argmax(forward(net, x), axis=-1)


def _forward_cache(net: AffineNetwork, X: np.ndarray):
    acts = [X]
    pre = []
    h = X
    last = net.depth - 1
    for k, layer in enumerate(net.layers):
        z = h @ layer.weight.T + layer.bias
        pre.append(z)
        h = np.maximum(z, 0.0) if k < last else z
        acts.append(h)
    return acts, pre


def _backward(net: AffineNetwork, acts, pre, grad_out: np.ndarray):
    """Back-propagate ``grad_out`` (d/d logits); returns (param grads, input grad)."""
    grads = [None] * net.depth
    g = grad_out
    for k in range(net.depth - 1, -1, -1):
        layer = net.layers[k]
        grads[k] = (g.T @ acts[k], g.sum(axis=0))
        g = g @ layer.weight
        if k > 0:
            g = g * (pre[k - 1] > 0)
    return grads, g


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def loss_and_grads(net: AffineNetwork, X: np.ndarray, y: np.ndarray):
    """Mean cross-entropy of softmax(net(X)) and its gradient per layer."""
    acts, pre = _forward_cache(net, X)
    logp = log_softmax(acts[-1])
    n = X.shape[0]
    loss = -logp[np.arange(n), y].mean()
    g = np.exp(logp)
    g[np.arange(n), y] -= 1.0
    grads, _ = _backward(net, acts, pre, g / n)
    return float(loss), grads


def input_gradient(net: AffineNetwork, X: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Vector-Jacobian product of the network w.r.t. its inputs (batched)."""
    X, _ = _as_batch(net, X)
    acts, pre = _forward_cache(net, X)
    _, g = _backward(net, acts, pre, np.atleast_2d(grad_out))
    return g


def accuracy(net: AffineNetwork, data: LabeledDataset) -> float:
    return float(np.mean(predict(net, data.inputs) == data.labels))


# A penalty hook receives the current parameter list and returns
# (penalty value, per-layer weight gradients or None).
PenaltyFn = Callable[[list], tuple]


class Trainer:
    """Plain mini-batch SGD (optionally with momentum) on cross-entropy.

    Owns a private, mutable copy of the parameters; :meth:`network` returns
    an immutable snapshot.
    """

    def __init__(self, net: AffineNetwork, lr: float, batch: int, seed=0,
                 momentum: float = 0.0, penalty: Optional[PenaltyFn] = None):
        if lr <= 0:
            raise ValueError("lr must be positive")
        if batch < 1:
            raise ValueError("batch must be >= 1")
        self.params = [(w.copy(), b.copy()) for w, b in net.params()]
        self.lr = lr
        self.batch = batch
        self.momentum = momentum
        self.penalty = penalty
        self._velocity = [(np.zeros_like(w), np.zeros_like(b)) for w, b in self.params]
        seeds = np.random.SeedSequence(seed).spawn(2)
        self.shuffle_rng = np.random.default_rng(seeds[0])
        self.noise_rng = np.random.default_rng(seeds[1])
        self.epoch = 0

    def network(self) -> AffineNetwork:
        return AffineNetwork.from_params(self.params)

    def step(self, X: np.ndarray, y: np.ndarray) -> float:
        net = self.network()
        loss, grads = loss_and_grads(net, X, y)
        if self.penalty is not None:
            value, pen_grads = self.penalty(self.params)
            loss += value
            grads = [
                (gw + pg, gb) if pg is not None else (gw, gb)
                for (gw, gb), pg in zip(grads, pen_grads)
            ]
        for k, ((w, b), (gw, gb)) in enumerate(zip(self.params, grads)):
            if self.momentum:
                vw, vb = self._velocity[k]
                vw *= self.momentum
                vw += gw
                vb *= self.momentum
                vb += gb
                gw, gb = vw, vb
            # overflow is reported as divergence just below
            with np.errstate(over="ignore", invalid="ignore"):
                w -= self.lr * gw
                b -= self.lr * gb
        if not np.isfinite(loss) or not all(np.isfinite(w).all() and np.isfinite(b).all()
                                            for w, b in self.params):
            raise TrainingDivergenceError(self.epoch, loss)
        return loss

    def run_epoch(self, X: np.ndarray, y: np.ndarray, noise_sigma: Optional[float] = None) -> float:
        """One shuffled pass; returns the mean mini-batch loss."""
        self.epoch += 1
        n = X.shape[0]
        if noise_sigma:
            X = X + self.noise_rng.normal(0.0, noise_sigma, size=X.shape)
        order = self.shuffle_rng.permutation(n)
        losses = []
        for start in range(0, n, self.batch):
            idx = order[start:start + self.batch]
            losses.append(self.step(X[idx], y[idx]))
        mean = float(np.mean(losses))
        if not np.isfinite(mean):
            raise TrainingDivergenceError(self.epoch, mean)
        return mean


def train_classifier(net: AffineNetwork, data: LabeledDataset, epochs: int = 25,
                     lr: float = 0.06, batch: int = 512, noise_sigma: Optional[float] = None,
                     regularizer=None, seed=0, momentum: float = 0.0) -> AffineNetwork:
    """Mini-batch cross-entropy training; returns a new network.

    ``noise_sigma`` adds fresh isotropic Gaussian noise to every input in
    every epoch. ``regularizer`` is a :class:`reaas.spectral.SpectralConfig`;
    its penalty covers every layer except the output layer.
    """
    if len(data) == 0:
        raise ValueError("training data is empty")
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    if data.dim != net.input_dim:
        raise RejectedInputError(f"data dim {data.dim} != network input {net.input_dim}")
    penalty = None
    if regularizer is not None and regularizer.lam > 0:
        from .spectral import SpectralPenalty

        penalty = SpectralPenalty(regularizer, n_layers=net.depth - 1, seed=seed)
    trainer = Trainer(net, lr, batch, seed=seed, momentum=momentum, penalty=penalty)
    for _ in range(epochs):
        trainer.run_epoch(data.inputs, data.labels, noise_sigma)
    return trainer.network()


def bilinear_rescale_matrix(src_h: int, src_w: int, dst_h: int, dst_w: int,
                            channels: int = 1) -> AffineLayer:
    """Zero-bias layer performing per-channel bilinear resizing.

    Images are flattened channel-major (C, H, W). Pixel centres are mapped
    proportionally without corner alignment, and source coordinates are
    clamped at the border, so every row is a convex combination.
    """
    for d in (src_h, src_w, dst_h, dst_w, channels):
        if d < 1:
            raise ValueError("all dimensions must be >= 1")
    rows = _interp_1d(src_h, dst_h)
    cols = _interp_1d(src_w, dst_w)
    plane = np.kron(rows, cols)
    weight = np.kron(np.eye(channels), plane)
    return AffineLayer(weight, np.zeros(weight.shape[0]))


def _interp_1d(src: int, dst: int) -> np.ndarray:
    m = np.zeros((dst, src))
    scale = src / dst
    for i in range(dst):
        pos = min(max((i + 0.5) * scale - 0.5, 0.0), src - 1)
        lo = int(np.floor(pos))
        hi = min(lo + 1, src - 1)
        frac = pos - lo
        m[i, lo] += 1.0 - frac
        m[i, hi] += frac
    return m
