"""CROWN linear bound propagation for ReLU networks under an l2-ball input.

Every output of the network is sandwiched between two linear functions of
the input that are valid on the whole ball; their extrema over the ball have
closed forms (Cauchy-Schwarz), which is what makes radius search cheap.

Hidden pre-activation intervals are obtained by running the same backward
pass from every hidden layer down to the input, so the cost is quadratic in
depth.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .nn import AffineNetwork, RejectedInputError, forward


class PropagationError(ArithmeticError):
    def __init__(self, layer: int, what: str = "bound"):
        super().__init__(f"non-finite {what} at layer {layer}")
        self.layer = layer


@dataclass(frozen=True)
class BoundingLines:
    """``lower_coeffs @ x + lower_offset <= net(x) <= upper_coeffs @ x + upper_offset``."""

    lower_coeffs: np.ndarray
    lower_offset: np.ndarray
    upper_coeffs: np.ndarray
    upper_offset: np.ndarray
    center: np.ndarray
    rho: float

    def lower(self, x) -> np.ndarray:
        return np.asarray(x) @ self.lower_coeffs.T + self.lower_offset

    def upper(self, x) -> np.ndarray:
        return np.asarray(x) @ self.upper_coeffs.T + self.upper_offset

    def concretize(self, rho: Optional[float] = None):
        """Per-output (min of lower line, max of upper line) over the ball."""
        rho = self.rho if rho is None else rho
        lo = ball_extremum(self.lower_coeffs, self.lower_offset, self.center, rho, "min")
        hi = ball_extremum(self.upper_coeffs, self.upper_offset, self.center, rho, "max")
        return lo, hi


@dataclass(frozen=True)
class PreactivationInterval:
    low: np.ndarray
    high: np.ndarray


def ball_extremum(coeffs, offset, center, rho: float, direction: str = "max"):
    """Exact min/max of ``coeffs @ x + offset`` over ``||x - center||_2 <= rho``.

    Works row-wise when ``coeffs`` is a matrix.
    """
    if rho < 0:
        raise ValueError("rho must be >= 0")
    coeffs = np.asarray(coeffs, dtype=np.float64)
    value = coeffs @ np.asarray(center, dtype=np.float64) + offset
    spread = rho * np.linalg.norm(coeffs, axis=-1)
    if direction == "max":
        return value + spread
    if direction == "min":
        return value - spread
    raise ValueError("direction must be 'min' or 'max'")


def relu_relaxation(interval: PreactivationInterval):
    """Slopes/intercepts of the upper and lower lines bounding ReLU on [l, u].

    Unstable neurons get the chord through (l, 0) and (u, u) as upper line
    and the adaptive lower line (slope 1 if u >= -l else 0).
    """
    l, u = interval.low, interval.high
    active = l >= 0
    unstable = (l < 0) & (u > 0)
    width = np.where(unstable, u - l, 1.0)
    up_slope = np.where(active, 1.0, np.where(unstable, u / width, 0.0))
    up_icpt = np.where(unstable, -u * l / width, 0.0)
    lo_slope = np.where(active, 1.0, np.where(unstable & (u >= -l), 1.0, 0.0))
    return up_slope, up_icpt, lo_slope


def _backward_bounds(layers, k: int, intervals, objective: Optional[np.ndarray] = None):
    """Linear bounds on ``objective @ z_k`` as functions of the network input."""
    W, b = layers[k].weight, layers[k].bias
    if objective is not None:
        W, b = objective @ W, objective @ b
    A_up, A_lo = W.copy(), W.copy()
    c_up, c_lo = b.copy(), b.copy()
    for j in range(k - 1, -1, -1):
        up_slope, up_icpt, lo_slope = relu_relaxation(intervals[j])
        pos = A_up >= 0
        c_up = c_up + (A_up * np.where(pos, up_icpt, 0.0)).sum(axis=1)
        A_up = A_up * np.where(pos, up_slope, lo_slope)
        pos = A_lo >= 0
        c_lo = c_lo + (A_lo * np.where(pos, 0.0, up_icpt)).sum(axis=1)
        A_lo = A_lo * np.where(pos, lo_slope, up_slope)
        layer = layers[j]
        c_up = c_up + A_up @ layer.bias
        A_up = A_up @ layer.weight
        c_lo = c_lo + A_lo @ layer.bias
        A_lo = A_lo @ layer.weight
    return A_lo, c_lo, A_up, c_up


def _check_center(net: AffineNetwork, center, rho: float) -> np.ndarray:
    if rho < 0:
        raise ValueError("rho must be >= 0")
    c = np.asarray(center, dtype=np.float64).reshape(-1)
    if c.shape[0] != net.input_dim:
        raise RejectedInputError(f"center has dim {c.shape[0]}, network expects {net.input_dim}")
    return c


def preactivation_bounds(net: AffineNetwork, center, rho: float) -> list:
    """Intervals for every hidden (ReLU-input) layer."""
    c = _check_center(net, center, rho)
    intervals = []
    for k in range(net.depth - 1):
        # overflow is detected and reported below
        with np.errstate(over="ignore", invalid="ignore"):
            A_lo, c_lo, A_up, c_up = _backward_bounds(net.layers, k, intervals)
            low = ball_extremum(A_lo, c_lo, c, rho, "min")
            high = ball_extremum(A_up, c_up, c, rho, "max")
        if not (np.all(np.isfinite(low)) and np.all(np.isfinite(high))):
            raise PropagationError(k, "pre-activation bound")
        intervals.append(PreactivationInterval(low, high))
    return intervals


def propagate_bounds(net: AffineNetwork, center, rho: float, objective: Optional[np.ndarray] = None) -> BoundingLines:
    """Bounding lines for ``net`` (or ``objective @ net``) on the ball around ``center``."""
    c = _check_center(net, center, rho)
    intervals = preactivation_bounds(net, c, rho)
    with np.errstate(over="ignore", invalid="ignore"):
        A_lo, c_lo, A_up, c_up = _backward_bounds(net.layers, net.depth - 1, intervals, objective)
    for arr in (A_lo, c_lo, A_up, c_up):
        if not np.all(np.isfinite(arr)):
            raise PropagationError(net.depth - 1)
    return BoundingLines(A_lo, c_lo, A_up, c_up, c, float(rho))


def margin_matrix(num_classes: int, label: int) -> np.ndarray:
    """Rows ``e_label - e_other`` for every other class."""
    others = [l for l in range(num_classes) if l != label]
    objective = np.zeros((len(others), num_classes))
    objective[np.arange(len(others)), label] = 1.0
    objective[np.arange(len(others)), others] = -1.0
    return objective


def certifies(classifier: AffineNetwork, v, label: int, r: float, mode: str = "margin") -> bool:
    """Whether bounds at radius ``r`` prove the argmax stays ``label``.

    ``mode="margin"`` bounds each logit difference directly (tighter);
    ``mode="separate"`` compares the min lower line of ``label`` to the max
    upper line of every other logit.
    """
    if mode == "margin":
        objective = margin_matrix(classifier.output_dim, label)
        if objective.shape[0] == 0:
            return True
        lo, _ = propagate_bounds(classifier, v, r, objective).concretize()
        return bool(np.all(lo > 0))
    if mode == "separate":
        lo, hi = propagate_bounds(classifier, v, r).concretize()
        others = np.delete(hi, label)
        return bool(np.all(lo[label] > others))
    raise ValueError("mode must be 'margin' or 'separate'")


def bc_feature_radius(classifier: AffineNetwork, v, precision: float = 0.001,
                      rho_high: float = 10.0, mode: str = "margin", max_doublings: int = 60):
    """Predicted label and the largest radius CROWN certifies around ``v``.

    Bisects ``[0, rho_high]`` until the bracket is at most ``precision``
    wide. If ``rho_high`` itself certifies, the bracket is doubled first.
    """
    if precision <= 0:
        raise ValueError("precision must be positive")
    v = np.asarray(v, dtype=np.float64)
    label = int(np.argmax(forward(classifier, v)))
    if not certifies(classifier, v, label, 0.0, mode):
        return label, 0.0
    lo, hi = 0.0, float(rho_high)
    for _ in range(max_doublings):
        if not certifies(classifier, v, label, hi, mode):
            break
        lo, hi = hi, 2 * hi
    else:
        return label, lo
    while hi - lo > precision:
        mid = (lo + hi) / 2
        if certifies(classifier, v, label, mid, mode):
            lo = mid
        else:
            hi = mid
    return label, lo

