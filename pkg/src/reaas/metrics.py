"""Certified accuracy, average certified radius, and norm conversions."""

from __future__ import annotations

import math

import numpy as np


def effective_radii(certificates) -> np.ndarray:
    """Radius per certificate, with ``-inf`` for anything not certified correct.

    Misclassified, abstained, and failed inputs never count as certified,
    at any perturbation size.
    """
    out = np.full(len(certificates), -np.inf)
    for i, c in enumerate(certificates):
        if c.correct and not c.abstained and not c.failed and c.input_radius is not None:
            out[i] = c.input_radius
    return out


def certified_accuracy(certificates, size: float) -> float:
    if not certificates:
        return 0.0
    return float(np.mean(effective_radii(certificates) >= size))


def average_certified_radius(certificates) -> float:
    """Sum of certified radii of correct inputs over the number of inputs.

    This is the area under the certified-accuracy curve.
    """
    if not certificates:
        return 0.0
    r = effective_radii(certificates)
    return float(np.sum(r[np.isfinite(r)]) / len(certificates))


def certified_accuracy_curve(certificates, n_points: int = 100, max_size=None,
                             exact_steps: bool = True) -> list:
    """``(size, certified accuracy)`` pairs, sorted by size.

    The grid is ``n_points`` evenly spaced sizes from 0 to ``max_size``
    (default: largest radius). With ``exact_steps`` every observed radius
    contributes its value and its right limit, so the trapezoid rule over the
    curve integrates the step function exactly.
    """
    r = effective_radii(certificates)
    finite = r[np.isfinite(r)]
    top = float(finite.max()) if finite.size and max_size is None else float(max_size or 0.0)
    sizes = set(np.linspace(0.0, top, n_points).tolist()) if top > 0 else {0.0}
    n = max(len(certificates), 1)
    points = [(s, float(np.sum(r >= s) / n)) for s in sizes]
    if exact_steps:
        for s in np.unique(finite):
            if s <= top:
                points.append((float(s), float(np.sum(r >= s) / n)))
                points.append((float(s), float(np.sum(r > s) / n)))
    return sorted(set(points), key=lambda p: (p[0], -p[1]))


def curve_area(curve) -> float:
    xs = np.array([p[0] for p in curve])
    ys = np.array([p[1] for p in curve])
    if xs.size < 2:
        return 0.0
    return float(np.sum((xs[1:] - xs[:-1]) * (ys[1:] + ys[:-1]) / 2))


def lp_radii(l2_radius: float, dim: int) -> dict:
    """Radii implied by an l2 certificate in the l1 and l-infinity norms."""
    return {"l2": l2_radius, "l1": l2_radius, "linf": l2_radius / math.sqrt(dim)}
