import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reaas.client import RadiusCertificate
from reaas.metrics import (average_certified_radius, certified_accuracy, certified_accuracy_curve,
                           curve_area, lp_radii)


def cert(i, radius, correct=True, abstained=False, failed=False):
    return RadiusCertificate(i, 0, 0 if correct else 1, "bc", "reaas", input_radius=radius,
                             abstained=abstained, failed=failed)


def test_linf_conversion():
    r = lp_radii(0.6408, 3072)
    assert r["linf"] == pytest.approx(0.01156143914, abs=1e-10)
    assert r["l1"] == r["l2"] == 0.6408


def test_single_step_area_equals_radius():
    certs = [cert(i, 0.5) for i in range(10)]
    assert average_certified_radius(certs) == pytest.approx(0.5)
    assert curve_area(certified_accuracy_curve(certs)) == pytest.approx(0.5, rel=1e-12)


def test_non_certified_inputs_count_against():
    certs = [cert(0, 1.0), cert(1, 2.0, correct=False), cert(2, None, abstained=True),
             cert(3, None, failed=True)]
    assert certified_accuracy(certs, 0.0) == 0.25
    assert certified_accuracy(certs, 1.0) == 0.25
    assert certified_accuracy(certs, 1.5) == 0.0
    assert average_certified_radius(certs) == 0.25


def test_empty():
    assert average_certified_radius([]) == 0.0
    assert certified_accuracy([], 0.1) == 0.0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 3), st.booleans()), min_size=1, max_size=60))
def test_curve_area_matches_acr(items):
    certs = [cert(i, r, ok) for i, (r, ok) in enumerate(items)]
    acr = average_certified_radius(certs)
    area = curve_area(certified_accuracy_curve(certs))
    assert area == pytest.approx(acr, rel=0.01, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 3), min_size=1, max_size=40))
def test_curve_nonincreasing(radii):
    curve = certified_accuracy_curve([cert(i, r) for i, r in enumerate(radii)])
    xs = [p[0] for p in curve]
    ys = [p[1] for p in curve]
    assert xs == sorted(xs)
    assert all(b <= a for a, b in zip(ys, ys[1:]))
    assert ys[0] == 1.0


def test_grid_only_curve_approximates_area():
    rng = np.random.default_rng(0)
    certs = [cert(i, float(r)) for i, r in enumerate(rng.uniform(0, 1, 200))]
    area = curve_area(certified_accuracy_curve(certs, n_points=2000, exact_steps=False))
    assert area == pytest.approx(average_certified_radius(certs), rel=0.01)
    assert math.isfinite(area)
