"""Tests for the finite-difference checking machinery itself.

The full 100-instance sweep is exercised elsewhere; here the concern is
that the harness measures what it claims to: small error on a correct
gradient, large error on a deliberately wrong one.
"""

import numpy as np
import pytest

from crackloss.gradcheck import (
    LAYER_TOL,
    central_difference,
    check_concat,
    check_jaccard,
    check_wce,
    rel_error,
    run_all,
)


class TestCentralDifference:
    def test_quadratic_exact(self):
        # f(x) = sum(x^2) has gradient 2x; central differences are exact on
        # quadratics up to rounding
        x = np.array([1.0, -2.0, 0.5])
        g = central_difference(lambda v: float(np.sum(v * v)), x.copy(), step=1e-5)
        assert np.allclose(g, 2 * x, atol=1e-9)

    def test_does_not_mutate_input(self):
        x = np.array([1.0, 2.0])
        orig = x.copy()
        central_difference(lambda v: float(np.sum(v)), x, step=1e-5)
        assert np.array_equal(x, orig)


class TestRelError:
    def test_zero_for_identical(self):
        a = np.array([1.0, 2.0])
        assert rel_error(a, a.copy()) == 0.0

    def test_scales_with_disagreement(self):
        a = np.array([1.0, 2.0])
        b = np.array([1.0, 2.2])
        assert rel_error(a, b) == pytest.approx(0.2 / 2.2)

    def test_small_values_use_absolute_floor(self):
        a = np.array([1e-9])
        b = np.array([2e-9])
        assert rel_error(a, b) < 1e-8


class TestHarnessCatchesBugs:
    def test_wrong_gradient_is_flagged(self):
        # the same protocol the suites use, applied to a broken gradient:
        # d/dx sum(sin x) reported as cos(x) + 0.01
        rng = np.random.default_rng(0)
        x = rng.normal(size=(4, 4))
        num = central_difference(lambda v: float(np.sum(np.sin(v))), x.copy())
        wrong = np.cos(x) + 0.01
        assert rel_error(wrong, num) > 1e-3
        right = np.cos(x)
        assert rel_error(right, num) < 1e-9


class TestSuites:
    def test_individual_checks_small_error(self):
        assert check_wce(5) < LAYER_TOL
        assert check_jaccard(5) < LAYER_TOL
        assert check_concat(5) < LAYER_TOL

    def test_run_all_structure(self):
        results = run_all(instances=2)
        names = [r.name for r in results]
        assert names == ["wce_grad_logits", "jaccard_distance_grad", "conv2d",
                         "relu", "maxpool2x2", "deconv2x2s2", "concat",
                         "unet_depth1"]
        for r in results:
            assert r.instances == 2
            assert r.passed, f"{r.name}: {r.max_rel_err} vs {r.tol}"
            assert r.seconds >= 0.0

    def test_deterministic_across_calls(self):
        a = run_all(instances=2)
        b = run_all(instances=2)
        for ra, rb in zip(a, b):
            assert ra.max_rel_err == rb.max_rel_err
