#!/usr/bin/env python3
"""Tests for finite-difference gradient checking and the gradient suite."""

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from seld_einv2.diffcore import ops
from seld_einv2.diffcore.gradcheck import grad_check
from seld_einv2.diffcore.tensor import Tensor
from seld_einv2.errors import ContractError
from seld_einv2.gradsuite import (
    N_INPUTS,
    SMOOTH_TOLERANCE,
    TOLERANCE,
    GradResult,
    cross_stitch_check,
    format_grad_results,
    mhsa_check,
    model_check,
    primitive_checks,
    tpit_check,
)


class TestGradCheck:
    """Test suite for grad_check."""

    def test_linear_function(self, rng):
        x = Tensor(rng.standard_normal((3, 4)), dtype=np.float64)
        assert grad_check(lambda v: ops.sum(v), x) < 1e-8

    def test_quadratic(self, rng):
        x = Tensor(rng.standard_normal(6), dtype=np.float64)
        assert grad_check(lambda v: ops.sum(ops.mul(v, v)), x) < 1e-7

    def test_non_scalar_output_rejected(self, rng):
        x = Tensor(rng.standard_normal(3), dtype=np.float64)
        with pytest.raises(ContractError):
            grad_check(lambda v: ops.mul(v, 2.0), x)

    def test_single_precision_rejected(self):
        x = Tensor(np.ones(3, dtype=np.float32))
        with pytest.raises(ContractError):
            grad_check(lambda v: ops.sum(v), x)

    def test_detects_wrong_gradient(self, rng):
        x = Tensor(rng.standard_normal(4) + 3.0, dtype=np.float64)
        # detach hides the dependence of the second factor from backward
        broken = lambda v: ops.sum(ops.mul(v, v.detach()))
        assert grad_check(broken, x) > 1e-2

    def test_input_restored(self, rng):
        data = rng.standard_normal(5)
        x = Tensor(data.copy(), dtype=np.float64)
        grad_check(lambda v: ops.sum(ops.exp(v)), x)
        np.testing.assert_array_equal(x.data, data)


class TestGradSuite:
    """Test suite for the component checks run by `seld gradcheck`."""

    def test_every_primitive_passes(self, rng):
        results = primitive_checks(rng)
        failed = [(r.name, r.error) for r in results if not r.passed]
        assert failed == []
        assert {"conv2d", "batchnorm2d", "softmax", "max_pool2d", "layer_norm"} <= {r.name for r in results}

    def test_five_inputs_per_primitive(self, rng):
        results = primitive_checks(rng)
        assert all(r.n_inputs >= N_INPUTS >= 5 for r in results)
        assert all(r.attempts >= r.n_inputs for r in results)

    def test_smooth_primitives_tight(self, rng):
        results = {r.name: r for r in primitive_checks(rng)}
        for name in ("add", "mul", "matmul", "exp", "log", "softmax", "layer_norm",
                     "conv2d", "batchnorm2d", "sigmoid", "tanh"):
            assert results[name].tolerance == SMOOTH_TOLERANCE
            assert results[name].error < 1e-6, name

    def test_kinked_primitives_loose(self, rng):
        results = {r.name: r for r in primitive_checks(rng, n_inputs=2)}
        assert {results[n].tolerance for n in ("relu", "clamp", "max_pool2d")} == {TOLERANCE}

    def test_cross_stitch(self, rng):
        assert all(r.passed for r in cross_stitch_check(rng, n_coords=8))

    def test_mhsa(self, rng):
        results = mhsa_check(rng, n_coords=8)
        assert len(results) == 5
        assert all(r.passed for r in results)

    def test_tpit(self, rng):
        assert all(r.passed for r in tpit_check(rng, n_coords=8))

    @pytest.mark.slow
    def test_tiny_model(self, rng):
        results = model_check(rng, n_coords=3)
        assert results
        assert all(r.error < TOLERANCE for r in results)

    def test_format(self):
        text = format_grad_results([GradResult("add", 1e-9), GradResult("relu", 0.5, attempts=3)])
        assert "add" in text and "ok" in text
        assert "FAIL" in text


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
