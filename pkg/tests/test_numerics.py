import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from curveops.numerics import (
    ContourSpec,
    Tolerance,
    complex_step_derivative,
    laurent_coeffs,
    parse_complex,
    residue_at,
    rng,
    sample_points,
    taylor_coeffs,
)


class TestResidue:
    def test_simple_pole(self):
        """res_0 of 1/w is 1 by definition."""
        val = residue_at(lambda w: 1 / w, ContourSpec(0, 0.5, 64))
        assert abs(val - 1) < 1e-12

    def test_no_pole(self):
        val = residue_at(lambda w: 1.0, ContourSpec(0, 0.5, 64))
        assert abs(val) < 1e-14

    def test_derivative_has_no_residue(self):
        # 1/w^2 = -(1/w)' so its residue vanishes
        val = residue_at(lambda w: 1 / w ** 2, ContourSpec(0, 0.3, 64))
        assert abs(val) < 1e-12

    def test_radius_invariance(self):
        f = lambda w: (2 + w) / (w - 0.1)
        a = residue_at(f, ContourSpec(0.1, 0.2, 64))
        b = residue_at(f, ContourSpec(0.1, 0.5, 64))
        assert abs(a - b) < 1e-11

    def test_error_estimate_brackets_truth(self):
        f = lambda w: 1 / (w - 0.3) + 3 / (w + 0.2)
        val, err = residue_at(f, ContourSpec(0, 1.0, 32), with_error=True)
        assert abs(val - 4) <= max(err, 1e-11)

    def test_singular_contour_rejected(self):
        with pytest.raises(ValueError, match="singularity"):
            residue_at(lambda w: 1 / (w - 0.5), ContourSpec(0, 0.5, 64))

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            ContourSpec(0, -1.0, 64)
        with pytest.raises(ValueError):
            ContourSpec(0, 1.0, 15)


class TestCoefficientExtraction:
    def test_taylor_of_exp(self):
        c = taylor_coeffs(np.exp, 0, 6)
        for k in range(7):
            assert abs(c[k] - 1 / math.factorial(k)) < 1e-12

    def test_laurent_of_rational(self):
        # 1/(z(1-z)) = sum_{k>=-1} z^k inside |z|<1
        f = lambda z: 1 / (z * (1 - z))
        c = laurent_coeffs(f, 0, 0.4, -3, 3)
        expect = [0, 0, 1, 1, 1, 1, 1]
        assert np.allclose(c, expect, atol=1e-12)

    def test_shifted_center(self):
        f = lambda z: 1 / (z - 2) ** 2
        c = laurent_coeffs(f, 2, 0.3, -3, 0)
        assert np.allclose(c, [0, 1, 0, 0], atol=1e-11)


class TestDerivative:
    def test_square(self):
        assert abs(complex_step_derivative(lambda z: z ** 2, 3) - 6) < 1e-10

    def test_exp_second(self):
        val = complex_step_derivative(np.exp, 0, order=2)
        assert abs(val - 1) < 1e-8

    def test_bad_order(self):
        with pytest.raises(ValueError):
            complex_step_derivative(np.exp, 0, order=3)


class TestSampling:
    def test_deterministic(self):
        a = sample_points(rng(7), 10)
        b = sample_points(rng(7), 10)
        assert a == b

    def test_separation_and_avoidance(self):
        avoid = [0.5 + 0.5j]
        pts = sample_points(rng(3), 25, min_sep=0.15, avoid=avoid)
        for i, p in enumerate(pts):
            assert abs(p - avoid[0]) >= 0.15
            for q in pts[:i]:
                assert abs(p - q) >= 0.15

    def test_budget_exhaustion(self):
        with pytest.raises(RuntimeError):
            sample_points(rng(1), 50, box=0.1, min_sep=1.0, retries=2)


class TestParsing:
    @pytest.mark.parametrize("text,val", [
        ("1+2i", 1 + 2j),
        ("0.8i", 0.8j),
        ("-3", -3 + 0j),
        ("2-0.5i", 2 - 0.5j),
        ("1.5", 1.5 + 0j),
    ])
    def test_forms(self, text, val):
        assert parse_complex(text) == val

    def test_reject_garbage(self):
        with pytest.raises(ValueError):
            parse_complex("spam")


class TestTolerance:
    def test_validation(self):
        with pytest.raises(ValueError):
            Tolerance(0, 0)
        assert Tolerance(1e-9).ok(5e-10)
        assert not Tolerance(1e-9).ok(5e-9)


@settings(max_examples=25, deadline=None)
@given(st.integers(-3, 3), st.integers(-3, 3))
def test_laurent_picks_single_monomial(a, b):
    """Coefficient extraction separates any two monomials exactly."""
    f = lambda z: z ** a + 2.5 * z ** b
    c = laurent_coeffs(f, 0, 0.7, -4, 4)
    for i, k in enumerate(range(-4, 5)):
        want = (1 if k == a else 0) + (2.5 if k == b else 0)
        assert abs(c[i] - want) < 1e-10
