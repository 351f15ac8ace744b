import math

import numpy as np
import pytest

from curveops.geometry import (
    ADDITIVE,
    ELLIPTIC,
    LAMBDA,
    LAMBDA_PRIME,
    M,
    MULTIPLICATIVE,
    R,
    R_A,
    R_TWISTED,
    TwistParameter,
    green,
    make_geometry,
    project,
)
from curveops.numerics import ContourSpec, residue_at, rng
from curveops.series import Grading, INF, TruncatedSeries, delta_extract, \
    max_mismatch
from curveops.theta import theta, weierstrass_p

ADD = make_geometry({"kind": ADDITIVE})
MULT = make_geometry({"kind": MULTIPLICATIVE})
ELL = make_geometry({"kind": ELLIPTIC, "tau": 0.8j})
TWIST = TwistParameter((0.31 + 0.17j,))
ALL = (ADD, MULT, ELL)


def one_var(data, geometry, K=4, window=12, grades=None):
    return TruncatedSeries(("z",), None, K, window,
                           {(h, (e,)): complex(c) for (h, e), c in
                            data.items()},
                           0, geometry.deriv, grades or {})


def shrink(s, w):
    data = {k: c for k, c in s.data.items()
            if all(abs(e) <= w for e in k[1])}
    grades = {n: g.clipped(w) for n, g in s.grades.items()}
    return TruncatedSeries(s.vars, s.region, s.K, w, data, s.hlo, s.deriv,
                           grades)


class TestDeltaIdentity:
    # the two expansions of the Green kernel must sum to the delta series
    # with unit coefficient, in every geometry

    @pytest.mark.parametrize("geo", ALL, ids=lambda g: g.kind)
    def test_unit_coefficient(self, geo):
        g = geo.green_series(K=4)
        g21 = geo.green21_series(K=4)
        A = delta_extract(g, g21, geo.delta_conv, tol=1e-8)
        assert abs(A.coeff(0, (0,)) - 1) < 1e-9
        rest = sum(abs(c) for (h, e), c in A.data.items() if e != (0,) or h)
        assert rest < 1e-9


class TestGreenNumeric:
    @pytest.mark.parametrize("geo", ALL, ids=lambda g: g.kind)
    def test_antisymmetric(self, geo):
        gen = rng(7)
        for _ in range(10):
            z, w = (complex(*gen.uniform(-1, 1, 2)) for _ in range(2))
            if abs(z - w) < 0.1 or abs(z) < 0.1 or abs(w) < 0.1:
                continue
            a = geo.green_eval(z, w)
            assert abs(a + geo.green_eval(w, z)) < 1e-10 * max(1, abs(a))

    def test_elliptic_series_matches_closed_form(self):
        g = ELL.green_series(K=4)
        z, w = 0.15, 0.015
        val = sum(c * z ** a * w ** b for (h, (a, b)), c in g.data.items()
                  if h == 0)
        # residual is the clipped tail of the window-12 expansion
        assert abs(val - ELL.green_eval(z, w)) < 1e-8

    def test_twisted_kernel_quasi_periodic(self):
        # shifting z by a lattice vector multiplies by exp(2 pi i * 2 lambda)
        lam = TWIST.scalar()
        z, w = 0.37 + 0.21j, -0.12 + 0.05j
        kern = green(ELL, TWIST, twisted=True)
        base = kern(z, w)
        assert abs(kern(z + 1, w) - base) < 1e-9 * abs(base)
        tau = ELL.modulus.tau
        factor = np.exp(4j * math.pi * lam)
        assert abs(kern(z + tau, w) - factor * base) < 1e-9 * abs(base)

    def test_twisted_kernel_unit_diagonal_residue(self):
        kern = green(ELL, TWIST, twisted=True)
        z = 0.41 + 0.13j
        # diagonal pole is 1/(z - w): residue -1 in the second slot
        res = residue_at(lambda w: kern(z, w), ContourSpec(z, 0.05, 64))
        assert abs(res + 1) < 1e-9

    def test_twist_difference_regular_on_diagonal(self):
        # G_{-2 lambda} - G has no diagonal pole
        neg = TwistParameter((-TWIST.scalar(),))
        kern = green(ELL, neg, twisted=True)
        z = 0.29 - 0.11j
        res = residue_at(lambda w: kern(z, w) - ELL.green_eval(z, w),
                         ContourSpec(z, 0.05, 64))
        assert abs(res) < 1e-9

    def test_shifted_diagonal_values(self):
        # (G_{-2 lambda} - G)(z + s*hbar, z) closed form vs direct evaluation
        neg = TwistParameter((-TWIST.scalar(),))
        kern = green(ELL, neg, twisted=True)
        hbar = 0.07 + 0.02j
        z = 0.33 + 0.18j
        for s in (1, -1):
            direct = (kern(z + s * hbar, z) - ELL.green_eval(z + s * hbar, z))
            assert abs(ELL.g_shift_eval(s, z, TWIST, hbar) - direct) < 1e-9

    def test_genus_zero_has_no_shift_data(self):
        assert ADD.g_shift_eval(1, 0.3, None, 0.1) == 0
        assert green(ADD, twisted=True)(0.5, 0.2) == ADD.green_eval(0.5, 0.2)


class TestDualBases:
    def test_additive_pairing_identity(self):
        up, down = ADD.dual_bases(8)
        mat = np.array([[ADD.pairing(u[1], d[1]) for d in down] for u in up])
        assert np.allclose(mat, np.eye(8), atol=1e-14)

    def test_multiplicative_pairing_identity(self):
        up, down = MULT.dual_bases(9)
        mat = np.array([[MULT.pairing(u, d) for d in down] for u in up])
        assert np.allclose(mat, np.eye(9), atol=1e-14)

    def test_elliptic_pairing_identity(self):
        up, down = ELL.dual_bases(10)
        mat = np.array([[ELL.pairing(u[1], d[1]) for d in down]
                        for u in up])
        assert np.max(np.abs(mat - np.eye(10))) < 1e-10

    def test_elliptic_first_dual_is_constant(self):
        up, _ = ELL.dual_bases(6)
        vec = up[0][1]
        assert abs(vec.get(0, 0) - 1) < 1e-12
        assert all(abs(c) < 1e-12 for e, c in vec.items() if e != 0)


class TestAdditiveProjection:
    def test_monomial_split(self):
        s = one_var({(0, 3): 1, (0, -2): 1}, ADD)
        r = project(s, R, ADD)
        lam = project(s, LAMBDA, ADD)
        assert r.data == {(0, (3,)): 1}
        assert lam.data == {(0, (-2,)): 1}
        assert max_mismatch(r + lam, s) == 0

    def test_flat_targets_coincide(self):
        # one marked point, genus 0: m = Lambda and R_(a) = R
        s = one_var({(0, -4): 2.5, (0, 1): 1j}, ADD)
        assert project(s, M, ADD).data == project(s, LAMBDA, ADD).data
        assert project(s, R_A, ADD).data == project(s, R, ADD).data
        assert project(s, R_TWISTED, ADD).data == project(s, R, ADD).data

    def test_numeric_contour_projection(self):
        def f(w):
            return w ** 3 + w ** -2

        z = 0.7 + 0.2j
        fr = project(f, R, ADD)
        fl = project(f, LAMBDA, ADD)
        assert abs(fr(z) - z ** 3) < 1e-8
        assert abs(fl(z) - z ** -2) < 1e-8


class TestMultiplicativeProjection:
    # series slots carry their subspace type: the chart at 0 cannot tell a
    # Laurent monomial of R from the restriction of a dual basis element

    def test_lambda_slot(self):
        s = one_var({(0, 2): 1, (0, -1): 3}, MULT)
        assert project(s, M, MULT).data == s.data
        assert project(s, R, MULT).data == {}

    def test_r_slot(self):
        s = one_var({(0, 2): 1}, MULT)
        assert project(s, R, MULT, slot=R).data == s.data
        assert project(s, M, MULT, slot=R).data == {}

    def test_numeric_mode_rejected(self):
        with pytest.raises(NotImplementedError):
            project(lambda w: w, R, MULT)


class TestEllipticProjection:
    def test_simple_pole_is_flat(self):
        # 1/z spans the same line as theta'/theta modulo regular terms,
        # so its double-pole component vanishes
        s = one_var({(0, -1): 1}, ELL)
        r = project(s, R, ELL)
        assert all(abs(c) < 1e-12 for c in r.data.values())
        lam = project(s, LAMBDA, ELL)
        assert max_mismatch(lam + r, s) < 1e-12

    def test_double_pole_component(self):
        s = one_var({(0, -2): 1}, ELL)
        r = project(s, R, ELL)
        tab = ELL.tables()
        c1 = tab.t_coeff(1)
        # r = wp + c1: constant term cancels, z^2 term is the wp one
        assert abs(r.coeff(0, (-2,)) - 1) < 1e-12
        assert abs(r.coeff(0, (0,))) < 1e-10
        wp2 = tab.wp_derivative(0, 2, 2)[2]
        assert abs(r.coeff(0, (2,)) - wp2) < 1e-10
        z = 0.45 + 0.2j
        fr = project(lambda w: w ** -2, R, ELL)
        expect = weierstrass_p(z, ELL.modulus) + c1
        assert abs(fr(z) - expect) < 1e-8

    def test_series_and_contour_routes_agree(self):
        s = one_var({(0, -2): 1, (0, -1): 0.5}, ELL)
        col = project(s, R, ELL)
        z = 0.15
        series_val = sum(c * z ** e for (h, (e,)), c in col.data.items())
        fr = project(lambda w: w ** -2 + 0.5 / w, R, ELL, contour_radius=0.1)
        assert abs(series_val - fr(z)) < 1e-8

    def test_complementary_and_idempotent(self):
        gen = rng(11)
        data = {(0, e): complex(*gen.uniform(-1, 1, 2))
                for e in range(-6, 7)}
        s = one_var(data, ELL)
        r, lam = project(s, R, ELL), project(s, LAMBDA, ELL)
        assert max_mismatch(r + lam, s) < 1e-8
        assert max_mismatch(project(r, R, ELL), r) < 1e-8
        assert project(lam, R, ELL).max_abs() < 1e-8
        mm, ra = project(s, M, ELL), project(s, R_A, ELL)
        assert max_mismatch(mm + ra, s) < 1e-8
        assert all(e[0] >= 1 for (h, e) in mm.data)

    def test_flat_part_of_simple_pole(self):
        # theta'/theta itself lies in the extended polynomial part R_(a)
        tab = ELL.tables()
        data = {(0, e): tab.t_coeff(e) for e in range(-1, 13)}
        s = one_var(data, ELL)
        assert project(s, M, ELL).max_abs() < 1e-9
        assert max_mismatch(project(s, R_A, ELL), s) < 1e-9

    def test_twisted_projection_splits(self):
        gen = rng(13)
        data = {(0, e): complex(*gen.uniform(-1, 1, 2))
                for e in range(-5, 6)}
        s = one_var(data, ELL)
        r2 = project(s, R_TWISTED, ELL, twist=TWIST)
        lp = project(s, LAMBDA_PRIME, ELL, twist=TWIST)
        assert max_mismatch(r2 + lp, s) < 1e-8
        assert all(e[0] >= 0 for (h, e), c in lp.data.items()
                   if abs(c) > 1e-12)
        assert max_mismatch(project(r2, R_TWISTED, ELL, twist=TWIST),
                            r2) < 1e-7

    def test_twisted_series_matches_contour(self):
        s = one_var({(0, -2): 1}, ELL)
        col = project(s, R_TWISTED, ELL, twist=TWIST)
        z = 0.15
        series_val = sum(c * z ** e for (h, (e,)), c in col.data.items())
        fr = project(lambda w: w ** -2, R_TWISTED, ELL, twist=TWIST,
                     contour_radius=0.1)
        assert abs(series_val - fr(z)) < 1e-7

    def test_out_of_window_data_dropped(self):
        # beyond the window the stored numbers are untrusted; the
        # projection must ignore them instead of spraying junk columns
        s = one_var({(0, -15): 1}, ELL)
        assert project(s, R, ELL).data == {}

    def test_needs_exact_bottom(self):
        grades = {"e": Grading(-INF, INF, 0, 5)}
        s = one_var({(0, -2): 1}, ELL, grades=grades)
        with pytest.raises(ValueError, match="bottom"):
            project(s, R, ELL)

    def test_twist_required(self):
        s = one_var({(0, -2): 1}, ELL)
        with pytest.raises(ValueError):
            project(s, R_TWISTED, ELL)


class TestShiftCouple:
    def test_valuation_and_symmetry(self):
        tau = ELL.tau_series(K=4, window=8)
        assert tau.hbar_valuation() >= 2
        for (h, (a, b)), c in tau.data.items():
            assert abs(c - tau.coeff(h, (b, a))) < 1e-12

    def test_exact_rational_entry(self):
        # 1(z) pairs with the dual of z^2, whose principal part is z^{-3}
        # with unit coefficient; the second-order weight is -1/6
        tau = ELL.tau_series(K=4, window=8)
        assert abs(tau.coeff(2, (0, -3)) + 1.0 / 6) < 1e-10

    def test_genus_zero_trivial(self):
        assert ADD.tau_series().max_abs() == 0
        assert MULT.tau_series().max_abs() == 0

    def test_skew_part_matches_kernel(self):
        # tau + tau(swapped) = - sum_i e^i (x) (T e_i)_R with
        # T = sinh(hbar d)/(hbar d); symmetry makes the left side 2*tau
        K = 4
        coeffs = np.array([1.0 / math.factorial(k + 1) if k % 2 == 0 else 0.0
                           for k in range(K + 1)], dtype=complex)
        g = ELL.green_series(K=K, window=12)
        rhs = -project(g.apply_symbol(coeffs, "w"), R, ELL, var="w")
        lhs = ELL.tau_series(K=K, window=12, region="w<<z").scaled(2)
        assert max_mismatch(shrink(lhs, 8), shrink(rhs, 8)) < 1e-7


class TestConfigAndConventions:
    def test_roundtrip(self):
        cfg = ELL.config()
        assert cfg["kind"] == ELLIPTIC
        geo = make_geometry(cfg)
        assert geo.modulus.tau == ELL.modulus.tau

    def test_tau_string_accepted(self):
        geo = make_geometry({"kind": ELLIPTIC, "tau": "0.1+0.9i"})
        assert abs(geo.modulus.tau - (0.1 + 0.9j)) < 1e-12

    def test_errors(self):
        with pytest.raises(ValueError):
            make_geometry({"kind": "hyperbolic"})
        with pytest.raises(ValueError):
            make_geometry({"kind": ELLIPTIC})

    @pytest.mark.parametrize("geo", ALL, ids=lambda g: g.kind)
    def test_conventions_record(self, geo):
        rec = geo.conventions()
        assert rec["kind"] == geo.kind
        assert len(rec["hash"]) == 16
