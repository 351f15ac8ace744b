"""Concrete curve models behind the kernel calculus.

Three geometries are supported:

* additive rational  — the plane with coordinate z, translation derivation
  d/dz, one marked point at infinity;
* multiplicative rational — the punctured plane with scaling derivation
  z d/dz and marked points 0 and infinity (series data lives on the chart
  at 0);
* elliptic — a complex torus with coordinate z and translation derivation,
  marked point 0.

Each geometry fixes dual bases of the function-space splitting
K = R (+) Lambda, realizes the canonical two-variable Green series
G = sum_i e^i (x) e_i in a definite expansion region, knows the delta
realization that makes G(z,w) + G(w,z) = delta(z,w) come out with unit
coefficient, and supplies the subspace projections the kernel formulas
consume.  The correction couple tau (a symmetric R (x) R series fixing the
skew part of the shift operator on Lambda) is nonzero only for the elliptic
model.

Conventions (pairing orientation, delta sign/offset, derivation flavor) are
collected in a single record per geometry; tests and reports reference that
record instead of re-deriving signs.
"""

from __future__ import annotations

import cmath
import hashlib
import json
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .numerics import ContourSpec, laurent_coeffs, parse_complex, residue_at
from .series import (
    INF,
    DeltaConvention,
    Grading,
    TruncatedSeries,
)
from .theta import EllipticModulus, theta, theta_logderiv

DEFAULT_K = 4
DEFAULT_WINDOW = 12

ADDITIVE = "additive-rational"
MULTIPLICATIVE = "multiplicative-rational"
ELLIPTIC = "elliptic"

# projection targets
R = "R"
LAMBDA = "Lambda"
M = "m"
R_A = "R_a"
R_TWISTED = "R_2la"
LAMBDA_PRIME = "Lambda_prime"

_UNTWISTED = {R, LAMBDA, M, R_A}
_TARGETS = _UNTWISTED | {R_TWISTED, LAMBDA_PRIME}


@dataclass(frozen=True)
class TwistParameter:
    """Twist vector; one complex entry per handle of the curve."""

    values: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "values",
                           tuple(complex(v) for v in self.values))

    @property
    def is_trivial(self) -> bool:
        return len(self.values) == 0

    def scalar(self) -> complex:
        if len(self.values) != 1:
            raise ValueError("twist has no single scalar component")
        return self.values[0]


def _require_twist(geometry, twist):
    if geometry.genus == 0:
        return None
    if twist is None or twist.is_trivial:
        raise ValueError("elliptic twisted data needs a twist parameter")
    lam = twist.scalar()
    if abs(theta(2 * lam, geometry.modulus)) < 1e-10:
        raise ValueError("degenerate twist: theta(2*lambda) vanishes")
    return lam


class Geometry:
    """Common surface of the three curve models."""

    kind: str
    genus: int
    deriv: str                 # "additive" -> d/dz, "scaling" -> z d/dz
    delta_conv: DeltaConvention
    marked_point = 0j          # chart origin of the stored Laurent data

    scale = 1.0   # internal chart stretch; only the elliptic geometry uses it

    def __init__(self, basis_count: int):
        if basis_count < 4:
            raise ValueError("basis_count too small to be useful")
        self.basis_count = basis_count

    # -- series side ---------------------------------------------------------

    def green_series(self, K: int = DEFAULT_K, window: int = DEFAULT_WINDOW,
                     region: str | None = None) -> TruncatedSeries:
        """Expansion of G = sum e^i (x) e_i; ``region`` defaults to the
        geometry's canonical one, the opposite tag returns the continuation
        of the same global kernel (G is antisymmetric)."""
        g = self._green_canonical(K, window)
        if region is None or region == g.region:
            return g
        return -g.swap()

    def green21_series(self, K: int = DEFAULT_K,
                       window: int = DEFAULT_WINDOW) -> TruncatedSeries:
        """G(w,z) as a series — the opposite-region partner in the delta
        identity delta = G + G^(21)."""
        return self._green_canonical(K, window).swap()

    def tau_series(self, K: int = DEFAULT_K, window: int = DEFAULT_WINDOW,
                   region: str = "z<<w") -> TruncatedSeries:
        """Symmetric R (x) R correction fixing the shift couple on Lambda;
        zero at genus 0."""
        zero = TruncatedSeries.constant(0, ("z", "w"), region, K, window,
                                        self.deriv)
        return zero

    def project_series(self, s: TruncatedSeries, target: str,
                       var: str | None = None, twist=None,
                       slot: str = LAMBDA) -> TruncatedSeries:
        if target not in _TARGETS:
            raise ValueError(f"unknown projection target {target!r}")
        if len(s.vars) == 1:
            var = s.vars[0]
        elif var is None:
            raise ValueError("two-variable projection needs var=")
        return self._project(s, target, s.vars.index(var), twist, slot)

    # -- numeric side --------------------------------------------------------

    def green_eval(self, z: complex, w: complex) -> complex:
        raise NotImplementedError

    def green_twisted_eval(self, z: complex, w: complex,
                           twist: TwistParameter) -> complex:
        # genus 0 carries no twist; subclasses with handles override
        return self.green_eval(z, w)

    def shift_point(self, z: complex, steps: float, hbar: complex) -> complex:
        """Image of z under q^{steps * derivation}."""
        if self.deriv == "additive":
            return z + steps * hbar
        return z * cmath.exp(steps * hbar)

    def omega_factor(self, w: complex) -> complex:
        """Density g with omega = g(w) dw in the chart coordinate."""
        return 1.0 if self.deriv == "additive" else 1.0 / w

    def g_shift_eval(self, sign: int, z: complex, twist, hbar: complex
                     ) -> complex:
        """(G_{-2lambda} - G)(q^{sign*d} z, z); identically 0 at genus 0."""
        return 0j

    # -- bookkeeping ---------------------------------------------------------

    def config(self) -> dict:
        rec = {"kind": self.kind, "basis_count": self.basis_count}
        return rec

    def conventions(self) -> dict:
        rec = {
            "kind": self.kind,
            "derivation": self.deriv,
            "delta_sign": self.delta_conv.sign,
            "delta_offset": self.delta_conv.offset,
            "pairing": self._pairing_note(),
            "marked_point": "0" if self.kind != ADDITIVE else "infinity",
        }
        blob = json.dumps(rec, sort_keys=True).encode()
        rec["hash"] = hashlib.sha256(blob).hexdigest()[:16]
        return rec

    # -- subclass hooks ------------------------------------------------------

    def _green_canonical(self, K, window):
        raise NotImplementedError

    def _project(self, s, target, vi, twist, slot):
        raise NotImplementedError

    def _pairing_note(self):
        raise NotImplementedError


def _select_exponents(s: TruncatedSeries, vi: int, keep,
                      lo: int | None = None, hi: int | None = None
                      ) -> TruncatedSeries:
    data = {key: c for key, c in s.data.items() if keep(key[1][vi])}
    # the projection also narrows where the true function can live, so the
    # support grading of the projected coordinate is clipped to the kept
    # half-line
    name = "e" if len(s.vars) == 1 else \
        ("s" if vi == s.small_index else "b")
    g = s.grades[name]
    new = Grading(g.zb if lo is None else max(g.zb, lo),
                  g.za if hi is None else min(g.za, hi),
                  g.lo, g.hi, g.slope).normalized()
    grades = dict(s.grades)
    grades[name] = new
    return s.with_data(data, grades=grades)


class AdditiveGeometry(Geometry):
    """X = CP^1 with omega = dz; R = polynomials, Lambda = z^{-1}C[[z^{-1}]].

    The residue pairing at infinity is oriented so that the dual of z^i is
    -z^{-1-i}; with that orientation delta = G + G^(21) holds with unit
    coefficient for the delta realization (sign -1, offset -1).
    """

    kind = ADDITIVE
    genus = 0
    deriv = "additive"
    delta_conv = DeltaConvention(sign=-1, offset=-1)

    def _green_canonical(self, K, window):
        # G = sum_{i>=0} z^i * (-w^{-1-i}), convergent for z << w
        data = {(0, (a, -1 - a)): -1.0 + 0j for a in range(0, window)}
        grades = {"d": Grading(-1, -1, -INF, INF),
                  "s": Grading(0, INF, -INF, window - 1),
                  "b": Grading(-INF, -1, -window, INF)}
        return TruncatedSeries(("z", "w"), "z<<w", K, window, data, 0,
                               self.deriv, grades)

    def _project(self, s, target, vi, twist, slot):
        if target in (R, R_A, R_TWISTED):
            return _select_exponents(s, vi, lambda e: e >= 0, lo=0)
        return _select_exponents(s, vi, lambda e: e < 0, hi=-1)

    def green_eval(self, z, w):
        return 1.0 / (z - w)

    def dual_bases(self, count: int | None = None):
        n = count or self.basis_count
        up = [(i, {i: 1.0}) for i in range(n)]          # e^i = z^i
        down = [(i, {-1 - i: -1.0}) for i in range(n)]  # e_i = -z^{-1-i}
        return up, down

    def pairing(self, f: dict, g: dict) -> complex:
        # <f,g> = -sum_a f_a g_{-1-a} (orientation at infinity)
        return -sum(c * g.get(-1 - a, 0) for a, c in f.items())

    def _pairing_note(self):
        return "minus residue at infinity of f*g dz"


class MultiplicativeGeometry(Geometry):
    """X = CP^1 with scaling derivation z d/dz (omega = dz/z), marked points
    0 and infinity; stored series live on the chart at 0.

    The isotropic complement of R = C[z, z^{-1}] splits the zero mode:
    e_0 has value -1/2 at infinity and +1/2 at 0, which is what the stored
    1/2 constant term of the Green series records.  Projections on series
    data are resolved by the declared slot type because the chart at 0 does
    not see the basis elements supported at infinity.
    """

    kind = MULTIPLICATIVE
    genus = 0
    deriv = "scaling"
    delta_conv = DeltaConvention(sign=1, offset=0)

    def _green_canonical(self, K, window):
        # chart-at-0 block of G: 1/2 + sum_{k>=1} z^{-k} w^k, for w << z;
        # globally (z+w)/(2(z-w))
        data = {(0, (0, 0)): 0.5 + 0j}
        for k in range(1, window + 1):
            data[(0, (-k, k))] = 1.0 + 0j
        grades = {"d": Grading(0, 0, -INF, INF),
                  "s": Grading(0, INF, -INF, window),
                  "b": Grading(-INF, 0, -window, INF)}
        return TruncatedSeries(("z", "w"), "w<<z", K, window, data, 0,
                               self.deriv, grades)

    def _project(self, s, target, vi, twist, slot):
        if slot not in (LAMBDA, R):
            raise ValueError("multiplicative projection needs slot R or "
                             "Lambda")
        lam_like = target in (LAMBDA, M, LAMBDA_PRIME)
        if (slot == LAMBDA) == lam_like:
            return s
        # the complementary component has no chart-at-0 realization; the
        # projection is exactly zero here
        zero = Grading(0, 0, -INF, INF)
        return s.with_data({}, grades={"d": zero, "s": zero, "b": zero})

    def green_eval(self, z, w):
        return (z + w) / (2 * (z - w))

    def dual_bases(self, count: int | None = None):
        """Two-chart elements: each is {point: {exp: coeff}} with point in
        {"0", "inf"}; the infinity chart keeps the coordinate z."""
        n = count or self.basis_count
        half = (n - 1) // 2
        up, down = [], []
        for m in range(-half, half + 1):
            up.append({"0": {m: 1.0}, "inf": {m: 1.0}})
            if m == 0:
                down.append({"0": {0: 0.5}, "inf": {0: -0.5}})
            elif m >= 1:
                down.append({"0": {}, "inf": {-m: -1.0}})
            else:
                down.append({"0": {-m: 1.0}, "inf": {}})
        return up, down

    def pairing(self, f: dict, g: dict) -> complex:
        """Residue pairing res_0 + res_inf of f*g dz/z on two-chart data."""
        at0 = sum(c * g["0"].get(-a, 0) for a, c in f["0"].items())
        atinf = sum(c * g["inf"].get(-a, 0) for a, c in f["inf"].items())
        return at0 - atinf

    def _pairing_note(self):
        return "residue at 0 minus residue at infinity of f*g dz/z"


class _EllipticTables:
    """Laurent data of theta'/theta and friends at the marked point.

    Coefficients are produced once per (modulus, depth) by contour FFT and
    then differentiated exactly; the contour radius stays off the lattice.

    A scale < 1 stores the tables in the stretched coordinate z = scale * z':
    a weight-h function with Laurent coefficients a_n turns into
    scale^(n+h) * a_n.  The lattice distance grows by 1/scale, so the
    coefficients decay geometrically and window truncation of products
    stays numerically harmless.  scale = 1 is the plain physical chart.
    """

    def __init__(self, mod: EllipticModulus, depth: int, scale: float = 1.0):
        self.mod = mod
        self.depth = depth
        self.scale = scale
        d = _lattice_distance(mod.tau)
        self.radius = 0.8 * d
        raw = laurent_coeffs(lambda u: theta_logderiv(u, mod), 0, self.radius,
                             -1, depth, samples=4096)
        # theta'/theta is odd: enforce the vanishing even tail exactly
        for i, n in enumerate(range(-1, depth + 1)):
            if n % 2 == 0:
                raw[i] = 0
        # weight 1: t~(z') = scale * t(scale * z')
        self._t = {n: raw[i] * scale ** (n + 1)
                   for i, n in enumerate(range(-1, depth + 1))}
        self._t[-1] = 1.0 + 0j  # exact simple pole with unit residue
        self._twist_cache: dict[complex, dict] = {}

    def t_coeff(self, n: int) -> complex:
        if n > self.depth:
            raise ValueError(f"elliptic table depth {self.depth} exhausted; "
                             f"need exponent {n}")
        return self._t.get(n, 0j)

    def t_derivative(self, order: int, lo: int, hi: int) -> dict:
        """Laurent coefficients of (d/dz)^order theta'/theta on [lo, hi]."""
        out = {}
        for n in range(lo, hi + 1):
            src = n + order
            c = self.t_coeff(src)
            if not c:
                continue
            fall = 1.0
            for j in range(order):
                fall *= (src - j)
            if fall:
                out[n] = c * fall
        return out

    def wp_derivative(self, order: int, lo: int, hi: int) -> dict:
        """(d/dz)^order of the double-pole function -(ln theta)''."""
        return {n: -c for n, c in
                self.t_derivative(order + 1, lo, hi).items()}

    def twist_basis(self, lam: complex, order: int, lo: int, hi: int) -> dict:
        """(d/dz)^order of theta(z-2lam)/(theta(z) theta(-2lam))."""
        key = complex(lam)
        base = self._twist_cache.get(key)
        if base is None:
            mod = self.mod
            den = theta(-2 * lam, mod)

            def f(u):
                return theta(u - 2 * lam, mod) / (theta(u, mod) * den)

            arr = laurent_coeffs(f, 0, self.radius, -1, self.depth,
                                 samples=4096)
            # weight 1, like t; lam itself stays in the physical chart
            base = {n: arr[i] * self.scale ** (n + 1)
                    for i, n in enumerate(range(-1, self.depth + 1))}
            self._twist_cache[key] = base
        out = {}
        for n in range(lo, hi + 1):
            src = n + order
            if src > self.depth:
                raise ValueError("elliptic table depth exhausted")
            c = base.get(src, 0j)
            if not c:
                continue
            fall = 1.0
            for j in range(order):
                fall *= (src - j)
            if fall:
                out[n] = c * fall
        return out

    def pair(self, f: dict, g: dict) -> complex:
        """res_0 of f*g dz on coefficient dicts."""
        return sum(c * g.get(-1 - a, 0) for a, c in f.items())


def _lattice_distance(tau: complex) -> float:
    pts = [m + n * tau for m in (-1, 0, 1) for n in (-1, 0, 1)
           if (m, n) != (0, 0)]
    return min(abs(p) for p in pts)


class EllipticGeometry(Geometry):
    """Torus C/(Z + tau Z) with omega = dz and marked point 0.

    Bases: Lambda = C[[z]] is spanned by the monomials z^k, k >= 0, and R
    by the derivatives of t = theta'/theta; (-1)^i t^(i)/i! is exactly dual
    to z^i under the residue pairing, because t^(i) has principal part
    (-1)^i i! z^(-1-i) and nothing else below z^0.  With this splitting the
    Green kernel is the pure difference profile t(z-w), expanded for
    w << z, and the symmetric correction kernel vanishes identically.
    """

    kind = ELLIPTIC
    genus = 1
    deriv = "additive"
    delta_conv = DeltaConvention(sign=1, offset=-1)

    def __init__(self, modulus: EllipticModulus, basis_count: int,
                 scale: float = 1.0):
        super().__init__(basis_count)
        self.modulus = modulus
        self.scale = scale
        self._tables: dict[int, _EllipticTables] = {}

    def tables(self, depth: int | None = None) -> _EllipticTables:
        need = depth or (2 * self.basis_count + 4)
        have = max(self._tables, default=-1)
        if have >= need:
            return self._tables[have]
        tab = _EllipticTables(self.modulus, need, self.scale)
        self._tables[need] = tab
        return tab

    # -- series --------------------------------------------------------------

    def _green_canonical(self, K, window):
        tab = self.tables(max(2 * window + 2, 2 * self.basis_count + 4))
        data: dict = {}

        def put(e1, e2, c):
            if c and abs(e1) <= window and abs(e2) <= window:
                key = (0, (e1, e2))
                data[key] = data.get(key, 0j) + c

        # [1/(z-w)] for w << z
        for k in range(0, window):
            put(-1 - k, k, 1.0 + 0j)
        # regular homogeneous part of t(z-w): sum_n c_n (z-w)^n
        for n in range(1, 2 * window + 1, 2):
            cn = tab.t_coeff(n)
            if not cn:
                continue
            binom = 1.0
            for b in range(0, n + 1):
                put(n - b, b, cn * binom * (-1) ** b)
                binom = binom * (n - b) / (b + 1)
        grades = {"d": Grading(-1, INF, -INF, INF),
                  "s": Grading(-1, INF, -INF, window),
                  "b": Grading(-INF, INF, -window, window)}
        return TruncatedSeries(("z", "w"), "w<<z", K, window, data, 0,
                               self.deriv, grades)

    def tau_series(self, K=DEFAULT_K, window=DEFAULT_WINDOW,
                   region: str = "z<<w") -> TruncatedSeries:
        """tau = -(1/2) sum_{ij} <T e_i, e_j> e^i (x) e^j over the dual basis.

        The downstairs basis is C[[z]] and T = sinh(hbar d)/(hbar d) keeps
        regular series regular, so every pairing <T e_i, e_j> is a residue
        of a regular series: the correction kernel is identically zero."""
        grades = {"d": EXACT_D,
                  "s": Grading(-INF, INF, -window, window),
                  "b": Grading(-INF, INF, -window, window)}
        return TruncatedSeries(("z", "w"), region, K, window, {}, 0,
                               self.deriv, grades)

    def _project(self, s, target, vi, twist, slot):
        window = s.window
        coord = "e" if len(s.vars) == 1 else \
            ("s" if vi == s.small_index else "b")
        for name in set(s.grades) & {coord, "d", "e"}:
            g = s.grades[name]
            if g.lo != -INF and g.lo > max(g.zb, -window):
                raise ValueError("projection needs series exact from the "
                                 "bottom of its support")
        tab = self.tables(max(2 * window + 2, 2 * self.basis_count + 4))
        lam = _require_twist(self, twist) if target in (R_TWISTED,
                                                        LAMBDA_PRIME) else None
        # regroup into columns along the projected variable
        cols: dict = {}
        for (h, exps), c in s.data.items():
            if abs(exps[vi]) > window:
                continue    # outside the representable window, untrusted
            rest = tuple(e for i, e in enumerate(exps) if i != vi)
            cols.setdefault((h, rest), {})[exps[vi]] = c
        out: dict = {}
        for (h, rest), col in cols.items():
            proj = self._project_column(col, target, lam, tab, window)
            for e, c in proj.items():
                if not c or abs(e) > window:
                    continue
                exps = list(rest)
                exps.insert(vi, e)
                out[(h, tuple(exps))] = c
        grades = dict(s.grades)
        g = grades[coord]
        grades[coord] = Grading(g.zb, INF, -INF,
                                min(g.hi, window), g.slope).normalized()
        return s.with_data(out, grades=grades)

    def _project_column(self, col: dict, target: str, lam, tab, window):
        lo = min(col)
        if lo < -window:
            raise ValueError(f"window {window} too small: column reaches "
                             f"exponent {lo}")
        work = dict(col)
        keep_r: dict = {}

        def eliminate(basis: dict, lead: complex, e: int, into: dict | None):
            c = work.get(e, 0j)
            if not c:
                return
            f = c / lead
            for n, b in basis.items():
                if n <= window:
                    work[n] = work.get(n, 0j) - f * b
            if into is not None:
                for n, b in basis.items():
                    if abs(n) <= window:
                        into[n] = into.get(n, 0j) + f * b

        if target in (R_TWISTED, LAMBDA_PRIME):
            for e in range(lo, 0):
                i = -e - 1
                basis = tab.twist_basis(lam, i, e, window)
                lead = (-1) ** i * math.factorial(i)
                eliminate(basis, lead, e, keep_r)
            if target == R_TWISTED:
                return keep_r
            return {e: col.get(e, 0j) - keep_r.get(e, 0j)
                    for e in set(col) | set(keep_r)}
        # untwisted: eliminate negative exponents against t-derivatives;
        # the regular remainder is the Lambda = C[[z]] part
        for e in range(lo, 0):
            i = -e - 1
            basis = tab.t_derivative(i, e, window)
            lead = (-1) ** i * math.factorial(i)
            eliminate(basis, lead, e, keep_r)
        tail = {e: c for e, c in work.items() if e >= 0 and c}
        if target == R:
            return keep_r
        if target == LAMBDA:
            return tail
        if target == M:
            return {e: c for e, c in tail.items() if e >= 1}
        # R_A adjoins the constants (omega_a/omega = 1) to R
        out = dict(keep_r)
        c = tail.get(0, 0j)
        if c:
            out[0] = out.get(0, 0j) + c
        return out

    # -- numeric -------------------------------------------------------------

    def green_eval(self, z, w):
        return theta_logderiv(z - w, self.modulus)

    def green_twisted_eval(self, z, w, twist):
        lam = _require_twist(self, twist)
        mod = self.modulus
        return theta(-2 * lam + z - w, mod) / (theta(z - w, mod)
                                               * theta(-2 * lam, mod))

    def g_shift_eval(self, sign, z, twist, hbar):
        """(G_{-2lambda} - G)(z + sign*hbar, z): regular combination of the
        twisted and plain kernels on the shifted diagonal.  Both kernels
        depend on z - w only, so the result is a constant in z."""
        lam = _require_twist(self, twist)
        mod = self.modulus
        s = sign
        return (theta(2 * lam + s * hbar, mod)
                / (theta(s * hbar, mod) * theta(2 * lam, mod))
                - theta_logderiv(s * hbar, mod))

    # -- dual bases ----------------------------------------------------------

    def dual_bases(self, count: int | None = None):
        n = count or min(self.basis_count, 12)
        return self._dual_bases_cached(n)

    @lru_cache(maxsize=4)
    def _dual_bases_cached(self, n: int):
        hi = 2 * self.basis_count
        tab = self.tables(hi + n + 2)
        down = [{k: 1.0 + 0j} for k in range(n)]
        # (-1)^i t^(i) / i! pairs to delta_ij against z^j: the principal
        # part of t^(i) is the single term (-1)^i i! z^(-1-i)
        up = []
        for i in range(n):
            fac = (-1) ** i / math.factorial(i)
            vec = {e: fac * c
                   for e, c in tab.t_derivative(i, -1 - i, hi).items()}
            up.append((i, vec))
        return up, [(i, d) for i, d in enumerate(down)]

    def pairing(self, f: dict, g: dict) -> complex:
        return self.tables().pair(f, g)

    def config(self):
        rec = super().config()
        rec["tau"] = [self.modulus.tau.real, self.modulus.tau.imag]
        rec["J"] = self.modulus.product_terms
        rec["scale"] = self.scale
        return rec

    def _pairing_note(self):
        return "residue at 0 of f*g dz"


EXACT_D = Grading(-INF, INF, -INF, INF)


# -- module-level operations -------------------------------------------------

def make_geometry(config: dict) -> Geometry:
    """Build a geometry from a config record {kind, tau?, J?, basis_count}."""
    kind = config["kind"]
    basis_count = int(config.get("basis_count", 2 * DEFAULT_WINDOW))
    if kind == ADDITIVE:
        return AdditiveGeometry(basis_count)
    if kind == MULTIPLICATIVE:
        return MultiplicativeGeometry(basis_count)
    if kind == ELLIPTIC:
        tau = config.get("tau")
        if tau is None:
            raise ValueError("elliptic geometry needs tau")
        if isinstance(tau, str):
            tau = parse_complex(tau)
        elif isinstance(tau, (list, tuple)):
            tau = complex(tau[0], tau[1])
        j = int(config.get("J", 40))
        scale = float(config.get("scale", 1.0))
        return EllipticGeometry(EllipticModulus(complex(tau), j), basis_count,
                                scale)
    raise ValueError(f"unknown geometry kind {kind!r}")


def green(geometry: Geometry, twist: TwistParameter | None = None,
          twisted: bool = False):
    """Closed-form Green kernel as a callable of (z, w)."""
    if twisted and geometry.genus > 0:
        _require_twist(geometry, twist)
        return lambda z, w: geometry.green_twisted_eval(z, w, twist)
    return geometry.green_eval


def project(f, target: str, geometry: Geometry,
            twist: TwistParameter | None = None, var: str | None = None,
            contour_radius: float | None = None, slot: str = LAMBDA):
    """Subspace projection, series or numeric.

    Series inputs go through Laurent-coefficient elimination against basis
    expansions.  A callable f is projected by contour pairing against the
    (twisted) Green kernel; the result is again a callable.
    """
    if isinstance(f, TruncatedSeries):
        return geometry.project_series(f, target, var=var, twist=twist,
                                       slot=slot)
    if not callable(f):
        raise TypeError("project expects a TruncatedSeries or a callable")
    return _project_numeric(f, target, geometry, twist, contour_radius)


def _project_numeric(f, target, geometry, twist, contour_radius):
    kind = geometry.kind
    if kind == MULTIPLICATIVE:
        raise NotImplementedError(
            "numeric projection on the two-point model is chart-ambiguous; "
            "use series mode")
    if kind == ADDITIVE:
        radius = contour_radius or 8.0

        def r_part(z):
            if abs(z) >= radius:
                raise ValueError("evaluation point outside the contour")
            spec = ContourSpec(0, radius, 128)
            return -residue_at(
                lambda w: geometry.green_eval(z, w) * f(w), spec)

        if target in (R, R_A, R_TWISTED):
            return r_part
        return lambda z: f(z) - r_part(z)
    # elliptic: pair on a small contour around the marked point
    radius = contour_radius or 0.25 * _lattice_distance(geometry.modulus.tau)
    if target in (R_TWISTED, LAMBDA_PRIME):
        kernel = green(geometry, twist, twisted=True)
    else:
        kernel = geometry.green_eval

    def base(z):
        if abs(z) <= radius:
            raise ValueError("evaluation point inside the pairing contour")
        spec = ContourSpec(0, radius, 128)
        return residue_at(lambda w: kernel(z, w) * f(w), spec)

    if target in (R, R_TWISTED):
        return base
    if target in (LAMBDA, LAMBDA_PRIME):
        return lambda z: f(z) - base(z)
    # R_(a) adjoins the constants to R; m = z C[[z]] is its complement.
    # The constant component is the z^0 coefficient of the Lambda part:
    # the z^0 term of f minus the constant tails of the matched
    # t-derivatives, read off one contour transform.
    mm = 256
    pts = radius * np.exp(2j * np.pi * np.arange(mm) / mm)
    coeff = np.fft.fft(np.array([f(p) for p in pts])) / mm
    tab = geometry.tables()
    sc = geometry.scale
    a0 = coeff[0]
    for k in range(1, mm // 2, 2):
        if k > tab.depth:
            break
        ck = coeff[(-1 - k) % mm] * radius ** (1 + k)
        if abs(ck) < 1e-13:
            continue
        # tables live in the stretched chart; t_k there is scale^(k+1) t_k
        a0 += ck * tab.t_coeff(k) / sc ** (k + 1)

    def ra(z):
        return base(z) + a0

    if target == R_A:
        return ra
    return lambda z: f(z) - ra(z)
