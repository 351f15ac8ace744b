"""Truncated formal series: the hbar-adic ground truth.

Two layers live here:

* ``TruncatedSeries`` — Laurent series in one or two local coordinates with
  polynomial (or Laurent-polynomial) dependence on hbar, tagged with an
  expansion region ("z<<w" / "w<<z") and with conservative exactness
  bookkeeping.  Every operation computes the largest graded window on which
  its output is provably exact; identity checks only ever compare inside
  intersected windows.

* ``HJet`` — plain hbar-Laurent jets with complex coefficients, used when
  coefficients are evaluated at concrete points.

Exactness model: for a two-variable series with exponents (e1, e2) we track
three graded coordinates, d = e1+e2 (total degree), and the exponent of each
variable separately.  For each coordinate we keep a ``Grading``: true support
bounds [zb, za] and an exact interval [lo, hi]; stored coefficients are
trusted iff every coordinate lies in its exact interval.  These intervals
transform additively under products, which is what makes the bookkeeping
closed under all the operations the kernel calculus needs.

The solver for the two first-order hbar-ODEs defining the universal
differential polynomials psi and phi (in indeterminates gamma_0, gamma_1, ...)
is also here; it works over exact rationals via sympy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
import sympy

INF = float("inf")


def _iadd(a, b):
    """Addition with infinities; (+inf) + (-inf) never occurs in our rules
    except where the answer should be 'no constraint'; caller picks."""
    if a in (INF, -INF):
        return a
    if b in (INF, -INF):
        return b
    return a + b


@dataclass(frozen=True)
class Grading:
    """Support bounds and exact interval for one graded coordinate.

    ``slope`` is the staircase rate of truncation damage in the hbar
    direction: at p hbar-orders above the series valuation the support may
    have spread down by slope*p and the exact interval shrunk from above by
    slope*p.  Symbol applications (g(hbar d)) set slope to at least 1
    because every derivative they take costs one power of hbar; repeated
    applications do not compound the rate, they share the hbar budget."""

    zb: float = -INF   # series is exactly zero below this
    za: float = INF    # ... and above this
    lo: float = -INF   # exact interval lower end
    hi: float = INF    # exact interval upper end
    slope: int = 0     # per-hbar-order damage rate

    def normalized(self) -> "Grading":
        lo, hi = self.lo, self.hi
        if lo <= self.zb:
            lo = -INF
        if hi >= self.za:
            hi = INF
        if hi < lo:  # nothing exact
            lo, hi = INF, -INF
        return Grading(self.zb, self.za, lo, hi, self.slope)

    def at_order(self, p: float) -> "Grading":
        """Effective slope-0 grading p hbar-orders above the valuation."""
        if not self.slope or not p:
            return self
        d = self.slope * max(p, 0)
        zb = self.zb if self.zb == -INF else self.zb - d
        hi = self.hi if self.hi == INF else self.hi - d
        return Grading(zb, self.za, self.lo, hi, 0).normalized()

    def plus(self, other: "Grading") -> "Grading":
        """Product rule: supports add; unknown bands smear by the other
        factor's support."""
        zb = _iadd(self.zb, other.zb)
        za = _iadd(self.za, other.za)
        if self.hi == INF:
            hi1 = INF
        else:
            hi1 = _iadd(self.hi, other.zb)
        if other.hi == INF:
            hi2 = INF
        else:
            hi2 = _iadd(other.hi, self.zb)
        if self.lo == -INF:
            lo1 = -INF
        else:
            lo1 = _iadd(self.lo, other.za)
        if other.lo == -INF:
            lo2 = -INF
        else:
            lo2 = _iadd(other.lo, self.za)
        return Grading(zb, za, max(lo1, lo2), min(hi1, hi2),
                       max(self.slope, other.slope)).normalized()

    def union(self, other: "Grading") -> "Grading":
        """Addition rule: exact where both are exact (or surely zero)."""
        return Grading(min(self.zb, other.zb), max(self.za, other.za),
                       max(self.lo, other.lo),
                       min(self.hi, other.hi),
                       max(self.slope, other.slope)).normalized()

    def lowered(self, k: int) -> "Grading":
        """Mixed downshifts by 0..k (plain derivatives, no hbar cost)."""
        return Grading(self.zb - k, self.za, self.lo,
                       self.hi if self.hi == INF else self.hi - k,
                       self.slope).normalized()

    def sloped(self, s: int = 1) -> "Grading":
        return Grading(self.zb, self.za, self.lo, self.hi,
                       max(self.slope, s))

    def clipped(self, w: float) -> "Grading":
        return Grading(self.zb, self.za, max(self.lo, -w),
                       min(self.hi, w), self.slope).normalized()

    def intersect_exact(self, other: "Grading") -> tuple[float, float]:
        return max(self.lo, other.lo), min(self.hi, other.hi)

    def contains(self, g: float, p: float = 0) -> bool:
        eff = self.at_order(p) if (p and self.slope) else self
        return (eff.lo <= g <= eff.hi) or g < eff.zb or g > eff.za


EXACT_EVERYWHERE = Grading()


def _coord_values(exps: tuple, small_index: int | None):
    if len(exps) == 1:
        return {"e": exps[0]}
    d = exps[0] + exps[1]
    if small_index == 0:
        return {"d": d, "s": exps[0], "b": exps[1]}
    return {"d": d, "s": exps[1], "b": exps[0]}


@dataclass(frozen=True)
class TruncatedSeries:
    """Region-tagged truncated Laurent series with hbar-graded coefficients.

    data maps (hbar_power, exponent_tuple) -> complex.  ``hlo`` is the hbar
    valuation bound (coefficients below it vanish identically), ``K`` the
    last trusted hbar order.  ``deriv`` records how the derivation acts on
    monomials: "additive" (d/dz) or "scaling" (z d/dz).
    """

    vars: tuple[str, ...]
    region: str | None          # "z<<w", "w<<z" or None for one variable
    K: int
    window: int
    data: dict = field(default_factory=dict)
    hlo: int = 0
    deriv: str = "additive"
    grades: dict = field(default_factory=dict)

    # -- construction helpers ------------------------------------------------

    def __post_init__(self):
        if self.region not in (None, "z<<w", "w<<z"):
            raise ValueError(f"bad region tag {self.region!r}")
        if len(self.vars) == 2 and self.region is None:
            raise ValueError("two-variable series need a region tag")
        if not self.grades:
            names = ("e",) if len(self.vars) == 1 else ("d", "s", "b")
            object.__setattr__(self, "grades",
                               {n: EXACT_EVERYWHERE for n in names})

    @property
    def small_index(self) -> int | None:
        if self.region is None:
            return None
        return 0 if self.region == "z<<w" else 1

    @staticmethod
    def constant(value: complex, vars=("z",), region=None, K=4, window=12,
                 deriv="additive") -> "TruncatedSeries":
        zero = (0,) * len(vars)
        data = {(0, zero): complex(value)} if value else {}
        names = ("e",) if len(vars) == 1 else ("d", "s", "b")
        gr = {n: Grading(0, 0, -INF, INF) for n in names}
        return TruncatedSeries(tuple(vars), region, K, window, data,
                               0, deriv, gr)

    @staticmethod
    def from_hjet(jet, vars=("z",), region=None, window=12, deriv="additive"
                  ) -> "TruncatedSeries":
        """Constant-in-z series whose hbar dependence is the given jet."""
        zero = (0,) * len(vars)
        data = {(k, zero): v for k, v in jet.coeffs.items() if v}
        names = ("e",) if len(vars) == 1 else ("d", "s", "b")
        gr = {n: Grading(0, 0, -INF, INF) for n in names}
        return TruncatedSeries(tuple(vars), region, jet.hi, window, data,
                               min(0, jet.valuation()), deriv, gr)

    @staticmethod
    def monomial(coeff: complex, exps: tuple, hpow: int = 0, vars=("z",),
                 region=None, K=4, window=12, deriv="additive"
                 ) -> "TruncatedSeries":
        cv = _coord_values(exps, 0 if region == "z<<w" else
                           (1 if region == "w<<z" else None))
        gr = {n: Grading(v, v, -INF, INF) for n, v in cv.items()}
        data = {(hpow, tuple(exps)): complex(coeff)} if coeff else {}
        return TruncatedSeries(tuple(vars), region, K, window, data,
                               min(hpow, 0), deriv, gr)

    def with_data(self, data, grades=None, hlo=None, K=None):
        return replace(self, data=data,
                       grades=self.grades if grades is None else grades,
                       hlo=self.hlo if hlo is None else hlo,
                       K=self.K if K is None else K)

    # -- inspection ----------------------------------------------------------

    def coeff(self, hpow: int, exps) -> complex:
        return self.data.get((hpow, tuple(exps)), 0j)

    def is_exact_at(self, exps, h: int | None = None) -> bool:
        """Exactness of one coefficient position; ``h`` is its hbar order
        (defaults to the worst case, the last trusted order)."""
        p = (self.K if h is None else h) - self.hlo
        cv = _coord_values(tuple(exps), self.small_index)
        return all(self.grades[n].contains(v, p) for n, v in cv.items())

    def hbar_valuation(self) -> int:
        vals = [h for (h, _), c in self.data.items() if c]
        return min(vals) if vals else self.K + 1

    def max_abs(self) -> float:
        return max((abs(c) for c in self.data.values()), default=0.0)

    def exact_items(self):
        for (h, exps), c in self.data.items():
            if self.is_exact_at(exps, h):
                yield (h, exps), c

    # -- linear structure ----------------------------------------------------

    def _check_compatible(self, other: "TruncatedSeries"):
        if self.vars != other.vars or self.region != other.region:
            raise ValueError("region/variable mismatch in series addition")
        if self.deriv != other.deriv:
            raise ValueError("derivation mismatch")

    def __add__(self, other):
        if isinstance(other, (int, float, complex)):
            other = TruncatedSeries.constant(other, self.vars, self.region,
                                             self.K, self.window, self.deriv)
        self._check_compatible(other)
        data = dict(self.data)
        for key, c in other.data.items():
            data[key] = data.get(key, 0j) + c
        grades = {n: self.grades[n].union(other.grades[n])
                  for n in self.grades}
        return TruncatedSeries(self.vars, self.region,
                               min(self.K, other.K), min(self.window,
                                                         other.window),
                               data, min(self.hlo, other.hlo), self.deriv,
                               grades)

    def __radd__(self, other):
        return self.__add__(other)

    def __neg__(self):
        return self.scaled(-1)

    def __sub__(self, other):
        if isinstance(other, (int, float, complex)):
            other = TruncatedSeries.constant(other, self.vars, self.region,
                                             self.K, self.window, self.deriv)
        return self + (-other)

    def __rsub__(self, other):
        return (-self).__add__(other)

    def scaled(self, c: complex) -> "TruncatedSeries":
        return self.with_data({k: c * v for k, v in self.data.items()})

    def hshift(self, p: int) -> "TruncatedSeries":
        """Multiply by hbar^p."""
        return self.with_data({(h + p, e): c for (h, e), c in
                               self.data.items()},
                              hlo=self.hlo + p, K=self.K + p)

    def hbar_negate(self) -> "TruncatedSeries":
        return self.with_data({(h, e): c * (-1) ** h
                               for (h, e), c in self.data.items()})

    def hbar_derivative(self) -> "TruncatedSeries":
        data = {}
        for (h, e), c in self.data.items():
            if h != 0:
                data[(h - 1, e)] = data.get((h - 1, e), 0j) + h * c
        return self.with_data(data, hlo=self.hlo - 1, K=self.K - 1)

    # -- multiplication ------------------------------------------------------

    def _dense(self, w: int | None = None):
        """dict hbar_power -> dense exponent array with offset window."""
        w = self.window if w is None else w
        n = 2 * w + 1
        shape = (n,) * len(self.vars)
        slices: dict[int, np.ndarray] = {}
        for (h, exps), c in self.data.items():
            if any(abs(e) > w for e in exps):
                continue
            idx = tuple(e + w for e in exps)
            sl = slices.get(h)
            if sl is None:
                sl = slices[h] = np.zeros(shape, dtype=complex)
            sl[idx] += c
        return slices

    def __mul__(self, other):
        if isinstance(other, (int, float, complex)):
            return self.scaled(other)
        self._check_compatible(other)
        w = min(self.window, other.window)
        va, vb = self.hbar_valuation(), other.hbar_valuation()
        K = min(self.K + vb, other.K + va)
        hlo = self.hlo + other.hlo
        a, b = self._dense(w), other._dense(w)
        out: dict[int, np.ndarray] = {}
        n = 2 * w + 1
        fa = {h: np.fft.fftn(_pad(sl, w, n)) for h, sl in a.items()}
        fb = {h: np.fft.fftn(_pad(sl, w, n)) for h, sl in b.items()}
        for h1, s1 in fa.items():
            for h2, s2 in fb.items():
                if h1 + h2 > K:
                    continue
                acc = out.get(h1 + h2)
                prod = s1 * s2
                out[h1 + h2] = prod if acc is None else acc + prod
        data = {}
        for h, spec in out.items():
            conv = np.fft.ifftn(spec)
            # full correlation support is exponents -2w..2w at index 0..4w
            for idx in np.argwhere(np.abs(conv) > 1e-300):
                exps = tuple(int(i) - 2 * w for i in idx)
                if any(i >= 4 * w + 1 for i in idx):
                    continue
                if any(abs(e) > w for e in exps):
                    continue
                val = complex(conv[tuple(idx)])
                if val != 0:
                    data[(h, exps)] = val
        grades = {nme: self.grades[nme].plus(other.grades[nme]).clipped(w)
                  for nme in self.grades}
        # window clip on raw exponents also limits total degree exactness
        if len(self.vars) == 2:
            grades["d"] = grades["d"].clipped(2 * w)
        return TruncatedSeries(self.vars, self.region, K, w, data, hlo,
                               self.deriv, grades)

    def __rmul__(self, other):
        return self.__mul__(other)

    # -- units, exp, log -----------------------------------------------------

    def _split_unit(self):
        """self = c*hbar^h0*(1 + B) with c a plain constant; returns (c,h0,B)."""
        h0 = self.hbar_valuation()
        if h0 > self.K:
            raise ValueError("cannot invert/log the zero series")
        zero = (0,) * len(self.vars)
        c = self.data.get((h0, zero), 0j)
        if not c:
            raise ValueError("leading hbar slice is not a constant unit")
        lead = max((abs(v) for (h, e), v in self.data.items()
                    if h == h0 and e != zero), default=0.0)
        if lead > 1e-9 * abs(c):
            raise ValueError("leading hbar slice is not a constant unit")
        b = self.hshift(-h0).scaled(1 / c) - 1
        return c, h0, b

    def inverse(self) -> "TruncatedSeries":
        c, h0, b = self._split_unit()
        acc = TruncatedSeries.constant(1, self.vars, self.region, self.K - h0,
                                       self.window, self.deriv)
        term = acc
        nb = -b
        for _ in range(max(0, self.K - h0 - max(b.hbar_valuation(), 1) + 1)):
            term = term * nb
            acc = acc + term
        return acc.scaled(1 / c).hshift(-h0)

    def exp(self) -> "TruncatedSeries":
        if self.hbar_valuation() < 1:
            raise ValueError("exp needs an O(hbar) argument")
        acc = TruncatedSeries.constant(1, self.vars, self.region, self.K,
                                       self.window, self.deriv)
        term = acc
        for k in range(1, self.K + 1):
            term = term * self.scaled(1.0 / k)
            acc = acc + term
        return acc

    def log(self) -> "TruncatedSeries":
        c, h0, b = self._split_unit()
        if h0 != 0 or abs(c - 1) > 1e-12:
            raise ValueError("log needs leading coefficient 1")
        acc = b.scaled(0)
        term = TruncatedSeries.constant(1, self.vars, self.region, self.K,
                                        self.window, self.deriv)
        for k in range(1, self.K + 1):
            term = term * b
            acc = acc + term.scaled((-1) ** (k + 1) / k)
        return acc

    # -- derivation / symbols ------------------------------------------------

    def _deriv_once(self, var_index: int) -> "TruncatedSeries":
        data = {}
        for (h, exps), c in self.data.items():
            e = exps[var_index]
            if self.deriv == "additive":
                if e == 0:
                    continue
                ne = list(exps)
                ne[var_index] = e - 1
                key = (h, tuple(ne))
                data[key] = data.get(key, 0j) + e * c
            else:  # scaling derivation z d/dz
                if e == 0:
                    continue
                data[(h, exps)] = data.get((h, exps), 0j) + e * c
        return self.with_data(data)

    def apply_symbol(self, coeffs: np.ndarray, var: str) -> "TruncatedSeries":
        """Apply g(hbar * d) on one variable, g given by Taylor coefficients.

        d is the geometry derivation; each power of d costs one hbar."""
        vi = self.vars.index(var)
        nonzero = [k for k, c in enumerate(coeffs) if c]
        kmax = max(nonzero, default=0)
        if self.deriv == "scaling":
            data = {}
            for (h, exps), c in self.data.items():
                a = exps[vi]
                for k in range(0, min(kmax, self.K - h) + 1):
                    g = coeffs[k]
                    if not g:
                        continue
                    val = g * (a ** k) * c
                    if val:
                        key = (h + k, exps)
                        data[key] = data.get(key, 0j) + val
            return self.with_data(data)
        out = None
        term = self
        for k in range(0, kmax + 1):
            if coeffs[k]:
                contrib = term.hshift(k).scaled(coeffs[k])
                out = contrib if out is None else out + contrib
            if k < kmax:
                term = term._deriv_once(vi)
        if out is None:
            out = self.scaled(0)
        grades = {}
        for n, g in self.grades.items():
            affected = (n == "e" or n == "d"
                        or _coord_for_var(self, vi) == n)
            grades[n] = g.sloped() if (affected and
                                       self.deriv == "additive") else g
        return out.with_data(out.data, grades=grades, hlo=out.hlo, K=out.K)

    def shift(self, var: str, steps: int, symbol_order: int | None = None
              ) -> "TruncatedSeries":
        """q^{c d} on one variable (c = steps)."""
        K = self.K if symbol_order is None else symbol_order
        ks = np.arange(0, max(K - min(self.hlo, 0), 0) + 1)
        coeffs = (steps ** ks) / np.array([math.factorial(int(k)) for k in ks])
        return self.apply_symbol(coeffs.astype(complex), var)

    # -- structural ops ------------------------------------------------------

    def swap(self) -> "TruncatedSeries":
        """Exchange the two variables (f(z,w) -> f(w,z)); region flips."""
        if len(self.vars) != 2:
            raise ValueError("swap needs two variables")
        region = "z<<w" if self.region == "w<<z" else "w<<z"
        data = {(h, (e2, e1)): c for (h, (e1, e2)), c in self.data.items()}
        grades = dict(self.grades)
        grades["s"], grades["b"] = grades["b"], grades["s"]
        return TruncatedSeries(self.vars, region, self.K, self.window, data,
                               self.hlo, self.deriv, grades)

    def diagonal(self) -> "TruncatedSeries":
        """Set w = z; valid for series regular on the diagonal (the caller's
        responsibility — the result is graded by total degree).

        A total-degree bucket is trusted only when the whole anti-diagonal
        it sums is trusted: every position the true function can occupy
        must be stored, inside the window and exact.  Series with unbounded
        anti-diagonals (difference profiles) therefore come out fully
        untrusted, which is right — their diagonal is a divergent sum."""
        if len(self.vars) != 2:
            raise ValueError("diagonal needs two variables")
        w = self.window
        data = {}
        for (h, (e1, e2)), c in self.data.items():
            key = (h, (e1 + e2,))
            data[key] = data.get(key, 0j) + c
        data = {k: v for k, v in data.items() if abs(k[1][0]) <= w}
        g1 = self.grades["s" if self.small_index == 0 else "b"]
        g2 = self.grades["b" if self.small_index == 0 else "s"]
        gd = self.grades["d"]

        def exact_interval(p):
            e1g, e2g, dg = g1.at_order(p), g2.at_order(p), gd.at_order(p)
            good = []
            for d in range(-w, w + 1):
                if not dg.contains(d):
                    continue
                lo = max(e1g.zb, d - e2g.za)
                hi = min(e1g.za, d - e2g.zb)
                if lo > hi:
                    good.append(d)      # surely-zero bucket
                    continue
                if lo < -w or hi > w or lo == -INF or hi == INF:
                    continue            # anti-diagonal escapes the window
                if all(e1g.contains(e) and e2g.contains(d - e)
                       for e in range(int(lo), int(hi) + 1)):
                    good.append(d)
            runs = []
            for d in good:
                if runs and runs[-1][1] == d - 1:
                    runs[-1][1] = d
                else:
                    runs.append([d, d])
            if not runs:
                return INF, -INF
            return max(runs, key=lambda r: r[1] - r[0])

        pK = max(self.K - self.hlo, 0)
        spans = []
        for p in range(pK + 1):
            lo_p, hi_p = exact_interval(p)
            spans.append((max(lo_p, -w - 1), min(hi_p, w + 1)))
        lo = max(sp[0] for sp in spans)
        base_hi = spans[0][1]
        # support bounds survive the diagonal: degrees add, and the input
        # slopes push the bottom further down order by order, which the
        # output slope accounts for
        zb = g1.zb + g2.zb
        za = g1.za + g2.za if g1.za < INF and g2.za < INF else INF
        in_slope = g1.slope + g2.slope
        if lo == INF or any(sp[1] == -INF for sp in spans):
            gr = {"e": Grading(zb, za, INF, -INF, in_slope)}
        else:
            slope = in_slope
            for p, (_, hi_p) in enumerate(spans[1:], start=1):
                if base_hi > hi_p:
                    slope = max(slope, int(math.ceil((base_hi - hi_p) / p)))
            gr = {"e": Grading(zb, za, lo, base_hi, slope).normalized()}
        return TruncatedSeries((self.vars[0],), None, self.K, self.window,
                               data, self.hlo, self.deriv, gr)

    def embed(self, vars=("z", "w"), region="w<<z", var="z"
              ) -> "TruncatedSeries":
        """Lift a one-variable series into a two-variable ring."""
        if len(self.vars) != 1:
            raise ValueError("embed lifts one-variable series")
        vi = vars.index(var)
        data = {}
        for (h, (e,)), c in self.data.items():
            exps = [0, 0]
            exps[vi] = e
            data[(h, tuple(exps))] = c
        small = 0 if region == "z<<w" else 1
        if vi == small:
            gr = {"d": self.grades["e"], "s": self.grades["e"],
                  "b": Grading(0, 0, -INF, INF)}
        else:
            gr = {"d": self.grades["e"], "b": self.grades["e"],
                  "s": Grading(0, 0, -INF, INF)}
        return TruncatedSeries(tuple(vars), region, self.K, self.window,
                               data, self.hlo, self.deriv, gr)

    # -- serialization -------------------------------------------------------

    def to_json(self) -> dict:
        coeffs = sorted(
            [[h, list(e), c.real, c.imag] for (h, e), c in self.data.items()
             if abs(c) > 1e-300 and h <= self.K],
            key=lambda row: (row[0], row[1]))
        return {"vars": list(self.vars),
                "region": self.region,
                "K": self.K,
                "window": [-self.window, self.window],
                "coeffs": coeffs}

    @staticmethod
    def from_json(obj: dict, deriv="additive") -> "TruncatedSeries":
        data = {(h, tuple(e)): complex(re, im)
                for h, e, re, im in obj["coeffs"]}
        return TruncatedSeries(tuple(obj["vars"]), obj["region"], obj["K"],
                               obj["window"][1], data, 0, deriv)


def _pad(arr: np.ndarray, w: int, n: int) -> np.ndarray:
    shape = tuple(2 * n for _ in arr.shape)
    out = np.zeros(shape, dtype=complex)
    out[tuple(slice(0, n) for _ in arr.shape)] = arr
    return out


def _coord_for_var(s: TruncatedSeries, vi: int) -> str:
    if len(s.vars) == 1:
        return "e"
    return "s" if vi == s.small_index else "b"


# -- comparison helpers ------------------------------------------------------

def max_mismatch(a: TruncatedSeries, b: TruncatedSeries,
                 hbar_orders=None) -> float:
    """Largest |coefficient difference| over the jointly exact window."""
    worst = 0.0
    keys = set(a.data) | set(b.data)
    K = min(a.K, b.K)
    for (h, exps) in keys:
        if h > K or (hbar_orders is not None and h not in hbar_orders):
            continue
        if not (a.is_exact_at(exps, h) and b.is_exact_at(exps, h)):
            continue
        worst = max(worst, abs(a.coeff(h, exps) - b.coeff(h, exps)))
    return worst


def assert_nonempty_overlap(a: TruncatedSeries, b: TruncatedSeries,
                            min_terms: int = 1) -> int:
    count = sum(1 for (h, exps) in set(a.data) | set(b.data)
                if h <= min(a.K, b.K) and a.is_exact_at(exps, h)
                and b.is_exact_at(exps, h))
    if count < min_terms:
        raise ValueError("series comparison window is empty")
    return count


# -- delta extraction --------------------------------------------------------

@dataclass(frozen=True)
class DeltaConvention:
    """Realization of the formal delta over dual bases.

    delta(z, w) = sign * sum_k z^k w^{offset - k}; offset = -1 for a pairing
    form dz at the marked point, 0 for dz/z.  ``orient`` doubles as the sign
    of the residue pairing used to contract a w-slot against the constant 1.
    """

    sign: int
    offset: int


def synth_delta(A: TruncatedSeries, conv: DeltaConvention, shift_steps: int,
                region: str, K: int, window: int) -> TruncatedSeries:
    """Build A(z) * delta(q^{c d} z, w) as a two-variable series."""
    vars2 = ("z", "w")
    data = {}
    w = window
    for (h, (ez,)), c in A.data.items():
        for ew in range(-w, w + 1):
            k = conv.offset - ew
            if A.deriv == "scaling":
                # z^k -> e^{c k hbar} z^k under the shift
                for j in range(0, K - h + 1):
                    mult = (shift_steps * k) ** j / math.factorial(j)
                    e1 = ez + k
                    if abs(e1) > w or h + j > K:
                        continue
                    val = conv.sign * c * mult
                    if val:
                        key = (h + j, (e1, ew))
                        data[key] = data.get(key, 0j) + val
            else:
                # z^k -> (z + c hbar)^k = sum_j C(k,j) (c hbar)^j z^{k-j}
                binom = 1.0
                for j in range(0, K - h + 1):
                    e1 = ez + k - j
                    if abs(e1) <= w:
                        val = conv.sign * c * binom * shift_steps ** j
                        if val:
                            key = (h + j, (e1, ew))
                            data[key] = data.get(key, 0j) + val
                    binom = binom * (k - j) / (j + 1)
    grades = {"d": Grading(-INF, INF, -2 * w, 2 * w),
              "s": Grading(-INF, INF, -w, w),
              "b": Grading(-INF, INF, -w, w)}
    return TruncatedSeries(vars2, region, K, window, data, min(0, A.hlo),
                           A.deriv, grades)


def delta_extract(f: TruncatedSeries, g: TruncatedSeries,
                  conv: DeltaConvention, shift_steps: int = 0,
                  tol: float = 1e-8) -> TruncatedSeries:
    """Extract A(z) from f + g = A(z) * delta(q^{c d} z, w).

    f and g must carry opposite region tags: they are the two expansions of
    one meromorphic kernel, and their sum is supported on the shifted
    diagonal.  Off-diagonal residual above tol (relative to the coefficient
    scale) raises."""
    if f.region == g.region or f.region is None:
        raise ValueError("delta_extract needs opposite region tags")
    if f.vars != g.vars or f.deriv != g.deriv:
        raise ValueError("incompatible series")
    K = min(f.K, g.K)
    window = min(f.window, g.window)
    total = {}
    for (h, e), c in list(f.data.items()) + list(g.data.items()):
        if h <= K:
            total[(h, e)] = total.get((h, e), 0j) + c

    def known(exps, h=None):
        return f.is_exact_at(exps, h) and g.is_exact_at(exps, h)

    # A(z)*delta(q^{cd}z, w): the w^{offset} slice carries sign*A(z) exactly
    adata = {}
    a_exact = [INF, -INF]
    for (h, (ez, ew)), c in total.items():
        if ew == conv.offset and abs(c) > 0:
            adata[(h, (ez,))] = conv.sign * c
    for (h, (ez, ew)) in total:
        if ew == conv.offset and known((ez, ew)):
            a_exact[0] = min(a_exact[0], ez)
            a_exact[1] = max(a_exact[1], ez)
    gr = {"e": Grading(-INF, INF, a_exact[0], a_exact[1])}
    A = TruncatedSeries((f.vars[0],), None, K, window, adata,
                        min(f.hlo, g.hlo), f.deriv, gr)
    # verify: residual of f + g - A*delta on the joint exact window
    model = synth_delta(A, conv, shift_steps, f.region, K, window)
    scale = max(A.max_abs(), 1.0)
    worst = 0.0
    for (h, exps) in set(total) | set(model.data):
        if h > K or not known(exps, h):
            continue
        worst = max(worst,
                    abs(total.get((h, exps), 0j) - model.coeff(h, exps)))
    if worst > tol * scale:
        raise ValueError(
            f"not a delta multiple: off-diagonal residual {worst:.3e}")
    return A


# -- hbar jets ---------------------------------------------------------------

@dataclass(frozen=True)
class HJet:
    """Truncated hbar-Laurent jet with complex coefficients.

    ``hi`` is the last trusted order; coefficients are keyed by order and
    vanish identically below the stored minimum."""

    coeffs: dict
    hi: int

    @staticmethod
    def const(c: complex, hi: int) -> "HJet":
        return HJet({0: complex(c)} if c else {}, hi)

    @staticmethod
    def variable(hi: int) -> "HJet":
        return HJet({1: 1.0 + 0j}, hi)

    @staticmethod
    def from_taylor(values: np.ndarray, hi: int | None = None) -> "HJet":
        hi = len(values) - 1 if hi is None else hi
        return HJet({k: complex(v) for k, v in enumerate(values) if v}, hi)

    def valuation(self) -> int:
        keys = [k for k, v in self.coeffs.items() if v]
        return min(keys) if keys else self.hi + 1

    def __add__(self, other):
        if isinstance(other, (int, float, complex)):
            other = HJet.const(other, self.hi)
        out = dict(self.coeffs)
        for k, v in other.coeffs.items():
            out[k] = out.get(k, 0j) + v
        return HJet(out, min(self.hi, other.hi))

    def __radd__(self, other):
        return self.__add__(other)

    def __neg__(self):
        return HJet({k: -v for k, v in self.coeffs.items()}, self.hi)

    def __sub__(self, other):
        if isinstance(other, (int, float, complex)):
            other = HJet.const(other, self.hi)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, float, complex)):
            return HJet({k: v * other for k, v in self.coeffs.items()},
                        self.hi)
        hi = min(self.hi + other.valuation(), other.hi + self.valuation())
        out = {}
        for k1, v1 in self.coeffs.items():
            for k2, v2 in other.coeffs.items():
                if k1 + k2 <= hi:
                    out[k1 + k2] = out.get(k1 + k2, 0j) + v1 * v2
        return HJet(out, hi)

    def __rmul__(self, other):
        return self.__mul__(other)

    def inverse(self) -> "HJet":
        v = self.valuation()
        if v > self.hi:
            raise ZeroDivisionError("zero jet")
        c = self.coeffs[v]
        b = {k - v: val / c for k, val in self.coeffs.items()}
        hi = self.hi - v
        inv = {0: 1.0 + 0j}
        for k in range(1, hi + 1):
            s = sum(b.get(j, 0j) * inv.get(k - j, 0j) for j in range(1, k + 1))
            inv[k] = -s
        return HJet({k - v: val / c for k, val in inv.items()}, hi - v)

    def __truediv__(self, other):
        if isinstance(other, (int, float, complex)):
            return self * (1.0 / other)
        return self * other.inverse()

    def __rtruediv__(self, other):
        return other * self.inverse()

    def shift_orders(self, p: int) -> "HJet":
        return HJet({k + p: v for k, v in self.coeffs.items()}, self.hi + p)

    def negate_hbar(self) -> "HJet":
        return HJet({k: v * (-1) ** k for k, v in self.coeffs.items()},
                    self.hi)

    def exp(self) -> "HJet":
        if self.valuation() < 1:
            c0 = self.coeffs.get(0, 0j)
            rest = HJet({k: v for k, v in self.coeffs.items() if k != 0},
                        self.hi)
            return rest.exp() * np.exp(c0)
        acc = HJet.const(1, self.hi)
        term = acc
        for k in range(1, self.hi + 1):
            term = term * self * (1.0 / k)
            acc = acc + term
        return acc

    def eval(self, hbar: complex) -> complex:
        return sum(v * hbar ** k for k, v in self.coeffs.items())

    def coeff(self, k: int) -> complex:
        return self.coeffs.get(k, 0j)


# -- psi / phi differential polynomials --------------------------------------

@dataclass(frozen=True)
class DiffPolynomial:
    """hbar-power series whose coefficients are polynomials in gamma_0..gamma_M
    (exact rationals via sympy)."""

    orders: tuple          # index k -> sympy expression, coefficient of hbar^k
    gammas: tuple          # the sympy symbols

    def coefficient(self, k: int):
        return self.orders[k] if k < len(self.orders) else sympy.Integer(0)

    def substitute(self, gamma_series: list, K: int, template: TruncatedSeries,
                   hbar_sign: int = 1, gamma_parity: bool = False
                   ) -> TruncatedSeries:
        """Evaluate with gamma_i replaced by series; hbar_sign=-1 gives
        p(-hbar, .); gamma_parity flips gamma_i -> (-1)^i gamma_i."""
        one = TruncatedSeries.constant(1, template.vars, template.region,
                                       K, template.window, template.deriv)
        out = one.scaled(0)
        for k in range(min(K, len(self.orders) - 1) + 1):
            expr = sympy.expand(self.orders[k])
            if expr == 0:
                continue
            poly = sympy.Poly(expr, *self.gammas)
            for monom, coeff in poly.terms():
                c = complex(coeff) * (hbar_sign ** k)
                if gamma_parity:
                    c *= (-1) ** sum(i * p for i, p in enumerate(monom))
                term = one.scaled(c)
                for i, p in enumerate(monom):
                    for _ in range(p):
                        term = term * gamma_series[i]
                out = out + term.hshift(k)
        return out


def solve_psi_phi(M: int, K: int) -> tuple[DiffPolynomial, DiffPolynomial]:
    """Order-by-order solution of the pair of hbar-ODEs

        d_hbar psi = D psi - 1 - gamma_0 psi^2,
        d_hbar phi = D phi - gamma_0 psi,

    with D = sum gamma_{i+1} d/d gamma_i, psi = -hbar + o(hbar),
    phi = hbar^2 gamma_0 / 2 + o(hbar^2)."""
    if M < 1 or K < 1:
        raise ValueError("need M, K >= 1")
    g = sympy.symbols(f"g0:{M + 2}")

    def D(expr):
        return sum(g[i + 1] * sympy.diff(expr, g[i]) for i in range(M + 1))

    p = [sympy.Integer(0), sympy.Integer(-1)]
    f = [sympy.Integer(0), sympy.Integer(0)]
    for k in range(2, K + 1):
        quad = sum(p[i] * p[k - 1 - i] for i in range(1, k - 1))
        p.append(sympy.expand((D(p[k - 1]) - g[0] * quad) / k))
        f.append(sympy.expand((D(f[k - 1]) - g[0] * p[k - 1]) / k))
    return (DiffPolynomial(tuple(p[:K + 1]), g),
            DiffPolynomial(tuple(f[:K + 1]), g))
