"""Jacobi theta function in the odd normalization theta'(0) = 1.

    theta(z) = sin(pi z)/pi * prod_{j>=1} (1-p^j e^{2i pi z})(1-p^j e^{-2i pi z})
                                          / (1-p^j)^2,      p = e^{2 i pi tau}.

Quasi-periodicity: theta(z+1) = -theta(z),
                   theta(z+tau) = -e^{-i pi tau - 2 i pi z} theta(z).

Arguments are reduced modulo the lattice before the product is evaluated
(the product loses accuracy for large |Im z|); the quasi-periodicity
factors are reapplied exactly.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class EllipticModulus:
    tau: complex
    product_terms: int = 40

    def __post_init__(self):
        if self.tau.imag <= 0:
            raise ValueError("Im(tau) must be positive")
        if self.product_terms < 1:
            raise ValueError("need at least one product term")

    @property
    def nome(self) -> complex:
        return cmath.exp(2j * math.pi * self.tau)

    @property
    def truncation_error(self) -> float:
        # |p|^(J+1) bounds the size of the first dropped product factor
        return abs(self.nome) ** (self.product_terms + 1)


def _reduce(z: complex, tau: complex) -> tuple[complex, int, int]:
    """z = z0 + m*tau + k with |Im z0| <= Im(tau)/2, |Re z0| <= 1/2."""
    m = round(z.imag / tau.imag)
    z0 = z - m * tau
    k = round(z0.real)
    return z0 - k, m, k


def _product_part(z0: complex, m: EllipticModulus) -> complex:
    p = m.nome
    e_plus = cmath.exp(2j * math.pi * z0)
    e_minus = cmath.exp(-2j * math.pi * z0)
    out = cmath.sin(math.pi * z0) / math.pi
    pj = 1.0 + 0j
    for _ in range(m.product_terms):
        pj *= p
        out *= (1 - pj * e_plus) * (1 - pj * e_minus) / (1 - pj) ** 2
    return out


def theta(z: complex, m: EllipticModulus) -> complex:
    z0, mm, kk = _reduce(complex(z), m.tau)
    base = _product_part(z0, m)
    phase = cmath.exp(-1j * math.pi * mm * mm * m.tau - 2j * math.pi * mm * z0)
    return (-1) ** ((mm + kk) % 2) * phase * base


# (d/dz)^k [pi*cot(pi*z)] = pi * P_k(cot(pi*z)) with P_{k+1} = -pi(1+x^2) P_k'
_COT_POLYS: list[np.ndarray] = [np.array([0.0, 1.0])]


def _cot_poly(k: int) -> np.ndarray:
    while len(_COT_POLYS) <= k:
        prev = _COT_POLYS[-1]
        dp = np.polynomial.polynomial.polyder(prev)
        nxt = -math.pi * np.polynomial.polynomial.polymul(
            np.array([1.0, 0.0, 1.0]), dp)
        _COT_POLYS.append(nxt)
    return _COT_POLYS[k]


def _logderiv_reduced(z0: complex, m: EllipticModulus, k: int) -> complex:
    """(d/dz)^k of theta'/theta at a reduced argument, term-wise exact."""
    c = cmath.cos(math.pi * z0) / cmath.sin(math.pi * z0)
    out = math.pi * complex(np.polynomial.polynomial.polyval(c, _cot_poly(k)))
    p = m.nome
    pm = 1.0 + 0j
    for mu in range(1, m.product_terms + 1):
        pm *= p
        w = 2j * math.pi * mu
        term = (cmath.exp(w * z0) * w ** k
                - cmath.exp(-w * z0) * (-w) ** k)
        out -= 2j * math.pi * term * pm / (1 - pm)
    return out


def theta_logderiv(z: complex, m: EllipticModulus, derivative_order: int = 0
                   ) -> complex:
    """(d/dz)^k of theta'/theta.  k=0 is the logarithmic derivative itself."""
    z0, mm, _ = _reduce(complex(z), m.tau)
    if abs(z0) < 1e-12:
        raise ValueError("theta'/theta pole at a lattice point")
    val = _logderiv_reduced(z0, m, derivative_order)
    if derivative_order == 0:
        val -= 2j * math.pi * mm  # from the quasi-periodicity exponent
    return val


def weierstrass_p(z: complex, m: EllipticModulus, derivative_order: int = 0
                  ) -> complex:
    """wp = -(d/dz)^2 ln theta and its higher z-derivatives."""
    return -theta_logderiv(z, m, derivative_order + 1)
