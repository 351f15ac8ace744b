"""Shared complex-arithmetic utilities: contour residues, Taylor/Laurent
coefficient extraction on circles, numerical differentiation, seeded sampling.

All quadrature is uniform-angle trapezoid on circles, which converges
geometrically for analytic integrands.  Every routine is a pure function;
randomness always flows through an explicit seed.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ContourSpec:
    """Circle contour for residue/coefficient extraction."""

    center: complex
    radius: float
    samples: int = 64

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if self.samples < 16 or self.samples % 2:
            raise ValueError("samples must be even and >= 16")


@dataclass(frozen=True)
class Tolerance:
    absolute: float = 0.0
    relative: float = 0.0

    def __post_init__(self):
        if self.absolute < 0 or self.relative < 0:
            raise ValueError("tolerances must be nonnegative")
        if self.absolute == 0 and self.relative == 0:
            raise ValueError("at least one tolerance must be positive")

    def ok(self, err: float, scale: float = 1.0) -> bool:
        return err <= self.absolute + self.relative * abs(scale)


def _ring_values(f, spec: ContourSpec, n: int) -> np.ndarray:
    ang = 2.0 * math.pi * np.arange(n) / n
    pts = spec.center + spec.radius * np.exp(1j * ang)
    try:
        vals = np.array([complex(f(complex(p))) for p in pts])
    except ZeroDivisionError as exc:
        raise ValueError("contour hits singularity") from exc
    if not np.all(np.isfinite(vals.view(float))):
        raise ValueError("contour hits singularity")
    return vals


def residue_at(f, spec: ContourSpec, with_error: bool = False):
    """(1/2pi i) * contour integral of f around the circle.

    Returns the residue sum enclosed; with_error=True also returns the
    a-posteriori estimate |result_N - result_2N|.
    """

    def one(n):
        vals = _ring_values(f, spec, n)
        ang = 2.0 * math.pi * np.arange(n) / n
        dz = spec.radius * np.exp(1j * ang)  # z - center; dz/dtheta = i*(z-c)
        return complex(np.mean(vals * dz))

    coarse = one(spec.samples)
    fine = one(2 * spec.samples)
    if with_error:
        return fine, abs(fine - coarse)
    return fine


def laurent_coeffs(f, center: complex, radius: float, lo: int, hi: int,
                   samples: int = 512) -> np.ndarray:
    """Laurent coefficients c_k of f around center, k = lo..hi inclusive.

    c_k = (1/2pi i) * integral f(z) (z-center)^{-k-1} dz, evaluated by FFT
    over the circle.  Aliasing error decays like radius^samples for the
    coefficients in the middle of the window.
    """
    spec = ContourSpec(center, radius, min(samples, 64))
    vals = _ring_values(f, spec, samples)
    fft = np.fft.fft(vals) / samples
    out = np.empty(hi - lo + 1, dtype=complex)
    for i, k in enumerate(range(lo, hi + 1)):
        out[i] = fft[k % samples] * radius ** (-k)
    return out


def taylor_coeffs(f, center: complex, order: int, radius: float = 0.5,
                  samples: int = 256) -> np.ndarray:
    """Taylor coefficients c_0..c_order of an analytic f around center."""
    return laurent_coeffs(f, center, radius, 0, order, samples)


def complex_step_derivative(f, point: complex, order: int = 1) -> complex:
    """Central finite differences with one Richardson extrapolation step."""
    h = 1e-4 * max(1.0, abs(point))

    def central(step):
        if order == 1:
            return (f(point + step) - f(point - step)) / (2 * step)
        if order == 2:
            return (f(point + step) - 2 * f(point) + f(point - step)) / step ** 2
        raise ValueError("order must be 1 or 2")

    d1 = central(h)
    d2 = central(h / 2)
    return (4 * d2 - d1) / 3


def rng(seed: int) -> np.random.Generator:
    """Deterministic 64-bit generator shared by all randomized suites."""
    return np.random.default_rng(np.uint64(seed))


def sample_points(gen: np.random.Generator, count: int, box: float = 2.0,
                  min_sep: float = 0.1, avoid=(), retries: int = 200) -> list:
    """Complex samples in a box with pairwise separation >= min_sep.

    `avoid` lists points (poles etc.) that samples must also keep clear of.
    """
    pts: list[complex] = []
    budget = retries * max(count, 1)
    while len(pts) < count:
        if budget <= 0:
            raise RuntimeError("sampling retry budget exhausted")
        budget -= 1
        cand = complex(gen.uniform(-box, box), gen.uniform(-box, box))
        if all(abs(cand - p) >= min_sep for p in list(pts) + list(avoid)):
            pts.append(cand)
    return pts


def parse_complex(text: str) -> complex:
    """Parse 'a+bi' / 'a-bi' / 'bi' / 'a' command-line forms."""
    t = text.strip().replace(" ", "")
    if t.endswith("i") and not t.endswith("j"):
        t = t[:-1] + "j"
    if t in ("j", "+j"):
        t = "1j"
    if t == "-j":
        t = "-1j"
    try:
        return complex(t)
    except ValueError as exc:
        raise ValueError(f"cannot parse complex number {text!r}") from exc


def close(a: complex, b: complex, tol: float, scale: float = 1.0) -> bool:
    return abs(a - b) <= tol * max(1.0, abs(scale))


def richardson_order(errors: list[float]) -> float:
    """Observed convergence order from errors at h, h/2, h/4, ..."""
    if len(errors) < 2 or errors[-1] == 0:
        return math.inf
    rates = [math.log2(errors[i] / errors[i + 1])
             for i in range(len(errors) - 1) if errors[i + 1] > 0]
    return min(rates) if rates else math.inf
