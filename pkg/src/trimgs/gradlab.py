"""One-dimensional demonstration that wide Gaussians receive weak, conflicting gradients.

A normalised 1D Gaussian ``g_sigma(x; mu)`` is fit to a square wave (1 on
``[2kT, (2k+1)T)``, 0 elsewhere) under an L1 loss restricted to the 3-sigma window
around the pulse start ``mu0``. The derivative of that loss w.r.t. ``mu`` at
``mu0`` reduces to a signed sum of ``g`` at the points where the integrand's sign
pattern changes, which is what :func:`gradient_endpoint_sum` enumerates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from scipy import integrate

SQRT_2PI = math.sqrt(2.0 * math.pi)


def square_wave(x, T: float):
    """1 on ``[2kT, (2k+1)T)``, else 0. Works elementwise on arrays."""
    if not T > 0:
        raise ValueError("T must be positive")
    phase = np.mod(np.asarray(x, dtype=np.float64), 2.0 * T)
    out = (phase < T).astype(np.float64)
    return float(out) if np.ndim(out) == 0 else out


def gauss_pdf(x, mu: float, sigma: float):
    return np.exp(-0.5 * ((np.asarray(x, dtype=np.float64) - mu) / sigma) ** 2) / (SQRT_2PI * sigma)


def _pulse_edges(a: float, b: float, T: float) -> List[float]:
    k0, k1 = math.floor(a / T), math.ceil(b / T)
    return [k * T for k in range(k0, k1 + 1) if a < k * T < b]


def _unit_crossings(mu: float, sigma: float, a: float, b: float) -> List[float]:
    """Points in (a, b) where the density equals 1 (the L1 integrand kinks there too)."""
    peak = 1.0 / (SQRT_2PI * sigma)
    if peak <= 1.0:
        return []
    half = sigma * math.sqrt(2.0 * math.log(peak))
    return [p for p in (mu - half, mu + half) if a < p < b]


def l1_gauss_vs_square(mu: float, sigma: float, T: float, mu0: float = 0.0, tol: float = 1e-12) -> float:
    """Adaptive quadrature of ``|g_sigma(x; mu) - f(x)|`` over ``[mu0 - 3 sigma, mu0 + 3 sigma]``."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    a, b = mu0 - 3.0 * sigma, mu0 + 3.0 * sigma
    breaks = sorted(set(_pulse_edges(a, b, T) + _unit_crossings(mu, sigma, a, b)))
    knots = [a] + breaks + [b]
    total = 0.0
    for lo, hi in zip(knots[:-1], knots[1:]):
        # integrand is smooth on each piece; f is constant there
        fval = square_wave(0.5 * (lo + hi), T)
        val, _ = integrate.quad(lambda x: abs(gauss_pdf(x, mu, sigma) - fval), lo, hi,
                                epsabs=tol, epsrel=tol, limit=200)
        total += val
    return total


def numeric_gradient(sigma: float, T: float, mu0: float = 0.0, step: Optional[float] = None) -> float:
    """Central difference of the windowed L1 loss at ``mu0``."""
    h = 1e-6 * T if step is None else step
    return (l1_gauss_vs_square(mu0 + h, sigma, T, mu0) - l1_gauss_vs_square(mu0 - h, sigma, T, mu0)) / (2 * h)


def gradient_closed_form(sigma: float, T: float, mu0: float = 0.0) -> float:
    """Published closed forms at ``mu0 = 2kT``, else the endpoint enumeration.

    sigma = T/4: ``2(e^{-9/2} - 1) / (sqrt(2 pi) T/4)``
    sigma = T/2: ``2(e^{-2} - 1) / (sqrt(2 pi) T/2)``
    """
    if math.isclose(sigma, T / 4):
        return 2.0 * (math.exp(-4.5) - 1.0) / (SQRT_2PI * T / 4)
    if math.isclose(sigma, T / 2):
        return 2.0 * (math.exp(-2.0) - 1.0) / (SQRT_2PI * T / 2)
    return gradient_endpoint_sum(sigma, T, mu0)


def gradient_endpoint_sum(sigma: float, T: float, mu0: float = 0.0, mu: Optional[float] = None) -> float:
    """Exact ``dL/dmu`` via Newton-Leibniz on each piece of the window.

    On a piece where ``g > f`` the integrand is ``g - f`` and contributes
    ``-(g(hi) - g(lo))``; where ``g < f`` it contributes ``+(g(hi) - g(lo))``.
    Pieces are split at pulse edges and at ``g = 1`` crossings.
    """
    mu = mu0 if mu is None else mu
    a, b = mu0 - 3.0 * sigma, mu0 + 3.0 * sigma
    knots = [a] + sorted(set(_pulse_edges(a, b, T) + _unit_crossings(mu, sigma, a, b))) + [b]
    total = 0.0
    for lo, hi in zip(knots[:-1], knots[1:]):
        mid = 0.5 * (lo + hi)
        sign = 1.0 if gauss_pdf(mid, mu, sigma) < square_wave(mid, T) else -1.0
        total += sign * (gauss_pdf(hi, mu, sigma) - gauss_pdf(lo, mu, sigma))
    return float(total)


@dataclass
class InequalityReport:
    T: float
    closed_quarter: float  # published form, sigma = T/4
    closed_half: float  # published form, sigma = T/2
    numeric_quarter: float
    numeric_half: float
    exact_quarter: float  # endpoint enumeration
    exact_half: float
    rel_tol: float = 1e-4

    @staticmethod
    def _rel(a: float, b: float) -> float:
        return abs(a - b) / abs(b)

    @property
    def rel_err_quarter(self) -> float:
        return self._rel(self.numeric_quarter, self.closed_quarter)

    @property
    def rel_err_half(self) -> float:
        return self._rel(self.numeric_half, self.closed_half)

    @property
    def closed_forms_agree(self) -> bool:
        return self.rel_err_quarter < self.rel_tol and self.rel_err_half < self.rel_tol

    @property
    def inequality_closed(self) -> bool:
        return abs(self.closed_quarter) > 2 * abs(self.closed_half)

    @property
    def inequality_numeric(self) -> bool:
        return abs(self.numeric_quarter) > 2 * abs(self.numeric_half)

    @property
    def passed(self) -> bool:
        return self.closed_forms_agree and self.inequality_closed and self.inequality_numeric

    def failures(self) -> List[str]:
        out = []
        if self.rel_err_quarter >= self.rel_tol:
            out.append(f"sigma=T/4: numeric {self.numeric_quarter:.6g} vs closed form "
                       f"{self.closed_quarter:.6g} (rel err {self.rel_err_quarter:.3g})")
        if self.rel_err_half >= self.rel_tol:
            out.append(f"sigma=T/2: numeric {self.numeric_half:.6g} vs closed form "
                       f"{self.closed_half:.6g} (rel err {self.rel_err_half:.3g})")
        if not self.inequality_closed:
            out.append("closed forms violate |L'(T/4)| > 2|L'(T/2)|")
        if not self.inequality_numeric:
            out.append("numeric gradients violate |L'(T/4)| > 2|L'(T/2)|")
        return out

    def format(self) -> str:
        lines = [
            f"T = {self.T:g}",
            f"closed form  L'_(T/4)(mu0) = {self.closed_quarter:.8f}",
            f"closed form  L'_(T/2)(mu0) = {self.closed_half:.8f}",
            f"numeric      L'_(T/4)(mu0) = {self.numeric_quarter:.8f}",
            f"numeric      L'_(T/2)(mu0) = {self.numeric_half:.8f}",
            f"endpoint sum L'_(T/4)(mu0) = {self.exact_quarter:.8f}",
            f"endpoint sum L'_(T/2)(mu0) = {self.exact_half:.8f}",
            f"ratio |L'_(T/4)| / |L'_(T/2)|: closed {abs(self.closed_quarter / self.closed_half):.5f}, "
            f"numeric {abs(self.numeric_quarter / self.numeric_half):.5f}",
        ]
        if self.passed:
            lines.append("INEQUALITY HOLDS")
        else:
            lines.append("INEQUALITY CHECK FAILED")
            lines += ["  - " + f for f in self.failures()]
        return "\n".join(lines)


def verify_inequality(T: float, k: int = 0, rel_tol: float = 1e-4) -> InequalityReport:
    if not T > 0:
        raise ValueError("T must be positive")
    mu0 = 2 * k * T
    return InequalityReport(
        T=T,
        closed_quarter=gradient_closed_form(T / 4, T, mu0),
        closed_half=gradient_closed_form(T / 2, T, mu0),
        numeric_quarter=numeric_gradient(T / 4, T, mu0),
        numeric_half=numeric_gradient(T / 2, T, mu0),
        exact_quarter=gradient_endpoint_sum(T / 4, T, mu0),
        exact_half=gradient_endpoint_sum(T / 2, T, mu0),
        rel_tol=rel_tol,
    )


def loss_sweep(T: float, sigmas=None, n: int = 301, k: int = 0):
    """L(mu) over ``[mu0 - T, mu0 + 2T]`` for each sigma (default T/4 and T/2)."""
    mu0 = 2 * k * T
    sigmas = (T / 4, T / 2) if sigmas is None else sigmas
    mus = np.linspace(mu0 - T, mu0 + 2 * T, n)
    return mus, {s: np.array([l1_gauss_vs_square(m, s, T, mu0) for m in mus]) for s in sigmas}
