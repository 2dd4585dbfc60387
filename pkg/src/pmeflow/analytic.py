"""Closed-form reference solutions used as oracles and as initial data.

Barenblatt profile for ``p_t = |grad p|^2 + gamma p lap p`` (G = 0): a
parabolic cap ``p = (A(t) - B(t)|x|^2)_+`` solves it exactly when

    B(t) = 1 / ((2 d gamma + 4) t),    A(t) = C t^(-d gamma beta),

with ``beta = 1 / (d gamma + 2)``. Particles move along ``-grad p = 2 B x``,
so ``x(t) = x0 (t / t0)^beta`` and the support radius grows like ``t^beta``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special


@dataclass(frozen=True)
class Barenblatt:
    gamma: float
    dim: int = 1
    radius_at_1: float = 1.0

    @property
    def beta(self) -> float:
        return 1.0 / (self.dim * self.gamma + 2.0)

    @property
    def constant(self) -> float:
        # A(1) = R(1)^2 B(1)
        return self.radius_at_1**2 / (2 * self.dim * self.gamma + 4.0)

    def curvature(self, t):
        return 1.0 / ((2 * self.dim * self.gamma + 4.0) * t)

    def height(self, t):
        return self.constant * t ** (-self.dim * self.gamma * self.beta)

    def support_radius(self, t):
        return self.radius_at_1 * t**self.beta

    def pressure(self, t, r2):
        return np.maximum(self.height(t) - self.curvature(t) * np.asarray(r2), 0.0)

    def density(self, t, r2):
        return self.pressure(t, r2) ** (1.0 / self.gamma)

    def velocity(self, t, x):
        """``-grad p`` at points ``x`` of shape (..., d); zero outside the support."""
        x = np.asarray(x, dtype=float)
        inside = np.sum(x**2, axis=-1, keepdims=True) < self.support_radius(t) ** 2
        return 2 * self.curvature(t) * x * inside

    def laplacian_pressure(self, t):
        """Constant ``lap p`` inside the support."""
        return -2 * self.dim * self.curvature(t)

    def trajectory(self, x0, t0, t):
        return np.asarray(x0) * (t / t0) ** self.beta

    def mass(self, t):
        """Total mass, computed once by quadrature and conserved."""
        if self.dim == 1:
            r = self.support_radius(t)
            a = self.height(t)
            # int_{-r}^{r} (a - b x^2)^(1/gamma) dx with b = a / r^2
            k = 1.0 / self.gamma
            return 2 * r * a**k * math.sqrt(math.pi) * math.gamma(k + 1) / (2 * math.gamma(k + 1.5))
        r = self.support_radius(t)
        a = self.height(t)
        k = 1.0 / self.gamma
        return math.pi * r * r * a**k / (k + 1)


def heat_kernel_gaussian(x2, t, alpha, dim, amplitude=1.0, width=1.0):
    """Solution of ``n_t = alpha lap n`` from ``amplitude * exp(-|x|^2 / width^2)``."""
    s = width**2 + 4 * alpha * t
    return amplitude * (width**2 / s) ** (dim / 2) * np.exp(-np.asarray(x2) / s)


def gaussian_box_mass(half_width, dim):
    """``int exp(-|x|^2)`` over the box ``[-L, L]^d``."""
    return (math.sqrt(math.pi) * special.erf(half_width)) ** dim


def poisson_cap_1d(x, radius, source):
    """``-p'' = b`` on ``(-R, R)`` with zero ends."""
    return np.maximum(source * (radius**2 - np.asarray(x) ** 2) / 2, 0.0)


def poisson_cap_radial(r2, radius, source, dim=2):
    return np.maximum(source * (radius**2 - np.asarray(r2)) / (2 * dim), 0.0)
