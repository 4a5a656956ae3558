"""Uniform spatial grid on [0, pi] with Simpson quadrature."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def simpson_weights(n: int, h: float) -> np.ndarray:
    """Composite Simpson weights for ``n`` (even) intervals of width ``h``."""
    if n % 2:
        raise ValueError("Simpson quadrature needs an even number of intervals")
    w = np.ones(n + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * (h / 3.0)


@dataclass(frozen=True)
class Grid:
    """Equispaced nodes ``x_k = k*pi/n``, ``k = 0..n``.

    Parameters
    ----------
    n : int
        Number of intervals. Must be even and at least 16.
    """

    n: int
    x: np.ndarray = field(init=False, repr=False, compare=False)
    h: float = field(init=False, repr=False, compare=False)
    weights: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.n < 16 or self.n % 2:
            raise ValueError(f"grid size must be even and >= 16, got {self.n}")
        x = np.linspace(0.0, np.pi, self.n + 1)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "h", np.pi / self.n)
        object.__setattr__(self, "weights", simpson_weights(self.n, np.pi / self.n))

    @property
    def size(self) -> int:
        return self.n + 1

    def integrate(self, f, axis=-1):
        return np.tensordot(f, self.weights, axes=([axis], [0]))

    def deriv(self, f, axis=-1):
        """Second-order finite-difference derivative (one-sided at the ends)."""
        return np.gradient(f, self.h, axis=axis, edge_order=2)

    def h1_norm_sq(self, f, axis=-1):
        """``int |f|^2 + |f'|^2 dx`` along ``axis``."""
        df = self.deriv(f, axis=axis)
        return self.integrate(np.abs(f) ** 2 + np.abs(df) ** 2, axis=axis)
