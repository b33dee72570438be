"""Radial potentials and radial fields."""
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.interpolate import CubicSpline

from ._validation import as_float_array, check_dimension, check_scalar
from .greens_kernel import sphere_area


class RadialPotential:
    """Compactly supported radial profile v(|x|) >= 0 on R^d.

    The profile is given by samples on [0, R_supp] and an interpolation rule
    ("linear" or "cubic").  v vanishes for r > R_supp.
    """

    def __init__(self, r, values, d, interpolation="linear", name="custom"):
        r = as_float_array(r, "r", nonneg=True)
        values = as_float_array(values, "values")
        if r.ndim != 1 or r.shape != values.shape or r.size < 2:
            raise ValueError("r and values must be 1-D arrays of equal length >= 2")
        if np.any(np.diff(r) <= 0):
            raise ValueError("sample radii must be strictly increasing")
        if r[0] != 0:
            raise ValueError("samples must start at r = 0")
        if np.any(values < 0):
            raise ValueError("potential profile must be non-negative")
        if not np.any(values > 0):
            raise ValueError("potential profile is identically zero")
        if interpolation not in ("linear", "cubic"):
            raise ValueError(f"unknown interpolation rule {interpolation!r}")
        self.r = r
        self.values = values
        self.d = check_dimension(d)
        self.interpolation = interpolation
        self.name = name
        self.R_supp = float(r[-1])
        self._spline = CubicSpline(r, values) if interpolation == "cubic" else None

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        a = np.abs(r)  # d = 1 callers may pass signed positions
        if self._spline is None:
            out = np.interp(a, self.r, self.values)
        else:
            out = np.maximum(self._spline(np.minimum(a, self.R_supp)), 0.0)
        return np.where(a <= self.R_supp, out, 0.0)

    @property
    def sup(self):
        fine = np.linspace(0, self.R_supp, 2001)
        return float(max(self.values.max(), self(fine).max()))

    def scaled(self, s):
        s = check_scalar(s, "scale", positive=True)
        return RadialPotential(self.r, s * self.values, self.d, self.interpolation, name=f"{s}*{self.name}")

    def with_dimension(self, d):
        return RadialPotential(self.r, self.values, d, self.interpolation, name=self.name)

    def radial_quadrature(self, n=64):
        """Gauss-Legendre nodes and plain weights on (0, R_supp)."""
        x, w = leggauss(n)
        return 0.5 * self.R_supp * (x + 1), 0.5 * self.R_supp * w

    def integral(self, n=128):
        """int_{R^d} v(x) dx."""
        s, w = self.radial_quadrature(n)
        return float(sphere_area(self.d) * np.sum(w * s ** (self.d - 1) * self(s)))

    def cell_average(self, edges, n=8):
        """Volume average of v over radial shells [edges[i], edges[i+1]]."""
        edges = np.asarray(edges, dtype=float)
        x, w = leggauss(n)
        lo = np.minimum(edges[:-1], self.R_supp)
        hi = np.minimum(edges[1:], self.R_supp)
        a = lo[:, None] + 0.5 * (hi - lo)[:, None] * (x + 1)
        num = (0.5 * (hi - lo)[:, None] * w * a ** (self.d - 1) * self(a)).sum(1)
        vol = (edges[1:] ** self.d - edges[:-1] ** self.d) / self.d
        return num / vol

    def to_dict(self):
        return {"name": self.name, "d": self.d, "R_supp": self.R_supp,
                "interpolation": self.interpolation}

    def __repr__(self):
        return f"RadialPotential(name={self.name!r}, d={self.d}, R_supp={self.R_supp})"


def unit_well(d, radius=1.0, height=1.0, n_samples=65):
    """Indicator of the ball of given radius, times height."""
    radius = check_scalar(radius, "radius", positive=True)
    height = check_scalar(height, "height", positive=True)
    r = np.linspace(0, radius, n_samples)
    return RadialPotential(r, np.full(n_samples, height), d, "linear", name="well")


def bump(d, radius=1.0, height=1.0, n_samples=257):
    """Smooth compactly supported bump height * (1 - (r/radius)^2)^2."""
    radius = check_scalar(radius, "radius", positive=True)
    height = check_scalar(height, "height", positive=True)
    r = np.linspace(0, radius, n_samples)
    return RadialPotential(r, height * (1 - (r / radius) ** 2) ** 2, d, "cubic", name="bump")


@dataclass
class RadialField:
    """Scalar function sampled on a radial grid."""
    r: np.ndarray
    values: np.ndarray
    d: int
    label: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.r = np.asarray(self.r, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.r.shape != self.values.shape:
            raise ValueError("r and values must have the same shape")

    def __call__(self, r):
        return np.interp(r, self.r, self.values)

    def integral(self, power=1):
        """int_{R^d} f(x)^power dx by the trapezoid rule on the stored grid."""
        return float(sphere_area(self.d) * np.trapezoid(self.values ** power * self.r ** (self.d - 1), self.r))

    def to_dict(self):
        return {"r": self.r.tolist(), "value": self.values.tolist()}
