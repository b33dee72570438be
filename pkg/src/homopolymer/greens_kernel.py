"""Free resolvent, heat kernel and zero-energy kernels of H_0 = (1/2)Laplacian.

Conventions: the resolvent is R_0(lam) = (H_0 - lam)^{-1}, so every kernel here
is negative.  kappa = sqrt(2 lam) is the decay rate of the kernel.
"""
import math

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import gamma as _gamma
from scipy.special import ive, kve

from ._validation import SingularPointError, check_dimension, check_scalar

EULER_GAMMA = 0.57721566490153286061

_SUPPORTED_NU = (0.0, 0.5, 1.0, 1.5)


def sphere_area(d):
    """Surface area |S^{d-1}| of the unit sphere in R^d (2 for d=1)."""
    return 2.0 * math.pi ** (d / 2) / math.gamma(d / 2)


def newton_constant(d):
    """a_d with R_0(0, x) = -a_d |x|^{2-d}, d >= 3."""
    d = check_dimension(d, min_d=3)
    return math.gamma(d / 2 - 1) / (2 * math.pi ** (d / 2))


# ---------------------------------------------------------------------------
# K_nu for nu in {0, 1/2, 1, 3/2}

def _k_series(nu, z):
    # ascending series, good for z <= 2
    q = 0.25 * z * z
    lz = np.log(0.5 * z)
    term = np.ones_like(z)
    dig = -EULER_GAMMA  # psi(k+1) at k=0
    if nu == 0:
        i0 = np.zeros_like(z)
        s = np.zeros_like(z)
        for k in range(40):
            if k > 0:
                term = term * q / (k * k)
                dig += 1.0 / k
            i0 += term
            s += dig * term
        return -lz * i0 + s
    # nu == 1
    i1 = np.zeros_like(z)
    s = np.zeros_like(z)
    dig2 = 1.0 - EULER_GAMMA  # psi(k+2) at k=0
    for k in range(40):
        if k > 0:
            term = term * q / (k * (k + 1))
            dig += 1.0 / k
            dig2 += 1.0 / (k + 1)
        i1 += term
        s += (dig + dig2) * term
    i1 = 0.5 * z * i1
    return 1.0 / z + lz * i1 - 0.25 * z * s


# trapezoid nodes for K_nu(z) = int_0^inf exp(-z cosh t) cosh(nu t) dt;
# the integrand is entire and even, so the rule converges geometrically
_TRAP_H = 0.05
_TRAP_T = np.arange(0.0, 8.0 + _TRAP_H / 2, _TRAP_H)
_TRAP_W = np.full(_TRAP_T.shape, _TRAP_H)
_TRAP_W[0] = 0.5 * _TRAP_H


def _k_integral_scaled(nu, z):
    # returns exp(z) K_nu(z)
    z = z[..., None]
    f = np.exp(-z * (np.cosh(_TRAP_T) - 1.0)) * np.cosh(nu * _TRAP_T)
    return (f * _TRAP_W).sum(-1)


def modified_bessel_k(nu, z, scaled=False):
    """Modified Bessel function of the second kind K_nu(z), z > 0.

    Half-integer orders use their elementary closed forms.  For nu = 0, 1 the
    ascending series is used on z <= 2 and a trapezoid rule on the integral
    representation beyond.  ``scaled=True`` returns exp(z) K_nu(z).
    """
    nu = float(nu)
    if nu not in _SUPPORTED_NU:
        raise ValueError(f"unsupported order nu={nu}; supported: {_SUPPORTED_NU}")
    z_in = np.asarray(z, dtype=float)
    if np.any(~(z_in > 0)):
        raise ValueError("modified_bessel_k needs z > 0")
    z = np.atleast_1d(z_in).astype(float)
    if nu == 0.5:
        out = np.sqrt(np.pi / (2 * z))
    elif nu == 1.5:
        out = np.sqrt(np.pi / (2 * z)) * (1.0 + 1.0 / z)
    else:
        out = np.empty_like(z)
        small = z <= 2.0
        if np.any(small):
            out[small] = _k_series(nu, z[small]) * np.exp(z[small])
        if np.any(~small):
            out[~small] = _k_integral_scaled(nu, z[~small])
    if not scaled:
        with np.errstate(under="ignore"):
            out = out * np.exp(-z)
    return out.reshape(z_in.shape) if z_in.ndim else float(out[0])


# ---------------------------------------------------------------------------

def heat_kernel(d, t, r):
    """p_0(t, x) = (2 pi t)^{-d/2} exp(-|x|^2 / 2t) at |x| = r."""
    d = check_dimension(d)
    t = check_scalar(t, "t", positive=True)
    r = np.asarray(r, dtype=float)
    return (2 * np.pi * t) ** (-d / 2) * np.exp(-(r * r) / (2 * t))


def free_resolvent_kernel(d, lam, r):
    """Kernel of R_0(lam) = (Delta/2 - lam)^{-1} at distance r.

    For lam > 0 this is -2 (2 pi)^{-d/2} (kappa/r)^{d/2-1} K_{d/2-1}(kappa r),
    kappa = sqrt(2 lam).  For lam = 0 (d >= 3) it is -a_d r^{2-d}.
    """
    d = check_dimension(d)
    lam = check_scalar(lam, "lambda", nonneg=True)
    r_in = np.asarray(r, dtype=float)
    r = np.atleast_1d(r_in)
    if np.any(r < 0):
        raise ValueError("r must be >= 0")
    if d <= 2 and lam == 0:
        raise ValueError(f"lambda = 0 is not allowed for d={d} (no decaying Green function)")
    if d >= 2 and np.any(r == 0):
        raise SingularPointError(f"the resolvent kernel is singular at r = 0 for d={d}")
    if lam == 0:
        out = -newton_constant(d) * r ** (2.0 - d)
    else:
        kappa = math.sqrt(2 * lam)
        if d == 1:
            out = -np.exp(-kappa * r) / kappa
        else:
            nu = abs(d / 2 - 1)
            out = -2 * (2 * np.pi) ** (-d / 2) * (kappa / r) ** (d / 2 - 1) * modified_bessel_k(nu, kappa * r)
    return out.reshape(r_in.shape) if r_in.ndim else float(out[0])


def zero_energy_kernels(d, r):
    """(P_d, Q_d) at |x - y| = r for d in {3, 4, 5}.

    P_d = -R_0(0) and Q_d is the coefficient of the first non-analytic term of
    -R_0(lam) - P_d in lam (sqrt(lam), lam ln(1/lam) and lam for d=3, 4, 5).
    """
    d = check_dimension(d, min_d=3)
    r_in = np.asarray(r, dtype=float)
    r = np.atleast_1d(r_in)
    if np.any(r <= 0):
        raise SingularPointError("zero-energy kernels need r > 0")
    a = newton_constant(d)
    P = a * r ** (2.0 - d)
    if d == 3:
        Q = np.full_like(r, -1.0 / (math.sqrt(2) * math.pi))
    elif d == 4:
        Q = np.full_like(r, -1.0 / (4 * math.pi ** 2))
    else:
        Q = -a / r
    if r_in.ndim == 0:
        return float(P[0]), float(Q[0])
    return P.reshape(r_in.shape), Q.reshape(r_in.shape)


# ---------------------------------------------------------------------------
# radial reductions

def radial_green_kernel(d, lam, r, s):
    """Radial form K(r, s) of R_0(lam): (R_0 f)(r) = int_0^inf K(r, s) f(s) ds.

    Includes the surface factor |S^{d-1}| s^{d-1}.  Equals
    -2 s^{d-1} (rs)^{-nu} I_nu(kappa min) K_nu(kappa max), nu = d/2 - 1, and is
    continuous across r = s (a kink, no singularity).
    """
    d = check_dimension(d)
    lam = float(lam)
    r, s = np.broadcast_arrays(np.asarray(r, dtype=float), np.asarray(s, dtype=float))
    m = np.minimum(r, s)
    M = np.maximum(r, s)
    if lam == 0:
        if d <= 2:
            raise ValueError(f"lambda = 0 is not allowed for d={d}")
        with np.errstate(divide="ignore", invalid="ignore"):
            out = -(2.0 / (d - 2)) * s ** (d - 1) * M ** (2.0 - d)
        return np.where(s == 0, 0.0, out)
    kappa = math.sqrt(2 * lam)
    if d == 1:
        return -(np.exp(-kappa * (M - m)) + np.exp(-kappa * (M + m))) / kappa
    if d == 3:
        return _k3(kappa, r, s, m, M)
    nu = d / 2 - 1
    with np.errstate(divide="ignore", invalid="ignore", under="ignore"):
        mid = np.where(m > 0, m, 1.0)
        prod = ive(nu, kappa * mid) * kve(nu, kappa * M) * np.exp(-kappa * (M - mid))
        out = -2.0 * s ** (d - 1) * (r * s) ** (-nu) * prod
        # r = 0 or s = 0: use the small-argument form of I_nu
        lim = -2.0 * s ** (d - 1) * M ** (-nu) * (kappa / 2) ** nu / _gamma(nu + 1) \
            * kve(nu, kappa * M) * np.exp(-kappa * M)
    out = np.where(m > 0, out, np.where(s > 0, lim, 0.0))
    return out


def _k3(kappa, r, s, m, M):
    # -(2 s / r) sinh(kappa m) exp(-kappa M) / kappa, rewritten as
    # -2 s (m / r) shc(kappa m) exp(-kappa M) to survive r -> 0 and kappa -> 0
    z = kappa * m
    with np.errstate(divide="ignore", invalid="ignore"):
        shc = np.where(z > 0, np.sinh(z) / np.where(z > 0, z, 1.0), 1.0)
        frac = np.where(r > 0, m / np.where(r > 0, r, 1.0), 1.0)
    return -2.0 * s * frac * shc * np.exp(-kappa * M)


def _polar_rule(n_panel=16, levels=14):
    # composite Gauss-Legendre on [0, pi] with geometric grading toward 0
    x, w = leggauss(n_panel)
    edges = [0.0] + [np.pi * 2.0 ** (-k) for k in range(levels, -1, -1)]
    th, wt = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        th.append(0.5 * (b - a) * (x + 1) + a)
        wt.append(0.5 * (b - a) * w)
    return np.concatenate(th), np.concatenate(wt)


def angular_mean(d, f, r, s, n_panel=16, levels=14):
    """Mean of f(|x - y|) over directions of y, |x| = r, |y| = s.

    Polar-angle quadrature with density sin^{d-2}(theta), graded toward
    theta = 0 where f may be singular when r is close to s.
    """
    d = check_dimension(d)
    r = np.asarray(r, dtype=float)[..., None]
    s = np.asarray(s, dtype=float)[..., None]
    if d == 1:
        return 0.5 * (f(np.abs(r - s)) + f(r + s))[..., 0]
    th, wt = _polar_rule(n_panel, levels)
    dens = np.sin(th) ** (d - 2) * wt
    dist = np.sqrt(np.maximum((r - s) ** 2 + 2 * r * s * (1 - np.cos(th)), 0.0))
    return (f(dist) * dens).sum(-1) / dens.sum()


def mean_inverse_distance_5d(r, s):
    """Mean of 1/|x - y| over the sphere |y| = s in R^5, |x| = r."""
    r, s = np.broadcast_arrays(np.asarray(r, dtype=float), np.asarray(s, dtype=float))
    a = r * r + s * s
    b = 2 * r * s
    out = np.empty(r.shape)
    ratio = np.minimum(r, s) / np.maximum(np.maximum(r, s), 1e-300)
    closed = ratio > 0.05
    if np.any(closed):
        aa, bb = a[closed], b[closed]
        lo, hi = (r[closed] - s[closed]) ** 2, (r[closed] + s[closed]) ** 2

        def prim(w):
            return (bb * bb - aa * aa) * 2 * np.sqrt(w) + (4 * aa / 3) * w ** 1.5 - 0.4 * w ** 2.5

        out[closed] = 0.75 * (prim(hi) - prim(lo)) / bb ** 3
    if np.any(~closed):
        # smooth integrand: plain Gauss-Legendre in t = cos(theta), weight (1 - t^2)
        t, w = leggauss(32)
        rr, ss = r[~closed][..., None], s[~closed][..., None]
        dist = np.sqrt(rr * rr + ss * ss - 2 * rr * ss * t)
        out[~closed] = 0.75 * (w * (1 - t * t) / dist).sum(-1)
    return out
