"""Critical scaling limit in d = 3: pbar, the log-mass g, the kernel Q and its checks.

Points of R^3 enter as radii plus angles.  For y != 0,
    pbar(s,t,y,x) = p0(t-s, y, x) + exp(-(|y|+|x|)^2 / 2 tau) / ((2 pi)^{3/2} |y||x| sqrt(tau)),
and for y = 0 it is kappa psi(0) exp(-|x|^2 / 2 tau) / (|x| sqrt(tau)), tau = t - s.
The mass M(t,x) = int pbar(t,1,x,z) dz has the closed form
    M = 1 + sqrt(2 tau/pi) exp(-r^2/2 tau) / r - erfc(r / sqrt(2 tau)),  tau = 1 - t,
and Q(s,t,y,x) = pbar(s,t,y,x) M(t,x) / M(s,y).  The y = 0 mass is
4 pi kappa psi(0) sqrt(1 - s), so kappa psi(0) cancels from Q.
"""
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

from ._validation import SingularPointError, check_scalar

TWO_PI_32 = (2 * math.pi) ** 1.5
DEFAULT_ANGLE_NODES = 64


def _check_times(s, t, t_max=1.0):
    s = check_scalar(s, "s", nonneg=True)
    t = check_scalar(t, "t", nonneg=True)
    if not s < t <= t_max:
        raise ValueError(f"need 0 <= s < t <= {t_max:g}, got s={s}, t={t}")
    return s, t


def _radius(x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        return abs(float(x))
    return float(np.linalg.norm(x))


def _cos_angle(y, x):
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    if y.ndim == 0 or x.ndim == 0:
        raise ValueError("vectors are needed to define the angle between y and x")
    return float(np.clip(y @ x / (np.linalg.norm(y) * np.linalg.norm(x)), -1.0, 1.0))


# ---------------------------------------------------------------------------
# kernels on (radius, radius, cos angle)

def heat_kernel_3d(tau, a, b, u):
    """p0(tau, y, x) with |y| = a, |x| = b and cos angle u."""
    dist2 = np.maximum(a * a + b * b - 2 * a * b * u, 0.0)
    return np.exp(-dist2 / (2 * tau)) / (2 * np.pi * tau) ** 1.5


def _second_term(tau, a, b):
    return np.exp(-(a + b) ** 2 / (2 * tau)) / (TWO_PI_32 * a * b * np.sqrt(tau))


def pbar_polar(s, t, a, b, u, kappa_psi0=None):
    """pbar on radii a = |y| (a = 0 allowed), b = |x| > 0 and cos angle u."""
    tau = t - s
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(b <= 0):
        raise SingularPointError("pbar is undefined at x = 0")
    if np.all(a == 0):
        if kappa_psi0 is None:
            raise ValueError("the y = 0 branch needs kappa*psi(0)")
        return kappa_psi0 * np.exp(-b * b / (2 * tau)) / (b * np.sqrt(tau))
    if np.any(a == 0):
        raise ValueError("mixing y = 0 and y != 0 in one call is not supported")
    return heat_kernel_3d(tau, a, b, u) + _second_term(tau, a, b)


def pbar(s, t, y, x, kappa_psi0=None):
    """pbar(s, t, y, x) for 3-vectors y (zero allowed) and x != 0."""
    s, t = _check_times(s, t, t_max=np.inf)
    a, b = _radius(y), _radius(x)
    if b == 0:
        raise SingularPointError("pbar is undefined at x = 0")
    u = 1.0 if a == 0 else _cos_angle(y, x)
    return float(pbar_polar(s, t, a, b, u, kappa_psi0))


# ---------------------------------------------------------------------------
# mass, log mass and drift

def mass_excess(tau, r):
    """int of the second pbar term over z: sqrt(2 tau/pi) e^{-r^2/2tau}/r - erfc(r/sqrt(2 tau))."""
    r = np.asarray(r, dtype=float)
    return np.sqrt(2 * tau / np.pi) * np.exp(-r * r / (2 * tau)) / r - erfc(r / np.sqrt(2 * tau))


def mass(t, r):
    """M(t, x) = int pbar(t, 1, x, z) dz for |x| = r > 0 (equals 1 at t = 1)."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise SingularPointError("the mass factor is singular at x = 0")
    if t >= 1:
        return np.ones_like(r)
    return 1.0 + mass_excess(1.0 - t, r)


def g_log_mass(t, x):
    """g(t, x) = ln int pbar(t, 1, x, z) dz; x is a 3-vector or a radius."""
    t = check_scalar(t, "t", nonneg=True)
    if t >= 1:
        raise ValueError("g is defined for 0 <= t < 1")
    r = _radius(x)
    if r == 0:
        raise SingularPointError("g is undefined at x = 0")
    return float(np.log(mass(t, r)))


def drift_field(t, r):
    """dg/dr = d_r M / M with d_r M = -sqrt(2 tau/pi) e^{-r^2/2tau} / r^2."""
    t = check_scalar(t, "t", nonneg=True)
    if t >= 1:
        raise ValueError("the drift is defined for 0 <= t < 1")
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise SingularPointError("the drift is singular at r = 0")
    tau = 1.0 - t
    dm = -np.sqrt(2 * tau / np.pi) * np.exp(-r * r / (2 * tau)) / (r * r)
    out = dm / (1.0 + mass_excess(tau, r))
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# transition kernel

def critical_Q_polar(s, t, a, b, u):
    """Q(s,t,y,x) on radii a = |y| (0 allowed), b = |x| and cos angle u; Q = 0 at b = 0."""
    b = np.asarray(b, dtype=float)
    u = np.asarray(u, dtype=float)
    out = np.zeros(np.broadcast(b, u).shape)
    pos = np.broadcast_to(b > 0, out.shape)
    bb = np.broadcast_to(b, out.shape)[pos]
    uu = np.broadcast_to(u, out.shape)[pos]
    if a == 0:
        num = pbar_polar(s, t, 0.0, bb, uu, kappa_psi0=1.0)
        den = 4 * math.pi * math.sqrt(1.0 - s)
    else:
        num = pbar_polar(s, t, a, bb, uu)
        den = float(mass(s, a))
    out[pos] = num * mass(t, bb) / den
    return out


def critical_Q(s, t, y, x):
    """Q(s, t, y, x) for 3-vectors; Q(s, t, y, 0) = 0."""
    s, t = _check_times(s, t)
    a, b = _radius(y), _radius(x)
    if b == 0:
        return 0.0
    u = 1.0 if a == 0 else _cos_angle(y, x)
    return float(critical_Q_polar(s, t, a, b, u))


def endpoint_radial_density(r):
    """Law of |x| under Q(0, 1, 0, .): r exp(-r^2/2)."""
    r = np.asarray(r, dtype=float)
    return r * np.exp(-r * r / 2)


# ---------------------------------------------------------------------------
# quadrature

def _gl(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return x, w


def _radial_rule(r_hi, width, n_per_panel=16):
    """Composite Gauss-Legendre on [0, r_hi] with panels of about ``width``."""
    m = max(1, int(math.ceil(r_hi / width)))
    edges = np.linspace(0.0, r_hi, m + 1)
    x, w = _gl(n_per_panel)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x).ravel()
    weights = (half[:, None] * w).ravel()
    return nodes, weights


def _scale(s, t):
    tau = t - s
    sc = math.sqrt(tau)
    if t < 1:
        sc = min(sc, math.sqrt(1.0 - t))
    return sc, math.sqrt(tau)


def normalization_defect(s, t, y_radius, n_angle=DEFAULT_ANGLE_NODES, n_per_panel=16):
    """|int Q(s, t, y, x) dx - 1| by radial composite GL times angular GL."""
    s, t = _check_times(s, t)
    a = check_scalar(y_radius, "y_radius", nonneg=True)
    sc, width = _scale(s, t)
    rho, wr = _radial_rule(a + 14 * width, 0.25 * min(sc, 1.0), n_per_panel)
    u, wu = _gl(n_angle)
    q = critical_Q_polar(s, t, a, rho[:, None], u[None, :])
    total = 2 * math.pi * np.sum(wr[:, None] * wu[None, :] * rho[:, None] ** 2 * q)
    return abs(float(total) - 1.0)


def chapman_kolmogorov_defect(t1, t2, t3, x1_radius, x3_radius, angle,
                              n_angle=DEFAULT_ANGLE_NODES, n_phi=64, n_per_panel=12):
    """|int Q(t1,t2,x1,z) Q(t2,t3,z,x3) dz - Q(t1,t3,x1,x3)|.

    x1 lies on the polar axis and x3 in the (x, z) plane at ``angle`` from it.
    z is integrated in spherical coordinates: composite GL in |z|, GL in the
    polar cosine and the periodic trapezoid rule in the azimuth.
    """
    _check_times(t1, t2)
    _check_times(t2, t3)
    a = check_scalar(x1_radius, "x1_radius", nonneg=True)
    c = check_scalar(x3_radius, "x3_radius", positive=True)
    sc = min(_scale(t1, t2)[0], _scale(t2, t3)[0], 1.0)
    width = max(math.sqrt(t2 - t1), math.sqrt(t3 - t2))
    rho, wr = _radial_rule(max(a, c) + 14 * width, 0.25 * sc, n_per_panel)
    u, wu = _gl(n_angle)
    phi = 2 * math.pi * np.arange(n_phi) / n_phi
    ca, sa = math.cos(angle), math.sin(angle)
    # cos of the angle between z and x3
    u3 = u[:, None] * ca + np.sqrt(1 - u[:, None] ** 2) * sa * np.cos(phi)[None, :]
    q1 = critical_Q_polar(t1, t2, a, rho[:, None], u[None, :])           # (n_rho, n_u)
    q2 = critical_Q_polar_from(t2, t3, rho, c, u3)                       # (n_rho, n_u, n_phi)
    inner = q2.mean(axis=2) * 2 * math.pi
    total = np.sum(wr[:, None] * wu[None, :] * rho[:, None] ** 2 * q1 * inner)
    target = critical_Q_polar(t1, t3, a, c, 1.0 if a == 0 else ca)
    return abs(float(total) - float(target))


def critical_Q_polar_from(s, t, a, b, u):
    """Q(s, t, y, x) for an array of source radii a > 0 (first axis) and one target radius b."""
    a = np.asarray(a, dtype=float)
    shape = (a.size,) + np.shape(u)
    aa = a.reshape((-1,) + (1,) * np.ndim(u))
    num = heat_kernel_3d(t - s, aa, b, u) + _second_term(t - s, aa, b)
    return np.broadcast_to(num * float(mass(t, b)) / mass(s, aa), shape)


# ---------------------------------------------------------------------------
# Fokker-Planck residual

def _fp_residual_field(func, drift, t, r, theta, h):
    """dQ/dt - L*Q at (t, r, theta) by centered differences with steps h, h, h/r.

    L*Q = (1/2) Delta Q - r^{-2} d_r(r^2 drift Q), Laplacian in axisymmetric
    spherical coordinates.
    """
    ht, hr, hth = h, h, h / r
    q = func(t, r, theta)
    qt = (func(t + ht, r, theta) - func(t - ht, r, theta)) / (2 * ht)
    qp, qm = func(t, r + hr, theta), func(t, r - hr, theta)
    qr = (qp - qm) / (2 * hr)
    qrr = (qp - 2 * q + qm) / hr ** 2
    tp, tm = func(t, r, theta + hth), func(t, r, theta - hth)
    qth = (tp - tm) / (2 * hth)
    qthth = (tp - 2 * q + tm) / hth ** 2
    lap = qrr + 2 * qr / r + (qthth + qth / np.tan(theta)) / r ** 2
    flux_p = (r + hr) ** 2 * drift(t, r + hr) * qp
    flux_m = (r - hr) ** 2 * drift(t, r - hr) * qm
    div = (flux_p - flux_m) / (2 * hr) / r ** 2
    return qt - (0.5 * lap - div)


@dataclass
class ResidualReport:
    residual: float
    refined: float

    @property
    def ratio(self):
        return self.residual / self.refined if self.refined > 0 else np.inf


def fokker_planck_residual(s, y_radius, t_grid, r_grid, theta_grid=(0.4, math.pi / 2, 2.6),
                           h=1e-3, heat=False):
    """Max |dQ/dt - L*Q| over the grid at step h, and again at h/2.

    With heat=True the same differencing is applied to the heat kernel with
    zero drift, which must satisfy dp/dt = (1/2) Delta p.
    """
    a = check_scalar(y_radius, "y_radius", positive=True)
    t = np.asarray(t_grid, dtype=float)[:, None, None]
    r = np.asarray(r_grid, dtype=float)[None, :, None]
    th = np.asarray(theta_grid, dtype=float)[None, None, :]
    if np.any(r - 2 * h <= 0) or np.any(t - 2 * h <= s) or np.any(t + 2 * h >= 1):
        raise ValueError("grids must keep r > 0 and s < t < 1 under differencing")
    if heat:
        def func(tt, rr, thh):
            return heat_kernel_3d(tt - s, a, rr, np.cos(thh))

        def drift(tt, rr):
            return 0.0 * rr
    else:
        def func(tt, rr, thh):
            tau = tt - s
            num = heat_kernel_3d(tau, a, rr, np.cos(thh)) + _second_term(tau, a, rr)
            return num * (1.0 + mass_excess(1.0 - tt, rr)) / float(mass(s, a))

        def drift(tt, rr):
            tau = 1.0 - tt
            dm = -np.sqrt(2 * tau / np.pi) * np.exp(-rr * rr / (2 * tau)) / (rr * rr)
            return dm / (1.0 + mass_excess(tau, rr))
    coarse = float(np.max(np.abs(_fp_residual_field(func, drift, t, r, th, h))))
    fine = float(np.max(np.abs(_fp_residual_field(func, drift, t, r, th, h / 2))))
    return ResidualReport(coarse, fine)


def near_origin_drift_defect(t=0.5, r=1e-3):
    """|r * dg/dr + 1| at small r."""
    return abs(r * drift_field(t, r) + 1.0)


def limit_consistency_defect(s, y_radius, x_radius, cos_angle, eps=1e-10):
    """|Q(s, 1 - eps, y, x) - Q(s, 1, y, x)|."""
    q1 = critical_Q_polar(s, 1.0 - eps, y_radius, x_radius, cos_angle)
    q2 = critical_Q_polar(s, 1.0, y_radius, x_radius, cos_angle)
    return float(abs(q1 - q2))


@dataclass
class CriticalKernel:
    """Quadrature settings bundled with the kernel evaluations."""
    n_angle: int = DEFAULT_ANGLE_NODES
    n_phi: int = 64
    n_per_panel: int = 16
    fp_step: float = 1e-3

    pbar = staticmethod(pbar)
    Q = staticmethod(critical_Q)
    g = staticmethod(g_log_mass)
    drift = staticmethod(drift_field)

    def normalization_defect(self, s, t, y_radius):
        return normalization_defect(s, t, y_radius, self.n_angle, self.n_per_panel)

    def chapman_kolmogorov_defect(self, t1, t2, t3, x1_radius, x3_radius, angle):
        return chapman_kolmogorov_defect(t1, t2, t3, x1_radius, x3_radius, angle,
                                         self.n_angle, self.n_phi)

    def fokker_planck_residual(self, s, y_radius, t_grid, r_grid, **kw):
        kw.setdefault("h", self.fp_step)
        return fokker_planck_residual(s, y_radius, t_grid, r_grid, **kw)

    def doubled(self):
        return CriticalKernel(2 * self.n_angle, 2 * self.n_phi, self.n_per_panel, self.fp_step)


# ---------------------------------------------------------------------------
# Monte Carlo consistency

def monte_carlo_endpoint_check(v, beta, T, n_paths, n_steps, seed=0, edges=None):
    """TV distance between the weighted law of |x(T)|/sqrt(T) and r exp(-r^2/2).

    Weighted sampling at beta_cr is limited by the weight variance:
    E[w^2] = Z_{2 beta, T} grows exponentially in T, so the reported ESS
    decides whether the comparison means anything.
    """
    from .path_sampler import endpoint_density, sample_paths, tv_distance
    edges = np.linspace(0.0, 3.5, 8) if edges is None else np.asarray(edges, float)
    ens = sample_paths(v, beta, T, n_steps, n_paths, seed=seed)
    hist = endpoint_density(ens, edges, scale=math.sqrt(T))
    cdf = 1.0 - np.exp(-np.append(edges, np.inf) ** 2 / 2)
    ref = np.diff(cdf)
    return {"tv": tv_distance(hist, ref), "ess": hist.ess, "histogram": hist.to_dict(),
            "reference": ref.tolist()}
