"""Radial Crank-Nicolson solver for u_t = (1/2) Delta u + beta v u.

Space is discretized by a conservative finite-volume scheme on a vertex grid
r_0 = 0 < r_1 < ... < r_N = R_max.  Node i owns the shell between the
neighbouring midpoints, fluxes use the face areas r^{d-1}, and the potential
enters through shell averages.  The resulting generator is symmetric with
respect to the cell volumes, conserves mass exactly at beta = 0 under the free
(no-flux) outer condition, and reduces to (d/2) u_rr at the origin.
"""
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from ._validation import InstabilityError, check_int, check_scalar
from .greens_kernel import sphere_area
from .potentials import RadialField, RadialPotential


@dataclass
class RadialGrid:
    """Radial nodes, time step and outer boundary rule.

    ``spacing`` is "uniform" or "graded" (uniform core, then geometric
    stretching).  ``dt_growth`` > 1 lets the time step grow geometrically up to
    ``dt_max``; both relax the dt <= h^2 rule and are meant for long horizons.
    """
    nodes: np.ndarray
    d: int
    dt: float
    boundary: str = "free"
    spacing: str = "uniform"
    dt_growth: float = 1.0
    dt_max: float = None

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float)
        if self.nodes[0] != 0 or np.any(np.diff(self.nodes) <= 0):
            raise ValueError("grid nodes must start at 0 and increase strictly")
        if self.boundary not in ("free", "absorbing"):
            raise ValueError(f"unknown boundary rule {self.boundary!r}")
        check_scalar(self.dt, "dt", positive=True)
        if self.dt_growth < 1:
            raise ValueError("dt_growth must be >= 1")
        if self.dt_max is None:
            self.dt_max = self.dt

    @property
    def R_max(self):
        return float(self.nodes[-1])

    @property
    def h_min(self):
        return float(np.min(np.diff(self.nodes)))

    @property
    def n_r(self):
        return self.nodes.size

    @property
    def contamination_time(self):
        """Time after which the outer boundary can reach the region r <~ R_max/4."""
        return self.R_max ** 2 / 16.0

    @classmethod
    def uniform(cls, R_max, h, d, dt=None, boundary="free", align=None):
        """Uniform grid; ``align`` places a cell face exactly at that radius."""
        R_max = check_scalar(R_max, "R_max", positive=True)
        h = check_scalar(h, "h", positive=True)
        if align is not None:
            m = max(1, round(align / h - 0.5))
            h = align / (m + 0.5)
        n = int(math.ceil(R_max / h))
        nodes = h * np.arange(n + 1)
        return cls(nodes, d, h * h if dt is None else dt, boundary, "uniform")

    @classmethod
    def graded(cls, R_max, h, d, r_core, growth=1.03, h_max=None, dt=None, dt_growth=1.0,
               dt_max=None, boundary="free", align=None):
        """Uniform spacing h on [0, r_core], then spacing multiplied by ``growth``."""
        if align is not None:
            m = max(1, round(align / h - 0.5))
            h = align / (m + 0.5)
        h_max = np.inf if h_max is None else h_max
        nodes = list(h * np.arange(int(math.ceil(r_core / h)) + 1))
        step = h
        while nodes[-1] < R_max:
            step = min(step * growth, h_max)
            nodes.append(nodes[-1] + step)
        return cls(np.array(nodes), d, h * h if dt is None else dt, boundary, "graded",
                   dt_growth, dt_max)

    def validate_for(self, v, t_end):
        need = 4 * max(math.sqrt(t_end), v.R_supp)
        if self.R_max < need * (1 - 1e-12):
            raise ValueError(f"R_max={self.R_max} < 4 max(sqrt(t_end), R_supp) = {need}")
        if self.d != v.d:
            raise ValueError("grid and potential dimensions differ")

    def volumes(self):
        r = self.nodes
        f = np.concatenate([[0.0], 0.5 * (r[1:] + r[:-1]), [r[-1]]])
        return (f[1:] ** self.d - f[:-1] ** self.d) / self.d, f

    def to_dict(self):
        return {"R_max": self.R_max, "n_r": self.n_r, "h_min": self.h_min, "dt": self.dt,
                "spacing": self.spacing, "boundary": self.boundary, "d": self.d,
                "dt_growth": self.dt_growth, "dt_max": self.dt_max}


def default_grid(v, t_end, h=0.05, growth=1.03, dt_max=1.0, boundary="free"):
    """Graded grid adequate up to t_end: R_max = 4 max(sqrt(t_end), R_supp).

    Uniform spacing h on [0, 2 R_supp] with a face at R_supp, dt starting at
    h^2 and growing by 1% per step up to dt_max.
    """
    R = v.R_supp
    R_max = 4 * max(math.sqrt(t_end), R)
    return RadialGrid.graded(R_max, h, v.d, r_core=2 * R, growth=growth, dt=h * h,
                             dt_growth=1.01, dt_max=dt_max, boundary=boundary, align=R)


class _Generator:
    """Tridiagonal pieces of V du/dt = (S + beta V diag(vbar)) u."""

    def __init__(self, grid, v, beta):
        r = grid.nodes
        d = grid.d
        self.grid = grid
        self.V, faces = grid.volumes()
        inner = faces[1:-1]
        self.c = 0.5 * inner ** (d - 1) / np.diff(r)  # face conductances
        self.vbar = v.cell_average(faces) if v is not None else np.zeros_like(r)
        self.beta = beta
        self.diag_S = -np.concatenate([self.c, [0.0]]) - np.concatenate([[0.0], self.c])
        self.absorbing = grid.boundary == "absorbing"

    def bands(self, theta_dt):
        """Banded form of V - theta_dt (S + beta V vbar)."""
        n = self.V.size
        ab = np.zeros((3, n))
        ab[1] = self.V - theta_dt * (self.diag_S + self.beta * self.V * self.vbar)
        ab[0, 1:] = -theta_dt * self.c
        ab[2, :-1] = -theta_dt * self.c
        if self.absorbing:
            ab[1, -1] = 1.0
            ab[2, -2] = 0.0  # row N: u_N = 0
        return ab

    def apply(self, u, theta_dt):
        """(V + theta_dt (S + beta V vbar)) u."""
        out = (self.V + theta_dt * (self.diag_S + self.beta * self.V * self.vbar)) * u
        out[:-1] += theta_dt * self.c * u[1:]
        out[1:] += theta_dt * self.c * u[:-1]
        if self.absorbing:
            out[-1] = 0.0
        return out

    def rate(self, u):
        """du/dt at the nodes (for residual checks)."""
        out = (self.diag_S + self.beta * self.V * self.vbar) * u
        out[:-1] += self.c * u[1:]
        out[1:] += self.c * u[:-1]
        return out / self.V


def grid_critical_beta(v, grid, bracket=None):
    """Critical coupling of the discretized operator (d >= 3).

    Zero-energy shooting from the origin: outside supp(v) the discrete flux
    F = c_i (u_{i+1} - u_i) is constant, so the limit u(infinity) equals
    u_K + F sum_{i>=K} 1/c_i, the sum being closed beyond R_max by its
    continuum value 2 R^{2-d}/(d-2).  beta_cr(grid) is the root of u(infinity),
    i.e. the coupling at which a zero-energy solution decays at infinity.
    """
    from scipy.optimize import brentq
    if grid.d < 3:
        return 0.0
    gen = _Generator(grid, v, 0.0)
    c, V, vb = gen.c, gen.V, gen.vbar
    K = int(np.searchsorted(grid.nodes, v.R_supp)) + 2
    K = min(K, c.size - 1)
    inv_tail = np.cumsum((1.0 / c)[::-1])[::-1]
    tail_closure = 2 * grid.R_max ** (2 - grid.d) / (grid.d - 2)

    def u_inf(beta):
        u_prev, u = 0.0, 1.0
        flux = 0.0
        for i in range(K):
            # V_i beta vbar_i u_i + c_i (u_{i+1} - u_i) - c_{i-1} (u_i - u_{i-1}) = 0
            flux = flux - beta * V[i] * vb[i] * u
            u_prev, u = u, u + flux / c[i]
        return u + flux * (inv_tail[K] + tail_closure)

    if bracket is None:
        from .birman_schwinger import critical_beta
        b0 = critical_beta(v)
        bracket = (0.8 * b0, 1.25 * b0)
    return float(brentq(u_inf, *bracket, xtol=1e-15, rtol=1e-14))


@dataclass
class EvolutionResult:
    times: np.ndarray
    fields: list
    probe_radii: np.ndarray
    probe_values: np.ndarray
    grid: RadialGrid
    params: dict = field(default_factory=dict)

    def field(self, i):
        return RadialField(self.grid.nodes, self.fields[i], self.grid.d,
                           label=f"u(t={self.times[i]:g})", meta={"t": float(self.times[i])})

    def final(self):
        return self.field(len(self.times) - 1)

    def mass(self, i):
        V, _ = self.grid.volumes()
        return float(sphere_area(self.grid.d) * np.sum(V * self.fields[i]))

    def probe(self, radius):
        j = int(np.argmin(np.abs(self.probe_radii - radius)))
        return self.probe_values[:, j]


def _sample_times(t_end, samples):
    if samples is None:
        return np.array([t_end])
    if np.isscalar(samples):
        return np.linspace(0, t_end, int(samples) + 1)[1:]
    s = np.unique(np.asarray(samples, dtype=float))
    if s[0] < 0 or s[-1] > t_end * (1 + 1e-12):
        raise ValueError("sample times must lie in [0, t_end]")
    return s


def evolve(v, beta, init, grid, t_end, samples=None, probes=(0.0,), startup_steps=2,
           check_domain=True, keep_fields=True):
    """Crank-Nicolson solution of u_t = (1/2) Delta u + beta v u.

    ``init`` is an array on grid.nodes, a RadialField or a callable of r.
    ``samples`` are output times (an int means that many equispaced times).
    The first ``startup_steps`` steps are each replaced by two backward Euler
    half steps, which damps the non-smooth part of delta-like data.
    """
    beta = check_scalar(beta, "beta", nonneg=True)
    t_end = check_scalar(t_end, "t_end", positive=True)
    if v is not None and check_domain:
        grid.validate_for(v, t_end)
    r = grid.nodes
    if callable(init) and not isinstance(init, RadialField):
        u = np.asarray(init(r), dtype=float) * np.ones_like(r)
    elif isinstance(init, RadialField):
        u = init(r)
    else:
        u = np.asarray(init, dtype=float).copy()
    if u.shape != r.shape:
        raise ValueError("initial data must live on the grid nodes")
    if np.any(u < 0):
        raise ValueError("initial data must be non-negative")
    if grid.boundary == "absorbing":
        u[-1] = 0.0
    gen = _Generator(grid, v, beta)
    probes = np.atleast_1d(np.asarray(probes, dtype=float))
    sample_t = _sample_times(t_end, samples)
    vsup = v.sup if v is not None else 0.0
    u0max = max(float(np.max(np.abs(u))), 1e-300)

    times, fields, pvals = [], [], []
    if sample_t[0] == 0:
        times.append(0.0)
        fields.append(u.copy())
        pvals.append(np.interp(probes, r, u))
        sample_t = sample_t[1:]

    t = 0.0
    dt = grid.dt
    step = 0
    k = 0
    cache = {}

    def solve(u, h, theta):
        key = (h, theta)
        if key not in cache:
            if len(cache) > 8:
                cache.clear()
            cache[key] = gen.bands(theta * h)
        rhs = gen.apply(u, (1 - theta) * h)
        return solve_banded((1, 1), cache[key], rhs, check_finite=False)

    while k < sample_t.size:
        target = sample_t[k]
        h = min(dt, target - t)
        if h <= 1e-14 * max(1.0, target):
            t = target
        else:
            if step < startup_steps:
                u = solve(u, 0.5 * h, 1.0)
                u = solve(u, 0.5 * h, 1.0)
            else:
                u = solve(u, h, 0.5)
            t += h
            step += 1
            if grid.dt_growth > 1 and step >= startup_steps:
                dt = min(dt * grid.dt_growth, grid.dt_max)
            umax = float(np.max(np.abs(u)))
            log_bound = math.log(u0max) + (beta * vsup + 1.0) * t + math.log(10.0)
            if not np.isfinite(umax) or (umax > 0 and math.log(umax) > log_bound):
                raise InstabilityError(
                    f"max|u| = {umax:.3e} exceeds the growth bound exp({log_bound:.4g}) at t = {t:.4g}",
                    diagnostics={"t": t, "step": step, "max_u": umax, "log_bound": log_bound, "dt": h})
        if abs(t - target) <= 1e-12 * max(1.0, target):
            t = target
            times.append(t)
            if keep_fields:
                fields.append(u.copy())
            pvals.append(np.interp(probes, r, u))
            k += 1
    if not keep_fields:
        fields = [u.copy()]
    params = {"beta": beta, "t_end": t_end, **grid.to_dict(),
              "potential": v.to_dict() if v is not None else None}
    return EvolutionResult(np.array(times), fields, probes, np.array(pvals), grid, params)


def partition_function(v, beta, grid, t_end, samples=None, probes=(0.0,), **kw):
    """Z_{beta,t}(x): evolution of the initial data u = 1."""
    res = evolve(v, beta, np.ones(grid.n_r), grid, t_end, samples, probes, **kw)
    res.params["quantity"] = "Z"
    return res


def delta_approximation(grid, y, width=None):
    """Normalized (unit mass) Gaussian shell of width 3 spacings at radius y.

    For y > 0 it approximates the uniform measure on the sphere |x| = y, so the
    evolved field is the spherical average of p_beta(t, y e, x) over e.
    """
    r = grid.nodes
    y = check_scalar(y, "y", nonneg=True)
    if y > grid.R_max:
        raise ValueError("source radius outside the grid")
    if width is None:
        j = int(np.clip(np.searchsorted(r, y), 1, r.size - 1))
        width = 3.0 * (r[j] - r[j - 1])
    u = np.exp(-0.5 * ((r - y) / width) ** 2)
    V, _ = grid.volumes()
    return u / (sphere_area(grid.d) * np.sum(V * u))


def fundamental_solution(v, beta, y, grid, t_end, samples=None, probes=(0.0,), width=None, **kw):
    """p_beta(t, y, .) from a normalized narrow source at radius y."""
    init = delta_approximation(grid, y, width)
    res = evolve(v, beta, init, grid, t_end, samples, probes, **kw)
    res.params.update({"quantity": "p", "y": float(y)})
    return res


# ---------------------------------------------------------------------------
# time-series analysis

def lyapunov_exponent(times, series, window=None, return_diagnostics=False, contamination_time=None):
    """Least-squares slope of ln u over a time window.

    Diagnostics include the slopes over the first and second half of the
    window; their difference measures how far the series is from a pure
    exponential.
    """
    t = np.asarray(times, dtype=float)
    u = np.asarray(series, dtype=float)
    if window is not None:
        a, b = window
        if contamination_time is not None and b > contamination_time:
            raise ValueError(f"window end {b} beyond the boundary contamination time {contamination_time}")
        m = (t >= a - 1e-12) & (t <= b + 1e-12)
        t, u = t[m], u[m]
    if t.size < 2:
        raise ValueError("need at least two samples in the window")
    if np.any(u <= 0):
        raise ValueError("series must be strictly positive")
    y = np.log(u)
    slope = np.polyfit(t, y, 1)[0]
    if not return_diagnostics:
        return float(slope)
    half = t.size // 2
    s1 = np.polyfit(t[:half + 1], y[:half + 1], 1)[0] if half >= 1 else slope
    s2 = np.polyfit(t[half:], y[half:], 1)[0] if t.size - half >= 2 else slope
    return float(slope), {"slope_first_half": float(s1), "slope_second_half": float(s2),
                          "drift": float(s2 - s1)}


FIT_MODELS = ("const", "exp", "sqrt_t", "t_over_ln_t", "linear_t", "power")


def asymptotic_fit(times, series, model):
    """Least-squares fit of a large-t model; returns (params, residual).

    const: y = c; exp: y = a e^{l t}; sqrt_t: y = k sqrt(t); linear_t: y = k t;
    t_over_ln_t: y ln(t)/t = k (fit in the transformed variable, the spread
    max/min - 1 of the transformed series is reported); power: y = a t^p.
    The residual is the RMS relative misfit.
    """
    if model not in FIT_MODELS:
        raise ValueError(f"unknown model {model!r}; choose from {FIT_MODELS}")
    t = np.asarray(times, dtype=float)
    y = np.asarray(series, dtype=float)
    if t.size < 10:
        raise ValueError("need at least 10 samples")
    if model in ("power", "sqrt_t", "t_over_ln_t", "linear_t") and (t.min() <= 0 or t.max() / t.min() < 10 * (1 - 1e-9)):
        raise ValueError("samples must span at least one decade of t > 0")

    def lstsq(X, b):
        if np.linalg.matrix_rank(X) < X.shape[1]:
            raise np.linalg.LinAlgError("degenerate design matrix")
        return np.linalg.lstsq(X, b, rcond=None)[0]

    if model == "const":
        c = lstsq(np.ones((t.size, 1)), y)[0]
        fit, params = np.full_like(y, c), {"c": float(c)}
    elif model == "linear_t":
        k = lstsq(t[:, None], y)[0]
        fit, params = k * t, {"k": float(k)}
    elif model == "sqrt_t":
        k = lstsq(np.sqrt(t)[:, None], y)[0]
        fit, params = k * np.sqrt(t), {"k": float(k)}
    elif model == "t_over_ln_t":
        if t.min() <= 1:
            raise ValueError("t_over_ln_t needs t > 1")
        z = y * np.log(t) / t
        k = lstsq(np.ones((t.size, 1)), z)[0]
        fit = k * t / np.log(t)
        params = {"k": float(k), "spread": float(z.max() / z.min() - 1) if z.min() > 0 else float("inf")}
    else:
        if np.any(y <= 0):
            raise ValueError(f"model {model} needs a positive series")
        X = np.column_stack([np.ones_like(t), t if model == "exp" else np.log(t)])
        a, b = lstsq(X, np.log(y))
        if model == "exp":
            fit, params = np.exp(a + b * t), {"a": float(np.exp(a)), "lambda": float(b)}
        else:
            fit, params = np.exp(a) * t ** b, {"a": float(np.exp(a)), "p": float(b)}
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(y != 0, (y - fit) / y, y - fit)
    return params, float(np.sqrt(np.mean(rel ** 2)))


def duhamel_check(v, beta, grid, t_end, n_quad=None):
    """Compare Z_t - 1 with int_0^t (e^{s H} beta v)(x) ds.

    Both sides are produced by the same spatial operator; the time integral is
    done with the trapezoid rule on the evolved source.  Returns the max-norm
    difference over the grid.
    """
    n_quad = n_quad or max(20, int(round(t_end / grid.dt)))
    z = partition_function(v, beta, grid, t_end, check_domain=False).final().values
    _, faces = grid.volumes()
    src = beta * v.cell_average(faces)
    ts = np.linspace(0, t_end, n_quad + 1)
    res = evolve(v, beta, src, grid, t_end, samples=ts, check_domain=False)
    w = np.full(ts.size, t_end / n_quad)
    w[[0, -1]] *= 0.5
    integral = sum(wi * f for wi, f in zip(w, res.fields))
    return float(np.max(np.abs((z - 1) - integral)))
