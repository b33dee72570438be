"""Weighted Brownian paths for the polymer measure dP = exp(beta int v) dW / Z.

Paths are generated in fixed-size blocks; block b draws from a Philox stream
keyed by (seed, b), so path j is a function of (seed, j) alone and the result
does not depend on how many workers share the blocks.
"""
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._validation import NumericalError, check_int, check_scalar
from .greens_kernel import sphere_area
from .potentials import RadialField

BLOCK_SIZE = 4096
ESS_WARNING = 10.0


class EmptyConditioningError(NumericalError):
    """No path satisfies the pinning event; use bridge sampling instead."""


class DegenerateWeightsWarning(RuntimeWarning):
    pass


def _effective_sample_size(log_w):
    w = np.exp(log_w - np.max(log_w))
    return float(w.sum() ** 2 / np.sum(w * w))


@dataclass
class PathEnsemble:
    """Positions at the recorded times plus the Gibbs log-weights."""
    d: int
    T: float
    n_steps: int
    n_paths: int
    seed: int
    beta: float
    record_steps: np.ndarray
    positions: np.ndarray          # (n_record, n_paths, d)
    log_weights: np.ndarray
    params: dict = field(default_factory=dict)
    warning: str = None

    @property
    def dt(self):
        return self.T / self.n_steps

    @property
    def record_times(self):
        return self.record_steps * self.dt

    @property
    def weights(self):
        """Unnormalized weights exp(beta int v dt)."""
        return np.exp(self.log_weights)

    def normalized_weights(self):
        w = np.exp(self.log_weights - self.log_weights.max())
        return w / w.sum()

    @property
    def ess(self):
        return _effective_sample_size(self.log_weights)

    def z_estimate(self):
        """Mean weight and its standard error (estimates Z_{beta,T}(0))."""
        m = self.log_weights.max()
        w = np.exp(self.log_weights - m)
        scale = math.exp(m)
        return float(w.mean() * scale), float(w.std(ddof=1) / math.sqrt(w.size) * scale)

    def at(self, t):
        """Positions at recorded time t (absolute, not a fraction)."""
        k = np.flatnonzero(np.isclose(self.record_times, t, rtol=1e-12, atol=1e-12 * self.T))
        if k.size == 0:
            raise KeyError(f"time {t} was not recorded; recorded: {self.record_times.tolist()}")
        return self.positions[k[0]]

    def summary(self):
        z, se = self.z_estimate()
        return {"params": dict(self.params), "Z_hat": z, "Z_se": se, "ess": self.ess,
                "warning": self.warning}


def _block_stream(seed, block):
    ss = np.random.SeedSequence(seed, spawn_key=(block,))
    return np.random.Generator(np.random.Philox(ss))


def _run_block(v, beta, d, dt, n_steps, n, seed, block, record_steps):
    rng = _block_stream(seed, block)
    x = np.zeros((n, d))
    out = np.empty((record_steps.size, n, d))
    slot = {int(s): i for i, s in enumerate(record_steps)}
    if 0 in slot:
        out[slot[0]] = 0.0
    v_prev = np.full(n, float(v(0.0)))
    acc = np.zeros(n)
    sq = math.sqrt(dt)
    for i in range(1, n_steps + 1):
        x += sq * rng.standard_normal((n, d))
        v_cur = v(np.sqrt(np.einsum("ij,ij->i", x, x)))
        acc += v_prev + v_cur
        v_prev = v_cur
        if i in slot:
            out[slot[i]] = x
    return out, 0.5 * beta * dt * acc


def sample_paths(v, beta, T, n_steps, n_paths, seed=0, d=None, record=(1.0,),
                 n_jobs=1, check_step=True):
    """Simulate n_paths Brownian paths from 0 and weight them by exp(beta int v).

    ``record`` lists fractions of T at which positions are stored (they are
    rounded to the step grid).  The path integral uses the trapezoidal rule.
    """
    beta = check_scalar(beta, "beta", nonneg=True)
    T = check_scalar(T, "T", positive=True)
    n_steps = check_int(n_steps, "n_steps", minimum=1)
    n_paths = check_int(n_paths, "n_paths", minimum=1)
    seed = check_int(seed, "seed", minimum=0)
    d = v.d if d is None else check_int(d, "d", minimum=1)
    dt = T / n_steps
    if check_step and dt > 0.1 * (2 * v.R_supp) ** 2:
        raise ValueError(f"dt = {dt:g} exceeds 0.1 (diameter of v)^2 = {0.4 * v.R_supp ** 2:g}")
    frac = np.atleast_1d(np.asarray(record, dtype=float))
    if np.any(frac < 0) or np.any(frac > 1):
        raise ValueError("record fractions must lie in [0, 1]")
    record_steps = np.unique(np.rint(frac * n_steps).astype(int))

    sizes = [BLOCK_SIZE] * (n_paths // BLOCK_SIZE)
    if n_paths % BLOCK_SIZE:
        sizes.append(n_paths % BLOCK_SIZE)
    jobs = [(v, beta, d, dt, n_steps, n, seed, b, record_steps) for b, n in enumerate(sizes)]
    if n_jobs == 1:
        parts = [_run_block(*j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            parts = list(pool.map(lambda j: _run_block(*j), jobs))
    positions = np.concatenate([p[0] for p in parts], axis=1)
    log_w = np.concatenate([p[1] for p in parts])

    params = {"d": d, "T": T, "n_steps": n_steps, "n_paths": n_paths, "seed": seed,
              "beta": beta, "dt": dt, "block_size": BLOCK_SIZE, "potential": v.to_dict()}
    ens = PathEnsemble(d, T, n_steps, n_paths, seed, beta, record_steps, positions, log_w, params)
    ess = ens.ess
    if ess < ESS_WARNING:
        ens.warning = f"effective sample size {ess:.2f} < {ESS_WARNING:g}; estimates are unreliable"
        warnings.warn(ens.warning, DegenerateWeightsWarning, stacklevel=2)
    return ens


# ---------------------------------------------------------------------------
# endpoint law

@dataclass
class EndpointHistogram:
    """Weighted radial histogram of |x(T)|; ``overflow`` is the mass beyond edges[-1]."""
    edges: np.ndarray
    masses: np.ndarray
    overflow: float
    d: int
    ess: float
    scale: float = 1.0

    def density(self):
        """Radial density per unit volume in each shell."""
        e = self.edges
        vol = sphere_area(self.d) * (e[1:] ** self.d - e[:-1] ** self.d) / self.d
        return self.masses / vol

    def all_masses(self):
        return np.append(self.masses, self.overflow)

    def to_dict(self):
        return {"edges": self.edges.tolist(), "masses": self.masses.tolist(),
                "overflow": self.overflow, "ess": self.ess, "scale": self.scale}


def endpoint_density(e: PathEnsemble, bins, scale=1.0, weights=None):
    """Self-normalized histogram of |x(T)|/scale."""
    edges = np.asarray(bins, dtype=float)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0) or edges[0] < 0:
        raise ValueError("bins must be increasing non-negative edges")
    w = e.normalized_weights() if weights is None else np.asarray(weights, dtype=float)
    x = e.at(e.T)
    r = np.sqrt(np.einsum("ij,ij->i", x, x)) / scale
    idx = np.searchsorted(edges, r, side="right") - 1
    inside = (idx >= 0) & (idx < edges.size - 1)
    masses = np.bincount(idx[inside], weights=w[inside], minlength=edges.size - 1)
    overflow = float(w[r >= edges[-1]].sum())
    total = masses.sum() + overflow
    ess = float(w.sum() ** 2 / np.sum(w * w)) if np.any(w) else 0.0
    return EndpointHistogram(edges, masses / total, overflow / total, e.d, ess, scale)


def radial_law_masses(density, edges, d, r_max=None, n=4001):
    """Bin masses (plus overflow) of the law proportional to density(|x|) on R^d.

    ``density`` is a callable of r or a RadialField; the law is normalized on
    [0, r_max] (default: the field's last node).
    """
    edges = np.asarray(edges, dtype=float)
    if r_max is None:
        if not isinstance(density, RadialField):
            raise ValueError("r_max is required for a callable density")
        r_max = float(density.r[-1])
    r = np.linspace(0.0, r_max, n)
    f = np.asarray(density(r), dtype=float) * r ** (d - 1)
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (f[1:] + f[:-1]) * np.diff(r))])
    cdf /= cdf[-1]
    at = np.interp(np.append(edges, r_max), r, cdf)
    return np.diff(at)


def tv_distance(hist: EndpointHistogram, reference):
    """Total variation between bin masses (overflow bin included)."""
    ref = np.asarray(reference, dtype=float)
    p = hist.all_masses()
    if ref.shape != p.shape:
        raise ValueError("reference must have one mass per bin plus overflow")
    return 0.5 * float(np.abs(p - ref / ref.sum()).sum())


# ---------------------------------------------------------------------------
# diffusive scaling

@dataclass
class CovarianceTable:
    """Weighted statistics of y(t) = x(tT)/sqrt(T) at fractions t of T."""
    times: np.ndarray
    cov: np.ndarray            # (n_t, d, d)
    var_se: np.ndarray         # (n_t, d)
    inc_corr: np.ndarray       # (n_t - 1, d): corr(y(t_k) - y(t_{k-1}), y(t_{k-1}))
    inc_corr_se: np.ndarray
    ess: float

    def variances(self):
        return np.diagonal(self.cov, axis1=1, axis2=2)

    def to_rows(self):
        rows = []
        for k, t in enumerate(self.times):
            for i in range(self.cov.shape[1]):
                rows.append({"t": float(t), "coord": i, "var": float(self.cov[k, i, i]),
                             "var_se": float(self.var_se[k, i])})
        return rows


def _weighted_se(w, f):
    """Delta-method standard error of sum(w f) for normalized weights w (f per column)."""
    f = f.reshape(f.shape[0], -1)
    dev = w[:, None] * (f - w @ f)
    return np.sqrt(np.sum(dev ** 2, axis=0))


def _weighted_corr(w, a, b):
    """Weighted correlation of columns of a and b with a delta-method s.e."""
    ma, mb = w @ a, w @ b
    sa = np.sqrt(w @ (a - ma) ** 2)
    sb = np.sqrt(w @ (b - mb) ** 2)
    ua, ub = (a - ma) / sa, (b - mb) / sb
    rho = w @ (ua * ub)
    infl = ua * ub - 0.5 * rho * (ua ** 2 + ub ** 2)
    se = np.sqrt(np.sum((w[:, None] * (infl - w @ infl)) ** 2, axis=0))
    return rho, se


def diffusive_rescale_stats(e: PathEnsemble, times=None, weights=None):
    """Weighted covariance of y(t) = x(tT)/sqrt(T) and increment correlations.

    ``times`` are fractions of T and must have been recorded.  The increment
    proxy at t_k is the per-coordinate weighted correlation between
    y(t_k) - y(t_{k-1}) and y(t_{k-1}).
    """
    frac = e.record_times / e.T if times is None else np.atleast_1d(np.asarray(times, float))
    frac = frac[frac > 0]
    w = e.normalized_weights() if weights is None else np.asarray(weights, float)
    w = w / w.sum()
    ys = [e.at(t * e.T) / math.sqrt(e.T) for t in frac]
    cov, var_se = [], []
    for y in ys:
        m = w @ y
        c = y - m
        cov.append((w[:, None] * c).T @ c)
        var_se.append(_weighted_se(w, c ** 2))
    inc, inc_se = [], []
    for k in range(1, len(ys)):
        rho, se = _weighted_corr(w, ys[k] - ys[k - 1], ys[k - 1])
        inc.append(rho)
        inc_se.append(se)
    d = e.d
    empty = np.zeros((0, d))
    return CovarianceTable(frac, np.array(cov), np.array(var_se),
                           np.array(inc) if inc else empty, np.array(inc_se) if inc_se else empty,
                           float(1.0 / np.sum(w * w)))


# ---------------------------------------------------------------------------
# pinned measure

@dataclass
class PinnedWeights:
    weights: np.ndarray
    tol_radius: float
    n_survivors: int
    ess: float


def pinned_weights(e: PathEnsemble, tol_radius):
    """Weights of the Gibbs measure conditioned on |x(T)| <= tol_radius."""
    tol = check_scalar(tol_radius, "tol_radius", positive=True, finite=False)
    x = e.at(e.T)
    keep = np.sqrt(np.einsum("ij,ij->i", x, x)) <= tol
    n = int(keep.sum())
    if n == 0:
        raise EmptyConditioningError(
            f"no path ends within |x(T)| <= {tol:g}; enlarge the ball or use bridge sampling")
    w = np.where(keep, np.exp(e.log_weights - e.log_weights[keep].max()), 0.0)
    w /= w.sum()
    return PinnedWeights(w, tol, n, float(1.0 / np.sum(w * w)))


@dataclass
class BridgeComparison:
    """Pinned second moments of y(t) against the bridge prediction."""
    times: np.ndarray
    second_moment: np.ndarray   # (n_t, d)
    bridge: np.ndarray          # (n_t, d)
    se: np.ndarray              # (n_t, d)
    tol_radius: float
    ess: float

    def z_scores(self):
        return (self.second_moment - self.bridge) / self.se


def bridge_covariance_check(e: PathEnsemble, tol_radius, times=(0.5,)):
    """Compare pinned E[y_i(t)^2] with the Brownian-bridge value.

    A Brownian path from 0 conditioned on y(1) = z has y(t) ~ N(t z, t(1-t)),
    so for the ball-conditioned ensemble the bridge prediction is
    t(1-t) + t^2 E[y_i(1)^2] with the endpoint moment taken from the same
    weighted sample.  The standard error is that of the difference.
    """
    pw = pinned_weights(e, tol_radius)
    w = pw.weights
    sel = w > 0
    w = w[sel]
    y1 = e.at(e.T)[sel] / math.sqrt(e.T)
    times = np.atleast_1d(np.asarray(times, float))
    sm, br, se = [], [], []
    for t in times:
        yt = e.at(t * e.T)[sel] / math.sqrt(e.T)
        f = yt ** 2 - t * t * y1 ** 2
        sm.append(w @ yt ** 2)
        br.append(t * (1 - t) + t * t * (w @ y1 ** 2))
        se.append(_weighted_se(w, f))
    return BridgeComparison(times, np.array(sm), np.array(br), np.array(se), pw.tol_radius, pw.ess)


# ---------------------------------------------------------------------------
# PDE-based checks of the transition densities and the limiting process

def _psi_values(psi, r):
    ev = psi.meta.get("evaluate") if isinstance(psi, RadialField) else None
    return np.asarray(ev(r) if ev is not None else psi(r), dtype=float)


def _source_value(grid, src, field_values):
    """<source, f> for a unit-mass source on the grid (shell-averaged f at y)."""
    V, _ = grid.volumes()
    return float(sphere_area(grid.d) * np.sum(V * src * field_values))


def q_transition_check(v, beta, s, t, y, T, grid):
    """|int q^T((s,y),(t,x)) dx - 1| with q = p(t-s,y,x) Z_{T-t}(x) / Z_{T-s}(y).

    p(t-s, y, .) comes from a narrow unit-mass source at radius y, so the
    denominator is the same source applied to Z_{T-s}.
    """
    from .feynman_kac_pde import delta_approximation, evolve
    s, t, T = (check_scalar(a, n, nonneg=True) for a, n in ((s, "s"), (t, "t"), (T, "T")))
    if not s < t <= T:
        raise ValueError("need 0 <= s < t <= T")
    src = delta_approximation(grid, y)
    p = evolve(v, beta, src, grid, t - s, check_domain=False).final().values
    ones = np.ones(grid.n_r)
    z_late = ones if t == T else evolve(v, beta, ones, grid, T - t, check_domain=False).final().values
    z_early = evolve(v, beta, ones, grid, T - s, check_domain=False).final().values
    V, _ = grid.volumes()
    num = sphere_area(grid.d) * np.sum(V * p * z_late)
    return abs(num / _source_value(grid, src, z_early) - 1.0)


def drift_limit_check(v, beta, horizon, grid, psi=None, r_max=3.0):
    """max |d/dr ln Z_{horizon}(r) - d/dr ln psi_beta(r)| / max |d/dr ln psi_beta| on (0, r_max]."""
    from .birman_schwinger import eigenfunction_psi_beta
    from .feynman_kac_pde import evolve
    z = evolve(v, beta, np.ones(grid.n_r), grid, horizon, check_domain=False).final().values
    r = grid.nodes
    sel = (r > 0) & (r <= r_max)
    if psi is None:
        psi = eigenfunction_psi_beta(v, beta)
    rp = r[r <= r_max + 1.0]
    dz = np.gradient(np.log(z[: rp.size]), rp)
    dpsi = np.gradient(np.log(_psi_values(psi, rp)), rp)
    sel = sel[: rp.size]
    dz, dpsi = dz[sel], dpsi[sel]
    return float(np.max(np.abs(dz - dpsi)) / np.max(np.abs(dpsi)))


@dataclass
class LimitingDensity:
    field: RadialField
    integral: float


def limiting_process_density(v, beta, t, y, grid, psi=None, lam=None):
    """r_beta(t, y, x) = p_beta(t, y, x) psi(x) exp(-lambda0 t) / psi(y).

    The source at y is a narrow unit-mass shell; psi(y) is the same shell
    average, which keeps the identity int r dx = 1 exact in the continuum.
    """
    from .birman_schwinger import eigenfunction_psi_beta, lambda0
    from .feynman_kac_pde import delta_approximation, evolve
    t = check_scalar(t, "t", positive=True)
    lam = lambda0(v, beta) if lam is None else lam
    if lam <= 0:
        raise ValueError("the limiting process needs beta > beta_cr")
    if psi is None:
        psi = eigenfunction_psi_beta(v, beta, lam=lam)
    r = grid.nodes
    psi_r = _psi_values(psi, r)
    src = delta_approximation(grid, y)
    p = evolve(v, beta, src, grid, t, check_domain=False).final().values
    vals = p * psi_r * math.exp(-lam * t) / _source_value(grid, src, psi_r)
    V, _ = grid.volumes()
    integral = float(sphere_area(grid.d) * np.sum(V * vals))
    fld = RadialField(r, vals, grid.d, label=f"r_beta(t={t:g}, y={y:g})",
                      meta={"t": t, "y": float(y), "lambda0": lam, "beta": beta})
    return LimitingDensity(fld, integral)


def invariance_defect(v, beta, t, grid, psi=None, lam=None, r_max=3.0):
    """max_{r <= r_max} |int psi^2(y) r_beta(t,y,x) dy - psi^2(x)| / psi^2(x).

    int psi(y)^2 r(t,y,x) dy = psi(x) exp(-lambda0 t) (e^{tH} psi)(x), so the
    check evolves psi itself.
    """
    from .birman_schwinger import eigenfunction_psi_beta, lambda0
    from .feynman_kac_pde import evolve
    lam = lambda0(v, beta) if lam is None else lam
    if psi is None:
        psi = eigenfunction_psi_beta(v, beta, lam=lam)
    r = grid.nodes
    psi_r = _psi_values(psi, r)
    u = evolve(v, beta, psi_r, grid, t, check_domain=False).final().values
    lhs = psi_r * math.exp(-lam * t) * u
    sel = r <= r_max
    return float(np.max(np.abs(lhs[sel] / psi_r[sel] ** 2 - 1.0)))


def y_independence_defect(v, beta, t, ys, grid, psi=None, lam=None, r_max=3.0):
    """Relative max difference on r <= r_max between r_beta(t, y, .) for the given ys."""
    from .birman_schwinger import eigenfunction_psi_beta, lambda0
    lam = lambda0(v, beta) if lam is None else lam
    if psi is None:
        psi = eigenfunction_psi_beta(v, beta, lam=lam)
    fields = [limiting_process_density(v, beta, t, y, grid, psi, lam).field.values for y in ys]
    sel = grid.nodes <= r_max
    ref = fields[0][sel]
    return float(max(np.max(np.abs(f[sel] - ref) / ref) for f in fields[1:]))


def exact_endpoint_variance(v, beta, T, grid):
    """E_{beta,T}|x(T)|^2 / (d T) from the PDE: (e^{TH}|x|^2)(0) / (d T Z_T(0)).

    The Monte Carlo statistics converge to this value as n_paths grows; its
    distance from 1 is the finite-T part of the diffusive limit.
    """
    from .feynman_kac_pde import evolve
    r = grid.nodes
    z = evolve(v, beta, np.ones_like(r), grid, T, check_domain=False).probe(0.0)[-1]
    m = evolve(v, beta, r * r, grid, T, check_domain=False).probe(0.0)[-1]
    return float(m / (grid.d * T * z))


def exact_pinned_midpoint_variance(v, beta, T, grid):
    """Per-coordinate E[y(1/2)^2] under the measure pinned at x(T) = 0.

    The midpoint density is proportional to p_beta(T/2, 0, x)^2 by symmetry
    of p_beta; the source is a narrow unit-mass blob at the origin.
    """
    from .feynman_kac_pde import delta_approximation, evolve
    p = evolve(v, beta, delta_approximation(grid, 0.0), grid, T / 2, check_domain=False).final().values
    V, _ = grid.volumes()
    r = grid.nodes
    return float(np.sum(V * p * p * r * r) / (grid.d * T * np.sum(V * p * p)))
