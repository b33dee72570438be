"""Radial Nystrom discretization of A(lam) = v R_0(lam) and the spectral data
derived from it: beta(lam), beta_cr, lambda_0(beta), ground states, gamma, c_d,
kappa and the subcritical corrector phi_beta.
"""
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import legendre as L
from scipy import integrate
from scipy.optimize import brentq
from sklearn.base import BaseEstimator

from ._validation import (BracketError, ConvergenceError, SingularSystemError,
                          check_int, check_scalar)
from .greens_kernel import mean_inverse_distance_5d, radial_green_kernel, sphere_area
from .potentials import RadialField, RadialPotential

DEFAULT_NODES = 64
_NG = 64  # Gauss-Legendre order of the sub-integrals that straddle r = s


def _gauss(n, a, b):
    x, w = L.leggauss(n)
    a = np.asarray(a, dtype=float)[..., None]
    b = np.asarray(b, dtype=float)[..., None]
    return a + 0.5 * (b - a) * (x + 1), 0.5 * (b - a) * w


@dataclass
class DiscretizedOperator:
    """Nystrom matrix of A(lam) on the radial nodes of supp(v).

    ``weights`` are volume weights |S^{d-1}| r^{d-1} w_j; ``matrix`` is the
    radial reduction M_ij = v(r_i) K(r_i, r_j) w_j with the diagonal fixed by
    singularity subtraction.
    """
    d: int
    lam: float
    R: float
    nodes: np.ndarray
    gl_weights: np.ndarray
    weights: np.ndarray
    v_nodes: np.ndarray
    matrix: np.ndarray

    @property
    def n(self):
        return self.nodes.size

    def adjoint_vector(self, h):
        """h* with v e^{|x|^2} h* = h on the nodes (zero where v = 0)."""
        vw = self.v_nodes * np.exp(self.nodes ** 2)
        return np.where(vw > 0, h / np.where(vw > 0, vw, 1.0), 0.0)


def _kernel_row_integral(d, lam, R, r, ng=_NG):
    # Phi(r) = int_0^R K(r, s) ds, split at s = r where K has a kink
    s1, w1 = _gauss(ng, 0.0, r)
    s2, w2 = _gauss(ng, r, R)
    rr = np.asarray(r, dtype=float)[..., None]
    return (radial_green_kernel(d, lam, rr, s1) * w1).sum(-1) + (radial_green_kernel(d, lam, rr, s2) * w2).sum(-1)


def assemble_operator(v: RadialPotential, lam, n=DEFAULT_NODES, subtract=True):
    """Nystrom discretization of A(lam) restricted to radial functions."""
    lam = check_scalar(lam, "lambda", nonneg=True)
    n = check_int(n, "n", minimum=8)
    d = v.d
    if d <= 2 and lam == 0:
        raise ValueError(f"lambda must be > 0 for d={d}")
    R = v.R_supp
    s, w = v.radial_quadrature(n)
    K = radial_green_kernel(d, lam, s[:, None], s[None, :])
    Kw = K * w[None, :]
    if subtract:
        phi = _kernel_row_integral(d, lam, R, s)
        np.fill_diagonal(Kw, 0.0)
        Kw[np.diag_indices(n)] = phi - Kw.sum(1)
    vn = v(s)
    M = vn[:, None] * Kw
    if not np.all(np.isfinite(M)):
        raise ValueError("non-finite entries in the discretized operator")
    vol = sphere_area(d) * s ** (d - 1) * w
    return DiscretizedOperator(d, lam, R, s, w, vol, vn, M)


def principal_eigenvalue(op, tol=1e-12, max_iter=100_000):
    """Dominant eigenpair (mu, h) of -M by power iteration.

    Returns h > 0 with unit Euclidean norm.  The residual test is
    ||(-M)h - mu h|| <= tol * max(1, mu) * ||h||.
    """
    M = op.matrix if isinstance(op, DiscretizedOperator) else np.asarray(op, dtype=float)
    A = -M
    # shift keeps the iteration matrix entrywise non-negative
    shift = max(0.0, -float(np.min(np.diag(A))))
    B = A + shift * np.eye(A.shape[0]) if shift > 0 else A
    h = np.ones(A.shape[0]) / math.sqrt(A.shape[0])
    res = np.inf
    mu = 0.0
    for it in range(max_iter):
        y = B @ h
        nrm = np.linalg.norm(y)
        if nrm == 0:
            raise ConvergenceError("power iteration collapsed to zero", residual=res)
        h = y / nrm
        Ah = A @ h
        mu = float(h @ Ah)
        res = float(np.linalg.norm(Ah - mu * h))
        if res <= tol * max(1.0, abs(mu)):
            break
    else:
        raise ConvergenceError(f"power iteration did not converge in {max_iter} steps "
                               f"(residual {res:.3e})", residual=res)
    if h.sum() < 0:
        h = -h
    return mu, h


def beta_of_lambda(v, lam, n=DEFAULT_NODES):
    """beta(lam) = 1 / (principal eigenvalue of -A(lam))."""
    mu, _ = principal_eigenvalue(assemble_operator(v, lam, n))
    return 1.0 / mu


def discrete_critical_beta(v, n=DEFAULT_NODES):
    if v.d <= 2:
        return 0.0
    return beta_of_lambda(v, 0.0, n)


def critical_beta(v, n=DEFAULT_NODES, return_error=False):
    """beta_cr = 1/mu(0), Richardson-extrapolated from n and 2n nodes.

    The subtracted Nystrom rule converges at fourth order for potentials that
    are smooth on their support.  d = 1, 2 give 0.
    """
    if v.d <= 2:
        return (0.0, 0.0) if return_error else 0.0
    b1 = beta_of_lambda(v, 0.0, n)
    b2 = beta_of_lambda(v, 0.0, 2 * n)
    corr = (b2 - b1) / 15.0
    out = b2 + corr
    return (out, abs(corr)) if return_error else out


def lambda0(v, beta, n=DEFAULT_NODES, lam_max=None, rtol=1e-10):
    """Principal eigenvalue lambda_0(beta) of H_beta = Delta/2 + beta v.

    Solves beta * mu(lam) = 1 on the monotone branch; 0 when beta <= beta_cr
    (beta_cr taken at the same node count so the map is consistent).
    """
    beta = check_scalar(beta, "beta", nonneg=True)
    if beta == 0:
        return 0.0
    if lam_max is None:
        lam_max = beta * v.sup
    lam_max = check_scalar(lam_max, "lam_max", positive=True)

    def f(lam):
        return beta * principal_eigenvalue(assemble_operator(v, lam, n))[0] - 1.0

    if v.d >= 3:
        if f(0.0) <= 0:
            return 0.0
        lo = 0.0
    else:
        lo = lam_max * 1e-3
        while f(lo) <= 0:
            lo *= 1e-4
            if lo < 1e-280:
                raise BracketError("could not bracket lambda_0 from below")
    if f(lam_max) >= 0:
        raise BracketError(f"beta(lam_max) < beta: lam_max={lam_max} too small for beta={beta}")
    return float(brentq(f, lo, lam_max, xtol=1e-300, rtol=max(rtol, 4e-16), maxiter=500))


# ---------------------------------------------------------------------------
# evaluation of R_0(lam) h off the nodes

class _ResolventState:
    """Principal eigenvector h at a given lam together with R_0(lam) h."""

    def __init__(self, v, lam, n=DEFAULT_NODES):
        self.v = v
        self.d = v.d
        self.lam = float(lam)
        self.op = assemble_operator(v, lam, n)
        self.mu, h = principal_eigenvalue(self.op)
        self.set_density(h)

    def set_density(self, h):
        self.h = np.asarray(h, dtype=float)
        # discrete Legendre transform on [0, R]: exact for degree < n
        x = 2 * self.op.nodes / self.op.R - 1
        gw = 2 * self.op.gl_weights / self.op.R
        V = L.legvander(x, self.op.n - 1)
        k = np.arange(self.op.n)
        self.coef = (V * (gw * self.h)[:, None]).sum(0) * (2 * k + 1) / 2

    def density(self, s):
        return L.legval(2 * np.asarray(s) / self.op.R - 1, self.coef)

    def apply(self, r, ng=_NG):
        """(R_0(lam) h)(r) for an array of radii (any r >= 0)."""
        r = np.atleast_1d(np.asarray(r, dtype=float))
        R = self.op.R
        out = np.empty_like(r)
        inside = r < R
        if np.any(inside):
            ri = r[inside]
            s1, w1 = _gauss(ng, 0.0, ri)
            s2, w2 = _gauss(ng, ri, R)
            rr = ri[:, None]
            out[inside] = (radial_green_kernel(self.d, self.lam, rr, s1) * w1 * self.density(s1)).sum(1) \
                + (radial_green_kernel(self.d, self.lam, rr, s2) * w2 * self.density(s2)).sum(1)
        if np.any(~inside):
            s, w = _gauss(ng, 0.0, R)
            hs = self.density(s)
            ro = r[~inside][:, None]
            out[~inside] = (radial_green_kernel(self.d, self.lam, ro, s) * w * hs).sum(1)
        return out


def _default_grid(R, r_max, n_grid):
    return np.linspace(0.0, r_max, n_grid)


def _normalized_ground(v, n):
    st = _ResolventState(v, 0.0, n)
    norm = math.sqrt(np.sum(st.op.weights * st.h ** 2 * np.exp(st.op.nodes ** 2)))
    st.set_density(st.h / norm)
    return st


def ground_state(v, n=DEFAULT_NODES, r_max=None, n_grid=401, r=None):
    """Ground state psi = -R_0(0) h_0 of H_{beta_cr}, d >= 3.

    Scaled so that the e^{|x|^2}-weighted L^2 norm of beta_cr v psi is 1.
    """
    if v.d < 3:
        raise ValueError("the ground state is defined for d >= 3 only")
    st = _normalized_ground(v, n)
    bcr = 1.0 / st.mu
    if r is None:
        r_max = 10 * v.R_supp if r_max is None else r_max
        r = _default_grid(v.R_supp, r_max, n_grid)
    psi = -st.apply(r)
    field = RadialField(r, psi, v.d, label="psi",
                        meta={"beta_cr": bcr, "n": n, "nodes": st.op.nodes,
                              "h": st.h, "h_star": st.op.adjoint_vector(st.h)})
    field.meta["evaluate"] = lambda rr: -st.apply(rr)
    return field


def _l2_norm_sq(st, sign=-1.0):
    # int_{R^d} (R_0 h)^2 dx = inner part + tail beyond R_supp
    d = st.d
    R = st.op.R
    s, w = _gauss(2 * st.op.n, 0.0, R)
    inner = np.sum(w * s ** (d - 1) * st.apply(s) ** 2)
    tail, _ = integrate.quad(lambda x: x ** (d - 1) * st.apply(np.array([x]))[0] ** 2, R, np.inf,
                             limit=200, epsabs=0, epsrel=1e-12)
    return sphere_area(d) * (inner + tail)


def eigenfunction_psi_beta(v, beta, n=DEFAULT_NODES, r_max=None, n_grid=801, r=None, lam=None):
    """Eigenfunction psi_beta = -R_0(lambda_0) h of H_beta, unit L^2 norm."""
    beta = check_scalar(beta, "beta", positive=True)
    if lam is None:
        lam = lambda0(v, beta, n)
    if lam <= 0:
        raise ValueError("psi_beta requires beta > beta_cr")
    st = _ResolventState(v, lam, n)
    st.set_density(st.h / math.sqrt(_l2_norm_sq(st)))
    if r is None:
        if r_max is None:
            r_max = v.R_supp + 30.0 / math.sqrt(2 * lam)
        r = _default_grid(v.R_supp, r_max, n_grid)
    vals = -st.apply(r)
    field = RadialField(r, vals, v.d, label="psi_beta", meta={"beta": beta, "lambda0": lam, "n": n})
    field.meta["evaluate"] = lambda rr: -st.apply(rr)
    return field


def _nodal_psi(v, n):
    st = _ResolventState(v, 0.0, n)
    psi_nodes = -st.apply(st.op.nodes)
    return st, psi_nodes


def gamma_general(v, n=DEFAULT_NODES):
    """gamma = -<v Q_d h0, h0*> / <h0, h0*> for d in {3, 4, 5}.

    With h0 = beta_cr v psi this equals
    -int int v psi(x) Q_d(x - y) v psi(y) dx dy / int v psi^2 dx (scale free).
    """
    d = v.d
    if d not in (3, 4, 5):
        raise ValueError("gamma is defined for d in {3, 4, 5}")
    st, psi = _nodal_psi(v, n)
    vw = st.op.weights
    vpsi = st.op.v_nodes * psi
    den = np.sum(vw * vpsi * psi)
    if d == 3:
        return float(np.sum(vw * vpsi) ** 2 / (math.sqrt(2) * math.pi * den))
    if d == 4:
        return float(np.sum(vw * vpsi) ** 2 / (4 * math.pi ** 2 * den))
    # d = 5: Q_5 = -a_5 / |x - y|, angular mean taken in closed form
    a5 = 1.0 / (4 * math.pi ** 2)
    R = st.op.R
    r = st.op.nodes
    fden = st.op.v_nodes * psi
    # v psi on sub-nodes from the Legendre interpolant of h (h is proportional to v psi)
    scale = fden.sum() / st.h.sum()
    s1, w1 = _gauss(_NG, 0.0, r)
    s2, w2 = _gauss(_NG, r, R)
    S = sphere_area(5)

    def inner(s, w):
        f = st.density(s) * scale
        return (mean_inverse_distance_5d(r[:, None], s) * S * s ** 4 * f * w).sum(1)

    conv = inner(s1, w1) + inner(s2, w2)
    num = a5 * np.sum(vw * fden * conv)
    return float(num / den)


def gamma_constant(v, psi=None, n=DEFAULT_NODES):
    """gamma = (int v psi)^2 / (sqrt(2) pi int v psi^2) for d = 3."""
    if v.d != 3:
        raise ValueError("gamma_constant is the d = 3 form; use gamma_general for d = 4, 5")
    if psi is None:
        return gamma_general(v, n)
    s, w = v.radial_quadrature(n)
    ev = psi.meta.get("evaluate") if isinstance(psi, RadialField) else None
    ps = ev(s) if ev is not None else np.interp(s, psi.r, psi.values)
    vol = sphere_area(3) * s ** 2 * w
    vs = v(s)
    return float(np.sum(vol * vs * ps) ** 2 / (math.sqrt(2) * math.pi * np.sum(vol * vs * ps ** 2)))


def scaling_constants(v, n=DEFAULT_NODES):
    """Constants of the small-(beta - beta_cr) laws for lambda_0."""
    d = v.d
    c1 = v.integral()
    out = {"d": d, "c1": c1}
    if d == 1:
        out["c_d"] = 0.5 * c1 ** 2  # lambda_0 ~ c_d beta^2
    elif d == 2:
        out["c_d"] = 2 * math.pi / c1  # lambda_0 ~ exp(-c_d / beta)
    else:
        bcr = critical_beta(v, n)
        g = gamma_general(v, n)
        out["beta_cr"] = bcr
        out["gamma"] = g
        out["c_d"] = 1.0 / (g ** 2 * bcr ** 4) if d == 3 else 1.0 / (g * bcr ** 2)
        if d == 3:
            st = _normalized_ground(v, n)
            psi_nodes = -st.apply(st.op.nodes)
            int_vpsi = np.sum(st.op.weights * st.op.v_nodes * psi_nodes)
            out["kappa"] = 1.0 / (math.sqrt(2 * math.pi) * bcr * int_vpsi)
            out["psi0"] = float(-st.apply(np.array([0.0]))[0])
            out["kappa_psi0"] = out["kappa"] * out["psi0"]
    return out


def phi_beta(v, beta, n=DEFAULT_NODES, r_max=None, n_grid=401, r=None):
    """Subcritical corrector phi_beta = R_0(0) (I + beta A(0))^{-1} (-beta v)."""
    if v.d < 3:
        raise ValueError("phi_beta is defined for d >= 3")
    beta = check_scalar(beta, "beta", nonneg=True)
    op = assemble_operator(v, 0.0, n)
    bcr = 1.0 / principal_eigenvalue(op)[0]
    if abs(beta - bcr) <= 1e-10 * bcr:
        raise SingularSystemError("beta coincides with beta_cr; I + beta A(0) is singular")
    if beta > bcr:
        raise ValueError(f"phi_beta needs beta < beta_cr = {bcr}")
    if r is None:
        r_max = 10 * v.R_supp if r_max is None else r_max
        r = _default_grid(v.R_supp, r_max, n_grid)
    if beta == 0:
        return RadialField(r, np.zeros_like(np.asarray(r, float)), v.d, label="phi_beta", meta={"beta": 0.0})
    g = np.linalg.solve(np.eye(op.n) + beta * op.matrix, -beta * op.v_nodes)
    st = _ResolventState.__new__(_ResolventState)
    st.v, st.d, st.lam, st.op, st.mu = v, v.d, 0.0, op, 1.0 / bcr
    st.set_density(g)
    vals = st.apply(r)
    field = RadialField(r, vals, v.d, label="phi_beta", meta={"beta": beta, "beta_cr": bcr, "n": n})
    field.meta["evaluate"] = lambda rr: st.apply(rr)
    return field


# ---------------------------------------------------------------------------

@dataclass
class SpectralSolution:
    d: int
    beta_cr: float
    lambda0_table: list = field(default_factory=list)   # (beta, lambda0)
    beta_table: list = field(default_factory=list)      # (lambda, beta(lambda))
    psi: RadialField = None
    psi_beta: dict = field(default_factory=dict)
    h: np.ndarray = None
    h_star: np.ndarray = None
    gamma: float = None
    c_d: float = None
    kappa: float = None

    def lambda0(self, beta):
        b, l0 = (np.array(x) for x in zip(*self.lambda0_table))
        return float(np.interp(beta, b, l0))

    def to_json_dict(self):
        return {
            "d": self.d,
            "beta_cr": self.beta_cr,
            "lambda0_table": [{"beta": float(b), "lambda0": float(l)} for b, l in self.lambda0_table],
            "psi_grid": self.psi.to_dict() if self.psi is not None else None,
            "gamma": self.gamma,
            "c_d": self.c_d,
            "kappa": self.kappa,
        }


class BirmanSchwingerSolver(BaseEstimator):
    """Estimator-style front end: fit on a potential, predict lambda_0(beta).

    Fitted attributes: beta_cr_, beta_cr_error_, gamma_, c_d_, kappa_, psi_.
    """

    def __init__(self, n_nodes=DEFAULT_NODES, lam_max=None, rtol=1e-10, n_grid=401):
        self.n_nodes = n_nodes
        self.lam_max = lam_max
        self.rtol = rtol
        self.n_grid = n_grid

    def fit(self, potential, y=None):
        if not isinstance(potential, RadialPotential):
            raise TypeError("fit expects a RadialPotential")
        n = check_int(self.n_nodes, "n_nodes", minimum=8)
        self.potential_ = potential
        self.d_ = potential.d
        self.beta_cr_, self.beta_cr_error_ = critical_beta(potential, n, return_error=True)
        consts = scaling_constants(potential, n)
        self.c_d_ = consts.get("c_d")
        self.gamma_ = consts.get("gamma")
        self.kappa_ = consts.get("kappa")
        self.psi_ = ground_state(potential, n, n_grid=self.n_grid) if self.d_ >= 3 else None
        return self

    def _check_fitted(self):
        if not hasattr(self, "potential_"):
            from sklearn.exceptions import NotFittedError
            raise NotFittedError("call fit(potential) first")

    def predict(self, betas):
        self._check_fitted()
        betas = np.atleast_1d(np.asarray(betas, dtype=float))
        return np.array([lambda0(self.potential_, b, self.n_nodes, self.lam_max, self.rtol) for b in betas])

    def solution(self, betas=()):
        self._check_fitted()
        betas = list(betas)
        l0 = self.predict(betas) if betas else []
        return SpectralSolution(
            d=self.d_, beta_cr=self.beta_cr_,
            lambda0_table=list(zip(betas, l0)),
            psi=self.psi_,
            h=None if self.psi_ is None else self.psi_.meta["h"],
            h_star=None if self.psi_ is None else self.psi_.meta["h_star"],
            gamma=self.gamma_, c_d=self.c_d_, kappa=self.kappa_)


def scaling_scan(v, excess, n=DEFAULT_NODES, relative=True):
    """lambda_0 along beta = beta_cr (1 + excess) (or absolute betas) with log-log fits.

    The excess is measured from the critical coupling of the same n-node
    discretization, so discretization error does not masquerade as a shift of
    beta_cr.  ``fit`` holds the free log-log slope and prefactor, the
    prefactor at the theoretical exponent taken at the smallest excess, and
    for d = 4 the spread of lambda_0 ln(1/delta)/delta.
    """
    if v.d < 3:
        bcr = 0.0
    else:
        bcr = discrete_critical_beta(v, n)
    excess = np.asarray(excess, dtype=float)
    betas = bcr * (1 + excess) if relative and bcr > 0 else excess
    if np.any(betas <= bcr):
        raise ValueError("scan points must lie above beta_cr")
    lam = np.array([lambda0(v, b, n) for b in betas])
    delta = betas - bcr
    rows = [{"beta": float(b), "excess": float(dl), "lambda0": float(l)}
            for b, dl, l in zip(betas, delta, lam)]
    slope, intercept = np.polyfit(np.log(delta), np.log(lam), 1)
    fit = {"beta_cr": bcr, "exponent": float(slope), "prefactor": float(math.exp(intercept))}
    k = int(np.argmin(delta))
    if v.d == 3:
        fit["c_fit"] = float(lam[k] / delta[k] ** 2)
    elif v.d == 5:
        fit["c_fit"] = float(lam[k] / delta[k])
    elif v.d == 4:
        q = lam * np.log(1 / delta) / delta
        fit["c_fit"] = float(q[k])
        fit["log_ratio_spread"] = float(q.max() / q.min() - 1)
    elif v.d == 1:
        fit["c_fit"] = float(lam[k] / betas[k] ** 2)
    else:
        fit["c_fit"] = float(-betas[k] * math.log(lam[k]))
    return rows, fit
