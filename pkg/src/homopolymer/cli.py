"""Command-line front end.

    homopolymer COMMAND [--config PATH] [--d N] [--beta X] [--beta-grid a:b:n]
                        [--T X] [--paths N] [--seed N] [--out DIR] [--refine]

Exit codes: 0 pass, 1 a check failed, 2 usage or configuration error,
3 numerical failure.
"""
import argparse
import json
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from ._validation import NumericalError
from .io import ConfigError, build_config, dumps, write_csv, write_json

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3
COMMANDS = ("critical-beta", "scaling-scan", "partition", "simulate", "critical-kernel", "report")


def _emit(summary):
    sys.stdout.write(dumps(summary))


def _phase(beta, bcr, tol=1e-9):
    if abs(beta - bcr) <= tol * max(bcr, 1.0):
        return "critical"
    return "globular" if beta > bcr else "diffusive"


# ---------------------------------------------------------------------------
# commands

def cmd_critical_beta(cfg):
    from .birman_schwinger import BirmanSchwingerSolver
    v = cfg.potential()
    out = Path(cfg.out)
    if cfg.d < 3:
        summary = {"command": "critical-beta", "d": cfg.d, "beta_cr": 0.0, "beta_cr_error": 0.0,
                   "note": f"in d = {cfg.d} every beta > 0 produces a positive eigenvalue, so beta_cr = 0",
                   "config": cfg.to_dict()}
    else:
        est = BirmanSchwingerSolver(n_nodes=cfg.n_nodes).fit(v)
        sol = est.solution()
        summary = {"command": "critical-beta", "d": cfg.d, "beta_cr": est.beta_cr_,
                   "beta_cr_error": est.beta_cr_error_, "config": cfg.to_dict(),
                   "spectral": sol.to_json_dict()}
    write_json(out / "critical_beta.json", summary)
    print(f"beta_cr = {summary['beta_cr']:.10g} +/- {summary['beta_cr_error']:.2e}"
          + (f"  ({summary['note']})" if "note" in summary else ""))
    return EXIT_OK


def cmd_scaling_scan(cfg):
    from .birman_schwinger import scaling_constants, scaling_scan
    if cfg.beta_grid is None:
        raise ConfigError("beta_grid", "is required for scaling-scan")
    v = cfg.potential()
    grid = cfg.parsed_beta_grid()
    rows, fit = scaling_scan(v, grid, cfg.n_nodes, relative=cfg.grid_mode == "relative")
    consts = scaling_constants(v, cfg.n_nodes)
    fit["c_d_theory"] = consts["c_d"]
    fit["d"] = cfg.d
    write_csv(Path(cfg.out) / "scaling_scan.csv", rows, cfg.to_dict(), footer=fit)
    write_json(Path(cfg.out) / "scaling_scan.json",
               {"command": "scaling-scan", "config": cfg.to_dict(), "rows": rows, "fit": fit})
    line = f"d={cfg.d} exponent={fit['exponent']:.4f} c_fit={fit['c_fit']:.6g} c_d={consts['c_d']:.6g}"
    if "log_ratio_spread" in fit:
        line += f" spread={fit['log_ratio_spread']:.3%}"
    print(line)
    return EXIT_OK


def cmd_partition(cfg):
    from .birman_schwinger import critical_beta, lambda0, phi_beta
    from .feynman_kac_pde import (asymptotic_fit, default_grid, grid_critical_beta,
                                  lyapunov_exponent, partition_function)
    v = cfg.potential()
    beta_in = cfg.beta_value()
    T = cfg.T
    grid = default_grid(v, T, h=cfg.h, growth=cfg.growth)
    bcr = critical_beta(v, cfg.n_nodes) if cfg.d >= 3 else 0.0
    if beta_in == "critical":
        if cfg.d < 3:
            raise ConfigError("beta", "'critical' needs d >= 3")
        beta = grid_critical_beta(v, grid)
        phase = "critical"
    else:
        beta = beta_in
        phase = _phase(beta, bcr)
    t_lo = min(1.0, T / 10)
    samples = np.geomspace(t_lo, T, 41)
    res = partition_function(v, beta, grid, T, samples=samples)
    z = res.probe(0.0)
    rows = [{"t": float(t), "Z": float(zz)} for t, zz in zip(res.times, z)]
    fit = {"phase": phase, "beta": beta, "beta_cr": bcr}
    if phase == "globular":
        lam_hat = lyapunov_exponent(res.times, z, window=(T / 2, T))
        fit.update({"lambda0_hat": lam_hat, "k_hat": float(z[-1] * math.exp(-lam_hat * T)),
                    "lambda0_spectral": lambda0(v, beta, cfg.n_nodes)})
    elif phase == "diffusive":
        if cfg.d >= 3:
            phi0 = float(phi_beta(v, beta, cfg.n_nodes, r=np.array([0.0])).values[0])
            fit.update({"limit": 1 + phi0, "Z_T": float(z[-1]), "defect": float(abs(z[-1] - 1 - phi0))})
        else:
            fit["Z_T"] = float(z[-1])
    else:
        m = res.times >= T / 100
        model = "t_over_ln_t" if cfg.d == 4 else "power"
        params, resid = asymptotic_fit(res.times[m], z[m] - 1, model)
        fit.update({"model": model, "params": params, "rms_residual": resid})
    params = {**cfg.to_dict(), "grid": grid.to_dict()}
    write_csv(Path(cfg.out) / "partition.csv", rows, params, footer=fit)
    write_json(Path(cfg.out) / "partition.json",
               {"command": "partition", "config": params, "rows": rows, "fit": fit})
    print(json.dumps(fit, sort_keys=True))
    return EXIT_OK


def cmd_simulate(cfg):
    from .path_sampler import (bridge_covariance_check, diffusive_rescale_stats,
                               endpoint_density, sample_paths)
    v = cfg.potential()
    beta = cfg.beta_value()
    if beta == "critical":
        from .birman_schwinger import critical_beta
        beta = critical_beta(v, cfg.n_nodes)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ens = sample_paths(v, beta, cfg.T, cfg.n_steps, cfg.n_paths, seed=cfg.seed,
                           record=(0.25, 0.5, 0.75, 1.0))
    scale = math.sqrt(cfg.T)
    edges = np.linspace(0.0, 3.0, 31) * scale
    hist = endpoint_density(ens, edges)
    cov = diffusive_rescale_stats(ens)
    summary = ens.summary()
    summary.update({"command": "simulate", "config": cfg.to_dict(), "histogram": hist.to_dict(),
                    "covariance": cov.to_rows(),
                    "increment_correlation": cov.inc_corr.tolist(),
                    "increment_correlation_se": cov.inc_corr_se.tolist()})
    if cfg.pinned_radius is not None:
        br = bridge_covariance_check(ens, cfg.pinned_radius, times=(0.25, 0.5, 0.75))
        summary["pinned"] = {"tol_radius": br.tol_radius, "ess": br.ess,
                             "times": br.times.tolist(), "second_moment": br.second_moment.tolist(),
                             "bridge": br.bridge.tolist(), "se": br.se.tolist()}
    out = Path(cfg.out)
    write_json(out / "simulate.json", summary)
    rows = [{"r_lo": float(a), "r_hi": float(b), "mass": float(m)}
            for a, b, m in zip(edges[:-1], edges[1:], hist.masses)]
    write_csv(out / "endpoint_histogram.csv", rows, cfg.to_dict())
    if cfg.dump_paths:
        x = ens.at(ens.T)
        write_csv(out / "endpoints.csv",
                  ({**{f"x{i}": float(x[j, i]) for i in range(ens.d)},
                    "log_weight": float(ens.log_weights[j])} for j in range(ens.n_paths)),
                  cfg.to_dict())
    print(f"Z_hat = {summary['Z_hat']:.6g} +/- {summary['Z_se']:.2g}  ESS = {summary['ess']:.1f}"
          + (f"  WARNING: {summary['warning']}" if summary["warning"] else ""))
    return EXIT_OK


def critical_kernel_suite(refine=False):
    """Normalization, Chapman-Kolmogorov and Fokker-Planck defects as report rows."""
    from .critical_process import CriticalKernel, critical_Q
    ker = CriticalKernel().doubled() if refine else CriticalKernel()
    rows = []

    def add(check, params, defect, tol):
        rows.append({"check": check, "params": params, "defect": float(defect),
                     "tolerance": tol, "pass": bool(defect < tol)})

    for s in (0.0, 0.3):
        for t in (0.5, 1.0):
            for a in (0.0, 0.3, 1.0, 3.0):
                add("normalization", {"s": s, "t": t, "y": a},
                    ker.normalization_defect(s, t, a), 1e-6)
    for a in (0.0, 1.0):
        add("origin_value", {"s": 0.2, "t": 0.7, "y": a},
            abs(critical_Q(0.2, 0.7, np.array([0.0, 0.0, a]), np.zeros(3))), 1e-300)
    for triple in ((0.1, 0.4, 0.8), (0.2, 0.5, 1.0), (0.0, 0.3, 0.6)):
        worst = 0.0
        for x1 in (0.0, 0.5, 1.5):
            for x3 in (0.5, 1.5):
                for ang in ((0.0,) if x1 == 0 else (0.0, math.pi / 2, math.pi)):
                    worst = max(worst, ker.chapman_kolmogorov_defect(*triple, x1, x3, ang))
        add("chapman_kolmogorov", {"times": list(triple)}, worst, 1e-4)
    step = ker.fp_step / 2 if refine else ker.fp_step
    fp = ker.fokker_planck_residual(0.1, 1.0, np.linspace(0.3, 0.9, 7), np.linspace(0.2, 3.0, 15), h=step)
    add("fokker_planck", {"s": 0.1, "y": 1.0, "h": step, "refinement_ratio": fp.ratio}, fp.residual, 1e-3)
    add("fokker_planck_refinement", {"h": step, "ratio": fp.ratio}, abs(fp.ratio - 4.0), 0.5)
    from .critical_process import near_origin_drift_defect
    add("near_origin_drift", {"t": 0.5, "r": 1e-3}, near_origin_drift_defect(0.5, 1e-3), 1e-3)
    return rows


def cmd_critical_kernel(cfg):
    rows = critical_kernel_suite(cfg.refine)
    write_json(Path(cfg.out) / "critical_kernel.json",
               {"command": "critical-kernel", "config": cfg.to_dict(), "checks": rows})
    for r in rows:
        print(f"{'PASS' if r['pass'] else 'FAIL'} {r['check']} {json.dumps(r['params'], sort_keys=True)} "
              f"defect={r['defect']:.3e} tol={r['tolerance']:.0e}")
    return EXIT_OK if all(r["pass"] for r in rows) else EXIT_CHECK


def cmd_report(cfg):
    """Collect the JSON summaries in the output directory into report.json."""
    out = Path(cfg.out)
    entries = {}
    for p in sorted(out.glob("*.json")):
        if p.name == "report.json":
            continue
        try:
            entries[p.stem] = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError("out", f"{p} is not valid JSON: {exc}") from None
    failed = [c["check"] for e in entries.values() for c in e.get("checks", []) if not c["pass"]]
    write_json(out / "report.json", {"command": "report", "files": sorted(entries), "failed_checks": failed})
    for name in sorted(entries):
        print(name)
    return EXIT_CHECK if failed else EXIT_OK


HANDLERS = {
    "critical-beta": cmd_critical_beta,
    "scaling-scan": cmd_scaling_scan,
    "partition": cmd_partition,
    "simulate": cmd_simulate,
    "critical-kernel": cmd_critical_kernel,
    "report": cmd_report,
}


def build_parser():
    p = argparse.ArgumentParser(prog="homopolymer", description="Homopolymer Gibbs-measure experiments.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", metavar="PATH")
    p.add_argument("--d", type=int)
    p.add_argument("--beta")
    p.add_argument("--beta-grid", dest="beta_grid", metavar="a:b:n")
    p.add_argument("--T", type=float)
    p.add_argument("--paths", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", metavar="DIR")
    p.add_argument("--refine", action="store_true", default=None)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    overrides = {"d": args.d, "beta": args.beta, "beta_grid": args.beta_grid, "T": args.T,
                 "n_paths": args.paths, "seed": args.seed, "out": args.out, "refine": args.refine}
    try:
        cfg = build_config(args.config, overrides)
        return HANDLERS[args.command](cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
