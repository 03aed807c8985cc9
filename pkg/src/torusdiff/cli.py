"""Batch front-end: named experiments, manifests, CSV emission and the
acceptance-suite runner.

Exit codes: 0 = all checks passed, 1 = a check or invariant failed,
2 = configuration error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import __version__
from .acceptance import run_acceptance
from .bel import eps_sweep, estimate_gradient_bel, fit_loglog_slope, \
    idiosyncratic_ibp_check, rate_sweep
from .config import ConfigError, ExperimentConfig
from .engine import evolve, moment_suite
from .functionals import gradient_direct, gradient_fd
from .geometry import quantile_to_density
from .noise import sample_noise
from .spde import evolve_density, kde_wrapped, l1_distance
from ._driver import measure_block

SWEEP_HEADER = ("t,eps,I1,I1_se,I2,I2_se,total,direct,direct_se,"
                "weight_l2,dropped_energy,seed")


def _write(path, text):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as fh:
        fh.write(text)


def _manifest(cfg, extra=None):
    lines = [f"torusdiff_version = {__version__}"]
    for k, v in cfg.to_manifest().items():
        lines.append(f"{k} = {v}")
    for k, v in (extra or {}).items():
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


def _sweep_csv(rows, extra_cols=()):
    head = SWEEP_HEADER + ("," + ",".join(extra_cols) if extra_cols else "")
    out = [head]
    for r in rows:
        base = [r["t"], r["eps"], r["I1"], r["I1_se"], r["I2"], r["I2_se"],
                r["total"], r["direct"], r["direct_se"], r["weight_l2"],
                r["dropped_energy"], r["seed"]]
        base += [r.get(c, "") for c in extra_cols]
        out.append(",".join(
            repr(float(v)) if isinstance(v, (int, float, np.floating))
            and not isinstance(v, bool) else str(v) for v in base))
    return "\n".join(out) + "\n"


def _maybe_plot(args, out_png, xs, series, xlabel, ylabel, logx=False, logy=False):
    if not args.plot:
        return
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, ys in series.items():
        ax.plot(xs, ys, marker="o", label=label)
    if logx:
        ax.set_xscale("log")
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)


def cmd_simulate(cfg, args):
    g = cfg.make_quantile()
    prof = cfg.make_profile()
    n = int(round(cfg.t / cfg.dt))
    lines = ["path,check,value"]
    for m in range(min(cfg.m_w, 8)):
        noise = sample_noise(prof, cfg.seed, n, cfg.dt, replica=m)
        path = evolve(g, prof, noise)
        path.assert_invariants()
        gap = float(np.max(np.abs(path.x[:, -1] - path.x[:, 0] - 2 * np.pi)))
        lines.append(f"{m},periodicity_gap,{gap!r}")
        lines.append(f"{m},min_d1,{float(np.min(path.d1()))!r}")
        if args.dump_paths:
            rows = ["t,u,x,d1"]
            stride = max(1, n // 50)
            for i in range(0, n + 1, stride):
                d1 = path.d1(i)
                for j in range(0, path.u.size, 8):
                    rows.append(f"{path.times[i]!r},{path.u[j]!r},"
                                f"{path.x[i, j]!r},{d1[j]!r}")
            _write(os.path.join(args.out, f"trajectory_{m}.csv"),
                   "\n".join(rows) + "\n")
    _write(os.path.join(args.out, "simulate.csv"), "\n".join(lines) + "\n")
    _write(os.path.join(args.out, "manifest.txt"),
           _manifest(cfg, {"command": "simulate"}))
    print(f"simulate: {min(cfg.m_w, 8)} paths, invariants hold")
    return 0


def cmd_gradient(cfg, args):
    g = cfg.make_quantile()
    h = cfg.make_direction()
    phi = cfg.make_functional()
    prof = cfg.make_profile()
    reports = [
        gradient_direct(g, h, phi, prof, cfg.t, cfg.m_w, cfg.m_beta,
                        cfg.seed, dt=cfg.dt),
        gradient_fd(g, h, phi, prof, cfg.t, cfg.rho, cfg.m_w, cfg.m_beta,
                    cfg.seed, dt=cfg.dt),
        estimate_gradient_bel(g, h, phi, prof, cfg.t, cfg.eps, cfg.m_w,
                              cfg.m_beta, cfg.seed, dt=cfg.dt,
                              perturbation="h"),
    ]
    lines = [reports[0].CSV_HEADER] + [r.csv_row() for r in reports]
    _write(os.path.join(args.out, "gradient.csv"), "\n".join(lines) + "\n")
    _write(os.path.join(args.out, "manifest.txt"),
           _manifest(cfg, {"command": "gradient"}))
    for r in reports:
        print(f"{r.estimator:>12}: {r.value:+.6f} +- {r.std_error:.6f}")
    return 0


def cmd_eps_sweep(cfg, args):
    g = cfg.make_quantile()
    h = cfg.make_direction()
    phi = cfg.make_functional()
    prof = cfg.make_profile()
    eps_grid = [0.4, 0.283, 0.2, 0.141, 0.1, 0.071, 0.05]
    rows = eps_sweep(g, h, phi, prof, cfg.t, eps_grid, cfg.m_w, cfg.m_beta,
                     cfg.seed, dt=cfg.dt, with_kernel=True)
    slope_i2 = fit_loglog_slope(eps_grid, [r["I2"] for r in rows])
    slope_k = fit_loglog_slope(eps_grid, [r["k_inf"] for r in rows])
    csv = _sweep_csv(rows, extra_cols=("k_inf", "total_se"))
    csv += f"# fitted_slope_I2 = {slope_i2!r}\n# fitted_slope_Kinf = {slope_k!r}\n"
    _write(os.path.join(args.out, "eps_sweep.csv"), csv)
    _write(os.path.join(args.out, "manifest.txt"),
           _manifest(cfg, {"command": "eps-sweep",
                           "fitted_slope_I2": slope_i2,
                           "fitted_slope_Kinf": slope_k}))
    _maybe_plot(args, os.path.join(args.out, "eps_sweep.png"),
                [r["eps"] for r in rows],
                {"|I2|": [abs(r["I2"]) for r in rows],
                 "E||K||inf": [r["k_inf"] for r in rows]},
                "eps", "magnitude", logx=True, logy=True)
    print(f"eps-sweep: slope(|I2|) = {slope_i2:.3f}, slope(K_inf) = {slope_k:.3f}")
    return 0


def cmd_rate_sweep(cfg, args):
    g = cfg.make_quantile()
    h = cfg.make_direction()
    phi = cfg.make_functional()
    prof = cfg.make_profile()
    t_grid = [0.05, 0.1, 0.2, 0.4, 0.8]
    rows = rate_sweep(g, h, phi, prof, t_grid, cfg.m_w, cfg.m_beta,
                      cfg.seed, dt=cfg.dt, rho_fd=cfg.rho,
                      eps_rule=lambda t: cfg.eps, perturbation="h")
    csv = _sweep_csv(rows, extra_cols=("fd", "fd_se", "scaled_gradient"))
    c_emp = max(r["scaled_gradient"] for r in rows)
    csv += f"# C_empirical = {c_emp!r}\n"
    _write(os.path.join(args.out, "rate_sweep.csv"), csv)
    _write(os.path.join(args.out, "manifest.txt"),
           _manifest(cfg, {"command": "rate-sweep", "C_empirical": c_emp}))
    _maybe_plot(args, os.path.join(args.out, "rate_sweep.png"),
                [r["t"] for r in rows],
                {"|total|": [abs(r["total"]) for r in rows],
                 "scaled": [r["scaled_gradient"] for r in rows]},
                "t", "gradient", logx=True, logy=True)
    print(f"rate-sweep: C_empirical = {c_emp:.4f}")
    return 0


def cmd_ibp_check(cfg, args):
    g = cfg.make_quantile()
    h = cfg.make_direction()
    phi = cfg.make_functional()
    prof = cfg.make_profile()
    s = args.s if args.s is not None else 0.2
    lhs, rhs, dse = idiosyncratic_ibp_check(
        g, h, phi, prof, s=s, t=cfg.t, u_index=cfg.n_u // 3, eps=cfg.eps,
        m_w=cfg.m_w, seed=cfg.seed, dt=cfg.dt, m_beta=min(cfg.m_beta, 16))
    z = abs(lhs - rhs) / max(dse, 1e-300)
    _write(os.path.join(args.out, "ibp_check.csv"),
           "s,t,u_index,lhs,rhs,combined_se,z\n"
           f"{s!r},{cfg.t!r},{cfg.n_u // 3},{lhs!r},{rhs!r},{dse!r},{z!r}\n")
    _write(os.path.join(args.out, "manifest.txt"),
           _manifest(cfg, {"command": "ibp-check", "z": z}))
    print(f"ibp-check: lhs {lhs:+.6f}, rhs {rhs:+.6f}, z = {z:.2f}")
    return 0 if z <= 3.0 else 1


def cmd_density_compare(cfg, args):
    g = cfg.make_quantile()
    prof = cfg.make_profile()
    p0 = quantile_to_density(g, cfg.n_x)
    n = int(round(cfg.t / cfg.dt))
    noise = sample_noise(prof, cfg.seed, n, cfg.dt, replica=0)
    stride = args.stride if args.stride else max(1, n // 8)
    sd = evolve_density(p0, prof, noise, "super", store_stride=stride)
    samples = measure_block(g, prof, cfg.t, max(cfg.m_beta, 256), cfg.seed,
                            0, cfg.dt)
    kde = kde_wrapped(samples, cfg.bandwidth, cfg.n_x)
    realized = sd.realized(-1, cfg.n_x)
    d = l1_distance(kde, realized)

    sd_crit = evolve_density(p0, prof, noise, "critical")
    ratio = sd_crit.mode_energy() / max(sd.mode_energy(), 1e-300)

    rows = ["t,x,p"]
    xg = kde.grid
    for i, ti in enumerate(sd.times):
        vals = sd.realized(i, cfg.n_x)
        for j in range(0, cfg.n_x, max(1, cfg.n_x // 64)):
            rows.append(f"{ti!r},{xg[j]!r},{vals[j]!r}")
    _write(os.path.join(args.out, "density_snapshots.csv"), "\n".join(rows) + "\n")
    _write(os.path.join(args.out, "density_compare.csv"),
           "t,L1_distance,bandwidth,critical_energy_ratio\n"
           f"{cfg.t!r},{d!r},{cfg.bandwidth!r},{ratio!r}\n")
    _write(os.path.join(args.out, "manifest.txt"),
           _manifest(cfg, {"command": "density-compare", "L1": d}))
    _maybe_plot(args, os.path.join(args.out, "density_compare.png"),
                list(xg), {"spectral": list(realized), "kde": list(kde.values)},
                "x", "density")
    print(f"density-compare: L1 = {d:.4f}, critical/super mode-energy ratio = {ratio:.2f}")
    return 0 if d <= 0.05 else 1


def cmd_moments(cfg, args):
    g = cfg.make_quantile(n_u=128)
    prof = cfg.make_profile()
    rows = ["quantity,p,j,estimate,std_error,reference,ratio,n_paths"]
    for qname, p, j in [("d1_lp", 2.0, 1), ("d1_at_0", 2.0, 1),
                        ("dj_lp", 2.0, 2), ("dj_sup", 2.0, 1),
                        ("inv_d1_sup", 2.0, 1)]:
        r = moment_suite(g, prof, min(cfg.m_w, 400), p=p, j=j, n_steps=250,
                         dt=2e-3, seed=cfg.seed, quantity=qname)
        rows.append(f"{qname},{p!r},{j},{r.estimate!r},{r.std_error!r},"
                    f"{r.reference!r},{r.ratio!r},{r.n_paths}")
        print(f"{qname:>12}: estimate {r.estimate:.4g} ratio {r.ratio:.3f}")
    _write(os.path.join(args.out, "moments.csv"), "\n".join(rows) + "\n")
    _write(os.path.join(args.out, "manifest.txt"),
           _manifest(cfg, {"command": "moments"}))
    return 0


def cmd_validate(cfg, args):
    results = run_acceptance(cfg, scale=args.scale)
    lines = ["criterion,passed,runtime_s,detail"]
    for r in results:
        lines.append(f"{r.name},{int(r.passed)},{r.runtime!r},\"{r.detail}\"")
    _write(os.path.join(args.out, "acceptance.csv"), "\n".join(lines) + "\n")
    _write(os.path.join(args.out, "manifest.txt"),
           _manifest(cfg, {"command": "validate",
                           "passed": sum(r.passed for r in results),
                           "total": len(results)}))
    n_fail = sum(not r.passed for r in results)
    print(f"validate: {len(results) - n_fail}/{len(results)} criteria passed")
    return 0 if n_fail == 0 else 1


COMMANDS = {
    "simulate": cmd_simulate,
    "gradient": cmd_gradient,
    "eps-sweep": cmd_eps_sweep,
    "rate-sweep": cmd_rate_sweep,
    "ibp-check": cmd_ibp_check,
    "density-compare": cmd_density_compare,
    "moments": cmd_moments,
    "validate": cmd_validate,
}


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="torusdiff",
        description="Batch experiments for the circle-valued measure diffusion")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="key = value config file")
    parser.add_argument("--seed", type=int, help="override the seed")
    parser.add_argument("--threads", type=int, default=0,
                        help="compute threads (0 = library default)")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--plot", action="store_true",
                        help="emit static plots of the tables")
    parser.add_argument("--dump-paths", action="store_true",
                        help="simulate: dump per-path trajectories to CSV")
    parser.add_argument("--m-w", type=int, help="override replica count")
    parser.add_argument("--m-beta", type=int, help="override measure rows")
    parser.add_argument("--t", type=float, help="override evaluation time")
    parser.add_argument("--s", type=float, help="ibp-check: earlier time")
    parser.add_argument("--stride", type=int, default=0,
                        help="density-compare: snapshot stride in steps")
    parser.add_argument("--scale", type=float, default=1.0,
                        help="validate: scale factor for unpinned counts")
    args = parser.parse_args(argv)

    try:
        if args.config:
            with open(args.config) as fh:
                cfg = ExperimentConfig.from_text(fh.read())
        else:
            cfg = ExperimentConfig().validate()
        over = {}
        if args.seed is not None:
            over["seed"] = args.seed
        if args.m_w is not None:
            over["m_w"] = args.m_w
        if args.m_beta is not None:
            over["m_beta"] = args.m_beta
        if args.t is not None:
            over["t"] = args.t
        if over:
            cfg = cfg.with_overrides(**over)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    if args.threads > 0:
        import numba
        numba.set_num_threads(args.threads)

    try:
        return COMMANDS[args.command](cfg, args)
    except (ValueError, RuntimeError) as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
