"""Command-line harness: canonical experiments, CSV emission, run provenance.

Experiments:
  fig1   analytic information/disturbance sweep of a kappa measurement angle
  fig2   closed-loop dephasing-qubit control ensemble over measurement angles
  zeno   repeated slightly-rotated projections dragging a state to a target
  rates  Monte Carlo strength rates vs the printed closed forms

Every run writes a CSV (full double precision) plus a plain-text manifest
sidecar capturing the exact configuration, the package version, wall-clock
duration and a few summary scalars.  Exit codes: 0 success, 2 config error,
3 numerical failure (step rejection), 4 I/O error.
"""

import argparse
import sys
import time

import numpy as np

from . import __version__
from .ensemble import EnsembleConfig, precessing_plus_x, run_ensemble, theta_experiment
from .metrics import (
    ito_rate_p,
    ito_rate_v,
    printed_rate_p,
    printed_rate_v,
    strength_rate_numeric,
    theta_sweep,
)
from .sde import MeasurementPolicy, SmeConfig, StepRejected, inverse_zeno_run
from .states import SIGMA_Z, pure_density


def format_value(x):
    if isinstance(x, float):
        return "%.17g" % x
    return str(x)


def write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(format_value(v) for v in row) + "\n")


def write_manifest(path, entries):
    with open(path, "w") as fh:
        for key, value in entries.items():
            fh.write(f"{key} = {format_value(value)}\n")


def manifest_path(out):
    return out + ".manifest.txt"


def load_config_file(path):
    """Flat key = value document; '#' starts a comment."""
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, raw = (part.strip() for part in line.split("=", 1))
            values[key.replace(".", "_").replace("-", "_")] = raw
    return values


def cmd_fig1(args):
    theta_grid = np.linspace(0.0, np.pi, args.theta_points)
    t0 = time.perf_counter()
    rows = theta_sweep(args.p, args.kappa, theta_grid)
    write_csv(args.out, ("theta", "i_f_p", "n_e_p", "n_e_v"), rows)
    best = max(rows, key=lambda row: row[1])
    write_manifest(
        manifest_path(args.out),
        {
            "experiment": "fig1",
            "version": __version__,
            "p": args.p,
            "kappa": args.kappa,
            "theta_points": args.theta_points,
            "duration_s": time.perf_counter() - t0,
            "max_i_f_p": best[1],
            "argmax_theta": best[0],
        },
    )


def cmd_fig2(args):
    theta_grid = np.linspace(0.0, np.pi / 2, args.theta_points)
    sme = SmeConfig(
        k=args.k,
        h0=args.omega * SIGMA_Z,
        dephasing_beta=args.beta,
        dt=args.dt,
        t_end=args.t_end,
    )
    plus_x = np.array([1.0, 1.0]) / np.sqrt(2.0)
    base = EnsembleConfig(
        realizations=args.realizations,
        master_seed=args.seed,
        sme=sme,
        policy=MeasurementPolicy(mode="relative_angle", theta=0.0),
        mu=args.mu,
        rho0=pure_density(plus_x),
        target_fn=precessing_plus_x(args.omega),
    )
    t0 = time.perf_counter()
    rows = theta_experiment(base, theta_grid, threads=args.threads)
    write_csv(
        args.out,
        ("theta", "purity_mean", "purity_se", "overlap_mean", "overlap_se"),
        rows,
    )
    write_manifest(
        manifest_path(args.out),
        {
            "experiment": "fig2",
            "version": __version__,
            "omega": args.omega,
            "beta": args.beta,
            "k": args.k,
            "mu": args.mu,
            "dt": args.dt,
            "t_end": args.t_end,
            "realizations": args.realizations,
            "theta_points": args.theta_points,
            "seed": args.seed,
            "threads": args.threads,
            "duration_s": time.perf_counter() - t0,
            "best_theta_by_purity": max(rows, key=lambda r: r[1])[0],
            "best_theta_by_overlap": max(rows, key=lambda r: r[3])[0],
        },
    )


def cmd_zeno(args):
    m_values = [int(v) for v in args.m_list.split(",")]
    psi_start = np.array([1.0, 0.0])
    psi_target = np.array([0.0, 1.0])
    t0 = time.perf_counter()
    rows = []
    for i, m in enumerate(m_values):
        rng = np.random.Generator(
            np.random.Philox(seed=np.random.SeedSequence(entropy=args.seed, spawn_key=(i,)))
        )
        successes = sum(
            inverse_zeno_run(psi_start, psi_target, m, rng)[0] for _ in range(args.runs)
        )
        rate = successes / args.runs
        half_width = 1.96 * np.sqrt(max(rate * (1.0 - rate), 1e-12) / args.runs)
        analytic = float(np.cos(np.pi / (2 * m)) ** (2 * m))
        rows.append((m, rate, max(rate - half_width, 0.0), min(rate + half_width, 1.0), analytic))
    write_csv(
        args.out,
        ("M", "empirical_rate", "ci95_low", "ci95_high", "analytic_rate"),
        rows,
    )
    write_manifest(
        manifest_path(args.out),
        {
            "experiment": "zeno",
            "version": __version__,
            "m_list": args.m_list,
            "runs": args.runs,
            "seed": args.seed,
            "duration_s": time.perf_counter() - t0,
        },
    )


def cmd_rates(args):
    k_values = [float(v) for v in args.k_list.split(",")]
    t0 = time.perf_counter()
    rows = []
    ratios_p, ratios_v = [], []
    for i, k in enumerate(k_values):
        est = strength_rate_numeric(SIGMA_Z, k, seed=args.seed + i)
        printed_p = printed_rate_p(SIGMA_Z, k)
        printed_v = printed_rate_v(SIGMA_Z, k)
        ratio_p = est.rate_p / printed_p if printed_p else 0.0
        ratio_v = est.rate_v / printed_v if printed_v else 0.0
        if k > 0:
            ratios_p.append(ratio_p)
            ratios_v.append(ratio_v)
        rows.append(
            (
                k,
                est.rate_p,
                est.rate_p_se,
                est.rate_v,
                est.rate_v_se,
                printed_p,
                printed_v,
                ratio_p,
                ratio_v,
            )
        )
    write_csv(
        args.out,
        (
            "k",
            "rate_p_numeric",
            "rate_p_se",
            "rate_v_numeric",
            "rate_v_se",
            "rate_p_printed",
            "rate_v_printed",
            "ratio_p",
            "ratio_v",
        ),
        rows,
    )
    entries = {
        "experiment": "rates",
        "version": __version__,
        "k_list": args.k_list,
        "seed": args.seed,
        "duration_s": time.perf_counter() - t0,
    }
    if ratios_p:
        entries["mean_ratio_p_numeric_over_printed"] = float(np.mean(ratios_p))
        entries["mean_ratio_v_numeric_over_printed"] = float(np.mean(ratios_v))
        entries["ito_oracle_rate_p_at_k1"] = float(ito_rate_p(SIGMA_Z, 1.0))
        entries["ito_oracle_rate_v_at_k1"] = float(ito_rate_v(SIGMA_Z, 1.0))
    write_manifest(manifest_path(args.out), entries)


# per-experiment option schema: dest -> (type, default)
_OPTIONS = {
    "fig1": {"p": (float, 0.1), "kappa": (float, 0.75), "theta_points": (int, 181)},
    "fig2": {
        "omega": (float, np.pi),
        "beta": (float, 0.4),
        "k": (float, 2.0),
        "mu": (float, 10.0),
        "dt": (float, 1e-4),
        "t_end": (float, 2.0),
        "realizations": (int, 1000),
        "theta_points": (int, 9),
    },
    "zeno": {"m_list": (str, "2,10,50,200"), "runs": (int, 10000)},
    "rates": {"k_list": (str, "0.5,1,2")},
}

_COMMANDS = {"fig1": cmd_fig1, "fig2": cmd_fig2, "zeno": cmd_zeno, "rates": cmd_rates}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="qmfc",
        description="Continuous quantum measurement and feedback control experiments",
    )
    parser.add_argument("--experiment", required=True, choices=sorted(_COMMANDS))
    parser.add_argument("--config", help="plain key = value config file; flags win")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out", default=None)
    parser.add_argument("--threads", type=int, default=None)
    for options in _OPTIONS.values():
        for dest, (typ, _default) in options.items():
            flag = "--" + dest.replace("_", "-")
            if not any(flag == a for a in parser._option_string_actions):
                parser.add_argument(flag, type=typ, default=None)
    return parser


def resolve_args(args):
    """Apply precedence: built-in defaults < config file < explicit flags."""
    config = load_config_file(args.config) if args.config else {}
    schema = dict(_OPTIONS[args.experiment])
    schema.update({"seed": (int, 0), "threads": (int, 1), "out": (str, f"{args.experiment}.csv")})
    for dest, (typ, default) in schema.items():
        if getattr(args, dest, None) is None:
            raw = config.get(dest)
            setattr(args, dest, typ(raw) if raw is not None else default)
    return args


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args = resolve_args(args)
    except (ValueError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        _COMMANDS[args.experiment](args)
    except StepRejected as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
