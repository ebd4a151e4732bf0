"""``bench`` command line: run experiments, build profiles, identify one record."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .bench import BenchConfig, profile_from_trials, read_trials, run_benchmark, write_profile
from .errors import SysIdError
from .optimizer import SolverConfig
from .sysid import SystemSpec, identify, load_dataset, preset_dataset, save_dataset, simulate_dataset

EXIT_OK, EXIT_CONFIG, EXIT_FAILURE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    # usage errors are configuration errors, not trial failures
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _csv_list(text):
    return [item.strip() for item in text.split(",") if item.strip()]


def _solver_config(path):
    return SolverConfig.load(path) if path else SolverConfig()


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bench", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="Monte Carlo benchmark over presets x datasets x solvers")
    run.add_argument("--preset", type=_csv_list, required=True)
    run.add_argument("--dataset", type=_csv_list, required=True, help="D1..D4, comma separated")
    run.add_argument("--solver", type=_csv_list, default=["sgp", "gp", "ascbb"])
    run.add_argument("--runs", type=int, default=1)
    run.add_argument("--n", type=int, default=100, help="model order (burn-in length)")
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--out", type=Path, required=True)
    run.add_argument("--config", type=Path, help="solver settings TOML")
    run.add_argument("--traces", action="store_true", help="also write per-instance trace series")

    prof = sub.add_parser("profile", help="performance profile from a run directory")
    prof.add_argument("--in", dest="indir", type=Path, required=True)
    prof.add_argument("--out", type=Path, required=True)
    prof.add_argument("--metric", default="t_s", choices=["t_s", "nf", "it"])

    ident = sub.add_parser("identify", help="estimate the impulse response of one t,u,y record")
    ident.add_argument("--data", type=Path, required=True)
    ident.add_argument("--preset", required=True)
    ident.add_argument("--solver", default="sgp")
    ident.add_argument("--n", type=int, help="model order (defaults to the stored truth length)")
    ident.add_argument("--config", type=Path)
    ident.add_argument("--out", type=Path, help="write the estimate as JSON")

    sim = sub.add_parser("simulate", help="write a synthetic record as CSV + JSON sidecar")
    group = sim.add_mutually_exclusive_group(required=True)
    group.add_argument("--dataset", help="D1..D4")
    group.add_argument("--N", type=int)
    sim.add_argument("--snr", type=float, default=10.0)
    sim.add_argument("--n", type=int, default=100)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--out", type=Path, required=True)
    return parser


def _cmd_run(args) -> int:
    config = BenchConfig(presets=args.preset, datasets=args.dataset, solvers=args.solver,
                         runs=args.runs, base_seed=args.seed, n_est=args.n, output_dir=args.out,
                         solver_config=_solver_config(args.config), traces=args.traces)
    report = run_benchmark(config)
    for row in report.aggregate:
        print(f"{row['preset']:7s} {row['dataset']:5s} {row['solver']:6s} "
              f"fit={row['mean_fit']:7.2f} sd={row['sd_fit']:6.2f} it={row['mean_it']:8.1f} "
              f"nf={row['mean_nf']:8.1f} t={row['mean_t_s']:.3f}s failures={row['failures']}")
    print(f"wrote {report.files['trials']} and {report.files['aggregate']}")
    return EXIT_FAILURE if report.failures else EXIT_OK


def _cmd_profile(args) -> int:
    path = args.indir / "trials.csv" if args.indir.is_dir() else args.indir
    if not path.exists():
        raise FileNotFoundError(f"{path} not found")
    profile = profile_from_trials(read_trials(path), metric=args.metric)
    write_profile(profile, args.out)
    print(f"{len(profile.ratios)} problems, rho_max={profile.rho_max:.4g}, wrote {args.out}")
    return EXIT_OK


def _cmd_identify(args) -> int:
    dataset = load_dataset(args.data)
    out = identify(dataset, args.preset, args.solver, _solver_config(args.config), n=args.n)
    res = out.result
    print(f"termination={res.termination.value} it={res.iterations} nf={res.function_evals} "
          f"f={res.f_final:.10g} fit={out.fit:.2f}")
    if args.out:
        payload = {"theta_hat": out.theta_hat.tolist(), "x": np.asarray(res.x_final).tolist(),
                   "fit": out.fit, "f": res.f_final, "termination": res.termination.value}
        args.out.write_text(json.dumps(payload, indent=1) + "\n")
    return EXIT_OK if res.stationary or res.termination.value == "RelativeDecrease" else EXIT_FAILURE


def _cmd_simulate(args) -> int:
    if args.dataset:
        data = preset_dataset(args.dataset, args.seed, n_est=args.n)
    else:
        data = simulate_dataset(SystemSpec(N=args.N, snr=args.snr, n_est=args.n), args.seed)
    save_dataset(data, args.out)
    print(f"wrote {args.out} (N={data.N}, sigma2={data.sigma2_true:.4g})")
    return EXIT_OK


_COMMANDS = {"run": _cmd_run, "profile": _cmd_profile, "identify": _cmd_identify,
             "simulate": _cmd_simulate}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (SysIdError, OSError, ValueError) as exc:
        print(f"bench: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
