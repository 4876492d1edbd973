"""Command-line front end.

Subcommands write their artifacts into the output directory (``--out``,
else ``$HLSTC_OUTPUT_DIR``, else ``./hlstc-out``). Exit codes: 0 success,
2 invalid configuration or arguments, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from hlstc import __version__
from hlstc.bench import ExperimentError, build, monte_carlo
from hlstc.certify import (
    CertGrid,
    certify_observer,
    check_many,
    default_eps_grid,
    robot_arm_lyapunov,
    sets_to_json,
    sweep_parameter_sets,
)
from hlstc.config import ConfigError, load_config
from hlstc.io import content_hash, meta_block, write_events, write_json, write_tmax_table, write_trajectory
from hlstc.lyapunov import IntegrationError, t_max
from hlstc.robot_arm import make_model
from hlstc.sim import DivergenceError, initial_state, periodic_run, simulate_run

OUTPUT_ENV = "HLSTC_OUTPUT_DIR"
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUTPUT_ENV) or "hlstc-out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _config(args):
    cfg = load_config(args.config)
    horizons = getattr(args, "horizon", None)
    return cfg.override(
        seed=args.seed,
        runs=getattr(args, "runs", None),
        horizons=tuple(horizons) if horizons else None,
        workers=getattr(args, "workers", None),
    )


def _initial(cfg, n):
    ic = cfg.initial_state
    return ic[:n], ic[n:]


def cmd_simulate(args) -> int:
    cfg = _config(args)
    setup = build(cfg)
    n = setup.model.n_x
    x_p, x_o = _initial(cfg, n)
    state = initial_state(x_p, x_o, setup.stc, setup.lyap, cfg.eta_init)
    horizon = max(cfg.horizons)
    result = simulate_run(state, setup.stc, setup.lyap, setup.model, horizon, cfg.output_step)
    out = _out_dir(args)
    meta = meta_block(cfg.hash, cfg.seed)
    write_events(out / "events_0.csv", result.events, meta)
    write_trajectory(out / "trajectory_0.csv", result.trajectory, meta)
    print(f"t_min={setup.stc.t_min:.6g}s transmissions in (0, {horizon:g}]: {result.count()}")
    return EXIT_OK


def cmd_periodic(args) -> int:
    cfg = _config(args)
    setup = build(cfg)
    period = args.period or cfg.period or setup.stc.t_min
    n = setup.model.n_x
    x_p, x_o = _initial(cfg, n)
    horizon = max(cfg.horizons)
    result = periodic_run(x_p, x_o, period, setup.model, horizon, setup.lyap, cfg.output_step)
    out = _out_dir(args)
    meta = meta_block(cfg.hash, cfg.seed)
    write_events(out / "events_periodic.csv", result.events, meta)
    write_trajectory(out / "trajectory_periodic.csv", result.trajectory, meta)
    print(f"period={period:.6g}s transmissions in (0, {horizon:g}]: {result.count()}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config(args)
    model = make_model(cfg.model_name, cfg.model_params)
    abstraction = model.polytopic()
    lyap = robot_arm_lyapunov(abstraction, cfg.w_scale)
    eps_grid = default_eps_grid(cfg.eps_lower, cfg.eps_upper, cfg.eps_count)
    grid = CertGrid(cfg.half_width, cfg.samples)
    result = sweep_parameter_sets(lyap, abstraction, eps_grid, grid, cfg.delta, cfg.rel_tol, cfg.refine)
    meta = {
        **meta_block(cfg.hash, cfg.seed),
        "grid": grid.to_dict(),
        "lyapunov": lyap.to_dict(),
        "eps_grid": eps_grid,
        "L_critical": result.L_critical,
        "skipped": result.skipped,
    }
    out = _out_dir(args)
    write_json(out / "param_sets.json", sets_to_json(result.sets, cfg.delta, meta))
    print(f"{len(result.sets)} certified parameter sets, {len(result.skipped)} skipped")
    return EXIT_OK


def cmd_certify(args) -> int:
    cfg = _config(args)
    setup = build(cfg)
    grid = CertGrid(cfg.half_width, cfg.samples)
    reports = check_many(setup.stc.sets, setup.lyap, setup.model.polytopic(), grid)
    observer = certify_observer(setup.model.params)
    body = {
        "meta": meta_block(cfg.hash, cfg.seed),
        "grid": grid.to_dict(),
        "sets": [
            {
                "epsilon": s.epsilon,
                "gamma": s.gamma,
                "L": s.L,
                "margin_error": r.margin_error,
                "margin_decay": r.margin_decay,
                "witness_error": r.witness_error,
                "witness_decay": r.witness_decay,
                "passed": r.passed,
            }
            for s, r in zip(setup.stc.sets, reports)
        ],
        "observer": {
            "sign_conditions": observer.sign_conditions,
            "quadratic_certificate": observer.quadratic_certificate,
            "P_o": observer.P_o,
            "decay_rate": observer.decay_rate,
            "passed": observer.passed,
        },
        "t_min": setup.stc.t_min,
    }
    write_json(_out_dir(args) / "certify.json", body)
    passed = all(r.passed for r in reports) and observer.passed
    print(f"{sum(r.passed for r in reports)}/{len(reports)} sets pass; observer {'pass' if observer.passed else 'FAIL'}")
    return EXIT_OK if passed else EXIT_NUMERIC


def cmd_bench(args) -> int:
    cfg = _config(args)
    stats = monte_carlo(cfg)
    body = {"meta": meta_block(cfg.hash, cfg.seed), **stats.to_dict()}
    write_json(_out_dir(args) / "stats.json", body)
    for h in stats.horizons:
        s = stats.summary(h)
        print(f"{h:g}s: mean {s['mean']:.2f} vs periodic {s['periodic']} (ratio {s['reduction_ratio']:.3f})")
    return EXIT_OK


def cmd_tmax_table(args) -> int:
    rows = [(g, ell, t_max(g, ell)) for g in args.gammas for ell in args.ells]
    config_hash = content_hash({"gammas": args.gammas, "ells": args.ells})
    write_tmax_table(_out_dir(args) / "tmax_table.csv", rows, meta_block(config_hash, None))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hlstc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, runs=False):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or ./hlstc-out)")
        p.add_argument("--seed", type=int)
        p.add_argument("--horizon", type=float, nargs="+", help="simulation horizon(s) in seconds")
        if runs:
            p.add_argument("--runs", type=int)
            p.add_argument("--workers", type=int)
        return p

    common(sub.add_parser("simulate", help="single STC run")).set_defaults(func=cmd_simulate)
    p = common(sub.add_parser("periodic", help="periodic-sampling baseline run"))
    p.add_argument("--period", type=float, help="sampling period (default t_min)")
    p.set_defaults(func=cmd_periodic)
    common(sub.add_parser("certify", help="check parameter sets and observer")).set_defaults(func=cmd_certify)
    common(sub.add_parser("sweep", help="derive certified parameter sets")).set_defaults(func=cmd_sweep)
    common(sub.add_parser("bench", help="Monte Carlo transmission benchmark"), runs=True).set_defaults(func=cmd_bench)
    p = sub.add_parser("tmax-table", help="tabulate t_max over gamma and ell")
    p.add_argument("--out")
    p.add_argument("--gammas", type=float, nargs="+", default=[0.5, 1.0, 2.0, 5.0, 10.0])
    p.add_argument("--ells", type=float, nargs="+", default=[0.5, 1.0, 2.0, 5.0])
    p.set_defaults(func=cmd_tmax_table)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IntegrationError, DivergenceError, ExperimentError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
