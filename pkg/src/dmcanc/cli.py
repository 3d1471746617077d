"""Command-line entry point: ``dmcanc <subcommand> [options]``.

Exit codes: 0 success, 2 configuration error, 3 divergence.
"""

from __future__ import annotations

import argparse
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import compensation as comp_mod
from . import harness as H
from .errors import ConfigError, DivergenceError
from .plant import Plant

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3

log = logging.getLogger("dmcanc")


def _load_config(args) -> H.ExperimentConfig:
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    if args.config and args.ci:
        raise ConfigError("--ci and --config are mutually exclusive")
    if args.config:
        cfg = H.ExperimentConfig.from_file(args.config)
    else:
        cfg = H.ExperimentConfig.ci() if args.ci else H.ExperimentConfig()
    if overrides:
        cfg = cfg.with_text_overrides(overrides)
    if args.out:
        cfg = cfg.replace(outputs=args.out)
    return cfg


def _outdir(cfg) -> Path:
    out = Path(cfg.outputs)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _setup(cfg, args) -> H.Setup:
    plant = Plant.load(args.plant) if getattr(args, "plant", None) else None
    comp = comp_mod.load_sets(args.comp) if getattr(args, "comp", None) else None
    return H.prepare(cfg, plant, comp)


def cmd_paths(cfg, args) -> int:
    setup = H.prepare(cfg.replace(algorithm="centralized"))
    target = _outdir(cfg) / "plant"
    setup.plant.save(target)
    print(f"plant with {cfg.n_nodes} nodes written to {target}")
    return EXIT_OK


def cmd_compensate(cfg, args) -> int:
    setup = _setup(cfg.replace(algorithm="dmcanc"), args)
    target = _outdir(cfg) / "compensation"
    comp_mod.save_sets(setup.comp_sets, target)
    lines = ["k,m,residual_db,converged"]
    for cs in setup.comp_sets:
        for m in sorted(cs.filters):
            rep = setup.comp_reports.get((cs.owner, m))
            conv = int(rep.converged) if rep is not None else ""
            lines.append(f"{cs.owner + 1},{m + 1},{cs.residual_db[m]:.6f},{conv}")
    (_outdir(cfg) / "compensation.csv").write_text("\n".join(lines) + "\n")
    for line in lines[1:]:
        print(line)
    return EXIT_OK


def cmd_run(cfg, args) -> int:
    out = _outdir(cfg)
    res = H.run_averaged(cfg, _setup(cfg, args))
    H.raise_if_all_diverged(res)
    H.write_mse_csv(out / "mse.csv", res.trace)
    first = next(r for r in res.runs if r.diverged_at is None)
    H.write_weights(out / "weights", first.weights, "local" if cfg.algorithm == "dmcanc" else "control")
    H.write_weights(out / "weights", first.global_filters, "global")
    print(f"{cfg.algorithm}: final mean MSE {res.final_mean_db(cfg.final_fraction):.2f} dB "
          f"(initial {res.initial_db:.2f} dB, {res.trace.n_runs} runs)")
    return EXIT_DIVERGED if res.diverged else EXIT_OK


def cmd_compare(cfg, args) -> int:
    out = _outdir(cfg)
    setup = _setup(cfg.replace(algorithm="dmcanc"), args)
    results = {}
    for alg in H.ALGORITHMS:
        results[alg] = H.run_averaged(cfg.replace(algorithm=alg), setup)
        H.raise_if_all_diverged(results[alg])
    H.write_compare_csv(out / "mse_compare.csv", {a: r.trace for a, r in results.items()})
    mean_w = {a: np.mean([r.global_filters for r in res.runs if r.diverged_at is None], axis=0)
              for a, res in results.items()}
    rep = H.spectra_report(mean_w["centralized"], mean_w["dmcanc"], cfg.fs, cfg.noise_band)
    H.write_spectra_csv(out / "spectra.csv", rep, ("centralized", "dmcanc"))
    for alg, res in results.items():
        print(f"{alg}: final mean MSE {res.final_mean_db(cfg.final_fraction):.2f} dB")
    print("max in-band deviation per node (dB): "
          + ", ".join(f"{v:.2f}" for v in rep.deviation_db))
    return EXIT_DIVERGED if any(r.diverged for r in results.values()) else EXIT_OK


def cmd_sweep(cfg, args) -> int:
    if args.values:
        try:
            values = [float(v) for v in args.values.split(",")]
        except ValueError:
            raise ConfigError(f"--values must be comma-separated numbers, got {args.values!r}")
    elif args.axis == "delay":
        values = [0, 500, 1500, 3000]
    else:
        values = [cfg.fs, cfg.fs / 100, cfg.fs / 1000]
    rows = H.sweep(cfg, args.axis, values, _setup(cfg.replace(algorithm="dmcanc"), args))
    H.write_sweep_csv(_outdir(cfg) / "sweep.csv", rows)
    for r in rows:
        print(f"{args.axis}={r.param:g}: final {r.final_mean_db:.2f} dB converged={r.converged}")
    return EXIT_DIVERGED if any(r.diverged for r in rows) else EXIT_OK


def cmd_check(cfg, args) -> int:
    dev = H.expansion_check(cfg, args.samples, fitted=args.fitted)
    lines = ["node,max_abs_deviation"] + [f"{k + 1},{d:.6e}" for k, d in enumerate(dev)]
    (_outdir(cfg) / "check.csv").write_text("\n".join(lines) + "\n")
    for line in lines[1:]:
        print(line)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with an [experiment] section")
    common.add_argument("--ci", action="store_true", help="use the scaled-down profile")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config field (repeatable)")
    common.add_argument("--out", help="output directory (overrides config 'outputs')")
    common.add_argument("-v", "--verbose", action="store_true")

    loaders = argparse.ArgumentParser(add_help=False)
    loaders.add_argument("--plant", help="load the plant from this directory")
    loaders.add_argument("--comp", help="load compensation sets from this directory")

    p = argparse.ArgumentParser(prog="dmcanc", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("paths", parents=[common], help="synthesize and save the plant")
    sub.add_parser("compensate", parents=[common, loaders], help="fit compensation filters")
    sub.add_parser("run", parents=[common, loaders], help="averaged run -> mse.csv, weights/")
    sub.add_parser("compare", parents=[common, loaders],
                   help="centralized vs distributed -> mse_compare.csv, spectra.csv")
    sw = sub.add_parser("sweep", parents=[common, loaders], help="delay or rate sweep -> sweep.csv")
    sw.add_argument("--axis", choices=("delay", "rate"), required=True)
    sw.add_argument("--values", help="comma-separated delays (samples) or rates (events/s)")
    ck = sub.add_parser("check", parents=[common], help="error-expansion consistency check")
    ck.add_argument("--samples", type=int, default=20_000)
    ck.add_argument("--fitted", action="store_true",
                    help="use identified rather than constructed compensation filters")
    return p


COMMANDS = {"paths": cmd_paths, "compensate": cmd_compensate, "run": cmd_run,
            "compare": cmd_compare, "sweep": cmd_sweep, "check": cmd_check}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            cfg = _load_config(args)
            return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (FileNotFoundError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
