"""Command-line entry point for the simulation experiments.

Subcommands mirror the studied scenarios (dtl, lasso, bh, repeated) plus a
diagnose mode that checks pivot uniformity. Results go to stdout as a small
table and, with --out, to CSV or JSON with coverage/length figures rendered
alongside. Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import os
import sys

from .diagnostics import write_ecdf_csv, write_pivots_csv
from .harness import (
    EXPERIMENTS,
    ConfigError,
    ExperimentConfig,
    emit,
    run_diagnose,
    run_experiment,
)

_SCALE_PRESETS = {
    "desk": {"replicates": 100, "boot": 1000, "epochs": 500, "hidden": (64, 64, 64)},
    "paper": {"replicates": 200, "boot": 3000, "epochs": 3000, "hidden": (200, 200, 200)},
}

_CONFIG_KEYS = {
    "replicates": int,
    "boot": int,
    "epochs": int,
    "batch": int,
    "alpha": float,
    "seed": int,
    "grid": int,
    "span": float,
    "lr": float,
    "holdout": float,
    "n1": int,
    "n2": int,
    "k": int,
    "c0": float,
    "n": int,
    "p": int,
    "theta0": float,
    "q": float,
    "effect": float,
    "alpha0": float,
    "init": int,
    "step": int,
    "max_stages": int,
    "pivots": int,
    "scale": str,
    "format": str,
    "out": str,
}


def _parse_config_file(path) -> dict:
    values = {}
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key=value")
                key, _, value = line.partition("=")
                key = key.strip()
                if key not in _CONFIG_KEYS:
                    raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
                try:
                    values[key] = _CONFIG_KEYS[key](value.strip())
                except ValueError as exc:
                    raise ConfigError(f"{path}:{lineno}: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    return values


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bbsi",
        description="Selection-adjusted inference experiments with a learned selection probability.",
    )
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--replicates", type=int, default=None)
        p.add_argument("--boot", type=int, default=None, metavar="B",
                       help="bootstrap training replicates per inference")
        p.add_argument("--epochs", type=int, default=None)
        p.add_argument("--batch", type=int, default=None)
        p.add_argument("--alpha", type=float, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--grid", type=int, default=None, help="grid points of the discrete law")
        p.add_argument("--span", type=float, default=None, help="grid half-width in sigma units")
        p.add_argument("--lr", type=float, default=None)
        p.add_argument("--holdout", type=float, default=None,
                       help="validation fraction for early stopping")
        p.add_argument("--no-early-stop", action="store_true",
                       help="fixed-epoch training (learned probability may saturate)")
        p.add_argument("--scale", choices=sorted(_SCALE_PRESETS), default=None)
        p.add_argument("--out", type=str, default=None)
        p.add_argument("--format", choices=("csv", "json"), default=None)
        p.add_argument("--config", type=str, default=None, help="key=value config file")
        p.add_argument("--no-figures", action="store_true",
                       help="skip rendering figures next to --out")
        # scenario knobs (shared namespace; each experiment reads the ones it uses)
        p.add_argument("--n1", type=int, default=None, help="first-stage group size (dtl)")
        p.add_argument("--n2", type=int, default=None, help="second-stage size (dtl; default n1/4)")
        p.add_argument("--k", type=int, default=None, help="number of groups/treatments")
        p.add_argument("--c0", type=float, default=None, help="lasso signal strength")
        p.add_argument("--n", type=int, default=None, help="observations (lasso/bh)")
        p.add_argument("--p", type=int, default=None, help="features (lasso)")
        p.add_argument("--theta0", type=float, default=None, help="signal strength (bh)")
        p.add_argument("--q", type=float, default=None, help="target FDR (bh)")
        p.add_argument("--effect", type=float, default=None, help="mean difference (repeated)")
        p.add_argument("--alpha0", type=float, default=None, help="per-test level (repeated)")
        p.add_argument("--init", type=int, default=None, help="first-stage size (repeated)")
        p.add_argument("--step", type=int, default=None, help="added per stage (repeated)")
        p.add_argument("--max-stages", type=int, default=None)
        p.add_argument("--pivots", type=int, default=None, help="accepted pivots (diagnose)")
    return parser


def _build_config(args) -> tuple[ExperimentConfig, dict]:
    file_values = _parse_config_file(args.config) if args.config else {}

    def pick(flag, key, default):
        value = getattr(args, flag, None)
        if value is not None:
            return value
        if key in file_values:
            return file_values[key]
        return default

    scale = pick("scale", "scale", "desk")
    if scale not in _SCALE_PRESETS:
        raise ConfigError(f"unknown scale {scale!r}")
    preset = _SCALE_PRESETS[scale]

    cfg = ExperimentConfig(
        experiment=args.experiment,
        replicates=pick("replicates", "replicates", preset["replicates"]),
        boot=pick("boot", "boot", preset["boot"]),
        epochs=pick("epochs", "epochs", preset["epochs"]),
        batch=pick("batch", "batch", 200),
        hidden=preset["hidden"],
        lr=pick("lr", "lr", 1e-3),
        holdout=pick("holdout", "holdout", 0.15),
        early_stop=not args.no_early_stop,
        alpha=pick("alpha", "alpha", 0.1),
        grid_size=pick("grid", "grid", 100),
        span=pick("span", "span", 10.0),
        seed=pick("seed", "seed", 0),
        n1=pick("n1", "n1", 100),
        n2=pick("n2", "n2", None),
        k_groups=pick("k", "k", 50) if args.experiment in ("dtl", "diagnose") else 50,
        n_obs=pick("n", "n", 400),
        p_features=pick("p", "p", 50),
        c0=pick("c0", "c0", 0.6),
        bh_k=pick("k", "k", 20) if args.experiment == "bh" else 20,
        bh_n=pick("n", "n", 300) if args.experiment == "bh" else 300,
        theta0=pick("theta0", "theta0", 0.2),
        q_fdr=pick("q", "q", 0.2),
        init_n=pick("init", "init", 100),
        step_n=pick("step", "step", 50),
        alpha0=pick("alpha0", "alpha0", 0.1),
        max_stages=pick("max_stages", "max_stages", 20),
        effect=pick("effect", "effect", 0.0),
        pivots=pick("pivots", "pivots", 300),
    )
    io = {
        "out": pick("out", "out", None),
        "format": pick("format", "format", "csv"),
        "figures": not args.no_figures,
    }
    return cfg, io


def _figure_paths(out_path, suffixes):
    root, _ = os.path.splitext(out_path)
    return [f"{root}_{s}.png" for s in suffixes]


def _print_results(results):
    header = f"{'method':<18} {'coverage':>9} {'mean_length':>12} {'clipped':>8} {'replicates':>11}"
    print(header)
    for r in results:
        print(
            f"{r.method:<18} {r.coverage:>9.3f} {r.mean_length:>12.4f} "
            f"{r.clipped_count:>8d} {r.replicates:>11d}"
        )


def _run(args) -> int:
    cfg, io = _build_config(args)
    if cfg.experiment == "diagnose":
        diag = run_diagnose(cfg)
        print(f"accepted pivots     : {diag.adjusted.accepted} / {diag.adjusted.attempts} attempts")
        print(f"KS (adjusted)       : {diag.ks_adjusted:.4f}")
        print(f"KS (unadjusted pi=1): {diag.ks_unadjusted:.4f}")
        if io["out"]:
            write_pivots_csv(diag.adjusted, io["out"])
            root, _ = os.path.splitext(io["out"])
            write_pivots_csv(diag.unadjusted, f"{root}_unadjusted.csv")
            write_ecdf_csv(diag.adjusted.values, f"{root}_ecdf.csv")
            if io["figures"]:
                from .figures import save_ecdf_figure

                save_ecdf_figure(diag.adjusted.values, diag.unadjusted.values, f"{root}_ecdf.png")
        return 0
    results = run_experiment(cfg)
    _print_results(results)
    if io["out"]:
        emit(results, io["format"], io["out"])
        if io["figures"]:
            from .figures import save_coverage_figure, save_length_figure

            cov_path, len_path = _figure_paths(io["out"], ("coverage", "length"))
            save_coverage_figure(results, cov_path, target=1.0 - cfg.alpha)
            save_length_figure(results, len_path)
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _run(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
