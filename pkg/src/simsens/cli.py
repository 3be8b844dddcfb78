"""Command-line front-end.

``simsens run [--config FILE] [flags]`` runs one sweep or study and writes
its results to the output directory.  Flags override the JSON config.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 no plausible
model.  Nothing is written on exit 2 or 3.
"""

import argparse
import dataclasses
import datetime
import json
import logging
import os
import platform
import sys

import numpy as np

from . import __version__
from .engine import SensitivityGrid, SsaConfig, run_sweep, summarize
from .exceptions import (
    InsufficientDataError,
    InvalidArgumentError,
    InvalidDataError,
    SweepFailedError,
)
from .io import AtomicWriter, validate_dataset, write_cells, write_contour, write_json, write_table
from .knn import KnnConfig
from .models.longitudinal import LongitudinalModel
from .models.mean import MeanModel, MeanStudySettings, run_mean_study
from .models.meta import CopasModel
from .models.regression import RegressionModel, RegressionStudySettings, run_regression_study
from .permute import PermutationConfig

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NO_PLAUSIBLE = 0, 2, 3, 4
OUTPUT_ENV = "SIMSENS_OUTPUT_DIR"
MODELS = ("meta", "mean", "longitudinal", "regression", "mean-study", "regression-study")

logger = logging.getLogger("simsens")

DEFAULTS = {
    "model": None,
    "data": None,
    "grid": None,
    "k": 2,
    "mc_size": 100,
    "n_perm": 1000,
    "perm_mode": "pooled",
    "alpha": 0.05,
    "seed": 0,
    "workers": 1,
    "output_dir": None,
    "tol": 0.0,
    "standardize": True,
    # model options
    "lam": 0.0,
    "smoothing": None,
    "n_imputations": 20,
    # study options
    "replications": None,
    "n": 100,
    "mu": 0.0,
    "sigma2": 1.0,
    "eta": -1.0,
}

DEFAULT_GRIDS = {
    "meta": ["a=-3:0:31", "b=0.1:2:20"],
    "mean": ["eta=-5:5:101"],
    "longitudinal": ["eta=-0.2:0.2:41"],
    "regression": ["eta=-5:5:51"],
}


class ConfigError(Exception):
    pass


def parse_axis(spec):
    """``name=lo:hi:num`` -> ``(name, values)``; ``name=v`` fixes one value."""
    try:
        name, rng = spec.split("=", 1)
        parts = [float(p) for p in rng.split(":")]
    except ValueError as exc:
        raise ConfigError(f"bad grid axis {spec!r}; expected name=lo:hi:num") from exc
    name = name.strip()
    if len(parts) == 1:
        return name, np.array(parts)
    if len(parts) != 3 or parts[2] < 1 or parts[2] != int(parts[2]):
        raise ConfigError(f"bad grid axis {spec!r}; expected name=lo:hi:num with integer num >= 1")
    lo, hi, num = parts
    if num > 1 and hi <= lo:
        raise ConfigError(f"bad grid axis {spec!r}; need lo < hi")
    return name, np.round(np.linspace(lo, hi, int(num)), 12)


def build_grid(specs, names):
    axes = dict(parse_axis(s) for s in specs)
    if tuple(axes) != tuple(names):
        raise ConfigError(f"grid axes {tuple(axes)} must be {tuple(names)} in that order")
    try:
        return SensitivityGrid.from_axes(**axes)
    except InvalidArgumentError as exc:
        raise ConfigError(str(exc)) from exc


def build_parser():
    p = argparse.ArgumentParser(prog="simsens", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=f"simsens {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a sweep or a study")
    run.add_argument("--config", help="JSON file of key/value settings")
    run.add_argument("--model", choices=MODELS)
    run.add_argument("--data", help="input CSV")
    run.add_argument("--grid", action="append", metavar="NAME=LO:HI:NUM",
                     help="grid axis; repeat once per sensitivity parameter")
    run.add_argument("--k", type=int)
    run.add_argument("--mc-size", type=int, dest="mc_size")
    run.add_argument("--n-perm", type=int, dest="n_perm")
    run.add_argument("--perm-mode", choices=("pooled", "internal"), dest="perm_mode")
    run.add_argument("--alpha", type=float)
    run.add_argument("--seed", type=int)
    run.add_argument("--workers", type=int)
    run.add_argument("--output-dir", dest="output_dir")
    run.add_argument("--tol", type=float, help="width of the near-minimum band")
    run.add_argument("--no-standardize", dest="standardize", action="store_false", default=None)
    run.add_argument("--lam", type=float, help="mean model: offset in the missingness model")
    run.add_argument("--smoothing", help="mean model: 'silverman' or a bandwidth")
    run.add_argument("--n-imputations", type=int, dest="n_imputations")
    run.add_argument("--replications", type=int)
    run.add_argument("--n", type=int, help="mean study: sample size")
    run.add_argument("--mu", type=float, help="mean study: true mean")
    run.add_argument("--sigma2", type=float, help="mean study: true variance")
    run.add_argument("--eta", type=float, help="mean study: true sensitivity parameter")
    run.add_argument("-v", "--verbose", action="store_true")
    return p


def resolve_config(args):
    cfg = dict(DEFAULTS)
    if args.config:
        try:
            with open(args.config) as fh:
                loaded = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError("config must be a JSON object")
        unknown = sorted(set(loaded) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"unknown config key(s): {unknown}")
        cfg.update(loaded)
    for key in DEFAULTS:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if cfg["model"] not in MODELS:
        raise ConfigError(f"model must be one of {MODELS}, got {cfg['model']!r}")
    if cfg["output_dir"] is None:
        cfg["output_dir"] = os.environ.get(OUTPUT_ENV, "simsens-output")
    if isinstance(cfg["grid"], str):
        cfg["grid"] = [cfg["grid"]]
    if cfg["smoothing"] not in (None, "silverman"):
        try:
            cfg["smoothing"] = float(cfg["smoothing"])
        except (TypeError, ValueError) as exc:
            raise ConfigError("smoothing must be 'silverman' or a number") from exc
    for key in ("k", "mc_size", "n_perm", "workers", "n_imputations", "n"):
        if not isinstance(cfg[key], int) or isinstance(cfg[key], bool) or cfg[key] < 1:
            raise ConfigError(f"{key} must be a positive integer, got {cfg[key]!r}")
    if cfg["replications"] is not None and (not isinstance(cfg["replications"], int)
                                            or cfg["replications"] < 1):
        raise ConfigError("replications must be a positive integer")
    if not 0.0 < float(cfg["alpha"]) < 1.0:
        raise ConfigError(f"alpha must lie in (0, 1), got {cfg['alpha']}")
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError("seed must be a non-negative integer")
    if cfg["tol"] < 0:
        raise ConfigError("tol must be non-negative")
    return cfg


def ssa_config(cfg):
    try:
        return SsaConfig(
            mc_size=cfg["mc_size"],
            knn=KnnConfig(cfg["k"], bool(cfg["standardize"])),
            perm=PermutationConfig(cfg["n_perm"], cfg["perm_mode"]),
            alpha=float(cfg["alpha"]),
            seed=cfg["seed"],
            n_jobs=cfg["workers"],
        )
    except InvalidArgumentError as exc:
        raise ConfigError(str(exc)) from exc


def provenance(cfg):
    # the worker count never changes results, so it stays out of the outputs
    return {
        "version": __version__,
        "config": {k: v for k, v in cfg.items() if k != "workers"},
        "seed": cfg["seed"],
        "python": platform.python_version(),
        "numpy": np.__version__,
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }


def _make_model(cfg, data):
    name = cfg["model"]
    if name == "meta":
        return CopasModel()
    if name == "mean":
        return MeanModel(cfg["lam"], cfg["smoothing"])
    if name == "longitudinal":
        return LongitudinalModel(data.n_visits)
    return RegressionModel(cfg["n_imputations"])


def run_sweep_command(cfg):
    if not cfg["data"]:
        raise ConfigError(f"model {cfg['model']!r} needs --data")
    sc = ssa_config(cfg)
    specs = cfg["grid"] or DEFAULT_GRIDS[cfg["model"]]
    if cfg["model"] != "longitudinal":
        # configuration problems are reported before the data are touched
        grid = build_grid(specs, _make_model(cfg, None).eta_names)
    kwargs = {"lam": cfg["lam"]} if cfg["model"] == "mean" else {}
    data = validate_dataset(cfg["data"], cfg["model"], **kwargs)
    model = _make_model(cfg, data)
    if cfg["model"] == "longitudinal":
        if cfg["grid"] is None and data.n_visits > 2:
            specs = [f"{n}=-0.2:0.2:41" for n in model.eta_names]
        grid = build_grid(specs, model.eta_names)
    cells = run_sweep(model, data, grid, sc)
    summary = summarize(cells, sc.alpha, cfg["tol"])
    summary["provenance"] = provenance(cfg)
    with AtomicWriter(cfg["output_dir"]) as out:
        write_cells(out.path("cells.csv"), cells, grid.names)
        write_json(out.path("summary.json"), summary)
        if len(grid.names) == 2:
            write_contour(out.path("contour.csv"), cells, grid.names)
    if summary["most_plausible"] is None:
        logger.error("no plausible sensitivity model: every candidate was rejected at alpha=%s",
                     sc.alpha)
        return EXIT_NO_PLAUSIBLE
    return EXIT_OK


def _write_study(cfg, rows, summary):
    summary = dict(summary)
    summary["provenance"] = provenance(cfg)
    with AtomicWriter(cfg["output_dir"]) as out:
        header = list(rows[0])
        write_table(out.path("replications.csv"), header, [[r[h] for h in header] for r in rows])
        write_json(out.path("summary.json"), summary)
    return EXIT_NO_PLAUSIBLE if summary["n_without_plausible"] == len(rows) else EXIT_OK


def run_mean_study_command(cfg):
    if cfg["data"]:
        raise ConfigError("mean-study simulates its own data; drop --data")
    settings = MeanStudySettings(
        n=cfg["n"], mu=float(cfg["mu"]), sigma2=float(cfg["sigma2"]), eta=float(cfg["eta"]),
        lam=float(cfg["lam"]), k=cfg["k"], mc_size=cfg["mc_size"], n_perm=cfg["n_perm"],
        alpha=float(cfg["alpha"]), smoothing=cfg["smoothing"],
        standardize=bool(cfg["standardize"]),
        replications=cfg["replications"] or MeanStudySettings.replications)
    if cfg["grid"] is not None:
        grid = build_grid(cfg["grid"], ("eta",))
        settings = dataclasses.replace(settings, grid=tuple(grid.points[:, 0]))
    rows, summary = run_mean_study(settings, seed=cfg["seed"], n_jobs=cfg["workers"])
    return _write_study(cfg, rows, summary)


def run_regression_study_command(cfg):
    complete = None
    if cfg["data"]:
        complete = validate_dataset(cfg["data"], "regression")
        if not complete.observed.all():
            raise InvalidDataError("regression-study needs a fully observed x2 column")
    settings = RegressionStudySettings(
        k=cfg["k"], mc_size=cfg["mc_size"], n_perm=cfg["n_perm"], alpha=float(cfg["alpha"]),
        n_imputations=cfg["n_imputations"], standardize=bool(cfg["standardize"]),
        replications=cfg["replications"] or RegressionStudySettings.replications)
    if cfg["grid"] is not None:
        grid = build_grid(cfg["grid"], ("eta",))
        settings = dataclasses.replace(settings, grid=tuple(grid.points[:, 0]))
    rows, summary = run_regression_study(complete, settings, seed=cfg["seed"],
                                         n_jobs=cfg["workers"])
    return _write_study(cfg, rows, summary)


def run_cli(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="simsens: %(levelname)s: %(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args)
        if cfg["model"] == "mean-study":
            return run_mean_study_command(cfg)
        if cfg["model"] == "regression-study":
            return run_regression_study_command(cfg)
        return run_sweep_command(cfg)
    except (ConfigError, InvalidArgumentError) as exc:
        logger.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except (InvalidDataError, InsufficientDataError) as exc:
        logger.error("data error: %s", exc)
        return EXIT_DATA
    except SweepFailedError as exc:
        logger.error("no plausible sensitivity model: %s", exc)
        return EXIT_NO_PLAUSIBLE


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
