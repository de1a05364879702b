"""Command-line pipeline: generate data, fit, grid-evaluate, compare, export.

Each subcommand writes its outputs plus a JSON manifest carrying the fully
resolved configuration, so any artifact can be reproduced bit for bit by
re-running with the recorded settings.  Output conventions: CSV for tabular
plot data, JSON for structured results, `repr` floats throughout for exact
round-trips, `\\n` line endings, UTF-8.

Exit codes: 0 success, 2 usage or invalid argument, 3 unreadable or
malformed input file, 4 model domain violation, 5 divergence abort,
6 grid underflow.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, engine, grid_oracle
from .autodiff import DomainError
from .distributions import Dataset, ModelKind, NaturalParams, pdf, sample_data
from .engine import DivergenceError, FitResult, TrainConfig, write_trace_csv
from .grid_oracle import GridSpec, GridUnderflowError, compare_moments
from .posterior import PriorSpec

EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_DOMAIN = 4
EXIT_DIVERGENCE = 5
EXIT_GRID_UNDERFLOW = 6


class DataFileError(RuntimeError):
    """An input file was missing or failed to parse."""


@dataclass(frozen=True)
class RunManifest:
    """Reproducibility record written alongside every output set."""

    subcommand: str
    configuration: dict
    inputs: dict
    outputs: dict
    seed: int | None

    def to_json_dict(self) -> dict:
        return {
            "artifact": "svbayes",
            "version": __version__,
            "subcommand": self.subcommand,
            "seed": self.seed,
            "configuration": self.configuration,
            "inputs": self.inputs,
            "outputs": self.outputs,
        }


def _write_json(path: Path, obj: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_manifest(base: Path, manifest: RunManifest) -> Path:
    path = base.with_name(base.name + ".manifest.json")
    _write_json(path, manifest.to_json_dict())
    return path


def _write_rows(path: Path, header: str, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(repr(float(x)) for x in row) + "\n")


def write_data_csv(path: Path, data: Dataset) -> None:
    _write_rows(path, "y", ([v] for v in data.values))


def read_data_csv(path: Path) -> Dataset:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as err:
        raise DataFileError(f"cannot read data file {path}: {err}") from err
    if not lines or lines[0].strip() != "y":
        raise DataFileError(f"{path}: expected a CSV with header 'y'")
    try:
        values = [float(s) for s in lines[1:] if s.strip()]
    except ValueError as err:
        raise DataFileError(f"{path}: malformed value ({err})") from err
    if not values:
        raise DataFileError(f"{path}: no data rows")
    try:
        return Dataset(np.array(values))
    except ValueError as err:
        raise DataFileError(f"{path}: {err}") from err


def _model_kind(name: str) -> ModelKind:
    return ModelKind(name)


def _prior_from_args(args) -> PriorSpec:
    means = _per_dimension(args.prior_mean, "prior-mean")
    variances = _per_dimension(args.prior_var, "prior-var")
    if any(v <= 0 for v in variances):
        raise ValueError("--prior-var entries must be positive")
    return PriorSpec.diagonal(means, variances)


def _per_dimension(values: list[float], flag: str) -> list[float]:
    if len(values) == 1:
        return [values[0], values[0]]
    if len(values) == 2:
        return list(values)
    raise ValueError(f"--{flag} takes one shared value or two per-dimension values")


def _grid_spec_from_args(args, model: ModelKind) -> GridSpec:
    if args.mu_range is not None:
        mu_range = tuple(args.mu_range)
    elif model is ModelKind.FOLDED_NORMAL:
        mu_range = (0.0, 3.0)  # canonical halfplane: the likelihood is even in mu
    else:
        mu_range = grid_oracle.DEFAULT_MU_RANGE
    logvar_range = (
        tuple(args.logvar_range)
        if args.logvar_range is not None
        else grid_oracle.DEFAULT_LOGVAR_RANGE
    )
    return GridSpec(
        mu_range=mu_range,
        logvar_range=logvar_range,
        resolution=args.resolution,
        include_prior=not args.no_prior,
    )


# -- subcommands -------------------------------------------------------------


def cmd_generate(args) -> int:
    if args.variance <= 0:
        raise ValueError("--variance must be positive")
    if args.n < 1:
        raise ValueError("--n must be >= 1")
    model = _model_kind(args.model)
    params = NaturalParams.from_mean_variance(args.mu, args.variance)
    data = sample_data(model, params, args.n, args.seed)
    out = Path(args.out).with_suffix(".csv")
    write_data_csv(out, data)
    manifest = RunManifest(
        subcommand="generate",
        configuration={
            "model": model.value,
            "mu": args.mu,
            "variance": args.variance,
            "n": args.n,
        },
        inputs={},
        outputs={"data": out.name},
        seed=args.seed,
    )
    _write_manifest(Path(args.out), manifest)
    return 0


def _train_config_from_args(args) -> TrainConfig:
    if args.batch_size == "full":
        batch_size = None
    else:
        batch_size = int(args.batch_size)
        if batch_size < 1:
            raise ValueError("--batch-size must be a positive integer or 'full'")
    return TrainConfig(
        epochs=args.epochs,
        batch_size=batch_size,
        mc_samples=args.mc_samples,
        learning_rate=args.lr,
        seed=args.seed,
        correlation_enabled=not args.no_correlation,
        final_fe_samples=args.final_fe_samples,
        shuffle=args.shuffle,
    )


def run_fit(args) -> FitResult:
    model = _model_kind(args.model)
    data = read_data_csv(Path(args.data))
    prior = _prior_from_args(args)
    config = _train_config_from_args(args)
    return engine.fit(model, data, prior, config)


def cmd_fit(args) -> int:
    result = run_fit(args)
    base = Path(args.out)
    out_json = base.with_suffix(".json")
    out_trace = base.with_name(base.stem + ".trace.csv")
    _write_json(out_json, result.to_json_dict())
    write_trace_csv(result.trace, out_trace)
    manifest = RunManifest(
        subcommand="fit",
        configuration={"model": args.model, **result.config.to_json_dict()},
        inputs={"data": str(args.data)},
        outputs={"result": out_json.name, "trace": out_trace.name},
        seed=args.seed,
    )
    _write_manifest(base, manifest)
    return 0


def cmd_grid(args) -> int:
    model = _model_kind(args.model)
    data = read_data_csv(Path(args.data))
    prior = _prior_from_args(args)
    spec = _grid_spec_from_args(args, model)
    grid = grid_oracle.grid_posterior(model, data, prior, spec)
    base = Path(args.out)
    out_csv = base.with_suffix(".csv")
    out_json = base.with_name(base.stem + ".summary.json")
    _write_rows(out_csv, "mu,logvar,mass", grid.mass_rows())
    _write_json(out_json, grid.summary_dict())
    manifest = RunManifest(
        subcommand="grid",
        configuration={
            "model": model.value,
            "mu_range": list(spec.mu_range),
            "logvar_range": list(spec.logvar_range),
            "resolution": list(spec.axis_counts),
            "include_prior": spec.include_prior,
            "prior_mean": _per_dimension(args.prior_mean, "prior-mean"),
            "prior_var": _per_dimension(args.prior_var, "prior-var"),
        },
        inputs={"data": str(args.data)},
        outputs={"mass": out_csv.name, "summary": out_json.name},
        seed=None,
    )
    _write_manifest(base, manifest)
    return 0


def cmd_compare(args) -> int:
    try:
        fit_doc = json.loads(Path(args.fit_json).read_text(encoding="utf-8"))
        grid_doc = json.loads(Path(args.grid_summary).read_text(encoding="utf-8"))
    except OSError as err:
        raise DataFileError(f"cannot read input: {err}") from err
    except json.JSONDecodeError as err:
        raise DataFileError(f"malformed JSON input: {err}") from err
    try:
        post = fit_doc["posterior"]
        report = compare_moments(
            grid_doc["means"],
            grid_doc["variances"],
            grid_doc["rho"],
            post["m"],
            np.diag(np.asarray(post["C"], dtype=float)),
            post["rho"],
        )
    except KeyError as err:
        raise DataFileError(f"incompatible artifacts: missing field {err}") from err
    print(report.table())
    if args.out is not None:
        base = Path(args.out)
        out_json = base.with_suffix(".json")
        _write_json(out_json, report.to_json_dict())
        manifest = RunManifest(
            subcommand="compare",
            configuration={},
            inputs={"fit": str(args.fit_json), "grid_summary": str(args.grid_summary)},
            outputs={"report": out_json.name},
            seed=None,
        )
        _write_manifest(base, manifest)
    return 0


# -- figure bundles -----------------------------------------------------------

_FIGURES = {
    1: {"model": ModelKind.GAUSSIAN, "batch_size": None, "panels": True},
    2: {"model": ModelKind.GAUSSIAN, "batch_size": None, "panels": False},
    3: {"model": ModelKind.GAUSSIAN, "batch_size": 10, "panels": True},
    4: {"model": ModelKind.GAUSSIAN, "batch_size": 10, "panels": False},
    5: {"model": ModelKind.FOLDED_NORMAL, "batch_size": None, "panels": True},
    6: {"model": ModelKind.FOLDED_NORMAL, "batch_size": 10, "panels": True},
}

_TRUE_MU = 1.0
_TRUE_VARIANCE = 4.0
_N_SAMPLES = 100


def _mvn_grid_mass(mean, cov, mu_axis, logvar_axis) -> np.ndarray:
    """Posterior MVN density on the grid nodes, normalized to unit mass."""
    inv = np.linalg.inv(cov)
    d0 = mu_axis[:, None] - mean[0]
    d1 = logvar_axis[None, :] - mean[1]
    quad = inv[0, 0] * d0**2 + 2.0 * inv[0, 1] * d0 * d1 + inv[1, 1] * d1**2
    mass = np.exp(-0.5 * (quad - quad.min()))
    return mass / mass.sum()


def _density_rows(mu_axis, logvar_axis, mass):
    for i, mu in enumerate(mu_axis):
        for j, lv in enumerate(logvar_axis):
            yield mu, lv, math.exp(lv), mass[i, j]


def cmd_figure(args) -> int:
    if args.figure_id not in _FIGURES:
        raise ValueError(f"figure id must be one of {sorted(_FIGURES)}")
    settings = _FIGURES[args.figure_id]
    model: ModelKind = settings["model"]
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    params = NaturalParams.from_mean_variance(_TRUE_MU, _TRUE_VARIANCE)
    data = sample_data(model, params, _N_SAMPLES, args.seed)
    prior = PriorSpec.diagonal([0.0, 0.0], [100.0, 100.0])

    fits = {}
    for label, corr in (("nocorr", False), ("corr", True)):
        config = TrainConfig(
            batch_size=settings["batch_size"],
            seed=args.seed,
            correlation_enabled=corr,
        )
        fits[label] = engine.fit(model, data, prior, config)

    outputs = {}
    for label, result in fits.items():
        trace_path = out_dir / f"trace_{label}.csv"
        write_trace_csv(result.trace, trace_path)
        outputs[f"trace_{label}"] = trace_path.name

    if settings["panels"]:
        data_path = out_dir / "panel_a_data.csv"
        write_data_csv(data_path, data)
        outputs["panel_a_data"] = data_path.name

        sigma = math.sqrt(_TRUE_VARIANCE)
        lo = 1e-6 if model is ModelKind.FOLDED_NORMAL else _TRUE_MU - 4 * sigma
        ys = np.linspace(lo, _TRUE_MU + 4 * sigma, 201)
        pdf_path = out_dir / "panel_a_true_pdf.csv"
        _write_rows(pdf_path, "y,pdf", zip(ys, pdf(model, ys, params)))
        outputs["panel_a_true_pdf"] = pdf_path.name

        mu_range = (
            (0.0, 3.0) if model is ModelKind.FOLDED_NORMAL else grid_oracle.DEFAULT_MU_RANGE
        )
        # the reference grid reproduces the likelihood-only evaluation
        spec = GridSpec(mu_range=mu_range, include_prior=False)
        grid = grid_oracle.grid_posterior(model, data, prior, spec)
        grid_path = out_dir / "panel_b_grid.csv"
        _write_rows(
            grid_path,
            "mu,logvar,variance,mass",
            _density_rows(grid.mu_axis, grid.logvar_axis, grid.mass),
        )
        _write_json(out_dir / "panel_b_grid.summary.json", grid.summary_dict())
        outputs["panel_b_grid"] = grid_path.name
        outputs["panel_b_summary"] = "panel_b_grid.summary.json"

        for panel, label in (("c", "nocorr"), ("d", "corr")):
            summary = fits[label].posterior
            mass = _mvn_grid_mass(summary.mean, summary.cov, grid.mu_axis, grid.logvar_axis)
            path = out_dir / f"panel_{panel}_svb_{label}.csv"
            _write_rows(
                path,
                "mu,logvar,variance,mass",
                _density_rows(grid.mu_axis, grid.logvar_axis, mass),
            )
            outputs[f"panel_{panel}_svb"] = path.name

    for label, result in fits.items():
        fit_path = out_dir / f"fit_{label}.json"
        _write_json(fit_path, result.to_json_dict())
        outputs[f"fit_{label}"] = fit_path.name

    manifest = RunManifest(
        subcommand="figure",
        configuration={
            "figure_id": args.figure_id,
            "model": model.value,
            "mu": _TRUE_MU,
            "variance": _TRUE_VARIANCE,
            "n": _N_SAMPLES,
            "batch_size": settings["batch_size"],
            "epochs": fits["corr"].config.epochs,
            "learning_rate": fits["corr"].config.learning_rate,
            "mc_samples": fits["corr"].config.mc_samples,
        },
        inputs={},
        outputs=outputs,
        seed=args.seed,
    )
    _write_json(out_dir / "manifest.json", manifest.to_json_dict())
    return 0


# -- argument parsing ---------------------------------------------------------


def _add_prior_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--prior-mean",
        type=float,
        nargs="+",
        default=[0.0],
        help="prior mean, one shared or two per-dimension values (default 0)",
    )
    parser.add_argument(
        "--prior-var",
        type=float,
        nargs="+",
        default=[100.0],
        help="prior variance per dimension (default 100, noninformative)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="svbayes",
        description="Stochastic variational Bayes with a grid-search reference.",
    )
    parser.add_argument("--version", action="version", version=f"svbayes {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("generate", help="sample a synthetic dataset to CSV")
    p.add_argument("--model", choices=[m.value for m in ModelKind], default="gaussian")
    p.add_argument("--mu", type=float, default=1.0)
    p.add_argument("--variance", type=float, default=4.0)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output base path (writes <out>.csv)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("fit", help="fit the approximate posterior to a dataset")
    p.add_argument("--data", required=True, help="input data CSV")
    p.add_argument("--model", choices=[m.value for m in ModelKind], default="gaussian")
    p.add_argument("--epochs", type=int, default=400)
    p.add_argument("--batch-size", default="full", help="points per step, or 'full'")
    p.add_argument("--mc-samples", type=int, default=1)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-correlation", action="store_true")
    p.add_argument("--final-fe-samples", type=int, default=1000)
    p.add_argument("--shuffle", action="store_true")
    _add_prior_flags(p)
    p.add_argument("--out", required=True, help="output base path")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("grid", help="brute-force grid posterior over a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--model", choices=[m.value for m in ModelKind], default="gaussian")
    p.add_argument("--mu-range", type=float, nargs=2, default=None)
    p.add_argument("--logvar-range", type=float, nargs=2, default=None)
    p.add_argument("--resolution", type=int, default=201)
    p.add_argument("--no-prior", action="store_true")
    _add_prior_flags(p)
    p.add_argument("--out", required=True, help="output base path")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("compare", help="compare a fit result with a grid summary")
    p.add_argument("fit_json")
    p.add_argument("grid_summary")
    p.add_argument("--out", default=None, help="optional output base path")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("figure", help="emit plot-ready data for one worked figure")
    p.add_argument("figure_id", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_figure)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except GridUnderflowError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_GRID_UNDERFLOW
    except DivergenceError as err:
        print(f"error: optimization diverged: {err}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except DomainError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DOMAIN
    except DataFileError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
