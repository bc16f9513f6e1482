"""Command-line entry point: fit, experiment, rr-table, sample and eigen."""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable, Dict, List, Literal, Optional, Sequence, Tuple, Type

import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import __version__
from .aecm import FitConfig, fit
from .data_io import atomic_write_text, load_csv, load_labels, peek_columns, standardize, write_csv
from .errors import (
    EXIT_NOT_CONVERGED,
    EXIT_OK,
    EXIT_UNEXPECTED,
    EXIT_USAGE,
    CmgfaError,
    ConfigurationError,
    InvalidArgumentError,
)
from .metrics import misclassification_error
from .model_core import EigenBounds, bounds_label, parse_bounds_list
from .model_store import load_model, save_model
from .settings import Settings, get_settings
from .simulation import (
    MixtureSpec,
    builtin_mixture,
    experiment_preset,
    run_experiment,
    sample,
    write_report,
)

LOGGER = logging.getLogger(__name__)

DEFAULT_LOWER_BOUND = 0.01

EXIT_CODES_HELP = """exit codes:
  0  success (fit converged)
  1  unexpected error
  2  usage or configuration error
  3  data or model file could not be parsed
  4  numerical failure (singular matrix, empty component, density underflow)
  5  fit stopped at the iteration limit without converging
"""


class RunConfig(BaseModel):
    """Estimation settings shared by ``fit`` and ``experiment``."""

    model_config = ConfigDict(extra="forbid")

    seed: int = Field(default=2024, ge=0)
    max_iterations: int = Field(default=500, ge=1)
    epsilon: float = Field(default=1e-3, gt=0)
    inner_max_iterations: int = Field(default=200, ge=1)
    inner_tolerance: float = Field(default=1e-6, gt=0)
    strict: bool = False
    clamp_all_uniquenesses: bool = False
    reinit_each_iteration: bool = False
    score_centering: Literal["component", "grand_mean"] = "component"

    def fit_config(self, bounds: Optional[EigenBounds]) -> FitConfig:
        return FitConfig(
            max_outer_iterations=self.max_iterations,
            inner_max_iterations=self.inner_max_iterations,
            inner_tolerance=self.inner_tolerance,
            aitken_epsilon=self.epsilon,
            bounds=bounds,
            rng_seed=self.seed,
            reinit_each_iteration=self.reinit_each_iteration,
            strict_bounds=self.strict,
            clamp_all_uniquenesses=self.clamp_all_uniquenesses,
            score_centering=self.score_centering,
        )


class FitOptions(RunConfig):
    data: Path
    labels_col: Optional[str] = None
    components: int = Field(ge=1)
    factors: int = Field(ge=1)
    lower: Optional[float] = Field(default=None, gt=0)
    upper: Optional[float] = Field(default=None, gt=0)
    init: Literal["random", "labels", "file"] = "random"
    init_file: Optional[Path] = None
    scale: bool = False
    out: Optional[Path] = None
    scores_out: Optional[Path] = None
    assignments_out: Optional[Path] = None

    @model_validator(mode="after")
    def _check(self) -> "FitOptions":
        if self.lower is not None and self.upper is not None and self.lower > self.upper:
            raise ValueError("lower bound exceeds upper bound")
        if self.init == "labels" and not self.labels_col:
            raise ValueError("--init labels requires --labels-col")
        if self.init == "file" and self.init_file is None:
            raise ValueError("--init file requires --init-file")
        return self

    def bounds(self) -> Optional[EigenBounds]:
        if self.lower is None and self.upper is None:
            return None
        lower = DEFAULT_LOWER_BOUND if self.lower is None else self.lower
        return EigenBounds(lower, math.inf if self.upper is None else self.upper)

    def resolved(self, settings: Settings) -> Dict[str, Any]:
        return {"bounds": bounds_label(self.bounds())}


class ExperimentOptions(RunConfig):
    mixture: Optional[int] = None
    data: Optional[Path] = None
    labels_col: Optional[str] = None
    factors: Optional[int] = Field(default=None, ge=1)
    bounds_list: Optional[str] = None
    preset: Optional[str] = None
    restarts: int = Field(default=100, ge=1)
    report_dir: Optional[Path] = None
    scale: bool = False
    workers: Optional[int] = Field(default=None, ge=1)

    @model_validator(mode="after")
    def _check(self) -> "ExperimentOptions":
        if (self.mixture is None) == (self.data is None):
            raise ValueError("exactly one of --mixture or --data is required")
        if self.data is not None and (not self.labels_col or self.factors is None):
            raise ValueError("--data requires --labels-col and --factors")
        if self.bounds_list and self.preset:
            raise ValueError("--bounds-list and --preset are mutually exclusive")
        return self

    @property
    def source_name(self) -> str:
        return "dataset" if self.mixture is None else f"mixture{self.mixture}"

    def experiment_bounds(self) -> Sequence[Optional[EigenBounds]]:
        if self.bounds_list:
            return parse_bounds_list(self.bounds_list)
        if self.preset:
            return experiment_preset(self.preset)
        if self.mixture is not None:
            return experiment_preset(f"mixture{self.mixture}")
        return (None,)

    def effective_workers(self, settings: Settings) -> int:
        return self.workers or settings.workers

    def effective_report_dir(self, settings: Settings) -> Path:
        return self.report_dir or settings.report_dir or Path("reports") / f"{self.source_name}-seed{self.seed}"

    def resolved(self, settings: Settings) -> Dict[str, Any]:
        return {
            "bounds_list": ",".join(bounds_label(bounds) for bounds in self.experiment_bounds()),
            "preset": None,
            "workers": self.effective_workers(settings),
            "report_dir": str(self.effective_report_dir(settings)),
        }


class RrTableOptions(BaseModel):
    model_config = ConfigDict(extra="forbid")

    dmax: int = Field(default=15, ge=1)
    qmax: int = Field(default=5, ge=1)


class SampleOptions(BaseModel):
    model_config = ConfigDict(extra="forbid")

    mixture: Optional[int] = None
    spec: Optional[Path] = None
    n: Optional[int] = Field(default=None, ge=1)
    seed: int = Field(default=2024, ge=0)
    out: Path

    @model_validator(mode="after")
    def _check(self) -> "SampleOptions":
        if (self.mixture is None) == (self.spec is None):
            raise ValueError("exactly one of --mixture or --spec is required")
        return self


class EigenOptions(BaseModel):
    model_config = ConfigDict(extra="forbid")

    mixture: int


def _emit(line: str = "") -> None:
    print(line, flush=True)


def _echo_config(options: BaseModel, settings: Settings) -> None:
    values = options.model_dump(mode="json")
    resolve = getattr(options, "resolved", None)
    if resolve is not None:
        values.update(resolve(settings))
    _emit(f"effective config: {json.dumps(values, sort_keys=True)}")


def _write_frame(frame: pd.DataFrame, path: Path) -> None:
    atomic_write_text(path, frame.to_csv(index=False, lineterminator="\n"))


def cmd_fit(options: FitOptions, settings: Settings) -> int:
    columns = peek_columns(options.data)
    d = len(columns) - (1 if options.labels_col and options.labels_col in columns else 0)
    if options.factors >= d:
        raise InvalidArgumentError("factors_not_below_features", detail=f"q={options.factors} d={d}")
    bounds = options.bounds()

    data = load_csv(options.data, label_column=options.labels_col)
    if options.scale:
        data, _ = standardize(data)
    if options.init == "labels":
        init: Any = data.labels
    elif options.init == "file":
        init = load_labels(options.init_file)  # type: ignore[arg-type]
    else:
        init = "random"

    result = fit(data, options.components, options.factors, init, options.fit_config(bounds))
    _emit(f"loglik: {result.loglik:.6f}")
    _emit(f"iterations: {result.outer_iterations}")
    _emit(f"status: {result.status}")
    if data.labels is not None:
        _emit(f"misclassification: {misclassification_error(result.hard_labels, data.labels):.4f}")

    if options.out is not None:
        save_model(
            options.out,
            result.params,
            bounds=bounds,
            metadata={
                "loglik": result.loglik,
                "iterations": result.outer_iterations,
                "converged": result.converged,
                "scaled": options.scale,
            },
        )
    if options.assignments_out is not None:
        frame = pd.DataFrame(
            result.responsibilities.matrix,
            columns=[f"z{g + 1}" for g in range(options.components)],
        )
        frame.insert(0, "cluster", result.hard_labels)
        _write_frame(frame, options.assignments_out)
    if options.scores_out is not None:
        frame = pd.DataFrame(result.factor_scores, columns=[f"u{k + 1}" for k in range(options.factors)])
        frame.insert(0, "cluster", result.hard_labels)
        _write_frame(frame, options.scores_out)
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def _summary_table(summary: pd.DataFrame) -> str:
    table = summary.set_index("bounds_label").T
    table.columns.name = None
    return table.to_string(float_format=lambda value: f"{value:.1f}")


def cmd_experiment(options: ExperimentOptions, settings: Settings) -> int:
    bounds_list = options.experiment_bounds()
    if options.mixture is not None:
        source: Any = builtin_mixture(options.mixture)
        n_factors = options.factors
    else:
        source = load_csv(options.data, label_column=options.labels_col)  # type: ignore[arg-type]
        if options.scale:
            source, _ = standardize(source)
        n_factors = options.factors
        if n_factors >= source.n_features:  # type: ignore[operator]
            raise InvalidArgumentError("factors_not_below_features")

    report = run_experiment(
        source,
        bounds_list,
        n_factors=n_factors,
        restarts=options.restarts,
        seed=options.seed,
        config=options.fit_config(None),
        workers=options.effective_workers(settings),
    )
    runs_path, summary_path = write_report(report, options.effective_report_dir(settings))
    _, summary = report.to_frames()
    _emit(f"reference loglik: {report.reference_loglik:.6f}")
    _emit(_summary_table(summary))
    _emit(f"runs: {runs_path}")
    _emit(f"summary: {summary_path}")
    return EXIT_OK


def format_relative_reduction(d: int, q: int) -> str:
    """Two-decimal RR(d, q) rounded half up from the exact fraction, or '-' when not parsimonious."""
    if q >= d:
        return "-"
    exact = Fraction((d - q) ** 2 - (d + q), d * (d + 1))
    if exact <= 0:
        return "-"
    hundredths = math.floor(exact * 100 + Fraction(1, 2))
    return f"{hundredths // 100}.{hundredths % 100:02d}"


def relative_reduction_table(dmax: int = 15, qmax: int = 5) -> List[List[str]]:
    rows = [["q|d"] + [str(d) for d in range(1, dmax + 1)]]
    for q in range(1, qmax + 1):
        rows.append([str(q)] + [format_relative_reduction(d, q) for d in range(1, dmax + 1)])
    return rows


def cmd_rr_table(options: RrTableOptions, settings: Settings) -> int:
    rows = relative_reduction_table(options.dmax, options.qmax)
    width = max(len(cell) for row in rows for cell in row)
    for row in rows:
        _emit(" ".join(cell.rjust(width) for cell in row))
    return EXIT_OK


def cmd_sample(options: SampleOptions, settings: Settings) -> int:
    if options.mixture is not None:
        spec = builtin_mixture(options.mixture)
    else:
        stored = load_model(options.spec)  # type: ignore[arg-type]
        spec = MixtureSpec.from_params(stored.params, options.n or 100, name=str(options.spec))
    data = sample(spec, options.seed, n=options.n)
    path = write_csv(data, options.out)
    _emit(f"wrote {data.n_observations} rows to {path}")
    return EXIT_OK


def cmd_eigen(options: EigenOptions, settings: Settings) -> int:
    spec = builtin_mixture(options.mixture)
    eigenvalues = spec.covariance_eigenvalues()
    for g, values in enumerate(eigenvalues, start=1):
        _emit(f"lambda(Sigma_{g}) = ({', '.join(f'{value:.2f}' for value in values)})")
    _emit(f"max lambda = {eigenvalues.max():.2f}")
    _emit(f"min lambda = {eigenvalues.min():.2f}")
    return EXIT_OK


COMMANDS: Dict[str, Tuple[Type[BaseModel], Callable[[Any, Settings], int]]] = {
    "fit": (FitOptions, cmd_fit),
    "experiment": (ExperimentOptions, cmd_experiment),
    "rr-table": (RrTableOptions, cmd_rr_table),
    "sample": (SampleOptions, cmd_sample),
    "eigen": (EigenOptions, cmd_eigen),
}


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int)
    parser.add_argument("--max-iterations", type=int, help="outer AECM iteration limit (default 500)")
    parser.add_argument("--epsilon", type=float, help="Aitken stopping tolerance (default 0.001)")
    parser.add_argument("--inner-max-iterations", type=int)
    parser.add_argument("--inner-tolerance", type=float)
    parser.add_argument("--strict", action="store_true", help="also enforce the largest true eigenvalue <= b")
    parser.add_argument("--clamp-all-uniquenesses", action="store_true")
    parser.add_argument("--reinit-each-iteration", action="store_true")
    parser.add_argument("--score-centering", choices=["component", "grand_mean"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cmgfa",
        description="Constrained mixtures of Gaussian factor analyzers (AECM).",
        epilog=EXIT_CODES_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
        argument_default=argparse.SUPPRESS,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", choices=["CRITICAL", "ERROR", "WARNING", "INFO", "DEBUG"])
    parser.add_argument("--config", type=Path, help="JSON file supplying defaults for flags not given")
    parser.add_argument("--workers", type=int, help="parallel restarts for experiment (env CMGFA_WORKERS)")
    sub = parser.add_subparsers(dest="command", required=True)

    def subparser(name: str, help_text: str) -> argparse.ArgumentParser:
        return sub.add_parser(
            name,
            help=help_text,
            epilog=EXIT_CODES_HELP,
            formatter_class=argparse.RawDescriptionHelpFormatter,
            argument_default=argparse.SUPPRESS,
        )

    fit_parser = subparser("fit", "fit a (constrained) mixture of factor analyzers to a CSV")
    fit_parser.add_argument("--data", type=Path)
    fit_parser.add_argument("--labels-col")
    fit_parser.add_argument("--components", type=int)
    fit_parser.add_argument("--factors", type=int)
    fit_parser.add_argument("--lower", type=float, help="lower eigenvalue bound a (default 0.01 when --upper is set)")
    fit_parser.add_argument("--upper", type=float, help="upper eigenvalue bound b")
    fit_parser.add_argument("--init", choices=["random", "labels", "file"])
    fit_parser.add_argument("--init-file", type=Path)
    fit_parser.add_argument("--scale", action="store_true")
    fit_parser.add_argument("--out", type=Path, help="model file")
    fit_parser.add_argument("--scores-out", type=Path, help="factor scores CSV")
    fit_parser.add_argument("--assignments-out", type=Path, help="hard labels and responsibilities CSV")
    _add_run_flags(fit_parser)

    experiment_parser = subparser("experiment", "random-restart comparison of bounds settings")
    experiment_parser.add_argument("--mixture", type=int)
    experiment_parser.add_argument("--data", type=Path)
    experiment_parser.add_argument("--labels-col")
    experiment_parser.add_argument("--factors", type=int)
    experiment_parser.add_argument("--bounds-list", help='e.g. "0.01:6,0.01:10,unbounded"')
    experiment_parser.add_argument("--preset", choices=["mixture1", "mixture2", "mixture3", "flea"])
    experiment_parser.add_argument("--restarts", type=int)
    experiment_parser.add_argument("--report-dir", type=Path)
    experiment_parser.add_argument("--scale", action="store_true")
    experiment_parser.add_argument("--workers", type=int, help="parallel restarts (env CMGFA_WORKERS)")
    _add_run_flags(experiment_parser)

    rr_parser = subparser("rr-table", "relative reduction of covariance parameters")
    rr_parser.add_argument("--dmax", type=int)
    rr_parser.add_argument("--qmax", type=int)

    sample_parser = subparser("sample", "write a labelled sample from a mixture")
    sample_parser.add_argument("--mixture", type=int)
    sample_parser.add_argument("--spec", type=Path, help="model file to sample from")
    sample_parser.add_argument("--n", type=int)
    sample_parser.add_argument("--seed", type=int)
    sample_parser.add_argument("--out", type=Path)

    eigen_parser = subparser("eigen", "eigenvalues of a built-in mixture's covariances")
    eigen_parser.add_argument("--mixture", type=int)
    return parser


def _config_defaults(path: Optional[Path], command: str, model: Type[BaseModel]) -> Dict[str, Any]:
    if path is None:
        return {}
    try:
        document = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError("unreadable_config", detail=str(path)) from exc
    if not isinstance(document, dict):
        raise ConfigurationError("config_not_an_object", detail=str(path))
    defaults = {key: value for key, value in document.items() if key in model.model_fields}
    section = document.get(command)
    if isinstance(section, dict):
        defaults.update(section)
    return defaults


def _resolve_options(args: argparse.Namespace, settings: Settings) -> BaseModel:
    given = vars(args).copy()
    command = given.pop("command")
    config_path = given.pop("config", None)
    given.pop("log_level", None)
    model, _ = COMMANDS[command]
    if "workers" not in model.model_fields:
        given.pop("workers", None)
    values = _config_defaults(config_path, command, model)
    values.update(given)
    if "seed" in model.model_fields and "seed" not in values:
        values["seed"] = settings.default_seed
    return model.model_validate(values)


def _configure_logging(level: str) -> None:
    logging.basicConfig(
        level=getattr(logging, level),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE

    try:
        settings = get_settings()
        _configure_logging(getattr(args, "log_level", None) or settings.log_level)
        options = _resolve_options(args, settings)
        _echo_config(options, settings)
        _, handler = COMMANDS[args.command]
        return handler(options, settings)
    except ValidationError as exc:
        messages = "; ".join(error["msg"] for error in exc.errors())
        print(f"error: invalid_options: {messages}", file=sys.stderr)
        return EXIT_USAGE
    except CmgfaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception:  # pragma: no cover - last-resort reporting
        LOGGER.exception("Unexpected failure")
        return EXIT_UNEXPECTED


__all__ = ["COMMANDS", "build_parser", "format_relative_reduction", "main", "relative_reduction_table"]
