"""Synthetic mixtures, random-restart experiments and their reports."""
from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from numpy.typing import ArrayLike, NDArray

from .aecm import FitConfig, FitResult, fit, init_loadings, inner_loop
from .data_io import atomic_write_text
from .errors import CmgfaError, ConfigurationError, InvalidArgumentError, UnknownMixtureError
from .metrics import five_number_summary, misclassification_error
from .model_core import Dataset, EigenBounds, MgfaParams, bounds_label

LOGGER = logging.getLogger(__name__)

DATA_DIR = Path(__file__).resolve().parent / "data"
MIXTURES_FILE = DATA_DIR / "mixtures.json"
MIXTURES_CHECKSUM = DATA_DIR / "mixtures.json.sha256"

RIGHT_MAX_LOGLIK_TOLERANCE = 0.1
RIGHT_MAX_MATCH_TOLERANCE = 0.02
MAX_PARTITION_ATTEMPTS = 1000
FACTOR_FIT_ITERATIONS = 5000

SeedLike = Union[int, Sequence[int]]
BoundsList = Sequence[Optional[EigenBounds]]


def _bounds_grid(lower: float, uppers: Sequence[float]) -> Tuple[Optional[EigenBounds], ...]:
    return tuple(EigenBounds(lower, upper) for upper in uppers) + (None,)


PRESETS: Dict[str, Tuple[Optional[EigenBounds], ...]] = {
    "mixture1": _bounds_grid(0.01, (6, 10, 15, 20, 25)),
    "mixture2": _bounds_grid(0.01, (10, 15, 20, 25)),
    "mixture3": _bounds_grid(0.01, (6, 10, 15, 20, 25)),
    "flea": (
        EigenBounds(0.1, 200),
        EigenBounds(0.05, 200),
        EigenBounds(0.1, 300),
        EigenBounds(0.5, 300),
        None,
    ),
}


def experiment_preset(name: str) -> Tuple[Optional[EigenBounds], ...]:
    try:
        return PRESETS[name]
    except KeyError as exc:
        raise InvalidArgumentError("unknown_preset", detail=name) from exc


@dataclass(frozen=True)
class MixtureSpec:
    """A generating mixture: factor parameters or, alternatively, full covariances."""

    weights: NDArray
    means: NDArray
    sample_size: int
    n_factors: int
    params: Optional[MgfaParams] = None
    covariances: Optional[NDArray] = None
    name: str = "custom"

    def __post_init__(self) -> None:
        if (self.params is None) == (self.covariances is None):
            raise InvalidArgumentError("mixture_needs_factors_or_covariances")
        if self.sample_size < 1:
            raise InvalidArgumentError("invalid_sample_size")
        if self.params is not None:
            object.__setattr__(self, "weights", self.params.weights)
            object.__setattr__(self, "means", self.params.means)
            return

        weights = np.array(self.weights, dtype=float)
        means = np.array(self.means, dtype=float)
        covariances = np.array(self.covariances, dtype=float)
        if weights.ndim != 1 or np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise InvalidArgumentError("weights_not_normalised")
        if means.shape[0] != weights.size or covariances.shape != (weights.size, means.shape[1], means.shape[1]):
            raise InvalidArgumentError("dimension_mismatch")
        for g, covariance in enumerate(covariances):
            if not np.allclose(covariance, covariance.T, atol=1e-12):
                raise InvalidArgumentError("covariance_not_symmetric", detail=f"component={g + 1}")
            try:
                np.linalg.cholesky(covariance)
            except np.linalg.LinAlgError as exc:
                raise InvalidArgumentError("covariance_not_positive_definite", detail=f"component={g + 1}") from exc
        for array in (weights, means, covariances):
            array.setflags(write=False)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covariances", covariances)

    @classmethod
    def from_params(cls, params: MgfaParams, sample_size: int, *, name: str = "custom") -> "MixtureSpec":
        return cls(
            weights=params.weights,
            means=params.means,
            sample_size=sample_size,
            n_factors=params.n_factors,
            params=params,
            name=name,
        )

    @property
    def n_components(self) -> int:
        return int(np.asarray(self.weights).size)

    @property
    def n_features(self) -> int:
        return int(np.asarray(self.means).shape[1])

    def covariance_matrices(self) -> NDArray:
        if self.params is not None:
            return self.params.covariances()
        return np.array(self.covariances)

    def factor_params(self) -> MgfaParams:
        """The generating parameters in factor form.

        Covariance-only mixtures are replaced by the q-factor fit of each
        generating covariance.
        """
        if self.params is not None:
            return self.params
        loadings, uniquenesses = [], []
        for covariance in self.covariance_matrices():
            start = init_loadings(covariance, self.n_factors)
            inner = inner_loop(covariance, *start, max_iterations=FACTOR_FIT_ITERATIONS, tolerance=1e-10)
            loadings.append(inner.loadings)
            uniquenesses.append(inner.uniquenesses)
        return MgfaParams(
            weights=self.weights,
            means=self.means,
            loadings=np.stack(loadings),
            uniquenesses=np.stack(uniquenesses),
        )

    def covariance_eigenvalues(self) -> NDArray:
        """G x d eigenvalues of the generating covariances, descending."""
        return np.vstack([np.linalg.eigvalsh(cov)[::-1] for cov in self.covariance_matrices()])


def _load_mixture_document() -> dict:
    payload = MIXTURES_FILE.read_bytes()
    expected = MIXTURES_CHECKSUM.read_text(encoding="utf-8").split()[0].strip()
    actual = hashlib.sha256(payload).hexdigest()
    if actual != expected:
        raise ConfigurationError("mixture_checksum_mismatch", detail=f"expected={expected} actual={actual}")
    return json.loads(payload.decode("utf-8"))


@lru_cache()
def builtin_mixture(mixture_id: Union[int, str]) -> MixtureSpec:
    entries = _load_mixture_document()["mixtures"]
    key = str(mixture_id).strip()
    if key not in entries:
        raise UnknownMixtureError("unknown_mixture", detail=key)
    entry = entries[key]
    name = f"mixture{key}"
    if "covariances" in entry:
        return MixtureSpec(
            weights=entry["weights"],
            means=entry["means"],
            sample_size=int(entry["sample_size"]),
            n_factors=int(entry["n_factors"]),
            covariances=entry["covariances"],
            name=name,
        )
    params = MgfaParams(
        weights=entry["weights"],
        means=entry["means"],
        loadings=entry["loadings"],
        uniquenesses=entry["uniquenesses"],
    )
    return MixtureSpec.from_params(params, int(entry["sample_size"]), name=name)


def builtin_mixture_ids() -> Tuple[str, ...]:
    return tuple(sorted(_load_mixture_document()["mixtures"]))


def _entropy(seed: SeedLike) -> List[int]:
    values = [int(seed)] if np.isscalar(seed) else [int(value) for value in seed]  # type: ignore[arg-type]
    if any(value < 0 for value in values):
        raise InvalidArgumentError("negative_seed")
    return values


def sample(spec: MixtureSpec, seed: SeedLike, n: Optional[int] = None) -> Dataset:
    """Draw ``n`` (default ``spec.sample_size``) labelled observations."""
    size = spec.sample_size if n is None else int(n)
    if size < 1:
        raise InvalidArgumentError("invalid_sample_size")
    rng = np.random.default_rng(_entropy(seed))
    weights = np.asarray(spec.weights)
    labels = rng.choice(spec.n_components, size=size, p=weights / weights.sum())
    means = np.asarray(spec.means)[labels]

    if spec.params is not None:
        params = spec.params
        factors = rng.standard_normal((size, params.n_factors))
        noise = rng.standard_normal((size, params.n_features)) * np.sqrt(params.uniquenesses[labels])
        observations = means + np.einsum("nij,nj->ni", params.loadings[labels], factors) + noise
    else:
        roots = np.linalg.cholesky(spec.covariance_matrices())
        draws = rng.standard_normal((size, spec.n_features))
        observations = means + np.einsum("nij,nj->ni", roots[labels], draws)
    return Dataset(observations=observations, labels=labels + 1)


def random_partition(n: int, n_components: int, seed: SeedLike) -> NDArray:
    """Uniform multinomial labels in 1..G, redrawn until no component is empty."""
    if n_components < 1 or n < n_components:
        raise InvalidArgumentError("partition_needs_n_at_least_g", detail=f"n={n} G={n_components}")
    entropy = _entropy(seed)
    for attempt in range(MAX_PARTITION_ATTEMPTS):
        rng = np.random.default_rng(entropy + [attempt])
        labels = rng.integers(1, n_components + 1, size=n)
        if np.all(np.bincount(labels, minlength=n_components + 1)[1:] > 0):
            return labels
    raise InvalidArgumentError("partition_attempts_exhausted", detail=f"n={n} G={n_components}")


def right_maximum_reference(
    data: Dataset,
    n_factors: int,
    config: Optional[FitConfig] = None,
    *,
    start: Optional[MgfaParams] = None,
) -> FitResult:
    """Fit started from the generating parameters, or from the true classification without them.

    The bounds carried by ``config`` are kept, so a bounded setting is
    scored against the maximum of its own constrained likelihood.
    """
    config = config or FitConfig()
    if start is not None:
        return fit(data, start.n_components, n_factors, start, config)
    if data.labels is None:
        raise InvalidArgumentError("reference_needs_labels")
    return fit(data, int(data.labels.max()), n_factors, data.labels, config)


@dataclass(frozen=True)
class RunRecord:
    restart: int
    bounds_label: str
    status: str
    loglik: float
    iterations: int
    misclassification: float
    right_max: bool
    error: str = ""

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    @property
    def failed(self) -> bool:
        return self.status == "failed"


@dataclass(frozen=True)
class BoundsSummary:
    bounds_label: str
    runs: int
    right_max: int
    converged: int
    not_converged: int
    failed: int
    misclassification: Tuple[float, float, float, float, float]

    @property
    def right_max_rate(self) -> float:
        return self.right_max / self.runs if self.runs else 0.0


@dataclass(frozen=True)
class ExperimentReport:
    source: str
    seed: int
    restarts: int
    n_factors: int
    reference_loglik: float
    bounds_labels: Tuple[str, ...]
    records: Tuple[RunRecord, ...] = field(repr=False)
    reference_logliks: Dict[str, float] = field(default_factory=dict)

    def runs_for(self, label: str) -> Tuple[RunRecord, ...]:
        return tuple(record for record in self.records if record.bounds_label == label)

    def summary(self, label: str) -> BoundsSummary:
        runs = self.runs_for(label)
        if not runs:
            raise InvalidArgumentError("unknown_bounds_label", detail=label)
        errors = [record.misclassification for record in runs if not record.failed]
        quartiles = five_number_summary(errors) if errors else (math.nan,) * 5
        return BoundsSummary(
            bounds_label=label,
            runs=len(runs),
            right_max=sum(record.right_max for record in runs),
            converged=sum(record.converged for record in runs),
            not_converged=sum(record.status == "max_iterations" for record in runs),
            failed=sum(record.failed for record in runs),
            misclassification=quartiles,  # type: ignore[arg-type]
        )

    def summaries(self) -> Tuple[BoundsSummary, ...]:
        return tuple(self.summary(label) for label in self.bounds_labels)

    def to_frames(self) -> Tuple[pd.DataFrame, pd.DataFrame]:
        runs = pd.DataFrame(
            [
                {
                    "restart": record.restart,
                    "bounds_label": record.bounds_label,
                    "status": record.status,
                    "converged": record.converged,
                    "loglik": record.loglik,
                    "iterations": record.iterations,
                    "miscl_error": record.misclassification,
                    "right_max": record.right_max,
                    "error": record.error,
                }
                for record in self.records
            ],
            columns=["restart", "bounds_label", "status", "converged", "loglik", "iterations", "miscl_error", "right_max", "error"],
        )
        summary = pd.DataFrame(
            [
                {
                    "bounds_label": item.bounds_label,
                    "runs": item.runs,
                    "reference_loglik": self.reference_logliks.get(item.bounds_label, self.reference_loglik),
                    "right_max_pct": 100.0 * item.right_max_rate,
                    "converged": item.converged,
                    "not_converged": item.not_converged,
                    "failed": item.failed,
                    "miscl_min": item.misclassification[0],
                    "miscl_q1": item.misclassification[1],
                    "miscl_median": item.misclassification[2],
                    "miscl_q3": item.misclassification[3],
                    "miscl_max": item.misclassification[4],
                }
                for item in self.summaries()
            ]
        )
        return runs, summary


def write_report(report: ExperimentReport, directory: Union[str, Path]) -> Tuple[Path, Path]:
    """Write ``runs.csv`` and ``summary.csv`` under ``directory``."""
    directory = Path(directory)
    runs, summary = report.to_frames()
    runs_path = atomic_write_text(directory / "runs.csv", runs.to_csv(index=False, lineterminator="\n"))
    summary_path = atomic_write_text(directory / "summary.csv", summary.to_csv(index=False, lineterminator="\n"))
    LOGGER.info("Wrote experiment report to %s", directory)
    return runs_path, summary_path


def _run_single(
    data: Dataset,
    n_components: int,
    n_factors: int,
    labels: NDArray,
    config: FitConfig,
    restart: int,
    reference_loglik: float,
    reference_labels: NDArray,
    loglik_tolerance: float,
    match_tolerance: float,
) -> RunRecord:
    label = bounds_label(config.bounds)
    try:
        result = fit(data, n_components, n_factors, labels, config)
    except CmgfaError as exc:
        return RunRecord(
            restart=restart,
            bounds_label=label,
            status="failed",
            loglik=math.nan,
            iterations=0,
            misclassification=math.nan,
            right_max=False,
            error=str(exc),
        )

    agreement = misclassification_error(result.hard_labels, reference_labels)
    right_max = (
        result.converged
        and result.loglik >= reference_loglik - loglik_tolerance
        and agreement <= match_tolerance
    )
    return RunRecord(
        restart=restart,
        bounds_label=label,
        status=result.status,
        loglik=result.loglik,
        iterations=result.outer_iterations,
        misclassification=misclassification_error(result.hard_labels, data.labels),
        right_max=bool(right_max),
    )


def _references(
    data: Dataset,
    n_factors: int,
    config: FitConfig,
    bounds_list: BoundsList,
    start: Optional[MgfaParams],
) -> Tuple[FitResult, Dict[str, FitResult]]:
    unbounded = right_maximum_reference(data, n_factors, config.with_bounds(None), start=start)
    LOGGER.info("Reference fit [unbounded]: loglik=%.6f iterations=%d", unbounded.loglik, unbounded.outer_iterations)
    references = {bounds_label(None): unbounded}
    for bounds in bounds_list:
        if bounds is None or bounds.label in references:
            continue
        try:
            result = right_maximum_reference(data, n_factors, config.with_bounds(bounds), start=start)
        except CmgfaError as exc:
            LOGGER.warning("Reference fit [%s] failed (%s); scoring against the unbounded reference", bounds.label, exc)
            result = unbounded
        else:
            LOGGER.info("Reference fit [%s]: loglik=%.6f iterations=%d", bounds.label, result.loglik, result.outer_iterations)
        references[bounds.label] = result
    return unbounded, references


def run_experiment(
    source: Union[MixtureSpec, Dataset],
    bounds_list: BoundsList,
    *,
    n_components: Optional[int] = None,
    n_factors: Optional[int] = None,
    restarts: int = 100,
    seed: int = 2024,
    config: Optional[FitConfig] = None,
    workers: int = 1,
    initial_partitions: Optional[Sequence[ArrayLike]] = None,
    reference_from_labels: bool = False,
    loglik_tolerance: float = RIGHT_MAX_LOGLIK_TOLERANCE,
    match_tolerance: float = RIGHT_MAX_MATCH_TOLERANCE,
) -> ExperimentReport:
    """Fit every bounds setting from the same set of random partitions.

    Each bounds setting has its own reference: the fit with those bounds
    started from the generating parameters of a mixture, or from the true
    labels for a dataset or when ``reference_from_labels`` is set. A run
    reaches the right maximum when it converges to a log-likelihood no more
    than ``loglik_tolerance`` below its reference and its classification
    differs from the reference one by at most ``match_tolerance``. Failed
    runs are recorded, never raised.
    """
    if restarts < 1:
        raise InvalidArgumentError("restarts_must_be_positive")
    if workers < 1:
        raise InvalidArgumentError("workers_must_be_positive")
    if not bounds_list:
        raise InvalidArgumentError("empty_bounds_list")
    config = config or FitConfig()

    if isinstance(source, MixtureSpec):
        data = sample(source, seed)
        name = source.name
        n_components = n_components or source.n_components
        n_factors = n_factors or source.n_factors
    else:
        data = source
        name = "dataset"
        if data.labels is None:
            raise InvalidArgumentError("experiment_needs_labels")
        n_components = n_components or int(data.labels.max())
    if n_factors is None:
        raise InvalidArgumentError("missing_factor_count")

    start = None
    if isinstance(source, MixtureSpec) and not reference_from_labels:
        if n_components == source.n_components and n_factors == source.n_factors:
            start = source.factor_params()
    reference, references = _references(data, n_factors, config, bounds_list, start)

    if initial_partitions is None:
        partitions = [random_partition(data.n_observations, n_components, (seed, restart)) for restart in range(restarts)]
    else:
        partitions = [np.asarray(labels) for labels in initial_partitions]
        if len(partitions) != restarts:
            raise InvalidArgumentError("partition_count_mismatch")

    tasks = [
        (config.with_bounds(bounds), restart)
        for bounds in bounds_list
        for restart in range(restarts)
    ]
    records = Parallel(n_jobs=workers)(
        delayed(_run_single)(
            data,
            n_components,
            n_factors,
            partitions[restart],
            task_config,
            restart + 1,
            references[bounds_label(task_config.bounds)].loglik,
            references[bounds_label(task_config.bounds)].hard_labels,
            loglik_tolerance,
            match_tolerance,
        )
        for task_config, restart in tasks
    )

    for record in records:
        if record.failed:
            LOGGER.warning("restart %d [%s] failed: %s", record.restart, record.bounds_label, record.error)
        else:
            LOGGER.info(
                "restart %d [%s] %s loglik=%.6f right_max=%s",
                record.restart,
                record.bounds_label,
                record.status,
                record.loglik,
                record.right_max,
            )

    return ExperimentReport(
        source=name,
        seed=seed,
        restarts=restarts,
        n_factors=n_factors,
        reference_loglik=reference.loglik,
        bounds_labels=tuple(dict.fromkeys(bounds_label(bounds) for bounds in bounds_list)),
        records=tuple(records),
        reference_logliks={label: result.loglik for label, result in references.items()},
    )


__all__ = [
    "BoundsSummary",
    "ExperimentReport",
    "MixtureSpec",
    "PRESETS",
    "RunRecord",
    "builtin_mixture",
    "builtin_mixture_ids",
    "experiment_preset",
    "random_partition",
    "right_maximum_reference",
    "run_experiment",
    "sample",
    "write_report",
]
