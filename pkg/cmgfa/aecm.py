"""Two-cycle AECM estimation for mixtures of factor analyzers.

Cycle 1 updates the mixing weights and means from the current
responsibilities. Cycle 2 builds the weighted scatter matrices with the new
means and runs the factor-analysis fixed point on each of them, optionally
followed by the eigenvalue projection.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import linalg
from scipy.special import logsumexp

from . import constraints
from .errors import EmptyComponentError, InvalidArgumentError, NumericError, SingularityError
from .model_core import (
    Dataset,
    EigenBounds,
    MgfaParams,
    Responsibilities,
    complete_data_objective,
    component_log_densities,
)

LOGGER = logging.getLogger(__name__)

UNIQUENESS_FLOOR = 1e-10
PLATEAU_TOLERANCE = 1e-14
SCORE_CENTERINGS = ("component", "grand_mean")

InitSpec = Union[Responsibilities, MgfaParams, ArrayLike, str]


@dataclass(frozen=True)
class FitConfig:
    max_outer_iterations: int = 500
    inner_max_iterations: int = 200
    inner_tolerance: float = 1e-6
    aitken_epsilon: float = 1e-3
    bounds: Optional[EigenBounds] = None
    rng_seed: int = 0
    reinit_each_iteration: bool = False
    monotone_safeguard: bool = True
    strict_bounds: bool = False
    clamp_all_uniquenesses: bool = False
    score_centering: str = "component"

    def __post_init__(self) -> None:
        if self.max_outer_iterations < 1 or self.inner_max_iterations < 1:
            raise InvalidArgumentError("invalid_iteration_budget")
        if not self.inner_tolerance > 0 or not self.aitken_epsilon > 0:
            raise InvalidArgumentError("invalid_tolerance")
        if self.rng_seed < 0:
            raise InvalidArgumentError("negative_seed")
        if self.score_centering not in SCORE_CENTERINGS:
            raise InvalidArgumentError("invalid_score_centering", detail=self.score_centering)

    def with_bounds(self, bounds: Optional[EigenBounds]) -> "FitConfig":
        return replace(self, bounds=bounds)


@dataclass(frozen=True)
class ScatterSet:
    """Weighted scatter matrices S_g (G x d x d) and effective counts n_g."""

    matrices: NDArray
    counts: NDArray

    def __len__(self) -> int:
        return int(self.counts.size)


class InnerResult(NamedTuple):
    loadings: NDArray
    uniquenesses: NDArray
    iterations: int
    converged: bool


@dataclass(frozen=True)
class FitResult:
    params: MgfaParams
    loglik_trace: Tuple[float, ...]
    converged: bool
    outer_iterations: int
    responsibilities: Responsibilities
    hard_labels: NDArray = field(repr=False)
    factor_scores: NDArray = field(repr=False)

    @property
    def loglik(self) -> float:
        return self.loglik_trace[-1]

    @property
    def status(self) -> str:
        return "converged" if self.converged else "max_iterations"


def _posterior(log_weighted: NDArray) -> Tuple[NDArray, float]:
    normaliser = logsumexp(log_weighted, axis=1)
    bad = np.flatnonzero(~np.isfinite(normaliser))
    if bad.size:
        raise NumericError("density_underflow", row=int(bad[0]) + 1)
    resp = np.exp(log_weighted - normaliser[:, None])
    resp /= resp.sum(axis=1, keepdims=True)
    return resp, float(np.sum(normaliser))


def e_step(params: MgfaParams, data: Dataset) -> Responsibilities:
    resp, _ = _posterior(component_log_densities(params, data.observations))
    return Responsibilities(resp)


def m_step_weights_means(
    resp: Responsibilities,
    data: Dataset,
    *,
    n_factors: Optional[int] = None,
) -> Tuple[NDArray, NDArray, ScatterSet]:
    """Cycle-1 weights and means plus the cycle-2 scatter matrices around the new means."""
    z = resp.matrix
    x = data.observations
    if z.shape[0] != x.shape[0]:
        raise InvalidArgumentError("responsibilities_length_mismatch")

    counts = z.sum(axis=0)
    minimum = max((n_factors or 0) + 1, 2)
    for g, count in enumerate(counts):
        if count < minimum:
            raise EmptyComponentError(g + 1, float(count), float(minimum))

    weights = counts / x.shape[0]
    means = (z.T @ x) / counts[:, None]
    scatters = np.empty((z.shape[1], x.shape[1], x.shape[1]))
    for g in range(z.shape[1]):
        centered = x - means[g]
        scatter = (centered * z[:, g : g + 1]).T @ centered / counts[g]
        scatters[g] = 0.5 * (scatter + scatter.T)
    return weights, means, ScatterSet(matrices=scatters, counts=counts)


def init_loadings(scatter: ArrayLike, q: int) -> Tuple[NDArray, NDArray]:
    """Principal-axis start: lambda_ij = sqrt(d_j) a_ij from the top-q eigenpairs of S."""
    scatter = np.asarray(scatter, dtype=float)
    if scatter.ndim != 2 or scatter.shape[0] != scatter.shape[1]:
        raise InvalidArgumentError("invalid_scatter_shape")
    if not np.all(np.isfinite(scatter)):
        raise InvalidArgumentError("non_finite_scatter")
    if not 1 <= q < scatter.shape[0]:
        raise InvalidArgumentError("factors_not_below_features")

    values, vectors = linalg.eigh(scatter)
    values = np.clip(values[::-1][:q], 0.0, None)
    vectors = vectors[:, ::-1][:, :q]
    loadings = vectors * np.sqrt(values)
    # eigenvectors are only defined up to sign
    pivots = np.argmax(np.abs(loadings), axis=0)
    signs = np.where(loadings[pivots, np.arange(q)] < 0, -1.0, 1.0)
    loadings = loadings * signs
    uniquenesses = np.maximum(np.diag(scatter) - np.sum(loadings**2, axis=1), UNIQUENESS_FLOOR)
    return loadings, uniquenesses


def _gamma(loadings: NDArray, uniquenesses: NDArray) -> NDArray:
    """gamma = L'(L L' + Psi)^-1, obtained as M^-1 (Psi^-1 L)'."""
    scaled = loadings / uniquenesses[:, None]
    inner = np.eye(loadings.shape[1]) + loadings.T @ scaled
    try:
        factor = linalg.cho_factor(inner, lower=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise SingularityError("singular_inner_matrix") from exc
    return linalg.cho_solve(factor, scaled.T)


def inner_factor_update(
    scatter: ArrayLike,
    loadings: ArrayLike,
    uniquenesses: ArrayLike,
) -> Tuple[NDArray, NDArray]:
    scatter = np.asarray(scatter, dtype=float)
    loadings = np.asarray(loadings, dtype=float)
    uniquenesses = np.asarray(uniquenesses, dtype=float)
    if np.any(uniquenesses <= 0):
        raise InvalidArgumentError("non_positive_uniqueness")

    gamma = _gamma(loadings, uniquenesses)
    gamma_scatter = gamma @ scatter
    theta = np.eye(loadings.shape[1]) - gamma @ loadings + gamma_scatter @ gamma.T
    theta = 0.5 * (theta + theta.T)
    if not np.all(np.isfinite(theta)) or np.linalg.cond(theta) > 1e14:
        raise SingularityError("singular_theta")
    try:
        new_loadings = linalg.solve(theta, gamma_scatter, assume_a="pos").T
    except linalg.LinAlgError as exc:
        raise SingularityError("singular_theta") from exc
    new_uniquenesses = np.diag(scatter) - np.sum(new_loadings * gamma_scatter.T, axis=1)
    return new_loadings, np.maximum(new_uniquenesses, UNIQUENESS_FLOOR)


def inner_loop(
    scatter: ArrayLike,
    loadings: ArrayLike,
    uniquenesses: ArrayLike,
    config: Optional[FitConfig] = None,
    *,
    max_iterations: Optional[int] = None,
    tolerance: Optional[float] = None,
) -> InnerResult:
    """Iterate :func:`inner_factor_update` until the max-abs change drops below tolerance.

    ``max_iterations`` and ``tolerance`` override the values carried by ``config``;
    a budget of zero hands the inputs back unconverged.
    """
    config = config or FitConfig()
    budget = config.inner_max_iterations if max_iterations is None else max_iterations
    tolerance = config.inner_tolerance if tolerance is None else tolerance
    if budget < 0:
        raise InvalidArgumentError("invalid_iteration_budget")

    current_loadings = np.array(loadings, dtype=float)
    current_uniquenesses = np.array(uniquenesses, dtype=float)
    for iteration in range(1, budget + 1):
        new_loadings, new_uniquenesses = inner_factor_update(scatter, current_loadings, current_uniquenesses)
        change = max(
            float(np.max(np.abs(new_loadings - current_loadings))),
            float(np.max(np.abs(new_uniquenesses - current_uniquenesses))),
        )
        current_loadings, current_uniquenesses = new_loadings, new_uniquenesses
        if change < tolerance:
            return InnerResult(current_loadings, current_uniquenesses, iteration, True)
    return InnerResult(current_loadings, current_uniquenesses, budget, False)


def aitken_should_stop(window: Sequence[float], epsilon: float = 1e-3) -> bool:
    """Aitken-extrapolated stopping rule on the last three log-likelihoods."""
    if len(window) != 3:
        raise InvalidArgumentError("aitken_window_requires_three_values")
    previous, current, latest = (float(value) for value in window)
    if not all(math.isfinite(value) for value in (previous, current, latest)):
        raise InvalidArgumentError("non_finite_loglik")

    step = current - previous
    if abs(step) < PLATEAU_TOLERANCE:
        return True
    acceleration = (latest - current) / step
    if acceleration >= 1.0:
        return False
    asymptote = current + (latest - current) / (1.0 - acceleration)
    # strict comparison, with the rounding of ~100-sized log-likelihoods absorbed
    return (asymptote - current) < epsilon - 1e-13 * max(1.0, abs(current))


def responsibilities_from_labels(labels: ArrayLike, n_components: int) -> Responsibilities:
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.size == 0:
        raise InvalidArgumentError("invalid_labels_shape")
    if not np.all(np.equal(np.mod(labels, 1), 0)):
        raise InvalidArgumentError("labels_not_integers")
    labels = labels.astype(np.int64)
    if labels.min() < 1 or labels.max() > n_components:
        raise InvalidArgumentError("labels_out_of_range", detail=f"G={n_components}")
    matrix = np.zeros((labels.size, n_components))
    matrix[np.arange(labels.size), labels - 1] = 1.0
    return Responsibilities(matrix)


def _centres(params: MgfaParams, data: Dataset, labels: NDArray, centering: str) -> NDArray:
    if centering == "grand_mean":
        return np.broadcast_to(data.observations.mean(axis=0), data.observations.shape)
    return params.means[labels - 1]


def factor_scores(
    params: MgfaParams,
    data: Dataset,
    *,
    responsibilities: Optional[Responsibilities] = None,
    centering: str = "component",
) -> NDArray:
    """Posterior factor means gamma_g (x_i - centre) under each row's most probable component."""
    if centering not in SCORE_CENTERINGS:
        raise InvalidArgumentError("invalid_score_centering", detail=centering)
    resp = responsibilities or e_step(params, data)
    labels = resp.hard_labels()
    centred = data.observations - _centres(params, data, labels, centering)
    scores = np.zeros((data.n_observations, params.n_factors))
    for g in range(params.n_components):
        rows = labels == g + 1
        if not np.any(rows):
            continue
        try:
            gamma = _gamma(params.loadings[g], params.uniquenesses[g])
        except SingularityError as exc:
            raise SingularityError(exc.code, component=g + 1) from exc
        scores[rows] = centred[rows] @ gamma.T
    return scores


def _initial_state(
    data: Dataset,
    n_components: int,
    init: InitSpec,
    config: FitConfig,
) -> Tuple[Responsibilities, Optional[MgfaParams]]:
    if isinstance(init, MgfaParams):
        if init.n_components != n_components or init.n_features != data.n_features:
            raise InvalidArgumentError("initial_params_mismatch")
        return e_step(init, data), init
    if isinstance(init, Responsibilities):
        if init.matrix.shape != (data.n_observations, n_components):
            raise InvalidArgumentError("responsibilities_shape_mismatch")
        return init, None
    if isinstance(init, str):
        if init != "random":
            raise InvalidArgumentError("unknown_init", detail=init)
        from .simulation import random_partition

        labels = random_partition(data.n_observations, n_components, config.rng_seed)
        return responsibilities_from_labels(labels, n_components), None
    labels = np.asarray(init)
    if labels.shape != (data.n_observations,):
        raise InvalidArgumentError("labels_length_mismatch")
    return responsibilities_from_labels(labels, n_components), None


def _cycle_two(
    scatters: ScatterSet,
    q: int,
    previous: Optional[MgfaParams],
    config: FitConfig,
    *,
    first_iteration: bool,
) -> Tuple[NDArray, NDArray]:
    n_components = len(scatters)
    d = scatters.matrices.shape[1]
    loadings = np.empty((n_components, d, q))
    uniquenesses = np.empty((n_components, d))
    for g in range(n_components):
        scatter = scatters.matrices[g]
        if previous is None or config.reinit_each_iteration:
            start = init_loadings(scatter, q)
        else:
            start = (previous.loadings[g], previous.uniquenesses[g])
        try:
            inner = inner_loop(scatter, *start, config)
        except SingularityError as exc:
            raise SingularityError(exc.code, component=g + 1) from exc
        new_loadings, new_uniquenesses = inner.loadings, inner.uniquenesses

        if config.bounds is not None:
            new_loadings, new_uniquenesses = constraints.project(
                new_loadings,
                new_uniquenesses,
                config.bounds,
                strict=config.strict_bounds,
                clamp_all_uniquenesses=config.clamp_all_uniquenesses,
            )
            if config.monotone_safeguard and previous is not None and not first_iteration:
                kept = (previous.loadings[g], previous.uniquenesses[g])
                if complete_data_objective(scatter, new_loadings, new_uniquenesses) < complete_data_objective(scatter, *kept):
                    LOGGER.debug("Projection lowered the objective; keeping previous factors for component %d", g + 1)
                    new_loadings, new_uniquenesses = kept

        loadings[g] = new_loadings
        uniquenesses[g] = new_uniquenesses
    return loadings, uniquenesses


def fit(
    data: Dataset,
    n_components: int,
    n_factors: int,
    init: InitSpec,
    config: Optional[FitConfig] = None,
) -> FitResult:
    """Run AECM from ``init`` until the Aitken rule fires or the outer budget runs out.

    ``init`` may be one-hot or soft :class:`Responsibilities`, a vector of
    1-based hard labels, an :class:`MgfaParams` warm start, or ``"random"``
    (a uniform partition drawn from ``config.rng_seed``).
    """
    config = config or FitConfig()
    if n_components < 1:
        raise InvalidArgumentError("invalid_component_count")
    if not 1 <= n_factors < data.n_features:
        raise InvalidArgumentError("factors_not_below_features", detail=f"q={n_factors} d={data.n_features}")
    if data.n_observations < n_components:
        raise InvalidArgumentError("fewer_observations_than_components")

    resp, previous = _initial_state(data, n_components, init, config)
    trace = []
    converged = False
    params = previous
    iteration = 0
    for iteration in range(1, config.max_outer_iterations + 1):
        weights, means, scatters = m_step_weights_means(resp, data, n_factors=n_factors)
        loadings, uniquenesses = _cycle_two(scatters, n_factors, params, config, first_iteration=iteration == 1)
        params = MgfaParams(weights=weights, means=means, loadings=loadings, uniquenesses=uniquenesses)

        posterior, loglik = _posterior(component_log_densities(params, data.observations))
        resp = Responsibilities(posterior)
        trace.append(loglik)
        LOGGER.debug("outer iteration %d loglik=%.10f", iteration, loglik)
        if len(trace) >= 3 and aitken_should_stop(trace[-3:], config.aitken_epsilon):
            converged = True
            break

    labels = resp.hard_labels()
    scores = factor_scores(params, data, responsibilities=resp, centering=config.score_centering)
    LOGGER.info(
        "Fit finished: converged=%s iterations=%d loglik=%.6f bounds=%s",
        converged,
        iteration,
        trace[-1],
        config.bounds.label if config.bounds else "unbounded",
    )
    return FitResult(
        params=params,
        loglik_trace=tuple(trace),
        converged=converged,
        outer_iterations=iteration,
        responsibilities=resp,
        hard_labels=labels,
        factor_scores=scores,
    )


__all__ = [
    "FitConfig",
    "FitResult",
    "InnerResult",
    "ScatterSet",
    "aitken_should_stop",
    "e_step",
    "factor_scores",
    "fit",
    "init_loadings",
    "inner_factor_update",
    "inner_loop",
    "m_step_weights_means",
    "responsibilities_from_labels",
]
