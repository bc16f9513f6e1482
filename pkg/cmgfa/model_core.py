"""Parameter containers, factor-covariance algebra and Gaussian log-densities.

Component covariances have the low-rank-plus-diagonal form
``Sigma = L L' + diag(psi)``. Densities are evaluated through the q x q
matrix ``M = I + L' diag(psi)^-1 L`` so no d x d inverse is ever formed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import linalg
from scipy.special import logsumexp

from .errors import InvalidArgumentError, SingularityError

WEIGHT_TOLERANCE = 1e-12
RESPONSIBILITY_TOLERANCE = 1e-10
_LOG_2PI = math.log(2.0 * math.pi)


def _frozen(values: ArrayLike, *, dtype: type = float) -> NDArray:
    array = np.array(values, dtype=dtype, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class MgfaParams:
    """Weights, means, loadings and uniquenesses of a G-component model."""

    weights: NDArray
    means: NDArray
    loadings: NDArray
    uniquenesses: NDArray

    def __post_init__(self) -> None:
        weights = np.asarray(self.weights, dtype=float)
        means = np.asarray(self.means, dtype=float)
        loadings = np.asarray(self.loadings, dtype=float)
        uniquenesses = np.asarray(self.uniquenesses, dtype=float)

        if weights.ndim != 1 or weights.size < 1:
            raise InvalidArgumentError("invalid_weights_shape")
        n_components = weights.size
        if means.ndim != 2 or means.shape[0] != n_components:
            raise InvalidArgumentError("invalid_means_shape")
        n_features = means.shape[1]
        if loadings.ndim != 3 or loadings.shape[:2] != (n_components, n_features):
            raise InvalidArgumentError("invalid_loadings_shape")
        if uniquenesses.shape != (n_components, n_features):
            raise InvalidArgumentError("invalid_uniquenesses_shape")
        n_factors = loadings.shape[2]
        if not 1 <= n_factors < n_features:
            raise InvalidArgumentError("factors_not_below_features", detail=f"q={n_factors} d={n_features}")
        for name, array in (("weights", weights), ("means", means), ("loadings", loadings), ("uniquenesses", uniquenesses)):
            if not np.all(np.isfinite(array)):
                raise InvalidArgumentError("non_finite_parameter", detail=name)
        if np.any(weights < 0):
            raise InvalidArgumentError("negative_weight")
        total = float(weights.sum())
        if abs(total - 1.0) > WEIGHT_TOLERANCE:
            raise InvalidArgumentError("weights_not_normalised", detail=f"sum={total!r}")
        # Only rescale when the drift is larger than accumulated rounding so that
        # exactly stored weights survive a round trip bit for bit.
        if abs(total - 1.0) > 8 * np.finfo(float).eps:
            weights = weights / total
        if np.any(uniquenesses <= 0):
            raise InvalidArgumentError("non_positive_uniqueness")

        object.__setattr__(self, "weights", _frozen(weights))
        object.__setattr__(self, "means", _frozen(means))
        object.__setattr__(self, "loadings", _frozen(loadings))
        object.__setattr__(self, "uniquenesses", _frozen(uniquenesses))

    @property
    def n_components(self) -> int:
        return int(self.weights.size)

    @property
    def n_features(self) -> int:
        return int(self.means.shape[1])

    @property
    def n_factors(self) -> int:
        return int(self.loadings.shape[2])

    @property
    def dims(self) -> Tuple[int, int, int]:
        """(d, q, G)."""
        return self.n_features, self.n_factors, self.n_components

    def covariances(self) -> NDArray:
        return np.stack(
            [covariance_from_factors(self.loadings[g], self.uniquenesses[g]) for g in range(self.n_components)]
        )

    def permuted(self, order: Sequence[int]) -> "MgfaParams":
        """Return the same model with components reordered (0-based ``order``)."""
        index = np.asarray(order, dtype=int)
        return MgfaParams(
            weights=self.weights[index],
            means=self.means[index],
            loadings=self.loadings[index],
            uniquenesses=self.uniquenesses[index],
        )

    def replace_factors(self, loadings: ArrayLike, uniquenesses: ArrayLike) -> "MgfaParams":
        return MgfaParams(weights=self.weights, means=self.means, loadings=loadings, uniquenesses=uniquenesses)


@dataclass(frozen=True)
class Dataset:
    """An n x d observation matrix with optional 1-based class labels."""

    observations: NDArray
    labels: Optional[NDArray] = None
    feature_names: Optional[Tuple[str, ...]] = None

    def __post_init__(self) -> None:
        observations = np.asarray(self.observations, dtype=float)
        if observations.ndim != 2 or observations.shape[0] < 1 or observations.shape[1] < 1:
            raise InvalidArgumentError("invalid_observations_shape")
        if not np.all(np.isfinite(observations)):
            raise InvalidArgumentError("non_finite_observation")
        object.__setattr__(self, "observations", _frozen(observations))

        if self.labels is not None:
            labels = np.asarray(self.labels)
            if labels.shape != (observations.shape[0],):
                raise InvalidArgumentError("labels_length_mismatch")
            if not np.all(np.equal(np.mod(labels, 1), 0)) or labels.min() < 1:
                raise InvalidArgumentError("labels_not_positive_integers")
            object.__setattr__(self, "labels", _frozen(labels, dtype=np.int64))

        if self.feature_names is not None:
            names = tuple(str(name) for name in self.feature_names)
            if len(names) != observations.shape[1]:
                raise InvalidArgumentError("feature_names_length_mismatch")
            object.__setattr__(self, "feature_names", names)

    @property
    def n_observations(self) -> int:
        return int(self.observations.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.observations.shape[1])

    @property
    def n_classes(self) -> Optional[int]:
        if self.labels is None:
            return None
        return int(self.labels.max())

    def column_names(self) -> Tuple[str, ...]:
        if self.feature_names is not None:
            return self.feature_names
        return tuple(f"x{j + 1}" for j in range(self.n_features))


@dataclass(frozen=True)
class Responsibilities:
    """Posterior component memberships; rows are probability vectors."""

    matrix: NDArray

    def __post_init__(self) -> None:
        matrix = np.asarray(self.matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[1] < 1:
            raise InvalidArgumentError("invalid_responsibilities_shape")
        if not np.all(np.isfinite(matrix)) or np.any(matrix < 0):
            raise InvalidArgumentError("invalid_responsibilities")
        if np.any(np.abs(matrix.sum(axis=1) - 1.0) > RESPONSIBILITY_TOLERANCE):
            raise InvalidArgumentError("responsibilities_not_row_stochastic")
        object.__setattr__(self, "matrix", _frozen(matrix))

    @property
    def n_components(self) -> int:
        return int(self.matrix.shape[1])

    def hard_labels(self) -> NDArray:
        return np.argmax(self.matrix, axis=1) + 1

    def counts(self) -> NDArray:
        return self.matrix.sum(axis=0)


@dataclass(frozen=True)
class EigenBounds:
    """Interval [lower, upper] confining every eigenvalue of every Sigma_g."""

    lower: float
    upper: float = math.inf

    def __post_init__(self) -> None:
        lower = float(self.lower)
        upper = float(self.upper)
        if not math.isfinite(lower) or lower <= 0:
            raise InvalidArgumentError("invalid_lower_bound", detail=str(self.lower))
        if math.isnan(upper) or upper < lower:
            raise InvalidArgumentError("lower_bound_exceeds_upper", detail=f"a={lower} b={upper}")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def ratio(self) -> float:
        """c = a / b, the implied eigenvalue-ratio constraint."""
        return 0.0 if math.isinf(self.upper) else self.lower / self.upper

    @property
    def label(self) -> str:
        return f"{self.lower:g}:{self.upper:g}"

    @classmethod
    def parse(cls, text: str) -> "EigenBounds":
        parts = text.strip().split(":")
        if len(parts) != 2:
            raise InvalidArgumentError("invalid_bounds_text", detail=text)
        try:
            lower = float(parts[0])
            upper = math.inf if parts[1].strip().lower() in ("", "inf") else float(parts[1])
        except ValueError as exc:
            raise InvalidArgumentError("invalid_bounds_text", detail=text) from exc
        return cls(lower=lower, upper=upper)


def parse_bounds_list(text: str) -> Tuple[Optional[EigenBounds], ...]:
    """Parse ``"a:b,a:b,unbounded"``; ``None`` stands for the unconstrained run."""
    entries = []
    for raw in text.split(","):
        item = raw.strip()
        if not item:
            continue
        entries.append(None if item.lower() == "unbounded" else EigenBounds.parse(item))
    if not entries:
        raise InvalidArgumentError("empty_bounds_list")
    return tuple(entries)


def bounds_label(bounds: Optional[EigenBounds]) -> str:
    return "unbounded" if bounds is None else bounds.label


def _check_factor_shapes(loadings: NDArray, uniquenesses: NDArray) -> None:
    if loadings.ndim != 2 or uniquenesses.ndim != 1 or loadings.shape[0] != uniquenesses.shape[0]:
        raise InvalidArgumentError(
            "dimension_mismatch",
            detail=f"loadings={loadings.shape} uniquenesses={uniquenesses.shape}",
        )
    if loadings.shape[1] >= loadings.shape[0]:
        raise InvalidArgumentError("factors_not_below_features")


def covariance_from_factors(loadings: ArrayLike, uniquenesses: ArrayLike) -> NDArray:
    """Return ``L L' + diag(psi)`` as an exactly symmetric d x d matrix."""
    loadings = np.asarray(loadings, dtype=float)
    uniquenesses = np.asarray(uniquenesses, dtype=float)
    _check_factor_shapes(loadings, uniquenesses)
    if np.any(uniquenesses <= 0):
        raise InvalidArgumentError("non_positive_uniqueness")
    covariance = loadings @ loadings.T
    covariance = 0.5 * (covariance + covariance.T)
    covariance[np.diag_indices_from(covariance)] += uniquenesses
    return covariance


def _inner_cholesky(loadings: NDArray, uniquenesses: NDArray, component: Optional[int]) -> Tuple[Tuple[NDArray, bool], NDArray]:
    """Cholesky factor of ``I + L' Psi^-1 L`` and ``Psi^-1 L``."""
    scaled = loadings / uniquenesses[:, None]
    inner = np.eye(loadings.shape[1]) + loadings.T @ scaled
    try:
        factor = linalg.cho_factor(inner, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise SingularityError("singular_inner_matrix", component=component) from exc
    if np.linalg.cond(inner) > 1e14:
        raise SingularityError("singular_inner_matrix", component=component, detail="ill_conditioned")
    return factor, scaled


def factored_log_densities(
    observations: NDArray,
    mean: NDArray,
    loadings: NDArray,
    uniquenesses: NDArray,
    *,
    component: Optional[int] = None,
) -> NDArray:
    """log phi_d(x_i; mu, L L' + Psi) for every row, via the determinant lemma and Woodbury."""
    factor, scaled = _inner_cholesky(loadings, uniquenesses, component)
    n_features = observations.shape[1]
    log_det = float(np.sum(np.log(uniquenesses)) + 2.0 * np.sum(np.log(np.diag(factor[0]))))

    centered = observations - mean
    diagonal_part = np.sum(centered * centered / uniquenesses, axis=1)
    projected = centered @ scaled
    correction = np.sum(projected.T * linalg.cho_solve(factor, projected.T), axis=0)
    quadratic = diagonal_part - correction
    return -0.5 * (n_features * _LOG_2PI + log_det + quadratic)


def log_density(x: ArrayLike, mean: ArrayLike, loadings: ArrayLike, uniquenesses: ArrayLike) -> float:
    x = np.asarray(x, dtype=float)
    mean = np.asarray(mean, dtype=float)
    loadings = np.asarray(loadings, dtype=float)
    uniquenesses = np.asarray(uniquenesses, dtype=float)
    for array in (x, mean, loadings, uniquenesses):
        if not np.all(np.isfinite(array)):
            raise InvalidArgumentError("non_finite_input")
    _check_factor_shapes(loadings, uniquenesses)
    if x.shape != uniquenesses.shape or mean.shape != uniquenesses.shape:
        raise InvalidArgumentError("dimension_mismatch")
    if np.any(uniquenesses <= 0):
        raise InvalidArgumentError("non_positive_uniqueness")
    return float(factored_log_densities(x[None, :], mean, loadings, uniquenesses)[0])


def component_log_densities(params: MgfaParams, observations: NDArray) -> NDArray:
    """n x G matrix of ``log pi_g + log phi_d(x_i; mu_g, Sigma_g)``."""
    observations = np.asarray(observations, dtype=float)
    if observations.ndim != 2 or observations.shape[1] != params.n_features:
        raise InvalidArgumentError("dimension_mismatch")
    with np.errstate(divide="ignore"):
        log_weights = np.log(params.weights)
    columns = [
        log_weights[g]
        + factored_log_densities(
            observations, params.means[g], params.loadings[g], params.uniquenesses[g], component=g + 1
        )
        for g in range(params.n_components)
    ]
    return np.column_stack(columns)


def mixture_log_likelihood(params: MgfaParams, data: Dataset) -> float:
    weighted = component_log_densities(params, data.observations)
    return float(np.sum(logsumexp(weighted, axis=1)))


def complete_data_objective(scatter: ArrayLike, loadings: ArrayLike, uniquenesses: ArrayLike) -> float:
    """-1/2 [log|Sigma| + tr(Sigma^-1 S)] per unit of weight, Sigma = L L' + Psi."""
    scatter = np.asarray(scatter, dtype=float)
    loadings = np.asarray(loadings, dtype=float)
    uniquenesses = np.asarray(uniquenesses, dtype=float)
    factor, scaled = _inner_cholesky(loadings, uniquenesses, None)
    log_det = float(np.sum(np.log(uniquenesses)) + 2.0 * np.sum(np.log(np.diag(factor[0]))))
    # tr(Sigma^-1 S) = tr(Psi^-1 S) - tr(M^-1 (Psi^-1 L)' S (Psi^-1 L))
    trace = float(np.sum(np.diag(scatter) / uniquenesses))
    reduced = scaled.T @ scatter @ scaled
    trace -= float(np.trace(linalg.cho_solve(factor, reduced)))
    return -0.5 * (log_det + trace)


def covariance_eigenvalues(params: MgfaParams) -> NDArray:
    """G x d eigenvalues of each Sigma_g, sorted descending."""
    values = [linalg.eigvalsh(cov)[::-1] for cov in params.covariances()]
    return np.vstack(values)


def free_parameter_count(d: int, q: int) -> int:
    """Free covariance parameters per component: dq + d - q(q-1)/2."""
    if q >= d or q < 0 or d < 1:
        raise InvalidArgumentError("factors_not_below_features", detail=f"q={q} d={d}")
    return d * q + d - q * (q - 1) // 2


def relative_reduction(d: int, q: int) -> float:
    """Relative covariance-parameter saving against an unrestricted mixture."""
    if q >= d or q < 0 or d < 1:
        raise InvalidArgumentError("factors_not_below_features", detail=f"q={q} d={d}")
    return ((d - q) ** 2 - (d + q)) / (d * (d + 1))


__all__ = [
    "Dataset",
    "EigenBounds",
    "MgfaParams",
    "Responsibilities",
    "bounds_label",
    "complete_data_objective",
    "component_log_densities",
    "covariance_eigenvalues",
    "covariance_from_factors",
    "factored_log_densities",
    "free_parameter_count",
    "log_density",
    "mixture_log_likelihood",
    "parse_bounds_list",
    "relative_reduction",
]
