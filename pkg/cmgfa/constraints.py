"""Eigenvalue bounds on component covariances and the SVD-based projection into them.

For ``Sigma = L L' + Psi`` with ``L = U D V'`` the projection repairs the
quantities ``d_i^2 + psi_i`` (i <= q) and ``psi_i`` (i > q) so that each lies
in ``[a, b]``: lower bounds first, then upper bounds.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import linalg

from .model_core import EigenBounds, MgfaParams, covariance_from_factors

LOGGER = logging.getLogger(__name__)

CHECK_TOLERANCE = 1e-10
VIOLATION_TOLERANCE = 1e-12
MAX_PROJECTION_PASSES = 50
BISECTION_STEPS = 60


@dataclass(frozen=True)
class SvdParts:
    """Full SVD of a d x q loading matrix: ``L = U[:, :q] diag(s) V'``."""

    left_vectors: NDArray
    singular_values: NDArray
    right_vectors: NDArray

    @property
    def n_factors(self) -> int:
        return int(self.singular_values.size)

    def reconstruct(self, singular_values: Optional[ArrayLike] = None) -> NDArray:
        values = self.singular_values if singular_values is None else np.asarray(singular_values, dtype=float)
        q = self.n_factors
        return (self.left_vectors[:, :q] * values) @ self.right_vectors.T

    def loading_eigenvalues(self) -> NDArray:
        """Nonzero eigenvalues of L L' (the squared singular values)."""
        return self.singular_values**2


def decompose_loadings(loadings: ArrayLike) -> SvdParts:
    loadings = np.asarray(loadings, dtype=float)
    left, values, right_t = linalg.svd(loadings, full_matrices=True)
    return SvdParts(left_vectors=left, singular_values=values, right_vectors=right_t.T)


def governed_quantities(loadings: ArrayLike, uniquenesses: ArrayLike) -> Tuple[NDArray, NDArray]:
    """(d_i^2 + psi_i for i <= q, psi_i for i > q): what the sufficient conditions bound."""
    uniquenesses = np.asarray(uniquenesses, dtype=float)
    parts = decompose_loadings(loadings)
    q = parts.n_factors
    return parts.singular_values**2 + uniquenesses[:q], uniquenesses[q:].copy()


def bounds_satisfied(loadings: ArrayLike, uniquenesses: ArrayLike, bounds: EigenBounds) -> bool:
    """Check every eigenvalue of ``L L' + Psi`` directly against ``[a, b]``."""
    eigenvalues = linalg.eigvalsh(covariance_from_factors(loadings, uniquenesses))
    return bool(
        eigenvalues[0] >= bounds.lower - CHECK_TOLERANCE and eigenvalues[-1] <= bounds.upper + CHECK_TOLERANCE
    )


def _tolerance(bound: float) -> float:
    return VIOLATION_TOLERANCE * max(1.0, bound)


def _smallest_eigenvalue(loadings: NDArray, uniquenesses: NDArray) -> float:
    return float(linalg.eigvalsh(covariance_from_factors(loadings, uniquenesses))[0])


def _project_once(
    loadings: NDArray,
    uniquenesses: NDArray,
    bounds: EigenBounds,
    clamp_all_uniquenesses: bool,
) -> Tuple[NDArray, NDArray, bool]:
    lower, upper = bounds.lower, bounds.upper
    parts = decompose_loadings(loadings)
    values = parts.singular_values.copy()
    psi = uniquenesses.copy()
    q = values.size

    if clamp_all_uniquenesses:
        psi = np.clip(psi, lower, upper)

    for i in range(q):
        if values[i] ** 2 + psi[i] < lower - _tolerance(lower):
            gap = lower - psi[i]
            values[i] = math.sqrt(gap) if gap >= 0 else math.sqrt(lower)
    tail = psi[q:]
    tail[tail < lower - _tolerance(lower)] = lower

    if math.isfinite(upper):
        for i in range(q):
            if values[i] ** 2 + psi[i] > upper + _tolerance(upper):
                room = upper - psi[i]
                values[i] = math.sqrt(room) if room >= 0 else math.sqrt(upper)
        tail[tail > upper + _tolerance(upper)] = upper

    # a repair that lands within rounding of the current value is not a change
    values_changed = not np.allclose(values, parts.singular_values, rtol=1e-12, atol=1e-15)
    psi_changed = not np.array_equal(psi, uniquenesses)
    new_loadings = parts.reconstruct(values) if values_changed else loadings
    return new_loadings, psi, values_changed or psi_changed


def _shrink_to_upper(loadings: NDArray, uniquenesses: NDArray, upper: float) -> NDArray:
    """Largest t in [0, 1] with lambda_max(t^2 L L' + Psi) <= b, by bisection."""

    def top(scale: float) -> float:
        return float(linalg.eigvalsh(covariance_from_factors(scale * loadings, uniquenesses))[-1])

    if top(1.0) <= upper + _tolerance(upper):
        return loadings
    low, high = 0.0, 1.0
    for _ in range(BISECTION_STEPS):
        middle = 0.5 * (low + high)
        if top(middle) <= upper:
            low = middle
        else:
            high = middle
    return low * loadings


def _fixed_point(
    loadings: NDArray,
    uniquenesses: NDArray,
    bounds: EigenBounds,
    clamp_all: bool,
) -> Tuple[NDArray, NDArray]:
    for _ in range(MAX_PROJECTION_PASSES):
        loadings, uniquenesses, changed = _project_once(loadings, uniquenesses, bounds, clamp_all)
        if not changed:
            break
    else:
        LOGGER.warning("Projection did not reach a fixed point after %d passes", MAX_PROJECTION_PASSES)
    return loadings, uniquenesses


def project(
    loadings: ArrayLike,
    uniquenesses: ArrayLike,
    bounds: EigenBounds,
    *,
    strict: bool = False,
    clamp_all_uniquenesses: bool = False,
) -> Tuple[NDArray, NDArray]:
    """Project (L, Psi) so the governed quantities lie in ``[a, b]``.

    Passes repeat until nothing changes, since a repaired singular value can
    change its rank in the re-decomposition. Singular values pair with
    uniquenesses by index; when that pairing leaves the smallest true
    eigenvalue below a, the projection is redone with every uniqueness
    clamped, which guarantees ``lambda_min >= a``. ``strict`` clamps every
    uniqueness from the start and shrinks L until the largest true
    eigenvalue is at most b.
    """
    current_loadings = np.array(loadings, dtype=float)
    current_uniquenesses = np.array(uniquenesses, dtype=float)
    clamp_all = clamp_all_uniquenesses or strict

    projected = _fixed_point(current_loadings, current_uniquenesses, bounds, clamp_all)
    if not clamp_all and _smallest_eigenvalue(*projected) < bounds.lower - CHECK_TOLERANCE:
        LOGGER.debug("Index pairing left lambda_min below %s; clamping every uniqueness", bounds.lower)
        projected = _fixed_point(current_loadings, current_uniquenesses, bounds, True)
    current_loadings, current_uniquenesses = projected

    if strict and math.isfinite(bounds.upper):
        current_loadings = _shrink_to_upper(current_loadings, current_uniquenesses, bounds.upper)
    return current_loadings, current_uniquenesses


def project_all(
    params: MgfaParams,
    bounds: EigenBounds,
    *,
    strict: bool = False,
    clamp_all_uniquenesses: bool = False,
) -> MgfaParams:
    loadings = np.empty_like(params.loadings)
    uniquenesses = np.empty_like(params.uniquenesses)
    for g in range(params.n_components):
        loadings[g], uniquenesses[g] = project(
            params.loadings[g],
            params.uniquenesses[g],
            bounds,
            strict=strict,
            clamp_all_uniquenesses=clamp_all_uniquenesses,
        )
        if not (np.array_equal(loadings[g], params.loadings[g]) and np.array_equal(uniquenesses[g], params.uniquenesses[g])):
            LOGGER.debug("Projected component %d into %s", g + 1, bounds.label)
    return params.replace_factors(loadings, uniquenesses)


__all__ = [
    "SvdParts",
    "bounds_satisfied",
    "decompose_loadings",
    "governed_quantities",
    "project",
    "project_all",
]
