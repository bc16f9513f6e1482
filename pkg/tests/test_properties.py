"""Randomised checks of the estimator's structural guarantees."""
from __future__ import annotations

import numpy as np
import pytest
from scipy import stats

from cmgfa.aecm import FitConfig, fit
from cmgfa.constraints import bounds_satisfied, governed_quantities, project_all
from cmgfa.errors import CmgfaError
from cmgfa.model_core import (
    EigenBounds,
    MgfaParams,
    covariance_eigenvalues,
    covariance_from_factors,
    log_density,
)
from cmgfa.simulation import MixtureSpec, random_partition, sample

from conftest import RUN_SLOW, make_random_params

DRAWS = 200 if RUN_SLOW else 30
MIN_SUCCESS = 0.8


def test_factored_density_matches_dense_density(rng):
    for _ in range(1000):
        d = int(rng.integers(2, 7))
        q = int(rng.integers(1, d))
        loadings = rng.normal(size=(d, q))
        psi = rng.uniform(0.1, 2.0, size=d)
        mean = rng.normal(size=d)
        x = rng.normal(scale=3.0, size=d)
        dense = stats.multivariate_normal(mean=mean, cov=covariance_from_factors(loadings, psi)).logpdf(x)
        assert log_density(x, mean, loadings, psi) == pytest.approx(dense, rel=1e-8, abs=1e-8)


def _random_fits(strict, bounded=True):
    rng = np.random.default_rng(7 if strict else (3 if bounded else 5))
    outcomes = []
    for draw in range(DRAWS):
        d = int(rng.integers(3, 9))
        q = int(rng.integers(1, min(3, d - 1) + 1))
        n_components = int(rng.integers(1, 5))
        params = make_random_params(rng, d=d, q=q, n_components=n_components, spread=5.0)
        truth = covariance_eigenvalues(params)
        bounds = EigenBounds(0.5 * truth.min(), 2.0 * truth.max()) if bounded else None
        data = sample(MixtureSpec.from_params(params, 80 * n_components), (draw, int(strict), int(bounded)))
        config = FitConfig(max_outer_iterations=200, inner_max_iterations=50, bounds=bounds, strict_bounds=strict)
        start = random_partition(data.n_observations, n_components, (draw, 99))
        try:
            outcomes.append((bounds, fit(data, n_components, q, start, config)))
        except CmgfaError:
            outcomes.append((bounds, None))
    return outcomes


def _successful(outcomes):
    done = [(bounds, result) for bounds, result in outcomes if result is not None]
    assert len(done) >= MIN_SUCCESS * len(outcomes)
    return done


@pytest.mark.parametrize("bounded", [True, False])
def test_traces_never_decrease(bounded):
    for _, result in _successful(_random_fits(strict=False, bounded=bounded)):
        trace = np.asarray(result.loglik_trace)
        slack = 1e-8 * np.maximum(1.0, np.abs(trace[:-1]))
        assert np.all(np.diff(trace) >= -slack)


def test_governed_quantities_stay_within_bounds():
    for bounds, result in _successful(_random_fits(strict=False)):
        for g in range(result.params.n_components):
            psi = result.params.uniquenesses[g]
            leading, tail = governed_quantities(result.params.loadings[g], psi)
            q = leading.size
            checked = np.concatenate([leading[psi[:q] <= bounds.upper], tail])
            assert checked.min() >= bounds.lower - 1e-9
            assert checked.max() <= bounds.upper + 1e-9
            assert np.linalg.eigvalsh(result.params.covariances()[g])[0] >= bounds.lower - 1e-9


def test_strict_mode_bounds_every_eigenvalue():
    for bounds, result in _successful(_random_fits(strict=True)):
        for g in range(result.params.n_components):
            eigenvalues = np.linalg.eigvalsh(result.params.covariances()[g])
            assert eigenvalues.min() >= bounds.lower - 1e-8
            assert eigenvalues.max() <= bounds.upper + 1e-8


FEASIBLE_DRAWS = 200


def test_traces_from_feasible_parameters_never_decrease():
    rng = np.random.default_rng(11)
    traces = []
    for draw in range(FEASIBLE_DRAWS):
        d = int(rng.integers(3, 7))
        q = int(rng.integers(1, min(2, d - 1) + 1))
        n_components = int(rng.integers(1, 4))
        truth = make_random_params(rng, d=d, q=q, n_components=n_components, spread=5.0)
        eigenvalues = covariance_eigenvalues(truth)
        bounds = EigenBounds(0.5 * eigenvalues.min(), 1.5 * eigenvalues.max())
        strict = bool(draw % 2)
        start = project_all(
            MgfaParams(
                weights=truth.weights,
                means=truth.means + rng.normal(scale=0.5, size=truth.means.shape),
                loadings=rng.normal(size=truth.loadings.shape),
                uniquenesses=rng.uniform(0.1, 2.0, size=truth.uniquenesses.shape),
            ),
            bounds,
            strict=True,
        )
        for g in range(n_components):
            assert bounds_satisfied(start.loadings[g], start.uniquenesses[g], bounds)

        data = sample(MixtureSpec.from_params(truth, 40 * n_components), (draw, 17))
        config = FitConfig(max_outer_iterations=40, inner_max_iterations=20, bounds=bounds, strict_bounds=strict)
        try:
            traces.append(fit(data, n_components, q, start, config).loglik_trace)
        except CmgfaError:
            continue

    assert len(traces) >= MIN_SUCCESS * FEASIBLE_DRAWS
    for trace in traces:
        trace = np.asarray(trace)
        slack = 1e-8 * np.maximum(1.0, np.abs(trace[:-1]))
        assert np.all(np.diff(trace) >= -slack)
