from __future__ import annotations

import numpy as np
import pandas as pd
import pytest

from cmgfa import simulation
from cmgfa.aecm import FitConfig, fit
from cmgfa.errors import ConfigurationError, EmptyComponentError, InvalidArgumentError, UnknownMixtureError
from cmgfa.model_core import EigenBounds, MgfaParams
from cmgfa.simulation import (
    MixtureSpec,
    builtin_mixture,
    builtin_mixture_ids,
    experiment_preset,
    random_partition,
    right_maximum_reference,
    run_experiment,
    sample,
    write_report,
)

QUICK = FitConfig(max_outer_iterations=100, inner_max_iterations=30)


@pytest.mark.parametrize("mixture_id,dims", [(1, (3, 6, 2)), (2, (4, 7, 2)), (3, (2, 3, 2))])
def test_builtin_dimensions(mixture_id, dims):
    spec = builtin_mixture(mixture_id)
    assert (spec.n_components, spec.n_features, spec.n_factors) == dims
    assert spec.name == f"mixture{mixture_id}"


def test_builtin_ids():
    assert builtin_mixture_ids() == ("1", "2", "3")


def test_mixture_three_eigenvalues():
    values = builtin_mixture(3).covariance_eigenvalues()
    np.testing.assert_allclose(values[0], [5.55, 1.61, 0.84], atol=0.01)
    np.testing.assert_allclose(values[1], [5.33, 1.73, 0.94], atol=0.01)
    np.testing.assert_allclose(values.sum(axis=1), [8.0, 8.0])


def test_unknown_mixture():
    with pytest.raises(UnknownMixtureError):
        builtin_mixture(9)


def test_checksum_mismatch_detected(tmp_path, monkeypatch):
    tampered = tmp_path / "mixtures.json"
    tampered.write_bytes(simulation.MIXTURES_FILE.read_bytes() + b"\n")
    monkeypatch.setattr(simulation, "MIXTURES_FILE", tampered)
    builtin_mixture.cache_clear()
    try:
        with pytest.raises(ConfigurationError) as excinfo:
            builtin_mixture(1)
        assert excinfo.value.code == "mixture_checksum_mismatch"
    finally:
        builtin_mixture.cache_clear()


def test_spec_rejects_indefinite_covariance():
    with pytest.raises(InvalidArgumentError):
        MixtureSpec(weights=[1.0], means=[[0.0, 0.0]], sample_size=10, n_factors=1, covariances=[[[1.0, 2.0], [2.0, 1.0]]])


def test_sample_moments_match_generating_mixture():
    spec = builtin_mixture(1)
    data = sample(spec, 7, n=150_000)
    counts = np.bincount(data.labels, minlength=4)[1:] / data.n_observations
    np.testing.assert_allclose(counts, spec.weights, atol=0.01)
    covariances = spec.covariance_matrices()
    for g in range(3):
        rows = data.observations[data.labels == g + 1]
        np.testing.assert_allclose(rows.mean(axis=0), spec.means[g], atol=0.05)
        np.testing.assert_allclose(np.cov(rows, rowvar=False), covariances[g], atol=0.06)


def test_sample_from_covariances():
    data = sample(builtin_mixture(3), 1, n=40_000)
    rows = data.observations[data.labels == 2]
    np.testing.assert_allclose(rows.mean(axis=0), [2.0, 2.0, 6.0], atol=0.06)


def test_sample_is_reproducible():
    spec = builtin_mixture(2)
    first, second = sample(spec, 99), sample(spec, 99)
    np.testing.assert_array_equal(first.observations, second.observations)
    np.testing.assert_array_equal(first.labels, second.labels)
    assert first.n_observations == 100
    assert not np.array_equal(sample(spec, 100).observations, first.observations)


def test_random_partition_covers_all_components():
    labels = random_partition(10, 4, 3)
    assert set(labels.tolist()) == {1, 2, 3, 4}
    np.testing.assert_array_equal(labels, random_partition(10, 4, 3))
    assert not np.array_equal(random_partition(100, 3, (3, 0)), random_partition(100, 3, (3, 1)))


def test_random_partition_needs_enough_rows():
    with pytest.raises(InvalidArgumentError):
        random_partition(2, 3, 0)
    with pytest.raises(InvalidArgumentError):
        random_partition(5, 2, -1)


def test_reference_fit_on_separated_data():
    data = sample(builtin_mixture(1), 5)
    reference = right_maximum_reference(data, 2, QUICK)
    assert reference.converged
    assert simulation.misclassification_error(reference.hard_labels, data.labels) <= 0.02


def test_experiment_with_true_partitions_reaches_right_maximum():
    spec = builtin_mixture(1)
    data = sample(spec, 5)
    report = run_experiment(
        spec,
        [EigenBounds(0.01, 10.0), None],
        restarts=2,
        seed=5,
        config=QUICK,
        initial_partitions=[data.labels, data.labels],
        reference_from_labels=True,
    )
    assert report.bounds_labels == ("0.01:10", "unbounded")
    unbounded = report.summary("unbounded")
    assert unbounded.runs == 2
    assert unbounded.right_max_rate == 1.0
    assert unbounded.failed == 0
    for record in report.runs_for("0.01:10"):
        assert record.loglik == report.reference_logliks["0.01:10"]


def test_reference_starts_from_generating_parameters():
    spec = builtin_mixture(1)
    bounds = EigenBounds(0.01, 6.0)
    report = run_experiment(spec, [bounds, None], restarts=1, seed=5, config=QUICK)
    data = sample(spec, 5)
    assert report.reference_loglik == fit(data, 3, 2, spec.params, QUICK).loglik
    assert report.reference_logliks["unbounded"] == report.reference_loglik
    assert report.reference_logliks["0.01:6"] == fit(data, 3, 2, spec.params, QUICK.with_bounds(bounds)).loglik
    _, summary = report.to_frames()
    assert summary["reference_loglik"].tolist() == [report.reference_logliks["0.01:6"], report.reference_loglik]


def test_random_starts_reach_right_maximum_of_separated_mixture():
    params = MgfaParams(
        weights=[0.5, 0.5],
        means=[[0.0, 0.0, 0.0, 0.0], [8.0, 8.0, -8.0, 8.0]],
        loadings=[[[1.0], [0.8], [0.6], [0.4]], [[0.4], [-0.6], [0.8], [1.0]]],
        uniquenesses=[[0.5, 0.5, 0.5, 0.5], [0.4, 0.4, 0.4, 0.4]],
    )
    spec = MixtureSpec.from_params(params, 200)
    config = FitConfig(max_outer_iterations=300, inner_max_iterations=100)
    report = run_experiment(spec, [EigenBounds(0.05, 50.0), None], restarts=4, seed=3, config=config)
    for summary in report.summaries():
        assert summary.failed == 0
        assert summary.right_max >= 2
        assert summary.misclassification[0] == 0.0


def test_covariance_mixture_gets_factor_form():
    spec = builtin_mixture(3)
    params = spec.factor_params()
    assert params.loadings.shape == (2, 3, 2)
    np.testing.assert_array_equal(params.means, spec.means)
    np.testing.assert_allclose(params.covariances(), spec.covariance_matrices(), atol=1e-2)
    assert builtin_mixture(1).factor_params() is builtin_mixture(1).params


def test_parallel_workers_give_identical_reports():
    spec = builtin_mixture(1)
    kwargs = dict(restarts=3, seed=8, config=QUICK)
    serial = run_experiment(spec, [EigenBounds(0.01, 6.0), None], workers=1, **kwargs)
    parallel = run_experiment(spec, [EigenBounds(0.01, 6.0), None], workers=2, **kwargs)
    for left, right in zip(serial.to_frames(), parallel.to_frames()):
        pd.testing.assert_frame_equal(left, right)


def test_failed_runs_are_recorded(monkeypatch):
    original_fit = simulation.fit

    def flaky_fit(data, n_components, n_factors, init, config=None):
        if config is not None and config.bounds is not None:
            raise EmptyComponentError(2, 1.0, 3.0)
        return original_fit(data, n_components, n_factors, init, config)

    monkeypatch.setattr(simulation, "fit", flaky_fit)
    report = run_experiment(builtin_mixture(1), [EigenBounds(0.01, 6.0), None], restarts=2, seed=1, config=QUICK)
    constrained = report.summary("0.01:6")
    assert constrained.failed == 2
    assert constrained.right_max == 0
    assert np.isnan(constrained.misclassification[2])
    runs, _ = report.to_frames()
    assert runs.loc[runs["bounds_label"] == "0.01:6", "error"].str.startswith("empty_component").all()


def test_write_report(tmp_path):
    report = run_experiment(builtin_mixture(1), [None], restarts=2, seed=4, config=QUICK)
    runs_path, summary_path = write_report(report, tmp_path / "out")
    runs = pd.read_csv(runs_path)
    summary = pd.read_csv(summary_path)
    assert list(runs.columns) == [
        "restart",
        "bounds_label",
        "status",
        "converged",
        "loglik",
        "iterations",
        "miscl_error",
        "right_max",
        "error",
    ]
    assert runs["restart"].tolist() == [1, 2]
    assert summary.loc[0, "bounds_label"] == "unbounded"
    assert summary.loc[0, "runs"] == 2


def test_presets():
    assert len(experiment_preset("mixture1")) == 6
    assert experiment_preset("flea")[-1] is None
    with pytest.raises(InvalidArgumentError):
        experiment_preset("mixture9")


def test_experiment_rejects_bad_arguments():
    with pytest.raises(InvalidArgumentError):
        run_experiment(builtin_mixture(1), [None], restarts=0)
    with pytest.raises(InvalidArgumentError):
        run_experiment(builtin_mixture(1), [], restarts=1)
