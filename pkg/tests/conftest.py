from __future__ import annotations

import os
import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from cmgfa import settings as settings_module  # noqa: E402
from cmgfa.model_core import MgfaParams  # noqa: E402

RUN_SLOW = os.getenv("CMGFA_RUN_SLOW") == "1"

_ENV_NAMES = ["CMGFA_WORKERS", "CMGFA_LOG_LEVEL", "CMGFA_REPORT_DIR", "CMGFA_SEED"]


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: Monte Carlo reproductions, run with CMGFA_RUN_SLOW=1")


def pytest_collection_modifyitems(config, items):
    if RUN_SLOW:
        return
    skip_slow = pytest.mark.skip(reason="set CMGFA_RUN_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def _isolated_settings(monkeypatch):
    for name in _ENV_NAMES:
        monkeypatch.delenv(name, raising=False)
    settings_module.reset_settings_state()
    yield
    settings_module.reset_settings_state()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def make_random_params(rng, d, q, n_components, *, spread=6.0, psi_range=(0.2, 1.0)):
    weights = rng.dirichlet(np.full(n_components, 5.0))
    means = rng.normal(scale=spread, size=(n_components, d))
    loadings = rng.normal(size=(n_components, d, q))
    uniquenesses = rng.uniform(*psi_range, size=(n_components, d))
    return MgfaParams(weights=weights, means=means, loadings=loadings, uniquenesses=uniquenesses)


@pytest.fixture
def random_params():
    return make_random_params
