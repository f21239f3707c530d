import os
import sys
import tempfile
from unittest.mock import MagicMock, patch

os.environ.setdefault("REDIS_URL", "redis://localhost:6379/0")
os.environ.setdefault("OUTPUT_DIR", tempfile.mkdtemp(prefix="qf_artifacts_"))

celery_mock = MagicMock()
celery_mock.conf = MagicMock()
celery_mock.conf.update = MagicMock()

with patch("core.celery_app.celery_app", celery_mock), \
     patch("core.celery_app.Celery", return_value=celery_mock):
    sys.modules.pop("core.celery_app", None)
    sys.modules.pop("api.main", None)

import importlib
import core.celery_app
core.celery_app.celery_app = celery_mock
importlib.reload(core.celery_app)

from api.main import app

import numpy as np
import pytest
from starlette.testclient import TestClient


@pytest.fixture
def client():
    return TestClient(app)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def thresholds():
    from core.catenoid import SolverParams, compute_thresholds

    return compute_thresholds(1e-6, SolverParams.from_settings())


@pytest.fixture(scope="session")
def d0_bracket():
    from core.catenoid import SolverParams, existence_threshold

    return existence_threshold(1e-6, SolverParams.from_settings())
