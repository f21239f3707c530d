import json
import os
from unittest.mock import MagicMock, patch

import numpy as np
import pytest

from core.config import settings
from core.construction import ConstructionSpec
from tasks.construction_tasks import (build_construction_artifacts, build_limit_set_artifacts,
                                      build_threshold_artifacts)


def _read(name: str):
    with open(os.path.join(settings.OUTPUT_DIR, name), encoding="utf-8") as f:
        return json.load(f)


class TestConstructionArtifacts:
    def test_writes_three_files(self):
        certificate = MagicMock()
        certificate.valid = True
        with patch("core.construction.run_pipeline", return_value=certificate) as mock_run, \
                patch("core.persistence.write_config", side_effect=lambda c, p: p), \
                patch("core.persistence.write_certificate", side_effect=lambda c, p: p), \
                patch("core.render.configuration_scene"), \
                patch("core.render.write_svg", side_effect=lambda s, p: p):
            result = build_construction_artifacts("job-1", {"N": 2, "epsilon": 0.01, "bridge_width": 3e-4})
        assert mock_run.call_args.args[0] == ConstructionSpec(N=2, epsilon=0.01, bridge_width=3e-4)
        assert result == {
            "file_path": "job-1_certificate.json",
            "files": ["job-1_config.json", "job-1_certificate.json", "job-1_configuration.svg"],
            "valid": True,
        }

    def test_progress_is_forwarded(self):
        stages = []
        with patch("core.construction.run_pipeline", side_effect=RuntimeError("stop")) as mock_run:
            with pytest.raises(RuntimeError):
                build_construction_artifacts("job-2", {"N": 1, "epsilon": 0.02, "bridge_width": 3e-4},
                                             stages.append)
        assert mock_run.call_args.kwargs["progress"] == stages.append

    def test_invalid_spec(self):
        from pydantic import ValidationError

        with pytest.raises(ValidationError):
            build_construction_artifacts("job-3", {"N": 0, "epsilon": 0.01, "bridge_width": 3e-4})


class TestLimitSetArtifacts:
    def test_equator_chain(self):
        stages = []
        result = build_limit_set_artifacts("job-ls", {"equator_circles": 12, "prune_tol": 5e-2, "max_depth": 20},
                                           stages.append)
        assert stages == ["limit_set"]
        assert result["files"] == ["job-ls_cloud.json", "job-ls_cloud.svg"]
        data = _read("job-ls_cloud.json")
        assert data["version"] == 1
        assert len(data["points"]) == result["points"]
        assert np.abs(np.asarray(data["points"])[:, 2]).max() < 1e-8


class TestThresholdArtifacts:
    def test_payload(self):
        estimates = MagicMock()
        estimates.d0.value = 1.3
        estimates.d1.value = 1.0
        with patch("core.catenoid.compute_thresholds", return_value=estimates) as mock_compute, \
                patch("core.persistence.write_thresholds", side_effect=lambda e, p: p):
            result = build_threshold_artifacts("job-th", 1e-5)
        assert mock_compute.call_args.args[0] == 1e-5
        assert result == {
            "file_path": "job-th_thresholds.json",
            "files": ["job-th_thresholds.json"],
            "d0": 1.3,
            "d1": 1.0,
        }
