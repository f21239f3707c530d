import json

import numpy as np
import pytest

from core.construction import ConstructionSpec
from core.errors import ConfigFormatError
from core.kleinian import LimitSetCloud
from core.persistence import (DEFAULTS_FILE, dumps, load_default_spec, parse_spec, read_certificate, read_cloud,
                              read_config, store_default_spec, write_cloud, write_config)


def _write_json(path, data) -> str:
    path.write_text(json.dumps(data), encoding="utf-8")
    return str(path)


class TestDumps:
    def test_sorted_and_terminated(self):
        text = dumps({"b": 1, "a": [0.1, 2]})
        assert text.endswith("\n")
        assert text.index('"a"') < text.index('"b"')

    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            dumps({"value": float("nan")})


class TestSpecFiles:
    def test_round_trip(self, tmp_path):
        spec = ConstructionSpec(N=3, epsilon=0.02, bridge_width=1e-3)
        path = write_config(spec, str(tmp_path / "spec.json"))
        assert read_config(path) == spec

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigFormatError) as info:
            read_config(str(tmp_path / "absent.json"))
        assert "file not found" in str(info.value)

    def test_malformed_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text('{"version": 1,\n "spec": {', encoding="utf-8")
        with pytest.raises(ConfigFormatError) as info:
            read_config(str(path))
        assert info.value.location.startswith(f"{path}:2:")

    def test_wrong_version(self, tmp_path):
        path = _write_json(tmp_path / "old.json", {"version": 0, "spec": {}})
        with pytest.raises(ConfigFormatError) as info:
            read_config(path)
        assert info.value.location == f"{path}:$.version"

    def test_missing_spec(self, tmp_path):
        path = _write_json(tmp_path / "empty.json", {"version": 1})
        with pytest.raises(ConfigFormatError) as info:
            read_config(path)
        assert info.value.location == f"{path}:$.spec"

    def test_invalid_field_location(self, tmp_path):
        path = _write_json(tmp_path / "bad.json",
                           {"version": 1, "spec": {"N": 2, "epsilon": -1.0, "bridge_width": 1e-3}})
        with pytest.raises(ConfigFormatError) as info:
            read_config(path)
        assert info.value.location == f"{path}:$.spec.epsilon"

    def test_parse_spec_in_memory(self):
        with pytest.raises(ConfigFormatError) as info:
            parse_spec({"N": 9, "epsilon": 0.01, "bridge_width": 1e-3})
        assert info.value.location == "<memory>:$.spec.N"


class TestDefaults:
    @pytest.mark.parametrize("N", [1, 2, 3, 4, 5])
    def test_shipped_defaults(self, N):
        spec = load_default_spec(N)
        assert spec.N == N
        assert spec.bridge_width < spec.prime_bridge_width

    def test_unknown_N(self):
        with pytest.raises(ConfigFormatError) as info:
            load_default_spec(8)
        assert info.value.location == f"{DEFAULTS_FILE}:$.specs"

    def test_custom_defaults_path(self, tmp_path):
        path = _write_json(tmp_path / "defaults.json",
                           {"version": 1, "specs": {"2": {"epsilon": 0.05, "bridge_width": 0.01}}})
        spec = load_default_spec(2, path)
        assert spec.epsilon == 0.05
        assert spec.delta == 0.01

    def test_store_replaces_one_entry(self, tmp_path):
        path = _write_json(tmp_path / "defaults.json",
                           {"version": 1, "specs": {"1": {"epsilon": 0.05, "bridge_width": 0.01},
                                                    "2": {"epsilon": 0.04, "bridge_width": 0.01}}})
        store_default_spec(ConstructionSpec(N=2, epsilon=0.005, bridge_width=1e-4), path)
        assert load_default_spec(1, path).epsilon == 0.05
        stored = load_default_spec(2, path)
        assert (stored.epsilon, stored.bridge_width) == (0.005, 1e-4)

    def test_store_creates_file(self, tmp_path):
        path = str(tmp_path / "fresh.json")
        store_default_spec(ConstructionSpec(N=4, epsilon=0.008, bridge_width=2e-4), path)
        assert load_default_spec(4, path).epsilon == 0.008
        assert json.loads((tmp_path / "fresh.json").read_text(encoding="utf-8"))["version"] == 1


class TestCloudFiles:
    def test_round_trip(self, tmp_path):
        cloud = LimitSetCloud(points=np.eye(3), depth=12, prune_tol=1e-3, max_word_count=7, emitted=4)
        restored = read_cloud(write_cloud(cloud, str(tmp_path / "cloud.json")))
        np.testing.assert_allclose(restored.points, cloud.points)
        assert restored.depth == 12
        assert restored.emitted == 4
        assert not restored.truncated

    def test_malformed_cloud(self, tmp_path):
        path = _write_json(tmp_path / "cloud.json", {"version": 1, "points": []})
        with pytest.raises(ConfigFormatError):
            read_cloud(path)


class TestCertificateFiles:
    def test_required_keys(self, tmp_path):
        path = _write_json(tmp_path / "certificate.json", {"version": 1, "valid": True, "criteria": {}})
        with pytest.raises(ConfigFormatError) as info:
            read_certificate(path)
        assert info.value.location == f"{path}:$.arrangements"

    def test_reads_complete_certificate(self, tmp_path):
        data = {"version": 1, "valid": False, "criteria": {"chain": {"passed": False, "margin": None}},
                "arrangements": []}
        assert read_certificate(_write_json(tmp_path / "certificate.json", data)) == data
