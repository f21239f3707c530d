"""Versioned JSON files for specs, geometries, certificates and limit set clouds."""

import json
import logging
import os
from typing import Any, Dict, Optional, Union

from pydantic import ValidationError

from core.catenoid import ThresholdEstimates
from core.config import settings
from core.construction import ConstructionCertificate, ConstructionGeometry, ConstructionSpec
from core.errors import ConfigFormatError
from core.kleinian import LimitSetCloud

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
DEFAULTS_FILE = os.path.join(os.path.dirname(__file__), "data", "construction_defaults.json")


def dumps(data: Dict[str, Any]) -> str:
    """Sorted keys, shortest round-trip floats, no NaN or infinity."""
    return json.dumps(data, sort_keys=True, indent=1, allow_nan=False, ensure_ascii=True) + "\n"


def _write(data: Dict[str, Any], path: str) -> str:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(dumps(data))
    logger.info(f"Wrote {path}")
    return path


def _read(path: str) -> Dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError:
        raise ConfigFormatError("file not found", path)
    except json.JSONDecodeError as e:
        raise ConfigFormatError(f"malformed JSON: {e.msg}", f"{path}:{e.lineno}:{e.colno}")
    if not isinstance(data, dict):
        raise ConfigFormatError("top level must be an object", f"{path}:$")
    version = data.get("version")
    if version != SCHEMA_VERSION:
        raise ConfigFormatError(f"unsupported version {version!r}", f"{path}:$.version")
    return data


def _location(path: str, prefix: str, error: ValidationError) -> str:
    first = error.errors()[0]
    return f"{path}:$.{prefix}" + "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in first["loc"])


def parse_spec(data: Dict[str, Any], path: str = "<memory>", prefix: str = "spec") -> ConstructionSpec:
    try:
        return ConstructionSpec.model_validate(data)
    except ValidationError as e:
        raise ConfigFormatError(e.errors()[0]["msg"], _location(path, prefix, e))


def read_config(path: str) -> Union[ConstructionSpec, ConstructionGeometry]:
    """A spec, or a built geometry when the file carries one."""
    data = _read(path)
    if "spec" not in data:
        raise ConfigFormatError("missing spec", f"{path}:$.spec")
    spec = parse_spec(data["spec"], path)
    if "chain" not in data:
        return spec
    try:
        return ConstructionGeometry.from_json(data)
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigFormatError(f"malformed geometry: {e}", f"{path}:$")


def write_config(config: Union[ConstructionSpec, ConstructionGeometry], path: str) -> str:
    if isinstance(config, ConstructionSpec):
        return _write({"version": SCHEMA_VERSION, "spec": config.model_dump()}, path)
    return _write(config.to_json(), path)


def write_certificate(certificate: ConstructionCertificate, path: str) -> str:
    return _write(certificate.to_json(), path)


def read_certificate(path: str) -> Dict[str, Any]:
    data = _read(path)
    for key in ("valid", "criteria", "arrangements"):
        if key not in data:
            raise ConfigFormatError(f"missing {key}", f"{path}:$.{key}")
    return data


def write_cloud(cloud: LimitSetCloud, path: str) -> str:
    return _write(dict(cloud.to_json(), version=SCHEMA_VERSION), path)


def read_cloud(path: str) -> LimitSetCloud:
    data = _read(path)
    try:
        return LimitSetCloud.from_json(data)
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigFormatError(f"malformed cloud: {e}", f"{path}:$")


def write_thresholds(estimates: ThresholdEstimates, path: str) -> str:
    return _write(dict(estimates.to_json(), version=SCHEMA_VERSION), path)


def load_default_spec(N: int, path: Optional[str] = None) -> ConstructionSpec:
    """Shipped default parameters for N parallel pairs."""
    path = path or settings.DEFAULTS_PATH or DEFAULTS_FILE
    data = _read(path)
    specs = data.get("specs", {})
    if str(N) not in specs:
        raise ConfigFormatError(f"no defaults for N={N}", f"{path}:$.specs")
    return parse_spec(dict(specs[str(N)], N=N), path, f"specs.{N}")


def store_default_spec(spec: ConstructionSpec, path: Optional[str] = None) -> str:
    """Replace the defaults for spec.N, keeping the other entries."""
    path = path or settings.DEFAULTS_PATH or DEFAULTS_FILE
    data = _read(path) if os.path.exists(path) else {"version": SCHEMA_VERSION, "specs": {}}
    data.setdefault("specs", {})[str(spec.N)] = spec.model_dump(exclude={"N"})
    return _write(data, path)
