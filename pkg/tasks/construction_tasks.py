import os
import logging
from typing import Any, Callable, Dict, List, Optional

from core.celery_app import celery_app
from core.config import settings

logger = logging.getLogger(__name__)


def _artifact(task_id: str, suffix: str) -> str:
    return os.path.join(settings.OUTPUT_DIR, f"{task_id}_{suffix}")


def build_construction_artifacts(task_id: str, spec_params: Dict[str, Any],
                                 progress: Optional[Callable[[str], None]] = None) -> Dict[str, Any]:
    """Run the pipeline and write config, certificate and figure; returns file names."""
    from core.construction import ConstructionSpec, run_pipeline
    from core.persistence import write_certificate, write_config
    from core.render import configuration_scene, write_svg

    spec = ConstructionSpec.model_validate(spec_params)
    certificate = run_pipeline(spec, progress=progress)

    files: List[str] = [
        write_config(certificate.geometry, _artifact(task_id, "config.json")),
        write_certificate(certificate, _artifact(task_id, "certificate.json")),
        write_svg(configuration_scene(certificate.geometry), _artifact(task_id, "configuration.svg")),
    ]
    return {
        "file_path": os.path.basename(files[1]),
        "files": [os.path.basename(f) for f in files],
        "valid": certificate.valid,
    }


def build_limit_set_artifacts(task_id: str, params: Dict[str, Any],
                              progress: Optional[Callable[[str], None]] = None) -> Dict[str, Any]:
    """Limit set of a construction chain, or of an equatorial chain when no spec is given."""
    from core.construction import ConstructionSpec, build_geometry
    from core.kleinian import InversionGroup, equator_chain, limit_set
    from core.persistence import write_cloud
    from core.render import cloud_scene, write_svg

    report = progress or (lambda stage: None)
    curve = None
    if params.get("spec"):
        spec = ConstructionSpec.model_validate(params["spec"])
        geometry = build_geometry(spec, progress=report)
        chain, prune_tol, max_depth = geometry.chain, spec.prune_tol, spec.max_depth
        curve = geometry.curve.points
    else:
        chain = equator_chain(params.get("equator_circles", 12), params.get("delta"))
        prune_tol, max_depth = params.get("prune_tol", 1e-3), params.get("max_depth", 30)

    report("limit_set")
    cloud = limit_set(InversionGroup.from_chain(chain), prune_tol, max_depth, settings.LIMITSET_WORKERS)
    files = [
        write_cloud(cloud, _artifact(task_id, "cloud.json")),
        write_svg(cloud_scene(cloud, curve=curve), _artifact(task_id, "cloud.svg")),
    ]
    return {
        "file_path": os.path.basename(files[0]),
        "files": [os.path.basename(f) for f in files],
        "points": len(cloud.points),
    }


def build_threshold_artifacts(task_id: str, tol: float) -> Dict[str, Any]:
    from core.catenoid import SolverParams, compute_thresholds
    from core.persistence import write_thresholds

    estimates = compute_thresholds(tol, SolverParams.from_settings())
    path = write_thresholds(estimates, _artifact(task_id, "thresholds.json"))
    return {
        "file_path": os.path.basename(path),
        "files": [os.path.basename(path)],
        "d0": estimates.d0.value,
        "d1": estimates.d1.value,
    }


@celery_app.task(bind=True, name="tasks.run_construction")
def run_construction(self, task_id: str, spec_params: Dict[str, Any]):
    try:
        self.update_state(state="PROGRESS", meta={"status": "starting"})

        def progress(stage: str) -> None:
            self.update_state(state="PROGRESS", meta={"status": stage})

        result = build_construction_artifacts(task_id, spec_params, progress)
        logger.info(f"Construction {task_id} finished: {'VALID' if result['valid'] else 'INVALID'}")
        return dict(result, status="success", task_id=task_id)
    except Exception as e:
        logger.error(f"Construction failed for task {task_id}: {e}")
        return {
            "status": "failed",
            "error": str(e),
            "task_id": task_id,
        }


@celery_app.task(bind=True, name="tasks.compute_limit_set")
def compute_limit_set(self, task_id: str, params: Dict[str, Any]):
    try:
        self.update_state(state="PROGRESS", meta={"status": "building_chain"})

        def progress(stage: str) -> None:
            self.update_state(state="PROGRESS", meta={"status": stage})

        result = build_limit_set_artifacts(task_id, params, progress)
        return dict(result, status="success", task_id=task_id)
    except Exception as e:
        logger.error(f"Limit set failed for task {task_id}: {e}")
        return {
            "status": "failed",
            "error": str(e),
            "task_id": task_id,
        }


@celery_app.task(bind=True, name="tasks.compute_thresholds")
def compute_thresholds_task(self, task_id: str, tol: float):
    try:
        self.update_state(state="PROGRESS", meta={"status": "integrating"})
        result = build_threshold_artifacts(task_id, tol)
        return dict(result, status="success", task_id=task_id)
    except Exception as e:
        logger.error(f"Threshold computation failed for task {task_id}: {e}")
        return {
            "status": "failed",
            "error": str(e),
            "task_id": task_id,
        }
