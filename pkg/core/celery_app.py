from typing import Any, Dict

from celery import Celery
from core.config import Settings, settings

CONSTRUCTION_QUEUE = "constructions"
GEOMETRY_QUEUE = "geometry"


def celery_config(s: Settings) -> Dict[str, Any]:
    """Constructions get their own queue and the long time limit; limit sets and thresholds share the other."""
    return {
        "task_serializer": "json",
        "accept_content": ["json"],
        "result_serializer": "json",
        "timezone": "UTC",
        "enable_utc": True,
        "task_track_started": True,
        "task_acks_late": True,
        "worker_prefetch_multiplier": 1,
        "worker_max_tasks_per_child": s.WORKER_MAX_TASKS,
        "result_expires": s.RESULT_TTL,
        "task_default_queue": GEOMETRY_QUEUE,
        "task_routes": {
            "tasks.run_construction": {"queue": CONSTRUCTION_QUEUE},
            "tasks.compute_limit_set": {"queue": GEOMETRY_QUEUE},
            "tasks.compute_thresholds": {"queue": GEOMETRY_QUEUE},
        },
        "task_annotations": {
            "tasks.run_construction": {"soft_time_limit": s.CONSTRUCTION_TIME_LIMIT,
                                       "time_limit": s.CONSTRUCTION_TIME_LIMIT + 60},
            "tasks.compute_limit_set": {"soft_time_limit": s.GEOMETRY_TIME_LIMIT,
                                        "time_limit": s.GEOMETRY_TIME_LIMIT + 60},
            "tasks.compute_thresholds": {"soft_time_limit": s.GEOMETRY_TIME_LIMIT,
                                         "time_limit": s.GEOMETRY_TIME_LIMIT + 60},
        },
        "include": ["tasks.construction_tasks"],
    }


celery_app = Celery(
    "qf_barriers",
    broker=settings.REDIS_URL,
    backend=settings.REDIS_URL,
)

celery_app.conf.update(celery_config(settings))
