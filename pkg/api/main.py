import os
import uuid
import logging
from typing import List, Optional

import mimetypes
import redis as redis_lib
from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import FileResponse, HTMLResponse
from kombu.exceptions import OperationalError
from pydantic import BaseModel, Field

from core.config import settings
from core.celery_app import celery_app

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

mimetypes.add_type("image/svg+xml", ".svg")

_redis_pool = redis_lib.ConnectionPool.from_url(settings.REDIS_URL)

API_DESCRIPTION = """
## Quasi-Fuchsian manifolds with many minimal surfaces

REST API that builds circle configurations, solves for catenoid barriers,
enumerates limit sets and certifies every barrier arrangement.

---

### Quick start

**Step 1.** Submit a construction:
```bash
curl -X POST http://localhost:5000/construct \\
  -H "Content-Type: application/json" \\
  -d '{"N": 3}'
```
Response: `{"task_id": "abc-123", "status": "pending"}`

**Step 2.** Poll the status:
```bash
curl http://localhost:5000/status/abc-123
```
Response: `{"status": "success", "file_url": "/files/abc-123_certificate.json", "valid": true, ...}`

**Step 3.** Download the certificate, the configuration or the figure:
```bash
curl -O http://localhost:5000/files/abc-123_certificate.json
curl -O http://localhost:5000/files/abc-123_configuration.svg
```

---

### Jobs

| Endpoint | Work | Artifacts |
|----------|------|-----------|
| `POST /construct` | curve, stations, chain, limit set, 2^N checks | config, certificate, SVG |
| `POST /limitset` | limit set of a construction or equator chain | cloud JSON, SVG |
| `POST /thresholds` | d0 and d1 of the catenoid family | thresholds JSON |
| `POST /catenoid/solve` | one generating curve, answered inline | none |

Constructions for N >= 4 take minutes: the limit set and the linking
integrals dominate.
"""

TAGS_METADATA = [
    {
        "name": "1. Construction",
        "description": "Build and certify configurations. Main workflow of the API.",
    },
    {
        "name": "2. Catenoids and limit sets",
        "description": "Standalone catenoid solves, thresholds and limit set clouds.",
    },
    {
        "name": "3. Artifacts",
        "description": "Download finished files by the names listed in `files`.",
    },
    {
        "name": "4. Service status",
        "description": "Health-check of the API and Redis.",
    },
]

app = FastAPI(
    title="Quasi-Fuchsian Barriers API",
    description=API_DESCRIPTION,
    version="1.0.0",
    openapi_tags=TAGS_METADATA,
    docs_url=None,
    redoc_url="/redoc",
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


@app.get("/docs", include_in_schema=False)
async def custom_swagger_ui():
    return HTMLResponse("""<!DOCTYPE html>
<html lang="en">
<head>
    <meta charset="UTF-8">
    <title>Quasi-Fuchsian Barriers API</title>
    <link rel="stylesheet" href="https://cdn.jsdelivr.net/npm/swagger-ui-dist@5/swagger-ui.css">
    <style>
        body { margin: 0; background: #fafafa; }
        .swagger-ui .topbar { display: none; }
        .swagger-ui .info { margin: 20px 0; }
        .swagger-ui .info .description h2 { border-bottom: 2px solid #ddd; padding-bottom: 8px; }
        .swagger-ui .info .description table { border-collapse: collapse; width: 100%; font-size: 13px; }
        .swagger-ui .info .description th { background: #1f5fa8; color: #fff; padding: 8px 12px; text-align: left; }
        .swagger-ui .info .description td { padding: 6px 12px; border-bottom: 1px solid #ddd; }
        .swagger-ui .wrapper { max-width: 1200px; padding: 0 20px; }
    </style>
</head>
<body>
    <div id="swagger-ui"></div>
    <script src="https://cdn.jsdelivr.net/npm/swagger-ui-dist@5/swagger-ui-bundle.js"></script>
    <script>
        SwaggerUIBundle({
            url: "/openapi.json",
            dom_id: "#swagger-ui",
            presets: [SwaggerUIBundle.presets.apis],
            layout: "BaseLayout",
            defaultModelsExpandDepth: 1,
            docExpansion: "list",
            tryItOutEnabled: true,
            displayRequestDuration: true,
        })
    </script>
</body>
</html>""")


class ConstructRequest(BaseModel):
    N: int = Field(..., ge=1, le=8, description="Number of parallel circle pairs; 2^N arrangements are certified")
    epsilon: float = Field(default=0.01, gt=0.0, lt=0.5, description="Half-gap of each parallel pair, in z")
    bridge_width: float = Field(default=3e-4, gt=0.0, lt=0.5, description="Angular width of the channels B_i")
    prime_bridge_width: float = Field(default=3e-3, gt=0.0, lt=0.5, description="Angular width of the strips B'_j")
    catenoid_offset: float = Field(default=1e-4, gt=0.0, lt=0.1,
                                   description="Smallest clearance between station circles and the curve")
    delta: float = Field(default=0.01, gt=0.0, lt=0.5, description="Covering tolerance of the circle chain")
    prune_tol: float = Field(default=5e-4, gt=0.0, lt=0.5, description="Limit set resolution")
    max_depth: int = Field(default=30, ge=1, le=200, description="Word length cap of the limit set search")
    dl_margin: float = Field(default=0.02, ge=0.0, lt=1.0, description="Required gap below the dL threshold")

    model_config = {
        "json_schema_extra": {
            "examples": [
                {"N": 2},
                {"N": 3, "epsilon": 0.01, "bridge_width": 3e-4, "delta": 0.01},
            ]
        }
    }


class LimitSetRequest(BaseModel):
    spec: Optional[ConstructRequest] = Field(default=None,
                                             description="Construction whose chain is used; equator chain if omitted")
    equator_circles: int = Field(default=12, ge=6, le=2000, multiple_of=2,
                                 description="Circles of the equator chain (even)")
    prune_tol: float = Field(default=1e-3, gt=0.0, lt=0.5, description="Limit set resolution")
    max_depth: int = Field(default=30, ge=1, le=200, description="Word length cap")

    model_config = {
        "json_schema_extra": {
            "examples": [
                {"equator_circles": 12, "prune_tol": 1e-3},
                {"spec": {"N": 2}},
            ]
        }
    }


class ThresholdRequest(BaseModel):
    tol: float = Field(default=1e-7, ge=1e-12, le=1e-2, description="Bracket width of d0 and d1")


class CatenoidSolveRequest(BaseModel):
    neck: float = Field(..., gt=0.0, le=12.0, description="Neck distance a of the generating curve")


class CatenoidSolveResponse(BaseModel):
    a: float = Field(description="Neck distance")
    dL: float = Field(description="Distance between the two asymptotic planes")
    samples: List[List[float]] = Field(description="Generating curve samples [t, r]")
    residual: float = Field(description="Mean curvature residual of the samples")


class TaskResponse(BaseModel):
    task_id: str = Field(description="Unique task ID. Poll GET /status/{task_id}")
    status: str = Field(description="Current status: pending")


class StatusResponse(BaseModel):
    task_id: str = Field(description="Task ID")
    status: str = Field(description="Status: pending | processing | success | failed")
    stage: Optional[str] = Field(default=None, description="Pipeline stage while processing")
    file_url: Optional[str] = Field(default=None, description="Main artifact (status=success). Example: /files/abc_certificate.json")
    files: List[str] = Field(default_factory=list, description="URLs of every artifact of the task")
    valid: Optional[bool] = Field(default=None, description="Certificate verdict for constructions")
    error: Optional[str] = Field(default=None, description="Error description (status=failed)")


class HealthResponse(BaseModel):
    status: str = Field(description="API status: healthy")
    redis_connected: bool = Field(description="Connection to Redis (task broker)")
    output_dir: str = Field(description="Directory holding the artifacts")


def _submit(task, args: list) -> TaskResponse:
    task_id = str(uuid.uuid4())
    try:
        task.apply_async(args=[task_id] + args, task_id=task_id)
    except (OperationalError, redis_lib.exceptions.ConnectionError) as e:
        logger.error(f"Task submission failed: {e}")
        raise HTTPException(status_code=503, detail="Task broker unavailable")
    return TaskResponse(task_id=task_id, status="pending")


@app.get("/", tags=["4. Service status"], summary="API information",
         description="General information about the service and its endpoints.")
async def root():
    return {
        "service": "Quasi-Fuchsian Barriers API",
        "version": "1.0.0",
        "docs": "/docs",
        "endpoints": {
            "construct": "POST /construct - build and certify a configuration",
            "limitset": "POST /limitset - compute a limit set cloud",
            "thresholds": "POST /thresholds - catenoid thresholds d0 and d1",
            "catenoid": "POST /catenoid/solve - one generating curve",
            "status": "GET /status/{task_id} - task status",
            "files": "GET /files/{filename} - download an artifact",
            "health": "GET /health - service status",
        },
    }


@app.get("/health", response_model=HealthResponse, tags=["4. Service status"], summary="Health check",
         description="Checks the API and the Redis connection.")
async def health_check():
    redis_ok = False
    try:
        r = redis_lib.Redis(connection_pool=_redis_pool)
        r.ping()
        redis_ok = True
    except Exception:
        pass

    return {
        "status": "healthy",
        "redis_connected": redis_ok,
        "output_dir": settings.OUTPUT_DIR,
    }


@app.post("/construct", response_model=TaskResponse, tags=["1. Construction"],
          summary="Build and certify a configuration",
          description="""Submits the full pipeline: parallel circles, Jordan curve, catenoid stations,
covering chain, limit set and the checks of all 2^N arrangements.

**Minimal request**, shipped defaults for the rest:
```json
{"N": 3}
```

On success `files` lists the geometry config, the certificate and an SVG of the configuration.""")
async def construct(request: ConstructRequest):
    from tasks.construction_tasks import run_construction

    return _submit(run_construction, [request.model_dump()])


@app.post("/limitset", response_model=TaskResponse, tags=["2. Catenoids and limit sets"],
          summary="Compute a limit set cloud",
          description="""Enumerates the limit set of the reflection group of a chain.

Without `spec` the equator chain of `equator_circles` circles is used; its limit set is the equator.""")
async def limitset(request: LimitSetRequest):
    from tasks.construction_tasks import compute_limit_set

    return _submit(compute_limit_set, [request.model_dump(exclude_none=True)])


@app.post("/thresholds", response_model=TaskResponse, tags=["2. Catenoids and limit sets"],
          summary="Compute the catenoid thresholds",
          description="Brackets the existence threshold d0 and the least-area threshold d1.")
async def thresholds(request: ThresholdRequest):
    from tasks.construction_tasks import compute_thresholds_task

    return _submit(compute_thresholds_task, [request.tol])


@app.post("/catenoid/solve", response_model=CatenoidSolveResponse, tags=["2. Catenoids and limit sets"],
          summary="Solve one generating curve",
          description="Integrates the generating curve with the given neck and answers inline.")
def catenoid_solve(request: CatenoidSolveRequest):
    from core.catenoid import mean_curvature_residual, solve_generating_curve
    from core.errors import GeometryError, SolverError

    try:
        curve = solve_generating_curve(request.neck)
        residual = mean_curvature_residual(curve)
    except (GeometryError, SolverError) as e:
        raise HTTPException(status_code=422, detail=str(e))
    return CatenoidSolveResponse(
        a=curve.neck_parameter,
        dL=curve.plane_separation,
        samples=[[float(t), float(r)] for t, r in curve.samples],
        residual=residual,
    )


@app.get("/status/{task_id}", response_model=StatusResponse, tags=["1. Construction"],
         summary="Check task status",
         description="""Current status of any submitted task.

**Statuses:**
- `pending` - queued
- `processing` - running; `stage` names the pipeline stage
- `success` - done; `file_url` and `files` point to the artifacts
- `failed` - `error` describes the failure

Poll every 2-5 seconds until `success` or `failed`.""")
async def get_status(task_id: str):
    from celery.result import AsyncResult

    result = AsyncResult(task_id, app=celery_app)

    if result.state == "PENDING":
        return StatusResponse(task_id=task_id, status="pending")
    elif result.state == "PROGRESS":
        info = result.info if isinstance(result.info, dict) else {}
        return StatusResponse(task_id=task_id, status="processing", stage=info.get("status"))
    elif result.state == "SUCCESS":
        task_result = result.result
        if isinstance(task_result, dict):
            if task_result.get("status") == "success":
                file_path = task_result.get("file_path", "")
                safe_name = os.path.basename(file_path)
                return StatusResponse(
                    task_id=task_id,
                    status="success",
                    file_url=f"/files/{safe_name}",
                    files=[f"/files/{os.path.basename(f)}" for f in task_result.get("files", [])],
                    valid=task_result.get("valid"),
                )
            else:
                return StatusResponse(
                    task_id=task_id,
                    status="failed",
                    error=task_result.get("error", "Unknown error"),
                )
        return StatusResponse(task_id=task_id, status="success")
    elif result.state == "FAILURE":
        return StatusResponse(
            task_id=task_id,
            status="failed",
            error=str(result.result),
        )
    else:
        return StatusResponse(task_id=task_id, status=result.state.lower())


@app.get("/files/{filename}", tags=["3. Artifacts"],
         summary="Download an artifact",
         description="""Downloads a finished artifact by name, as listed in `/status/{task_id}`.

**Example:**
```bash
curl -O http://localhost:5000/files/abc123_certificate.json
```""")
async def get_file(filename: str):
    safe_filename = os.path.basename(filename)
    if safe_filename != filename or ".." in filename:
        raise HTTPException(status_code=403, detail="Access denied")

    output_real = os.path.realpath(settings.OUTPUT_DIR)
    file_path = os.path.realpath(os.path.join(output_real, safe_filename))

    if not file_path.startswith(output_real + os.sep):
        raise HTTPException(status_code=403, detail="Access denied")

    if not os.path.isfile(file_path):
        raise HTTPException(status_code=404, detail="File not found")

    content_type, _ = mimetypes.guess_type(safe_filename)
    if not content_type:
        content_type = "application/json"

    return FileResponse(
        path=file_path,
        media_type=content_type,
        filename=safe_filename,
        headers={"Cache-Control": "no-cache"},
    )
