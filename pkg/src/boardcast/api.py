"""HTTP/JSON API for the operator UI.

All routes live under /api and speak JSON: timestamps ISO-8601 UTC, numbers
as JSON numbers, errors as {code, message}. Authentication is a static-token
stub: when the server is started with a token, every request must carry it
in the X-API-Token header.
"""

from __future__ import annotations

from datetime import datetime

from fastapi import Depends, FastAPI, HTTPException, Query, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, ConfigDict, Field

from .errors import (
    BoardcastError,
    RuntimeFailure,
    ValidationError,
)
from .features import FEATURE_COLUMNS
from .service import PlatformService
from .timeutils import iso, parse_iso

API_TOKEN_HEADER = "X-API-Token"


class DateRange(BaseModel):
    model_config = ConfigDict(populate_by_name=True)
    start: str | None = Field(default=None, alias="from")
    end: str | None = Field(default=None, alias="to")


class SplitPercentages(BaseModel):
    train: float = 70
    val: float = 15
    test: float = 15


class ExperimentRequest(BaseModel):
    model_config = ConfigDict(populate_by_name=True)
    features: list[str] = Field(default_factory=list)
    target: str = "boarding_time_minute_hourly"
    lag: int = 24
    horizon: int = 6
    scaling: str = "standard"
    date_range: DateRange | None = None
    splits: SplitPercentages = SplitPercentages()
    algorithm: str = "nlinear"


class RetrainRequest(BaseModel):
    model_config = ConfigDict(populate_by_name=True)
    date_range: DateRange | None = None
    algorithm: str = "nlinear"
    horizons: list[int] = Field(default_factory=lambda: [6, 8, 10, 12, 24])


def _parse_optional_ts(value: str | None, name: str) -> datetime | None:
    if value in (None, ""):
        return None
    try:
        return parse_iso(value)
    except ValueError as err:
        raise ValidationError(f"invalid {name} timestamp: {value!r}") from err


def create_app(service: PlatformService, token: str | None = None) -> FastAPI:
    app = FastAPI(title="boardcast", docs_url=None, redoc_url=None)

    async def require_token(request: Request) -> None:
        if token and request.headers.get(API_TOKEN_HEADER) != token:
            raise PermissionError("missing or invalid API token")

    auth = Depends(require_token)

    @app.exception_handler(PermissionError)
    async def _unauthorized(request: Request, exc: PermissionError):
        return JSONResponse(status_code=401, content={"code": "unauthorized", "message": str(exc)})

    @app.exception_handler(ValidationError)
    async def _bad_request(request: Request, exc: ValidationError):
        return JSONResponse(status_code=400, content={"code": "validation_error", "message": str(exc)})

    @app.exception_handler(RuntimeFailure)
    async def _runtime(request: Request, exc: RuntimeFailure):
        return JSONResponse(status_code=500, content={"code": "runtime_failure", "message": str(exc)})

    @app.exception_handler(BoardcastError)
    async def _generic(request: Request, exc: BoardcastError):
        return JSONResponse(status_code=500, content={"code": "error", "message": str(exc)})

    @app.exception_handler(RequestValidationError)
    async def _request_invalid(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"code": "validation_error", "message": str(exc)})

    @app.exception_handler(HTTPException)
    async def _http_error(request: Request, exc: HTTPException):
        code = "not_found" if exc.status_code == 404 else "http_error"
        return JSONResponse(status_code=exc.status_code, content={"code": code, "message": str(exc.detail)})

    @app.get("/api/dashboard", dependencies=[auth])
    def dashboard() -> dict:
        return service.dashboard_data()

    @app.get("/api/stream/recent", dependencies=[auth])
    def stream_recent() -> dict:
        return service.stream_recent()

    @app.get("/api/features", dependencies=[auth])
    def features(
        start: str | None = Query(default=None, alias="from"),
        end: str | None = Query(default=None, alias="to"),
    ) -> dict:
        table = service.store.query_features(
            _parse_optional_ts(start, "from"), _parse_optional_ts(end, "to")
        )
        rows = []
        for rec in table.itertuples(index=False):
            row = {"hour_ts": iso(rec.hour_ts)}
            for c in FEATURE_COLUMNS:
                value = getattr(rec, c)
                row[c] = float(value) if isinstance(value, float) else int(value)
            rows.append(row)
        return {"rows": rows, "count": len(rows)}

    @app.post("/api/experiments", dependencies=[auth])
    def create_experiment(request: ExperimentRequest) -> dict:
        payload = request.model_dump(by_alias=False)
        if request.date_range is not None:
            payload["date_range"] = {
                "from": request.date_range.start,
                "to": request.date_range.end,
            }
        experiment_id = service.start_experiment(payload)
        return {"experiment_id": experiment_id, "status": "running"}

    @app.get("/api/experiments/{experiment_id}/log", dependencies=[auth])
    def experiment_log(experiment_id: str, after: int = -1) -> dict:
        record = service.store.experiment(experiment_id)
        if record is None:
            raise HTTPException(404, f"unknown experiment {experiment_id}")
        entries = service.store.experiment_log(experiment_id, after=after)
        return {
            "experiment_id": experiment_id,
            "status": record["status"],
            "lines": [line for _, line in entries],
            "next": entries[-1][0] if entries else after,
        }

    @app.get("/api/models", dependencies=[auth])
    def models() -> dict:
        def fmt_date(ts: datetime | None) -> str:
            return ts.strftime("%m/%d/%Y") if ts else "?"

        rows = []
        for entry in service.store.list_models():
            rows.append(
                {
                    "model_id": entry.model_id,
                    "model_name": entry.model_name,
                    "algorithm": entry.algorithm,
                    "horizon": entry.horizon,
                    "date_range": f"{fmt_date(entry.train_start)} to {fmt_date(entry.train_end)}",
                    "train_start": iso(entry.train_start) if entry.train_start else None,
                    "train_end": iso(entry.train_end) if entry.train_end else None,
                    "mae": entry.mae,
                    "rmse": entry.rmse,
                    "r2": entry.r2,
                    "mape": entry.mape,
                    "active": entry.active,
                    "registered_ts": iso(entry.registered_ts),
                }
            )
        return {"models": rows}

    @app.post("/api/retrain", dependencies=[auth])
    def retrain(request: RetrainRequest) -> dict:
        if request.algorithm not in ("nlinear", "dlinear"):
            raise ValidationError("algorithm must be nlinear or dlinear")
        bad = [h for h in request.horizons if h not in service.horizons]
        if bad:
            raise ValidationError(f"unsupported horizons: {bad}")
        start = end = None
        if request.date_range is not None:
            start = _parse_optional_ts(request.date_range.start, "from")
            end = _parse_optional_ts(request.date_range.end, "to")
        jobs = []
        for horizon in request.horizons:
            job = service.store.enqueue_job(
                trigger="manual",
                algorithm=request.algorithm,
                horizon=horizon,
                range_start=start,
                range_end=end,
                enqueued_ts=service.now(),
            )
            if job is not None:
                jobs.append(job.job_id)
        return {"job_ids": jobs}

    @app.get("/api/jobs", dependencies=[auth])
    def jobs() -> dict:
        return {"jobs": [_job_json(j) for j in service.store.list_jobs()]}

    @app.get("/api/jobs/{job_id}", dependencies=[auth])
    def job(job_id: str) -> dict:
        record = service.store.job(job_id)
        if record is None:
            raise HTTPException(404, f"unknown job {job_id}")
        return _job_json(record)

    return app


def _job_json(job) -> dict:
    return {
        "job_id": job.job_id,
        "trigger": job.trigger,
        "algorithm": job.algorithm,
        "horizon": job.horizon,
        "range_start": iso(job.range_start) if job.range_start else None,
        "range_end": iso(job.range_end) if job.range_end else None,
        "status": job.status,
        "enqueued_ts": iso(job.enqueued_ts),
        "started_ts": iso(job.started_ts) if job.started_ts else None,
        "finished_ts": iso(job.finished_ts) if job.finished_ts else None,
        "result_model_id": job.result_model_id,
        "error": job.error,
    }
