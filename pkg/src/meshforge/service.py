"""HTTP job service wrapping the engine.

Long optimizations run as background jobs: submit a config, poll progress,
fetch the loss log, and trigger exports once finished. One worker thread per
job; job state lives in process memory (this is a single-node tool server,
not a distributed queue).
"""

from __future__ import annotations

import tempfile
import threading
import traceback
import uuid
from pathlib import Path
from typing import Literal

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import __version__
from .config import ConfigError, parse_config
from .optim import run_optimization

app = FastAPI(title="meshforge", version=__version__)


class JobRequest(BaseModel):
    config_text: str = Field(description="YAML run config")
    out_dir: str | None = Field(default=None, description="output directory override")
    seed: int | None = None


class JobInfo(BaseModel):
    id: str
    state: Literal["running", "finished", "failed"]
    step: int
    max_steps: int
    last_line: str | None = None
    error: str | None = None
    output_dir: str
    checkpoint: str | None = None


class JobList(BaseModel):
    jobs: list[JobInfo]


class ExportRequest(BaseModel):
    out_dir: str | None = None


class ExportInfo(BaseModel):
    obj: str
    mtl: str
    texture: str


class _Job:
    def __init__(self, job_id: str, cfg, out_dir: Path):
        self.id = job_id
        self.cfg = cfg
        self.out_dir = out_dir
        self.state = "running"
        self.step = 0
        self.last_line: str | None = None
        self.error: str | None = None
        self.checkpoint: str | None = None
        self.lock = threading.Lock()

    def info(self) -> JobInfo:
        with self.lock:
            return JobInfo(
                id=self.id, state=self.state, step=self.step,
                max_steps=self.cfg.optimizer.max_steps, last_line=self.last_line,
                error=self.error, output_dir=str(self.out_dir),
                checkpoint=self.checkpoint,
            )


_jobs: dict[str, _Job] = {}
_jobs_lock = threading.Lock()


def _run_job(job: _Job, seed):
    def progress(line: str):
        with job.lock:
            job.last_line = line
            # lines look like "step=12 total=..."; keep the step counter live
            try:
                job.step = int(line.split()[0].split("=")[1]) + 1
            except (IndexError, ValueError):
                pass

    try:
        result = run_optimization(job.cfg, out_dir=job.out_dir, seed=seed, progress=progress)
        with job.lock:
            job.state = "finished"
            job.step = result.steps_run
            job.checkpoint = str(result.final_checkpoint)
    except Exception as exc:  # job isolation: any failure marks the job failed
        with job.lock:
            job.state = "failed"
            job.error = f"{type(exc).__name__}: {exc}"
            traceback.print_exc()


@app.get("/health")
def health():
    return {"version": __version__, "jobs": len(_jobs)}


@app.post("/jobs", response_model=JobInfo, status_code=201)
def submit_job(req: JobRequest):
    try:
        cfg = parse_config(req.config_text)
    except ConfigError as exc:
        raise HTTPException(status_code=422, detail=str(exc))
    job_id = uuid.uuid4().hex[:12]
    out_dir = Path(req.out_dir) if req.out_dir else Path(tempfile.mkdtemp(prefix=f"meshforge-{job_id}-"))
    job = _Job(job_id, cfg, out_dir)
    with _jobs_lock:
        _jobs[job_id] = job
    thread = threading.Thread(target=_run_job, args=(job, req.seed), daemon=True)
    thread.start()
    return job.info()


@app.get("/jobs", response_model=JobList)
def list_jobs():
    with _jobs_lock:
        return JobList(jobs=[j.info() for j in _jobs.values()])


def _get_job(job_id: str) -> _Job:
    with _jobs_lock:
        job = _jobs.get(job_id)
    if job is None:
        raise HTTPException(status_code=404, detail=f"no such job {job_id!r}")
    return job


@app.get("/jobs/{job_id}", response_model=JobInfo)
def job_status(job_id: str):
    return _get_job(job_id).info()


@app.get("/jobs/{job_id}/log")
def job_log(job_id: str):
    job = _get_job(job_id)
    log = job.out_dir / "loss_log.csv"
    if not log.exists():
        raise HTTPException(status_code=404, detail="loss log not written yet")
    return {"csv": log.read_text()}


@app.post("/jobs/{job_id}/export", response_model=ExportInfo)
def job_export(job_id: str, req: ExportRequest):
    from .export import export_checkpoint

    job = _get_job(job_id)
    info = job.info()
    if info.state != "finished":
        raise HTTPException(status_code=409, detail=f"job is {info.state}, not finished")
    out = Path(req.out_dir) if req.out_dir else job.out_dir / "export"
    files = export_checkpoint(info.checkpoint, out)
    return ExportInfo(obj=str(files["obj"]), mtl=str(files["mtl"]), texture=str(files["texture"]))
