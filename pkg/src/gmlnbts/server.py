"""HTTP interface tying inference, storage, ratings, and fine-tuning together.

Model-touching work (segmentation, fine-tuning) runs on a single worker
thread consuming a FIFO queue, so exactly one job owns the weights at a
time; request handlers only enqueue and read store state.
"""

from __future__ import annotations

import json
import queue
import threading
import time
import uuid
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Form, Request, Response, UploadFile
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from .errors import DataError, FormatError
from .feedback import (FeedbackStore, FineTunePolicy, RatingRecord, VERDICTS,
                       collect_finetune_set, run_finetune_cycle)
from .imaging import AXES, render_slice_png
from .train import segment_volume, study_input
from .volume_io import MODALITIES, Study, decode_volume


@dataclass
class ServerConfig:
    store_root: str = "store"
    checkpoint: str | None = None
    host: str = "127.0.0.1"
    port: int = 8000
    max_upload_bytes: int = 64 * 1024 * 1024
    queue_depth: int = 8
    ui_dir: str | None = None

    def __post_init__(self):
        if self.queue_depth < 1:
            raise DataError("queue depth must be at least 1")


@dataclass
class JobStatus:
    job_id: str
    kind: str
    state: str = "queued"       # queued | running | done | failed
    result: dict | None = None
    error: str | None = None

    def as_dict(self) -> dict:
        return {"job_id": self.job_id, "kind": self.kind, "state": self.state,
                "result": self.result, "error": self.error}


class JobRunner:
    def __init__(self, depth: int):
        self._queue: queue.Queue = queue.Queue(maxsize=depth)
        self._jobs: dict[str, JobStatus] = {}
        self._lock = threading.Lock()
        self._worker = threading.Thread(target=self._run, daemon=True)
        self._worker.start()

    def submit(self, kind: str, fn) -> JobStatus:
        job = JobStatus(job_id=uuid.uuid4().hex[:12], kind=kind)
        with self._lock:
            self._queue.put_nowait((job, fn))  # raises queue.Full when saturated
            self._jobs[job.job_id] = job
        return job

    def get(self, job_id: str) -> JobStatus | None:
        return self._jobs.get(job_id)

    def has_active(self, kind: str) -> bool:
        return any(j.kind == kind and j.state in ("queued", "running")
                   for j in self._jobs.values())

    def _run(self) -> None:
        while True:
            job, fn = self._queue.get()
            job.state = "running"
            try:
                job.result = fn()
                job.state = "done"
            except Exception as exc:  # surfaced through GET /jobs
                job.error = f"{type(exc).__name__}: {exc}"
                job.state = "failed"

    def drain(self, timeout: float = 60.0) -> None:
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            if not any(j.state in ("queued", "running") for j in self._jobs.values()):
                return
            time.sleep(0.01)


def create_app(store: FeedbackStore, model, policy: FineTunePolicy | None = None,
               config: ServerConfig | None = None) -> FastAPI:
    cfg = config or ServerConfig()
    policy = policy or FineTunePolicy()
    app = FastAPI(title="segmentation feedback service")
    runner = JobRunner(cfg.queue_depth)
    app.state.store = store
    app.state.model = model
    app.state.runner = runner

    def err(status: int, message: str) -> JSONResponse:
        return JSONResponse(status_code=status, content={"error": message})

    @app.post("/studies", status_code=201)
    def upload_study(request: Request,
                     t1: UploadFile, t1ce: UploadFile, t2: UploadFile, flair: UploadFile,
                     labels: UploadFile | None = None,
                     manifest: str = Form("{}")):
        try:
            meta = json.loads(manifest)
        except json.JSONDecodeError:
            return err(400, "manifest is not valid JSON")
        parts = {"T1": t1, "T1ce": t1ce, "T2": t2, "FLAIR": flair}
        volumes = {}
        for name, part in parts.items():
            raw = part.file.read()
            if len(raw) > cfg.max_upload_bytes:
                return err(413, f"{name} exceeds upload limit of {cfg.max_upload_bytes} bytes")
            try:
                vol = decode_volume(raw)
            except FormatError as exc:
                return err(400, f"{name}: {exc}")
            if vol.shape[0] != 1:
                return err(400, f"{name} must be single-channel")
            volumes[name] = vol[0]
        dims = volumes["T1"].shape
        for name, vol in volumes.items():
            if vol.shape != dims:
                return err(400, f"dim mismatch: T1 has {list(dims)}, {name} has {list(vol.shape)}")
        gt = None
        if labels is not None:
            raw = labels.file.read()
            if len(raw) > cfg.max_upload_bytes:
                return err(413, "labels exceed upload limit")
            try:
                lab = decode_volume(raw)[0]
            except FormatError as exc:
                return err(400, f"labels: {exc}")
            from .volume_io import remap_raw_labels, validate_labels
            try:
                gt = remap_raw_labels(lab) if meta.get("label_remap") else validate_labels(lab)
            except DataError as exc:
                return err(400, str(exc))
        study_id = meta.get("id") or f"study-{uuid.uuid4().hex[:8]}"
        try:
            study = Study(id=study_id, modalities=volumes, gt_labels=gt)
            store.add_study(study)
        except DataError as exc:
            return err(400, str(exc))
        return {"study_id": study_id}

    @app.post("/studies/{study_id}/segment", status_code=202)
    def segment(study_id: str):
        if not store.has_study(study_id):
            return err(404, f"unknown study {study_id}")

        def run():
            study = store.get_study(study_id)
            pred = segment_volume(model, study_input(study))
            pred_id = store.record_prediction(study_id, pred, model.version)
            return {"prediction_id": pred_id, "model_version": model.version}

        try:
            job = runner.submit("segment", run)
        except queue.Full:
            return err(503, "job queue full")
        return {"job_id": job.job_id}

    @app.get("/jobs/{job_id}")
    def job_status(job_id: str):
        job = runner.get(job_id)
        if job is None:
            return err(404, f"unknown job {job_id}")
        return job.as_dict()

    @app.get("/studies/{study_id}/slice")
    def slice_image(study_id: str, axis: str = "d", index: int = 0,
                    modality: str = "T1", overlay: int = 0):
        if not store.has_study(study_id):
            return err(404, f"unknown study {study_id}")
        if axis not in AXES:
            return err(400, f"axis must be one of {AXES}")
        if modality not in MODALITIES:
            return err(400, f"modality must be one of {MODALITIES}")
        study = store.get_study(study_id)
        volume = study.modalities[modality]
        labels = None
        if overlay:
            preds = store.predictions_for(study_id)
            if not preds:
                return err(404, f"study {study_id} has no prediction to overlay")
            labels = store.get_prediction(preds[-1]["prediction_id"])
        try:
            png = render_slice_png(volume, axis, index, labels)
        except IndexError as exc:
            return err(416, str(exc))
        return Response(content=png, media_type="image/png")

    @app.post("/studies/{study_id}/rating", status_code=204)
    def rate(study_id: str, body: dict):
        verdict = body.get("verdict")
        rater = body.get("rater", "")
        if verdict not in VERDICTS:
            return err(400, f"verdict must be one of {VERDICTS}")
        preds = store.predictions_for(study_id)
        if not preds:
            return err(404, f"study {study_id} has no prediction to rate")
        record = RatingRecord(study_id, preds[-1]["prediction_id"], verdict,
                              str(rater), time.time(), preds[-1]["model_version"])
        store.record_rating(record)
        return Response(status_code=204)

    @app.get("/feedback/summary")
    def summary():
        return store.summary()

    @app.post("/admin/finetune", status_code=202)
    def finetune():
        if runner.has_active("finetune"):
            return err(503, "a fine-tune cycle is already queued or running")
        pairs, _ = collect_finetune_set(store, policy)
        if len(pairs) < policy.min_samples:
            return JSONResponse(status_code=409, content={
                "error": "insufficient feedback",
                "count": len(pairs),
                "required": policy.min_samples,
            })

        def run():
            report = run_finetune_cycle(model, store, policy)
            return {
                "version": report.version_after,
                "sample_count": report.sample_count,
                "loss_before": report.loss_before,
                "loss_after": report.loss_after,
                "checkpoint": report.checkpoint_path,
            }

        try:
            job = runner.submit("finetune", run)
        except queue.Full:
            return err(503, "job queue full")
        return {"job_id": job.job_id}

    @app.get("/model/info")
    def model_info():
        return {"version": model.version, "param_count": model.param_count()}

    ui_dir = cfg.ui_dir
    if ui_dir and Path(ui_dir).is_dir():
        app.mount("/ui", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
