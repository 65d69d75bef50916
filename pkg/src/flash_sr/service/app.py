"""FastAPI application wrapping the file-level operations.

Domain failures (bad paths, malformed files, shape mismatches) surface as
HTTP 400 with the underlying message; validation of the request body itself
is pydantic's 422.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException

from .. import __version__, ops
from . import schemas as s


def _run(fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (ValueError, OSError) as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc


def create_app() -> FastAPI:
    app = FastAPI(title="flash-sr", version=__version__,
                  description="Range-image super-resolution operations")

    @app.get("/health", response_model=s.HealthResponse)
    def health():
        return {"status": "ok", "version": __version__}

    @app.post("/project", response_model=s.ProjectResponse)
    def project(req: s.ProjectRequest):
        return _run(ops.op_project, req.in_path, req.out_path,
                    dims=req.dims, fov=req.fov)

    @app.post("/unproject", response_model=s.UnprojectResponse)
    def unproject(req: s.UnprojectRequest):
        return _run(ops.op_unproject, req.in_path, req.out_path, fov=req.fov)

    @app.post("/synth", response_model=s.SynthResponse)
    def synth(req: s.SynthRequest):
        return _run(ops.op_synth, req.out_dir, req.count, seed=req.seed,
                    dims=req.dims, fov=req.fov)

    @app.post("/train", response_model=s.TrainResponse)
    def train(req: s.TrainRequest):
        return _run(ops.op_train, req.data_dir, req.out_dir,
                    config_path=req.config_path, overrides=req.overrides)

    @app.post("/infer", response_model=s.InferResponse)
    def infer(req: s.InferRequest):
        return _run(ops.op_infer, req.ckpt, req.in_path, req.out_path,
                    mc_samples=req.mc_samples, mc_batch=req.mc_batch,
                    dropout=req.dropout, ply=req.ply, svg=req.svg,
                    fov=req.fov)

    @app.post("/eval", response_model=s.EvalResponse)
    def evaluate(req: s.EvalRequest):
        return _run(ops.op_eval, req.pred_path, req.gt_path, bins=req.bins,
                    report_path=req.report_path, fov=req.fov)

    @app.post("/bench", response_model=s.BenchResponse)
    def bench(req: s.BenchRequest):
        return _run(ops.op_bench, req.ckpt, reps=req.reps, warmup=req.warmup,
                    mc_samples=req.mc_samples, mc_batch=req.mc_batch,
                    dropout=req.dropout)

    return app
