"""Request and response models for the HTTP service.

Operations are file-to-file: requests carry paths on the service host plus
options, responses return the summary the underlying operation produced.
"""

from __future__ import annotations

from pydantic import BaseModel, Field


class ProjectRequest(BaseModel):
    in_path: str = Field(description="input cloud (.bin or .ply)")
    out_path: str = Field(description="output range image (.frim)")
    dims: str | None = Field(default=None, description="grid HxW")
    fov: str | None = Field(default=None, description="degUp:degDown")


class ProjectResponse(BaseModel):
    points: int
    dropped: int
    valid_cells: int
    dims: list[int]
    out: str


class UnprojectRequest(BaseModel):
    in_path: str
    out_path: str
    fov: str | None = None


class UnprojectResponse(BaseModel):
    points: int
    out: str


class SynthRequest(BaseModel):
    out_dir: str
    count: int = Field(ge=1)
    seed: int = 0
    dims: str | None = None
    fov: str | None = None


class SynthResponse(BaseModel):
    scenes: int
    first: str
    last: str
    out_dir: str
    dims: list[int]


class TrainRequest(BaseModel):
    data_dir: str
    out_dir: str
    config_path: str | None = None
    overrides: dict[str, str] = Field(default_factory=dict)


class TrainResponse(BaseModel):
    epochs: int
    train_scenes: int
    val_scenes: int
    final_train_l1: float
    final_val_l1: float
    best_val_l1: float
    out_dir: str


class InferRequest(BaseModel):
    ckpt: str
    in_path: str
    out_path: str
    mc_samples: int | None = Field(default=None, ge=1)
    mc_batch: int = Field(default=8, ge=1)
    dropout: float = Field(default=0.2, ge=0.0, lt=1.0)
    ply: str | None = None
    svg: str | None = None
    fov: str | None = None


class InferResponse(BaseModel):
    out: str
    dims: list[int]
    std_out: str | None = None
    mc_latency_ms: float | None = None
    ply: str | None = None
    svg: str | None = None


class BinReportModel(BaseModel):
    mae_m: float | None
    cd: float
    iou: float
    precision: float
    recall: float
    f1: float
    pred_points: int
    gt_points: int


class EvalRequest(BaseModel):
    pred_path: str
    gt_path: str
    bins: str = "0:30,30:60"
    report_path: str | None = None
    fov: str | None = None


class EvalResponse(BaseModel):
    mae_log: float
    mae_m: float
    cd: float
    iou: float
    precision: float
    recall: float
    f1: float
    bins: dict[str, BinReportModel | None]
    table: str
    report: str | None = None


class BenchRequest(BaseModel):
    ckpt: str
    reps: int = Field(default=20, ge=1)
    warmup: int = Field(default=3, ge=0)
    mc_samples: int | None = Field(default=None, ge=1)
    mc_batch: int = Field(default=8, ge=1)
    dropout: float = Field(default=0.2, ge=0.0, lt=1.0)


class BenchResponse(BaseModel):
    single_ms: float
    reps: int
    dims: list[int]
    mc_ms: float | None = None
    mc_samples: int | None = None
    mc_batch: int | None = None
    mc_over_single: float | None = None


class HealthResponse(BaseModel):
    status: str
    version: str
