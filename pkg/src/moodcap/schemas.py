"""Pydantic request/response models for the HTTP service."""

from __future__ import annotations

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class SynthRequest(BaseModel):
    out_dir: str
    n_images: int = 200
    regions: int = 8
    feature_dim: int = 16
    objects: int = 3
    seed: int = 0


class SynthResponse(BaseModel):
    paths: dict[str, str]


class GradcheckRequest(BaseModel):
    eps: float = 1e-5
    seed: int = 0
    variant: str = "full"
    # optional probe-size override; omitted fields use the standard tiny config
    dims: dict[str, int] | None = None


class GradcheckResponse(BaseModel):
    passed: bool
    worst: float
    worst_param: str
    tolerance: float
    per_param: dict[str, float]


class TrainRequest(BaseModel):
    config: dict = Field(description="run config object; relative paths resolve "
                                     "against the server's working directory")


class EpochLogModel(BaseModel):
    epoch: int
    l1_xent: float
    l1_reg: float
    l2: float
    total: float
    val_metric: float | None


class TrainResponse(BaseModel):
    best_epoch: int
    checkpoints: dict[str, str]
    log: list[EpochLogModel]
    vocab_size: int


class LoadModelRequest(BaseModel):
    checkpoint: str


class ModelInfo(BaseModel):
    model_id: str
    checkpoint: str
    variant: str
    vocab_size: int
    regions: int
    feature_dim: int


class ModelListResponse(BaseModel):
    models: list[ModelInfo]


class GenerateRequest(BaseModel):
    features_path: str | None = None
    image_ids: list[str] | None = None
    # inline alternative to features_path for one-off decodes
    grid: list[list[float]] | None = None
    image_id: str = "inline"
    sentiment: str | None = None
    contrastive: bool = False
    beam_width: int = 1
    max_len: int = 20
    length_penalty: float = 0.0
    suppress_unk: bool = False
    include_attention: bool = False


class CaptionModel(BaseModel):
    image_id: str
    sentiment: str
    caption: str
    log_prob: float
    attention: list[list[float]] | None = None


class GenerateResponse(BaseModel):
    captions: list[CaptionModel]


class CandidateModel(BaseModel):
    image_id: str
    sentiment: str
    caption: str


class EvaluateRequest(BaseModel):
    generated_path: str | None = None
    candidates: list[CandidateModel] | None = None
    references_path: str
    lexicon_path: str
    sentiment: str = "both"
    per_image_anps: bool = True


class MetricRowModel(BaseModel):
    bleu: list[float]
    rouge_l: float
    cider: float
    entropy: float
    spice_n: float
    anp_generated: float
    anp_matched: float
    top_adjectives: list[str]
    num_candidates: int
    unk_tokens: int


class EvaluateResponse(BaseModel):
    rows: dict[str, MetricRowModel]
    average: MetricRowModel | None
