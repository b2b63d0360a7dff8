"""Pydantic request/response models for the thinning service."""

from pydantic import BaseModel, Field


class EngineConfigModel(BaseModel):
    alpha: float = 0.9
    tau: float | None = None
    tol: float | None = None
    gamma: float | None = None
    rank: int = 10
    noise_var: float | None = None
    k_max: int = 32
    subsample_rate: float = 1.0
    seed: int = 0
    init_depth: int = 1


class CreateSessionRequest(BaseModel):
    config: EngineConfigModel = Field(default_factory=EngineConfigModel)
    # training observations, one per row (N x p)
    training: list[list[float]]


class SessionSummary(BaseModel):
    session_id: str
    dim: int
    leaf_count: int
    alpha: float
    tau: float
    tol: float
    gamma: float
    noise_var: float
    subsample_rate: float
    batches_processed: int
    splits: int
    merges: int


class ScoredObservationModel(BaseModel):
    t: int
    i: int
    score: float
    leaf: int
    flagged: bool


class ProcessBatchRequest(BaseModel):
    # observations, one per row (N x p)
    data: list[list[float]]
    time_index: int | None = None


class ProcessBatchResponse(BaseModel):
    observations: list[ScoredObservationModel]
    flagged_indices: list[int]
    leaf_count: int
    cum_error: float


class CheckpointResponse(BaseModel):
    checkpoint: dict


class RestoreSessionRequest(BaseModel):
    checkpoint: dict


class ScoreRequest(BaseModel):
    data: list[list[float]]


class ScoreResponse(BaseModel):
    scores: list[float]


class AnscombeRequest(BaseModel):
    counts: list[list[float]]


class AnscombeResponse(BaseModel):
    transformed: list[list[float]]


class SynthRequest(BaseModel):
    ambient_dim: int = 100
    subspace_rank: int = 10
    n_subspaces: int = 3
    inlier_fraction: float = 0.95
    noise_var: float = 0.1
    rotation_speed: float = 0.0
    total: int = 4000
    train_count: int = 1000
    seed: int = 0
    obs_per_step: int = 1
    coeff_std: float = 2.0


class SynthResponse(BaseModel):
    # observations, one per row (total x p)
    data: list[list[float]]
    labels: list[int]


class MetricsRequest(BaseModel):
    scores: list[float]
    labels: list[int]
    tau: float | None = None
    best: bool = False


class MetricsResponse(BaseModel):
    p_d: float
    p_f: float
    detection_error: float
    tau_used: float
    auc: float
