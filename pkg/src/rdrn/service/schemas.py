"""Request/response models for the HTTP service."""

from typing import Optional

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class AnalyzeRequest(BaseModel):
    depth: int = 5
    channels: int = 64
    scale: int = 4
    nlsa_levels: Optional[list[int]] = None
    input_h: int = 64
    input_w: int = 64
    include_aux: bool = False
    raw_flops: bool = False
    sweep: Optional[list[int]] = Field(
        default=None, description="depths to sweep, e.g. [3, 4, 5]")


class NodeCost(BaseModel):
    params: int
    flops: int


class SweepRow(BaseModel):
    depth: int
    params: int
    flops: int
    param_ratio: Optional[float] = None
    flop_ratio: Optional[float] = None


class AnalyzeResponse(BaseModel):
    params: int
    flops: int
    input_h: int
    input_w: int
    include_aux: bool
    aux_outputs: int
    shallow: NodeCost
    head: NodeCost
    aux_heads: NodeCost
    per_node: dict[str, NodeCost]
    sweep: Optional[list[SweepRow]] = None


class DegradeRequest(BaseModel):
    dataset_root: Optional[str] = None
    input_path: Optional[str] = None
    output_path: Optional[str] = None
    kind: str = "BI"
    scale: int = 4
    blur_kernel_size: int = 7
    blur_sigma: float = 1.6
    noise_sigma: float = 30.0
    rng_seed: int = 0
    force: bool = False


class DegradeResponse(BaseModel):
    outputs: list[str]
    cache_dir: Optional[str] = None


class SRRequest(BaseModel):
    input: str
    output: str
    checkpoint: str
    ensemble: bool = False
    tile: Optional[int] = None
    tile_overlap: int = 16


class SRResponse(BaseModel):
    output: str
    height: int
    width: int
    scale: int
    ensemble: bool


class EvalRequest(BaseModel):
    dataset_root: str
    checkpoint: Optional[str] = None
    method: str = "checkpoint"
    kind: str = "BI"
    scale: int = 4
    blur_kernel_size: int = 7
    blur_sigma: float = 1.6
    noise_sigma: float = 30.0
    rng_seed: int = 0
    shave: Optional[int] = None
    ensemble: bool = False
    tile: Optional[int] = None
    tile_overlap: int = 16
    csv_path: Optional[str] = None


class EvalRow(BaseModel):
    # PSNR of identical images is the infinite sentinel, transported as "inf".
    image: str
    psnr_y: float | str
    ssim_y: float
    psnr_rgb: float | str
    ssim_rgb: float


class SkippedImage(BaseModel):
    image: str
    error: str


class EvalResponse(BaseModel):
    rows: list[EvalRow]
    summary: EvalRow
    skipped: list[SkippedImage]
    csv_path: Optional[str] = None


class TrainRequest(BaseModel):
    data_root: str
    out_dir: str
    config_file: Optional[str] = None
    init_checkpoint: Optional[str] = None
    # model overrides
    depth: Optional[int] = None
    channels: Optional[int] = None
    scale: Optional[int] = None
    nlsa_levels: Optional[list[int]] = None
    aux_zero_levels: Optional[list[int]] = None
    # training overrides
    stage: Optional[str] = None
    learning_rate: Optional[float] = None
    decay_factor: Optional[float] = None
    batch_size: Optional[int] = None
    lr_patch_size: Optional[int] = None
    total_steps: Optional[int] = None
    seed: Optional[int] = None
    checkpoint_every: Optional[int] = None
    # degradation overrides
    kind: Optional[str] = None
    blur_kernel_size: Optional[int] = None
    blur_sigma: Optional[float] = None
    noise_sigma: Optional[float] = None
    rng_seed: Optional[int] = None


class TrainResponse(BaseModel):
    checkpoint_dir: str
    log_path: str
    steps: int
    final_loss: float
    final_base_loss: float
    effective_model_config: dict
    effective_train_config: dict
    effective_degradation: dict
