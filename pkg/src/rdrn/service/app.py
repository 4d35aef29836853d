"""HTTP service wrapping the library: analysis, degradation, inference,
evaluation and training as endpoints. Checkpoints load once and stay
cached, so repeated inference requests pay no reload cost."""

from dataclasses import asdict, replace
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__, analysis
from ..checkpoint import MANIFEST_NAME, config_to_dict, load_checkpoint
from ..config import (
    degradation_spec,
    load_flat_config,
    model_config,
    train_config,
)
from ..data import generate_lr, lr_cache_dir
from ..degradation import DegradationSpec, degrade
from ..errors import (
    CheckpointMismatchError,
    ConfigurationError,
    InputError,
    TrainingDiverged,
)
from ..evaluate import evaluate_dataset
from ..images import read_image, write_image
from ..inference import self_ensemble, superresolve
from ..model import RDRNConfig
from ..training import run_training
from .schemas import (
    AnalyzeRequest,
    AnalyzeResponse,
    DegradeRequest,
    DegradeResponse,
    EvalRequest,
    EvalResponse,
    HealthResponse,
    NodeCost,
    SRRequest,
    SRResponse,
    SweepRow,
    TrainRequest,
    TrainResponse,
)

app = FastAPI(title="rdrn", version=__version__)

_checkpoint_cache: dict = {}


def _load_model(path):
    path = str(Path(path).resolve())
    mtime = (Path(path) / MANIFEST_NAME).stat().st_mtime_ns
    cached = _checkpoint_cache.get(path)
    if cached and cached[0] == mtime:
        return cached[1]
    model, _ = load_checkpoint(path)
    model.eval()
    _checkpoint_cache.clear()  # keep at most one resident model
    _checkpoint_cache[path] = (mtime, model)
    return model


@app.exception_handler(ConfigurationError)
@app.exception_handler(InputError)
async def _invalid(request: Request, exc):
    return JSONResponse(status_code=422, content={"detail": str(exc)})


@app.exception_handler(CheckpointMismatchError)
async def _mismatch(request: Request, exc):
    return JSONResponse(status_code=409, content={"detail": str(exc)})


@app.exception_handler(FileNotFoundError)
async def _missing(request: Request, exc):
    return JSONResponse(status_code=404, content={"detail": str(exc)})


@app.exception_handler(TrainingDiverged)
async def _diverged(request: Request, exc):
    return JSONResponse(status_code=500, content={"detail": str(exc)})


@app.get("/health", response_model=HealthResponse)
def health():
    return HealthResponse(status="ok", version=__version__)


@app.post("/analyze", response_model=AnalyzeResponse)
def analyze(req: AnalyzeRequest):
    cfg = RDRNConfig(depth=req.depth, channels=req.channels, scale=req.scale,
                     nlsa_levels=req.nlsa_levels)
    report = analysis.cost_report(cfg, req.input_h, req.input_w, req.include_aux)
    mult = 2 if req.raw_flops else 1
    sweep = None
    if req.sweep:
        sweep = [SweepRow(depth=r["depth"], params=r["params"],
                          flops=r["flops"] * mult,
                          param_ratio=r["param_ratio"], flop_ratio=r["flop_ratio"])
                 for r in analysis.depth_sweep(cfg, req.sweep, req.input_h, req.input_w)]
    as_cost = lambda c: NodeCost(params=c.params, flops=c.flops * mult)
    return AnalyzeResponse(
        params=report.params,
        flops=report.flops * mult,
        input_h=req.input_h,
        input_w=req.input_w,
        include_aux=req.include_aux,
        aux_outputs=2 ** (cfg.depth + 1) - 2,
        shallow=as_cost(report.shallow),
        head=as_cost(report.head),
        aux_heads=as_cost(report.aux_heads),
        per_node={k: as_cost(v) for k, v in report.per_node.items()},
        sweep=sweep,
    )


def _spec_from(req) -> DegradationSpec:
    return DegradationSpec(kind=req.kind, scale=req.scale,
                           blur_kernel_size=req.blur_kernel_size,
                           blur_sigma=req.blur_sigma,
                           noise_sigma=req.noise_sigma,
                           rng_seed=req.rng_seed)


@app.post("/degrade", response_model=DegradeResponse)
def degrade_images(req: DegradeRequest):
    spec = _spec_from(req)
    if req.dataset_root:
        paths = generate_lr(req.dataset_root, spec, force=req.force)
        return DegradeResponse(outputs=[str(p) for p in paths],
                               cache_dir=str(lr_cache_dir(req.dataset_root, spec)))
    if not req.input_path or not req.output_path:
        raise ConfigurationError(
            "degrade needs either dataset_root or input_path + output_path")
    lr = degrade(read_image(req.input_path), spec)
    write_image(req.output_path, lr)
    return DegradeResponse(outputs=[req.output_path])


@app.post("/sr", response_model=SRResponse)
def super_resolve(req: SRRequest):
    model = _load_model(req.checkpoint)
    lr = read_image(req.input)
    if req.ensemble:
        sr = self_ensemble(model, lr, tile=req.tile, tile_overlap=req.tile_overlap)
    else:
        sr = superresolve(model, lr, tile=req.tile, tile_overlap=req.tile_overlap)
    write_image(req.output, sr)
    return SRResponse(output=req.output, height=sr.shape[0], width=sr.shape[1],
                      scale=model.cfg.scale, ensemble=req.ensemble)


def _encode_row(row):
    return {k: ("inf" if isinstance(v, float) and v == float("inf") else v)
            for k, v in row.items()}


@app.post("/eval", response_model=EvalResponse)
def evaluate(req: EvalRequest):
    model = _load_model(req.checkpoint) if req.method == "checkpoint" else None
    rows, summary, skipped = evaluate_dataset(
        req.dataset_root, _spec_from(req), model=model, method=req.method,
        shave=req.shave, ensemble=req.ensemble, tile=req.tile,
        tile_overlap=req.tile_overlap, csv_path=req.csv_path)
    return EvalResponse(rows=[_encode_row(r) for r in rows],
                        summary=_encode_row(summary), skipped=skipped,
                        csv_path=req.csv_path)


def _run_training_request(req: TrainRequest, stage, force_stage=False):
    file_values = load_flat_config(req.config_file) if req.config_file else {}
    overrides = req.model_dump(exclude_none=True)
    if force_stage:
        overrides["stage"] = stage
    else:
        overrides.setdefault("stage", stage)
    m_cfg = model_config(file_values, overrides)
    t_cfg = train_config(file_values, overrides)
    spec = degradation_spec(file_values, overrides)
    spec = replace(spec, scale=m_cfg.scale)
    model, result = run_training(
        req.data_root, m_cfg, t_cfg, spec, req.out_dir,
        init_checkpoint=req.init_checkpoint)
    last = result.records[-1] if result.records else {}
    return TrainResponse(
        checkpoint_dir=result.checkpoint_dir,
        log_path=result.log_path,
        steps=t_cfg.total_steps,
        final_loss=last.get("loss", float("nan")),
        final_base_loss=result.smoothed_base_loss(len(result.records) - 1),
        effective_model_config=config_to_dict(model.cfg),
        effective_train_config=t_cfg.to_dict(),
        effective_degradation=asdict(spec),
    )


@app.post("/train", response_model=TrainResponse)
def train(req: TrainRequest):
    return _run_training_request(req, "l1")


@app.post("/finetune", response_model=TrainResponse)
def finetune(req: TrainRequest):
    if not req.init_checkpoint:
        raise ConfigurationError("finetune requires init_checkpoint")
    return _run_training_request(req, "l2_finetune", force_stage=True)
