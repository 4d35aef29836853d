"""Two-stage optimization harness.

Stage "l1" trains the weighted intermediate-supervision objective with a
mean-absolute base loss; stage "l2_finetune" continues from a stage-1
checkpoint with a mean-squared base loss. Patches are sampled uniformly,
augmented with a random dihedral transform, and optimized with Adam under
a step-decay schedule. A non-finite loss aborts immediately and dumps the
offending batch for inspection.
"""

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .augment import random_dihedral_pair
from .checkpoint import load_checkpoint, save_checkpoint
from .data import PairedDataset, sample_patch
from .errors import ConfigurationError, TrainingDiverged
from .losses import ISWeights, default_is_weights, is_loss, l1_loss, l2_loss
from .model import RDRN, RDRNConfig

STAGES = ("l1", "l2_finetune")


@dataclass
class TrainConfig:
    stage: str = "l1"
    learning_rate: float = 2e-4
    decay_steps: tuple = ()        # empty: decay at each quarter of the run
    decay_factor: float = 0.5
    batch_size: int = 16
    lr_patch_size: int = 48
    total_steps: int = 1000
    seed: int = 0
    checkpoint_every: int = 0      # 0: only the final checkpoint
    is_weights: object = "paper-default"

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ConfigurationError(f"stage must be one of {STAGES}")
        if self.batch_size < 1 or self.lr_patch_size < 1 or self.total_steps < 0:
            raise ConfigurationError("batch/patch/steps must be positive")

    def base_loss(self):
        return "l1" if self.stage == "l1" else "l2"

    def decay_boundaries(self):
        if self.decay_steps:
            return tuple(self.decay_steps)
        q = self.total_steps // 4
        return tuple(b for b in (q, 2 * q, 3 * q) if b)

    def lr_at(self, step):
        n = sum(1 for b in self.decay_boundaries() if step >= b)
        return self.learning_rate * self.decay_factor ** n

    def to_dict(self):
        d = asdict(self)
        d["decay_steps"] = list(self.decay_steps)
        if isinstance(self.is_weights, ISWeights):
            d["is_weights"] = {"w_final": self.is_weights.w_final,
                               "per_tap": dict(self.is_weights.per_tap)}
        return d


@dataclass
class TrainResult:
    records: list = field(default_factory=list)
    checkpoint_dir: str = ""
    log_path: str = ""

    @property
    def final_loss(self):
        return self.records[-1]["loss"] if self.records else float("nan")

    def smoothed_base_loss(self, step, window=100):
        lo = max(0, step - window + 1)
        vals = [r["loss_final"] for r in self.records[lo:step + 1]]
        return float(np.mean(vals)) if vals else float("nan")


def fixed_execution(seed=0):
    """Seed torch and request deterministic kernels; forwards and training
    runs repeat bitwise under this mode."""
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True)


def _resolve_weights(model, cfg: TrainConfig) -> ISWeights:
    if cfg.is_weights == "paper-default" or cfg.is_weights is None:
        return default_is_weights(model)
    if isinstance(cfg.is_weights, ISWeights):
        return cfg.is_weights
    raise ConfigurationError("is_weights must be 'paper-default' or ISWeights")


def _to_tensor(batch):
    arr = np.stack([p.transpose(2, 0, 1) for p in batch]).astype(np.float32)
    return torch.from_numpy(arr)


def _make_batch(dataset: PairedDataset, cfg: TrainConfig, rng):
    hr_batch, lr_batch = [], []
    for _ in range(cfg.batch_size):
        hr, lr = dataset.pairs[int(rng.integers(len(dataset)))]
        hr_p, lr_p = sample_patch(hr, lr, cfg.lr_patch_size, rng)
        hr_p, lr_p = random_dihedral_pair(hr_p, lr_p, rng)
        hr_batch.append(hr_p)
        lr_batch.append(lr_p)
    return _to_tensor(hr_batch), _to_tensor(lr_batch)


def train_stage(model: RDRN, dataset: PairedDataset, cfg: TrainConfig,
                out_dir=None) -> TrainResult:
    """Optimize the model in place; returns the per-step log."""
    min_hr = min(min(hr.shape[0], hr.shape[1]) for hr, _ in dataset.pairs)
    if cfg.lr_patch_size * dataset.scale > min_hr:
        raise ConfigurationError(
            f"lr_patch_size {cfg.lr_patch_size} x{dataset.scale} exceeds the "
            f"smallest HR dimension {min_hr}")
    weights = _resolve_weights(model, cfg)
    rng = np.random.default_rng(cfg.seed)
    torch.manual_seed(cfg.seed)
    base = cfg.base_loss()
    base_fn = l1_loss if base == "l1" else l2_loss
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    out_dir = Path(out_dir) if out_dir else None
    result = TrainResult(checkpoint_dir=str(out_dir or ""))
    model.train()
    t0 = time.perf_counter()
    for step in range(cfg.total_steps):
        lr_now = cfg.lr_at(step)
        for group in optimizer.param_groups:
            group["lr"] = lr_now
        hr_t, lr_t = _make_batch(dataset, cfg, rng)
        out = model(lr_t)
        loss = is_loss(out, hr_t, weights, base)
        loss_final = base_fn(out.final_sr.detach(), hr_t)
        if not torch.isfinite(loss):
            dump = _dump_batch(out_dir, step, hr_t, lr_t)
            raise TrainingDiverged(
                f"non-finite loss at step {step}; batch dumped to {dump}")
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        result.records.append({
            "step": step,
            "loss": float(loss.detach()),
            "loss_final": float(loss_final),
            "lr": lr_now,
            "wall_time": time.perf_counter() - t0,
        })
        if (out_dir and cfg.checkpoint_every
                and (step + 1) % cfg.checkpoint_every == 0
                and step + 1 < cfg.total_steps):
            save_checkpoint(out_dir / f"step_{step + 1}", model,
                            step=step + 1, train_config=cfg.to_dict(),
                            optimizer=optimizer)
    if out_dir:
        save_checkpoint(out_dir / "final", model, step=cfg.total_steps,
                        train_config=cfg.to_dict(), optimizer=optimizer)
        result.log_path = str(_write_log(out_dir, result.records))
        result.checkpoint_dir = str(out_dir / "final")
    return result


def _write_log(out_dir, records):
    path = Path(out_dir) / "train_log.jsonl"
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r) + "\n")
    return path


def _dump_batch(out_dir, step, hr_t, lr_t):
    dump_dir = Path(out_dir) if out_dir else Path.cwd()
    dump_dir.mkdir(parents=True, exist_ok=True)
    dump = dump_dir / f"diverged_step{step}.npz"
    np.savez(dump, hr=hr_t.numpy(), lr=lr_t.numpy(), step=step)
    return dump


def run_training(data_root, model_cfg: RDRNConfig, train_cfg: TrainConfig,
                 degradation_spec, out_dir, init_checkpoint=None):
    """Build (or load) a model, assemble the dataset, run one stage.

    The fine-tuning stage refuses to start without an initial checkpoint,
    which is how stage-2 inherits the stage-1 weights.
    """
    if train_cfg.stage == "l2_finetune" and not init_checkpoint:
        raise ConfigurationError(
            "l2_finetune requires an initial stage-1 checkpoint")
    if init_checkpoint:
        model, _ = load_checkpoint(init_checkpoint)
    else:
        model = RDRN(model_cfg)
    dataset = PairedDataset.from_directory(data_root, degradation_spec)
    result = train_stage(model, dataset, train_cfg, out_dir=out_dir)
    return model, result
