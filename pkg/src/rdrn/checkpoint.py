"""Checkpoint format: a directory holding a JSON manifest plus raw blobs.

``manifest.json`` records the model config, training config, step and one
entry per state tensor (name, shape, dtype, byte offset). ``weights.bin``
and ``optimizer.bin`` are the concatenated little-endian tensor payloads.
Float tensors are stored as 32-bit floats, so a save/load round trip
reproduces forward outputs bitwise.
"""

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointMismatchError, InputError
from .model import RDRN, RDRNConfig

MANIFEST_NAME = "manifest.json"
WEIGHTS_NAME = "weights.bin"
OPTIMIZER_NAME = "optimizer.bin"

_NP_DTYPES = {"float32": "<f4", "int64": "<i8"}
_TORCH_DTYPES = {"float32": torch.float32, "int64": torch.int64}


def config_to_dict(cfg: RDRNConfig) -> dict:
    d = asdict(cfg)
    d["nlsa_levels"] = sorted(cfg.nlsa_levels)
    d["aux_zero_levels"] = sorted(cfg.aux_zero_levels)
    return d


def config_from_dict(d: dict) -> RDRNConfig:
    d = dict(d)
    d["nlsa_levels"] = frozenset(d.get("nlsa_levels", ()))
    d["aux_zero_levels"] = frozenset(d.get("aux_zero_levels", (1, 2)))
    return RDRNConfig(**d)


def _dtype_name(tensor):
    if tensor.dtype == torch.float32:
        return "float32"
    if tensor.dtype == torch.int64:
        return "int64"
    raise InputError(f"unsupported checkpoint dtype {tensor.dtype}")


def _write_blobs(tensors, path):
    entries = []
    offset = 0
    with open(path, "wb") as fh:
        for name, t in tensors:
            dtype = _dtype_name(t)
            arr = t.detach().cpu().numpy().astype(_NP_DTYPES[dtype], copy=False)
            raw = arr.tobytes()
            entries.append({
                "name": name,
                "shape": list(t.shape),
                "dtype": dtype,
                "offset": offset,
                "nbytes": len(raw),
            })
            fh.write(raw)
            offset += len(raw)
    return entries


def _read_blobs(entries, path):
    blob = Path(path).read_bytes()
    out = {}
    for e in entries:
        raw = blob[e["offset"]:e["offset"] + e["nbytes"]]
        arr = np.frombuffer(raw, dtype=_NP_DTYPES[e["dtype"]]).reshape(e["shape"])
        out[e["name"]] = torch.from_numpy(arr.copy()).to(_TORCH_DTYPES[e["dtype"]])
    return out


def save_checkpoint(path, model: RDRN, step=0, train_config=None, optimizer=None):
    """Write the model (and optionally optimizer) state under ``path``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    tensors = list(model.state_dict().items())
    manifest = {
        "format": "rdrn-checkpoint",
        "version": 1,
        "model_config": config_to_dict(model.cfg),
        "train_config": train_config,
        "step": int(step),
        "tensors": _write_blobs(tensors, path / WEIGHTS_NAME),
    }
    if optimizer is not None:
        state = optimizer.state_dict()
        opt_tensors, opt_steps = [], {}
        for idx, s in state["state"].items():
            for key, val in s.items():
                if isinstance(val, torch.Tensor) and val.dim() > 0:
                    opt_tensors.append((f"{idx}.{key}", val))
                else:
                    opt_steps[f"{idx}.{key}"] = float(val)
        manifest["optimizer"] = {
            "param_groups": state["param_groups"],
            "scalars": opt_steps,
            "tensors": _write_blobs(opt_tensors, path / OPTIMIZER_NAME),
        }
    (path / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2))
    return path


def read_manifest(path):
    manifest_path = Path(path) / MANIFEST_NAME
    if not manifest_path.is_file():
        raise InputError(f"no checkpoint manifest at {manifest_path}")
    return json.loads(manifest_path.read_text())


def load_into(model: RDRN, path):
    """Load stored tensors into an existing model; the first tensor whose
    name or shape does not fit raises a mismatch error naming it."""
    manifest = read_manifest(path)
    state = model.state_dict()
    stored = {e["name"]: e for e in manifest["tensors"]}
    for name, tensor in state.items():
        e = stored.get(name)
        if e is None:
            raise CheckpointMismatchError(
                f"checkpoint at {path} is missing tensor {name!r}")
        if list(tensor.shape) != e["shape"]:
            raise CheckpointMismatchError(
                f"tensor {name!r}: model shape {list(tensor.shape)} vs "
                f"stored {e['shape']}")
    extra = [n for n in stored if n not in state]
    if extra:
        raise CheckpointMismatchError(
            f"checkpoint at {path} has unexpected tensor {extra[0]!r}")
    values = _read_blobs(manifest["tensors"], Path(path) / WEIGHTS_NAME)
    model.load_state_dict(values)
    return manifest


def load_checkpoint(path):
    """Rebuild the model recorded at ``path`` and restore its weights."""
    manifest = read_manifest(path)
    model = RDRN(config_from_dict(manifest["model_config"]))
    load_into(model, path)
    return model, manifest


def restore_optimizer(optimizer, path):
    manifest = read_manifest(path)
    opt = manifest.get("optimizer")
    if opt is None:
        raise InputError(f"checkpoint at {path} holds no optimizer state")
    tensors = _read_blobs(opt["tensors"], Path(path) / OPTIMIZER_NAME)
    state = {}
    for key, val in opt["scalars"].items():
        idx, field = key.split(".", 1)
        state.setdefault(int(idx), {})[field] = torch.tensor(val)
    for key, val in tensors.items():
        idx, field = key.split(".", 1)
        state.setdefault(int(idx), {})[field] = val
    optimizer.load_state_dict(
        {"state": state, "param_groups": opt["param_groups"]})
