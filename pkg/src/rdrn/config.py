"""Flat key-value config files.

One ``key = value`` pair per line; blank lines and ``#`` comments are
ignored. Keys mirror the model, training and degradation dataclasses:

  model:        depth, channels, scale, nlsa_levels, aux_zero_levels,
                esa_reduction, negative_slope, nlsa_backend, aux_long_skip
  training:     stage, learning_rate, decay_steps, decay_factor,
                batch_size, lr_patch_size, total_steps, seed,
                checkpoint_every
  degradation:  degradation (BI|BD|DN), blur_kernel_size, blur_sigma,
                noise_sigma, rng_seed
  evaluation:   shave, channel_mode

Integer sets are comma-separated (``nlsa_levels = 3,4``). Command-line
flags override file values; the effective merged config is echoed back by
every command.
"""

from pathlib import Path

from .degradation import DegradationSpec
from .errors import ConfigurationError
from .model import RDRNConfig
from .training import TrainConfig


def load_flat_config(path):
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def _parse_int_set(text):
    text = str(text).strip()
    if not text or text.lower() in ("none", "empty"):
        return frozenset()
    return frozenset(int(t) for t in text.replace(";", ",").split(",") if t.strip())


def _parse_bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigurationError(f"not a boolean: {text!r}")


_MODEL_FIELDS = {
    "depth": int,
    "channels": int,
    "scale": int,
    "nlsa_levels": _parse_int_set,
    "aux_zero_levels": _parse_int_set,
    "esa_reduction": int,
    "negative_slope": float,
    "nlsa_backend": str,
    "aux_long_skip": _parse_bool,
}

_TRAIN_FIELDS = {
    "stage": str,
    "learning_rate": float,
    "decay_steps": lambda s: tuple(sorted(_parse_int_set(s))),
    "decay_factor": float,
    "batch_size": int,
    "lr_patch_size": int,
    "total_steps": int,
    "seed": int,
    "checkpoint_every": int,
}

_DEGRADATION_FIELDS = {
    "degradation": ("kind", str),
    "scale": ("scale", int),
    "blur_kernel_size": ("blur_kernel_size", int),
    "blur_sigma": ("blur_sigma", float),
    "noise_sigma": ("noise_sigma", float),
    "rng_seed": ("rng_seed", int),
}


def _collect(fields, *sources):
    out = {}
    for source in sources:
        if not source:
            continue
        for key, conv in fields.items():
            if key in source and source[key] is not None:
                out[key] = conv(source[key]) if isinstance(source[key], str) else source[key]
    return out


def model_config(file_values=None, overrides=None) -> RDRNConfig:
    kw = _collect(_MODEL_FIELDS, file_values, overrides)
    return RDRNConfig(**kw)


def train_config(file_values=None, overrides=None) -> TrainConfig:
    kw = _collect(_TRAIN_FIELDS, file_values, overrides)
    return TrainConfig(**kw)


def degradation_spec(file_values=None, overrides=None) -> DegradationSpec:
    kw = {}
    for source in (file_values, overrides):
        if not source:
            continue
        for key, (field, conv) in _DEGRADATION_FIELDS.items():
            if key in source and source[key] is not None:
                val = source[key]
                kw[field] = conv(val) if isinstance(val, str) else val
    return DegradationSpec(**kw)
