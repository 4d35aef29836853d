"""Reconstruction losses and the weighted intermediate-supervision objective."""

from dataclasses import dataclass, field

import torch

from .errors import ConfigurationError, InputError


def l1_loss(pred, target):
    """Mean absolute error over all elements."""
    _check_shapes(pred, target)
    return (pred - target).abs().mean()


def l2_loss(pred, target):
    """Mean squared error over all elements."""
    _check_shapes(pred, target)
    return ((pred - target) ** 2).mean()


BASE_LOSSES = {"l1": l1_loss, "l2": l2_loss}


def _check_shapes(pred, target):
    if pred.shape != target.shape:
        raise InputError(
            f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")


@dataclass
class ISWeights:
    """Weight of the final loss term plus one weight per auxiliary tap."""

    w_final: float = 1.0
    per_tap: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.w_final < 0 or any(w < 0 for w in self.per_tap.values()):
            raise ConfigurationError("loss weights must be nonnegative")
        if self.w_final == 0 and not any(self.per_tap.values()):
            raise ConfigurationError("at least one loss weight must be positive")


def default_is_weights(model) -> ISWeights:
    """Final weight 1; tap weight 0 on the zeroed source levels, else 1."""
    zero = model.cfg.aux_zero_levels
    per_tap = {tid: 0.0 if lvl in zero else 1.0
               for tid, lvl in model.tap_levels.items()}
    return ISWeights(w_final=1.0, per_tap=per_tap)


def is_loss(out, target_hr, weights: ISWeights, base="l1"):
    """w_final * L(final, hr) + sum_i w_i * L(aux_i, hr)."""
    if base not in BASE_LOSSES:
        raise ConfigurationError(f"base loss must be one of {sorted(BASE_LOSSES)}")
    if set(weights.per_tap) != set(out.aux_sr):
        missing = set(out.aux_sr) - set(weights.per_tap)
        extra = set(weights.per_tap) - set(out.aux_sr)
        raise ConfigurationError(
            f"tap weights do not match model taps "
            f"(missing {sorted(missing)}, extra {sorted(extra)})")
    loss_fn = BASE_LOSSES[base]
    total = weights.w_final * loss_fn(out.final_sr, target_hr)
    for tid, w in weights.per_tap.items():
        if w:
            total = total + w * loss_fn(out.aux_sr[tid], target_hr)
    return total


def active_term_count(weights: ISWeights) -> int:
    """Number of nonzero-weight terms in the objective."""
    return int(weights.w_final > 0) + sum(1 for w in weights.per_tap.values() if w)
