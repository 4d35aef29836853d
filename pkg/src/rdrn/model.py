"""The full network: shallow extractor, residual tree, reconstruction heads.

A single 3x3 conv lifts the LR image to the feature width, the tree
extracts deep features, and the main head reconstructs from the sum of
shallow and deep features (long skip). Every non-root tree output is also
routed through its own lightweight head, producing one auxiliary SR
prediction per tap for intermediate supervision.
"""

from dataclasses import dataclass, field

import torch
from torch import nn

from .blocks import (
    BasicBlock,
    BlockConfig,
    ReconstructionHead,
    build_rdrb,
    iter_nodes,
    tap_levels,
)
from .errors import ConfigurationError, InputError


def default_nlsa_levels(depth):
    """Non-local attention on the fusion level the reference recursion
    attaches it to (level 3), when the tree is deep enough."""
    return frozenset({3} if depth >= 3 else ())


@dataclass(frozen=True)
class RDRNConfig:
    depth: int = 5
    channels: int = 64
    scale: int = 4
    nlsa_levels: frozenset = None
    aux_zero_levels: frozenset = frozenset({1, 2})
    esa_reduction: int = 4
    negative_slope: float = 0.05
    nlsa_backend: str = "dense"
    aux_long_skip: bool = True

    def __post_init__(self):
        if self.depth < 0:
            raise ConfigurationError("depth must be >= 0")
        if self.scale not in ReconstructionHead.SUPPORTED_SCALES:
            raise ConfigurationError(
                f"scale must be one of {ReconstructionHead.SUPPORTED_SCALES}")
        if self.nlsa_levels is None:
            object.__setattr__(
                self, "nlsa_levels", default_nlsa_levels(self.depth))
        else:
            object.__setattr__(self, "nlsa_levels", frozenset(self.nlsa_levels))
        # Zeroing levels outside the tree are unreachable; keep the valid ones.
        object.__setattr__(
            self, "aux_zero_levels",
            frozenset(t for t in self.aux_zero_levels if 0 <= t < self.depth))
        # Block-level validation of channels/reduction happens here too.
        self.block_config()

    def block_config(self):
        return BlockConfig(self.channels, self.esa_reduction, self.negative_slope)


@dataclass
class ForwardOutput:
    final_sr: torch.Tensor
    aux_sr: dict = field(default_factory=dict)


class RDRN(nn.Module):
    def __init__(self, cfg: RDRNConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.channels
        self.shallow = nn.Conv2d(3, c, 3, padding=1)
        self.tree = build_rdrb(
            cfg.depth, cfg.block_config(), cfg.nlsa_levels, cfg.nlsa_backend)
        self.head = ReconstructionHead(c, cfg.scale)
        self.tap_levels = tap_levels(self.tree)
        self.aux_heads = nn.ModuleDict(
            {tid: ReconstructionHead(c, cfg.scale) for tid in self.tap_levels})

    @property
    def tap_ids(self):
        return list(self.tap_levels)

    def forward(self, lr_image):
        if lr_image.dim() != 4 or lr_image.shape[1] != 3:
            raise InputError(
                f"expected a (batch, 3, H, W) input, got {tuple(lr_image.shape)}")
        fs = self.shallow(lr_image)
        res = self.tree(fs)
        fd, taps = res if isinstance(res, tuple) else (res, {})
        final = self.head(fs + fd)
        aux = {}
        for tid, feat in taps.items():
            if self.cfg.aux_long_skip:
                feat = feat + fs
            aux[tid] = self.aux_heads[tid](feat)
        return ForwardOutput(final_sr=final, aux_sr=aux)


def build_model(cfg: RDRNConfig) -> RDRN:
    return RDRN(cfg)


def count_model_params(model, include_aux=True):
    """Trainable parameter total of a constructed model."""
    total = 0
    for name, p in model.named_parameters():
        if not p.requires_grad:
            continue
        if not include_aux and name.startswith("aux_heads."):
            continue
        total += p.numel()
    return total


def assert_no_weight_sharing(model):
    """Every parameter tensor must be a distinct object (no reuse)."""
    seen = {}
    for name, p in model.named_parameters():
        if id(p) in seen:
            raise ConfigurationError(
                f"parameter {name} shares storage with {seen[id(p)]}")
        seen[id(p)] = name


__all__ = [
    "RDRN",
    "RDRNConfig",
    "ForwardOutput",
    "build_model",
    "count_model_params",
    "assert_no_weight_sharing",
    "default_nlsa_levels",
    "BasicBlock",
    "iter_nodes",
]
