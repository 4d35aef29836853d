"""Building blocks of the network.

Feature maps are float tensors of shape (batch, channels, height, width).
The deep feature extractor is a binary tree of residual blocks: a level-0
leaf is a modulated conv + ESA unit, a level-t node fuses two level-(t-1)
subtrees with a 1x1 conv, a skip connection and another ESA gate. No
weights are shared anywhere in the tree.
"""

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigurationError

# Floor for the per-sample std before the log in the deviation modulator;
# keeps constant inputs finite.
STD_EPS = 1e-8


@dataclass(frozen=True)
class BlockConfig:
    channels: int
    esa_reduction: int = 4
    negative_slope: float = 0.05

    def __post_init__(self):
        if self.channels < 1:
            raise ConfigurationError("channels must be positive")
        if self.esa_reduction < 1 or self.channels % self.esa_reduction:
            raise ConfigurationError(
                f"channels ({self.channels}) must be divisible by "
                f"esa_reduction ({self.esa_reduction})"
            )
        if not 0.0 < self.negative_slope < 1.0:
            raise ConfigurationError("negative_slope must lie in (0, 1)")


class ESA(nn.Module):
    """Sigmoid-gated spatial attention (the RFANet/RFDN design).

    A 1x1 conv squeezes to channels/reduction, a strided conv + max-pool
    branch widens the receptive field, three 3x3 convs refine it, bilinear
    upsampling restores the resolution, and a 1x1 conv + sigmoid produces
    the mask multiplied onto the input.
    """

    def __init__(self, channels, reduction=4):
        super().__init__()
        if channels % reduction:
            raise ConfigurationError("channels must be divisible by reduction")
        f = channels // reduction
        self.conv1 = nn.Conv2d(channels, f, 1)
        self.conv_f = nn.Conv2d(f, f, 1)
        self.conv2 = nn.Conv2d(f, f, 3, stride=2, padding=0)
        self.conv_max = nn.Conv2d(f, f, 3, padding=1)
        self.conv3 = nn.Conv2d(f, f, 3, padding=1)
        self.conv3_ = nn.Conv2d(f, f, 3, padding=1)
        self.conv4 = nn.Conv2d(f, channels, 1)

    def forward(self, x):
        if x.shape[1] != self.conv1.in_channels:
            raise ConfigurationError(
                f"ESA built for {self.conv1.in_channels} channels, "
                f"got {x.shape[1]}"
            )
        h, w = x.shape[-2:]
        c1_ = self.conv1(x)
        # Stock branch is stride-2 conv (no pad) + 7/3 max-pool; clamp both
        # so maps smaller than the window stay valid.
        pad = 0 if min(h, w) >= 3 else 1
        c1 = F.conv2d(c1_, self.conv2.weight, self.conv2.bias, stride=2, padding=pad)
        k = min(7, c1.shape[-2], c1.shape[-1])
        v_max = F.max_pool2d(c1, kernel_size=k, stride=min(3, k))
        v_range = F.relu(self.conv_max(v_max))
        c3 = self.conv3_(F.relu(self.conv3(v_range)))
        c3 = F.interpolate(c3, size=(h, w), mode="bilinear", align_corners=False)
        cf = self.conv_f(c1_)
        mask = torch.sigmoid(self.conv4(c3 + cf))
        return x * mask


class BasicBlock(nn.Module):
    """Level-0 block: BN + 3x3 conv + leaky activation, rescaled by the
    deviation modulator, then skip + ESA."""

    def __init__(self, cfg: BlockConfig):
        super().__init__()
        self.level = 0
        self.path = ""
        self.norm = nn.BatchNorm2d(cfg.channels)
        self.conv = nn.Conv2d(cfg.channels, cfg.channels, 3, padding=1)
        self.act = nn.LeakyReLU(cfg.negative_slope)
        self.phi = nn.Conv2d(1, 1, 1)
        self.esa = ESA(cfg.channels, cfg.esa_reduction)
        # Identity modulation at start: exp(phi(log s)) == s-neutral gain of
        # exp(log s - log s) only if phi is the identity on log s.
        nn.init.ones_(self.phi.weight)
        nn.init.zeros_(self.phi.bias)

    def deviation_gain(self, x):
        """exp(phi(log s)) with s the per-sample std over (C, H, W)."""
        s = torch.std(x, dim=(1, 2, 3), keepdim=True)
        s = s.clamp_min(STD_EPS)
        return torch.exp(self.phi(torch.log(s)))

    def forward(self, x):
        out = self.act(self.conv(self.norm(x)))  # BN + Conv + Act
        out = out * self.deviation_gain(x)       # AdaDM
        return self.esa(out + x)                 # Skip + ESA


class RecursiveBlock(nn.Module):
    """Level-t block composing two level-(t-1) subtrees.

    The second subtree consumes the first one's output; both outputs are
    concatenated, fused by a 1x1 conv, added to the block input and gated
    by ESA. Non-local attention is appended on the levels listed in
    ``nlsa_levels``.
    """

    def __init__(self, level, cfg: BlockConfig, nlsa_levels=frozenset(),
                 nlsa_backend="dense"):
        super().__init__()
        if level < 1:
            raise ConfigurationError("recursive blocks start at level 1")
        self.level = level
        self.path = ""
        if level == 1:
            self.block1 = BasicBlock(cfg)
            self.block2 = BasicBlock(cfg)
        else:
            self.block1 = RecursiveBlock(level - 1, cfg, nlsa_levels, nlsa_backend)
            self.block2 = RecursiveBlock(level - 1, cfg, nlsa_levels, nlsa_backend)
        self.fuse = nn.Conv2d(2 * cfg.channels, cfg.channels, 1)
        self.act = nn.LeakyReLU(cfg.negative_slope)
        self.esa = ESA(cfg.channels, cfg.esa_reduction)
        self.nlsa = (
            NonLocalAttention(cfg.channels, backend=nlsa_backend)
            if level in nlsa_levels else None
        )

    @staticmethod
    def _run(block, x):
        if isinstance(block, RecursiveBlock):
            return block(x)
        return block(x), {}

    def forward(self, x):
        out1, taps1 = self._run(self.block1, x)
        out2, taps2 = self._run(self.block2, out1)
        out = self.fuse(torch.cat([out1, out2], dim=1)) + x
        out = self.esa(self.act(out))
        if self.nlsa is not None:
            out = self.nlsa(out)
        taps = dict(taps1)
        taps.update(taps2)
        taps[self.block1.path] = out1
        taps[self.block2.path] = out2
        return out, taps


class NonLocalAttention(nn.Module):
    """Residual attention over spatial positions: x + proj(attn(x)).

    The default backend computes dense dot-product attention on the full
    map, average-pooling keys/values down to at most ``max_keys`` positions
    on large inputs. The "lsh" backend buckets positions by the sign
    pattern of random projections and attends within buckets only.
    """

    def __init__(self, channels, backend="dense", max_keys=48 * 48,
                 lsh_hashes=6, lsh_seed=0):
        super().__init__()
        if backend not in ("dense", "lsh"):
            raise ConfigurationError(f"unknown attention backend {backend!r}")
        inner = max(channels // 2, 1)
        self.inner = inner
        self.backend = backend
        self.max_keys = max_keys
        self.to_q = nn.Conv2d(channels, inner, 1)
        self.to_k = nn.Conv2d(channels, inner, 1)
        self.to_v = nn.Conv2d(channels, inner, 1)
        self.proj = nn.Conv2d(inner, channels, 1)
        gen = torch.Generator().manual_seed(lsh_seed)
        self.register_buffer(
            "lsh_planes", torch.randn(inner, lsh_hashes, generator=gen))

    def forward(self, x):
        b, c, h, w = x.shape
        q = self.to_q(x).flatten(2).transpose(1, 2)  # b, n, d
        kf, vf = self.to_k(x), self.to_v(x)
        if self.backend == "lsh":
            y = self._lsh_attend(x, q, kf, vf)
        else:
            if h * w > self.max_keys:
                size = (min(h, 48), min(w, 48))
                kf = F.adaptive_avg_pool2d(kf, size)
                vf = F.adaptive_avg_pool2d(vf, size)
            k = kf.flatten(2)                        # b, d, m
            v = vf.flatten(2).transpose(1, 2)        # b, m, d
            attn = torch.softmax(q @ k / math.sqrt(self.inner), dim=-1)
            y = attn @ v
        y = y.transpose(1, 2).reshape(b, self.inner, h, w)
        return x + self.proj(y)

    def _lsh_attend(self, x, q, kf, vf):
        # Positions hashed once from their normalized key features, so a
        # query always lands in the bucket holding its own key.
        b, n = q.shape[0], q.shape[1]
        k = kf.flatten(2).transpose(1, 2)            # b, n, d
        v = vf.flatten(2).transpose(1, 2)
        codes = (F.normalize(k, dim=-1) @ self.lsh_planes > 0)
        codes = (codes.long() * (2 ** torch.arange(
            codes.shape[-1], device=x.device))).sum(-1)
        y = torch.zeros_like(q)
        scale = math.sqrt(self.inner)
        for i in range(b):
            for code in codes[i].unique():
                idx = (codes[i] == code).nonzero(as_tuple=True)[0]
                qi, ki, vi = q[i, idx], k[i, idx], v[i, idx]
                attn = torch.softmax(qi @ ki.T / scale, dim=-1)
                y[i, idx] = attn @ vi
        return y


class ReconstructionHead(nn.Module):
    """3x3 conv to 3*r^2 channels followed by the sub-pixel rearrangement."""

    SUPPORTED_SCALES = (2, 3, 4, 8)

    def __init__(self, channels, scale, out_channels=3):
        super().__init__()
        if scale not in self.SUPPORTED_SCALES:
            raise ConfigurationError(
                f"scale must be one of {self.SUPPORTED_SCALES}, got {scale}")
        self.scale = scale
        self.conv = nn.Conv2d(channels, out_channels * scale * scale, 3, padding=1)

    def forward(self, x):
        return F.pixel_shuffle(self.conv(x), self.scale)


def build_rdrb(depth, cfg: BlockConfig, nlsa_levels=frozenset(),
               nlsa_backend="dense"):
    """Construct the residual tree of the given recursion depth.

    Every node gets a stable dot-free path: the root is "", its subtrees
    "1" and "2", their subtrees "1_1", "1_2", ... Non-root paths double as
    the auxiliary tap ids.
    """
    if depth < 0:
        raise ConfigurationError("depth must be >= 0")
    nlsa_levels = frozenset(nlsa_levels)
    bad = [t for t in nlsa_levels if not 1 <= t <= depth]
    if bad:
        raise ConfigurationError(
            f"nlsa_levels {sorted(bad)} outside the fusion levels 1..{depth}")
    if depth == 0:
        root = BasicBlock(cfg)
    else:
        root = RecursiveBlock(depth, cfg, nlsa_levels, nlsa_backend)
    _assign_paths(root, "")
    return root


def _assign_paths(block, path):
    block.path = path
    if isinstance(block, RecursiveBlock):
        _assign_paths(block.block1, f"{path}_1" if path else "1")
        _assign_paths(block.block2, f"{path}_2" if path else "2")


def rdrb_forward(block, x):
    """Run any tree node, returning (output, taps); leaves tap nothing."""
    if isinstance(block, RecursiveBlock):
        return block(x)
    return block(x), {}


def iter_nodes(block):
    """Yield every node of the tree, root first."""
    yield block
    if isinstance(block, RecursiveBlock):
        yield from iter_nodes(block.block1)
        yield from iter_nodes(block.block2)


def tap_levels(block):
    """Map tap id -> level of the node whose output feeds that tap."""
    return {n.path: n.level for n in iter_nodes(block) if n.path}
