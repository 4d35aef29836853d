"""Structural parameter and FLOP accounting for any model configuration.

Parameter counts are exact (they must match the constructed model's
trainable total). FLOPs are multiply-add counts under the usual SR
convention: convolutions as k^2*cin*cout*Hout*Wout without bias,
attention as the realized matmul shapes, and the sub-pixel rearrangement,
normalizations, activations, pooling and interpolation as free. A
doubling toggle converts MACs to raw FLOPs.
"""

from dataclasses import dataclass, field, replace

from .errors import ConfigurationError
from .model import RDRNConfig

NLSA_MAX_KEYS = 48 * 48


@dataclass
class LayerCost:
    params: int = 0
    flops: int = 0
    tensors: int = 0

    def __iadd__(self, other):
        self.params += other.params
        self.flops += other.flops
        self.tensors += other.tensors
        return self


@dataclass
class CostReport:
    params: int
    flops: int
    per_node: dict
    shallow: LayerCost
    head: LayerCost
    aux_heads: LayerCost
    include_aux: bool
    input_hw: tuple
    state_tensors: int = 0
    breakdown_note: str = field(
        default="flops are multiply-adds; use flops*2 for raw FLOP reporting",
        repr=False)


def _conv(k, cin, cout, h, w):
    return LayerCost(
        params=k * k * cin * cout + cout,
        flops=k * k * cin * cout * h * w,
        tensors=2,
    )


def _esa_cost(c, reduction, h, w):
    f = c // reduction
    cost = LayerCost()
    cost += _conv(1, c, f, h, w)                        # conv1
    pad = 0 if min(h, w) >= 3 else 1
    ch = (h + 2 * pad - 3) // 2 + 1
    cw = (w + 2 * pad - 3) // 2 + 1
    cost += _conv(3, f, f, ch, cw)                      # conv2 (strided)
    k = min(7, ch, cw)
    s = min(3, k)
    ph = (ch - k) // s + 1
    pw = (cw - k) // s + 1
    cost += _conv(3, f, f, ph, pw)                      # conv_max
    cost += _conv(3, f, f, ph, pw)                      # conv3
    cost += _conv(3, f, f, ph, pw)                      # conv3_
    cost += _conv(1, f, f, h, w)                        # conv_f
    cost += _conv(1, f, c, h, w)                        # conv4
    return cost


def _nlsa_cost(c, h, w):
    d = max(c // 2, 1)
    cost = LayerCost()
    for _ in range(3):                                  # to_q, to_k, to_v
        cost += _conv(1, c, d, h, w)
    cost += _conv(1, d, c, h, w)                        # proj
    n = h * w
    m = min(h, 48) * min(w, 48) if n > NLSA_MAX_KEYS else n
    cost.flops += 2 * n * m * d                         # scores + weighted sum
    cost.tensors += 1                                   # hash-plane buffer
    return cost


def _leaf_cost(cfg: RDRNConfig, h, w):
    c = cfg.channels
    cost = LayerCost(params=2 * c, flops=0, tensors=5)  # batch norm
    cost += _conv(3, c, c, h, w)
    cost += LayerCost(params=2, flops=1, tensors=2)     # deviation map phi
    cost += _esa_cost(c, cfg.esa_reduction, h, w)
    return cost


def _fusion_cost(cfg: RDRNConfig, level, h, w):
    c = cfg.channels
    cost = _conv(1, 2 * c, c, h, w)
    cost += _esa_cost(c, cfg.esa_reduction, h, w)
    if level in cfg.nlsa_levels:
        cost += _nlsa_cost(c, h, w)
    return cost


def _walk_tree(cfg, level, path, h, w, per_node):
    if level == 0:
        cost = _leaf_cost(cfg, h, w)
    else:
        cost = _fusion_cost(cfg, level, h, w)
        left = f"{path}_1" if path else "1"
        right = f"{path}_2" if path else "2"
        child = _walk_tree(cfg, level - 1, left, h, w, per_node)
        child += _walk_tree(cfg, level - 1, right, h, w, per_node)
        total = LayerCost()
        total += cost
        total += child
        per_node[path or "root"] = cost
        return total
    per_node[path or "root"] = cost
    return LayerCost(cost.params, cost.flops, cost.tensors)


def cost_report(cfg: RDRNConfig, input_h=64, input_w=64, include_aux=False):
    if input_h < 1 or input_w < 1:
        raise ConfigurationError("input dims must be >= 1")
    c, r = cfg.channels, cfg.scale
    per_node = {}
    tree = _walk_tree(cfg, cfg.depth, "", input_h, input_w, per_node)
    shallow = _conv(3, 3, c, input_h, input_w)
    head = _conv(3, c, 3 * r * r, input_h, input_w)
    n_taps = 2 ** (cfg.depth + 1) - 2
    one_aux = _conv(3, c, 3 * r * r, input_h, input_w)
    aux = LayerCost(one_aux.params * n_taps, one_aux.flops * n_taps,
                    one_aux.tensors * n_taps)

    params = tree.params + shallow.params + head.params
    flops = tree.flops + shallow.flops + head.flops
    tensors = tree.tensors + shallow.tensors + head.tensors
    if include_aux:
        params += aux.params
        flops += aux.flops
        tensors += aux.tensors
    return CostReport(
        params=params,
        flops=flops,
        per_node=per_node,
        shallow=shallow,
        head=head,
        aux_heads=aux,
        include_aux=include_aux,
        input_hw=(input_h, input_w),
        state_tensors=tensors,
    )


def count_params(cfg: RDRNConfig, include_aux=False) -> int:
    return cost_report(cfg, 1, 1, include_aux).params


def estimate_flops(cfg: RDRNConfig, input_h, input_w, include_aux=False) -> int:
    return cost_report(cfg, input_h, input_w, include_aux).flops


def count_state_tensors(cfg: RDRNConfig, include_aux=True) -> int:
    """Number of tensors in a checkpoint of this model (params + buffers)."""
    return cost_report(cfg, 1, 1, include_aux).state_tensors


def depth_sweep(cfg: RDRNConfig, depths, input_h=64, input_w=64):
    """Per-depth costs plus consecutive-depth ratios."""
    rows = []
    prev = None
    for t in sorted(depths):
        c = replace(cfg, depth=t,
                    nlsa_levels=frozenset(l for l in cfg.nlsa_levels if l <= t))
        p = count_params(c)
        f = estimate_flops(c, input_h, input_w)
        row = {"depth": t, "params": p, "flops": f,
               "param_ratio": None, "flop_ratio": None}
        if prev is not None:
            row["param_ratio"] = p / prev["params"]
            row["flop_ratio"] = f / prev["flops"]
        rows.append(row)
        prev = row
    return rows


def channel_search(target_params, depth, scale=4, step=4, max_channels=1024):
    """Diagnostic: the feature width whose parameter count lands closest to
    a target (reported, never asserted)."""
    best = None
    for c in range(step, max_channels + 1, step):
        cfg = RDRNConfig(depth=depth, channels=c, scale=scale)
        p = count_params(cfg)
        err = abs(p - target_params) / target_params
        if best is None or err < best["rel_error"]:
            best = {"channels": c, "params": p, "rel_error": err}
    return best
