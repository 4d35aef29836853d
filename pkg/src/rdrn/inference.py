"""Full-image super-resolution, optional tiling, geometric self-ensemble.

Inputs and outputs are float (H, W, 3) arrays in [0, 1]; quantization is
left to the PNG writer. The self-ensemble averages the model output over
all eight dihedral transforms of the input, undoing each transform on the
corresponding prediction before averaging in float.
"""

import numpy as np
import torch

from .augment import N_TRANSFORMS, dihedral_inverse, dihedral_transform
from .errors import ConfigurationError, InputError

DEFAULT_TILE_OVERLAP = 16


def _to_tensor(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[-1] != 3:
        raise InputError(f"expected an (H, W, 3) image, got {img.shape}")
    return torch.from_numpy(img.transpose(2, 0, 1)[None]).float()


def _forward(model, img):
    was_training = getattr(model, "training", False)
    if hasattr(model, "eval"):
        model.eval()
    with torch.no_grad():
        out = model(_to_tensor(img))
    if was_training:
        model.train()
    sr = out.final_sr[0].numpy().transpose(1, 2, 0)
    return np.clip(sr.astype(np.float64), 0.0, 1.0)


def superresolve(model, lr_image, tile=None, tile_overlap=DEFAULT_TILE_OVERLAP):
    """Super-resolve one image, optionally tile by tile for large inputs."""
    lr_image = np.asarray(lr_image, dtype=np.float64)
    if tile is None:
        return _forward(model, lr_image)
    if tile <= tile_overlap:
        raise ConfigurationError(
            f"tile ({tile}) must exceed the overlap ({tile_overlap})")
    h, w = lr_image.shape[:2]
    if tile >= max(h, w):
        return _forward(model, lr_image)
    stride = tile - tile_overlap
    sr, scale = None, None
    for y0 in _tile_origins(h, tile, stride):
        for x0 in _tile_origins(w, tile, stride):
            y1, x1 = min(y0 + tile, h), min(x0 + tile, w)
            patch = _forward(model, lr_image[y0:y1, x0:x1])
            if sr is None:
                scale = patch.shape[0] // (y1 - y0)
                sr = np.zeros((h * scale, w * scale, 3), dtype=np.float64)
            # Keep the center, dropping half the overlap on interior edges.
            ky0 = y0 + (tile_overlap // 2 if y0 > 0 else 0)
            kx0 = x0 + (tile_overlap // 2 if x0 > 0 else 0)
            ky1 = y1 - (tile_overlap // 2 if y1 < h else 0)
            kx1 = x1 - (tile_overlap // 2 if x1 < w else 0)
            src = patch[(ky0 - y0) * scale:(ky1 - y0) * scale,
                        (kx0 - x0) * scale:(kx1 - x0) * scale]
            sr[ky0 * scale:ky1 * scale, kx0 * scale:kx1 * scale] = src
    return sr


def _tile_origins(length, tile, stride):
    if length <= tile:
        return [0]
    origins = list(range(0, length - tile, stride))
    origins.append(length - tile)  # flush final tile against the border
    return sorted(set(origins))


def _pairwise_mean(arrays):
    # Tree-shaped summation: averaging 8 identical branches stays bitwise
    # equal to a single branch (every partial sum is an exact power-of-two
    # multiple).
    while len(arrays) > 1:
        arrays = [arrays[i] + arrays[i + 1] for i in range(0, len(arrays), 2)]
    return arrays[0] / N_TRANSFORMS


def self_ensemble(model, lr_image, tile=None, tile_overlap=DEFAULT_TILE_OVERLAP):
    """Average super-resolved outputs over the eight dihedral transforms."""
    outputs = []
    for k in range(N_TRANSFORMS):
        variant = dihedral_transform(np.asarray(lr_image, dtype=np.float64), k)
        sr = superresolve(model, variant, tile=tile, tile_overlap=tile_overlap)
        outputs.append(dihedral_inverse(sr, k))
    return _pairwise_mean(outputs)
