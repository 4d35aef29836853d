"""PNG reading and writing. Internal representation is float64 in [0, 1];
quantization happens only when a file is written."""

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import InputError


def read_image(path):
    """Load a PNG (8- or 16-bit) as an (H, W, 3) float array in [0, 1]."""
    with Image.open(path) as im:
        if im.mode in ("I", "I;16", "I;16B"):
            arr = np.asarray(im, dtype=np.float64) / 65535.0
        else:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    if arr.ndim == 2:
        arr = np.repeat(arr[..., None], 3, axis=-1)
    return arr


def write_image(path, img, bit_depth=8):
    """Quantize to the requested depth and write a PNG."""
    img = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if bit_depth == 8:
        data = np.round(img * 255.0).astype(np.uint8)
        Image.fromarray(data).save(path)
    elif bit_depth == 16:
        data = np.round(img * 65535.0).astype(np.uint16)
        if data.ndim == 3:
            raise InputError("16-bit PNG output supports single-channel only")
        Image.fromarray(data).save(path)
    else:
        raise InputError("bit_depth must be 8 or 16")
