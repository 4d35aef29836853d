"""Dataset handling: HR image folders, cached LR generation, patch sampling.

The directory convention is ``<root>/HR/*.png`` for ground truth; LR
counterparts are generated per degradation spec and cached under
``<root>/LR_<kind>_x<scale>/``, keyed by a hash of the spec so a changed
spec triggers regeneration.
"""

import hashlib
import json
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from .degradation import DegradationSpec, crop_to_multiple, degrade, image_seed
from .errors import InputError
from .images import read_image, write_image

IMAGE_SUFFIXES = (".png", ".PNG")


def spec_hash(spec: DegradationSpec) -> str:
    payload = json.dumps(asdict(spec), sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def list_hr_images(root):
    hr_dir = Path(root) / "HR"
    if not hr_dir.is_dir():
        raise InputError(f"no HR directory under {root}")
    paths = sorted(p for p in hr_dir.iterdir() if p.suffix in IMAGE_SUFFIXES)
    if not paths:
        raise InputError(f"no PNG images in {hr_dir}")
    return paths


def lr_cache_dir(root, spec: DegradationSpec) -> Path:
    return Path(root) / f"LR_{spec.kind}_x{spec.scale}"


def generate_lr(root, spec: DegradationSpec, force=False):
    """Degrade every HR image into the cache directory; reuse a cache whose
    recorded spec hash matches. Returns the list of LR paths."""
    hr_paths = list_hr_images(root)
    out_dir = lr_cache_dir(root, spec)
    marker = out_dir / "degradation.json"
    want = spec_hash(spec)
    if not force and marker.is_file():
        recorded = json.loads(marker.read_text())
        if recorded.get("spec_hash") == want and all(
                (out_dir / p.name).is_file() for p in hr_paths):
            return [out_dir / p.name for p in hr_paths]
    out_dir.mkdir(parents=True, exist_ok=True)
    lr_paths = []
    for i, p in enumerate(hr_paths):
        hr = read_image(p)
        per_image = replace(spec, rng_seed=image_seed(spec.rng_seed, i))
        lr = degrade(hr, per_image)
        out = out_dir / p.name
        write_image(out, lr)
        lr_paths.append(out)
    marker.write_text(json.dumps(
        {"spec_hash": want, "spec": asdict(spec)}, indent=2))
    return lr_paths


class PairedDataset:
    """In-memory (HR, LR) pairs; HR pre-cropped to a multiple of scale."""

    def __init__(self, hr_images, lr_images, scale):
        if len(hr_images) != len(lr_images):
            raise InputError("HR/LR counts differ")
        self.scale = scale
        self.pairs = []
        for hr, lr in zip(hr_images, lr_images):
            hr = crop_to_multiple(np.asarray(hr, float), scale)
            lr = np.asarray(lr, float)
            if hr.shape[0] != lr.shape[0] * scale or hr.shape[1] != lr.shape[1] * scale:
                raise InputError(
                    f"misaligned pair: HR {hr.shape[:2]} vs LR {lr.shape[:2]} at x{scale}")
            self.pairs.append((hr, lr))

    def __len__(self):
        return len(self.pairs)

    @classmethod
    def from_directory(cls, root, spec: DegradationSpec, use_cache=True):
        hr_paths = list_hr_images(root)
        if use_cache:
            lr_paths = generate_lr(root, spec)
            hrs = [read_image(p) for p in hr_paths]
            lrs = [read_image(p) for p in lr_paths]
        else:
            hrs, lrs = [], []
            for i, p in enumerate(hr_paths):
                hr = read_image(p)
                per_image = replace(spec, rng_seed=image_seed(spec.rng_seed, i))
                hrs.append(hr)
                lrs.append(degrade(hr, per_image))
        return cls(hrs, lrs, spec.scale)


def sample_patch(hr_image, lr_image, lr_patch_size, rng):
    """Aligned random (HR, LR) patch pair; HR patch is the scaled region."""
    lh, lw = lr_image.shape[:2]
    scale = hr_image.shape[0] // lh
    if hr_image.shape[0] != lh * scale or hr_image.shape[1] != lw * scale:
        raise InputError("HR dims are not an integer multiple of LR dims")
    if lr_patch_size > lh or lr_patch_size > lw:
        raise InputError(
            f"patch {lr_patch_size} larger than LR image {(lh, lw)}")
    y = int(rng.integers(lh - lr_patch_size + 1))
    x = int(rng.integers(lw - lr_patch_size + 1))
    lr_patch = lr_image[y:y + lr_patch_size, x:x + lr_patch_size]
    hy, hx, hp = y * scale, x * scale, lr_patch_size * scale
    hr_patch = hr_image[hy:hy + hp, hx:hx + hp]
    return hr_patch, lr_patch
