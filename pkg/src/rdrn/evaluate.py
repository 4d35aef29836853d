"""Dataset evaluation: degrade, super-resolve, score.

Produces one record per image (PSNR/SSIM on both the luma channel and
RGB) plus a mean summary row. Unreadable images are recorded as skipped
rather than failing the run.
"""

import csv
import math
from dataclasses import replace
from pathlib import Path

import numpy as np

from .data import generate_lr, list_hr_images
from .degradation import (
    DegradationSpec,
    bicubic_resize,
    crop_to_multiple,
    degrade,
    image_seed,
)
from .errors import ConfigurationError
from .images import read_image
from .inference import self_ensemble, superresolve
from .metrics import psnr, ssim

METHODS = ("checkpoint", "bicubic", "identity")


def _predict(method, model, lr, hr, scale, ensemble, tile, tile_overlap):
    if method == "identity":
        return hr.copy()
    if method == "bicubic":
        return np.clip(bicubic_resize(lr, scale), 0.0, 1.0)
    if ensemble:
        return self_ensemble(model, lr, tile=tile, tile_overlap=tile_overlap)
    return superresolve(model, lr, tile=tile, tile_overlap=tile_overlap)


def evaluate_dataset(dataset_root, spec: DegradationSpec, model=None,
                     method="checkpoint", shave=None, ensemble=False,
                     tile=None, tile_overlap=16, csv_path=None):
    """Returns (rows, summary, skipped); rows carry per-image metrics."""
    if method not in METHODS:
        raise ConfigurationError(f"method must be one of {METHODS}")
    if method == "checkpoint" and model is None:
        raise ConfigurationError("method 'checkpoint' needs a model")
    shave = spec.scale if shave is None else shave
    hr_paths = list_hr_images(dataset_root)
    try:
        lr_paths = generate_lr(dataset_root, spec)
    except Exception:
        # an unreadable image breaks cache generation; degrade readable
        # images in memory instead and record the bad ones as skipped
        lr_paths = [None] * len(hr_paths)
    rows, skipped = [], []
    for index, (hr_path, lr_path) in enumerate(zip(hr_paths, lr_paths)):
        try:
            hr = crop_to_multiple(read_image(hr_path), spec.scale)
            if lr_path is None:
                per_image = replace(spec, rng_seed=image_seed(spec.rng_seed, index))
                lr = degrade(hr, per_image)
            else:
                lr = read_image(lr_path)
        except Exception as exc:  # unreadable file: record and move on
            skipped.append({"image": hr_path.name, "error": str(exc)})
            continue
        sr = _predict(method, model, lr, hr, spec.scale, ensemble, tile, tile_overlap)
        rows.append({
            "image": hr_path.name,
            "psnr_y": psnr(sr, hr, shave, "Y"),
            "ssim_y": ssim(sr, hr, shave, "Y"),
            "psnr_rgb": psnr(sr, hr, shave, "RGB"),
            "ssim_rgb": ssim(sr, hr, shave, "RGB"),
        })
    summary = _summarize(rows)
    if csv_path:
        write_report_csv(csv_path, rows, summary)
    return rows, summary, skipped


def _summarize(rows):
    if not rows:
        return {"image": "mean", "psnr_y": math.nan, "ssim_y": math.nan,
                "psnr_rgb": math.nan, "ssim_rgb": math.nan}
    return {
        "image": "mean",
        **{key: float(np.mean([r[key] for r in rows]))
           for key in ("psnr_y", "ssim_y", "psnr_rgb", "ssim_rgb")},
    }


def format_metric(value):
    if isinstance(value, float) and math.isinf(value):
        return "inf"
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def write_report_csv(path, rows, summary):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fields = ["image", "psnr_y", "ssim_y", "psnr_rgb", "ssim_rgb"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields)
        for row in rows + [summary]:
            writer.writerow([format_metric(row[k]) for k in fields])
    return path


def format_report_table(rows, summary):
    fields = ["image", "psnr_y", "ssim_y", "psnr_rgb", "ssim_rgb"]
    all_rows = rows + [summary]
    cells = [[format_metric(r[k]) for k in fields] for r in all_rows]
    widths = [max(len(f), *(len(c[i]) for c in cells)) for i, f in enumerate(fields)]
    lines = ["  ".join(f.ljust(w) for f, w in zip(fields, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for c in cells:
        lines.append("  ".join(v.ljust(w) for v, w in zip(c, widths)))
    return "\n".join(lines)
