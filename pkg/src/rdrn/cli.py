"""Command-line interface.

Every subcommand is a thin client of the HTTP service: by default the
requests run against an in-process instance of the app, so no server is
needed; ``--server URL`` points the same commands at a running one.
Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

import argparse
import asyncio
import json
import sys

import httpx

from . import __version__
from .config import load_flat_config


class UsageError(Exception):
    pass


class ServiceError(Exception):
    pass


class ServiceClient:
    def __init__(self, server=None):
        self.server = server

    def post(self, path, payload):
        if self.server:
            resp = httpx.post(self.server.rstrip("/") + path, json=payload,
                              timeout=None)
        else:
            resp = self._local(path, payload)
        if resp.status_code >= 400:
            try:
                detail = resp.json().get("detail", resp.text)
            except ValueError:
                detail = resp.text
            raise ServiceError(f"{path} failed ({resp.status_code}): {detail}")
        return resp.json()

    def _local(self, path, payload):
        from .service.app import app

        async def go():
            transport = httpx.ASGITransport(app=app)
            async with httpx.AsyncClient(transport=transport,
                                         base_url="http://rdrn.local",
                                         timeout=None) as client:
                return await client.post(path, json=payload)

        return asyncio.run(go())


def _file_values(args):
    return load_flat_config(args.config) if getattr(args, "config", None) else {}


def _merge(file_values, mapping, *keys):
    """File value unless the flag was given; returns only present keys."""
    out = {}
    for key, flag in keys:
        val = getattr(mapping, flag, None)
        if val is None and key in file_values:
            val = file_values[key]
        if val is not None:
            out[key] = val
    return out


def _parse_levels(text):
    if text is None:
        return None
    text = str(text).strip()
    if not text or text.lower() in ("none", "empty"):
        return []
    return [int(t) for t in text.replace(";", ",").split(",") if t.strip()]


def _parse_sweep(text):
    if text is None:
        return None
    if ".." in text:
        lo, hi = text.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(t) for t in text.split(",")]


def _echo_config(payload):
    print("effective config: " + json.dumps(payload, sort_keys=True))


MODEL_KEYS = [("depth", "depth"), ("channels", "channels"), ("scale", "scale"),
              ("nlsa_levels", "nlsa_levels"),
              ("aux_zero_levels", "aux_zero_levels")]
TRAIN_KEYS = [("stage", "stage"), ("learning_rate", "learning_rate"),
              ("decay_factor", "decay_factor"), ("batch_size", "batch_size"),
              ("lr_patch_size", "lr_patch_size"), ("total_steps", "total_steps"),
              ("seed", "seed"), ("checkpoint_every", "checkpoint_every")]
DEGRADE_KEYS = [("kind", "kind"), ("scale", "scale"),
                ("blur_kernel_size", "blur_kernel_size"),
                ("blur_sigma", "blur_sigma"), ("noise_sigma", "noise_sigma"),
                ("rng_seed", "rng_seed")]


def _require(payload, key, flag):
    if payload.get(key) in (None, ""):
        raise UsageError(f"missing {flag} (flag or config key '{key}')")


def cmd_train(args, stage):
    fv = _file_values(args)
    payload = _merge(fv, args, *MODEL_KEYS, *TRAIN_KEYS, *DEGRADE_KEYS,
                     ("data_root", "data_root"), ("out_dir", "out_dir"),
                     ("init_checkpoint", "init_checkpoint"))
    payload["nlsa_levels"] = _parse_levels(payload.get("nlsa_levels"))
    payload["aux_zero_levels"] = _parse_levels(payload.get("aux_zero_levels"))
    payload = {k: v for k, v in payload.items() if v is not None}
    payload.setdefault("stage", stage)
    if args.config:
        payload["config_file"] = args.config
    _require(payload, "data_root", "--data-root")
    _require(payload, "out_dir", "--out-dir")
    endpoint = "/finetune" if stage == "l2_finetune" else "/train"
    if stage == "l2_finetune":
        _require(payload, "init_checkpoint", "--init")
    result = ServiceClient(args.server).post(endpoint, payload)
    _echo_config({
        "model": result["effective_model_config"],
        "training": result["effective_train_config"],
        "degradation": result["effective_degradation"],
    })
    print(f"steps: {result['steps']}")
    print(f"final loss: {result['final_loss']:.6f}")
    print(f"final base loss (smoothed): {result['final_base_loss']:.6f}")
    print(f"checkpoint: {result['checkpoint_dir']}")
    print(f"log: {result['log_path']}")
    return 0


def cmd_eval(args):
    fv = _file_values(args)
    payload = _merge(fv, args, *DEGRADE_KEYS,
                     ("dataset_root", "dataset_root"),
                     ("checkpoint", "checkpoint"), ("method", "method"),
                     ("shave", "shave"), ("ensemble", "ensemble"),
                     ("tile", "tile"), ("tile_overlap", "tile_overlap"),
                     ("csv_path", "csv"))
    _require(payload, "dataset_root", "--dataset-root")
    if payload.get("method", "checkpoint") == "checkpoint":
        _require(payload, "checkpoint", "--checkpoint")
    result = ServiceClient(args.server).post("/eval", payload)
    _echo_config(payload)
    from .evaluate import format_report_table

    print(format_report_table(result["rows"], result["summary"]))
    for s in result["skipped"]:
        print(f"skipped {s['image']}: {s['error']}", file=sys.stderr)
    if result.get("csv_path"):
        print(f"csv: {result['csv_path']}")
    if result["skipped"] and not result["rows"]:
        return 1
    return 0


def cmd_sr(args):
    fv = _file_values(args)
    payload = _merge(fv, args, ("input", "input"), ("output", "output"),
                     ("checkpoint", "checkpoint"), ("ensemble", "ensemble"),
                     ("tile", "tile"), ("tile_overlap", "tile_overlap"))
    for key, flag in (("input", "--input"), ("output", "--output"),
                      ("checkpoint", "--checkpoint")):
        _require(payload, key, flag)
    result = ServiceClient(args.server).post("/sr", payload)
    _echo_config(payload)
    print(f"wrote {result['output']} ({result['height']}x{result['width']}, "
          f"x{result['scale']}{', ensemble' if result['ensemble'] else ''})")
    return 0


def cmd_analyze(args):
    fv = _file_values(args)
    payload = _merge(fv, args, *MODEL_KEYS,
                     ("input_h", "input_h"), ("input_w", "input_w"),
                     ("include_aux", "include_aux"), ("raw_flops", "raw_flops"))
    payload.pop("aux_zero_levels", None)
    payload["nlsa_levels"] = _parse_levels(payload.get("nlsa_levels"))
    payload = {k: v for k, v in payload.items() if v is not None}
    payload["sweep"] = _parse_sweep(args.sweep)
    result = ServiceClient(args.server).post("/analyze", payload)
    _echo_config({k: v for k, v in payload.items() if v is not None})
    if args.csv:
        _write_analyze_csv(args.csv, result)
        print(f"csv: {args.csv}")
    unit = "flops" if payload.get("raw_flops") else "macs"
    print(f"params: {result['params']:,}")
    print(f"{unit} ({result['input_h']}x{result['input_w']} input): "
          f"{result['flops']:,}")
    print(f"aux outputs: {result['aux_outputs']}")
    _print_level_breakdown(result, payload.get("depth", 5))
    if result.get("sweep"):
        print("depth  params        flops         param_ratio  flop_ratio")
        for row in result["sweep"]:
            pr = f"{row['param_ratio']:.4f}" if row["param_ratio"] else "-"
            fr = f"{row['flop_ratio']:.4f}" if row["flop_ratio"] else "-"
            print(f"{row['depth']:<6} {row['params']:<13,} {row['flops']:<13,} "
                  f"{pr:<12} {fr}")
    return 0


def _write_analyze_csv(path, result):
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["entry", "params", "flops"])
        writer.writerow(["total", result["params"], result["flops"]])
        writer.writerow(["shallow", result["shallow"]["params"],
                         result["shallow"]["flops"]])
        writer.writerow(["head", result["head"]["params"],
                         result["head"]["flops"]])
        for node, cost in sorted(result["per_node"].items()):
            writer.writerow([f"node:{node}", cost["params"], cost["flops"]])


def _print_level_breakdown(result, depth):
    depth = int(depth)
    by_level = {}
    for path, cost in result["per_node"].items():
        level = depth if path == "root" else depth - len(path.split("_"))
        agg = by_level.setdefault(level, {"nodes": 0, "params": 0, "flops": 0})
        agg["nodes"] += 1
        agg["params"] += cost["params"]
        agg["flops"] += cost["flops"]
    print("level  nodes  params        flops")
    for level in sorted(by_level, reverse=True):
        a = by_level[level]
        print(f"{level:<6} {a['nodes']:<6} {a['params']:<13,} {a['flops']:,}")
    print(f"shallow: {result['shallow']['params']:,} params; "
          f"head: {result['head']['params']:,} params")


def cmd_degrade(args):
    fv = _file_values(args)
    payload = _merge(fv, args, *DEGRADE_KEYS,
                     ("dataset_root", "dataset_root"), ("input_path", "input"),
                     ("output_path", "output"), ("force", "force"))
    if not payload.get("dataset_root") and not payload.get("input_path"):
        raise UsageError("degrade needs --dataset-root or --input/--output")
    result = ServiceClient(args.server).post("/degrade", payload)
    _echo_config(payload)
    print(f"wrote {len(result['outputs'])} image(s)")
    if result.get("cache_dir"):
        print(f"cache: {result['cache_dir']}")
    return 0


def cmd_serve(args):
    import uvicorn

    from .service.app import app

    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def _add_common(p):
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--server", help="URL of a running service (default: in-process)")


def _add_model_flags(p):
    p.add_argument("--depth", type=int)
    p.add_argument("--channels", type=int)
    p.add_argument("--scale", type=int, choices=(2, 3, 4, 8))
    p.add_argument("--nlsa-levels", dest="nlsa_levels",
                   help="comma-separated fusion levels, e.g. 3,4,5")
    p.add_argument("--aux-zero-levels", dest="aux_zero_levels",
                   help="tap source levels whose loss weight is zero")


def _add_degradation_flags(p):
    p.add_argument("--degradation", dest="kind", choices=("BI", "BD", "DN"))
    p.add_argument("--blur-kernel-size", dest="blur_kernel_size", type=int)
    p.add_argument("--blur-sigma", dest="blur_sigma", type=float)
    p.add_argument("--noise-sigma", dest="noise_sigma", type=float)
    p.add_argument("--rng-seed", dest="rng_seed", type=int)


def _add_train_flags(p):
    p.add_argument("--data-root", dest="data_root")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--decay-factor", dest="decay_factor", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr-patch-size", dest="lr_patch_size", type=int)
    p.add_argument("--total-steps", dest="total_steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="rdrn",
        description="Recursive residual super-resolution: train, eval, "
                    "super-resolve, analyze, degrade, serve.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="stage-1 training (l1 objective)")
    _add_common(p)
    _add_model_flags(p)
    _add_train_flags(p)
    _add_degradation_flags(p)
    p.set_defaults(func=lambda a: cmd_train(a, "l1"), stage=None,
                   init_checkpoint=None)

    p = sub.add_parser("finetune", help="stage-2 fine-tuning (l2 objective)")
    _add_common(p)
    _add_model_flags(p)
    _add_train_flags(p)
    _add_degradation_flags(p)
    p.add_argument("--init", dest="init_checkpoint",
                   help="stage-1 checkpoint directory to start from")
    p.set_defaults(func=lambda a: cmd_train(a, "l2_finetune"), stage=None)

    p = sub.add_parser("eval", help="evaluate a checkpoint or baseline on a dataset")
    _add_common(p)
    _add_degradation_flags(p)
    p.add_argument("--dataset-root", dest="dataset_root")
    p.add_argument("--checkpoint")
    p.add_argument("--method", choices=("checkpoint", "bicubic", "identity"))
    p.add_argument("--scale", type=int, choices=(2, 3, 4, 8))
    p.add_argument("--shave", type=int)
    p.add_argument("--ensemble", action="store_const", const=True)
    p.add_argument("--tile", type=int)
    p.add_argument("--tile-overlap", dest="tile_overlap", type=int)
    p.add_argument("--csv", help="write the per-image report to this CSV file")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sr", help="super-resolve one image")
    _add_common(p)
    p.add_argument("--input")
    p.add_argument("--output")
    p.add_argument("--checkpoint")
    p.add_argument("--ensemble", action="store_const", const=True)
    p.add_argument("--tile", type=int)
    p.add_argument("--tile-overlap", dest="tile_overlap", type=int)
    p.set_defaults(func=cmd_sr)

    p = sub.add_parser("analyze", help="parameter and FLOP report")
    _add_common(p)
    _add_model_flags(p)
    p.add_argument("--input-h", dest="input_h", type=int)
    p.add_argument("--input-w", dest="input_w", type=int)
    p.add_argument("--include-aux", dest="include_aux", action="store_const",
                   const=True)
    p.add_argument("--raw-flops", dest="raw_flops", action="store_const",
                   const=True, help="report 2*MACs instead of MACs")
    p.add_argument("--sweep", help="depth range, e.g. 3..5")
    p.add_argument("--csv", help="write the per-node cost report to this file")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("degrade", help="generate LR images (BI/BD/DN)")
    _add_common(p)
    _add_degradation_flags(p)
    p.add_argument("--scale", type=int)
    p.add_argument("--dataset-root", dest="dataset_root",
                   help="dataset root containing HR/; fills the LR cache")
    p.add_argument("--input", help="single HR image")
    p.add_argument("--output", help="output path for --input mode")
    p.add_argument("--force", action="store_const", const=True,
                   help="regenerate even if the cache matches")
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except ServiceError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
