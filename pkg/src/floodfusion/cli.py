"""Command-line surface.

Subcommands: synth, ingest, train, cv, eval, infer, gradcheck.  Every
failure path exits nonzero with one machine-readable JSON error line on
stderr; exit 2 flags a malformed config (with key path), 3 a missing file.
"""
from __future__ import annotations

import argparse
import csv
import datetime
import json
import os
import sys

import numpy as np

from . import evalmetrics, synthsim
from .config import ConfigError, RunConfig, load_config
from .datapipe import build_manifest, load_manifest, save_manifest
from .infer import Ensemble, ensemble_infer, records_to_series_input
from .model import load_checkpoint
from .trainer import predict, run_cv, train, write_cv_table


def _fail(code: int, kind: str, detail: str, path: str = "") -> int:
    line = {"error": kind, "detail": detail}
    if path:
        line["path"] = path
    print("ERROR " + json.dumps(line, sort_keys=True), file=sys.stderr)
    return code


def _parse_schedule(text: str):
    """'20:1e-3,5:1e-4,5:1e-5' -> [(20, 1e-3), (5, 1e-4), (5, 1e-5)]"""
    phases = []
    for part in text.split(","):
        epochs, lr = part.split(":")
        phases.append((int(epochs), float(lr)))
    return phases


def _parse_date(text):
    return datetime.date.fromisoformat(text) if text else None


def _load_runconfig(args) -> RunConfig:
    if getattr(args, "config", None):
        return load_config(args.config)
    return RunConfig()


def _manifest_for(data_dir: str):
    return load_manifest(os.path.join(data_dir, "manifest.json"))


def _train_overrides(args):
    return dict(
        leave_out_year=getattr(args, "leave_out", None),
        model_kind=getattr(args, "model", None),
        width=args.width, hidden_size=args.hidden, seed=args.seed,
        batch_size=args.batch_size, optimizer=args.optimizer,
        lr_schedule=_parse_schedule(args.schedule) if args.schedule else None,
        augment=False if args.no_augment else None,
    )


# ---------------------------------------------------------------------------
# subcommands


def _cmd_synth(args) -> int:
    cfg = _load_runconfig(args)
    params = cfg.scene_params(
        seed=args.seed, grid_chips=args.grid_chips,
        cloud_prob=args.cloud_prob, sequence_stride=args.stride,
        years=[int(y) for y in args.years.split(",")] if args.years else None,
    )
    manifest = synthsim.gen_dataset(params, args.out)
    print(f"wrote {len(manifest)} chips to {args.out}")
    return 0


def _cmd_ingest(args) -> int:
    manifest = build_manifest(args.chips, strict=not args.lenient)
    save_manifest(manifest, args.out)
    print(f"manifest: {len(manifest)} complete chips, "
          f"years {manifest.years()}")
    return 0


def _cmd_train(args) -> int:
    cfg = _load_runconfig(args)
    tc = cfg.train_config(**_train_overrides(args))
    result = train(tc, _manifest_for(args.data), args.out)
    final = result.log[-1]
    print(f"checkpoint: {result.checkpoint_path} "
          f"(val_rmse={final['val_rmse']:.4f})")
    return 0


def _cmd_cv(args) -> int:
    cfg = _load_runconfig(args)
    overrides = _train_overrides(args)
    overrides["leave_out_year"] = 0   # run_cv rotates the year itself
    overrides["model_kind"] = None    # kinds are passed to run_cv below
    tc = cfg.train_config(**overrides)
    kinds = ("fusion", "baseline") if args.model == "both" else (args.model,)
    manifest = _manifest_for(args.data)
    rows = run_cv(tc, manifest, args.out, kinds=kinds)
    table = os.path.join(args.out, "cv_summary.csv")
    write_cv_table(rows, table)
    print(f"wrote {table}")
    return 0


def _cmd_eval(args) -> int:
    cfg = _load_runconfig(args)
    model = load_checkpoint(args.checkpoint)
    manifest = _manifest_for(args.data)
    feats = np.empty((len(manifest), 10, 10, 32, 32), dtype=np.float32)
    targets = np.empty((len(manifest), 32, 32), dtype=np.float32)
    from .datapipe import load_manifest_chip
    for i, rec in enumerate(manifest.chips):
        chip = load_manifest_chip(manifest, rec)
        feats[i] = chip.features
        targets[i] = chip.target
    preds = predict(model, feats)

    os.makedirs(args.out, exist_ok=True)
    report = evalmetrics.compute_metrics(preds.ravel(), targets.ravel())
    with open(os.path.join(args.out, "metrics.csv"), "w", newline="") as fh:
        row = evalmetrics.report_to_csv_row(report)
        writer = csv.DictWriter(fh, fieldnames=list(row))
        writer.writeheader()
        writer.writerow(row)

    emap = evalmetrics.error_map(
        preds, targets, [rec.grid_pos for rec in manifest.chips],
        min_visits=cfg.metrics.get("min_visits", 5))
    evalmetrics.write_error_map(emap, os.path.join(args.out, "error_map"))

    by_date = {}
    for rec, pred in zip(manifest.chips, preds):
        by_date.setdefault(rec.date, []).append(float(pred.mean()))
    series = evalmetrics.aggregate_series(by_date)
    evalmetrics.write_series_csv(series,
                                 os.path.join(args.out, "series.csv"))
    print(f"r2={report.r2:.4f} slope={report.slope:.4f} "
          f"spearman={report.spearman:.4f} rmse={report.rmse:.4f}")
    return 0


def _dump_maps(records, out_dir):
    from PIL import Image

    by_date = {}
    for r in records:
        by_date.setdefault(r.date, []).append(r)
    for date, recs in sorted(by_date.items()):
        rows = max(r.grid_pos[0] for r in recs) + 1
        cols = max(r.grid_pos[1] for r in recs) + 1
        mosaic = np.zeros((rows * 32, cols * 32))
        spread = np.zeros_like(mosaic)
        for r in recs:
            sl = (slice(r.grid_pos[0] * 32, (r.grid_pos[0] + 1) * 32),
                  slice(r.grid_pos[1] * 32, (r.grid_pos[1] + 1) * 32))
            mosaic[sl] = r.mean
            spread[sl] = r.spread
        stem = os.path.join(out_dir, f"map_{date.isoformat()}")
        with open(stem + ".bin", "wb") as fh:
            fh.write(np.ascontiguousarray(mosaic, dtype="<f8").tobytes())
        with open(stem + "_spread.bin", "wb") as fh:
            fh.write(np.ascontiguousarray(spread, dtype="<f8").tobytes())
        with open(stem + ".json", "w") as fh:
            json.dump({"shape": list(mosaic.shape), "dtype": "<f8",
                       "date": date.isoformat()}, fh, sort_keys=True)
            fh.write("\n")
        Image.fromarray(
            np.clip(mosaic * 255.0, 0, 255).astype(np.uint8), mode="L"
        ).save(stem + ".png")


def _cmd_infer(args) -> int:
    cfg = _load_runconfig(args)
    ensemble = Ensemble.from_checkpoints(args.checkpoint)
    manifest = _manifest_for(args.data)
    exclude = None
    start = _parse_date(args.exclude_start or
                        cfg.infer.get("exclude_start"))
    end = _parse_date(args.exclude_end or cfg.infer.get("exclude_end"))
    if start and end:
        exclude = (start, end)
    records = ensemble_infer(ensemble, manifest, exclude_range=exclude)
    os.makedirs(args.out, exist_ok=True)
    series = evalmetrics.aggregate_series(records_to_series_input(records))
    evalmetrics.write_series_csv(series,
                                 os.path.join(args.out, "series.csv"))
    window = cfg.metrics.get("monsoon_window")
    if window:
        window = (tuple(window[0]), tuple(window[1]))
    else:
        window = evalmetrics.DEFAULT_MONSOON_WINDOW
    maxima = evalmetrics.annual_monsoon_max(series, window)
    evalmetrics.write_maxima_csv(maxima,
                                 os.path.join(args.out, "maxima.csv"))
    if args.dump_maps:
        _dump_maps(records, args.out)
    print(f"inferred {len(records)} chip predictions")
    return 0


def _cmd_gradcheck(args) -> int:
    from .gradcheck import run_suite

    failed = False
    for name, err, ok in run_suite(n_seeds=args.seeds):
        print(f"{'PASS' if ok else 'FAIL'} {name}: max_rel_err={err:.3e}")
        failed = failed or not ok
    return 1 if failed else 0


# ---------------------------------------------------------------------------


def _add_train_flags(p):
    p.add_argument("--config")
    p.add_argument("--model", choices=["fusion", "baseline"],
                   default=None)
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--hidden", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--optimizer", choices=["ranger", "adam"], default=None)
    p.add_argument("--schedule",
                   help="phase table, e.g. '20:1e-3,5:1e-4,5:1e-5'")
    p.add_argument("--no-augment", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="floodfusion",
        description="CNN-LSTM satellite-fusion inundation pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic chip dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--grid-chips", type=int, default=None)
    p.add_argument("--cloud-prob", type=float, default=None)
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--years", help="comma-separated, e.g. 2017,2018,2019")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("ingest",
                       help="validate external chips and build a manifest")
    p.add_argument("--chips", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lenient", action="store_true",
                   help="tolerate one missing target pixel per chip")
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("train", help="train one cross-validation fold")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--leave-out", type=int, required=True)
    _add_train_flags(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("cv", help="train all leave-one-year-out folds")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--model", choices=["fusion", "baseline", "both"],
                   default="both")
    _add_train_flags_cv(p)
    p.set_defaults(func=_cmd_cv)

    p = sub.add_parser("eval",
                       help="metrics, error map and series for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("infer", help="ensemble historical inference")
    p.add_argument("--checkpoint", action="append", required=True,
                   help="repeat for each ensemble member")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--exclude-start", help="ISO date, skip chips whose "
                   "history window overlaps the range")
    p.add_argument("--exclude-end")
    p.add_argument("--dump-maps", action="store_true")
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("gradcheck",
                       help="finite-difference gradient verification suite")
    p.add_argument("--seeds", type=int, default=5)
    p.set_defaults(func=_cmd_gradcheck)

    return parser


def _add_train_flags_cv(p):
    # like _add_train_flags but --model is owned by the cv command
    p.add_argument("--config")
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--hidden", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--optimizer", choices=["ranger", "adam"], default=None)
    p.add_argument("--schedule")
    p.add_argument("--no-augment", action="store_true")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        return _fail(2, "config", str(exc), exc.path)
    except FileNotFoundError as exc:
        return _fail(3, "missing-file", str(exc))
    except (ValueError, OSError) as exc:
        return _fail(1, type(exc).__name__, str(exc))


if __name__ == "__main__":
    sys.exit(main())
