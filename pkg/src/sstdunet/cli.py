"""Command line entry point: ``sstdunet <subcommand> [options]``.

Exit codes: 0 success; 2 usage or configuration error; 3 input data error
(NIfTI, shapes, checkpoints, statistics); 4 training error; 5 gradient check
above tolerance; 1 anything else. Failures print one JSON line
``{"status": "error", "category": ..., "message": ...}`` on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from sstdunet.errors import (
    CheckpointError,
    ConfigError,
    NiftiError,
    ShapeError,
    SstError,
    StatisticsError,
    TrainingError,
)

EXIT_OK, EXIT_INTERNAL, EXIT_USAGE, EXIT_DATA, EXIT_TRAINING, EXIT_GRADCHECK = 0, 1, 2, 3, 4, 5

log = logging.getLogger("sstdunet")


class UsageError(SstError):
    category = "usage"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _emit(payload) -> None:
    print(json.dumps(payload, indent=2, default=_json_default))


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(type(o).__name__)


def _config(args):
    from sstdunet.pipeline.config import load_config

    return load_config(args.config, args.set)


def _add_config_args(p):
    p.add_argument("--config", help="YAML or JSON config with model/train/data/augment/fc sections")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config value (repeatable)")


def cmd_train(args) -> int:
    from sstdunet.pipeline.data import load_sample
    from sstdunet.pipeline.train import train, train_repeats
    from sstdunet.volio import read_manifest

    cfg = _config(args)
    manifest = args.manifest or cfg.data.manifest
    if manifest is None:
        raise UsageError("train needs --manifest (or data.manifest in the config)")
    entries = [e for e in read_manifest(manifest) if e.mask]
    samples = {e.subject_id: load_sample(e, cfg.model.input_size) for e in entries}
    on_epoch = (lambda rec: log.info(json.dumps(rec))) if args.verbose else None
    train_ids = [e.subject_id for e in entries if e.split == "train"]
    val_ids = [e.subject_id for e in entries if e.split == "val"]
    if val_ids:
        res = train([samples[i] for i in train_ids], [samples[i] for i in val_ids], cfg, args.out, on_epoch=on_epoch)
        chosen, runs = res, [res]
        chosen.model.load_state_dict(chosen.best_state)
    else:
        chosen, runs = train_repeats(list(samples.values()), cfg, args.out, on_epoch=on_epoch)
    _emit({
        "status": "ok", "checkpoint": str(Path(args.out) / ("best.ckpt" if not val_ids else "best_r0.ckpt")),
        "best_score": chosen.best_score, "best_epoch": chosen.best_epoch, "steps": chosen.steps,
        "checksum": chosen.checksum, "runs": [{"repeat": r.split.repeat if r.split else 0,
                                               "best_score": r.best_score} for r in runs],
    })
    return EXIT_OK


def cmd_predict(args) -> int:
    from sstdunet.network import load_checkpoint
    from sstdunet.pipeline.infer import predict
    from sstdunet.volio import Volume, read_nifti, write_nifti

    model = load_checkpoint(args.checkpoint)
    vol = read_nifti(args.input)
    pred = predict(model, vol, args.threshold, args.connectivity)
    write_nifti(Volume(pred.mask, vol.spacing[:3]), args.output)
    if args.prob_output:
        write_nifti(Volume(pred.prob.astype(np.float32)), args.prob_output)
    _emit({"status": "ok", "output": args.output, "seconds": pred.seconds,
           "foreground_voxels": int(pred.mask.sum()), "shape": list(pred.mask.shape)})
    return EXIT_OK


def _write_report(report, csv_path, json_path) -> None:
    report.write(csv_path, json_path)
    if csv_path is None:
        sys.stdout.write(report.to_csv())


def cmd_evaluate(args) -> int:
    from sstdunet.pipeline.infer import evaluate, evaluate_masks, subjects_from_manifest
    from sstdunet.volio import read_manifest, read_nifti

    entries = read_manifest(args.manifest)
    if args.checkpoint:
        from sstdunet.network import load_checkpoint

        report = evaluate(load_checkpoint(args.checkpoint), subjects_from_manifest(entries),
                          threshold=args.threshold, connectivity=args.connectivity)
    else:
        pairs = []
        for e in entries:
            if e.prediction is None:
                raise UsageError(f"subject {e.subject_id}: no 'prediction' in manifest and no --checkpoint given")
            truth = read_nifti(e.mask).data if e.mask else None
            pairs.append((e.subject_id, truth, read_nifti(e.prediction).data))
        report = evaluate_masks(pairs)
    _write_report(report, args.csv, args.json)
    return EXIT_OK


def cmd_noise_sweep(args) -> int:
    from sstdunet.network import load_checkpoint
    from sstdunet.pipeline.infer import DEFAULT_NOISE_LEVELS, noise_sweep, subjects_from_manifest, sweep_summary
    from sstdunet.volio import read_manifest

    levels = DEFAULT_NOISE_LEVELS if args.levels is None else [float(v) for v in args.levels.split(",")]
    model = load_checkpoint(args.checkpoint)
    reports = noise_sweep(model, subjects_from_manifest(read_manifest(args.manifest)), levels,
                          include_zero=args.include_zero, seed=args.seed)
    summary = sweep_summary(reports)
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for lvl, rep in reports.items():
            rep.write(out / f"noise_{lvl:.3f}.csv")
        (out / "summary.json").write_text(json.dumps(summary, indent=2))
    _emit({"status": "ok", "levels": summary})
    return EXIT_OK


def cmd_fc_analyze(args) -> int:
    from sstdunet.pipeline.fc import fc_analysis
    from sstdunet.volio import read_nifti

    table = [json.loads(line) for line in Path(args.table).read_text().splitlines() if line.strip()]
    base = Path(args.table).parent
    for row in table:
        missing = {"series", "mask_a", "mask_b"} - set(row)
        if missing:
            raise ConfigError(f"fc table row {row.get('subject_id')}: missing keys {sorted(missing)}")
    series = [read_nifti(base / r["series"]).data for r in table]
    masks_a = [read_nifti(base / r["mask_a"]).data for r in table]
    masks_b = [read_nifti(base / r["mask_b"]).data for r in table]
    labels = np.rint(read_nifti(args.labels).data).astype(np.int64)
    res = fc_analysis(series, masks_a, masks_b, labels, args.n_rois)
    if args.matrices:
        np.savez(args.matrices, t_a=res.t_a, t_b=res.t_b)
    _emit({"status": "ok", "slope": res.comparison.slope, "intercept": res.comparison.intercept,
           "r": res.comparison.r, "n_informative": res.n_informative, "undefined_rois": res.undefined_rois})
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from sstdunet.pipeline.checks import model_gradcheck
    from sstdunet.pipeline.config import PROFILES

    report = model_gradcheck(PROFILES[args.profile](), seed=args.seed, max_coords=args.max_coords, tol=args.tol)
    _emit({"status": "ok" if report.passed else "fail", "max_rel_error": report.max_rel_error,
           "tol": report.tol, "checked": report.checked, "worst": report.worst})
    return EXIT_OK if report.passed else EXIT_GRADCHECK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sstdunet", description="SST-DUNet skull stripping: training, inference and analysis")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train with repeated splits and best-validation selection")
    _add_config_args(t)
    t.add_argument("--manifest", help="JSONL manifest with image and mask paths")
    t.add_argument("--out", required=True, help="output directory for logs and checkpoints")
    t.set_defaults(func=cmd_train)

    pr = sub.add_parser("predict", help="predict a brain mask for one NIfTI volume")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--input", required=True)
    pr.add_argument("--output", required=True, help="mask NIfTI on the input grid")
    pr.add_argument("--prob-output", help="optional probability map on the model grid")
    pr.add_argument("--threshold", type=float, default=0.5)
    pr.add_argument("--connectivity", type=int, choices=(6, 26), default=26)
    pr.set_defaults(func=cmd_predict)

    ev = sub.add_parser("evaluate", help="Dice/PPV/HD/SEN report")
    ev.add_argument("--manifest", required=True, help="entries need 'mask'; without --checkpoint also 'prediction'")
    ev.add_argument("--checkpoint", help="predict with this model instead of reading 'prediction' masks")
    ev.add_argument("--csv", help="write CSV here (default: stdout)")
    ev.add_argument("--json", help="also write a JSON report")
    ev.add_argument("--threshold", type=float, default=0.5)
    ev.add_argument("--connectivity", type=int, choices=(6, 26), default=26)
    ev.set_defaults(func=cmd_evaluate)

    ns = sub.add_parser("noise-sweep", help="evaluate under Rician noise levels")
    ns.add_argument("--checkpoint", required=True)
    ns.add_argument("--manifest", required=True)
    ns.add_argument("--levels", help="comma-separated fractions (default 0.01..0.15 step 0.02)")
    ns.add_argument("--include-zero", action="store_true", help="add a noise-free control level")
    ns.add_argument("--seed", type=int, default=0)
    ns.add_argument("--out-dir")
    ns.set_defaults(func=cmd_noise_sweep)

    fc = sub.add_parser("fc-analyze", help="compare ROI connectivity t maps between two mask pipelines")
    fc.add_argument("--table", required=True, help="JSONL rows with subject_id, series, mask_a, mask_b")
    fc.add_argument("--labels", required=True, help="integer ROI atlas NIfTI on the series grid")
    fc.add_argument("--n-rois", type=int)
    fc.add_argument("--matrices", help="write t_a/t_b to this .npz")
    fc.set_defaults(func=cmd_fc_analyze)

    gc = sub.add_parser("gradcheck", help="finite-difference check of the whole network")
    gc.add_argument("--profile", choices=("tiny", "test_scale", "production"), default="tiny")
    gc.add_argument("--max-coords", type=int, default=1, help="coordinates probed per parameter tensor")
    gc.add_argument("--tol", type=float, default=1e-3)
    gc.add_argument("--seed", type=int, default=0)
    gc.set_defaults(func=cmd_gradcheck)
    return p


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, (UsageError, ConfigError)):
        return EXIT_USAGE
    if isinstance(exc, TrainingError):
        return EXIT_TRAINING
    if isinstance(exc, (NiftiError, ShapeError, CheckpointError, StatisticsError, FileNotFoundError)):
        return EXIT_DATA
    return EXIT_INTERNAL


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - every failure becomes a structured record
        category = getattr(exc, "category", "file_not_found" if isinstance(exc, FileNotFoundError) else "internal")
        print(json.dumps({"status": "error", "category": category, "message": str(exc)}), file=sys.stderr)
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
