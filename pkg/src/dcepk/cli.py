"""Command-line entry point: ``dcepk simulate|fit|train|infer|evaluate``.

Exit codes: 0 success, 2 configuration or input mismatch, 3 I/O,
4 more than half of the masked voxels failed to fit, 5 non-finite training loss.
Standard output carries one JSON summary line; diagnostics go to standard error.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .core import (
    ConfigError, DcePkError, EmptyMask, FrameCountMismatch, NonFiniteLoss, ShapeMismatch, UnitError,
)
from .fitting import FAILURE_MASK, FitConfig, fit_volume
from .io import (
    SUBJECT_FILES, VolumeError, read_aif_csv, read_aux, read_json, read_pk, read_raster, read_series,
    subject_dirs, write_aif_csv, write_json, write_pk, write_subject, write_volume,
)
from .metrics import RegionSpec, evaluate_maps, nrmse, report_csv
from .phantom import PhantomConfig, generate_phantom, generate_phantom_set
from .plots import curve_overlay_svg, map_panels_svg

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_FIT, EXIT_NONFINITE = 0, 2, 3, 4, 5


class FitFailure(DcePkError):
    pass


def _emit(summary: dict) -> None:
    print(json.dumps(summary, sort_keys=True))


def cmd_simulate(args) -> int:
    cfg_dict = read_json(args.config) if args.config else {}
    n = int(cfg_dict.pop("subjects", 1))
    jitter = float(cfg_dict.pop("aif_jitter", 0.2))
    if args.subjects is not None:
        n = args.subjects
    cfg = PhantomConfig.from_dict(cfg_dict)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    out = Path(args.out)
    if n == 1:
        phantoms = [generate_phantom(cfg)]
        dirs = [out]
    else:
        phantoms = generate_phantom_set(cfg, n, jitter)
        dirs = [out / f"subject_{i:03d}" for i in range(n)]
    for d, ph in zip(dirs, phantoms):
        write_subject(d, ph)
    _emit({"command": "simulate", "seed": cfg.seed, "subjects": n,
           "dims": [cfg.acq.n_frames, cfg.height, cfg.width], "out": str(out)})
    return EXIT_OK


def cmd_fit(args) -> int:
    series = read_series(args.series)
    cp = read_aif_csv(args.aif)
    aux = read_aux(args.t1, args.s0, args.mask)
    if not np.allclose(cp.time_seconds, series.acq.time_seconds):
        raise ShapeMismatch("AIF time grid does not match the series acquisition")
    cfg = FitConfig(method=args.method, model=args.model)
    res = fit_volume(series, cp, aux, cfg, n_workers=args.workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n_mask = int(aux.mask.sum())
    masked = res.codes[aux.mask]
    counts = {str(bit): int(np.count_nonzero(masked & bit)) for bit in (1, 2, 4, 8, 16)}
    summary = {"method": cfg.method.value, "model": cfg.model.value, "masked_voxels": n_mask,
               "failed_voxels": res.n_failed, "flag_counts": counts}
    write_pk(out / "pk.dcev", res.pk, extra={"fit": summary})
    write_volume(out / "codes.dcev", res.codes.astype(np.float64), meta={"kind": "fit_codes", "bits": {
        "1": "inversion failed", "2": "singular design", "4": "degenerate kep", "8": "clamped",
        "16": "not converged"}})
    write_volume(out / "residual.dcev", res.residual_norm, meta={"kind": "residual_norm", "units": "mM"})
    _emit({"command": "fit", **summary, "out": str(out)})
    if n_mask == 0 or np.count_nonzero(masked & FAILURE_MASK) > 0.5 * n_mask:
        raise FitFailure(f"{res.n_failed} of {n_mask} masked voxels failed")
    return EXIT_OK


def load_training_set(data_dir, model):
    from .training import Subject, TrainingSet

    subjects, acq = [], None
    for d in subject_dirs(data_dir):
        series = read_series(d / SUBJECT_FILES["series"])
        aux = read_aux(d / SUBJECT_FILES["t1"], d / SUBJECT_FILES["s0"], d / SUBJECT_FILES["mask"])
        cp = read_aif_csv(d / SUBJECT_FILES["aif"])
        pk_path = d / SUBJECT_FILES["pk"]
        pk = read_pk(pk_path).as_stack() if pk_path.exists() else None
        subjects.append(Subject(series.data, aux.s0, aux.t1_seconds, aux.mask, cp.values_mM, pk))
        acq = acq or series.acq
    ds = TrainingSet(tuple(subjects), acq, model)
    if not ds.has_labels:
        missing = [str(d / SUBJECT_FILES["pk"]) for d in subject_dirs(data_dir) if not (d / SUBJECT_FILES["pk"]).exists()]
        raise ConfigError(f"training needs PK volumes; missing {missing[0]}")
    return ds


def cmd_train(args) -> int:
    from .training import TrainConfig, load_state, train

    cfg_dict = read_json(args.config) if args.config else {}
    if args.mode:
        cfg_dict["mode"] = args.mode
    if args.seed is not None:
        cfg_dict["seed"] = args.seed
    cfg = TrainConfig.from_dict(cfg_dict)
    state = None
    if args.resume:
        state = load_state(args.resume)
        if state.cfg != cfg:
            raise ConfigError("resume checkpoint was written with a different training config")
    ds = load_training_set(args.data, cfg.model)
    state = train(cfg, ds, args.out, state=state, stop_after_epochs=args.stop_after_epochs)
    _emit({"command": "train", "mode": cfg.mode.value, "seed": cfg.seed, "epochs": state.epoch,
           "steps": state.step, "out": str(args.out)})
    return EXIT_OK


def cmd_infer(args) -> int:
    from .training import infer, load_state

    state = load_state(args.checkpoint)
    series = read_series(args.series)
    mask = read_raster(args.mask) > 0.5 if args.mask else None
    result = infer(state, series, mask)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_pk(out / "pk.dcev", result.pk, extra={"source": "generator"})
    write_aif_csv(out / "aif_estimate.csv", result.cp)
    _emit({"command": "infer", "model": result.pk.model.value, "frames": series.n_frames, "out": str(out)})
    return EXIT_OK


def cmd_evaluate(args) -> int:
    pred = read_pk(args.pred)
    ref = read_pk(args.reference)
    if pred.shape != ref.shape:
        raise ShapeMismatch(f"prediction {pred.shape} vs reference {ref.shape}")
    mask = read_raster(args.mask) > 0.5 if args.mask else None
    regions = RegionSpec.from_labels(read_raster(args.regions).astype(np.int64)) if args.regions else None
    rows = evaluate_maps(pred, ref, mask, regions)
    curves = None
    if args.aif_pred and args.aif_ref:
        est, true = read_aif_csv(args.aif_pred), read_aif_csv(args.aif_ref)
        if len(est) != len(true):
            raise ShapeMismatch("AIF curves have different lengths")
        rows.append({"parameter": "cp", "metric": "nrmse", "value": nrmse(est.values_mM, true.values_mM),
                     "region_id": ""})
        curves = (true.time_seconds, {"true": true.values_mM, "estimated": est.values_mM})
    Path(args.out).write_text(report_csv(rows))
    if args.plot:
        plot_dir = Path(args.plot)
        plot_dir.mkdir(parents=True, exist_ok=True)
        if curves is not None:
            (plot_dir / "aif_overlay.svg").write_text(curve_overlay_svg(curves[0], curves[1], "AIF: true vs estimated"))
        panels = {}
        for i, name in enumerate(ref.model.param_names):
            panels[f"{name} ref"] = ref.as_stack()[i]
            panels[f"{name} pred"] = pred.as_stack()[i]
        (plot_dir / "maps.svg").write_text(map_panels_svg(panels))
    _emit({"command": "evaluate", "rows": len(rows), "out": str(args.out)})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dcepk", description="DCE-MRI pharmacokinetic parameter estimation")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate phantom volumes")
    s.add_argument("--config", help="phantom config JSON (defaults when omitted)")
    s.add_argument("--out", required=True)
    s.add_argument("--subjects", type=int)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="voxelwise LLS or NLLS fit")
    f.add_argument("--method", choices=["lls", "nlls"], default="lls")
    f.add_argument("--model", choices=["etofts", "patlak"], default="patlak")
    f.add_argument("--series", required=True)
    f.add_argument("--aif", required=True)
    f.add_argument("--t1", required=True)
    f.add_argument("--s0", required=True)
    f.add_argument("--mask")
    f.add_argument("--out", required=True)
    f.add_argument("--workers", type=int, default=1)
    f.set_defaults(func=cmd_fit)

    t = sub.add_parser("train", help="train the generator")
    t.add_argument("--config")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--mode", choices=["cyclegan", "supervised", "supervised-physics"])
    t.add_argument("--seed", type=int)
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--stop-after-epochs", type=int, help="end this invocation after N more epochs")
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", help="run a trained generator on a series")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--series", required=True)
    i.add_argument("--mask")
    i.add_argument("--out", required=True)
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("evaluate", help="PSNR/SSIM/region means against a reference")
    e.add_argument("--pred", required=True)
    e.add_argument("--reference", required=True)
    e.add_argument("--mask")
    e.add_argument("--regions")
    e.add_argument("--out", required=True)
    e.add_argument("--plot", help="directory for SVG plots")
    e.add_argument("--aif-pred")
    e.add_argument("--aif-ref")
    e.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FitFailure as exc:
        print(f"dcepk {args.command}: {exc}", file=sys.stderr)
        return EXIT_FIT
    except EmptyMask as exc:
        print(f"dcepk {args.command}: {exc}", file=sys.stderr)
        return EXIT_FIT if args.command == "fit" else EXIT_CONFIG
    except NonFiniteLoss as exc:
        print(f"dcepk {args.command}: {exc}", file=sys.stderr)
        return EXIT_NONFINITE
    except (VolumeError, OSError) as exc:
        print(f"dcepk {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, ShapeMismatch, UnitError, FrameCountMismatch, DcePkError, ValueError, KeyError) as exc:
        print(f"dcepk {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
