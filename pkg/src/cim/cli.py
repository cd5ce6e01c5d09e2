"""Command-line front end.

Subcommands:
    solve    fit channel weights for one feature map / feature vector pair
    heatmap  full single-image pipeline: solve, synthesize, render overlay
    fla      batch localization scoring driven by a manifest

Common flags mirror the solver symbols (--alpha, --rho, --theta,
--max-iter, --tol, --threshold) with defaults alpha=0.1, rho=1.0,
theta=rho, max-iter=1000, tol=1e-6, threshold=0.6, opacity=0.5. A JSON
config file (--config) supplies the same settings; explicit flags win.
--seed is reserved; the pipeline is deterministic and ignores it.

Exit codes:
    0   success (every record completed or was explicitly skipped)
    1   unexpected error
    2   command-line usage error (argparse)
    3   solver hit max-iter without converging (solve command only)
    4   missing or unreadable file
    10  malformed input file          11  unsupported tensor dtype
    12  unsupported tensor rank       13  non-finite tensor values
    14  degenerate bounding box       15  bounding box out of frame
    16  shape mismatch                17  singular solver system
    18  solver divergence             19  oracle instance too large
    20  invalid threshold             21  image without boxes
    22  empty aggregation
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import fla as fla_mod
from . import mapping, solver, tensor_io
from .errors import (
    CimError,
    EmptyBox,
    EmptyInput,
    InstanceTooLarge,
    InvalidThreshold,
    MalformedFile,
    NoBoxes,
    NonFiniteIterate,
    NonFiniteValue,
    OutOfImageBounds,
    ShapeMismatch,
    SingularSystem,
    UnsupportedDtype,
    UnsupportedRank,
)

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_NOT_CONVERGED = 3
EXIT_IO = 4

_ERROR_CODES = [
    (UnsupportedDtype, 11),
    (UnsupportedRank, 12),
    (MalformedFile, 10),
    (NonFiniteValue, 13),
    (EmptyBox, 14),
    (OutOfImageBounds, 15),
    (ShapeMismatch, 16),
    (SingularSystem, 17),
    (NonFiniteIterate, 18),
    (InstanceTooLarge, 19),
    (InvalidThreshold, 20),
    (NoBoxes, 21),
    (EmptyInput, 22),
]

DEFAULTS = {
    "alpha": 0.1,
    "rho": 1.0,
    "theta": None,
    "max_iters": 1000,
    "tol": 1e-6,
    "threshold": fla_mod.DEFAULT_THRESHOLD,
    "opacity": 0.5,
    "colormap": "jet",
}


def exit_code_for(exc: BaseException) -> int:
    for cls, code in _ERROR_CODES:
        if isinstance(exc, cls):
            return code
    if isinstance(exc, (FileNotFoundError, PermissionError, IsADirectoryError)):
        return EXIT_IO
    return EXIT_UNEXPECTED


def _warn(msg: str) -> None:
    print(f"warning: {msg}", file=sys.stderr)


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as f:
            cfg = json.load(f)
    except json.JSONDecodeError as exc:
        raise MalformedFile(f"{path}: invalid config JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise MalformedFile(f"{path}: config must be a JSON object")
    known = {"solver", "threshold_fraction", "render", "manifest", "output"}
    unknown = set(cfg) - known
    if unknown:
        raise MalformedFile(f"{path}: unknown config keys {sorted(unknown)}")
    return cfg


def _effective(args) -> dict:
    """defaults < config file < explicit flags."""
    cfg = dict(DEFAULTS)
    file_cfg = _load_config(getattr(args, "config", None))
    solver_cfg = file_cfg.get("solver", {})
    for key in ("alpha", "rho", "theta", "max_iters"):
        if key in solver_cfg:
            cfg[key] = solver_cfg[key]
    if "tol_primal" in solver_cfg:
        cfg["tol"] = solver_cfg["tol_primal"]
    if "tol_dual" in solver_cfg and "tol_primal" not in solver_cfg:
        cfg["tol"] = solver_cfg["tol_dual"]
    if "threshold_fraction" in file_cfg:
        cfg["threshold"] = file_cfg["threshold_fraction"]
    render_cfg = file_cfg.get("render", {})
    if "overlay_opacity" in render_cfg:
        cfg["opacity"] = render_cfg["overlay_opacity"]
    if "colormap" in render_cfg:
        cfg["colormap"] = render_cfg["colormap"]
    cfg["manifest"] = file_cfg.get("manifest")
    cfg["output"] = file_cfg.get("output")

    for flag, key in (("alpha", "alpha"), ("rho", "rho"), ("theta", "theta"),
                      ("max_iter", "max_iters"), ("tol", "tol"),
                      ("threshold", "threshold"), ("opacity", "opacity"),
                      ("colormap", "colormap")):
        val = getattr(args, flag, None)
        if val is not None:
            cfg[key] = val
    if getattr(args, "output", None) is not None:
        cfg["output"] = args.output
    if cfg["output"] is None:
        cfg["output"] = "."
    return cfg


def _solver_config(cfg: dict) -> solver.SolverConfig:
    return solver.SolverConfig(
        alpha=cfg["alpha"], rho=cfg["rho"], theta=cfg["theta"],
        max_iters=cfg["max_iters"], tol_primal=cfg["tol"], tol_dual=cfg["tol"])


def _load_pair(fm_path, fv_path):
    fm = tensor_io.load_tensor(fm_path)
    fv = tensor_io.load_tensor(fv_path)
    if not isinstance(fm, tensor_io.FeatureMap):
        raise UnsupportedRank(f"{fm_path}: expected a rank-3 feature map")
    if not isinstance(fv, tensor_io.FeatureVector):
        raise UnsupportedRank(f"{fv_path}: expected a rank-1 feature vector")
    spatial = fm.height * fm.width
    if fv.dim != spatial:
        raise ShapeMismatch(
            f"feature vector dim {fv.dim} != H*W {spatial} "
            f"(feature map {fm.channels}x{fm.height}x{fm.width})")
    return fm, fv


def _fit(fm, fv, cfg):
    d = tensor_io.flatten_to_dictionary(fm)
    return solver.solve(d, fv, _solver_config(cfg), full_output=True)


def cmd_solve(args) -> int:
    cfg = _effective(args)
    out_dir = Path(cfg["output"])
    out_dir.mkdir(parents=True, exist_ok=True)

    fm, fv = _load_pair(args.feature_map, args.feature_vector)
    weights, state, trace = _fit(fm, fv, cfg)

    tensor_io.save_tensor(out_dir / "weights.npy", weights.weights)
    diagnostics = {
        "converged": weights.converged,
        "iterations": weights.iterations_used,
        "objective": weights.final_objective,
        "primal_residual": state.primal_residual,
        "dual_residual": state.dual_residual,
        "nonzero_weights": int(np.count_nonzero(weights.weights)),
        "config": {
            "alpha": cfg["alpha"], "rho": cfg["rho"],
            "theta": cfg["rho"] if cfg["theta"] is None else cfg["theta"],
            "max_iters": cfg["max_iters"],
            "tol_primal": cfg["tol"], "tol_dual": cfg["tol"],
        },
        "residual_trace": [{"primal": p, "dual": d} for p, d in trace],
    }
    with open(out_dir / "diagnostics.json", "w", encoding="utf-8") as f:
        json.dump(diagnostics, f, indent=2)
        f.write("\n")

    status = "converged" if weights.converged else "max-iter"
    print(f"{status} in {weights.iterations_used} iterations, "
          f"objective {weights.final_objective:.6g}, "
          f"{diagnostics['nonzero_weights']}/{len(weights)} nonzero weights")
    return EXIT_OK if weights.converged else EXIT_NOT_CONVERGED


def cmd_heatmap(args) -> int:
    cfg = _effective(args)
    out_dir = Path(cfg["output"])
    out_dir.mkdir(parents=True, exist_ok=True)

    fm, fv = _load_pair(args.feature_map, args.feature_vector)
    base = tensor_io.load_image(args.image)
    weights, _, _ = _fit(fm, fv, cfg)
    if not weights.converged:
        _warn(f"solver stopped at max-iter {cfg['max_iters']} without converging")

    hm = mapping.synthesize(fm, weights)
    if not hm.values.any():
        _warn("heatmap is identically zero (penalty dominated the fit)")
    nhm = mapping.normalize_and_upsample(hm, (base.width, base.height))
    spec = mapping.RenderSpec(colormap=cfg["colormap"],
                              overlay_opacity=cfg["opacity"],
                              output_size=(base.width, base.height))
    overlay = mapping.render(nhm, base, spec)

    tensor_io.save_image(out_dir / "overlay.png", overlay)
    tensor_io.save_tensor(out_dir / "heatmap.npy", hm.values)
    print(f"wrote {out_dir / 'overlay.png'} and {out_dir / 'heatmap.npy'}")
    return EXIT_OK


def _read_manifest(path) -> list[dict]:
    manifest_path = Path(path)
    try:
        with open(manifest_path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as exc:
        raise MalformedFile(f"{path}: invalid manifest JSON: {exc}") from exc
    if not isinstance(data, dict) or not isinstance(data.get("records"), list):
        raise MalformedFile(f"{path}: manifest must be an object with a records array")

    records = []
    seen = set()
    for i, rec in enumerate(data["records"]):
        if not isinstance(rec, dict):
            raise MalformedFile(f"{path}: record {i} is not an object")
        required = {"image_id", "feature_map", "feature_vector"}
        allowed = required | {"image", "bboxes"}
        if not required <= set(rec) or not set(rec) <= allowed:
            raise MalformedFile(
                f"{path}: record {i} must have keys {sorted(required)} "
                f"(optional: image, bboxes), got {sorted(rec)}")
        if rec["image_id"] in seen:
            raise MalformedFile(f"{path}: duplicate image_id {rec['image_id']!r}")
        seen.add(rec["image_id"])
        resolved = dict(rec)
        for key in ("feature_map", "feature_vector", "image", "bboxes"):
            if resolved.get(key) is not None:
                resolved[key] = str((manifest_path.parent / resolved[key]))
        records.append(resolved)
    return records


def _boxes_for(record, global_boxes):
    """Boxes for one record: per-record file wins over the shared file."""
    if record.get("bboxes"):
        candidates = tensor_io.load_bboxes(record["bboxes"])
    elif global_boxes is not None:
        candidates = global_boxes
    else:
        raise NoBoxes(f"{record['image_id']}: no bounding boxes provided")
    boxes = [b for b in candidates if b.image_id == record["image_id"]]
    if not boxes:
        raise NoBoxes(f"{record['image_id']}: no bounding boxes for this image")
    return boxes


def _fla_record(record, global_boxes, cfg) -> fla_mod.FlaScore:
    fm, fv = _load_pair(record["feature_map"], record["feature_vector"])
    boxes = _boxes_for(record, global_boxes)

    frame = (boxes[0].image_width, boxes[0].image_height)
    for b in boxes:
        if (b.image_width, b.image_height) != frame:
            raise ShapeMismatch(
                f"{record['image_id']}: boxes disagree on the image frame")
    if record.get("image"):
        img = tensor_io.load_image(record["image"])
        if (img.width, img.height) != frame:
            raise ShapeMismatch(
                f"{record['image_id']}: image is {img.width}x{img.height} but "
                f"boxes declare {frame[0]}x{frame[1]}")

    weights, _, _ = _fit(fm, fv, cfg)
    if not weights.converged:
        _warn(f"{record['image_id']}: solver did not converge within "
              f"{cfg['max_iters']} iterations")
    hm = mapping.synthesize(fm, weights)
    nhm = mapping.normalize_and_upsample(hm, frame)
    focus = fla_mod.threshold_focus(nhm, cfg["threshold"])
    return fla_mod.score(focus, boxes)


def cmd_fla(args) -> int:
    cfg = _effective(args)
    manifest_path = args.manifest or cfg.get("manifest")
    if manifest_path is None:
        raise MalformedFile("no manifest given (positional argument or config)")
    out_dir = Path(cfg["output"])
    out_dir.mkdir(parents=True, exist_ok=True)

    records = _read_manifest(manifest_path)
    if not records:
        raise EmptyInput(f"{manifest_path}: manifest has no records")
    global_boxes = tensor_io.load_bboxes(args.bboxes) if args.bboxes else None

    jobs = max(1, args.jobs)
    results: list = [None] * len(records)
    if jobs == 1:
        for i, rec in enumerate(records):
            try:
                results[i] = _fla_record(rec, global_boxes, cfg)
            except Exception as exc:
                results[i] = exc
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_fla_record, rec, global_boxes, cfg)
                       for rec in records]
            for i, fut in enumerate(futures):
                try:
                    results[i] = fut.result()
                except Exception as exc:
                    results[i] = exc

    scores = []
    skipped = []
    for rec, res in zip(records, results):
        if isinstance(res, Exception):
            if not args.skip_errors:
                raise res
            _warn(f"skipping {rec['image_id']}: {res}")
            skipped.append(rec["image_id"])
        else:
            scores.append(res)

    report = fla_mod.aggregate(scores, cfg["threshold"])
    with open(out_dir / "report.json", "w", encoding="utf-8") as f:
        f.write(fla_mod.report_to_json(report, skipped if args.skip_errors else None))
    with open(out_dir / "report.csv", "w", encoding="utf-8") as f:
        f.write(fla_mod.report_to_csv(report))

    print(f"FLA-1: {fla_mod.format_percent(report.mean_fla1)}%  "
          f"FLA-2: {fla_mod.format_percent(report.mean_fla2)}%  "
          f"({report.n_images} images, {report.n_degenerate} degenerate"
          + (f", {len(skipped)} skipped" if skipped else "") + ")")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cim",
        description="Class-irrelevant saliency heatmaps and localization scoring.")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config; explicit flags override it")
    common.add_argument("--output", help="output directory (default: current dir)")
    common.add_argument("--seed", type=int, help="reserved; the pipeline is deterministic")
    common.add_argument("--alpha", type=float, help="sparsity weight (default 0.1)")
    common.add_argument("--rho", type=float, help="penalty parameter (default 1.0)")
    common.add_argument("--theta", type=float, help="dual step (default: rho)")
    common.add_argument("--max-iter", type=int, dest="max_iter",
                        help="iteration cap (default 1000)")
    common.add_argument("--tol", type=float,
                        help="primal and dual residual tolerance (default 1e-6)")

    p_solve = sub.add_parser("solve", parents=[common],
                             help="fit channel weights; writes weights.npy + diagnostics.json")
    p_solve.add_argument("feature_map")
    p_solve.add_argument("feature_vector")
    p_solve.set_defaults(func=cmd_solve)

    p_heat = sub.add_parser("heatmap", parents=[common],
                            help="render an overlay; writes overlay.png + heatmap.npy")
    p_heat.add_argument("feature_map")
    p_heat.add_argument("feature_vector")
    p_heat.add_argument("image")
    p_heat.add_argument("--opacity", type=float, help="overlay opacity (default 0.5)")
    p_heat.add_argument("--colormap", choices=mapping.COLORMAPS,
                        help="overlay colormap (default jet)")
    p_heat.set_defaults(func=cmd_heatmap)

    p_fla = sub.add_parser("fla", parents=[common],
                           help="batch localization scoring; writes report.json + report.csv")
    p_fla.add_argument("manifest", nargs="?")
    p_fla.add_argument("--bboxes", help="shared bounding-box JSON file")
    p_fla.add_argument("--threshold", type=float,
                       help="focus threshold fraction (default 0.6)")
    p_fla.add_argument("--skip-errors", action="store_true",
                       help="record failing images and continue")
    p_fla.add_argument("--jobs", type=int, default=1,
                       help="parallel records (default 1); output order is "
                            "manifest order either way")
    p_fla.set_defaults(func=cmd_fla)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code_for(exc)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code_for(exc)


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    sys.exit(main())
