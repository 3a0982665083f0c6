"""Command-line entry point: dataset building, training, inference,
evaluation, registration, serving, and heatmap rendering.

Option precedence: explicit flags > --config JSON file > built-in defaults.
The effective configuration is echoed into every run directory. Failures
exit nonzero with a one-line `error: <kind>: <detail>` message on stderr.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

GROUP_COLORS = {
    "jaw": (200, 200, 200),
    "brows": (80, 220, 80),
    "nose": (80, 120, 255),
    "eyes": (0, 220, 220),
    "mouth": (255, 80, 80),
}


def _merge_config(args: argparse.Namespace, defaults: dict) -> dict:
    """defaults < config file < explicitly passed flags."""
    effective = dict(defaults)
    cfg_path = getattr(args, "config", None)
    if cfg_path:
        loaded = json.loads(Path(cfg_path).read_text())
        unknown = set(loaded) - set(defaults)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        effective.update(loaded)
    for key in defaults:
        val = getattr(args, key, None)
        if val is not None:
            effective[key] = val
    return effective


def _echo_config(run_dir: Path, payload: dict) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "effective_config.json").write_text(json.dumps(payload, indent=1))


def _draw_landmarks(image: np.ndarray, points: np.ndarray) -> np.ndarray:
    import cv2

    from .landmarks import GROUPS

    out = image.copy()
    radius = max(2, round(min(image.shape[:2]) / 256))
    for name in ("jaw", "brows", "nose", "eyes", "mouth"):
        idx = GROUPS[name] if name != "eyes" else tuple(range(36, 48))
        color = GROUP_COLORS[name]
        for i in idx:
            x, y = points[i]
            cv2.circle(out, (int(round(x)), int(round(y))), radius, color, -1, cv2.LINE_AA)
    return out


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_augment(args) -> int:
    from .datasets import build_synthetic, write_manifest
    from .geometry import AugmentConfig

    defaults = {
        "count": 1, "seed": 0, "split": "train", "provenance": "augmented",
        "group_shift_frac": 0.02, "group_scale_low": 0.93, "group_scale_high": 1.07,
        "stretch_low": 0.92, "stretch_high": 1.08,
    }
    cfg = _merge_config(args, defaults)
    in_dir = Path(args.input)
    items = []
    for img in sorted(in_dir.iterdir()):
        if img.suffix.lower() not in (".png", ".jpg", ".jpeg"):
            continue
        for suffix in (".json", ".pts"):
            sidecar = img.with_suffix(suffix)
            if sidecar.exists():
                items.append((img, sidecar))
                break
    if not items:
        raise FileNotFoundError(f"no image/landmark pairs found in {in_dir}")
    aug = AugmentConfig(
        group_shift_frac=cfg["group_shift_frac"],
        group_scale_range=(cfg["group_scale_low"], cfg["group_scale_high"]),
        stretch_range=(cfg["stretch_low"], cfg["stretch_high"]),
    )
    out_dir = Path(args.out)
    rows = build_synthetic(items, out_dir, stylizer_command=args.stylizer,
                           aug_config=aug, per_image=cfg["count"], seed=cfg["seed"],
                           split=cfg["split"], provenance=cfg["provenance"])
    write_manifest(rows, out_dir / "manifest.csv")
    _echo_config(out_dir, cfg)
    print(f"wrote {len(rows)} augmented images to {out_dir}")
    return 0


def cmd_train(args) -> int:

    from .datasets import LandmarkDataset, read_manifest, validate_manifest
    from .networks import BundleConfig, ModelBundle, config_fingerprint, new_bundle
    from .training import TrainingConfig, train_global, train_joint

    defaults = {
        "seed": 0, "lr": 1e-4, "lam": 0.25, "patience": 10,
        "epochs": None, "decay_start": None, "batch_size": None,
        "base_width": 64, "num_blocks": 6, "patch_size": 256, "hr_size": 1024,
        "temperature": 1.0,
    }
    cfg = _merge_config(args, defaults)
    phase = args.phase
    phase_defaults = {
        "global": (60, 30, 16), "joint": (30, 10, 4), "full": (60, 30, 16),
    }[phase]
    epochs = cfg["epochs"] or phase_defaults[0]
    decay = cfg["decay_start"] if cfg["decay_start"] is not None else phase_defaults[1]
    batch = cfg["batch_size"] or phase_defaults[2]

    run_dir = Path(args.out)
    bc = BundleConfig(cfg["base_width"], cfg["num_blocks"], cfg["patch_size"],
                      cfg["hr_size"], cfg["temperature"])
    bc.fingerprint = config_fingerprint({**cfg, "phase": phase})
    _echo_config(run_dir, {**cfg, "phase": phase, "epochs": epochs,
                           "decay_start": decay, "batch_size": batch})

    rows = read_manifest(args.manifest)
    root = Path(args.manifest).parent
    validate_manifest(rows, root)
    data = LandmarkDataset(rows, root, "train", target=cfg["hr_size"])
    val_rows = LandmarkDataset(rows, root, "val", target=cfg["hr_size"])
    val = val_rows if len(val_rows) else None

    tc = TrainingConfig(epochs=epochs, lr=cfg["lr"], decay_start=decay,
                        batch_size=batch, lam=cfg["lam"],
                        patience=cfg["patience"], seed=cfg["seed"])

    if phase in ("global", "full"):
        net, _ = train_global(data, tc, val_data=val, run_dir=run_dir / "phase1",
                              bundle_config=bc)
        bundle = new_bundle(bc.base_width, bc.num_blocks, bc.patch_size,
                            bc.hr_size, bc.temperature, from_global=net)
        bundle.config.fingerprint = bc.fingerprint
    else:
        if not args.model:
            raise ValueError("--model with phase-1 weights is required for --phase joint")
        bundle = ModelBundle.load(args.model)

    if phase in ("joint", "full"):
        joint_defaults = {"global": None, "joint": (30, 10, 4), "full": (30, 10, 4)}[phase]
        tc2 = TrainingConfig(
            epochs=cfg["epochs"] or joint_defaults[0],
            lr=cfg["lr"],
            decay_start=cfg["decay_start"] if cfg["decay_start"] is not None else joint_defaults[1],
            batch_size=cfg["batch_size"] or joint_defaults[2],
            lam=cfg["lam"], patience=cfg["patience"], seed=cfg["seed"],
        )
        bundle, _ = train_joint(bundle, data, tc2, val_data=val,
                                run_dir=run_dir / "phase2")

    bundle.save(run_dir / "bundle")
    print(f"saved bundle to {run_dir / 'bundle'}")
    return 0


def cmd_infer(args) -> int:
    from .datasets import read_image, write_image
    from .detector import LandmarkDetector
    from .landmarks import write_json_sidecar

    if args.seed is not None:
        np.random.seed(args.seed)
    detector = LandmarkDetector.load(args.model)
    if args.padding is not None:
        detector.padding_fraction = args.padding
    image = read_image(args.image)
    prediction = detector.detect(image)
    out = Path(args.out)
    write_json_sidecar(prediction.refined_landmarks, out,
                       image=str(args.image), source="model")
    if args.diagnostics:
        Path(args.diagnostics).write_text(json.dumps(prediction.diagnostics, indent=1))
    if args.viz:
        write_image(args.viz, _draw_landmarks(image, prediction.refined_landmarks.points))
    print(f"wrote {out}")
    return 0


def cmd_evaluate(args) -> int:
    from .datasets import load_split
    from .evaluation import evaluate_split, format_table, per_image_csv, report_csv
    from .networks import ModelBundle

    defaults = {"split": "test", "padding": 0.25, "seed": 0}
    cfg = _merge_config(args, defaults)
    dataset = load_split(args.manifest, cfg["split"])
    if len(dataset) == 0:
        raise ValueError(f"split {cfg['split']!r} is empty")
    bundle = ModelBundle.load(args.model)
    provenances = [r.provenance for r in dataset.rows]
    names = [r.image for r in dataset.rows]
    report = evaluate_split(dataset, bundle, cfg["padding"],
                            provenances=provenances, names=names)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.csv").write_text(report_csv(report))
    (out_dir / "per_image.csv").write_text(per_image_csv(report))
    table = format_table(report)
    (out_dir / "report.txt").write_text(table + "\n")
    _echo_config(out_dir, cfg)
    print(table)
    return 0


def cmd_register(args) -> int:
    from .datasets import read_image, write_image
    from .landmarks import read_landmarks
    from .registration import (
        intersection_contour_overlay,
        load_contour_map,
        register,
        save_artifacts,
    )

    defaults = {"alpha": 0.5, "threshold_px": None, "seed": 0, "max_trials": 2000}
    cfg = _merge_config(args, defaults)
    src_image = read_image(args.src)
    dst_image = read_image(args.dst)
    src_marks = read_landmarks(args.src_landmarks, src_image.shape[1], src_image.shape[0])
    dst_marks = read_landmarks(args.dst_landmarks, dst_image.shape[1], dst_image.shape[0])
    result = register(src_marks, dst_marks, src_image=src_image,
                      threshold_px=cfg["threshold_px"], max_trials=cfg["max_trials"],
                      seed=cfg["seed"])
    out_dir = Path(args.out)
    save_artifacts(result, out_dir, target_image=dst_image, alpha=cfg["alpha"],
                   src_image=src_image)
    if args.contours:
        maps = [load_contour_map(read_image(p)) for p in args.contours]
        overlay = intersection_contour_overlay(maps, tolerance_px=args.tolerance)
        write_image(out_dir / "intersection.png", overlay)
    _echo_config(out_dir, cfg)
    print(f"registered with {result.num_inliers}/41 inliers; artifacts in {out_dir}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    predictor = None
    if args.model:
        from .detector import LandmarkDetector

        detector = LandmarkDetector.load(args.model)
        predictor = lambda image: detector.detect(image).refined_landmarks.points
    app = create_app(args.corpus, predictor=predictor, ui_dir=args.ui_dir)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def cmd_render_heatmaps(args) -> int:
    from .datasets import write_image
    from .heatmaps import render_gaussian, save_heatmaps
    from .landmarks import read_landmarks

    marks = read_landmarks(args.landmarks, args.size, args.size)
    scale = args.size / max(marks.image_width, marks.image_height)
    points = marks.points * scale
    stack = render_gaussian(points, args.sigma, args.size, args.size)
    out = Path(args.out)
    save_heatmaps(stack.astype(np.float32), out)
    montage = (stack.max(axis=0) * 255).astype(np.uint8)
    write_image(out.with_suffix(".png"), np.stack([montage] * 3, axis=-1))
    print(f"wrote {out} and {out.with_suffix('.png')}")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="landmarker",
        description="Facial landmark detection toolkit for artwork images",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("augment", help="build a stylized + warped synthetic set")
    p.add_argument("--input", required=True, help="directory of images with .json/.pts sidecars")
    p.add_argument("--out", required=True)
    p.add_argument("--stylizer", default=None, help="external command: <cmd> <in> <out>")
    p.add_argument("--count", type=int, default=None, help="augmentations per image")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--split", default=None, choices=("train", "val", "test"))
    p.add_argument("--provenance", default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("train", help="train the detector")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--phase", choices=("global", "joint", "full"), default="full")
    p.add_argument("--model", default=None, help="existing bundle (for --phase joint)")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--decay-start", dest="decay_start", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--lam", type=float, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--base-width", dest="base_width", type=int, default=None)
    p.add_argument("--num-blocks", dest="num_blocks", type=int, default=None)
    p.add_argument("--patch-size", dest="patch_size", type=int, default=None)
    p.add_argument("--hr-size", dest="hr_size", type=int, default=None)
    p.add_argument("--temperature", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="detect landmarks in one image")
    p.add_argument("image")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True, help="output landmark JSON")
    p.add_argument("--viz", default=None, help="optional detection overlay PNG")
    p.add_argument("--diagnostics", default=None, help="optional diagnostics JSON")
    p.add_argument("--padding", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("evaluate", help="mean-error report over a manifest split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default=None)
    p.add_argument("--padding", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("register", help="register a source portrait onto a target")
    p.add_argument("src")
    p.add_argument("dst")
    p.add_argument("--src-landmarks", dest="src_landmarks", required=True)
    p.add_argument("--dst-landmarks", dest="dst_landmarks", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--threshold-px", dest="threshold_px", type=float, default=None)
    p.add_argument("--max-trials", dest="max_trials", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--contours", nargs="*", default=None,
                   help="aligned contour images for the intersection overlay")
    p.add_argument("--tolerance", type=int, default=1)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("serve", help="run the annotation service")
    env = os.environ
    p.add_argument("--corpus", default=env.get("LANDMARKER_CORPUS"),
                   required="LANDMARKER_CORPUS" not in env)
    p.add_argument("--model", default=env.get("LANDMARKER_MODEL"))
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--ui-dir", dest="ui_dir", default=env.get("LANDMARKER_UI_DIR"),
                   help="built annotator UI to serve at /")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("render-heatmaps", help="render Gaussian heatmaps for landmarks")
    p.add_argument("--landmarks", required=True)
    p.add_argument("--out", required=True, help="output blob path")
    p.add_argument("--sigma", type=float, default=2.0)
    p.add_argument("--size", type=int, default=256)
    p.set_defaults(func=cmd_render_heatmaps)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # one-line machine-parsable failure
        detail = str(exc).splitlines()[0] if str(exc) else exc.__class__.__name__
        print(f"error: {exc.__class__.__name__}: {detail}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
