"""Batch export of interchange artifacts.

For each input image this writes, into the output directory:

    <id>_fm.npy   float32 (K, H, W) feature map of the selected layer
    <id>_fv.npy   float32 (H*W,) head output
    <id>.png      the resized RGB image actually fed to the network
    bboxes.json   converted boxes for all annotated images (shared file)
    manifest.json records wired for the downstream batch CLI, with paths
                  relative to the output directory

Upstream annotations are a JSON array of
``{"image": <filename>, "width": W, "height": H, "boxes": [[x0,y0,x1,y1], ...]}``
with inclusive-exclusive corners in original-image pixels; they are scaled
to the export resolution here (floor the min corner, ceil the max corner,
clamp to the frame) so the numeric core never sees the upstream format.

Per-image failures are logged and skipped; the summary reports both counts.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .model import ExtractorError, attach_sdfc, load_model

log = logging.getLogger("sdfc_extractor")


@dataclass
class ExtractionSpec:
    model_path: str
    layer: str
    output_dir: str
    images: list = field(default_factory=list)
    size: int = 84
    bboxes_path: str | None = None
    sdfc_width: int | None = None


def load_annotations(path) -> dict[str, dict]:
    with open(path, "r", encoding="utf-8") as f:
        entries = json.load(f)
    if not isinstance(entries, list):
        raise ExtractorError(f"{path}: expected a JSON array of annotations")
    by_name = {}
    for entry in entries:
        required = {"image", "width", "height", "boxes"}
        if not isinstance(entry, dict) or not required <= set(entry):
            raise ExtractorError(f"{path}: annotation needs keys {sorted(required)}")
        by_name[entry["image"]] = entry
    return by_name


def convert_boxes(entry: dict, image_id: str, out_size: int) -> list[dict]:
    """Scale original-resolution corner boxes to the export frame."""
    sx = out_size / entry["width"]
    sy = out_size / entry["height"]
    converted = []
    for x0, y0, x1, y1 in entry["boxes"]:
        if x0 >= x1 or y0 >= y1:
            log.warning("%s: dropping degenerate upstream box %s",
                        image_id, (x0, y0, x1, y1))
            continue
        rec = {
            "image_id": image_id,
            "x_min": max(0, math.floor(x0 * sx)),
            "y_min": max(0, math.floor(y0 * sy)),
            "x_max": min(out_size, math.ceil(x1 * sx)),
            "y_max": min(out_size, math.ceil(y1 * sy)),
            "image_width": out_size,
            "image_height": out_size,
        }
        if rec["x_min"] >= rec["x_max"] or rec["y_min"] >= rec["y_max"]:
            log.warning("%s: dropping box %s that degenerates at %dpx",
                        image_id, (x0, y0, x1, y1), out_size)
            continue
        converted.append(rec)
    return converted


def _prepare_image(path, size: int) -> tuple[Image.Image, torch.Tensor]:
    with Image.open(path) as img:
        rgb = img.convert("RGB")  # promotes grayscale, drops alpha
    resized = rgb.resize((size, size), Image.BILINEAR)
    arr = np.asarray(resized, dtype=np.float32) / 255.0
    tensor = torch.from_numpy(arr.transpose(2, 0, 1)).unsqueeze(0)
    return resized, tensor


def export_batch(spec: ExtractionSpec) -> dict:
    out_dir = Path(spec.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    model, (k, h, w) = attach_sdfc(load_model(spec.model_path), spec.layer,
                                   input_size=(spec.size, spec.size),
                                   sdfc_width=spec.sdfc_width)
    log.info("feature map %dx%dx%d, head width %d", k, h, w, h * w)

    annotations = load_annotations(spec.bboxes_path) if spec.bboxes_path else {}

    records = []
    boxes = []
    skipped = []
    for image_path in spec.images:
        image_path = Path(image_path)
        image_id = image_path.stem
        try:
            resized, tensor = _prepare_image(image_path, spec.size)
            with torch.no_grad():
                fmap, fvec = model(tensor)
            fmap = fmap.numpy().astype(np.float32)
            fvec = fvec.numpy().astype(np.float32)
            if fmap.shape != (k, h, w) or fvec.shape != (h * w,):
                raise ExtractorError(
                    f"unexpected activation shapes {fmap.shape} / {fvec.shape}")

            np.save(out_dir / f"{image_id}_fm.npy", fmap)
            np.save(out_dir / f"{image_id}_fv.npy", fvec)
            resized.save(out_dir / f"{image_id}.png", format="PNG")
        except Exception as exc:
            log.warning("skipping %s: %s", image_path, exc)
            skipped.append(str(image_path))
            continue

        record = {
            "image_id": image_id,
            "feature_map": f"{image_id}_fm.npy",
            "feature_vector": f"{image_id}_fv.npy",
            "image": f"{image_id}.png",
        }
        entry = annotations.get(image_path.name) or annotations.get(image_id)
        if entry is not None:
            converted = convert_boxes(entry, image_id, spec.size)
            if converted:
                boxes.extend(converted)
                record["bboxes"] = "bboxes.json"
        records.append(record)

    if boxes:
        with open(out_dir / "bboxes.json", "w", encoding="utf-8") as f:
            json.dump(boxes, f, indent=2)
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as f:
        json.dump({"records": records}, f, indent=2)

    summary = {"exported": len(records), "skipped": skipped,
               "map_shape": (k, h, w), "manifest": str(out_dir / "manifest.json")}
    log.info("exported %d images, skipped %d", len(records), len(skipped))
    return summary
