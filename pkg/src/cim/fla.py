"""Feature localization accuracy.

The focus region is the set of pixels of a normalized heatmap strictly
above ``threshold_fraction * 255`` (default 0.6). Against the union of an
image's bounding boxes:

    fla1 = |focus & bbox| / |bbox|     how much of the box is covered
    fla2 = |focus & bbox| / |focus|    how much of the focus sits inside

"Information" is plain pixel count, so both scores are pure geometry,
independent of the normalization curve. An empty focus region scores
fla2 = 0 and is flagged degenerate; aggregation is the unweighted mean
over all images, degenerate ones included.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

import numpy as np

from .errors import EmptyInput, InvalidThreshold, NoBoxes, ShapeMismatch
from .mapping import NormalizedHeatmap
from .tensor_io import BoundingBox

DEFAULT_THRESHOLD = 0.6


@dataclass(frozen=True)
class FocusRegion:
    """Boolean mask of above-threshold pixels at image resolution."""

    mask: np.ndarray
    pixel_count: int

    def __post_init__(self):
        mask = np.asarray(self.mask)
        if mask.ndim != 2 or mask.dtype != np.bool_:
            raise ShapeMismatch(f"focus mask must be 2-D boolean, got {mask.dtype} {mask.shape}")
        if int(mask.sum()) != self.pixel_count:
            raise ShapeMismatch("pixel_count disagrees with the mask")
        mask = np.ascontiguousarray(mask)
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)


@dataclass(frozen=True)
class FlaScore:
    image_id: str
    fla1: float
    fla2: float
    focus_pixels: int
    bbox_pixels: int
    intersection_pixels: int
    degenerate: bool


@dataclass(frozen=True)
class FlaReport:
    per_image: tuple[FlaScore, ...]
    mean_fla1: float
    mean_fla2: float
    threshold: float
    n_images: int
    n_degenerate: int


def threshold_focus(nhm: NormalizedHeatmap,
                    threshold_fraction: float = DEFAULT_THRESHOLD) -> FocusRegion:
    """Pixels strictly greater than threshold_fraction * 255."""
    if not 0.0 < threshold_fraction < 1.0:
        raise InvalidThreshold(
            f"threshold fraction must be in (0, 1), got {threshold_fraction}")
    mask = nhm.values > threshold_fraction * 255.0
    return FocusRegion(mask=mask, pixel_count=int(mask.sum()))


def score(focus: FocusRegion, boxes: list[BoundingBox]) -> FlaScore:
    """Score one image's focus region against the union of its boxes."""
    if not boxes:
        raise NoBoxes("cannot score an image without bounding boxes")
    image_id = boxes[0].image_id
    h, w = focus.mask.shape
    for box in boxes:
        if box.image_id != image_id:
            raise ShapeMismatch(
                f"boxes for {image_id!r} and {box.image_id!r} mixed in one score call")
        if (box.image_height, box.image_width) != (h, w):
            raise ShapeMismatch(
                f"{image_id}: box frame {box.image_width}x{box.image_height} "
                f"!= mask {w}x{h}")

    bbox_mask = np.zeros((h, w), dtype=bool)
    for box in boxes:
        bbox_mask[box.y_min:box.y_max, box.x_min:box.x_max] = True

    bbox_pixels = int(bbox_mask.sum())
    intersection = int((focus.mask & bbox_mask).sum())
    degenerate = focus.pixel_count == 0
    return FlaScore(
        image_id=image_id,
        fla1=intersection / bbox_pixels,
        fla2=0.0 if degenerate else intersection / focus.pixel_count,
        focus_pixels=focus.pixel_count,
        bbox_pixels=bbox_pixels,
        intersection_pixels=intersection,
        degenerate=degenerate,
    )


def aggregate(scores: list[FlaScore], threshold: float = DEFAULT_THRESHOLD) -> FlaReport:
    """Unweighted means over all images, degenerate ones included."""
    if not scores:
        raise EmptyInput("cannot aggregate an empty score list")
    return FlaReport(
        per_image=tuple(scores),
        mean_fla1=sum(s.fla1 for s in scores) / len(scores),
        mean_fla2=sum(s.fla2 for s in scores) / len(scores),
        threshold=threshold,
        n_images=len(scores),
        n_degenerate=sum(1 for s in scores if s.degenerate),
    )


def report_to_dict(report: FlaReport, skipped: list[str] | None = None) -> dict:
    out = {
        "threshold": report.threshold,
        "n_images": report.n_images,
        "n_degenerate": report.n_degenerate,
        "mean_fla1": report.mean_fla1,
        "mean_fla2": report.mean_fla2,
        "per_image": [
            {
                "image_id": s.image_id,
                "fla1": s.fla1,
                "fla2": s.fla2,
                "focus_pixels": s.focus_pixels,
                "bbox_pixels": s.bbox_pixels,
                "intersection_pixels": s.intersection_pixels,
                "degenerate": s.degenerate,
            }
            for s in report.per_image
        ],
    }
    if skipped is not None:
        out["skipped"] = list(skipped)
    return out


def report_to_json(report: FlaReport, skipped: list[str] | None = None) -> str:
    return json.dumps(report_to_dict(report, skipped), indent=2) + "\n"


CSV_COLUMNS = ("image_id", "fla1", "fla2", "focus_pixels", "bbox_pixels",
               "intersection_pixels", "degenerate")


def report_to_csv(report: FlaReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for s in report.per_image:
        writer.writerow([s.image_id, repr(s.fla1), repr(s.fla2), s.focus_pixels,
                         s.bbox_pixels, s.intersection_pixels,
                         str(s.degenerate).lower()])
    return buf.getvalue()


def format_percent(fraction: float) -> str:
    """Presentation-layer formatting: x100, one decimal."""
    return f"{fraction * 100.0:.1f}"
