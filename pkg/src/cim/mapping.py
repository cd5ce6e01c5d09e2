"""Heatmap synthesis, normalization, and rendering.

A heatmap is the weighted sum of feature-map channels,
``M(u, v) = sum_k w_k * f_k(u, v)``, evaluated in float64.

Normalization pipeline, in this order: negative values are clamped to zero
(a no-op for post-activation features with non-negative weights), the map
is upsampled bilinearly with corner-aligned sampling, then min-max rescaled
to [0, 255]. Rescaling last keeps the range contract exact after
interpolation; a constant map rescales to all zeros so that an
uninformative map fails any threshold instead of saturating it.

Corner-aligned sampling: output index t on an axis of length T reads source
coordinate ``t * (S - 1) / (T - 1)`` (coordinate 0 when T == 1), so the
first and last samples coincide with the source corners.

The jet-like colormap is piecewise linear in t = value/255 with knots
t = 0 -> blue (0,0,255), t = 0.5 -> green (0,255,0), t = 1 -> red
(255,0,0):

    red   = 255 * clip(2t - 1, 0, 1)
    green = 255 * (1 - |2t - 1|)
    blue  = 255 * clip(1 - 2t, 0, 1)

All 8-bit conversions round half to even (numpy rint). Everything in this
module is pure; distinct images may be processed concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch
from .solver import WeightVector
from .tensor_io import FeatureMap, RgbImage

COLORMAPS = ("jet", "grayscale")


@dataclass(frozen=True)
class Heatmap:
    """Raw saliency map at feature-map resolution."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 2 or min(arr.shape) < 1:
            raise ShapeMismatch(f"heatmap must be a non-empty 2-D array, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ShapeMismatch("heatmap contains NaN/Inf")
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class NormalizedHeatmap:
    """Upsampled map with values in [0, 255]."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 2 or min(arr.shape) < 1:
            raise ShapeMismatch(f"normalized map must be non-empty 2-D, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ShapeMismatch("normalized map contains NaN/Inf")
        if arr.min() < 0.0 or arr.max() > 255.0:
            raise ShapeMismatch(
                f"normalized values must lie in [0, 255], got "
                f"[{arr.min()}, {arr.max()}]")
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class RenderSpec:
    """How to turn a normalized map into an overlay."""

    colormap: str = "jet"
    overlay_opacity: float = 0.5
    output_size: tuple[int, int] = (1, 1)  # (width, height)

    def __post_init__(self):
        if self.colormap not in COLORMAPS:
            raise ValueError(f"colormap must be one of {COLORMAPS}, got {self.colormap!r}")
        if not 0.0 <= self.overlay_opacity <= 1.0:
            raise ValueError(f"opacity must be in [0, 1], got {self.overlay_opacity}")
        w, h = self.output_size
        if w < 1 or h < 1:
            raise ValueError(f"output size must be >= 1x1, got {self.output_size}")


def synthesize(fm: FeatureMap, w) -> Heatmap:
    """Weighted channel sum at feature resolution."""
    weights = w.weights if isinstance(w, WeightVector) else np.asarray(w, dtype=np.float64)
    if weights.ndim != 1 or weights.shape[0] != fm.channels:
        raise ShapeMismatch(
            f"weights length {weights.shape} != channel count {fm.channels}")
    if weights.min(initial=0.0) < 0.0:
        raise ValueError("channel weights must be non-negative")
    return Heatmap(np.einsum("k,kuv->uv", weights, fm.data))


def bilinear_upsample(values: np.ndarray, out_height: int, out_width: int) -> np.ndarray:
    """Corner-aligned bilinear resampling of a 2-D array."""
    values = np.asarray(values, dtype=np.float64)
    in_h, in_w = values.shape
    if (out_height, out_width) == (in_h, in_w):
        return values.copy()

    ys = _source_coords(out_height, in_h)
    xs = _source_coords(out_width, in_w)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]

    top = values[y0][:, x0] * (1.0 - wx) + values[y0][:, x1] * wx
    bottom = values[y1][:, x0] * (1.0 - wx) + values[y1][:, x1] * wx
    return top * (1.0 - wy) + bottom * wy


def _source_coords(n_out: int, n_in: int) -> np.ndarray:
    if n_out == 1:
        return np.zeros(1)
    # integer numerator first so the endpoints land exactly on 0 and n_in-1
    return np.arange(n_out) * (n_in - 1) / (n_out - 1)


def normalize_and_upsample(hm: Heatmap, target: tuple[int, int]) -> NormalizedHeatmap:
    """Clamp negatives, bilinear-upsample to target (width, height), rescale
    to [0, 255]. A constant map comes out all zero."""
    t_w, t_h = target
    if t_w < 1 or t_h < 1:
        raise ShapeMismatch(f"target size must be >= 1x1, got {target}")
    clamped = np.maximum(hm.values, 0.0)
    up = bilinear_upsample(clamped, t_h, t_w)
    lo = up.min()
    hi = up.max()
    if hi == lo:
        return NormalizedHeatmap(np.zeros_like(up))
    return NormalizedHeatmap((up - lo) / (hi - lo) * 255.0)


def colorize(values: np.ndarray, colormap: str = "jet") -> np.ndarray:
    """Map [0, 255] values to float RGB in [0, 255], shape (H, W, 3)."""
    if colormap not in COLORMAPS:
        raise ValueError(f"colormap must be one of {COLORMAPS}, got {colormap!r}")
    values = np.asarray(values, dtype=np.float64)
    if colormap == "grayscale":
        return np.repeat(values[..., None], 3, axis=-1)
    t = values / 255.0
    red = np.clip(2.0 * t - 1.0, 0.0, 1.0)
    green = 1.0 - np.abs(2.0 * t - 1.0)
    blue = np.clip(1.0 - 2.0 * t, 0.0, 1.0)
    return np.stack([red, green, blue], axis=-1) * 255.0


def render(nhm: NormalizedHeatmap, base: RgbImage, spec: RenderSpec) -> RgbImage:
    """Alpha-blend the colorized map over the base image."""
    want_h, want_w = spec.output_size[1], spec.output_size[0]
    if (nhm.height, nhm.width) != (base.height, base.width) or \
            (base.height, base.width) != (want_h, want_w):
        raise ShapeMismatch(
            f"map {nhm.width}x{nhm.height}, image {base.width}x{base.height} and "
            f"spec {spec.output_size[0]}x{spec.output_size[1]} must all agree")
    color = colorize(nhm.values, spec.colormap)
    a = spec.overlay_opacity
    blended = (1.0 - a) * base.pixels.astype(np.float64) + a * color
    return RgbImage(np.clip(np.rint(blended), 0, 255).astype(np.uint8))


def heatmap_image(nhm: NormalizedHeatmap, colormap: str = "grayscale") -> RgbImage:
    """Standalone PNG-ready rendering of a normalized map (no base image)."""
    return RgbImage(np.clip(np.rint(colorize(nhm.values, colormap)), 0, 255).astype(np.uint8))
