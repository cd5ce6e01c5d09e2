"""Interchange data: tensor files, bounding boxes, images.

Tensor container format
-----------------------
A restricted subset of the ubiquitous ``.npy`` v1.0 layout so that files
written by ``numpy.save`` (and by the extractor) load directly:

    magic ``\\x93NUMPY`` | version bytes ``\\x01\\x00`` | uint16 header length |
    ASCII header dict | raw C-order payload

Accepted headers are exactly ``descr`` in ``{'<f4', '<f8'}``,
``fortran_order: False`` and a shape of rank 1 (feature vector) or rank 3
(feature map, channel-outermost ``(K, H, W)``). Anything else is rejected.
float32 payloads are widened to float64, the working precision of the whole
numeric core.

Flattening convention
---------------------
``flatten_to_dictionary`` turns channel k into column k by row-major
flattening with the height index outermost: row ``r`` of a column maps back
to ``(u, v) = (r // W, r % W)``.

Bounding boxes use the inclusive-exclusive pixel convention: pixel ``(x, y)``
is inside iff ``x_min <= x < x_max`` and ``y_min <= y < y_max``, so the box
area is exactly ``width * height``.
"""

from __future__ import annotations

import ast
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import (
    EmptyBox,
    MalformedFile,
    NonFiniteValue,
    OutOfImageBounds,
    ShapeMismatch,
    UnsupportedDtype,
    UnsupportedRank,
)

_MAGIC = b"\x93NUMPY"
_ACCEPTED_DESCRS = {"<f4": np.dtype("<f4"), "<f8": np.dtype("<f8")}
_BBOX_KEYS = {"image_id", "x_min", "y_min", "x_max", "y_max",
              "image_width", "image_height"}


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class FeatureMap:
    """K x H x W activation tensor of one CNN layer, in float64."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3:
            raise UnsupportedRank(f"feature map must be rank 3, got rank {arr.ndim}")
        if min(arr.shape) < 1:
            raise MalformedFile(f"feature map has a zero-sized dimension: {arr.shape}")
        if not np.isfinite(arr).all():
            raise NonFiniteValue("feature map contains NaN or Inf")
        object.__setattr__(self, "data", _freeze(np.ascontiguousarray(arr)))

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class FeatureVector:
    """Length-dim image feature vector, in float64."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 1:
            raise UnsupportedRank(f"feature vector must be rank 1, got rank {arr.ndim}")
        if arr.shape[0] < 1:
            raise MalformedFile("feature vector is empty")
        if not np.isfinite(arr).all():
            raise NonFiniteValue("feature vector contains NaN or Inf")
        object.__setattr__(self, "data", _freeze(np.ascontiguousarray(arr)))

    @property
    def dim(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in image pixels, inclusive-exclusive."""

    image_id: str
    x_min: int
    y_min: int
    x_max: int
    y_max: int
    image_width: int
    image_height: int

    def __post_init__(self):
        if self.image_width < 1 or self.image_height < 1:
            raise MalformedFile(
                f"{self.image_id}: image dims must be positive, got "
                f"{self.image_width}x{self.image_height}")
        if self.x_min >= self.x_max or self.y_min >= self.y_max:
            raise EmptyBox(
                f"{self.image_id}: degenerate box "
                f"({self.x_min},{self.y_min})-({self.x_max},{self.y_max})")
        if (self.x_min < 0 or self.y_min < 0
                or self.x_max > self.image_width or self.y_max > self.image_height):
            raise OutOfImageBounds(
                f"{self.image_id}: box ({self.x_min},{self.y_min})-"
                f"({self.x_max},{self.y_max}) exceeds frame "
                f"{self.image_width}x{self.image_height}")

    @property
    def area(self) -> int:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)


@dataclass(frozen=True)
class RgbImage:
    """8-bit RGB raster, pixels shaped (height, width, 3)."""

    pixels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.pixels)
        if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint8:
            raise MalformedFile(
                f"RGB image needs uint8 (H, W, 3) pixels, got {arr.dtype} {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise MalformedFile("image has a zero-sized dimension")
        object.__setattr__(self, "pixels", _freeze(np.ascontiguousarray(arr)))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


# --- tensor container ---

def _parse_header(f, path: Path) -> tuple[np.dtype, tuple[int, ...]]:
    magic = f.read(6)
    if magic != _MAGIC:
        raise MalformedFile(f"{path}: bad magic {magic!r}")
    version = f.read(2)
    if len(version) != 2:
        raise MalformedFile(f"{path}: truncated version field")
    if version != b"\x01\x00":
        raise MalformedFile(
            f"{path}: unsupported container version {version[0]}.{version[1]}")
    raw_len = f.read(2)
    if len(raw_len) != 2:
        raise MalformedFile(f"{path}: truncated header length")
    (header_len,) = struct.unpack("<H", raw_len)
    header_bytes = f.read(header_len)
    if len(header_bytes) != header_len:
        raise MalformedFile(f"{path}: truncated header")
    try:
        header = ast.literal_eval(header_bytes.decode("latin1"))
    except (ValueError, SyntaxError) as exc:
        raise MalformedFile(f"{path}: unparseable header: {exc}") from exc
    if not isinstance(header, dict) or set(header) != {"descr", "fortran_order", "shape"}:
        raise MalformedFile(f"{path}: header keys {sorted(header)!r} are not the "
                            "expected descr/fortran_order/shape")

    descr = header["descr"]
    if descr not in _ACCEPTED_DESCRS:
        raise UnsupportedDtype(f"{path}: dtype {descr!r} not in "
                               f"{sorted(_ACCEPTED_DESCRS)}")
    if header["fortran_order"] is not False:
        raise MalformedFile(f"{path}: only C-order payloads are supported")
    shape = header["shape"]
    if (not isinstance(shape, tuple)
            or not all(isinstance(n, int) and not isinstance(n, bool) for n in shape)):
        raise MalformedFile(f"{path}: bad shape {shape!r}")
    return _ACCEPTED_DESCRS[descr], shape


def load_tensor(path) -> FeatureMap | FeatureVector:
    """Load a tensor file as a FeatureMap (rank 3) or FeatureVector (rank 1)."""
    path = Path(path)
    with open(path, "rb") as f:
        dtype, shape = _parse_header(f, path)
        payload = f.read()

    if len(shape) not in (1, 3):
        raise UnsupportedRank(
            f"{path}: rank {len(shape)} unsupported, expected 1 or 3")
    if any(n < 1 for n in shape):
        raise MalformedFile(f"{path}: zero-sized dimension in shape {shape}")

    count = int(np.prod(shape))
    expected = count * dtype.itemsize
    if len(payload) != expected:
        raise MalformedFile(
            f"{path}: payload is {len(payload)} bytes but shape {shape} "
            f"with dtype {dtype.str} needs {expected}")

    arr = np.frombuffer(payload, dtype=dtype).reshape(shape).astype(np.float64)
    if len(shape) == 1:
        return FeatureVector(arr)
    return FeatureMap(arr)


def save_tensor(path, array: np.ndarray, dtype: str = "<f8") -> None:
    """Write an array (rank 1 to 3) in the interchange container format."""
    if dtype not in _ACCEPTED_DESCRS:
        raise UnsupportedDtype(f"cannot write dtype {dtype!r}")
    arr = np.ascontiguousarray(np.asarray(array), dtype=_ACCEPTED_DESCRS[dtype])
    if arr.ndim not in (1, 2, 3):
        raise UnsupportedRank(f"cannot write rank-{arr.ndim} tensor")

    shape_str = "(" + ", ".join(str(int(n)) for n in arr.shape) + \
        ("," if arr.ndim == 1 else "") + ")"
    header = ("{'descr': '%s', 'fortran_order': False, 'shape': %s, }"
              % (dtype, shape_str)).encode("latin1")
    pad = (-(len(_MAGIC) + 4 + len(header) + 1)) % 64
    header = header + b" " * pad + b"\n"

    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(b"\x01\x00")
        f.write(struct.pack("<H", len(header)))
        f.write(header)
        f.write(arr.tobytes())


# --- bounding boxes ---

def load_bboxes(path) -> list[BoundingBox]:
    """Load bounding-box records from a JSON array.

    Records may repeat an image_id (multi-box images); union semantics are
    the scorer's business.
    """
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            records = json.load(f)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MalformedFile(f"{path}: invalid JSON: {exc}") from exc

    if not isinstance(records, list):
        raise MalformedFile(f"{path}: expected a JSON array of box records")

    boxes = []
    for i, rec in enumerate(records):
        if not isinstance(rec, dict) or set(rec) != _BBOX_KEYS:
            raise MalformedFile(
                f"{path}: record {i} keys must be exactly {sorted(_BBOX_KEYS)}")
        if not isinstance(rec["image_id"], str):
            raise MalformedFile(f"{path}: record {i} image_id must be a string")
        for key in _BBOX_KEYS - {"image_id"}:
            if not isinstance(rec[key], int) or isinstance(rec[key], bool):
                raise MalformedFile(f"{path}: record {i} field {key} must be an integer")
        boxes.append(BoundingBox(**rec))
    return boxes


# --- images ---

def load_image(path) -> RgbImage:
    """Load a PNG as 8-bit RGB; grayscale inputs are promoted."""
    path = Path(path)
    try:
        with Image.open(path) as img:
            if img.format != "PNG":
                raise MalformedFile(f"{path}: expected PNG, got {img.format}")
            if img.mode not in ("RGB", "L"):
                raise MalformedFile(
                    f"{path}: unsupported mode {img.mode}, expected RGB or L")
            rgb = img.convert("RGB")
            return RgbImage(np.asarray(rgb, dtype=np.uint8))
    except UnidentifiedImageError as exc:
        raise MalformedFile(f"{path}: not a decodable image: {exc}") from exc


def save_image(path, image: RgbImage) -> None:
    Image.fromarray(image.pixels, mode="RGB").save(path, format="PNG")


# --- dictionary construction ---

def flatten_to_dictionary(fm: FeatureMap) -> np.ndarray:
    """Stack flattened channels as columns: shape (H*W, K)."""
    k, h, w = fm.data.shape
    return _freeze(np.ascontiguousarray(fm.data.reshape(k, h * w).T))


def unflatten_dictionary(dictionary: np.ndarray, height: int, width: int) -> FeatureMap:
    """Inverse of flatten_to_dictionary."""
    dictionary = np.asarray(dictionary, dtype=np.float64)
    if dictionary.ndim != 2 or dictionary.shape[0] != height * width:
        raise ShapeMismatch(
            f"dictionary shape {dictionary.shape} does not match "
            f"{height}x{width} spatial grid")
    return FeatureMap(dictionary.T.reshape(-1, height, width))
