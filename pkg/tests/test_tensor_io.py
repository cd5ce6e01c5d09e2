import json
import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st
from PIL import Image

from cim.errors import (
    EmptyBox,
    MalformedFile,
    NonFiniteValue,
    OutOfImageBounds,
    UnsupportedDtype,
    UnsupportedRank,
)
from cim.tensor_io import (
    BoundingBox,
    FeatureMap,
    FeatureVector,
    RgbImage,
    flatten_to_dictionary,
    load_bboxes,
    load_image,
    load_tensor,
    save_image,
    save_tensor,
    unflatten_dictionary,
)


def test_load_rank3_is_feature_map(tmp_path):
    arr = np.arange(24, dtype=np.float64).reshape(4, 2, 3)
    path = tmp_path / "fm.npy"
    save_tensor(path, arr)
    fm = load_tensor(path)
    assert isinstance(fm, FeatureMap)
    assert (fm.channels, fm.height, fm.width) == (4, 2, 3)
    np.testing.assert_array_equal(fm.data, arr)


def test_load_rank1_is_feature_vector(tmp_path):
    path = tmp_path / "fv.npy"
    save_tensor(path, np.linspace(0, 1, 6))
    fv = load_tensor(path)
    assert isinstance(fv, FeatureVector)
    assert fv.dim == 6


def test_load_rank2_rejected(tmp_path):
    path = tmp_path / "mat.npy"
    np.save(path, np.zeros((4, 6)))
    with pytest.raises(UnsupportedRank):
        load_tensor(path)


def test_numpy_save_compatibility(tmp_path):
    # files straight out of np.save must load unchanged
    arr = np.random.default_rng(0).normal(size=(3, 4, 5)).astype(np.float32)
    path = tmp_path / "native.npy"
    np.save(path, arr)
    fm = load_tensor(path)
    assert fm.data.dtype == np.float64
    np.testing.assert_array_equal(fm.data, arr.astype(np.float64))


def test_float32_widened(tmp_path):
    path = tmp_path / "f32.npy"
    save_tensor(path, np.array([1.5, 2.5], dtype=np.float32), dtype="<f4")
    fv = load_tensor(path)
    assert fv.data.dtype == np.float64
    np.testing.assert_array_equal(fv.data, [1.5, 2.5])


def test_bad_magic(tmp_path):
    path = tmp_path / "bad.npy"
    path.write_bytes(b"NOTNUMPY" + b"\x00" * 64)
    with pytest.raises(MalformedFile):
        load_tensor(path)


def test_unsupported_version(tmp_path):
    path = tmp_path / "v2.npy"
    good = tmp_path / "good.npy"
    save_tensor(good, np.zeros(3))
    raw = bytearray(good.read_bytes())
    raw[6] = 2  # bump major version
    path.write_bytes(bytes(raw))
    with pytest.raises(MalformedFile):
        load_tensor(path)


def test_integer_dtype_rejected(tmp_path):
    path = tmp_path / "ints.npy"
    np.save(path, np.arange(6))
    with pytest.raises(UnsupportedDtype):
        load_tensor(path)


def test_fortran_order_rejected(tmp_path):
    path = tmp_path / "f.npy"
    np.save(path, np.asfortranarray(np.zeros((2, 3, 4))))
    with pytest.raises(MalformedFile):
        load_tensor(path)


def test_payload_size_mismatch(tmp_path):
    path = tmp_path / "short.npy"
    good = tmp_path / "good.npy"
    save_tensor(good, np.zeros(4))
    raw = good.read_bytes()
    path.write_bytes(raw[:-8])  # drop one float64
    with pytest.raises(MalformedFile):
        load_tensor(path)
    path.write_bytes(raw + b"\x00" * 8)  # extra element
    with pytest.raises(MalformedFile):
        load_tensor(path)


def test_nan_payload_rejected(tmp_path):
    path = tmp_path / "nan.npy"
    arr = np.zeros((2, 2, 2))
    arr[1, 0, 1] = np.nan
    np.save(path, arr)
    with pytest.raises(NonFiniteValue):
        load_tensor(path)


def test_zero_dim_rejected(tmp_path):
    path = tmp_path / "empty.npy"
    np.save(path, np.zeros((2, 0, 3)))
    with pytest.raises(MalformedFile):
        load_tensor(path)


def test_truncated_header(tmp_path):
    path = tmp_path / "trunc.npy"
    path.write_bytes(b"\x93NUMPY\x01\x00" + struct.pack("<H", 200) + b"{'descr'")
    with pytest.raises(MalformedFile):
        load_tensor(path)


# --- bounding boxes ---

def _write_boxes(tmp_path, records):
    path = tmp_path / "boxes.json"
    path.write_text(json.dumps(records))
    return path


def _rec(**overrides):
    base = {"image_id": "a", "x_min": 0, "y_min": 0, "x_max": 84, "y_max": 84,
            "image_width": 84, "image_height": 84}
    base.update(overrides)
    return base


def test_full_frame_box(tmp_path):
    boxes = load_bboxes(_write_boxes(tmp_path, [_rec()]))
    assert len(boxes) == 1
    assert boxes[0].area == 84 * 84


def test_empty_box_rejected(tmp_path):
    path = _write_boxes(tmp_path, [_rec(x_min=10, x_max=10, y_min=10, y_max=20)])
    with pytest.raises(EmptyBox):
        load_bboxes(path)


def test_out_of_bounds_box_rejected(tmp_path):
    path = _write_boxes(tmp_path, [_rec(x_max=100, y_max=50)])
    with pytest.raises(OutOfImageBounds):
        load_bboxes(path)


def test_duplicate_image_ids_allowed(tmp_path):
    path = _write_boxes(tmp_path, [_rec(), _rec(x_max=10, y_max=10)])
    assert len(load_bboxes(path)) == 2


@pytest.mark.parametrize("mutate", [
    lambda r: r.pop("x_min"),
    lambda r: r.update(extra=1),
    lambda r: r.update(x_min=0.5),
    lambda r: r.update(x_min=True),
    lambda r: r.update(image_id=7),
])
def test_malformed_box_records(tmp_path, mutate):
    rec = _rec()
    mutate(rec)
    with pytest.raises(MalformedFile):
        load_bboxes(_write_boxes(tmp_path, [rec]))


def test_box_json_not_array(tmp_path):
    path = tmp_path / "boxes.json"
    path.write_text('{"image_id": "a"}')
    with pytest.raises(MalformedFile):
        load_bboxes(path)


def test_box_invalid_json(tmp_path):
    path = tmp_path / "boxes.json"
    path.write_text("[{")
    with pytest.raises(MalformedFile):
        load_bboxes(path)


@given(st.integers(0, 50), st.integers(0, 50), st.integers(1, 30), st.integers(1, 30))
def test_accepted_boxes_have_positive_area(x0, y0, w, h):
    box = BoundingBox("p", x0, y0, x0 + w, y0 + h, 80, 80)
    assert box.area >= 1


# --- dictionary flattening ---

def test_flatten_single_channel():
    fm = FeatureMap(np.array([[[1.0, 2.0], [3.0, 4.0]]]))
    d = flatten_to_dictionary(fm)
    assert d.shape == (4, 1)
    np.testing.assert_array_equal(d[:, 0], [1, 2, 3, 4])


def test_flatten_two_channels_stacks_columns():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    b = np.array([[5.0, 6.0], [7.0, 8.0]])
    d = flatten_to_dictionary(FeatureMap(np.stack([a, b])))
    assert d.shape == (4, 2)
    np.testing.assert_array_equal(d[:, 0], a.reshape(-1))
    np.testing.assert_array_equal(d[:, 1], b.reshape(-1))


def test_flatten_row_major_indexing():
    # row r of a column maps back to (u, v) = (r // W, r % W)
    fm_data = np.arange(2 * 3 * 5, dtype=float).reshape(2, 3, 5)
    d = flatten_to_dictionary(FeatureMap(fm_data))
    for r in range(15):
        u, v = divmod(r, 5)
        assert d[r, 0] == fm_data[0, u, v]
        assert d[r, 1] == fm_data[1, u, v]


@given(st.integers(1, 5), st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_flatten_round_trip(k, h, w, seed):
    data = np.random.default_rng(seed).normal(size=(k, h, w))
    fm = FeatureMap(data)
    back = unflatten_dictionary(flatten_to_dictionary(fm), h, w)
    assert np.array_equal(back.data, fm.data)  # bit-exact


def test_save_tensor_round_trip_exact(tmp_path):
    arr = np.random.default_rng(5).normal(size=(3, 2, 4))
    path = tmp_path / "rt.npy"
    save_tensor(path, arr)
    np.testing.assert_array_equal(load_tensor(path).data, arr)
    # and numpy itself can read what we write
    np.testing.assert_array_equal(np.load(path), arr)


# --- images ---

def test_load_rgb_png(tmp_path):
    pixels = np.random.default_rng(1).integers(0, 256, size=(5, 7, 3), dtype=np.uint8)
    path = tmp_path / "img.png"
    save_image(path, RgbImage(pixels))
    img = load_image(path)
    assert (img.width, img.height) == (7, 5)
    np.testing.assert_array_equal(img.pixels, pixels)


def test_grayscale_promoted(tmp_path):
    path = tmp_path / "gray.png"
    Image.fromarray(np.full((4, 4), 100, np.uint8), mode="L").save(path)
    img = load_image(path)
    assert img.pixels.shape == (4, 4, 3)
    assert (img.pixels == 100).all()


def test_non_png_rejected(tmp_path):
    path = tmp_path / "img.jpg"
    Image.fromarray(np.zeros((4, 4, 3), np.uint8)).save(path, format="JPEG")
    with pytest.raises(MalformedFile):
        load_image(path)


def test_garbage_image_rejected(tmp_path):
    path = tmp_path / "junk.png"
    path.write_bytes(b"not an image at all")
    with pytest.raises(MalformedFile):
        load_image(path)


def test_loaded_tensors_are_immutable(tmp_path):
    path = tmp_path / "fm.npy"
    save_tensor(path, np.zeros((1, 2, 2)))
    fm = load_tensor(path)
    with pytest.raises(ValueError):
        fm.data[0, 0, 0] = 1.0
