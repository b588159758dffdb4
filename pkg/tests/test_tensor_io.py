import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from rrm.tensor_io import (
    MAGIC,
    LabelMapError,
    NonFiniteTensorError,
    TensorHeaderError,
    TensorSizeError,
    decode_tensor,
    encode_tensor,
    read_image,
    read_label_map,
    read_tensor,
    resize_bilinear,
    write_image,
    write_label_map,
    write_tensor,
)


def raw_file(path, header: bytes, payload: bytes):
    path.write_bytes(MAGIC + header + b"\n" + payload)
    return path


def test_read_zero_tensor(tmp_path):
    p = raw_file(tmp_path / "z.rrmt", b'{"shape":[2,2],"dtype":"f32"}', b"\0" * 16)
    t = read_tensor(p)
    assert t.shape == (2, 2)
    assert np.array_equal(t, np.zeros((2, 2)))


def test_read_scalar_one(tmp_path):
    p = raw_file(tmp_path / "o.rrmt", b'{"shape":[1],"dtype":"f32"}', np.array([1.0], "<f4").tobytes())
    t = read_tensor(p)
    assert t.dtype == np.float32
    assert t.tolist() == [1.0]


def test_write_three_values_layout(tmp_path):
    write_tensor(np.array([1, 2, 3], dtype=np.float32), tmp_path / "t.rrmt")
    raw = (tmp_path / "t.rrmt").read_bytes()
    assert raw.startswith(b"RRMT\x00\x00\x00\x01")
    header, payload = raw[8:].split(b"\n", 1)
    assert header == b'{"shape":[3],"dtype":"f32"}'
    assert len(payload) == 12
    assert payload == np.array([1, 2, 3], dtype="<f4").tobytes()


def test_big_endian_input_is_normalized(tmp_path):
    t = np.arange(6, dtype=">f4").reshape(2, 3)
    write_tensor(t, tmp_path / "be.rrmt")
    back = read_tensor(tmp_path / "be.rrmt")
    assert back.dtype == np.dtype("float32") and back.dtype.isnative
    assert np.array_equal(back, t)


@pytest.mark.parametrize("shape", [(), (0,), (2, 0), (1, 1, 1, 1, 1)])
def test_bad_shapes_rejected_on_write(tmp_path, shape):
    with pytest.raises(ValueError):
        write_tensor(np.zeros(shape, dtype=np.float32), tmp_path / "x.rrmt")
    assert not (tmp_path / "x.rrmt").exists()


def test_nonfinite_rejected_on_write(tmp_path):
    with pytest.raises(ValueError):
        write_tensor(np.array([1.0, np.nan]), tmp_path / "x.rrmt")


@pytest.mark.parametrize(
    "raw, err",
    [
        (b"NOTMAGIC{}\n", TensorHeaderError),
        (MAGIC + b'{"shape":[2],"dtype":"f32"}', TensorHeaderError),
        (MAGIC + b"{not json\n", TensorHeaderError),
        (MAGIC + b'{"shape":[2],"dtype":"f64"}\n' + b"\0" * 16, TensorHeaderError),
        (MAGIC + b'{"shape":[],"dtype":"f32"}\n', TensorHeaderError),
        (MAGIC + b'{"shape":[2.5],"dtype":"f32"}\n', TensorHeaderError),
        (MAGIC + b'{"shape":[2],"dtype":"f32"}\n' + b"\0" * 4, TensorSizeError),
        (MAGIC + b'{"shape":[2],"dtype":"f32"}\n' + b"\0" * 12, TensorSizeError),
        (MAGIC + b'{"shape":[2],"dtype":"f32"}\n' + np.array([1, np.inf], "<f4").tobytes(), NonFiniteTensorError),
        (MAGIC + b'{"shape":[1],"dtype":"f32"}\n' + np.array([np.nan], "<f4").tobytes(), NonFiniteTensorError),
    ],
)
def test_distinct_load_errors(raw, err):
    with pytest.raises(err):
        decode_tensor(raw)


def test_load_errors_are_value_errors():
    for cls in (TensorHeaderError, TensorSizeError, NonFiniteTensorError):
        assert issubclass(cls, ValueError)
    assert TensorHeaderError is not TensorSizeError


finite_f32 = st.floats(allow_nan=False, allow_infinity=False, width=32)


@given(hnp.arrays(np.float32, hnp.array_shapes(min_dims=1, max_dims=4, min_side=1, max_side=5), elements=finite_f32))
def test_round_trip_bit_exact(t):
    back = decode_tensor(encode_tensor(t))
    assert back.shape == t.shape
    assert back.tobytes() == t.astype("<f4").tobytes()


def test_round_trip_file_random(tmp_path, rng):
    for i in range(10):
        shape = tuple(rng.integers(1, 6, size=rng.integers(1, 5)))
        t = (rng.standard_normal(shape) * 10.0 ** rng.integers(-20, 20)).astype(np.float32)
        write_tensor(t, tmp_path / f"{i}.rrmt")
        assert read_tensor(tmp_path / f"{i}.rrmt").tobytes() == t.tobytes()


def test_label_map_all_unlabeled(tmp_path):
    write_label_map(np.full((4, 5), 255, np.uint8), tmp_path / "u.png")
    lab = read_label_map(tmp_path / "u.png")
    assert lab.shape == (4, 5) and np.all(lab == 255)


def test_label_map_all_background(tmp_path):
    write_label_map(np.zeros((3, 3), np.uint8), tmp_path / "b.png")
    assert np.all(read_label_map(tmp_path / "b.png") == 0)


def test_label_map_random_round_trip(tmp_path, rng):
    lab = rng.integers(0, 21, size=(17, 23)).astype(np.uint8)
    lab[rng.random(lab.shape) < 0.3] = 255
    write_label_map(lab, tmp_path / "r.png")
    assert np.array_equal(read_label_map(tmp_path / "r.png"), lab)


@pytest.mark.parametrize("bad", [21, 100, 254])
def test_label_map_out_of_range_rejected(tmp_path, bad):
    lab = np.zeros((2, 2), np.uint8)
    lab[0, 1] = bad
    with pytest.raises(LabelMapError):
        write_label_map(lab, tmp_path / "x.png")
    from PIL import Image

    Image.fromarray(lab).save(tmp_path / "y.png")
    with pytest.raises(LabelMapError):
        read_label_map(tmp_path / "y.png")


def test_label_map_class_count_configurable(tmp_path):
    lab = np.array([[0, 30], [255, 1]], np.uint8)
    write_label_map(lab, tmp_path / "c.png", num_classes=30)
    assert np.array_equal(read_label_map(tmp_path / "c.png", num_classes=30), lab)
    with pytest.raises(LabelMapError):
        read_label_map(tmp_path / "c.png", num_classes=20)


def test_label_map_rejects_rgb(tmp_path):
    from PIL import Image

    Image.fromarray(np.zeros((2, 2, 3), np.uint8)).save(tmp_path / "rgb.png")
    with pytest.raises(LabelMapError):
        read_label_map(tmp_path / "rgb.png")


def test_image_round_trip(tmp_path, rng):
    img = rng.integers(0, 256, size=(5, 7, 3), dtype=np.uint8)
    write_image(img, tmp_path / "i.png")
    assert np.array_equal(read_image(tmp_path / "i.png"), img)
    write_image(img, tmp_path / "i.ppm")
    assert np.array_equal(read_image(tmp_path / "i.ppm"), img)


def test_resize_identity_bit_equal(rng):
    t = rng.standard_normal((2, 5, 6)).astype(np.float32)
    out = resize_bilinear(t, 5, 6)
    assert out.dtype == t.dtype and out.tobytes() == t.tobytes()


def test_resize_hand_example():
    t = np.array([[[0.0, 1.0], [0.0, 1.0]]])
    out = resize_bilinear(t, 2, 4)
    np.testing.assert_allclose(out[0], [[0, 1 / 3, 2 / 3, 1]] * 2, rtol=0, atol=1e-15)


def test_resize_corners_exact(rng):
    t = rng.standard_normal((3, 4, 7))
    out = resize_bilinear(t, 9, 13)
    for (a, b), (c, d) in [((0, 0), (0, 0)), ((0, -1), (0, -1)), ((-1, 0), (-1, 0)), ((-1, -1), (-1, -1))]:
        assert np.array_equal(out[:, a, b], t[:, c, d])


def test_resize_invalid_size():
    with pytest.raises(ValueError):
        resize_bilinear(np.zeros((1, 2, 2)), 0, 3)


@given(
    st.floats(-1e6, 1e6, allow_nan=False),
    st.integers(1, 6), st.integers(1, 6), st.integers(1, 9), st.integers(1, 9),
)
def test_resize_constant_stays_constant(v, h, w, oh, ow):
    out = resize_bilinear(np.full((2, h, w), v), oh, ow)
    np.testing.assert_allclose(out, v, rtol=1e-12, atol=0)


@given(
    hnp.arrays(np.float64, st.tuples(st.integers(1, 3), st.integers(1, 6), st.integers(1, 6)),
               elements=st.floats(-1e3, 1e3)),
    st.integers(1, 12), st.integers(1, 12),
)
def test_resize_within_bounds(t, oh, ow):
    out = resize_bilinear(t, oh, ow)
    assert out.shape == (t.shape[0], oh, ow)
    tol = 1e-9 * max(1.0, np.abs(t).max())
    assert out.min() >= t.min() - tol and out.max() <= t.max() + tol
