import gzip
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bhtsne import io
from bhtsne.io import DataFormatError, load, plot, read_raw_f32, save_embedding, write_raw_f32


def test_csv_without_labels(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("1.0,2.0\n3.0,4.0")
    ds = load(p, "csv")
    assert (ds.n, ds.d) == (2, 2) and ds.labels is None
    assert np.array_equal(ds.data, [[1.0, 2.0], [3.0, 4.0]])


def test_csv_label_column_from_header(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("a,b,label\n1,2,0\n3,4,7\n")
    ds = load(p, "csv")
    assert ds.d == 2 and ds.labels.tolist() == [0, 7]
    assert load(p, "csv", labels=False).d == 3


def test_csv_rejects_bad_rows(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("1,2\n3,nan\n")
    with pytest.raises(DataFormatError, match="row 2"):
        load(p, "csv")
    p.write_text("1,2\n3\n")
    with pytest.raises(DataFormatError, match="row 2"):
        load(p, "csv")
    p.write_text("1,2\n3,x\n")
    with pytest.raises(DataFormatError, match="row 2"):
        load(p, "csv")


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError, match="nope.csv"):
        load(tmp_path / "nope.csv", "csv")


@settings(max_examples=30, deadline=None)
@given(arrays(np.float32, st.tuples(st.integers(1, 20), st.integers(1, 6)),
              elements=st.floats(width=32, allow_nan=False, allow_infinity=False)),
       st.booleans())
def test_raw_round_trip_is_bitwise(tmp_path_factory, values, with_labels):
    path = tmp_path_factory.mktemp("raw") / "x.bin"
    labels = np.arange(values.shape[0], dtype=np.int32) - 3 if with_labels else None
    write_raw_f32(path, values, labels)
    back, lab = read_raw_f32(path)
    assert back.tobytes() == values.tobytes()
    assert (lab is None) == (labels is None)
    if labels is not None:
        assert np.array_equal(lab, labels)
    again = path.with_name("y.bin")
    write_raw_f32(again, back, lab)
    assert again.read_bytes() == path.read_bytes()


def test_raw_header_layout(tmp_path):
    p = tmp_path / "x.bin"
    write_raw_f32(p, np.ones((3, 2)), np.array([1, 2, 3]))
    raw = p.read_bytes()
    assert raw[:4] == b"TSNE"
    assert struct.unpack("<III", raw[4:16]) == (3, 2, 1)
    assert len(raw) == 16 + 3 * 2 * 4 + 3 * 4


def test_raw_rejects_truncation_and_nan(tmp_path):
    p = tmp_path / "x.bin"
    write_raw_f32(p, np.ones((4, 3)))
    p.write_bytes(p.read_bytes()[:-2])
    with pytest.raises(DataFormatError, match="truncated at byte offset 62"):
        read_raw_f32(p)
    bad = np.ones((4, 3), dtype=np.float32)
    bad[2, 1] = np.inf
    write_raw_f32(p, bad)
    with pytest.raises(DataFormatError, match=r"row 2 \(byte offset 44\)"):
        read_raw_f32(p)
    p.write_bytes(b"XXXX" + bytes(12))
    with pytest.raises(DataFormatError, match="magic"):
        read_raw_f32(p)


def test_idx_mnist_shape(tmp_path):
    p = tmp_path / "train-images-idx3-ubyte.gz"
    header = bytes([0, 0, 0x08, 3]) + struct.pack(">III", 60000, 28, 28)
    body = np.zeros(60000 * 784, dtype=np.uint8)
    body[-1] = 255
    with gzip.open(p, "wb", compresslevel=1) as fh:
        fh.write(header + body.tobytes())
    ds = load(p, "idx")
    assert (ds.n, ds.d) == (60000, 784)
    assert ds.data.max() == 1.0 and ds.data.min() == 0.0


def test_idx_with_labels(tmp_path):
    img = np.arange(2 * 3 * 3, dtype=np.uint8).reshape(2, 3, 3)
    io.write_idx(tmp_path / "img-idx3", img)
    io.write_idx(tmp_path / "lab-idx1", np.array([4, 9], dtype=np.uint8))
    ds = load(tmp_path / "img-idx3", "idx", labels_path=tmp_path / "lab-idx1")
    np.testing.assert_allclose(ds.data, img.reshape(2, 9) / 255.0, rtol=1e-6)
    assert ds.labels.tolist() == [4, 9]


def test_idx_float_rejects_non_finite(tmp_path):
    arr = np.ones((3, 2, 2), dtype=np.float32)
    arr[1, 0, 1] = np.nan
    io.write_idx(tmp_path / "f-idx3", arr)
    with pytest.raises(DataFormatError, match="row 1"):
        load(tmp_path / "f-idx3", "idx")


def test_idx_truncated(tmp_path):
    p = tmp_path / "t-idx3"
    p.write_bytes(bytes([0, 0, 0x08, 3]) + struct.pack(">III", 10, 2, 2) + bytes(7))
    with pytest.raises(DataFormatError, match="truncated"):
        load(p, "idx")


def test_save_embedding_csv(tmp_path, rng):
    coords = rng.normal(size=(5, 2)).astype(np.float32)
    p = tmp_path / "e.csv"
    save_embedding(coords, np.array([0, 1, 1, 0, 2]), p)
    lines = p.read_text().splitlines()
    assert lines[0] == "x,y,label" and len(lines[1].split(",")) == 3
    back = load(p, "csv")
    np.testing.assert_allclose(back.data, coords, atol=1e-6)
    assert back.labels.tolist() == [0, 1, 1, 0, 2]
    save_embedding(coords, None, p)
    assert p.read_text().splitlines()[0] == "x,y"
    assert all(len(line.split(",")) == 2 for line in p.read_text().splitlines())


def test_save_embedding_raw(tmp_path, rng):
    coords = rng.normal(size=(5, 2)).astype(np.float32)
    p = tmp_path / "e.bin"
    save_embedding(coords, None, p, "raw_f32")
    assert load(p, "raw_f32").data.tobytes() == coords.tobytes()


def test_plot_marks_and_colors(tmp_path):
    p = tmp_path / "a.svg"
    plot(np.array([[0.0, 0.0], [1.0, 1.0]]), np.array([0, 1]), p)
    text = p.read_text()
    assert text.count("<circle") == 2
    assert io.PALETTE[0] in text and io.PALETTE[1] in text
    plot(np.random.default_rng(0).normal(size=(30, 2)), None, p)
    circles = [line for line in p.read_text().splitlines() if line.startswith("<circle")]
    assert len(circles) == 30
    assert all(f'fill="{io.PALETTE[0]}"' in line for line in circles)


def test_plot_is_deterministic(tmp_path, rng):
    coords = rng.normal(size=(100, 2))
    labels = rng.integers(0, 25, 100)
    plot(coords, labels, tmp_path / "a.svg")
    plot(coords, labels, tmp_path / "b.svg")
    assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()
