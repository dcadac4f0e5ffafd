"""Dataset loading, embedding persistence and SVG scatter plots.

raw_f32 layout (little-endian)::

    bytes 0-3    b"TSNE"
    bytes 4-7    u32 n
    bytes 8-11   u32 d
    bytes 12-15  u32 flags (bit 0: labels follow the data)
    n*d f32      row-major values
    n   i32      labels, when flagged
"""

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

RAW_MAGIC = b"TSNE"
RAW_HEADER = struct.Struct("<4sIII")
FLAG_LABELS = 1

_IDX_TYPES = {
    0x08: np.dtype("u1"),
    0x09: np.dtype("i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}

# tab20
PALETTE = (
    "#1f77b4", "#aec7e8", "#ff7f0e", "#ffbb78", "#2ca02c", "#98df8a", "#d62728",
    "#ff9896", "#9467bd", "#c5b0d5", "#8c564b", "#c49c94", "#e377c2", "#f7b6d2",
    "#7f7f7f", "#c7c7c7", "#bcbd22", "#dbdb8d", "#17becf", "#9edae5",
)


class DataFormatError(ValueError):
    """Malformed or non-finite input file."""


@dataclass
class LabeledDataset:
    data: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        if self.labels is not None and len(self.labels) != self.data.shape[0]:
            raise ValueError(
                f"{len(self.labels)} labels for {self.data.shape[0]} points"
            )

    @property
    def n(self):
        return self.data.shape[0]

    @property
    def d(self):
        return self.data.shape[1]


def _read_bytes(path):
    path = Path(path)
    raw = path.read_bytes()
    if path.suffix == ".gz":
        raw = gzip.decompress(raw)
    return raw


def _check_finite_rows(values, path, offset, itemsize):
    bad = ~np.isfinite(values)
    if bad.any():
        row = int(np.argmax(bad.any(axis=1)))
        col = int(np.argmax(bad[row]))
        raise DataFormatError(
            f"{path}: non-finite value at row {row} "
            f"(byte offset {offset + (row * values.shape[1] + col) * itemsize})"
        )


# ---------------------------------------------------------------- csv


def _parse_csv(path, has_labels):
    lines = Path(path).read_text().splitlines()
    header = None
    rows = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        fields = line.split(",")
        try:
            vals = [float(f) for f in fields]
        except ValueError:
            if header is None and not rows:
                header = [f.strip() for f in fields]
                continue
            raise DataFormatError(f"{path}: unparseable value on row {lineno}") from None
        if rows and len(vals) != len(rows[0][1]):
            raise DataFormatError(
                f"{path}: row {lineno} has {len(vals)} columns, expected {len(rows[0][1])}"
            )
        rows.append((lineno, vals))
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    if has_labels is None:
        has_labels = bool(header) and header[-1].lower() == "label"
    values = np.array([r[1] for r in rows], dtype=np.float64)
    labels = None
    if has_labels:
        lab = values[:, -1]
        if not np.all(np.isfinite(lab)) or np.any(lab != np.round(lab)):
            raise DataFormatError(f"{path}: label column must hold integers")
        labels = lab.astype(np.int32)
        values = values[:, :-1]
    bad = ~np.isfinite(values).all(axis=1)
    if bad.any():
        raise DataFormatError(f"{path}: non-finite value on row {rows[int(np.argmax(bad))][0]}")
    if values.shape[1] < 1:
        raise DataFormatError(f"{path}: no data columns")
    return values, labels


# ---------------------------------------------------------------- raw_f32


def read_raw_f32(path):
    raw = _read_bytes(path)
    if len(raw) < RAW_HEADER.size:
        raise DataFormatError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, n, d, flags = RAW_HEADER.unpack_from(raw)
    if magic != RAW_MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r} at byte offset 0")
    need = RAW_HEADER.size + 4 * n * d + (4 * n if flags & FLAG_LABELS else 0)
    if len(raw) < need:
        raise DataFormatError(f"{path}: truncated at byte offset {len(raw)}, expected {need} bytes")
    if len(raw) > need:
        raise DataFormatError(f"{path}: {len(raw) - need} trailing bytes after offset {need}")
    values = np.frombuffer(raw, dtype="<f4", count=n * d, offset=RAW_HEADER.size).reshape(n, d)
    _check_finite_rows(values, path, RAW_HEADER.size, 4)
    labels = None
    if flags & FLAG_LABELS:
        labels = np.frombuffer(raw, dtype="<i4", count=n, offset=RAW_HEADER.size + 4 * n * d)
        labels = labels.astype(np.int32)
    return values.astype(np.float32), labels


def write_raw_f32(path, values, labels=None):
    values = np.ascontiguousarray(values, dtype="<f4")
    if values.ndim != 2:
        raise ValueError("values must be 2-D")
    n, d = values.shape
    flags = FLAG_LABELS if labels is not None else 0
    with open(path, "wb") as fh:
        fh.write(RAW_HEADER.pack(RAW_MAGIC, n, d, flags))
        fh.write(values.tobytes())
        if labels is not None:
            lab = np.ascontiguousarray(labels, dtype="<i4")
            if lab.shape != (n,):
                raise ValueError(f"{lab.shape[0]} labels for {n} points")
            fh.write(lab.tobytes())


# ---------------------------------------------------------------- idx


def read_idx(path):
    """Array stored in the big-endian idx format (gzip allowed)."""
    raw = _read_bytes(path)
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0:
        raise DataFormatError(f"{path}: bad idx magic at byte offset 0")
    code, ndim = raw[2], raw[3]
    if code not in _IDX_TYPES:
        raise DataFormatError(f"{path}: unknown idx element type 0x{code:02x} at byte offset 2")
    if len(raw) < 4 + 4 * ndim:
        raise DataFormatError(f"{path}: truncated idx header")
    dims = struct.unpack_from(f">{ndim}I", raw, 4)
    dt = _IDX_TYPES[code]
    offset = 4 + 4 * ndim
    count = int(np.prod(dims)) if dims else 1
    need = offset + count * dt.itemsize
    if len(raw) < need:
        raise DataFormatError(f"{path}: truncated at byte offset {len(raw)}, expected {need} bytes")
    arr = np.frombuffer(raw, dtype=dt, count=count, offset=offset).reshape(dims)
    return arr, offset


def write_idx(path, array):
    """Test-fixture helper; datasets are only ever read in idx form."""
    array = np.asarray(array)
    codes = {"u1": 0x08, "i1": 0x09, "i4": 0x0C, "f4": 0x0D, "f8": 0x0E}
    code = codes[array.dtype.str[1:]]
    header = bytes([0, 0, code, array.ndim]) + struct.pack(f">{array.ndim}I", *array.shape)
    body = array.astype(array.dtype.newbyteorder(">")).tobytes()
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "wb") as fh:
        fh.write(header + body)


def load_idx(path, labels_path=None):
    arr, offset = read_idx(path)
    if arr.ndim < 2:
        raise DataFormatError(f"{path}: idx image file needs at least 2 dimensions")
    n = arr.shape[0]
    values = arr.reshape(n, -1)
    if arr.dtype == np.uint8:
        values = values.astype(np.float32) / np.float32(255.0)
    else:
        values = values.astype(np.float32)
        _check_finite_rows(values, path, offset, arr.dtype.itemsize)
    labels = None
    if labels_path is not None:
        lab, _ = read_idx(labels_path)
        if lab.ndim != 1 or lab.shape[0] != n:
            raise DataFormatError(f"{labels_path}: {lab.shape} labels do not match {n} images")
        labels = lab.astype(np.int32)
    return LabeledDataset(values, labels)


# ---------------------------------------------------------------- public API

FORMATS = ("csv", "raw_f32", "idx")


def load(path, format, labels=None, labels_path=None):
    """Read a dataset.

    ``labels`` applies to csv: ``True`` treats the last column as integer
    labels, ``None`` infers it from a header whose last name is ``label``.
    ``labels_path`` applies to idx (a separate idx1 label file).
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"input file not found: {path}")
    if format == "csv":
        values, lab = _parse_csv(path, labels)
        return LabeledDataset(values, lab)
    if format == "raw_f32":
        values, lab = read_raw_f32(path)
        return LabeledDataset(values, lab)
    if format == "idx":
        return load_idx(path, labels_path)
    raise ValueError(f"unknown format {format!r}; expected one of {FORMATS}")


def save_embedding(coords, labels, path, format="csv"):
    coords = np.asarray(coords)
    if format == "raw_f32":
        write_raw_f32(path, coords, labels)
        return
    if format != "csv":
        raise ValueError(f"unknown embedding format {format!r}")
    lines = ["x,y,label" if labels is not None else "x,y"]
    values = coords.astype(np.float64).tolist()
    if labels is None:
        lines += [f"{x!r},{y!r}" for x, y in values]
    else:
        lines += [f"{x!r},{y!r},{int(c)}" for (x, y), c in zip(values, np.asarray(labels))]
    Path(path).write_text("\n".join(lines) + "\n")


def plot(coords, labels, path, size=800, radius=1.5):
    """Scatter plot as a standalone SVG, one ``<circle>`` per point."""
    coords = np.asarray(coords, dtype=np.float64)
    if not np.all(np.isfinite(coords)):
        raise ValueError("cannot plot non-finite coordinates")
    margin = 10.0
    lo = coords.min(axis=0)
    span = float(max((coords.max(axis=0) - lo).max(), 1e-12))
    scale = (size - 2 * margin) / span
    px = margin + (coords[:, 0] - lo[0]) * scale
    py = size - margin - (coords[:, 1] - lo[1]) * scale
    if labels is None:
        colors = [PALETTE[0]] * len(coords)
    else:
        colors = [PALETTE[int(c) % len(PALETTE)] for c in np.asarray(labels)]
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
    ]
    out += [
        f'<circle cx="{x:.2f}" cy="{y:.2f}" r="{radius}" fill="{c}"/>'
        for x, y, c in zip(px, py, colors)
    ]
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")
