"""File formats: volumes, landmark lists and configuration files.

A volume is a small text header next to a raw little-endian data file::

    NDims = 2
    DimSize = 64 48
    ElementSpacing = 1 1
    ElementType = uint8
    ElementDataFile = image.raw

DimSize and ElementSpacing list axis 0 first, matching the array axes.
Integer data is scaled to [0, 1] by the type maximum on read.
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass

import numpy as np

from .image import FuzzyImage

ELEMENT_TYPES = {"uint8": np.dtype("<u1"), "uint16": np.dtype("<u2"), "float32": np.dtype("<f4")}
_HEADER_KEYS = ("NDims", "DimSize", "ElementSpacing", "ElementType", "ElementDataFile")


class FormatError(ValueError):
    pass


@dataclass(frozen=True)
class VolumeHeader:
    ndims: int
    dims: tuple[int, ...]
    spacing: tuple[float, ...]
    element_type: str
    data_file: str

    def __post_init__(self):
        if self.ndims not in (2, 3):
            raise FormatError("NDims must be 2 or 3")
        if len(self.dims) != self.ndims or len(self.spacing) != self.ndims:
            raise FormatError("DimSize and ElementSpacing need NDims entries")
        if any(d < 1 for d in self.dims):
            raise FormatError("DimSize entries must be positive")
        if any(not s > 0 for s in self.spacing):
            raise FormatError("ElementSpacing entries must be positive")
        if self.element_type not in ELEMENT_TYPES:
            raise FormatError(f"ElementType must be one of {sorted(ELEMENT_TYPES)}")

    @property
    def dtype(self) -> np.dtype:
        return ELEMENT_TYPES[self.element_type]

    @property
    def nbytes(self) -> int:
        return int(np.prod(self.dims)) * self.dtype.itemsize

    def text(self) -> str:
        return "".join([
            f"NDims = {self.ndims}\n",
            f"DimSize = {' '.join(str(d) for d in self.dims)}\n",
            f"ElementSpacing = {' '.join(format(s, '.17g') for s in self.spacing)}\n",
            f"ElementType = {self.element_type}\n",
            f"ElementDataFile = {self.data_file}\n",
        ])


def parse_header(text: str) -> VolumeHeader:
    fields = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise FormatError(f"line {lineno}: expected 'key = value', got {raw!r}")
        if key not in _HEADER_KEYS:
            raise FormatError(f"line {lineno}: unknown key {key!r}")
        fields[key] = value.strip()
    missing = [k for k in _HEADER_KEYS if k not in fields]
    if missing:
        raise FormatError(f"header is missing {', '.join(missing)}")
    try:
        return VolumeHeader(int(fields["NDims"]),
                            tuple(int(v) for v in fields["DimSize"].split()),
                            tuple(float(v) for v in fields["ElementSpacing"].split()),
                            fields["ElementType"], fields["ElementDataFile"])
    except ValueError as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"malformed header value: {exc}") from None


def _data_path(header_path, header: VolumeHeader) -> str:
    return os.path.join(os.path.dirname(os.path.abspath(header_path)), header.data_file)


def read_raw(path) -> tuple[np.ndarray, VolumeHeader]:
    """Raw array (file dtype) and header."""
    with open(path) as fh:
        header = parse_header(fh.read())
    with open(_data_path(path, header), "rb") as fh:
        data = fh.read()
    if len(data) != header.nbytes:
        raise FormatError(f"raw file holds {len(data)} bytes, header declares {header.nbytes}")
    arr = np.frombuffer(data, dtype=header.dtype).reshape(header.dims)
    return arr, header


def read_volume(path) -> FuzzyImage:
    arr, header = read_raw(path)
    if header.element_type == "float32":
        values = arr.astype(np.float64)
    else:
        values = arr.astype(np.float64) / float(np.iinfo(header.dtype).max)
    return FuzzyImage(values, header.spacing)


def read_mask(path) -> np.ndarray:
    arr, _ = read_raw(path)
    return arr != 0


def read_labels(path) -> np.ndarray:
    arr, _ = read_raw(path)
    return np.asarray(arr)


def write_volume(path, values, spacing=None, element_type: str = "float32") -> VolumeHeader:
    """Write a header and its raw file (named after the header, extension .raw).

    Float data in [0, 1] is scaled by the type maximum for integer types.
    """
    if isinstance(values, FuzzyImage):
        spacing = values.spacing if spacing is None else spacing
        values = values.values
    arr = np.asarray(values)
    spacing = (1.0,) * arr.ndim if spacing is None else tuple(float(s) for s in spacing)
    raw_name = os.path.splitext(os.path.basename(path))[0] + ".raw"
    header = VolumeHeader(arr.ndim, tuple(arr.shape), spacing, element_type, raw_name)
    dtype = header.dtype
    if element_type == "float32":
        data = arr.astype(dtype)
    elif arr.dtype == bool or np.issubdtype(arr.dtype, np.integer):
        data = arr.astype(dtype)
    else:
        top = np.iinfo(dtype).max
        data = np.rint(np.clip(arr, 0.0, 1.0) * top).astype(dtype)
    with open(path, "w") as fh:
        fh.write(header.text())
    with open(_data_path(path, header), "wb") as fh:
        fh.write(np.ascontiguousarray(data).tobytes())
    return header


def read_pgm(path) -> FuzzyImage:
    """Binary or plain PGM, scaled by its maxval; rows become axis 0."""
    with open(path, "rb") as fh:
        data = fh.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic == b"P5":
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        body = data[pos + 1:pos + 1 + w * h * dtype.itemsize]
        if len(body) != w * h * dtype.itemsize:
            raise FormatError("truncated PGM data")
        arr = np.frombuffer(body, dtype=dtype)
    elif magic == b"P2":
        arr = np.array(data[pos:].split()[: w * h], dtype=np.int64)
        if arr.size != w * h:
            raise FormatError("truncated PGM data")
    else:
        raise FormatError("not a PGM file")
    return FuzzyImage(arr.reshape(h, w).astype(np.float64) / maxval)


# -- landmarks ---------------------------------------------------------------

def read_landmarks(path):
    """Points (N, n) and parity labels (or None) from a comma-separated file."""
    from .evaluation import LandmarkSet

    rows, labels = [], []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(",")]
            label = None
            if parts[-1].lower() in ("odd", "even"):
                label = parts.pop().lower()
            try:
                rows.append([float(p) for p in parts])
            except ValueError:
                raise FormatError(f"line {lineno}: non-numeric coordinate in {raw!r}") from None
            labels.append(label)
            if len(rows[-1]) != len(rows[0]):
                raise FormatError(f"line {lineno}: expected {len(rows[0])} coordinates")
    if not rows:
        raise FormatError("landmark file is empty")
    if any(lbl is None for lbl in labels) and any(lbl is not None for lbl in labels):
        raise FormatError("parity labels must be given for all landmarks or none")
    parity = None if labels[0] is None else labels
    return LandmarkSet(np.asarray(rows), parity)


def write_landmarks(path, points, parity=None) -> None:
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    with open(path, "w") as fh:
        for i, p in enumerate(pts):
            cols = [format(float(v), ".17g") for v in p]
            if parity is not None:
                cols.append(str(parity[i]))
            fh.write(",".join(cols) + "\n")


# -- configuration -----------------------------------------------------------

_INT_TUPLES = ("factors", "level_iters")
_FLOAT_TUPLES = ("sigmas", "level_steps")
_OPTIONAL = ("dmax", "level_steps", "level_iters")


def _convert(value: str, default, key: str):
    v = value.strip()
    if key in _OPTIONAL and v.lower() in ("none", "auto"):
        return None
    if isinstance(default, bool):
        low = v.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise FormatError(f"{key}: expected a boolean, got {value!r}")
    if key in _INT_TUPLES or key in _FLOAT_TUPLES:
        conv = int if key in _INT_TUPLES else float
        return tuple(conv(x) for x in v.replace(",", " ").split())
    if isinstance(default, int):
        return int(v)
    if isinstance(default, float) or key == "dmax":
        return float(v)
    return v


def parse_config(text: str, base=None):
    """Apply ``key = value`` lines to a RegistrationConfig; unknown keys are errors."""
    from .registration import RegistrationConfig

    base = base or RegistrationConfig()
    known = {f.name: getattr(base, f.name) for f in dataclasses.fields(base)}
    updates = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise FormatError(f"line {lineno}: expected 'key = value', got {raw!r}")
        if key not in known:
            raise FormatError(f"line {lineno}: unknown config key {key!r}")
        try:
            updates[key] = _convert(value, known[key], key)
        except ValueError as exc:
            raise FormatError(f"line {lineno}: {exc}") from None
    try:
        return dataclasses.replace(base, **updates)
    except ValueError as exc:
        raise FormatError(str(exc)) from None


def read_config(path, base=None):
    with open(path) as fh:
        return parse_config(fh.read(), base)
