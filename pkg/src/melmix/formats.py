"""Binary file formats: TFG1 spectrograms, TVCG parameter fields, TVDS datasets.

All integers are u32 little-endian, all floats are float32 little-endian.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError
from .synth import ConditionedDataset
from .tvcgmm import TvcGmmField

__all__ = [
    "read_tfg1",
    "write_tfg1",
    "read_tfg1_bytes",
    "tfg1_bytes",
    "read_tvcg",
    "write_tvcg",
    "read_tvds",
    "write_tvds",
]

_TFG1 = b"TFG1"
_TVCG = b"TVCG"
_TVDS = b"TVDS"


def _take(buf: bytes, offset: int, n: int, what: str):
    if offset + n > len(buf):
        raise FormatError(f"truncated file while reading {what}")
    return buf[offset : offset + n], offset + n


def tfg1_bytes(values: np.ndarray) -> bytes:
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError("TFG1 payload must be a 2-D grid")
    T, F = values.shape
    return _TFG1 + struct.pack("<II", T, F) + values.astype("<f4").tobytes()


def read_tfg1_bytes(buf: bytes, offset: int = 0):
    """Parse one TFG1 payload; returns (values, next_offset)."""
    magic, offset = _take(buf, offset, 4, "TFG1 magic")
    if magic != _TFG1:
        raise FormatError(f"bad TFG1 magic: {magic!r}")
    header, offset = _take(buf, offset, 8, "TFG1 header")
    T, F = struct.unpack("<II", header)
    raw, offset = _take(buf, offset, 4 * T * F, "TFG1 values")
    values = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(T, F)
    return values, offset


def write_tfg1(path, values: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(tfg1_bytes(values))


def read_tfg1(path) -> np.ndarray:
    with open(path, "rb") as fh:
        buf = fh.read()
    values, offset = read_tfg1_bytes(buf)
    if offset != len(buf):
        raise FormatError("trailing bytes after TFG1 payload")
    return values


def write_tvcg(path, field: TvcGmmField) -> None:
    T, F = field.shape
    K = field.n_components
    # Per bin (row-major), per component: logit, mu[3], d[3], l21, l31, l32.
    records = np.concatenate(
        [field.logits[..., None], field.means, field.diag_raw, field.offdiag], axis=-1
    )
    with open(path, "wb") as fh:
        fh.write(_TVCG + struct.pack("<IIII", 1, T, F, K))
        fh.write(records.astype("<f4").tobytes())


def read_tvcg(path) -> TvcGmmField:
    with open(path, "rb") as fh:
        buf = fh.read()
    magic, offset = _take(buf, 0, 4, "TVCG magic")
    if magic != _TVCG:
        raise FormatError(f"bad TVCG magic: {magic!r}")
    header, offset = _take(buf, offset, 16, "TVCG header")
    version, T, F, K = struct.unpack("<IIII", header)
    if version != 1:
        raise FormatError(f"unsupported TVCG version {version}")
    raw, offset = _take(buf, offset, 4 * T * F * K * 10, "TVCG records")
    if offset != len(buf):
        raise FormatError("trailing bytes after TVCG records")
    records = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(T, F, K, 10)
    return TvcGmmField(
        logits=records[..., 0],
        means=records[..., 1:4],
        diag_raw=records[..., 4:7],
        offdiag=records[..., 7:10],
    )


def write_tvds(path, dataset: ConditionedDataset) -> None:
    with open(path, "wb") as fh:
        fh.write(_TVDS + struct.pack("<II", 1, len(dataset)))
        for cond, values in zip(dataset.condition_ids, dataset.values):
            fh.write(struct.pack("<I", int(cond)))
            fh.write(tfg1_bytes(values))


def read_tvds(path) -> ConditionedDataset:
    with open(path, "rb") as fh:
        buf = fh.read()
    magic, offset = _take(buf, 0, 4, "TVDS magic")
    if magic != _TVDS:
        raise FormatError(f"bad TVDS magic: {magic!r}")
    header, offset = _take(buf, offset, 8, "TVDS header")
    version, n_records = struct.unpack("<II", header)
    if version != 1:
        raise FormatError(f"unsupported TVDS version {version}")
    cond_ids = np.empty(n_records, dtype=np.int64)
    grids = []
    for i in range(n_records):
        raw, offset = _take(buf, offset, 4, f"record {i} condition id")
        cond_ids[i] = struct.unpack("<I", raw)[0]
        values, offset = read_tfg1_bytes(buf, offset)
        grids.append(values)
    if offset != len(buf):
        raise FormatError("trailing bytes after TVDS records")
    if n_records == 0:
        raise FormatError("TVDS file contains no records")
    shapes = {g.shape for g in grids}
    if len(shapes) != 1:
        raise FormatError("TVDS records have inconsistent grid shapes")
    return ConditionedDataset(cond_ids, np.stack(grids))
