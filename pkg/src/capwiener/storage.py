"""Flat-file persistence: binary masks and fields, JSONL report records, manifests.

Mask file: 16-byte header ``<4sHHd`` (magic ``CWMK``, N, resolution, spacing),
then N float64 lower corner coordinates, then uint32 run lengths of the
flattened (C order) indicator, alternating False/True and starting with False.

Field file: header ``<4sHHdQ`` (magic ``CWFD``, N, resolution, spacing, count),
N float64 lower corner coordinates, then ``count`` float64 values.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import MissingReport
from .report import CheckReport, _plain
from .setgeom import GridContext, GridField, GridMask

MASK_MAGIC = b"CWMK"
FIELD_MAGIC = b"CWFD"
_MASK_HEADER = struct.Struct("<4sHHd")
_FIELD_HEADER = struct.Struct("<4sHHdQ")


def _cube_context(N: int, resolution: int, h: float, lo) -> GridContext:
    lo = tuple(float(v) for v in lo)
    hi = tuple(v + resolution * h for v in lo)
    return GridContext(lo, hi, resolution)


def _resolution(ctx: GridContext) -> int:
    res = set(np.atleast_1d(ctx.resolution).tolist())
    if len(res) != 1:
        raise ValueError("binary export needs a cubic grid")
    return int(res.pop())


def run_lengths(flat: np.ndarray) -> np.ndarray:
    flat = np.asarray(flat, dtype=bool).ravel()
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    edges = np.concatenate([[0], change, [flat.size]])
    runs = np.diff(edges)
    if flat.size and flat[0]:
        runs = np.concatenate([[0], runs])
    return runs.astype(np.uint32)


def write_mask(path, mask: GridMask) -> None:
    ctx = mask.context
    res = _resolution(ctx)
    with open(path, "wb") as fh:
        fh.write(_MASK_HEADER.pack(MASK_MAGIC, ctx.dimension, res, ctx.h))
        fh.write(np.asarray(ctx.lo, dtype="<f8").tobytes())
        fh.write(run_lengths(mask.indicator).astype("<u4").tobytes())


def read_mask(path) -> GridMask:
    raw = Path(path).read_bytes()
    magic, N, res, h = _MASK_HEADER.unpack_from(raw, 0)
    if magic != MASK_MAGIC:
        raise ValueError("not a mask file")
    off = _MASK_HEADER.size
    lo = np.frombuffer(raw, "<f8", N, off)
    runs = np.frombuffer(raw, "<u4", offset=off + 8 * N)
    ctx = _cube_context(N, res, h, lo)
    vals = np.repeat(np.arange(runs.size) % 2 == 1, runs.astype(np.int64))
    return GridMask(ctx, vals.reshape(ctx.shape))


def write_field(path, field: GridField) -> None:
    ctx = field.context
    res = _resolution(ctx)
    vals = np.asarray(field.values, dtype="<f8").ravel()
    with open(path, "wb") as fh:
        fh.write(_FIELD_HEADER.pack(FIELD_MAGIC, ctx.dimension, res, ctx.h, vals.size))
        fh.write(np.asarray(ctx.lo, dtype="<f8").tobytes())
        fh.write(vals.tobytes())


def read_field(path) -> GridField:
    raw = Path(path).read_bytes()
    magic, N, res, h, count = _FIELD_HEADER.unpack_from(raw, 0)
    if magic != FIELD_MAGIC:
        raise ValueError("not a field file")
    off = _FIELD_HEADER.size
    lo = np.frombuffer(raw, "<f8", N, off)
    vals = np.frombuffer(raw, "<f8", count, off + 8 * N).copy()
    ctx = _cube_context(N, res, h, lo)
    return GridField(ctx, vals.reshape(ctx.shape))


class RecordWriter:
    """Appends one JSON record per line; the only writer of a run's result file."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)

    def append(self, record: dict) -> None:
        with open(self.path, "a") as fh:
            fh.write(json.dumps(_plain(record), sort_keys=True) + "\n")


def read_records(path) -> list:
    p = Path(path)
    if not p.exists():
        raise MissingReport(f"no record file at {p}")
    return [json.loads(line) for line in p.read_text().splitlines() if line.strip()]


def read_reports(path) -> list:
    return [CheckReport.from_record(r["report"]) for r in read_records(path) if "report" in r]


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n")


def read_json(path):
    p = Path(path)
    if not p.exists():
        raise MissingReport(f"missing {p}")
    return json.loads(p.read_text())


def write_table(path, header, rows, sep: str = "\t") -> None:
    lines = [sep.join(header)]
    lines += [sep.join(_cell(v) for v in row) for row in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def _cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)
