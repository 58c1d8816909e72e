"""EEGB: little-endian binary container for raw recordings.

Layout::

    b"EEGB" | u32 version (=1) | u32 record_count
    per record: u32 subject_id, u32 class_id, u32 image_id,
                u32 channels, u32 timesteps,
                channels*timesteps f32 samples, row-major
"""

from __future__ import annotations

import os
import struct
from typing import Sequence

import numpy as np

from .data import DataError, EegRecording

MAGIC = b"EEGB"
VERSION = 1
_HEADER = struct.Struct("<4sII")
_RECORD = struct.Struct("<5I")
MAX_VALUES = 2**31  # per record


class EegbFormatError(DataError):
    pass


def encode_eegb(recordings: Sequence[EegRecording]) -> bytes:
    parts = [_HEADER.pack(MAGIC, VERSION, len(recordings))]
    for r in recordings:
        ch, ts = r.samples.shape
        as32 = np.ascontiguousarray(r.samples, dtype="<f4")
        if not np.array_equal(as32.astype(np.float64), np.asarray(r.samples, dtype=np.float64)):
            raise ValueError(f"recording {r.rec_id} is not exactly representable as float32")
        for v in (r.subject_id, r.class_id, r.image_id):
            if not 0 <= v < 2**32:
                raise ValueError(f"identifier {v} does not fit in u32")
        parts.append(_RECORD.pack(r.subject_id, r.class_id, r.image_id, ch, ts))
        parts.append(as32.tobytes())
    return b"".join(parts)


def decode_eegb(buf: bytes) -> list[EegRecording]:
    if len(buf) < _HEADER.size:
        raise EegbFormatError("truncated file: header incomplete")
    magic, version, count = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise EegbFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise EegbFormatError(f"unsupported EEGB version {version}")
    off = _HEADER.size
    out = []
    for i in range(count):
        if off + _RECORD.size > len(buf):
            raise EegbFormatError(f"truncated file: record {i} header missing")
        subj, cls, img, ch, ts = _RECORD.unpack_from(buf, off)
        off += _RECORD.size
        n = ch * ts
        if ch == 0 or ts == 0 or n > MAX_VALUES:
            raise EegbFormatError(f"record {i}: invalid dimensions {ch}x{ts}")
        if off + 4 * n > len(buf):
            raise EegbFormatError(f"truncated file: record {i} needs {4 * n} sample bytes")
        samples = np.frombuffer(buf, dtype="<f4", count=n, offset=off).reshape(ch, ts).astype(np.float32)
        off += 4 * n
        out.append(EegRecording(samples, subj, cls, img))
    if off != len(buf):
        raise EegbFormatError(f"{len(buf) - off} trailing bytes after {count} records")
    return out


def save_eegb(path: str | os.PathLike, recordings: Sequence[EegRecording]) -> int:
    data = encode_eegb(recordings)
    with open(path, "wb") as fh:
        fh.write(data)
    return len(data)


def load_eegb(path: str | os.PathLike) -> list[EegRecording]:
    with open(path, "rb") as fh:
        return decode_eegb(fh.read())
