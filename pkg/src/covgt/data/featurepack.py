"""Binary container for pre-extracted per-video features.

Layout (all integers little-endian)::

    b"CVGT" | uint32 version | uint32 header_len | header JSON (utf-8) | sections

The JSON header holds ``magic, version, video_id, l_v, n_raw, dim_a, dim_r,
frame_w, frame_h`` and a ``sections`` list naming each array with its shape
and byte length. Sections follow in declared order as row-major little-endian
float32: ``frame_appearance [l_v, dim_a]``, ``region_features [l_v, n_raw,
dim_r]``, ``boxes [l_v, n_raw, 4]``. Regions are stored in descending detector
confidence, so the first ``n`` of a frame are its top-n detections.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import BadMagicError, FeaturePackError, NonFiniteError, TruncatedPackError

MAGIC = b"CVGT"
VERSION = 1
_PREFIX = struct.Struct("<4sII")
_DTYPE = np.dtype("<f4")
SECTION_ORDER = ("frame_appearance", "region_features", "boxes")


@dataclass
class VideoFeaturePack:
    video_id: str
    frame_appearance: np.ndarray  # [l_v, dim_a]
    region_features: np.ndarray  # [l_v, n_raw, dim_r]
    boxes: np.ndarray  # [l_v, n_raw, 4]
    frame_w: float
    frame_h: float

    @property
    def frame_count(self) -> int:
        return self.frame_appearance.shape[0]

    @property
    def n_raw(self) -> int:
        return self.region_features.shape[1]

    @property
    def dim_a(self) -> int:
        return self.frame_appearance.shape[1]

    @property
    def dim_r(self) -> int:
        return self.region_features.shape[2]

    def header(self) -> dict:
        return {
            "magic": MAGIC.decode(), "version": VERSION, "video_id": self.video_id,
            "l_v": self.frame_count, "n_raw": self.n_raw, "dim_a": self.dim_a, "dim_r": self.dim_r,
            "frame_w": self.frame_w, "frame_h": self.frame_h,
        }

    def validate(self, n: int | None = None) -> None:
        l_v = self.frame_count
        expected = {
            "frame_appearance": (l_v, self.dim_a),
            "region_features": (l_v, self.n_raw, self.dim_r),
            "boxes": (l_v, self.n_raw, 4),
        }
        for name, shape in expected.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise FeaturePackError(f"{self.video_id}: {name} has shape {arr.shape}, expected {shape}")
            if not np.isfinite(arr).all():
                raise NonFiniteError(f"{self.video_id}: non-finite values in {name}")
        if n is not None and self.n_raw < n:
            raise FeaturePackError(f"{self.video_id}: {self.n_raw} regions stored, {n} required")


def pack_bytes(pack: VideoFeaturePack) -> bytes:
    pack.validate()
    arrays = [np.ascontiguousarray(getattr(pack, name), dtype=_DTYPE) for name in SECTION_ORDER]
    header = pack.header()
    header["sections"] = [{"name": name, "shape": list(a.shape), "nbytes": a.nbytes}
                          for name, a in zip(SECTION_ORDER, arrays)]
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    return _PREFIX.pack(MAGIC, VERSION, len(hbytes)) + hbytes + b"".join(a.tobytes() for a in arrays)


def write_feature_pack(pack: VideoFeaturePack, path) -> Path:
    path = Path(path)
    path.write_bytes(pack_bytes(pack))
    return path


def parse_pack(data: bytes, source: str = "<bytes>") -> VideoFeaturePack:
    if len(data) < _PREFIX.size:
        raise TruncatedPackError(f"{source}: file shorter than the fixed prefix")
    magic, version, hlen = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise BadMagicError(f"{source}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FeaturePackError(f"{source}: unsupported version {version}")
    start = _PREFIX.size
    if len(data) < start + hlen:
        raise TruncatedPackError(f"{source}: header truncated")
    try:
        header = json.loads(data[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FeaturePackError(f"{source}: unreadable header ({exc})") from exc
    offset = start + hlen
    arrays = {}
    for sec in header["sections"]:
        shape = tuple(sec["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * _DTYPE.itemsize
        if nbytes != sec["nbytes"]:
            raise FeaturePackError(f"{source}: section {sec['name']} length does not match its shape")
        if len(data) < offset + nbytes:
            raise TruncatedPackError(f"{source}: section {sec['name']} truncated")
        arr = np.frombuffer(data, dtype=_DTYPE, count=nbytes // _DTYPE.itemsize, offset=offset).reshape(shape)
        if not np.isfinite(arr).all():
            raise NonFiniteError(f"{source}: non-finite values in {sec['name']}")
        arrays[sec["name"]] = arr.copy()
        offset += nbytes
    if offset != len(data):
        raise FeaturePackError(f"{source}: {len(data) - offset} trailing bytes after the last section")
    missing = [s for s in SECTION_ORDER if s not in arrays]
    if missing:
        raise FeaturePackError(f"{source}: missing sections {missing}")
    pack = VideoFeaturePack(
        video_id=header["video_id"], frame_w=header["frame_w"], frame_h=header["frame_h"], **arrays)
    dims = {"l_v": pack.frame_count, "n_raw": pack.n_raw, "dim_a": pack.dim_a, "dim_r": pack.dim_r}
    for key, val in dims.items():
        if header[key] != val:
            raise FeaturePackError(f"{source}: header {key}={header[key]} but arrays give {val}")
    pack.validate()
    return pack


def load_feature_pack(path) -> VideoFeaturePack:
    path = Path(path)
    return parse_pack(path.read_bytes(), str(path))


def read_header(path) -> dict:
    data = Path(path).read_bytes()
    magic, version, hlen = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    return json.loads(data[_PREFIX.size:_PREFIX.size + hlen])
