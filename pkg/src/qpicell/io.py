"""File formats: QPIF1 field containers, PNG images, CSV tables, digests.

QPIF1 layout: the 5 magic bytes ``QPIF1``, a little-endian uint32 header
length, a UTF-8 JSON header ``{width, height, dtype, pixel_pitch_um, units}``
and the raw little-endian payload (``f32`` or interleaved ``c64``).
"""

from __future__ import annotations

import csv
import hashlib
import json
import struct
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

from .errors import InvalidInputError

MAGIC = b"QPIF1"
_DTYPES = {"f32": np.dtype("<f4"), "c64": np.dtype("<c8")}


def write_field(path, values, pixel_pitch_um: float = 3.5, units: str = "") -> Path:
    path = Path(path)
    a = np.asarray(values)
    if a.ndim != 2:
        raise InvalidInputError("only 2D fields can be stored")
    kind = "c64" if np.iscomplexobj(a) else "f32"
    header = json.dumps({"width": int(a.shape[1]), "height": int(a.shape[0]), "dtype": kind,
                         "pixel_pitch_um": float(pixel_pitch_um), "units": units},
                        sort_keys=True).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(np.ascontiguousarray(a, dtype=_DTYPES[kind]).tobytes())
    return path


def read_field_with_header(path) -> tuple[np.ndarray, dict]:
    raw = Path(path).read_bytes()
    if raw[:5] != MAGIC:
        raise InvalidInputError(f"{path}: not a QPIF1 file")
    (hlen,) = struct.unpack("<I", raw[5:9])
    header = json.loads(raw[9:9 + hlen].decode("utf-8"))
    dt = _DTYPES.get(header.get("dtype"))
    if dt is None:
        raise InvalidInputError(f"{path}: unsupported dtype {header.get('dtype')!r}")
    h, w = int(header["height"]), int(header["width"])
    payload = raw[9 + hlen:]
    if len(payload) != h * w * dt.itemsize:
        raise InvalidInputError(f"{path}: payload size does not match {h}x{w} {header['dtype']}")
    a = np.frombuffer(payload, dtype=dt).reshape(h, w)
    out = a.astype(np.complex128 if dt.kind == "c" else np.float64)
    return out, header


def read_field(path) -> np.ndarray:
    return read_field_with_header(path)[0]


def write_rgb_png(path, rgb) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(rgb, dtype=np.uint8), mode="RGB").save(path, format="PNG")
    return path


def read_rgb_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def write_mask_png(path, mask) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(mask).astype(bool)).convert("1").save(path, format="PNG")
    return path


def read_mask_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return (np.asarray(im.convert("L")) > 0).astype(np.uint8)


def fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.9g}"
    return str(v)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def read_csv(path) -> list[dict[str, str]]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def write_json(path, payload) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
