"""File formats: the VXTC tensor container, sweep CSVs and P6 heatmaps.

VXTC layout (all integers little-endian)::

    b"VXTC" | u32 version (=1) | u64 manifest_len | manifest (UTF-8 JSON) | payload

Manifest entries carry ``name``, ``kind`` (tensor / netspec / dataset-meta),
``shape``, ``dtype`` ("f64le"), ``offset`` and ``length``; offsets count from
the start of the payload. Writes go to a temporary file that is renamed into
place, so readers never see a partial file.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import struct
import tempfile
from dataclasses import fields
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import network as nw
from .analysis import OffsetRow, StepRow
from .sampler import Video, format_step, parse_step

MAGIC = b"VXTC"
VERSION = 1
_HEADER = struct.Struct("<4sIQ")
DTYPE_TAG = "f64le"


class PersistError(Exception):
    """Base class for unreadable or inconsistent files."""


class BadMagicError(PersistError):
    pass


class VersionMismatchError(PersistError):
    pass


class TruncatedFileError(PersistError):
    pass


class ManifestError(PersistError):
    pass


class DegenerateHeatmapError(ValueError):
    pass


def _atomic_write(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def write_container(path, entries: Sequence[dict], tensors: dict) -> None:
    """Write ``entries`` (manifest dicts without offsets) and the named tensors.

    Tensor entries are generated from ``tensors`` in insertion order and
    appended after ``entries``.
    """
    manifest = [dict(e) for e in entries]
    chunks = []
    offset = 0
    for name, arr in tensors.items():
        data = np.ascontiguousarray(arr, dtype="<f8")
        raw = data.tobytes()
        manifest.append(
            {
                "name": name,
                "kind": "tensor",
                "shape": list(data.shape),
                "dtype": DTYPE_TAG,
                "offset": offset,
                "length": len(raw),
            }
        )
        chunks.append(raw)
        offset += len(raw)
    text = _dumps({"entries": manifest}).encode("utf-8")
    _atomic_write(path, _HEADER.pack(MAGIC, VERSION, len(text)) + text + b"".join(chunks))


def read_container(path) -> tuple[list[dict], dict]:
    """Entries of the manifest and a dict of the tensors they describe."""
    blob = Path(path).read_bytes()
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise BadMagicError(f"{path}: not a VXTC container")
    if len(blob) < _HEADER.size:
        raise TruncatedFileError(f"{path}: header truncated")
    _, version, mlen = _HEADER.unpack_from(blob)
    if version != VERSION:
        raise VersionMismatchError(f"{path}: version {version}, expected {VERSION}")
    start = _HEADER.size
    if start + mlen > len(blob):
        raise TruncatedFileError(f"{path}: manifest extends past end of file")
    try:
        manifest = json.loads(blob[start : start + mlen].decode("utf-8"))
        entries = manifest["entries"]
    except (UnicodeDecodeError, ValueError, KeyError, TypeError) as exc:
        raise ManifestError(f"{path}: unreadable manifest ({exc})") from None
    payload = memoryview(blob)[start + mlen :]
    tensors = {}
    spans = []
    for e in entries:
        if e.get("kind") != "tensor":
            continue
        try:
            shape = tuple(int(s) for s in e["shape"])
            off, length = int(e["offset"]), int(e["length"])
            name = e["name"]
        except (KeyError, ValueError, TypeError) as exc:
            raise ManifestError(f"{path}: bad tensor entry ({exc})") from None
        if e.get("dtype") != DTYPE_TAG:
            raise ManifestError(f"{path}: unsupported dtype {e.get('dtype')!r}")
        if off < 0 or length != 8 * math.prod(shape):
            raise ManifestError(f"{path}: entry {name!r} length does not match its shape")
        if off + length > len(payload):
            raise TruncatedFileError(f"{path}: payload of {name!r} truncated")
        if name in tensors:
            raise ManifestError(f"{path}: duplicate entry {name!r}")
        spans.append((off, off + length, name))
        tensors[name] = np.frombuffer(payload[off : off + length], dtype="<f8").astype(
            np.float64
        ).reshape(shape)
    spans.sort()
    for (_, end, a), (begin, _, b) in zip(spans, spans[1:]):
        if begin < end:
            raise ManifestError(f"{path}: entries {a!r} and {b!r} overlap")
    return entries, tensors


def _meta(entries, kind: str, path) -> dict:
    found = [e for e in entries if e.get("kind") == kind]
    if len(found) != 1:
        raise ManifestError(f"{path}: expected exactly one {kind} entry")
    return found[0]


# ---------------------------------------------------------------------------
# networks

_LAYER_TYPES = {cls.__name__: cls for cls in (nw.Conv3D, nw.ReLU, nw.MaxPool3D, nw.SumPool3D, nw.Flatten, nw.Dense)}


def _layer_to_dict(layer) -> dict:
    d = {"type": type(layer).__name__}
    for f in fields(layer):
        v = getattr(layer, f.name)
        d[f.name] = list(v) if isinstance(v, tuple) else v
    return d


def _layer_from_dict(d: dict):
    d = dict(d)
    cls = _LAYER_TYPES.get(d.pop("type", None))
    if cls is None:
        raise ManifestError("unknown layer type")
    return cls(**d)


def save_network(path, net: nw.NetworkSpec) -> None:
    spec = {
        "input_shape": list(net.input_shape),
        "class_count": net.class_count,
        "layers": [_layer_to_dict(l) for l in net.layers],
    }
    tensors = {}
    for i, p in enumerate(net.params):
        if p is None:
            continue
        tensors[f"layer{i}.weight"] = p.weight
        if p.bias is not None:
            tensors[f"layer{i}.bias"] = p.bias
    entry = {"name": "network", "kind": "netspec", "shape": [], "dtype": DTYPE_TAG,
             "offset": 0, "length": 0, "spec": spec}
    write_container(path, [entry], tensors)


def load_network(path) -> nw.NetworkSpec:
    entries, tensors = read_container(path)
    spec = _meta(entries, "netspec", path).get("spec")
    try:
        layers = [_layer_from_dict(d) for d in spec["layers"]]
        params = []
        for i, layer in enumerate(layers):
            if isinstance(layer, nw.WEIGHTED):
                params.append(nw.Params(tensors[f"layer{i}.weight"], tensors.get(f"layer{i}.bias")))
            else:
                params.append(None)
        return nw.NetworkSpec(tuple(spec["input_shape"]), tuple(layers), tuple(params), spec["class_count"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"{path}: network description inconsistent ({exc})") from None


# ---------------------------------------------------------------------------
# datasets


def save_dataset(path, videos: Sequence[Video], config: dict | None = None) -> None:
    meta = {
        "videos": [
            {"id": str(v.id), "true_class": v.true_class, "pixel_range": list(v.pixel_range),
             "tensor": f"video{i}"}
            for i, v in enumerate(videos)
        ],
        "config": config or {},
    }
    entry = {"name": "dataset", "kind": "dataset-meta", "shape": [], "dtype": DTYPE_TAG,
             "offset": 0, "length": 0, "meta": meta}
    write_container(path, [entry], {f"video{i}": v.frames for i, v in enumerate(videos)})


def load_dataset(path) -> list[Video]:
    entries, tensors = read_container(path)
    meta = _meta(entries, "dataset-meta", path).get("meta")
    try:
        return [
            Video(tensors[m["tensor"]], tuple(m["pixel_range"]), m["id"], m["true_class"])
            for m in meta["videos"]
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"{path}: dataset description inconsistent ({exc})") from None


def dataset_config(path) -> dict:
    entries, _ = read_container(path)
    return _meta(entries, "dataset-meta", path)["meta"].get("config", {})


# ---------------------------------------------------------------------------
# CSV

STEP_COLUMNS = ["step", "B", "C", "D", "L", "A", "topk_acc", "excluded"]
OFFSET_COLUMNS = ["offset", "L", "A", "B", "C", "D", "excluded"]


def fmt_number(v) -> str:
    if isinstance(v, Fraction):
        return format_step(v)
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return format(float(v), ".17g")


def format_csv(columns: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([fmt_number(v) if not isinstance(v, str) else v for v in row])
    return buf.getvalue()


def write_csv(path, columns, rows) -> None:
    _atomic_write(path, format_csv(columns, rows).encode("utf-8"))


def sweep_rows_to_csv(rows: Sequence) -> str:
    if rows and isinstance(rows[0], OffsetRow):
        columns = OFFSET_COLUMNS
    else:
        columns = STEP_COLUMNS
    return format_csv(columns, ([getattr(r, c) for c in columns] for r in rows))


def write_sweep_csv(path, rows: Sequence) -> None:
    _atomic_write(path, sweep_rows_to_csv(rows).encode("utf-8"))


def read_sweep_csv(path) -> list:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        body = list(reader)
    if header == STEP_COLUMNS:
        return [
            StepRow(parse_step(r[0]), *(float(x) for x in r[1:7]), int(r[7])) for r in body
        ]
    if header == OFFSET_COLUMNS:
        return [OffsetRow(int(r[0]), *(float(x) for x in r[1:6]), int(r[6])) for r in body]
    raise ValueError(f"{path}: unknown sweep header {header}")


# ---------------------------------------------------------------------------
# heatmaps


def heatmap_pixels(scores: np.ndarray) -> np.ndarray:
    """uint8 RGB frames ``(T, H, W, 3)`` on a white-to-red ramp.

    Channels are summed, then every frame is scaled by the largest absolute
    score of the whole snippet so frames stay comparable.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim == 4:
        s = s.sum(axis=0)
    peak = np.abs(s).max()
    if not peak > 0:
        raise DegenerateHeatmapError("attribution map is all zero")
    v = np.clip(s / peak, 0.0, 1.0)
    gb = np.floor(255.0 * (1.0 - v) + 0.5).astype(np.uint8)
    rgb = np.empty(s.shape + (3,), dtype=np.uint8)
    rgb[..., 0] = 255
    rgb[..., 1] = gb
    rgb[..., 2] = gb
    return rgb


def ppm_bytes(rgb: np.ndarray) -> bytes:
    h, w, _ = rgb.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(rgb).tobytes()


def render_heatmap(amap, directory, prefix: str = "frame") -> list[Path]:
    """One P6 file per frame, named ``<prefix>_01.ppm`` onwards."""
    scores = amap.scores if hasattr(amap, "scores") else amap
    frames = heatmap_pixels(scores)
    directory = Path(directory)
    paths = []
    for t, rgb in enumerate(frames, start=1):
        path = directory / f"{prefix}_{t:02d}.ppm"
        _atomic_write(path, ppm_bytes(rgb))
        paths.append(path)
    return paths
