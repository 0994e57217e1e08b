"""The PIFA tensor container and donor-layer extraction surgery.

File layout (all integers little-endian):

    bytes 0..3    magic "PIFA"
    bytes 4..7    version, u32 (currently 1)
    bytes 8..15   manifest length in bytes, u64
    manifest      UTF-8 JSON: {name: {"dtype": "f32", "shape": [...],
                                      "offset": ..., "byte_len": ...}}
    data          raw little-endian f32 payloads

Offsets are absolute file offsets, each 64-byte aligned, strictly
increasing and non-overlapping. A save -> load -> save round trip is
byte-identical (the manifest is serialized with sorted keys).

Layer tensors are named ``layers.{i}.*`` with 0-based ``i`` on disk;
every user-facing index (extraction, sweeps) is 1-based.
"""

from __future__ import annotations

import json
import re
import struct
from pathlib import Path

import numpy as np

from .errors import ArchiveFormatError, ExtractionError

MAGIC = b"PIFA"
VERSION = 1
ALIGN = 64
_HEADER = struct.Struct("<4sIQ")

_LAYER_RE = re.compile(r"^layers\.(\d+)\.")


def _align(offset: int) -> int:
    return (offset + ALIGN - 1) // ALIGN * ALIGN


def _build_manifest(arrays: dict[str, np.ndarray]):
    """Lay tensors out after the manifest; offsets are absolute, so the
    manifest is iterated to a fixed point (its own length shifts them)."""
    manifest_len = 2
    for _ in range(16):
        offset = _align(_HEADER.size + manifest_len)
        manifest = {}
        for name in sorted(arrays):
            arr = arrays[name]
            byte_len = arr.size * 4
            manifest[name] = {"dtype": "f32", "shape": list(arr.shape),
                              "offset": offset, "byte_len": byte_len}
            offset = _align(offset + byte_len)
        blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
        if len(blob) == manifest_len:
            return blob, manifest
        manifest_len = len(blob)
    raise ArchiveFormatError("manifest layout did not converge")  # pragma: no cover


def save_archive(tensors, path):
    """Write named tensors (ndarrays or objects with .data) to ``path``."""
    arrays = {}
    for name, value in tensors.items():
        arr = np.asarray(getattr(value, "data", value), dtype=np.float32)
        arrays[name] = np.ascontiguousarray(arr)
    blob, manifest = _build_manifest(arrays)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, len(blob)))
        fh.write(blob)
        pos = _HEADER.size + len(blob)
        for name in sorted(arrays):
            entry = manifest[name]
            pad = entry["offset"] - pos
            fh.write(b"\0" * pad)
            raw = arrays[name].astype("<f4", copy=False).tobytes()
            fh.write(raw)
            pos = entry["offset"] + len(raw)


class TensorArchive:
    """A validated, fully loaded archive; immutable once constructed."""

    def __init__(self, manifest: dict, payload: dict[str, np.ndarray], path=None):
        self.manifest = manifest
        self._payload = payload
        self.path = path

    def names(self) -> list[str]:
        return sorted(self._payload)

    def tensor(self, name: str) -> np.ndarray:
        try:
            return self._payload[name].copy()
        except KeyError:
            raise ExtractionError(f"archive has no tensor named {name!r}") from None

    def layer_count(self) -> int:
        indices = {int(m.group(1)) for m in map(_LAYER_RE.match, self._payload) if m}
        return max(indices) + 1 if indices else 0

    def layer_names(self, i: int) -> list[str]:
        prefix = f"layers.{i}."
        return sorted(n for n in self._payload if n.startswith(prefix))

    def non_layer_names(self) -> list[str]:
        return sorted(n for n in self._payload if not _LAYER_RE.match(n))


def load_archive(path) -> TensorArchive:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise ArchiveFormatError(f"truncated file: {len(raw)} bytes is smaller than the header")
    magic, version, manifest_len = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ArchiveFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ArchiveFormatError(f"unsupported version {version} (this build reads {VERSION})")
    if _HEADER.size + manifest_len > len(raw):
        raise ArchiveFormatError(f"manifest_len {manifest_len} runs past end of file")
    try:
        manifest = json.loads(raw[_HEADER.size:_HEADER.size + manifest_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ArchiveFormatError(f"manifest is not valid JSON: {exc}") from exc
    if not isinstance(manifest, dict):
        raise ArchiveFormatError("manifest must be a JSON object")

    payload = {}
    prev_end = _HEADER.size + manifest_len
    for name in sorted(manifest, key=lambda n: manifest[n].get("offset", 0)):
        entry = manifest[name]
        for key in ("dtype", "shape", "offset", "byte_len"):
            if key not in entry:
                raise ArchiveFormatError(f"tensor {name!r}: manifest entry missing {key!r}")
        if entry["dtype"] != "f32":
            raise ArchiveFormatError(f"tensor {name!r}: unsupported dtype {entry['dtype']!r}")
        shape = tuple(int(x) for x in entry["shape"])
        offset, byte_len = int(entry["offset"]), int(entry["byte_len"])
        if int(np.prod(shape)) * 4 != byte_len:
            raise ArchiveFormatError(
                f"tensor {name!r}: byte_len {byte_len} does not match shape {shape}")
        if offset % ALIGN:
            raise ArchiveFormatError(f"tensor {name!r}: offset {offset} is not {ALIGN}-byte aligned")
        if offset < prev_end:
            raise ArchiveFormatError(f"tensor {name!r}: offset {offset} overlaps the previous region")
        if offset + byte_len > len(raw):
            raise ArchiveFormatError(f"tensor {name!r}: data runs past end of file")
        arr = np.frombuffer(raw, dtype="<f4", count=byte_len // 4, offset=offset)
        payload[name] = arr.reshape(shape)
        prev_end = offset + byte_len
    return TensorArchive(manifest, payload, path=path)


def extract_donor_layers(archive: TensorArchive, indices) -> list[dict[str, np.ndarray]]:
    """Pull whole layers by 1-based index; names come back layer-relative.

    extract([k]) reads the on-disk ``layers.{k-1}.*`` group. The archive
    itself is never modified.
    """
    n_layers = archive.layer_count()
    out = []
    for index in indices:
        if not 1 <= index <= n_layers:
            raise ExtractionError(
                f"layer index {index} out of range: archive holds {n_layers} layers (1-based)")
        prefix = f"layers.{index - 1}."
        group = {name[len(prefix):]: archive.tensor(name) for name in archive.layer_names(index - 1)}
        if not group:
            raise ExtractionError(f"archive has no tensors for layer {index}")  # pragma: no cover
        out.append(group)
    return out


def write_layer_archive(archive: TensorArchive, index: int, path):
    """Re-archive one extracted layer (1-based) as ``layers.0.*``."""
    (group,) = extract_donor_layers(archive, [index])
    save_archive({f"layers.0.{name}": arr for name, arr in group.items()}, path)
