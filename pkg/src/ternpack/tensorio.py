"""Tensor and artifact IO.

Dense weights and calibration activations live in raw little-endian
row-major binaries described by a JSON manifest; quantized tensors persist
in the self-describing PT2T container (checksummed, bit-exact round trip).

Manifest schema::

    {"entries": [{"name": str, "shape": [n, m], "dtype": "f32"|"f16",
                  "path": str, "calib_path": str (optional)}]}

Paths are relative to the manifest file. Calibration payloads use the
entry's dtype; the sample count is inferred from the file size, which must
be a multiple of m * dtype-size.
"""

from __future__ import annotations

import json
import re
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContainerError, ManifestError, TensorDataError
from .ternary import (
    SCALE_DTYPES,
    GridParams,
    PackedTernaryTensor,
    n_groups_for,
    payload_nbytes,
)
from .validation import check_finite

MAGIC = b"PT2T"
VERSION = 1
# magic + u16 version + u32 n + u32 m + u32 group_size + u8 scale dtype
_HEADER = struct.Struct("<4sHIIIB")
_SCALE_CODE = {"f32": 0, "f16": 1}
_SCALE_NAME = {v: k for k, v in _SCALE_CODE.items()}
_SCALE_SIZE = {"f32": 4, "f16": 2}

_DTYPES = {"f32": np.dtype("<f4"), "f16": np.dtype("<f2")}
_NAME_RE = re.compile(r"^[\w.\-]+$")


@dataclass(frozen=True)
class ManifestEntry:
    name: str
    shape: tuple[int, int]
    dtype: str
    path: str
    calib_path: str | None = None


@dataclass
class LayerManifest:
    """Validated collection of named weight tensors (+ optional calibration)."""

    root: Path
    entries: list[ManifestEntry]

    def names(self) -> list[str]:
        return [e.name for e in self.entries]

    def entry(self, name: str) -> ManifestEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise ManifestError(f"no tensor named {name!r} in manifest")


def _entry_from_json(i: int, obj) -> ManifestEntry:
    if not isinstance(obj, dict):
        raise ManifestError(f"entry {i}: expected an object")
    try:
        name = obj["name"]
        shape = obj["shape"]
        dtype = obj["dtype"]
        path = obj["path"]
    except KeyError as exc:
        raise ManifestError(f"entry {i}: missing field {exc.args[0]!r}") from None
    if not isinstance(name, str) or not _NAME_RE.match(name):
        raise ManifestError(f"entry {i}: invalid tensor name {name!r}")
    if (not isinstance(shape, list) or len(shape) != 2
            or not all(isinstance(s, int) and s > 0 for s in shape)):
        raise ManifestError(f"entry {name!r}: shape must be two positive integers")
    if dtype not in _DTYPES:
        raise ManifestError(f"entry {name!r}: dtype must be one of {sorted(_DTYPES)}")
    calib = obj.get("calib_path")
    if calib is not None and not isinstance(calib, str):
        raise ManifestError(f"entry {name!r}: calib_path must be a string")
    return ManifestEntry(name, (shape[0], shape[1]), dtype, path, calib)


def load_manifest(path) -> LayerManifest:
    """Parse and validate a manifest; checks referenced files exist with the
    byte length implied by shape and dtype."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("entries"), list):
        raise ManifestError(f"manifest {path}: expected an object with an 'entries' list")

    root = path.parent
    entries = [_entry_from_json(i, e) for i, e in enumerate(doc["entries"])]

    seen: set[str] = set()
    for e in entries:
        if e.name in seen:
            raise ManifestError(f"duplicate tensor name {e.name!r}")
        seen.add(e.name)

    for e in entries:
        n, m = e.shape
        item = _DTYPES[e.dtype].itemsize
        f = root / e.path
        if not f.is_file():
            raise ManifestError(f"entry {e.name!r}: missing file {f}")
        want = n * m * item
        got = f.stat().st_size
        if got != want:
            raise ManifestError(
                f"entry {e.name!r}: size mismatch for {f} (got {got} bytes, want {want})")
        if e.calib_path is not None:
            cf = root / e.calib_path
            if not cf.is_file():
                raise ManifestError(f"entry {e.name!r}: missing calibration file {cf}")
            cbytes = cf.stat().st_size
            if cbytes == 0 or cbytes % (m * item) != 0:
                raise ManifestError(
                    f"entry {e.name!r}: calibration file {cf} holds {cbytes} bytes, "
                    f"not a positive multiple of m*itemsize = {m * item}")
    return LayerManifest(root=root, entries=entries)


def write_manifest(manifest: LayerManifest, path) -> None:
    doc = {
        "entries": [
            {
                "name": e.name,
                "shape": list(e.shape),
                "dtype": e.dtype,
                "path": e.path,
                **({"calib_path": e.calib_path} if e.calib_path else {}),
            }
            for e in manifest.entries
        ]
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _read_raw(path: Path, dtype: str, name: str) -> np.ndarray:
    data = np.fromfile(path, dtype=_DTYPES[dtype])
    wide = data.astype(np.float64)
    check_finite(wide, name)
    return wide


def load_tensor(manifest: LayerManifest, name: str) -> np.ndarray:
    """Load a weight tensor as (n, m) float64. f16/f32 payloads are widened
    per IEEE-754; NaN/Inf is rejected with the offending flat index."""
    e = manifest.entry(name)
    data = _read_raw(manifest.root / e.path, e.dtype, f"tensor {name!r}")
    return data.reshape(e.shape)


def load_calibration(manifest: LayerManifest, name: str) -> np.ndarray | None:
    """Load calibration activations as (s, m) float64, or None when the entry
    declares none."""
    e = manifest.entry(name)
    if e.calib_path is None:
        return None
    data = _read_raw(manifest.root / e.calib_path, e.dtype, f"calibration for {name!r}")
    m = e.shape[1]
    if data.size % m != 0:
        raise TensorDataError(
            f"calibration for {name!r}: {data.size} values not divisible by m={m}")
    return data.reshape(-1, m)


def write_packed(tensor: PackedTernaryTensor, path) -> None:
    """Serialize to the PT2T container (little-endian, CRC32-checksummed)."""
    n, m = tensor.shape
    header = _HEADER.pack(MAGIC, VERSION, n, m, tensor.group_size,
                          _SCALE_CODE[tensor.scale_dtype])
    perm_bytes = tensor.permutation.astype("<u4").tobytes()
    scale_np = _DTYPES[tensor.scale_dtype]
    grid = np.stack([tensor.grid.alpha, tensor.grid.mu], axis=-1)
    grid_bytes = grid.astype(scale_np).tobytes()
    body = perm_bytes + grid_bytes + tensor.payload
    crc = zlib.crc32(body) & 0xFFFFFFFF
    Path(path).write_bytes(header + body + struct.pack("<I", crc))


def read_packed(path) -> PackedTernaryTensor:
    """Inverse of :func:`write_packed`; rejects bad magic, truncation,
    trailing bytes, and checksum mismatch."""
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise ContainerError("truncated payload: file shorter than header")
    magic, version, n, m, group_size, scale_code = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise ContainerError("bad magic")
    if version != VERSION:
        raise ContainerError(f"unsupported version {version}")
    if scale_code not in _SCALE_NAME:
        raise ContainerError(f"unknown scale dtype code {scale_code}")
    if n < 1 or m < 1 or group_size < 1:
        raise ContainerError("invalid header dimensions")
    scale_dtype = _SCALE_NAME[scale_code]

    perm_len = 4 * m
    grid_len = 2 * n * n_groups_for(m, group_size) * _SCALE_SIZE[scale_dtype]
    pay_len = payload_nbytes(n, m)
    total = _HEADER.size + perm_len + grid_len + pay_len + 4
    if len(blob) < total:
        raise ContainerError("truncated payload")
    if len(blob) > total:
        raise ContainerError("trailing data after checksum")

    off = _HEADER.size
    body = blob[off:off + perm_len + grid_len + pay_len]
    (crc_stored,) = struct.unpack_from("<I", blob, total - 4)
    if (zlib.crc32(body) & 0xFFFFFFFF) != crc_stored:
        raise ContainerError("checksum mismatch")

    perm = np.frombuffer(blob, dtype="<u4", count=m, offset=off)
    off += perm_len
    scale_np = _DTYPES[scale_dtype]
    groups = n_groups_for(m, group_size)
    grid = np.frombuffer(blob, dtype=scale_np, count=2 * n * groups, offset=off)
    grid = grid.reshape(n, groups, 2)
    off += grid_len
    payload = blob[off:off + pay_len]

    return PackedTernaryTensor(
        shape=(n, m),
        group_size=group_size,
        permutation=perm.astype(np.uint32),
        grid=GridParams(alpha=grid[..., 0].copy(), mu=grid[..., 1].copy()),
        payload=payload,
        scale_dtype=scale_dtype,
    )
