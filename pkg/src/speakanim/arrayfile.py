"""Array records and the named-array checkpoint container.

An array record is one ASCII header line::

    ARRAY version=1 rank=2 dims=10,64 dtype=f32

followed by exactly ``prod(dims)`` little-endian float32 values. A container
prefixes a JSON manifest and stores any number of named records.
"""

from __future__ import annotations

import io
import json
from pathlib import Path

import numpy as np

VERSION = 1
_DTYPE = np.dtype("<f4")


class FormatError(ValueError):
    pass


def _fields(line: bytes, magic: str) -> dict[str, str]:
    try:
        text = line.decode("ascii").strip()
    except UnicodeDecodeError as exc:
        raise FormatError(f"header is not ASCII: {line[:40]!r}") from exc
    tokens = text.split()
    if not tokens or tokens[0] != magic:
        raise FormatError(f"expected {magic} header, got {text[:60]!r}")
    out = {}
    for tok in tokens[1:]:
        key, sep, value = tok.partition("=")
        if not sep:
            raise FormatError(f"malformed header field {tok!r}")
        out[key] = value
    return out


def write_array(stream, array) -> None:
    arr = np.asarray(array)
    if not np.all(np.isfinite(arr)):
        raise FormatError("refusing to write non-finite values")
    dims = ",".join(str(d) for d in arr.shape)
    stream.write(f"ARRAY version={VERSION} rank={arr.ndim} dims={dims} dtype=f32\n".encode("ascii"))
    stream.write(np.ascontiguousarray(arr, dtype=_DTYPE).tobytes())


def read_array(stream) -> np.ndarray:
    hdr = _fields(stream.readline(), "ARRAY")
    for key in ("version", "rank", "dims", "dtype"):
        if key not in hdr:
            raise FormatError(f"array header missing field {key!r}")
    if hdr["version"] != str(VERSION):
        raise FormatError(f"unsupported version {hdr['version']!r}")
    if hdr["dtype"] != "f32":
        raise FormatError(f"unsupported dtype {hdr['dtype']!r}")
    try:
        rank = int(hdr["rank"])
        dims = tuple(int(d) for d in hdr["dims"].split(",")) if hdr["dims"] else ()
    except ValueError as exc:
        raise FormatError(f"malformed rank/dims: {hdr['rank']!r} / {hdr['dims']!r}") from exc
    if len(dims) != rank or any(d < 0 for d in dims):
        raise FormatError(f"dims {dims} do not match rank {rank}")
    count = int(np.prod(dims, dtype=np.int64))
    payload = stream.read(count * _DTYPE.itemsize)
    if len(payload) != count * _DTYPE.itemsize:
        raise FormatError(f"payload truncated: expected {count} float32 values")
    arr = np.frombuffer(payload, dtype=_DTYPE).reshape(dims).copy()
    if not np.all(np.isfinite(arr)):
        raise FormatError("payload contains NaN or infinite values")
    return arr


def save_array(path, array) -> None:
    buf = io.BytesIO()
    write_array(buf, array)
    Path(path).write_bytes(buf.getvalue())


def load_array(path) -> np.ndarray:
    with open(path, "rb") as fh:
        arr = read_array(fh)
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after payload")
    return arr


def dumps_manifest(manifest: dict) -> bytes:
    return json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_container(path, arrays: dict[str, np.ndarray], manifest: dict) -> None:
    """Write named arrays plus a JSON manifest; output is canonical for equal inputs."""
    meta = dumps_manifest(manifest)
    buf = io.BytesIO()
    buf.write(f"CONTAINER version={VERSION} n_arrays={len(arrays)} manifest_bytes={len(meta)}\n".encode("ascii"))
    buf.write(meta + b"\n")
    for name in sorted(arrays):
        if any(ch.isspace() for ch in name) or not name:
            raise FormatError(f"invalid array name {name!r}")
        buf.write(f"NAME {name}\n".encode("utf-8"))
        write_array(buf, arrays[name])
    Path(path).write_bytes(buf.getvalue())


def load_container(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        hdr = _fields(fh.readline(), "CONTAINER")
        if hdr.get("version") != str(VERSION):
            raise FormatError(f"unsupported container version {hdr.get('version')!r}")
        meta = fh.read(int(hdr["manifest_bytes"]))
        if fh.read(1) != b"\n":
            raise FormatError("manifest not terminated by newline")
        manifest = json.loads(meta.decode("utf-8"))
        arrays = {}
        for _ in range(int(hdr["n_arrays"])):
            line = fh.readline().decode("utf-8").rstrip("\n")
            if not line.startswith("NAME "):
                raise FormatError(f"expected NAME line, got {line[:60]!r}")
            arrays[line[5:]] = read_array(fh)
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after last array")
    return arrays, manifest
