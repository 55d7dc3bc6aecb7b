"""IGPK tensor container.

Byte layout
-----------
    magic           4 bytes, ``IGPK``
    version         u32, little-endian
    header length   u64, little-endian
    header          UTF-8 text, one ``key=value`` per line, ``\\n`` terminated
    payload         tensor data, little-endian, back to back

Header keys
-----------
    tensor.<name>.dtype    ``f32`` or ``f64``
    tensor.<name>.shape    comma-separated dimensions, empty for scalars
    tensor.<name>.offset   byte offset into the payload
    tensor.<name>.length   byte length
    attr.<key>             free-form string, ``\\`` and newline escaped

Tensors are written in the order given, attributes sorted by key, so equal
inputs always produce equal bytes. Tensors load in their stored dtype, so a
save, load, save cycle reproduces the file.
"""

import logging
import os
import struct
import tempfile
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from igprune.params import Params

__all__ = [
    "ContainerError",
    "BadMagicError",
    "UnsupportedVersionError",
    "TruncatedContainerError",
    "DuplicateTensorError",
    "save_container",
    "load_container",
    "encode_container",
    "decode_container",
]

log = logging.getLogger(__name__)

PREAMBLE = struct.Struct("<4sIQ")
DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}
TENSOR_FIELDS = ("dtype", "shape", "offset", "length")


class ContainerError(ValueError):
    pass


class BadMagicError(ContainerError):
    pass


class UnsupportedVersionError(ContainerError):
    pass


class TruncatedContainerError(ContainerError):
    def __init__(self, message: str, tensor: str | None = None) -> None:
        self.tensor = tensor
        super().__init__(message)


class DuplicateTensorError(ContainerError):
    pass


def _escape(value: str) -> str:
    return value.replace("\\", "\\\\").replace("\n", "\\n")


def _unescape(value: str) -> str:
    out = []
    chars = iter(value)
    for c in chars:
        if c != "\\":
            out.append(c)
            continue
        nxt = next(chars, None)
        if nxt == "\\":
            out.append("\\")
        elif nxt == "n":
            out.append("\n")
        else:
            raise ContainerError(f"bad escape sequence in header value {value!r}")
    return "".join(out)


def _check_key(kind: str, key: str) -> None:
    if not key or "=" in key or "\n" in key:
        raise ContainerError(f"{kind} name {key!r} must be nonempty without '=' or newlines")


def _storage_dtype(arr: np.ndarray) -> str:
    return "f32" if arr.dtype == np.float32 else "f64"


def encode_container(
    tensors: Mapping[str, np.ndarray] | Iterable[tuple[str, np.ndarray]],
    attrs: Mapping[str, str] | None = None,
) -> bytes:
    pairs = list(tensors.items()) if isinstance(tensors, Mapping) else list(tensors)
    names = [name for name, _ in pairs]
    duplicates = sorted({n for n in names if names.count(n) > 1})
    if duplicates:
        raise DuplicateTensorError(f"duplicate tensor names {duplicates}")

    lines = []
    chunks = []
    offset = 0
    for name, arr in pairs:
        _check_key("tensor", name)
        dtype = _storage_dtype(np.asarray(arr))
        data = np.ascontiguousarray(arr, dtype=DTYPES[dtype]).tobytes()
        shape = ",".join(str(d) for d in np.shape(arr))
        lines += [
            f"tensor.{name}.dtype={dtype}",
            f"tensor.{name}.shape={shape}",
            f"tensor.{name}.offset={offset}",
            f"tensor.{name}.length={len(data)}",
        ]
        chunks.append(data)
        offset += len(data)
    for key, value in sorted((attrs or {}).items()):
        _check_key("attribute", key)
        lines.append(f"attr.{key}={_escape(str(value))}")

    header = "".join(line + "\n" for line in lines).encode("utf-8")
    p = Params()
    return PREAMBLE.pack(p.container_magic, p.container_version, len(header)) + header + b"".join(chunks)


def _parse_header(text: str) -> tuple[dict[str, dict[str, str]], dict[str, str]]:
    entries: dict[str, dict[str, str]] = {}
    attrs: dict[str, str] = {}
    seen = set()
    if text and not text.endswith("\n"):
        raise ContainerError("header does not end with a newline")
    for lineno, line in enumerate(text.split("\n")[:-1], 1):
        key, sep, value = line.partition("=")
        if not sep:
            raise ContainerError(f"header line {lineno} has no '='")
        if key in seen:
            raise DuplicateTensorError(f"header key {key!r} appears twice")
        seen.add(key)
        if key.startswith("attr."):
            attrs[key[len("attr.") :]] = _unescape(value)
        elif key.startswith("tensor."):
            name, _, fld = key[len("tensor.") :].rpartition(".")
            if not name or fld not in TENSOR_FIELDS:
                raise ContainerError(f"header line {lineno}: unknown tensor key {key!r}")
            entries.setdefault(name, {})[fld] = value
        else:
            raise ContainerError(f"header line {lineno}: unknown key {key!r}")
    return entries, attrs


def decode_container(raw: bytes) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    """Validate every header entry against the payload, then materialise the tensors in their stored dtype."""
    p = Params()
    if raw[:4] != p.container_magic:
        raise BadMagicError(f"bad magic {raw[:4]!r}, expected {p.container_magic!r}")
    if len(raw) < PREAMBLE.size:
        raise TruncatedContainerError(f"file of {len(raw)} bytes is shorter than the preamble")
    _, version, header_len = PREAMBLE.unpack_from(raw)
    if version != p.container_version:
        raise UnsupportedVersionError(f"container version {version} is not supported")
    if PREAMBLE.size + header_len > len(raw):
        raise TruncatedContainerError(f"header of {header_len} bytes runs past the end of the file")
    try:
        text = raw[PREAMBLE.size : PREAMBLE.size + header_len].decode("utf-8")
    except UnicodeDecodeError as e:
        raise ContainerError(f"header is not UTF-8: {e}") from None
    payload = memoryview(raw)[PREAMBLE.size + header_len :]
    entries, attrs = _parse_header(text)

    layout = []
    for name, info in entries.items():
        missing = [f for f in TENSOR_FIELDS if f not in info]
        if missing:
            raise ContainerError(f"tensor {name} lacks header fields {missing}")
        if info["dtype"] not in DTYPES:
            raise ContainerError(f"tensor {name} has unsupported dtype {info['dtype']!r}")
        dtype = DTYPES[info["dtype"]]
        try:
            shape = tuple(int(d) for d in info["shape"].split(",")) if info["shape"] else ()
            offset, length = int(info["offset"]), int(info["length"])
        except ValueError:
            raise ContainerError(f"tensor {name} has a malformed shape, offset or length") from None
        if any(d < 0 for d in shape) or offset < 0 or length < 0:
            raise ContainerError(f"tensor {name} has negative dimensions, offset or length")
        if length != int(np.prod(shape, dtype=np.int64)) * dtype.itemsize:
            raise ContainerError(f"tensor {name}: length {length} does not match shape {shape}")
        if offset + length > len(payload):
            raise TruncatedContainerError(
                f"tensor {name} needs bytes [{offset}, {offset + length}) but the payload has {len(payload)}", name
            )
        layout.append((offset, length, name, dtype, shape))

    end = 0
    for offset, length, name, _, _ in sorted(layout):
        if offset < end:
            raise ContainerError(f"tensor {name} overlaps the previous tensor")
        end = offset + length
    if end != len(payload):
        raise ContainerError(f"payload has {len(payload) - end} trailing bytes")

    tensors = {}
    for offset, length, name, dtype, shape in layout:
        data = np.frombuffer(payload, dtype=dtype, count=length // dtype.itemsize, offset=offset)
        tensors[name] = data.reshape(shape).astype(dtype.newbyteorder("="))
    return tensors, attrs


def save_container(
    path: str | os.PathLike,
    tensors: Mapping[str, np.ndarray] | Iterable[tuple[str, np.ndarray]],
    attrs: Mapping[str, str] | None = None,
) -> None:
    """Write the container next to ``path``, fsync it and move it into place."""
    data = encode_container(tensors, attrs)
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    log.info("wrote %s (%d bytes)", path, len(data))


def load_container(path: str | os.PathLike) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    with open(path, "rb") as f:
        raw = f.read()
    return decode_container(raw)
