"""Flat binary weight containers.

Layout: a 4-byte magic string ("TGF1" for generator checkpoints, "TGFD"
for discriminator weights), a UTF-8 plain-text header of key=value lines
terminated by one blank line, then the raw little-endian float32 payload
of every parameter tensor in declaration order.
"""

from __future__ import annotations

import os
import tempfile

import numpy as np

from .errors import FormatError

GENERATOR_MAGIC = b"TGF1"
DISCRIMINATOR_MAGIC = b"TGFD"


def atomic_write_bytes(path: str, payload: bytes) -> None:
    """Write via a temp file + rename so failures never leave partial output."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_container(path: str, magic: bytes, header: dict, arrays) -> None:
    lines = "".join(f"{k}={v}\n" for k, v in header.items())
    blob = bytearray(magic)
    blob += lines.encode("utf-8")
    blob += b"\n"
    for arr in arrays:
        blob += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    atomic_write_bytes(path, bytes(blob))


def _parse_header(path: str, blob: bytes, magic: bytes) -> tuple[dict, int]:
    """Return (header dict, payload offset) or raise FormatError."""
    if len(blob) < 4 or blob[:4] != magic:
        raise FormatError(f"{path}: bad magic at byte 0, expected {magic!r}, got {blob[:4]!r}")
    if blob[4:5] == b"\n":
        # empty header: the blank terminator line comes right after the magic
        return {}, 5
    term = blob.find(b"\n\n", 4)
    if term == -1:
        raise FormatError(f"{path}: header not terminated by a blank line (searching from byte 4)")
    try:
        text = blob[4:term].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: header is not valid UTF-8 ({exc})") from None
    header = {}
    for ln, line in enumerate(text.splitlines()):
        if not line.strip():
            continue
        if "=" not in line:
            raise FormatError(f"{path}: header line {ln + 1} is not key=value: {line!r}")
        key, value = line.split("=", 1)
        header[key.strip()] = value.strip()
    return header, term + 2


def load_header(path: str, magic: bytes) -> dict:
    """Header only; used to learn an architecture before sizing tensors."""
    with open(path, "rb") as fh:
        blob = fh.read()
    header, _ = _parse_header(path, blob, magic)
    return header


def load_container(path: str, magic: bytes, named_shapes) -> tuple[dict, list[np.ndarray]]:
    """Parse a container; `named_shapes` is [(name, shape), ...] in order.

    Raises FormatError (with a byte offset or the first offending tensor
    name) on any mismatch; never returns partial data.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    header, offset = _parse_header(path, blob, magic)
    arrays = []
    for name, shape in named_shapes:
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 4
        if offset + nbytes > len(blob):
            raise FormatError(f"{path}: truncated payload at tensor {name!r} "
                              f"(byte {offset}, need {nbytes}, have {len(blob) - offset})")
        arrays.append(np.frombuffer(blob, dtype="<f4", count=count, offset=offset).reshape(shape).copy())
        offset += nbytes
    if offset != len(blob):
        raise FormatError(f"{path}: {len(blob) - offset} trailing bytes after the declared tensors")
    return header, arrays
