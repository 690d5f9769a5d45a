"""Grayscale image IO and dataset pairing.

Binary PGM (P5, maxval 255) is the native format and round-trips
bit-exactly; 8-bit grayscale PNG is available behind a feature flag when
Pillow is importable. Pixels map to [0, 1] by division by 255.
"""

from __future__ import annotations

import logging
import os

import numpy as np

from .checkpoint import atomic_write_bytes
from .errors import FormatError, InputError

log = logging.getLogger(__name__)

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"

try:  # feature flag: PNG support rides on Pillow
    from PIL import Image as _PILImage
    PNG_SUPPORTED = True
except ImportError:  # pragma: no cover
    _PILImage = None
    PNG_SUPPORTED = False


def _parse_pgm(blob: bytes, path: str) -> np.ndarray:
    if blob[:2] != b"P5":
        raise FormatError(f"{path}: bad magic at byte 0, expected b'P5', got {blob[:2]!r}")
    pos = 2
    fields = []
    while len(fields) < 3:
        if pos >= len(blob):
            raise FormatError(f"{path}: truncated header at byte {pos}")
        ch = blob[pos:pos + 1]
        if ch == b"#":
            nl = blob.find(b"\n", pos)
            if nl == -1:
                raise FormatError(f"{path}: unterminated comment at byte {pos}")
            pos = nl + 1
        elif ch.isspace():
            pos += 1
        else:
            end = pos
            while end < len(blob) and not blob[end:end + 1].isspace():
                end += 1
            token = blob[pos:end]
            if not token.isdigit():
                raise FormatError(f"{path}: non-numeric header token {token!r} at byte {pos}")
            fields.append(int(token))
            pos = end
    if pos >= len(blob) or not blob[pos:pos + 1].isspace():
        raise FormatError(f"{path}: missing whitespace after maxval at byte {pos}")
    pos += 1
    width, height, maxval = fields
    if maxval != 255:
        raise FormatError(f"{path}: only maxval 255 is supported, got {maxval}")
    if width < 1 or height < 1:
        raise FormatError(f"{path}: non-positive extent {width}x{height}")
    need = width * height
    if len(blob) - pos < need:
        raise FormatError(f"{path}: truncated pixel data at byte {pos + (len(blob) - pos)}, "
                          f"need {need} bytes, have {len(blob) - pos}")
    raster = np.frombuffer(blob, dtype=np.uint8, count=need, offset=pos)
    return raster.reshape(height, width)


def load_image(path: str, allow_png: bool = True) -> np.ndarray:
    """Load a grayscale image as float64 in [0, 1]."""
    with open(path, "rb") as fh:
        head = fh.read(8)
    if head[:2] == b"P5":
        with open(path, "rb") as fh:
            return _parse_pgm(fh.read(), path) / 255.0
    if head == PNG_MAGIC:
        if not allow_png:
            raise FormatError(f"{path}: PNG input present but PNG support is disabled")
        if not PNG_SUPPORTED:
            raise FormatError(f"{path}: PNG input requires Pillow (install the 'png' extra)")
        img = _PILImage.open(path)
        if img.mode != "L":
            img = img.convert("L")
        return np.asarray(img, dtype=np.uint8) / 255.0
    raise FormatError(f"{path}: bad magic at byte 0, expected b'P5' or a PNG signature, got {head[:2]!r}")


def save_image(path: str, pixels01: np.ndarray) -> None:
    """Quantize [0, 1] pixels to 8 bits and write atomically (PGM or PNG)."""
    arr = np.asarray(pixels01, dtype=np.float64)
    if arr.ndim != 2:
        raise InputError(f"save_image: expected a 2-D image, got shape {arr.shape}")
    raster = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    if path.lower().endswith(".png"):
        if not PNG_SUPPORTED:
            raise FormatError(f"{path}: PNG output requires Pillow (install the 'png' extra)")
        import io
        buf = io.BytesIO()
        _PILImage.fromarray(raster, mode="L").save(buf, format="PNG")
        atomic_write_bytes(path, buf.getvalue())
        return
    h, w = raster.shape
    atomic_write_bytes(path, b"P5\n%d %d\n255\n" % (w, h) + raster.tobytes())


def pad_to_multiple(img: np.ndarray, m: int = 8):
    """Reflect-pad right/bottom so both extents divide `m`.

    Returns (padded, crop) where crop = (orig_h, orig_w) restores the
    original extent after fusion.
    """
    if m < 1:
        raise InputError(f"pad_to_multiple: m must be >= 1, got {m}")
    h, w = img.shape
    ph = (-h) % m
    pw = (-w) % m
    if ph == 0 and pw == 0:
        return img, (h, w)
    padded = np.pad(img, ((0, ph), (0, pw)), mode="reflect")
    return padded, (h, w)


def crop_to(img: np.ndarray, crop) -> np.ndarray:
    h, w = crop
    return img[:h, :w]


_IMAGE_EXTS = (".pgm", ".png")


def _stems(directory: str) -> dict:
    found = {}
    for entry in sorted(os.listdir(directory)):
        stem, ext = os.path.splitext(entry)
        if ext.lower() in _IMAGE_EXTS:
            found[stem] = os.path.join(directory, entry)
    return found


def load_pairs(ir_dir: str, vis_dir: str):
    """Match infrared/visible files by identical stem, in lexicographic order.

    Unpaired stems are skipped with a warning; a size-mismatched pair or an
    empty result is an InputError.
    """
    ir_files = _stems(ir_dir)
    vis_files = _stems(vis_dir)
    pairs = []
    for stem in sorted(set(ir_files) | set(vis_files)):
        if stem not in ir_files or stem not in vis_files:
            side = "visible" if stem in ir_files else "infrared"
            log.warning("skipping unpaired stem %r (missing %s image)", stem, side)
            continue
        ir = load_image(ir_files[stem])
        vis = load_image(vis_files[stem])
        if ir.shape != vis.shape:
            raise InputError(f"pair {stem!r}: extents differ, infrared {ir.shape} vs visible {vis.shape}")
        pairs.append((stem, ir, vis))
    if not pairs:
        raise InputError(f"no usable pairs between {ir_dir} and {vis_dir}")
    return pairs
