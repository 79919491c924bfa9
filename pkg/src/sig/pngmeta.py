"""Minimal PNG encode/decode with tEXt metadata chunks.

Only what the pipeline needs: write 8-bit RGB images carrying key/value
text chunks, and read chunks (with CRC verification) back out of any
standards-conforming PNG. No external imaging dependency.
"""

import struct
import zlib

import numpy as np

from .errors import PngFormatError

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


def _chunk(type_bytes: bytes, data: bytes) -> bytes:
    return (
        struct.pack(">I", len(data))
        + type_bytes
        + data
        + struct.pack(">I", zlib.crc32(type_bytes + data) & 0xFFFFFFFF)
    )


def write_png(pixels: np.ndarray, text: dict | None = None, compress_level: int = 6) -> bytes:
    """Encode an (H, W, 3) uint8 array as a PNG.

    ``text`` entries become tEXt chunks (written before IDAT, in dict
    order). Keywords must be 1-79 latin-1 characters per the PNG spec.
    """
    if pixels.ndim != 3 or pixels.shape[2] != 3 or pixels.dtype != np.uint8:
        raise ValueError("write_png expects an (H, W, 3) uint8 array")
    height, width = pixels.shape[:2]
    out = [PNG_SIGNATURE]
    ihdr = struct.pack(">IIBBBBB", width, height, 8, 2, 0, 0, 0)
    out.append(_chunk(b"IHDR", ihdr))
    for key, value in (text or {}).items():
        kb = key.encode("latin-1")
        if not 1 <= len(kb) <= 79:
            raise ValueError(f"tEXt keyword length out of range: {key!r}")
        out.append(_chunk(b"tEXt", kb + b"\x00" + value.encode("latin-1")))
    # filter byte 0 (None) prepended to each scanline
    raw = np.concatenate(
        [np.zeros((height, 1), dtype=np.uint8), pixels.reshape(height, width * 3)], axis=1
    ).tobytes()
    out.append(_chunk(b"IDAT", zlib.compress(raw, compress_level)))
    out.append(_chunk(b"IEND", b""))
    return b"".join(out)


def read_chunks(data: bytes):
    """Parse PNG chunks, verifying signature, lengths, and CRCs.

    Returns a list of (type, payload) tuples. Raises PngFormatError on any
    structural violation (bad signature, truncation, CRC mismatch, IHDR
    not first, missing IEND).
    """
    if not data.startswith(PNG_SIGNATURE):
        raise PngFormatError("not a PNG: bad signature")
    chunks = []
    pos = len(PNG_SIGNATURE)
    while pos < len(data):
        if pos + 8 > len(data):
            raise PngFormatError("truncated chunk header")
        (length,) = struct.unpack(">I", data[pos : pos + 4])
        ctype = data[pos + 4 : pos + 8]
        end = pos + 8 + length
        if end + 4 > len(data):
            raise PngFormatError(f"truncated {ctype!r} chunk")
        payload = data[pos + 8 : end]
        (crc,) = struct.unpack(">I", data[end : end + 4])
        if crc != zlib.crc32(ctype + payload) & 0xFFFFFFFF:
            raise PngFormatError(f"CRC mismatch in {ctype!r} chunk")
        chunks.append((ctype, payload))
        pos = end + 4
        if ctype == b"IEND":
            break
    if not chunks or chunks[0][0] != b"IHDR":
        raise PngFormatError("IHDR is not the first chunk")
    if chunks[-1][0] != b"IEND":
        raise PngFormatError("missing IEND chunk")
    return chunks


def read_text_chunks(data: bytes) -> dict:
    """Extract tEXt chunks as a {keyword: text} dict."""
    texts = {}
    for ctype, payload in read_chunks(data):
        if ctype != b"tEXt":
            continue
        if b"\x00" not in payload:
            raise PngFormatError("tEXt chunk without keyword separator")
        key, _, value = payload.partition(b"\x00")
        texts[key.decode("latin-1")] = value.decode("latin-1")
    return texts


def png_size(data: bytes):
    """(width, height) from the IHDR chunk."""
    chunks = read_chunks(data)
    width, height = struct.unpack(">II", chunks[0][1][:8])
    return width, height
