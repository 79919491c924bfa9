import numpy as np
import pytest

from sig.errors import PngFormatError
from sig.pngmeta import PNG_SIGNATURE, png_size, read_chunks, read_text_chunks, write_png


def checkerboard(h=32, w=48):
    img = np.zeros((h, w, 3), dtype=np.uint8)
    img[::2, ::2] = 255
    img[1::2, 1::2] = (10, 200, 32)
    return img


def test_round_trip_text_chunks():
    text = {"sig.identity": "abc123", "sig.pose": "front", "sig.seed": "42"}
    data = write_png(checkerboard(), text=text)
    assert read_text_chunks(data) == text


def test_structure_and_size():
    data = write_png(checkerboard(16, 24))
    types = [t for t, _ in read_chunks(data)]
    assert types[0] == b"IHDR"
    assert types[-1] == b"IEND"
    assert b"IDAT" in types
    assert png_size(data) == (24, 16)


def test_pillow_can_decode_if_available():
    PIL = pytest.importorskip("PIL.Image")
    import io

    img = checkerboard(20, 20)
    data = write_png(img, text={"k": "v"})
    decoded = np.asarray(PIL.open(io.BytesIO(data)).convert("RGB"))
    assert np.array_equal(decoded, img)


def test_bad_signature_rejected():
    with pytest.raises(PngFormatError):
        read_chunks(b"definitely not a png")


def test_truncation_rejected():
    data = write_png(checkerboard())
    with pytest.raises(PngFormatError):
        read_chunks(data[: len(data) - 7])


def test_crc_corruption_rejected():
    data = bytearray(write_png(checkerboard()))
    # flip one byte inside the IDAT payload (after signature+IHDR)
    data[len(PNG_SIGNATURE) + 40] ^= 0xFF
    with pytest.raises(PngFormatError):
        read_chunks(bytes(data))


def test_write_rejects_wrong_shape():
    with pytest.raises(ValueError):
        write_png(np.zeros((4, 4), dtype=np.uint8))
    with pytest.raises(ValueError):
        write_png(np.zeros((4, 4, 3), dtype=np.float32))


def test_deterministic_bytes():
    a = write_png(checkerboard(), text={"a": "1"})
    b = write_png(checkerboard(), text={"a": "1"})
    assert a == b
