"""Pose-map extraction from a reference photo.

The real path runs the OpenPose detector from controlnet_aux (ml extra).
Without it, a coarse blob-structure fallback finds the dominant
head-shaped region (largest connected component that stands out from the
border background, with a plausible area and aspect ratio) and renders an
approximate openpose-style head/shoulder keypoint map. Either way the
output is a PNG consumable as an opaque pose asset.
"""

import io
import logging

import numpy as np
from PIL import Image

log = logging.getLogger(__name__)


class NoPersonError(Exception):
    pass


def _extract_with_openpose(image: Image.Image) -> bytes:
    from controlnet_aux import OpenposeDetector

    detector = OpenposeDetector.from_pretrained("lllyasviel/Annotators")
    result = detector(image, include_face=True)
    arr = np.asarray(result)
    if arr.max() == 0:
        raise NoPersonError("no person detected in the reference image")
    buf = io.BytesIO()
    result.save(buf, format="PNG")
    return buf.getvalue()


def _find_head_box(gray: np.ndarray):
    """Largest border-contrasting component with head-like proportions.

    Returns (x, y, w, h) or raises NoPersonError. Deliberately coarse: it
    exists so the fallback can reject blank/noise frames and place
    keypoints on obvious portrait-style inputs, not to rival a detector.
    """
    from scipy import ndimage

    if float(gray.std()) < 4.0:
        raise NoPersonError("no person detected (image is near-uniform)")
    border = np.concatenate([gray[0], gray[-1], gray[:, 0], gray[:, -1]])
    diff = np.abs(gray - float(np.median(border)))
    threshold = max(20.0, float(diff.mean() + diff.std()))
    mask = diff > threshold
    if not mask.any():
        raise NoPersonError("no person detected (no foreground structure)")
    labels, count = ndimage.label(mask)
    sizes = ndimage.sum_labels(np.ones_like(labels), labels, index=range(1, count + 1))
    best = int(np.argmax(sizes)) + 1
    area_frac = float(sizes[best - 1]) / mask.size
    ys, xs = np.nonzero(labels == best)
    h = int(ys.max() - ys.min() + 1)
    w = int(xs.max() - xs.min() + 1)
    aspect = h / max(w, 1)
    fill = float(sizes[best - 1]) / (h * w)
    if not (0.02 <= area_frac <= 0.85) or not (0.5 <= aspect <= 3.0) or fill < 0.35:
        raise NoPersonError("no person detected (no head-shaped region)")
    return int(xs.min()), int(ys.min()), w, h


def _extract_with_blob_fallback(image: Image.Image) -> bytes:
    gray = np.asarray(image.convert("L"), dtype=np.float64)
    x, y, w, h = _find_head_box(gray)
    canvas = np.zeros((image.height, image.width, 3), dtype=np.uint8)

    def dot(cx, cy, color, radius):
        yy, xx = np.ogrid[: canvas.shape[0], : canvas.shape[1]]
        mask = (xx - cx) ** 2 + (yy - cy) ** 2 <= radius**2
        canvas[mask] = color

    # openpose-style head keypoints: nose, eyes, neck, shoulder bar
    dot(x + w // 2, y + int(h * 0.55), (255, 0, 0), max(2, w // 20))
    dot(x + int(w * 0.33), y + int(h * 0.4), (0, 255, 255), max(2, w // 24))
    dot(x + int(w * 0.67), y + int(h * 0.4), (255, 0, 255), max(2, w // 24))
    neck_y = min(canvas.shape[0] - 1, y + int(h * 1.1))
    dot(x + w // 2, neck_y, (0, 0, 255), max(2, w // 16))
    span = int(w * 0.9)
    bar_y = min(canvas.shape[0] - 4, neck_y + h // 6)
    canvas[bar_y : bar_y + 3, max(0, x + w // 2 - span) : x + w // 2 + span] = (0, 255, 0)

    buf = io.BytesIO()
    Image.fromarray(canvas, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def extract_pose(image_bytes: bytes) -> bytes:
    """Reference photo PNG/JPEG -> openpose-style control map PNG."""
    image = Image.open(io.BytesIO(image_bytes)).convert("RGB")
    try:
        return _extract_with_openpose(image)
    except ImportError:
        log.warning("controlnet_aux unavailable; using the blob-structure fallback")
    except NoPersonError:
        raise
    return _extract_with_blob_fallback(image)
