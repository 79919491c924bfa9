"""Wire-protocol conformance checks, shared by every backend.

The same checks run against the bundled mock and against any real
backend implementing the protocol; a backend passes when `run_all`
returns only PASS results. Each check raises ConformanceFailure with a
readable reason on violation.

Checks cover: health shape, generate happy path (PNG validity, size,
model_id, seed echo), byte determinism, error shapes (missing prompt,
invalid JSON -> HTTP 400 with {"error": text}), unknown endpoint 404,
and optionally the /v1/embed endpoint (unit-norm vector, dim/model_id,
error shapes).
"""

import base64
import json
import urllib.error
import urllib.request

import numpy as np

from . import pngmeta
from .backend import generate_image
from .orchestrator import GenerationJob, placeholder_pose_assets

DEFAULT_TIMEOUT = 60.0


class ConformanceFailure(AssertionError):
    pass


def _require(cond, reason):
    if not cond:
        raise ConformanceFailure(reason)


def _raw_post(url, data: bytes, timeout=DEFAULT_TIMEOUT):
    """POST arbitrary bytes; returns (status, parsed json or None)."""
    req = urllib.request.Request(
        url, data=data, method="POST", headers={"Content-Type": "application/json"}
    )
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            status, raw = resp.status, resp.read()
    except urllib.error.HTTPError as exc:
        status, raw = exc.code, exc.read()
    try:
        return status, json.loads(raw.decode("utf-8"))
    except Exception:
        return status, None


def _get(url, timeout=DEFAULT_TIMEOUT):
    try:
        with urllib.request.urlopen(url, timeout=timeout) as resp:
            return resp.status, json.loads(resp.read().decode("utf-8"))
    except urllib.error.HTTPError as exc:
        try:
            return exc.code, json.loads(exc.read().decode("utf-8"))
        except Exception:
            return exc.code, None


def _sample_job(seed=12345):
    return GenerationJob(
        identity_id="conformance",
        pose="front",
        positive_prompt="portrait photo of [Ada | Bea | Cli], head facing forward",
        negative_prompt="",
        generation_seed=seed,
        width=512,
        height=512,
        steps=4,
        guidance=7.0,
    )


def _control_maps():
    asset = placeholder_pose_assets(["front"], size=64)["front"]
    return asset.wire_maps


def wait_ready(base_url, timeout=60.0):
    """Poll health until the backend reports ok; 503-while-loading is part
    of the protocol, so conformance waits it out (bounded)."""
    import time

    deadline = time.time() + timeout
    status, body = None, None
    while time.time() < deadline:
        try:
            status, body = _get(base_url.rstrip("/") + "/v1/health", timeout=5)
        except Exception:
            status, body = None, None
        if status == 200 and isinstance(body, dict) and body.get("status") == "ok":
            return
        time.sleep(0.1)
    raise ConformanceFailure(
        f"backend did not become ready within {timeout}s (last: {status} {body})"
    )


def check_health(base_url):
    status, body = _get(base_url.rstrip("/") + "/v1/health")
    _require(status == 200, f"health returned HTTP {status}")
    _require(isinstance(body, dict), "health body is not a JSON object")
    _require(body.get("status") == "ok", f"health status is {body.get('status')!r}")
    _require(
        isinstance(body.get("model_id"), str) and body["model_id"],
        "health did not report a model_id",
    )


def check_generate_shape(base_url):
    job = _sample_job()
    png, model_id = generate_image(job, base_url, control_maps=_control_maps())
    _require(bool(model_id), "generate returned an empty model_id")
    width, height = pngmeta.png_size(png)
    _require(
        (width, height) == (job.width, job.height),
        f"generate returned {width}x{height}, requested {job.width}x{job.height}",
    )


def check_generate_determinism(base_url):
    job = _sample_job(seed=777)
    maps = _control_maps()
    png_a, _ = generate_image(job, base_url, control_maps=maps)
    png_b, _ = generate_image(job, base_url, control_maps=maps)
    _require(png_a == png_b, "identical generate requests returned different bytes")


def check_generate_error_shapes(base_url):
    url = base_url.rstrip("/") + "/v1/generate"
    status, body = _raw_post(url, json.dumps({"seed": 1}).encode("utf-8"))
    _require(status == 400, f"missing prompt: expected HTTP 400, got {status}")
    _require(
        isinstance(body, dict) and isinstance(body.get("error"), str) and body["error"],
        "missing prompt: error body must be {'error': <text>}",
    )
    status, body = _raw_post(url, b"{not json")
    _require(status == 400, f"invalid JSON: expected HTTP 400, got {status}")
    _require(
        isinstance(body, dict) and isinstance(body.get("error"), str),
        "invalid JSON: error body must be {'error': <text>}",
    )


def check_unknown_endpoint(base_url):
    status, body = _get(base_url.rstrip("/") + "/v1/definitely-not-a-thing")
    _require(status == 404, f"unknown endpoint: expected HTTP 404, got {status}")
    _require(
        isinstance(body, dict) and "error" in body,
        "unknown endpoint: error body must be {'error': <text>}",
    )


def _embed_image():
    """A deterministic non-blank image an embed endpoint can accept."""
    y, x = np.ogrid[:256, :256]
    face = ((x - 128) ** 2 / 1.4 + (y - 120) ** 2 <= 80 ** 2).astype(np.uint8)
    canvas = np.full((256, 256, 3), 40, dtype=np.uint8)
    canvas[face > 0] = (205, 170, 140)
    for ex in (100, 156):
        eye = (x - ex) ** 2 + (y - 100) ** 2 <= 9 ** 2
        canvas[eye] = (30, 30, 30)
    mouth = ((x - 128) ** 2 / 3 + (y - 150) ** 2 <= 9 ** 2)
    canvas[mouth] = (120, 50, 50)
    return pngmeta.write_png(canvas)


def check_embed(base_url, dim_expected=None):
    url = base_url.rstrip("/") + "/v1/embed"
    payload = {"image_b64": base64.b64encode(_embed_image()).decode("ascii")}
    status, body = _raw_post(url, json.dumps(payload).encode("utf-8"))
    _require(status == 200, f"embed returned HTTP {status}: {body}")
    _require(isinstance(body, dict) and "vector" in body, "embed body missing 'vector'")
    vec = np.asarray(body["vector"], dtype=np.float64)
    _require(vec.ndim == 1 and vec.size > 0, "embed vector malformed")
    _require(body.get("dim") == vec.size, "embed dim disagrees with vector length")
    _require(
        isinstance(body.get("model_id"), str) and body["model_id"],
        "embed did not report a model_id",
    )
    if dim_expected is not None:
        _require(vec.size == dim_expected, f"embed dim {vec.size} != expected {dim_expected}")
    norm = float(np.linalg.norm(vec))
    _require(abs(norm - 1.0) <= 1e-4, f"embed vector norm {norm} is not unit within 1e-4")

    status, body = _raw_post(url, json.dumps({"nope": 1}).encode("utf-8"))
    _require(status == 400, f"embed with no image: expected HTTP 400, got {status}")
    _require(
        isinstance(body, dict) and isinstance(body.get("error"), str),
        "embed error body must be {'error': <text>}",
    )


GENERATE_CHECKS = (
    ("health", check_health),
    ("generate_shape", check_generate_shape),
    ("generate_determinism", check_generate_determinism),
    ("generate_error_shapes", check_generate_error_shapes),
    ("unknown_endpoint", check_unknown_endpoint),
)


def run_all(base_url, include_embed=False, ready_timeout=60.0):
    """Run every check; returns [(name, 'PASS')] or raises on first failure."""
    wait_ready(base_url, timeout=ready_timeout)
    results = []
    checks = list(GENERATE_CHECKS)
    if include_embed:
        checks.append(("embed", check_embed))
    for name, fn in checks:
        fn(base_url)
        results.append((name, "PASS"))
    return results
