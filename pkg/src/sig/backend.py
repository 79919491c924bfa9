"""HTTP client for the diffusion backend wire protocol.

Protocol (JSON over HTTP, UTF-8):

* ``GET /v1/health`` -> ``{"status": "ok", "model_id": <text>}``
* ``POST /v1/generate`` with ``{"prompt", "negative_prompt", "seed",
  "width", "height", "steps", "guidance", "control": [{"type",
  "image_b64"}]}`` -> ``{"image_b64", "model_id", "seed_used"}``
* errors are HTTP 4xx/5xx bodies shaped ``{"error": <text>}``.

The client validates jobs before any network traffic and validates the
returned PNG before handing it to callers.
"""

import base64
import json
import urllib.error
import urllib.request

from . import pngmeta
from .errors import BackendUnreachableError, JobValidationError, ProtocolError, RequestFailedError

DEFAULT_TIMEOUT = 120.0
CONTROL_TYPES = ("openpose", "lineart")


def http_json(url, payload=None, timeout=DEFAULT_TIMEOUT):
    """One request; returns the decoded JSON body. Raises RequestFailedError
    for HTTP error statuses (with the server's error text when parseable),
    BackendUnreachableError for transport failures, ProtocolError for
    malformed bodies."""
    if payload is None:
        req = urllib.request.Request(url, method="GET")
    else:
        body = json.dumps(payload).encode("utf-8")
        req = urllib.request.Request(
            url, data=body, method="POST", headers={"Content-Type": "application/json"}
        )
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            raw = resp.read()
    except urllib.error.HTTPError as exc:
        detail = ""
        try:
            detail = json.loads(exc.read().decode("utf-8")).get("error", "")
        except Exception:
            pass
        raise RequestFailedError(
            f"{url} returned HTTP {exc.code}" + (f": {detail}" if detail else ""),
            status=exc.code,
        ) from exc
    except (urllib.error.URLError, TimeoutError, ConnectionError, OSError) as exc:
        raise BackendUnreachableError(f"cannot reach backend at {url}: {exc}") from exc
    try:
        return json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"{url}: response body is not valid JSON: {exc}") from exc


def check_health(backend_url, timeout=10.0) -> str:
    """GET /v1/health; returns the advertised model_id."""
    body = http_json(backend_url.rstrip("/") + "/v1/health", timeout=timeout)
    if not isinstance(body, dict) or body.get("status") != "ok":
        raise ProtocolError(f"health endpoint returned unexpected body: {body!r}")
    model_id = body.get("model_id")
    if not isinstance(model_id, str) or not model_id:
        raise ProtocolError("health endpoint did not report a model_id")
    return model_id


def validate_job(job):
    """Client-side checks mirroring the backend's latent constraints."""
    problems = []
    if job.width <= 0 or job.width % 8:
        problems.append(f"width {job.width} is not a positive multiple of 8")
    if job.height <= 0 or job.height % 8:
        problems.append(f"height {job.height} is not a positive multiple of 8")
    if job.steps < 1:
        problems.append(f"steps must be >= 1, got {job.steps}")
    if job.guidance <= 0:
        problems.append(f"guidance must be positive, got {job.guidance}")
    if not 0 <= job.generation_seed < 1 << 64:
        problems.append("seed must fit in an unsigned 64-bit integer")
    if problems:
        raise JobValidationError("; ".join(problems))


def generate_image(job, backend_url, control_maps=(), timeout=DEFAULT_TIMEOUT):
    """POST /v1/generate for one job; returns (png_bytes, model_id).

    ``control_maps`` is a sequence of (control_type, png_bytes). The
    response PNG is structurally validated (signature, chunk CRCs) so a
    truncated or corrupt body surfaces as ProtocolError here, not as a
    mystery downstream.
    """
    validate_job(job)
    control = []
    for ctype, data in control_maps:
        if ctype not in CONTROL_TYPES:
            raise JobValidationError(f"unknown control type {ctype!r}")
        control.append({"type": ctype, "image_b64": base64.b64encode(data).decode("ascii")})
    payload = {
        "prompt": job.positive_prompt,
        "negative_prompt": job.negative_prompt,
        "seed": job.generation_seed,
        "width": job.width,
        "height": job.height,
        "steps": job.steps,
        "guidance": job.guidance,
        "control": control,
    }
    body = http_json(backend_url.rstrip("/") + "/v1/generate", payload, timeout=timeout)
    if not isinstance(body, dict) or "image_b64" not in body:
        raise ProtocolError(f"generate response missing image_b64: keys={sorted(body)}"
                            if isinstance(body, dict) else "generate response is not an object")
    try:
        png = base64.b64decode(body["image_b64"], validate=True)
    except Exception as exc:
        raise ProtocolError(f"image_b64 is not valid base64: {exc}") from exc
    try:
        pngmeta.read_chunks(png)
    except Exception as exc:
        raise ProtocolError(f"backend returned an invalid PNG: {exc}") from exc
    model_id = body.get("model_id")
    if not isinstance(model_id, str) or not model_id:
        raise ProtocolError("generate response missing model_id")
    if body.get("seed_used") != job.generation_seed:
        raise ProtocolError(
            f"backend echoed seed {body.get('seed_used')!r}, job used {job.generation_seed}"
        )
    return png, model_id
