"""FastAPI app implementing the generation wire protocol plus /v1/embed.

Request bodies are parsed and validated by hand so error responses always
match the protocol's ``{"error": <text>}`` shape with the right status:
400 for schema violations, 404 for unknown endpoints, 422 for
no-face-detected, 503 while engines are still loading.
"""

import base64
import logging
import threading
from contextlib import asynccontextmanager

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from starlette.exceptions import HTTPException as StarletteHTTPException

from .config import SidecarConfig
from .engines import NoFaceError, make_embed_engine, make_generation_engine

log = logging.getLogger(__name__)

MAX_SIDE = 4096


def _error(status, message):
    return JSONResponse(status_code=status, content={"error": message})


def _validate_generate(body):
    if not isinstance(body, dict):
        raise ValueError("request body must be a JSON object")
    prompt = body.get("prompt")
    if not isinstance(prompt, str) or not prompt:
        raise ValueError("missing or empty 'prompt'")
    negative = body.get("negative_prompt", "")
    if not isinstance(negative, str):
        raise ValueError("'negative_prompt' must be a string")
    seed = body.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 1 << 64:
        raise ValueError("'seed' must be an unsigned 64-bit integer")
    width = body.get("width", 512)
    height = body.get("height", 512)
    for label, value in (("width", width), ("height", height)):
        if not isinstance(value, int) or isinstance(value, bool) or not 0 < value <= MAX_SIDE:
            raise ValueError(f"'{label}' must be an integer in (0, {MAX_SIDE}]")
        if value % 8:
            raise ValueError(f"'{label}' must be a multiple of 8")
    steps = body.get("steps", 30)
    if not isinstance(steps, int) or isinstance(steps, bool) or not 1 <= steps <= 500:
        raise ValueError("'steps' must be an integer in [1, 500]")
    guidance = body.get("guidance", 7.0)
    if not isinstance(guidance, (int, float)) or isinstance(guidance, bool) or guidance <= 0:
        raise ValueError("'guidance' must be a positive number")
    control = body.get("control", [])
    if not isinstance(control, list):
        raise ValueError("'control' must be a list")
    control_images = []
    for i, entry in enumerate(control):
        if not isinstance(entry, dict) or entry.get("type") not in ("openpose", "lineart"):
            raise ValueError(f"control[{i}]: type must be 'openpose' or 'lineart'")
        try:
            data = base64.b64decode(entry["image_b64"], validate=True)
        except Exception:
            raise ValueError(f"control[{i}]: image_b64 is not valid base64")
        control_images.append((entry["type"], data))
    return prompt, negative, seed, width, height, steps, float(guidance), control_images


def create_app(config: SidecarConfig | None = None, preload: bool = True) -> FastAPI:
    """Build the app; engines load on startup (503 until ready).

    ``preload=False`` defers engine construction to the first request
    instead of a startup thread (handy for tests that never generate).
    """
    config = (config or SidecarConfig()).validate()
    state = {"generation": None, "embed": None, "ready": False, "error": None}
    lock = threading.Lock()

    def load_engines():
        try:
            with lock:
                if state["generation"] is None:
                    state["generation"] = make_generation_engine(config)
                if state["embed"] is None:
                    state["embed"] = make_embed_engine(config)
                state["ready"] = True
        except Exception as exc:  # surfaced as 503 with the reason
            log.exception("engine load failed")
            state["error"] = str(exc)

    @asynccontextmanager
    async def lifespan(app):
        if preload:
            threading.Thread(target=load_engines, daemon=True).start()
        yield

    app = FastAPI(title="sig-sidecar", docs_url=None, redoc_url=None, lifespan=lifespan)

    def engines_or_response():
        if state["error"]:
            return None, _error(503, f"engine initialization failed: {state['error']}")
        if not state["ready"]:
            if preload:
                return None, _error(503, "engines are still loading, retry shortly")
            load_engines()
            if state["error"]:
                return None, _error(503, f"engine initialization failed: {state['error']}")
        return state, None

    @app.exception_handler(StarletteHTTPException)
    async def protocol_shaped_errors(request, exc):
        return _error(exc.status_code, str(exc.detail))

    @app.get("/v1/health")
    async def health():
        engines, busy = engines_or_response()
        if busy is not None:
            return busy
        return {"status": "ok", "model_id": engines["generation"].model_id}

    @app.post("/v1/generate")
    async def generate(request: Request):
        engines, busy = engines_or_response()
        if busy is not None:
            return busy
        try:
            body = await request.json()
        except Exception:
            return _error(400, "request body is not valid JSON")
        try:
            prompt, negative, seed, width, height, steps, guidance, control = (
                _validate_generate(body)
            )
        except ValueError as exc:
            return _error(400, str(exc))
        try:
            png = engines["generation"].generate(
                prompt, negative, seed, width, height, steps, guidance, control
            )
        except Exception as exc:
            log.exception("generation failed")
            return _error(500, f"generation failed: {exc}")
        return {
            "image_b64": base64.b64encode(png).decode("ascii"),
            "model_id": engines["generation"].model_id,
            "seed_used": seed,
        }

    @app.post("/v1/embed")
    async def embed(request: Request):
        engines, busy = engines_or_response()
        if busy is not None:
            return busy
        try:
            body = await request.json()
        except Exception:
            return _error(400, "request body is not valid JSON")
        if not isinstance(body, dict) or not isinstance(body.get("image_b64"), str):
            return _error(400, "missing 'image_b64'")
        try:
            data = base64.b64decode(body["image_b64"], validate=True)
        except Exception:
            return _error(400, "'image_b64' is not valid base64")
        try:
            vector = engines["embed"].embed(data)
        except NoFaceError as exc:
            return _error(422, str(exc))
        except ValueError as exc:
            return _error(400, str(exc))
        except Exception as exc:
            log.exception("embed failed")
            return _error(500, f"embedding failed: {exc}")
        return {
            "vector": [float(v) for v in vector],
            "dim": int(vector.shape[0]),
            "model_id": engines["embed"].model_id,
        }

    app.state.sidecar_config = config
    return app
