"""Deterministic in-repo backend implementing the generation wire protocol.

Lets the whole pipeline (and its statistics) run with zero ML
dependencies. For a generate request the server renders a tiled pattern
whose pixels derive from SHA-256(prompt || seed || control hashes), so
identical requests produce byte-identical PNGs. Three tEXt chunks carry
the ground truth downstream tooling keys off:

* ``sig.identity``: SHA-256 hex of the blend group found in the prompt
  (falls back to hashing the whole prompt when there is no group);
* ``sig.pose``: first of left/right/front(/forward) appearing as a word
  in the prompt, mapped to its pose label, else "unknown";
* ``sig.seed``: the request seed in decimal.
"""

import base64
import hashlib
import json
import re
import struct
import threading
import time
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from . import pngmeta
from .templates import extract_blend_group

_TILE = 64
_POSE_WORDS = {"left": "left", "right": "right", "front": "front", "forward": "front"}
_WORD_RE = re.compile(r"[a-z]+")


@dataclass
class MockConfig:
    port: int = 0  # 0 = pick a free ephemeral port
    model_id: str = "mock-diffusion-0"
    latency_ms: int = 0


def identity_tag(prompt: str) -> str:
    """The sig.identity chunk value for a prompt."""
    found = extract_blend_group(prompt)
    source = found[0] if found else prompt
    return hashlib.sha256(source.encode("utf-8")).hexdigest()


def pose_tag(prompt: str) -> str:
    """The sig.pose chunk value: first pose word in prompt order."""
    for word in _WORD_RE.findall(prompt.lower()):
        if word in _POSE_WORDS:
            return _POSE_WORDS[word]
    return "unknown"


def render_pattern(prompt: str, seed: int, control_hashes, width: int, height: int) -> np.ndarray:
    """Deterministic (height, width, 3) uint8 pattern.

    digest = SHA-256(prompt_utf8 || '\\x00' || decimal_seed || '\\x00' ||
    control_sha256_digests...); the digest is expanded in counter mode to
    fill one tile, which is tiled across the canvas.
    """
    hasher = hashlib.sha256()
    hasher.update(prompt.encode("utf-8"))
    hasher.update(b"\x00")
    hasher.update(str(seed).encode("ascii"))
    hasher.update(b"\x00")
    for h in control_hashes:
        hasher.update(h)
    digest = hasher.digest()
    need = _TILE * _TILE * 3
    blocks = []
    for counter in range((need + 31) // 32):
        blocks.append(hashlib.sha256(digest + struct.pack("<I", counter)).digest())
    tile = np.frombuffer(b"".join(blocks), dtype=np.uint8)[:need].reshape(_TILE, _TILE, 3)
    reps_y = -(-height // _TILE)
    reps_x = -(-width // _TILE)
    return np.tile(tile, (reps_y, reps_x, 1))[:height, :width, :]


def render_png(prompt: str, seed: int, control_hashes, width: int, height: int, pose_hint=None) -> bytes:
    pixels = render_pattern(prompt, seed, control_hashes, width, height)
    text = {
        "sig.identity": identity_tag(prompt),
        "sig.pose": pose_tag(prompt) if pose_hint is None else pose_hint,
        "sig.seed": str(seed),
    }
    return pngmeta.write_png(pixels, text=text, compress_level=1)


def _validate_generate(body):
    """Returns (prompt, seed, width, height, control_hashes) or raises
    ValueError with a client-facing message."""
    if not isinstance(body, dict):
        raise ValueError("request body must be a JSON object")
    prompt = body.get("prompt")
    if not isinstance(prompt, str) or not prompt:
        raise ValueError("missing or empty 'prompt'")
    seed = body.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 1 << 64:
        raise ValueError("'seed' must be an unsigned 64-bit integer")
    width = body.get("width", 512)
    height = body.get("height", 512)
    for label, value in (("width", width), ("height", height)):
        if not isinstance(value, int) or isinstance(value, bool) or not 0 < value <= 4096:
            raise ValueError(f"'{label}' must be an integer in (0, 4096]")
    steps = body.get("steps", 30)
    if not isinstance(steps, int) or isinstance(steps, bool) or steps < 1:
        raise ValueError("'steps' must be a positive integer")
    control = body.get("control", [])
    if not isinstance(control, list):
        raise ValueError("'control' must be a list")
    control_hashes = []
    for i, entry in enumerate(control):
        if not isinstance(entry, dict) or entry.get("type") not in ("openpose", "lineart"):
            raise ValueError(f"control[{i}]: type must be 'openpose' or 'lineart'")
        try:
            data = base64.b64decode(entry["image_b64"], validate=True)
        except Exception:
            raise ValueError(f"control[{i}]: image_b64 is not valid base64")
        control_hashes.append(hashlib.sha256(data).digest())
    return prompt, seed, width, height, control_hashes


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    def _send_json(self, status, obj):
        body = json.dumps(obj).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):
        self.server.stats.count("requests")
        if self.path == "/v1/health":
            self._send_json(200, {"status": "ok", "model_id": self.server.mock_config.model_id})
        else:
            self._send_json(404, {"error": f"no such endpoint: {self.path}"})

    def do_POST(self):
        self.server.stats.count("requests")
        if self.path != "/v1/generate":
            self._send_json(404, {"error": f"no such endpoint: {self.path}"})
            return
        try:
            length = int(self.headers.get("Content-Length", "0"))
            raw = self.rfile.read(length)
            body = json.loads(raw.decode("utf-8"))
        except Exception:
            self._send_json(400, {"error": "request body is not valid JSON"})
            return
        try:
            prompt, seed, width, height, control_hashes = _validate_generate(body)
        except ValueError as exc:
            self._send_json(400, {"error": str(exc)})
            return
        cfg = self.server.mock_config
        if cfg.latency_ms:
            time.sleep(cfg.latency_ms / 1000.0)
        png = render_png(prompt, seed, control_hashes, width, height)
        self.server.stats.count("generated")
        self._send_json(
            200,
            {
                "image_b64": base64.b64encode(png).decode("ascii"),
                "model_id": cfg.model_id,
                "seed_used": seed,
            },
        )

    def log_message(self, fmt, *args):  # keep test output quiet
        pass


class _Stats:
    def __init__(self):
        self._lock = threading.Lock()
        self.counters = {}

    def count(self, key):
        with self._lock:
            self.counters[key] = self.counters.get(key, 0) + 1

    def get(self, key):
        with self._lock:
            return self.counters.get(key, 0)


class MockServerHandle:
    """Running server plus the thread driving it."""

    def __init__(self, server, thread):
        self._server = server
        self._thread = thread

    @property
    def port(self) -> int:
        return self._server.server_address[1]

    @property
    def url(self) -> str:
        return f"http://127.0.0.1:{self.port}"

    @property
    def request_count(self) -> int:
        return self._server.stats.get("requests")

    @property
    def generate_count(self) -> int:
        return self._server.stats.get("generated")

    def close(self):
        self._server.shutdown()
        self._server.server_close()
        self._thread.join(timeout=10)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def serve(config: MockConfig | None = None) -> MockServerHandle:
    """Start the mock backend on config.port (0 = ephemeral) and return a
    handle; the server runs on a daemon thread until close()."""
    config = config or MockConfig()
    server = ThreadingHTTPServer(("127.0.0.1", config.port), _Handler)
    server.daemon_threads = True
    server.mock_config = config
    server.stats = _Stats()
    thread = threading.Thread(target=server.serve_forever, name="sig-mock-backend", daemon=True)
    thread.start()
    return MockServerHandle(server, thread)


def serve_forever(config: MockConfig):
    """Blocking variant for the CLI."""
    import sys

    handle = serve(config)
    print(
        f"mock backend listening on {handle.url} (model_id={config.model_id})",
        file=sys.stderr,
        flush=True,
    )
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        handle.close()
