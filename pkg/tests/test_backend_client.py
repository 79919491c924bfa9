import base64
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from sig import conformance
from sig.backend import check_health, generate_image
from sig.errors import (
    BackendUnreachableError,
    JobValidationError,
    ProtocolError,
    RequestFailedError,
)
from sig.orchestrator import GenerationJob


def job(**kw):
    defaults = dict(
        identity_id="id1",
        pose="front",
        positive_prompt="photo of [A | B | C], facing forward",
        negative_prompt="",
        generation_seed=5,
        width=512,
        height=512,
        steps=4,
        guidance=7.0,
    )
    defaults.update(kw)
    return GenerationJob(**defaults)


class MisbehavingServer:
    """Configurable bad backend for protocol-error tests."""

    def __init__(self, mode):
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_GET(self):
                self._respond()

            def do_POST(self):
                self.rfile.read(int(self.headers.get("Content-Length", 0)))
                self._respond()

            def _respond(self):
                if outer.mode == "truncated_json":
                    body = b'{"image_b64": "iVBOR'  # cut mid-value
                    self.send_response(200)
                    self.send_header("Content-Type", "application/json")
                    self.send_header("Content-Length", str(len(body)))
                    self.end_headers()
                    self.wfile.write(body)
                elif outer.mode == "not_png":
                    payload = {
                        "image_b64": base64.b64encode(b"not a png at all").decode(),
                        "model_id": "m",
                        "seed_used": 5,
                    }
                    body = json.dumps(payload).encode()
                    self.send_response(200)
                    self.send_header("Content-Length", str(len(body)))
                    self.end_headers()
                    self.wfile.write(body)
                elif outer.mode == "http_500":
                    body = json.dumps({"error": "backend exploded"}).encode()
                    self.send_response(500)
                    self.send_header("Content-Length", str(len(body)))
                    self.end_headers()
                    self.wfile.write(body)

            def log_message(self, *a):
                pass

        self.mode = mode
        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self.thread.start()
        self.url = f"http://127.0.0.1:{self.server.server_address[1]}"

    def close(self):
        self.server.shutdown()
        self.server.server_close()


@pytest.fixture()
def bad_server(request):
    server = MisbehavingServer(request.param)
    yield server
    server.close()


def test_generate_against_mock(mock_backend):
    png, model_id = generate_image(job(), mock_backend.url)
    assert model_id == "mock-diffusion-0"
    assert png.startswith(b"\x89PNG")


def test_width_not_multiple_of_8_rejected_client_side(mock_backend):
    before = mock_backend.request_count
    with pytest.raises(JobValidationError):
        generate_image(job(width=511), mock_backend.url)
    assert mock_backend.request_count == before  # never hit the network


@pytest.mark.parametrize(
    "bad_kwargs",
    [dict(height=0), dict(steps=0), dict(guidance=0.0), dict(generation_seed=-1)],
)
def test_other_client_side_validations(bad_kwargs):
    with pytest.raises(JobValidationError):
        generate_image(job(**bad_kwargs), "http://127.0.0.1:1")


@pytest.mark.parametrize("bad_server", ["truncated_json"], indirect=True)
def test_truncated_body_is_protocol_error(bad_server):
    with pytest.raises(ProtocolError):
        generate_image(job(), bad_server.url)


@pytest.mark.parametrize("bad_server", ["not_png"], indirect=True)
def test_non_png_payload_is_protocol_error(bad_server):
    with pytest.raises(ProtocolError):
        generate_image(job(), bad_server.url)


@pytest.mark.parametrize("bad_server", ["http_500"], indirect=True)
def test_http_error_carries_status_and_message(bad_server):
    with pytest.raises(RequestFailedError) as err:
        generate_image(job(), bad_server.url)
    assert err.value.status == 500
    assert "backend exploded" in str(err.value)


def test_unreachable_backend():
    with pytest.raises(BackendUnreachableError):
        check_health("http://127.0.0.1:9", timeout=0.5)


def test_health_against_mock(mock_backend):
    assert check_health(mock_backend.url) == "mock-diffusion-0"


def test_unknown_control_type_rejected():
    with pytest.raises(JobValidationError):
        generate_image(job(), "http://127.0.0.1:1", control_maps=[("magic", b"x")])


def test_conformance_suite_against_mock(mock_backend):
    results = conformance.run_all(mock_backend.url)
    assert [status for _, status in results] == ["PASS"] * len(results)
    names = [name for name, _ in results]
    assert names == [
        "health",
        "generate_shape",
        "generate_determinism",
        "generate_error_shapes",
        "unknown_endpoint",
    ]
