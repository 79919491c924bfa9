import threading
import time

import pytest
import uvicorn

from sig_sidecar.config import SidecarConfig
from sig_sidecar.server import create_app


class LiveServer:
    """Real uvicorn server on an ephemeral port, driven from a thread, so
    the conformance suite exercises genuine HTTP."""

    def __init__(self, app):
        config = uvicorn.Config(app, host="127.0.0.1", port=0, log_level="warning")
        self.server = uvicorn.Server(config)
        self.thread = threading.Thread(target=self.server.run, daemon=True)

    def __enter__(self):
        self.thread.start()
        deadline = time.time() + 15
        while not self.server.started:
            if time.time() > deadline:
                raise RuntimeError("uvicorn did not start in time")
            time.sleep(0.02)
        port = self.server.servers[0].sockets[0].getsockname()[1]
        self.url = f"http://127.0.0.1:{port}"
        return self

    def __exit__(self, *exc):
        self.server.should_exit = True
        self.thread.join(timeout=10)


@pytest.fixture(scope="session")
def sidecar_url():
    config = SidecarConfig()  # auto engines: procedural/pixelstat here
    with LiveServer(create_app(config)) as live:
        # wait for the startup engine load to finish (503 until then)
        import json
        import urllib.request

        deadline = time.time() + 15
        while time.time() < deadline:
            try:
                with urllib.request.urlopen(live.url + "/v1/health", timeout=2) as resp:
                    if json.loads(resp.read()).get("status") == "ok":
                        break
            except Exception:
                pass
            time.sleep(0.05)
        yield live.url
