"""Loopback HTTP server exposing any provider triple on the JSON wire format.

Used by the integration tests to prove transport transparency: an engine
run against this server wrapping the simulator must match a run against
the simulator adapter directly.  Handy as a reference implementation when
pointing the client at a real serving stack.
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer


def _make_handler(provider):
    class Handler(BaseHTTPRequestHandler):
        def log_message(self, fmt, *args):  # keep test output quiet
            pass

        def _reply(self, code: int, payload: dict):
            body = json.dumps(payload).encode()
            self.send_response(code)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def do_POST(self):
            length = int(self.headers.get("Content-Length", 0))
            try:
                req = json.loads(self.rfile.read(length) or b"{}")
            except json.JSONDecodeError:
                self._reply(400, {"error": "invalid JSON"})
                return
            try:
                if self.path == "/generate":
                    steps = provider.generate(
                        req["path"], req["n"], req.get("temperature", 1.0), req.get("stop")
                    )
                    self._reply(
                        200,
                        {
                            "steps": [
                                {
                                    "text": s.text,
                                    "token_count": s.token_count,
                                    "terminal": s.terminal,
                                }
                                for s in steps
                            ]
                        },
                    )
                elif self.path == "/score":
                    self._reply(200, {"reward": provider.score(req["trajectory"])})
                elif self.path == "/embed":
                    vectors = provider.embed(req["texts"])
                    self._reply(200, {"vectors": [v.vector.tolist() for v in vectors]})
                else:
                    self._reply(404, {"error": f"unknown endpoint {self.path}"})
            except (KeyError, ValueError) as exc:
                self._reply(400, {"error": str(exc)})

    return Handler


class MockServer:
    """Context manager running a provider triple on 127.0.0.1."""

    def __init__(self, provider, port: int = 0):
        self._server = ThreadingHTTPServer(("127.0.0.1", port), _make_handler(provider))
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def base_url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    def __enter__(self) -> "MockServer":
        self._thread.start()
        return self

    def __exit__(self, *exc):
        self._server.shutdown()
        self._server.server_close()
        self._thread.join(timeout=5)
        return False
