"""Loopback HTTP server exposing the mock model endpoints.

Serves the three wire contracts (/v1/embed, /v1/classify, /v1/generate)
from the deterministic mock backends, so the HTTP clients and the
bring-your-own-endpoints evaluation path can be exercised without any real
model hosting.
"""

from __future__ import annotations

import argparse
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Mapping

from .mock import DEFAULT_DIM, MockCase, MockClassifier, MockEmbedder, UnknownCaseError, mock_report_text


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):  # keep test output quiet
        pass

    def _send(self, status: int, payload: dict) -> None:
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _read_json(self) -> dict | None:
        length = int(self.headers.get("Content-Length", "0"))
        try:
            decoded = json.loads(self.rfile.read(length).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError):
            self._send(400, {"error": "request body is not valid JSON"})
            return None
        if not isinstance(decoded, dict):
            self._send(400, {"error": "request body must be a JSON object"})
            return None
        return decoded

    def do_POST(self):  # noqa: N802 (http.server naming)
        body = self._read_json()
        if body is None:
            return
        try:
            if self.path == "/v1/embed":
                texts = body.get("texts")
                if not isinstance(texts, list) or not texts or any(not isinstance(t, str) for t in texts):
                    self._send(400, {"error": "'texts' must be a non-empty list of strings"})
                    return
                vectors = self.server.embedder.embed(texts)
                self._send(200, {"dim": self.server.embedder.dim, "embeddings": [v.tolist() for v in vectors]})
            elif self.path == "/v1/classify":
                image_ref = body.get("image_ref")
                if not isinstance(image_ref, str) or not image_ref:
                    self._send(400, {"error": "'image_ref' must be a non-empty string"})
                    return
                p = self.server.classifier.classify(image_ref)
                self._send(
                    200,
                    {
                        "dr_grade": p.grade,
                        "dr_probs": list(p.grade_probs),
                        "dr_confidence": p.grade_confidence,
                        "me_present": p.me_present,
                        "me_confidence": p.me_confidence,
                    },
                )
            elif self.path == "/v1/generate":
                prompt = body.get("prompt")
                if not isinstance(prompt, str) or not prompt:
                    self._send(400, {"error": "'prompt' must be a non-empty string"})
                    return
                self._send(200, {"text": mock_report_text(prompt)})
            else:
                self._send(404, {"error": f"unknown endpoint {self.path}"})
        except UnknownCaseError as exc:
            self._send(404, {"error": str(exc)})
        except ValueError as exc:
            self._send(400, {"error": str(exc)})


class MockModelServer:
    """Threaded mock endpoint server; use as a context manager in tests."""

    def __init__(
        self,
        host: str = "127.0.0.1",
        port: int = 0,
        dim: int = DEFAULT_DIM,
        cases: Mapping[str, MockCase] | None = None,
    ):
        self._server = ThreadingHTTPServer((host, port), _Handler)
        self._server.embedder = MockEmbedder(dim=dim)
        self._server.classifier = MockClassifier(cases)
        self._thread: threading.Thread | None = None

    @property
    def base_url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "MockModelServer":
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def __enter__(self) -> "MockModelServer":
        return self.start()

    def __exit__(self, *exc_info) -> None:
        self.stop()


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Run the mock model endpoints")
    parser.add_argument("--bind", default="127.0.0.1:8700", help="host:port to listen on")
    parser.add_argument("--dim", type=int, default=DEFAULT_DIM, help="embedding dimension")
    args = parser.parse_args(argv)
    host, _, port = args.bind.rpartition(":")
    server = MockModelServer(host=host or "127.0.0.1", port=int(port), dim=args.dim)
    print(f"mock model endpoints listening on {server.base_url}")
    try:
        server._server.serve_forever()
    except KeyboardInterrupt:
        server.stop()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
