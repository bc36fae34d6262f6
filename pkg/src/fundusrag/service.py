"""HTTP report service: POST /v1/report and GET /healthz."""

from __future__ import annotations

import json
import signal
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .mock import UnknownCaseError
from .pipeline import DEFAULT_BIND, Pipeline, RunConfig, StageError


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):
        pass

    def _send(self, status: int, payload: dict | str, content_type: str = "application/json") -> None:
        body = (payload if isinstance(payload, str) else json.dumps(payload)).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):  # noqa: N802
        if self.path == "/healthz":
            self._send(200, "ok", content_type="text/plain")
        else:
            self._send(404, {"error": f"unknown path {self.path}"})

    def do_POST(self):  # noqa: N802
        if self.path != "/v1/report":
            self._send(404, {"error": f"unknown path {self.path}"})
            return
        length = int(self.headers.get("Content-Length", "0"))
        try:
            body = json.loads(self.rfile.read(length).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError):
            self._send(400, {"error": "request body is not valid JSON"})
            return
        image_ref = body.get("image_ref") if isinstance(body, dict) else None
        if not isinstance(image_ref, str) or not image_ref:
            self._send(400, {"error": "'image_ref' must be a non-empty string"})
            return

        # The semaphore bounds concurrent report generations, not connections.
        try:
            with self.server.limiter:
                report, trace = self.server.pipeline.run_report(image_ref)
            self._send(200, {"report": report.text, "trace": trace})
        except StageError as exc:
            status = 404 if isinstance(exc.cause, (UnknownCaseError, FileNotFoundError)) else 500
            self._send(status, {"error": str(exc)})
        except Exception as exc:  # defensive: never leak a traceback as 200
            self._send(500, {"error": f"internal error: {exc}"})


class ReportServer:
    """Threaded server wrapper; non-blocking start for embedding in tests."""

    def __init__(self, pipeline: Pipeline, bind: str = DEFAULT_BIND):
        host, _, port = bind.rpartition(":")
        if not port.isdigit():
            raise ValueError(f"bind address must be host:port, got {bind!r}")
        try:
            self._server = ThreadingHTTPServer((host or "127.0.0.1", int(port)), _Handler)
        except OSError as exc:
            raise OSError(f"cannot bind {bind!r}: {exc}") from exc
        self._server.pipeline = pipeline
        self._server.limiter = threading.BoundedSemaphore(pipeline.config.concurrency)
        self._thread: threading.Thread | None = None

    @property
    def base_url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "ReportServer":
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def __enter__(self) -> "ReportServer":
        return self.start()

    def __exit__(self, *exc_info) -> None:
        self.stop()


def serve(config: RunConfig, bind: str = DEFAULT_BIND) -> int:
    """Run the service until SIGINT/SIGTERM; returns 0 on clean shutdown."""
    server = ReportServer(Pipeline(config), bind)
    stop_event = threading.Event()

    def _on_signal(signum, frame):
        stop_event.set()

    previous = {}
    for sig in (signal.SIGINT, signal.SIGTERM):
        previous[sig] = signal.signal(sig, _on_signal)
    try:
        server.start()
        print(f"report service listening on {server.base_url}")
        stop_event.wait()
    finally:
        server.stop()
        for sig, handler in previous.items():
            signal.signal(sig, handler)
    return 0
