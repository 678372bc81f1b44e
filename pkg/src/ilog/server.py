"""HTTP wire protocol over the ingest backend.

Control endpoints speak a small JSON envelope; chunk upload posts the raw
sealed bytes. Authorization carries either a participant session token or
the supervisor credential. Responses add permissive CORS headers so the
supervisor dashboard can run from any origin; TLS is left to a fronting
proxy (chunk payloads are independently encrypted).

    POST   /v1/register                      {study_code, background, contact}
    POST   /v1/chunks                        raw chunk bytes
    GET    /v1/tasks?since=<ts>              {tasks[], commands[]}
    POST   /v1/answers                       {answers: [...]}
    GET    /v1/supervisor/status
    GET    /v1/supervisor/compliance.csv
    POST   /v1/supervisor/sync/{pseudonym}
    DELETE /v1/participants/{pseudonym}
"""

from __future__ import annotations

import json
import re
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

from .ingest import (
    Backend,
    BadStudyCode,
    DecodeError,
    PseudonymMismatch,
    StudyClosed,
    Unauthorized,
    UnknownParticipant,
    command_to_wire,
    task_to_wire,
)
from .logpack import AuthFailure

_SYNC_RE = re.compile(r"^/v1/supervisor/sync/([0-9a-f]{32})$")
_PARTICIPANT_RE = re.compile(r"^/v1/participants/([0-9a-f]{32})$")


class ApiHandler(BaseHTTPRequestHandler):
    server_version = "ilog/0.1"
    protocol_version = "HTTP/1.1"
    backend: Backend = None  # injected by make_server
    ui_dir: Path | None = None

    def log_message(self, fmt, *args):  # quiet by default; tests read stdout
        pass

    # -- plumbing -----------------------------------------------------------

    def _auth(self) -> str:
        header = self.headers.get("Authorization", "")
        if header.startswith("Bearer "):
            return header[len("Bearer "):].strip()
        return header.strip()

    def _body(self) -> bytes:
        length = int(self.headers.get("Content-Length", 0))
        return self.rfile.read(length) if length else b""

    def _send(self, status: int, payload: dict | list | bytes,
              content_type: str = "application/json") -> None:
        body = payload if isinstance(payload, bytes) else \
            json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Headers", "Authorization, Content-Type")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, DELETE, OPTIONS")
        self.end_headers()
        self.wfile.write(body)

    def _error(self, status: int, code: str, detail: str = "") -> None:
        self._send(status, {"error": code, "detail": detail})

    # -- verbs ---------------------------------------------------------------

    def do_OPTIONS(self):
        self._send(204, b"", content_type="text/plain")

    def do_POST(self):
        try:
            self._route_post()
        except AuthFailure as exc:
            self._error(401, "auth_failure", str(exc))
        except Unauthorized as exc:
            self._error(403, "unauthorized", str(exc))
        except UnknownParticipant as exc:
            self._error(404, "unknown_participant", str(exc))
        except Exception as exc:  # pragma: no cover - defensive
            self._error(500, "internal", repr(exc))

    def do_GET(self):
        try:
            self._route_get()
        except AuthFailure as exc:
            self._error(401, "auth_failure", str(exc))
        except Unauthorized as exc:
            self._error(403, "unauthorized", str(exc))
        except Exception as exc:  # pragma: no cover - defensive
            self._error(500, "internal", repr(exc))

    def do_DELETE(self):
        try:
            match = _PARTICIPANT_RE.match(self.path)
            if not match:
                return self._error(404, "not_found")
            report = self.backend.erase_participant(self._auth(), match.group(1))
            self._send(200, report)
        except (AuthFailure, Unauthorized) as exc:
            self._error(401, "auth_failure", str(exc))
        except UnknownParticipant as exc:
            self._error(404, "unknown_participant", str(exc))

    # -- routes ---------------------------------------------------------------

    def _route_post(self):
        path = urlparse(self.path).path
        if path == "/v1/register":
            req = json.loads(self._body() or b"{}")
            try:
                record, token, device_key = self.backend.register(
                    req.get("study_code", ""),
                    req.get("background", {}),
                    req.get("contact", ""),
                    tz_offset_min=req.get("tz_offset_min", 0),
                )
            except BadStudyCode as exc:
                return self._error(403, "bad_study_code", str(exc))
            except StudyClosed as exc:
                return self._error(403, "study_closed", str(exc))
            return self._send(200, {
                "token": token,
                "device_key": device_key.hex(),
                "pseudonym": record.pseudonym_id,
            })
        if path == "/v1/chunks":
            try:
                receipt = self.backend.receive_chunk(self._auth(), self._body())
            except PseudonymMismatch as exc:
                return self._error(403, "pseudonym_mismatch", str(exc))
            except DecodeError as exc:
                return self._error(422, "decode_error", str(exc))
            return self._send(200, {
                "chunk_id": receipt.chunk_id,
                "status": receipt.status,
                "readings_stored": receipt.readings_stored,
            })
        if path == "/v1/answers":
            req = json.loads(self._body() or b"{}")
            results = self.backend.submit_answers(self._auth(), req.get("answers", []))
            return self._send(200, {"results": results})
        match = _SYNC_RE.match(path)
        if match:
            cmd = self.backend.trigger_sync(self._auth(), match.group(1))
            return self._send(200, {"queued": True, "command": command_to_wire(cmd)})
        self._error(404, "not_found")

    def _route_get(self):
        parsed = urlparse(self.path)
        path = parsed.path
        if path == "/v1/tasks":
            since = int(parse_qs(parsed.query).get("since", ["0"])[0])
            tasks, commands = self.backend.fetch_tasks(self._auth(), since)
            return self._send(200, {
                "tasks": [task_to_wire(t) for t in tasks],
                "commands": [command_to_wire(c) for c in commands],
            })
        if path == "/v1/supervisor/status":
            rows = self.backend.supervisor_status(self._auth())
            return self._send(200, {
                "now": self.backend.clock(),
                "silence_threshold_ms": self.backend.silence_threshold_ms,
                "participants": [{
                    "pseudonym": r.pseudonym_id,
                    "last_chunk_at": r.last_chunk_at,
                    "last_answer_at": r.last_answer_at,
                    "chunks_total": r.chunks_total,
                    "readings_total": r.readings_total,
                    "answers_total": r.answers_total,
                    "backlog_size": r.backlog_size,
                    "silent": r.silent,
                    "pending_commands": list(r.pending_commands),
                    "contact_ref": r.contact_ref,
                } for r in rows],
            })
        if path == "/v1/supervisor/compliance.csv":
            self.backend._check_supervisor(self._auth())
            from .export import compliance_report, per_day_csv
            report = compliance_report(self.backend.store, self.backend.diary,
                                       self.backend.config)
            return self._send(200, per_day_csv(report).encode(), content_type="text/csv")
        if self.ui_dir is not None and (path == "/" or path.startswith("/ui")):
            return self._serve_ui(path)
        self._error(404, "not_found")

    def _serve_ui(self, path: str):
        rel = path.removeprefix("/ui").lstrip("/") or "index.html"
        target = (self.ui_dir / rel).resolve()
        if not str(target).startswith(str(self.ui_dir.resolve())) or not target.is_file():
            return self._error(404, "not_found")
        types = {".html": "text/html", ".js": "text/javascript", ".css": "text/css"}
        self._send(200, target.read_bytes(),
                   content_type=types.get(target.suffix, "application/octet-stream"))


def make_server(backend: Backend, host: str = "127.0.0.1", port: int = 0,
                ui_dir: str | Path | None = None) -> ThreadingHTTPServer:
    handler = type("BoundApiHandler", (ApiHandler,), {
        "backend": backend,
        "ui_dir": Path(ui_dir) if ui_dir else None,
    })
    return ThreadingHTTPServer((host, port), handler)


class ServerThread:
    """Run the API server on a background thread; for tests and the CLI."""

    def __init__(self, backend: Backend, host: str = "127.0.0.1", port: int = 0,
                 ui_dir: str | Path | None = None):
        self.httpd = make_server(backend, host, port, ui_dir)
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}"

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.httpd.shutdown()
        self.httpd.server_close()
