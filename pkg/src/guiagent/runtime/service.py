"""HTTP service: sessions, control, answers, knowledge, and event streams.

Endpoints (JSON bodies/responses, optional shared bearer token):

    GET  /api/health
    GET  /api/scenarios
    POST /api/knowledge                      ingest into the global store
    POST /api/sessions                       {instruction, scenario, task, config?}
    GET  /api/sessions
    GET  /api/sessions/{id}
    GET  /api/sessions/{id}/trajectories
    POST /api/sessions/{id}/answer           {answer}
    POST /api/sessions/{id}/control          {command: pause|resume|cancel}
    POST /api/sessions/{id}/knowledge        inject docs into the live run
    GET  /api/sessions/{id}/events?since=N   polling fallback
    GET  /api/sessions/{id}/stream           server-sent events (id: = seq)

The stream endpoint replays history from `since` (or Last-Event-ID) before
following live events, so a reconnecting client never misses a sequence
number. A static directory (the operator console bundle) is served at /.
"""

from __future__ import annotations

import json
import logging
import mimetypes
import queue
import re
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Any
from urllib.parse import parse_qs, urlparse

from ..knowledge import DuplicateId, KnowledgeDoc
from .sessions import (
    InvalidTransition,
    NoPendingQuestion,
    SessionManager,
    SessionRequest,
    TERMINAL,
    UnknownScenario,
    UnknownSession,
    ValidationError,
)
from ..simenv import UnknownTask

logger = logging.getLogger(__name__)

_SESSION_RE = re.compile(r"^/api/sessions/([^/]+)(?:/(\w+))?$")


class ApiError(Exception):
    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status
        self.message = message


class ServiceHandler(BaseHTTPRequestHandler):
    server_version = "guiagent/0.1"
    manager: SessionManager
    token: str | None = None
    static_dir: Path | None = None

    # -- plumbing

    def log_message(self, fmt, *args):  # route standard logging through logging
        logger.debug("http: " + fmt, *args)

    def _check_auth(self):
        if not self.token:
            return
        header = self.headers.get("Authorization", "")
        if header != f"Bearer {self.token}":
            raise ApiError(401, "missing or invalid bearer token")

    def _read_json(self) -> dict[str, Any]:
        length = int(self.headers.get("Content-Length") or 0)
        if length == 0:
            return {}
        try:
            return json.loads(self.rfile.read(length).decode("utf-8"))
        except json.JSONDecodeError as e:
            raise ApiError(400, f"invalid JSON body: {e}") from e

    def _send_json(self, payload: Any, status: int = 200):
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(body)

    def _send_error(self, e: Exception):
        mapping = [
            (ApiError, lambda err: err.status),
            ((UnknownSession, UnknownScenario, UnknownTask), lambda err: 404),
            ((NoPendingQuestion, InvalidTransition, DuplicateId), lambda err: 409),
            (ValidationError, lambda err: 400),
        ]
        for types, status_fn in mapping:
            if isinstance(e, types):
                self._send_json({"error": str(e)}, status_fn(e))
                return
        logger.exception("internal error")
        self._send_json({"error": f"internal error: {e}"}, 500)

    # -- static console bundle

    def _serve_static(self, path: str):
        if self.static_dir is None:
            raise ApiError(404, "no static bundle configured")
        rel = path.lstrip("/") or "index.html"
        target = (self.static_dir / rel).resolve()
        if not str(target).startswith(str(self.static_dir.resolve())) or not target.is_file():
            target = self.static_dir / "index.html"
            if not target.is_file():
                raise ApiError(404, f"not found: {path}")
        body = target.read_bytes()
        ctype = mimetypes.guess_type(str(target))[0] or "application/octet-stream"
        self.send_response(200)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    # -- SSE

    def _stream_events(self, session_id: str, since: int):
        session = self.manager.get(session_id)
        self.send_response(200)
        self.send_header("Content-Type", "text/event-stream")
        self.send_header("Cache-Control", "no-cache")
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()

        def write_event(event: dict[str, Any]) -> bool:
            data = json.dumps(event)
            try:
                self.wfile.write(f"id: {event['seq']}\ndata: {data}\n\n".encode("utf-8"))
                self.wfile.flush()
                return True
            except (BrokenPipeError, ConnectionResetError, OSError):
                return False

        sub = session.events.subscribe()
        try:
            last = since
            for event in session.events.read_since(since):
                if not write_event(event):
                    return
                last = event["seq"]
            while True:
                try:
                    event = sub.get(timeout=1.0)
                except queue.Empty:
                    if session.status in TERMINAL and not session.events.read_since(last):
                        return
                    continue
                if event["seq"] <= last:
                    continue
                if not write_event(event):
                    return
                last = event["seq"]
        finally:
            session.events.unsubscribe(sub)

    # -- routing

    def do_GET(self):
        parsed = urlparse(self.path)
        path = parsed.path
        try:
            if not path.startswith("/api"):
                self._serve_static(path)
                return
            self._check_auth()
            if path == "/api/health":
                self._send_json({"ok": True})
            elif path == "/api/scenarios":
                self._send_json({
                    "scenarios": [
                        {"name": name,
                         "tasks": [{"id": t.id, "instruction": t.instruction}
                                   for t in s.tasks.values()]}
                        for name, s in sorted(self.manager.scenarios.items())
                    ]
                })
            elif path == "/api/sessions":
                self._send_json({"sessions": self.manager.list_records()})
            else:
                m = _SESSION_RE.match(path)
                if not m:
                    raise ApiError(404, f"no route {path}")
                session_id, sub = m.group(1), m.group(2)
                session = self.manager.get(session_id)
                query = parse_qs(parsed.query)
                if sub is None:
                    self._send_json(session.record())
                elif sub == "events":
                    since = int(query.get("since", ["0"])[0])
                    self._send_json({"events": session.events.read_since(since)})
                elif sub == "trajectories":
                    self._send_json({"trajectories": session.trajectories()})
                elif sub == "stream":
                    since = int(query.get("since", ["0"])[0]
                                if "since" in query
                                else self.headers.get("Last-Event-ID", 0) or 0)
                    self._stream_events(session_id, since)
                else:
                    raise ApiError(404, f"no route {path}")
        except Exception as e:  # noqa: BLE001 - every error becomes a response
            self._send_error(e)

    def do_POST(self):
        path = urlparse(self.path).path
        try:
            self._check_auth()
            body = self._read_json()
            if path == "/api/sessions":
                request = SessionRequest(
                    instruction=body.get("instruction", ""),
                    scenario=body.get("scenario", ""),
                    task=body.get("task", ""),
                    config=body.get("config", {}),
                )
                if not request.instruction and request.scenario in self.manager.scenarios:
                    scenario = self.manager.scenarios[request.scenario]
                    if request.task in scenario.tasks:
                        request.instruction = scenario.tasks[request.task].instruction
                session = self.manager.create_session(request)
                self._send_json(session.record(), status=201)
            elif path == "/api/knowledge":
                docs = [KnowledgeDoc.from_dict(d) for d in body.get("docs", [])]
                count = self.manager.knowledge_store.ingest(docs)
                self._send_json({"ingested": count})
            else:
                m = _SESSION_RE.match(path)
                if not m or m.group(2) is None:
                    raise ApiError(404, f"no route {path}")
                session = self.manager.get(m.group(1))
                sub = m.group(2)
                if sub == "answer":
                    if "answer" not in body:
                        raise ApiError(400, "body must carry 'answer'")
                    self._send_json(session.post_answer(body["answer"]))
                elif sub == "control":
                    if "command" not in body:
                        raise ApiError(400, "body must carry 'command'")
                    self._send_json(session.control(body["command"]))
                elif sub == "knowledge":
                    docs = [KnowledgeDoc.from_dict(d) for d in body.get("docs", [])]
                    self._send_json(session.inject_knowledge(docs))
                else:
                    raise ApiError(404, f"no route {path}")
        except Exception as e:  # noqa: BLE001
            self._send_error(e)


class RuntimeService:
    """Owns the HTTP server thread and the session manager behind it."""

    def __init__(
        self,
        manager: SessionManager,
        host: str = "127.0.0.1",
        port: int = 0,
        token: str | None = None,
        static_dir: str | Path | None = None,
    ):
        handler = type(
            "BoundHandler",
            (ServiceHandler,),
            {
                "manager": manager,
                "token": token,
                "static_dir": Path(static_dir) if static_dir else None,
            },
        )
        self.manager = manager
        self.server = ThreadingHTTPServer((host, port), handler)
        self.server.daemon_threads = True
        self._thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    @property
    def address(self) -> str:
        host, port = self.server.server_address[:2]
        return f"http://{host}:{port}"

    def start(self):
        self._thread.start()

    def stop(self):
        self.server.shutdown()
        self.server.server_close()

    def serve_forever(self):
        try:
            self.server.serve_forever()
        except KeyboardInterrupt:
            pass
        finally:
            self.server.server_close()
