"""HTTP gateway for the operator console.

Endpoints:

    GET  /api/state          current session snapshot (phase Idle before any)
    GET  /api/stream         server-sent events: transition, utterance,
                             percept, trial, annotation, session
    POST /api/input          {kind: hand_cube|speech_text|annotation|abort|
                              force_retry, payload: {...}}
    POST /api/session/start  {overrides for the base config}
    GET  /api/fsm            phase graph for rendering
    GET  /api/manifest       sticker manifest entries
    GET  /assets/<name>      sticker tile images
    GET  /, /dist/<name>     operator console bundle, when one is configured

Inputs are gated by the FSM admissibility table: a cube handed during a phase
that cannot accept one answers 409, malformed payloads answer 400.  Console
inputs land on the same scene feeds scripted replays use, so the FSM cannot
tell them apart.
"""
from __future__ import annotations

import json
import logging
import queue
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Optional

from . import fsm
from .config import ConfigError, SessionConfig, load_manifest
from .runner import SessionRunner

log = logging.getLogger(__name__)

INPUT_KINDS = ("hand_cube", "speech_text", "annotation", "abort", "force_retry")
_STREAM_POLL_S = 0.5


class GatewayError(Exception):
    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status
        self.message = message


def _idle_snapshot() -> dict:
    return {
        "phase": fsm.Phase.IDLE.value,
        "stage": None,
        "trial_index": 0,
        "trials_total": 0,
        "participant_id": "",
        "admissible": [fsm.EventKind.START_SESSION.value],
        "records": 0,
        "session_dir": None,
        "finished": False,
    }


def admissible_inputs(snapshot: dict) -> list[str]:
    """Console verbs allowed right now; drives control gating in the UI."""
    phase = snapshot["phase"]
    events = set(snapshot.get("admissible", ()))
    allowed = []
    if fsm.EventKind.CUBE_HANDED_OVER.value in events:
        allowed.append("hand_cube")
    if fsm.EventKind.HUMAN_SPEECH_FINAL.value in events:
        allowed.append("speech_text")
    if phase == fsm.Phase.FAILURE_RECOVERY.value:
        allowed.append("force_retry")
    if phase not in (fsm.Phase.IDLE.value, fsm.Phase.CLOSURE.value):
        allowed.append("abort")
        allowed.append("annotation")
    return allowed


class Gateway:
    """Session lifecycle plus SSE fan-out behind one HTTP server."""

    def __init__(
        self,
        base_config: SessionConfig,
        host: str = "127.0.0.1",
        port: int = 0,
        assets_dir: Optional[str] = None,
        console_dir: Optional[str] = None,
    ):
        self.base_config = base_config
        self.host = host
        self.port = port
        self.assets_dir = Path(assets_dir) if assets_dir else None
        self.console_dir = Path(console_dir) if console_dir else None
        self._runner: Optional[SessionRunner] = None
        self._runner_thread: Optional[threading.Thread] = None
        self._clients: list[queue.Queue] = []
        self._lock = threading.Lock()
        self._httpd: Optional[ThreadingHTTPServer] = None

    # --- lifecycle -----------------------------------------------------

    def start(self) -> tuple[str, int]:
        gateway = self

        class Handler(_Handler):
            pass

        Handler.gateway = gateway
        self._httpd = ThreadingHTTPServer((self.host, self.port), Handler)
        self._httpd.daemon_threads = True
        self.port = self._httpd.server_address[1]
        t = threading.Thread(target=self._httpd.serve_forever, name="gateway", daemon=True)
        t.start()
        return self.host, self.port

    def stop(self) -> None:
        if self._runner and not self._runner.snapshot()["finished"]:
            self._runner.submit_control("abort")
            if self._runner_thread:
                self._runner_thread.join(timeout=10)
        if self._httpd:
            self._httpd.shutdown()
            self._httpd.server_close()

    def join_session(self, timeout: Optional[float] = None) -> None:
        if self._runner_thread:
            self._runner_thread.join(timeout)

    # --- session control -------------------------------------------------

    def start_session(self, overrides: Optional[dict] = None) -> dict:
        with self._lock:
            if self._runner is not None and not self._runner.snapshot()["finished"]:
                raise GatewayError(409, "a session is already running")
            try:
                config = self.base_config.with_overrides(overrides or {})
                runner = SessionRunner(config)
            except ConfigError as exc:
                raise GatewayError(400, str(exc)) from exc
            runner.add_listener(self._broadcast)
            if config.scene_path is None:
                # interactive sessions: the operator is the visible face
                runner.feeds.faces.push(
                    {"faces": [{"identity": config.participant_hint, "area": 40000}]}
                )
            self._runner = runner
            self._runner_thread = threading.Thread(
                target=runner.run, name="session", daemon=True
            )
            self._runner_thread.start()
        return self.snapshot()

    def snapshot(self) -> dict:
        runner = self._runner
        snap = runner.snapshot() if runner else _idle_snapshot()
        snap["admissible_inputs"] = admissible_inputs(snap)
        return snap

    def handle_input(self, kind: str, payload: dict) -> dict:
        if kind not in INPUT_KINDS:
            raise GatewayError(400, "unknown input kind %r" % kind)
        runner = self._runner
        if runner is None or runner.snapshot()["finished"]:
            raise GatewayError(409, "no running session")
        snap = self.snapshot()
        allowed = snap["admissible_inputs"]
        if kind not in allowed:
            raise GatewayError(
                409, "%s not admissible in phase %s" % (kind, snap["phase"])
            )
        if kind == "hand_cube":
            cube = payload.get("cube_id")
            if not cube or not isinstance(cube, str):
                raise GatewayError(400, "hand_cube needs cube_id")
            known = {s["id"] for s in runner.stickers}
            if cube not in known:
                raise GatewayError(400, "unknown cube_id %r" % cube)
            runner.feeds.cube.push("cube", {"label": cube})
        elif kind == "speech_text":
            text = payload.get("text")
            if not text or not isinstance(text, str):
                raise GatewayError(400, "speech_text needs text")
            runner.feeds.speech.push("speech", {"text": text})
        elif kind == "annotation":
            if not payload:
                raise GatewayError(400, "annotation needs flags")
            runner.submit_control("annotate", payload)
        elif kind == "abort":
            runner.submit_control("abort")
        elif kind == "force_retry":
            runner.submit_control("force_retry")
        return {"accepted": kind}

    def manifest(self) -> list[dict]:
        runner = self._runner
        if runner is not None:
            return runner.stickers
        return load_manifest(self.base_config.manifest_path)

    # --- streaming ----------------------------------------------------------

    def subscribe(self) -> queue.Queue:
        q: queue.Queue = queue.Queue(maxsize=1000)
        with self._lock:
            self._clients.append(q)
        return q

    def unsubscribe(self, q: queue.Queue) -> None:
        with self._lock:
            if q in self._clients:
                self._clients.remove(q)

    def _broadcast(self, kind: str, data: dict) -> None:
        with self._lock:
            clients = list(self._clients)
        for q in clients:
            try:
                q.put_nowait((kind, data))
            except queue.Full:
                log.warning("dropping slow stream client")
                self.unsubscribe(q)


class _Handler(BaseHTTPRequestHandler):
    gateway: Gateway
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):  # route through logging, not stderr
        log.debug("http %s", fmt % args)

    def _send_json(self, status: int, body: dict | list) -> None:
        raw = json.dumps(body).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(raw)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(raw)

    def _read_body(self) -> dict:
        length = int(self.headers.get("Content-Length") or 0)
        if length <= 0:
            return {}
        raw = self.rfile.read(length)
        try:
            data = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise GatewayError(400, "body is not valid JSON: %s" % exc) from exc
        if not isinstance(data, dict):
            raise GatewayError(400, "body must be a JSON object")
        return data

    def do_OPTIONS(self):  # CORS preflight for the console dev server
        self.send_response(204)
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")
        self.send_header("Content-Length", "0")
        self.end_headers()

    def do_GET(self):
        try:
            if self.path == "/api/state":
                self._send_json(200, self.gateway.snapshot())
            elif self.path == "/api/stream":
                self._stream()
            elif self.path == "/api/fsm":
                self._send_json(200, fsm.graph())
            elif self.path == "/api/manifest":
                self._send_json(200, self.gateway.manifest())
            elif self.path.startswith("/assets/"):
                self._asset(self.path[len("/assets/"):])
            elif self.path in ("/", "/index.html"):
                self._console("index.html")
            elif self.path.startswith("/dist/"):
                self._console(self.path.lstrip("/"))
            else:
                self._send_json(404, {"error": "not found"})
        except GatewayError as exc:
            self._send_json(exc.status, {"error": exc.message})
        except (BrokenPipeError, ConnectionResetError):
            pass

    def do_POST(self):
        try:
            if self.path == "/api/input":
                body = self._read_body()
                kind = body.get("kind")
                if not isinstance(kind, str):
                    raise GatewayError(400, "input needs a kind")
                payload = body.get("payload") or {}
                if not isinstance(payload, dict):
                    raise GatewayError(400, "payload must be an object")
                self._send_json(200, self.gateway.handle_input(kind, payload))
            elif self.path == "/api/session/start":
                body = self._read_body()
                self._send_json(200, self.gateway.start_session(body))
            else:
                self._send_json(404, {"error": "not found"})
        except GatewayError as exc:
            self._send_json(exc.status, {"error": exc.message})
        except (BrokenPipeError, ConnectionResetError):
            pass

    _CONTENT_TYPES = {
        ".svg": "image/svg+xml",
        ".html": "text/html; charset=utf-8",
        ".js": "text/javascript",
        ".css": "text/css",
        ".map": "application/json",
        ".json": "application/json",
    }

    def _asset(self, name: str) -> None:
        self._send_file(self.gateway.assets_dir, name, "no such asset")

    def _console(self, name: str) -> None:
        self._send_file(self.gateway.console_dir, name, "no console bundle configured")

    def _send_file(self, base: Optional[Path], name: str, missing: str) -> None:
        if base is None:
            raise GatewayError(404, missing)
        target = (base / name).resolve()
        if not str(target).startswith(str(base.resolve())) or not target.is_file():
            raise GatewayError(404, missing)
        raw = target.read_bytes()
        ctype = self._CONTENT_TYPES.get(target.suffix, "application/octet-stream")
        self.send_response(200)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(raw)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(raw)

    def _stream(self) -> None:
        q = self.gateway.subscribe()
        try:
            self.send_response(200)
            self.send_header("Content-Type", "text/event-stream")
            self.send_header("Cache-Control", "no-cache")
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()
            snap = self.gateway.snapshot()
            self._sse("state", snap)
            while True:
                try:
                    kind, data = q.get(timeout=_STREAM_POLL_S)
                except queue.Empty:
                    self.wfile.write(b": keepalive\n\n")
                    self.wfile.flush()
                    continue
                self._sse(kind, data)
        except (BrokenPipeError, ConnectionResetError, OSError):
            pass
        finally:
            self.gateway.unsubscribe(q)

    def _sse(self, kind: str, data: dict) -> None:
        frame = "event: %s\ndata: %s\n\n" % (kind, json.dumps(data))
        self.wfile.write(frame.encode("utf-8"))
        self.wfile.flush()
