"""Network debug service: sessions steered over newline-delimited JSON.

One listening port speaks both framings: raw NDJSON for scripted clients
and, when the first bytes look like HTTP, a WebSocket binding at /debug
carrying the same JSON payloads (plus static file serving for the browser
canvas). Commands get exactly one reply; events fan out to every attached
client.

In run mode (serving a bundle without --dev) only the allowlisted
run-mode commands work, and started sessions advance automatically.
"""

from __future__ import annotations

import json
import socket
import threading
import uuid
from pathlib import Path
from typing import Dict, List, Optional, Set

from . import engine, topoformat, trace, wsproto
from .engine import Session, SessionManager, StepOutcome
from .errors import AadkError, BindError, UnknownSessionError
from .gateway import Gateway, MimicRule
from .model import TopologyGraph

COMMANDS = (
    "attach", "start", "set_breakpoint", "clear_breakpoint", "continue",
    "step_over", "step_into", "step_out", "inspect", "provide_input",
    "set_mimic_rule", "clear_mimic_rules", "get_trace", "detach",
)

RUN_MODE_COMMANDS = ("attach", "start", "provide_input", "get_trace", "detach")


def export_trace(session: Session, destination) -> dict:
    log = session.trace_log()
    with open(destination, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(trace.dump_log(log))
    return log


class _Client:
    """One connected peer, regardless of framing."""

    def __init__(self, send_text):
        self._send_text = send_text
        self._lock = threading.Lock()
        self.attached = False

    def send(self, obj: dict) -> None:
        text = json.dumps(obj, ensure_ascii=False, allow_nan=False)
        with self._lock:
            self._send_text(text)


class DebugService:
    def __init__(
        self,
        graphs: Dict[str, TopologyGraph],
        entry_graph: str = "",
        *,
        gateway: Optional[Gateway] = None,
        registry=None,
        dev: bool = True,
        static_dir: Optional[Path] = None,
        embed: Optional[dict] = None,
        seed: Optional[int] = None,
    ):
        self.graphs = dict(graphs)
        self.entry_graph = entry_graph or (next(iter(graphs)) if graphs else "")
        self.gateway = gateway if gateway is not None else Gateway()
        self.registry = registry
        self.dev = dev
        self.static_dir = Path(static_dir) if static_dir else None
        self.embed = embed
        self.seed = seed
        self.manager = SessionManager()
        self._clients: Set[_Client] = set()
        self._clients_lock = threading.Lock()
        self._flush_marks: Dict[str, int] = {}
        self._started = 0

    # -- session plumbing -------------------------------------------------------

    def _session_id(self) -> str:
        self._started += 1
        if self.seed is not None:
            return str(uuid.uuid5(uuid.NAMESPACE_URL, f"aadk:{self.seed}:{self._started}"))
        return str(uuid.uuid4())

    def start_session(self, graph_name: str, input_value, breakpoints=None) -> Session:
        graph = self.graphs.get(graph_name)
        if graph is None:
            raise UnknownSessionError(f"no graph named {graph_name!r}")
        session = engine.start_session(
            graph, input_value,
            breakpoints=set(breakpoints or ()),
            gateway=self.gateway,
            graph_lib=self.graphs,
            registry=self.registry,
            session_id=self._session_id(),
        )
        self.manager.add(session)
        self._flush_marks[session.id] = 0
        return session

    # -- event fan-out ------------------------------------------------------------

    def _broadcast(self, session_id: str, event: str, data: dict) -> None:
        message = {"event": event, "session": session_id, "data": data}
        with self._clients_lock:
            clients = [c for c in self._clients if c.attached]
        for client in clients:
            try:
                client.send(message)
            except OSError:
                pass

    _EVENT_MAP = {
        trace.NODE_ENTER: "node_entered",
        trace.NODE_EXIT: "node_exited",
        trace.DISPLAY: "display",
    }

    def _flush_trace_events(self, session: Session) -> None:
        mark = self._flush_marks.get(session.id, 0)
        events = session.trace.events
        for event in events[mark:]:
            name = self._EVENT_MAP.get(event.kind)
            if name:
                self._broadcast(session.id, name, {
                    "node": event.node,
                    "frame_depth": event.frame_depth,
                    **event.data,
                })
        self._flush_marks[session.id] = len(events)

    def _emit_outcome(self, session: Session, outcome: StepOutcome) -> None:
        self._flush_trace_events(session)
        if outcome.kind == StepOutcome.PAUSED:
            self._broadcast(session.id, "paused", {
                "node": outcome.node, "frame_depth": session.depth,
            })
        elif outcome.kind == StepOutcome.NEEDS_INPUT:
            self._broadcast(session.id, "awaiting_input", dict(session.pending_input or {}))
        elif outcome.kind == StepOutcome.DONE:
            self._broadcast(session.id, "finished", {"result": outcome.value})
        elif outcome.kind == StepOutcome.ERROR:
            self._broadcast(session.id, "failed", {"error": outcome.error})

    def _emit_stopped(self, session: Session) -> None:
        """The 'stopped between steps' event after a step command."""
        if session.status in (engine.READY, engine.RUNNING, engine.PAUSED):
            self._broadcast(session.id, "paused", {
                "node": session.peek_next(), "frame_depth": session.depth,
            })

    # -- stepping helpers -----------------------------------------------------------

    def _drive(self, session: Session, should_stop) -> StepOutcome:
        """Step until should_stop(outcome) or the session blocks."""
        while True:
            outcome = session.step()
            self._emit_outcome(session, outcome)
            if outcome.kind in (StepOutcome.PAUSED, StepOutcome.NEEDS_INPUT,
                                StepOutcome.DONE, StepOutcome.ERROR):
                return outcome
            if should_stop(outcome):
                return outcome

    def _autorun(self, session: Session) -> None:
        if session.status in (engine.READY, engine.RUNNING, engine.PAUSED):
            self._drive(session, lambda outcome: False)

    # -- command handling -------------------------------------------------------------

    def handle_command(self, client: _Client, msg: dict) -> dict:
        cmd = msg.get("cmd")
        req = msg.get("req")
        if cmd not in COMMANDS:
            return {"re": req, "ok": False, "error": f"unknown command {cmd!r}"}
        if not self.dev and cmd not in RUN_MODE_COMMANDS:
            return {"re": req, "ok": False, "error": "forbidden"}
        args = msg.get("args") or {}
        try:
            if cmd == "attach":
                client.attached = True
                return {"re": req, "ok": True, "result": {
                    "sessions": [s.snapshot() for s in self.manager.list()],
                    "entry_graph": self.entry_graph,
                    "graphs": {
                        name: json.loads(topoformat.serialize(g))
                        for name, g in self.graphs.items()
                    },
                }}
            if cmd == "detach":
                client.attached = False
                return {"re": req, "ok": True, "result": {}}
            if cmd == "set_mimic_rule":
                self.gateway.set_rule(MimicRule.from_obj(args.get("rule", args)))
                return {"re": req, "ok": True, "result": {"rules": [r.to_obj() for r in self.gateway.rules]}}
            if cmd == "clear_mimic_rules":
                self.gateway.clear_rules()
                return {"re": req, "ok": True, "result": {"rules": []}}
            if cmd == "start":
                session = self.start_session(
                    args.get("graph") or self.entry_graph,
                    args.get("input"),
                    args.get("breakpoints"),
                )
                reply = {"re": req, "ok": True, "result": {
                    "session": session.id, "graph": session.graph.name,
                }}
                if not self.dev:
                    # run mode: sessions advance on their own after the reply
                    def runner():
                        with self.manager.lock(session.id):
                            self._autorun(session)
                    threading.Thread(target=runner, daemon=True).start()
                return reply

            session = self.manager.get(args.get("session") or msg.get("session", ""))
            with self.manager.lock(session.id):
                return self._session_command(client, cmd, req, args, session)
        except AadkError as exc:
            return {"re": req, "ok": False, "error": str(exc)}

    def _session_command(self, client: _Client, cmd: str, req, args: dict, session: Session) -> dict:
        if cmd == "set_breakpoint":
            session.breakpoints.add(args["node"])
            return {"re": req, "ok": True, "result": {"breakpoints": sorted(session.breakpoints)}}
        if cmd == "clear_breakpoint":
            if "node" in args:
                session.breakpoints.discard(args["node"])
            else:
                session.breakpoints.clear()
            return {"re": req, "ok": True, "result": {"breakpoints": sorted(session.breakpoints)}}
        if cmd == "inspect":
            return {"re": req, "ok": True, "result": session.snapshot()}
        if cmd == "get_trace":
            return {"re": req, "ok": True, "result": session.trace_log()}
        if cmd == "provide_input":
            outcome = session.provide_input(args.get("value"))
            self._emit_outcome(session, outcome)
            if not self.dev:
                self._autorun(session)
            return {"re": req, "ok": True, "result": {"status": session.status}}
        if cmd == "continue":
            outcome = self._drive(session, lambda o: False)
            return {"re": req, "ok": True, "result": self._stop_result(session, outcome)}
        if cmd == "step_over":
            depth = session.depth
            outcome = session.step()
            self._emit_outcome(session, outcome)
            if outcome.kind == StepOutcome.ADVANCED and session.depth > depth:
                outcome = self._drive(session, lambda o: session.depth <= depth)
            self._emit_stopped(session)
            return {"re": req, "ok": True, "result": self._stop_result(session, outcome)}
        if cmd == "step_into":
            node_id = session.peek_next()
            applied = "step_over"
            if node_id is not None and session.frames:
                kind = session.frames[-1].graph.node(node_id).kind
                if kind in ("SubAgent", "ArrayLoop"):
                    applied = "step_into"
            depth = session.depth
            outcome = session.step()
            self._emit_outcome(session, outcome)
            if applied == "step_over" and outcome.kind == StepOutcome.ADVANCED and session.depth > depth:
                outcome = self._drive(session, lambda o: session.depth <= depth)
            self._emit_stopped(session)
            result = self._stop_result(session, outcome)
            result["applied"] = applied
            if applied == "step_over":
                result["note"] = "StepIntoNotApplicable"
            return {"re": req, "ok": True, "result": result}
        if cmd == "step_out":
            if not session.frames:
                return {"re": req, "ok": False, "error": "session has no frames"}
            top = session.frames[-1]
            outcome = self._drive(session, lambda o: top not in session.frames)
            self._emit_stopped(session)
            return {"re": req, "ok": True, "result": self._stop_result(session, outcome)}
        return {"re": req, "ok": False, "error": f"unhandled command {cmd!r}"}

    def _stop_result(self, session: Session, outcome: StepOutcome) -> dict:
        result = {"status": session.status, "frame_depth": session.depth}
        if outcome.kind == StepOutcome.PAUSED:
            result["node"] = outcome.node
        elif session.status not in engine.TERMINAL:
            result["node"] = session.peek_next()
        if outcome.kind == StepOutcome.DONE:
            result["result"] = outcome.value
        if outcome.kind == StepOutcome.ERROR:
            result["error"] = outcome.error
        return result

    # -- socket serving -------------------------------------------------------------------

    def serve(self, host: str = "127.0.0.1", port: int = 0) -> "ServiceHandle":
        try:
            listener = socket.create_server((host, port))
        except OSError as exc:
            raise BindError(f"cannot bind {host}:{port}: {exc}")
        handle = ServiceHandle(self, listener)
        thread = threading.Thread(target=handle._accept_loop, daemon=True)
        handle._thread = thread
        thread.start()
        return handle

    # -- per-connection loops ----------------------------------------------------------

    def _serve_ndjson(self, conn: socket.socket) -> None:
        rfile = conn.makefile("rb")
        wfile = conn.makefile("wb")

        def send_text(text: str) -> None:
            wfile.write(text.encode("utf-8") + b"\n")
            wfile.flush()

        client = _Client(send_text)
        self._register(client)
        try:
            for raw in rfile:
                line = raw.decode("utf-8", "replace").strip()
                if not line:
                    continue
                try:
                    msg = json.loads(line)
                    if not isinstance(msg, dict):
                        raise ValueError
                except ValueError:
                    client.send({"re": None, "ok": False, "error": "parse"})
                    continue
                client.send(self.handle_command(client, msg))
        except (OSError, ValueError):
            pass
        finally:
            self._unregister(client)

    def _serve_http(self, conn: socket.socket) -> None:
        rfile = conn.makefile("rb")
        try:
            request_line = rfile.readline().decode("latin-1").strip()
            parts = request_line.split()
            if len(parts) < 2:
                return
            method, path = parts[0], parts[1]
            headers = {}
            while True:
                line = rfile.readline().decode("latin-1").rstrip("\r\n")
                if not line:
                    break
                if ":" in line:
                    key, value = line.split(":", 1)
                    headers[key.strip().lower()] = value.strip()
            if path == "/debug" and method == "GET":
                upgrade = wsproto.server_handshake_response(headers)
                if upgrade is None:
                    conn.sendall(b"HTTP/1.1 400 Bad Request\r\nContent-Length: 0\r\n\r\n")
                    return
                conn.sendall(upgrade)
                self._serve_websocket(conn, rfile)
                return
            self._serve_static(conn, method, path)
        except (OSError, ConnectionError):
            pass

    def _serve_websocket(self, conn: socket.socket, rfile) -> None:
        def send_text(text: str) -> None:
            conn.sendall(wsproto.encode_frame(text.encode("utf-8")))

        client = _Client(send_text)
        self._register(client)
        try:
            while True:
                opcode, payload = wsproto.read_frame(rfile)
                if opcode == wsproto.OP_CLOSE:
                    break
                if opcode == wsproto.OP_PING:
                    conn.sendall(wsproto.encode_frame(payload, wsproto.OP_PONG))
                    continue
                if opcode != wsproto.OP_TEXT:
                    continue
                try:
                    msg = json.loads(payload.decode("utf-8"))
                    if not isinstance(msg, dict):
                        raise ValueError
                except ValueError:
                    client.send({"re": None, "ok": False, "error": "parse"})
                    continue
                client.send(self.handle_command(client, msg))
        except (OSError, ConnectionError):
            pass
        finally:
            self._unregister(client)

    def _serve_static(self, conn: socket.socket, method: str, path: str) -> None:
        def respond(status: str, body: bytes, content_type: str) -> None:
            head = (
                f"HTTP/1.1 {status}\r\n"
                f"Content-Type: {content_type}\r\n"
                f"Content-Length: {len(body)}\r\n"
                "Connection: close\r\n\r\n"
            ).encode("latin-1")
            conn.sendall(head + (b"" if method == "HEAD" else body))

        if method not in ("GET", "HEAD"):
            respond("405 Method Not Allowed", b"method not allowed", "text/plain")
            return
        if path == "/embed.json" and self.embed is not None:
            respond("200 OK", json.dumps(self.embed, indent=2).encode(), "application/json")
            return
        if self.static_dir is None:
            respond("404 Not Found", b"not found", "text/plain")
            return
        rel = path.lstrip("/") or "index.html"
        target = (self.static_dir / rel).resolve()
        try:
            target.relative_to(self.static_dir.resolve())
        except ValueError:
            respond("403 Forbidden", b"forbidden", "text/plain")
            return
        if not target.is_file():
            respond("404 Not Found", b"not found", "text/plain")
            return
        types = {
            ".html": "text/html; charset=utf-8",
            ".js": "text/javascript; charset=utf-8",
            ".css": "text/css; charset=utf-8",
            ".json": "application/json",
            ".map": "application/json",
        }
        respond("200 OK", target.read_bytes(), types.get(target.suffix, "application/octet-stream"))

    def _register(self, client: _Client) -> None:
        with self._clients_lock:
            self._clients.add(client)

    def _unregister(self, client: _Client) -> None:
        with self._clients_lock:
            self._clients.discard(client)


class ServiceHandle:
    def __init__(self, service: DebugService, listener: socket.socket):
        self.service = service
        self._listener = listener
        self._thread: Optional[threading.Thread] = None
        self._conns: List[socket.socket] = []
        self._stopping = False

    @property
    def port(self) -> int:
        return self._listener.getsockname()[1]

    @property
    def host(self) -> str:
        return self._listener.getsockname()[0]

    def _accept_loop(self) -> None:
        while not self._stopping:
            try:
                conn, _ = self._listener.accept()
            except OSError:
                return
            self._conns.append(conn)
            threading.Thread(target=self._dispatch, args=(conn,), daemon=True).start()

    def _dispatch(self, conn: socket.socket) -> None:
        try:
            head = conn.recv(4, socket.MSG_PEEK)
            if head[:4] in (b"GET ", b"POST", b"HEAD"):
                self.service._serve_http(conn)
            else:
                self.service._serve_ndjson(conn)
        except (OSError, ConnectionError):
            pass
        finally:
            try:
                conn.close()
            except OSError:
                pass

    def stop(self) -> None:
        self._stopping = True
        try:
            self._listener.close()
        except OSError:
            pass
        for conn in self._conns:
            try:
                conn.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            try:
                conn.close()
            except OSError:
                pass

    def wait(self) -> None:
        if self._thread is not None:
            self._thread.join()
