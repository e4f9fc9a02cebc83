"""Two-party replay protocol: newline-delimited JSON over TCP.

The model owner runs :func:`serve` with a compiled artifact; the trace owner
opens a :class:`RemoteSession` with :func:`connect` and hands it to
``replay_trace``/``replay_log``. Every request gets exactly one response.

Message flow::

    hello  -> hello      dimensions, mode, activity order
    keys   -> keys       evaluation key upload (non-clear modes)
    start  -> start_ok   new session id and the starting marking
    step   -> step_ok    next marking and missing count
    final  -> final_ok   final-marking flag and remaining count

Failures come back as ``{"type": "error", "code": ..., "message": ...}`` and
leave the connection open.
"""

import base64
import itertools
import json
import logging
import socket
import socketserver
import threading

import numpy as np

from .backend import get_backend
from .engine import ReplayEngine, value_bit_width
from .errors import (BadCiphertext, BitWidthOverflow, ConformanceError, DimensionMismatch,
                     ModeUnsupported, ProtocolError, VersionMismatch)

PROTOCOL_VERSION = 1
log = logging.getLogger(__name__)


def parse_endpoint(endpoint):
    """``"host:port"`` (or a ``(host, port)`` pair) to an address tuple."""
    if isinstance(endpoint, tuple):
        return endpoint[0], int(endpoint[1])
    host, sep, port = str(endpoint).rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"endpoint must look like host:port, got {endpoint!r}")
    return host or "127.0.0.1", int(port)


def _dump(msg):
    return (json.dumps(msg, separators=(",", ":")) + "\n").encode("utf-8")


# --- server -------------------------------------------------------------------

class _Session:
    def __init__(self, sid, engine, backend):
        self.id = sid
        self.engine = engine
        self.backend = backend
        self.lock = threading.Lock()
        self.steps = 0


class _Handler(socketserver.StreamRequestHandler):
    def setup(self):
        super().setup()
        self.eval_key = None
        self.owned = set()

    def handle(self):
        for line in self.rfile:
            if not line.strip():
                continue
            reply = self.server.replay.dispatch(line, self)
            try:
                self.wfile.write(_dump(reply))
                self.wfile.flush()
            except OSError:
                break

    def finish(self):
        self.server.replay.drop(self.owned)
        super().finish()


class _TCPServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True


class ReplayServer:
    """Model-owner runtime; holds the artifact and one engine per session."""

    def __init__(self, compiled, backend="clear", endpoint="127.0.0.1:0"):
        self.compiled = compiled
        self.backend_cls = get_backend(backend) if isinstance(backend, str) else backend
        self.mode = self.backend_cls.tag
        self.bit_width = value_bit_width(compiled) if self.mode != "clear" else None
        self.sessions = {}
        self.transcript = []
        self._lock = threading.Lock()
        self._ids = itertools.count(1)
        self._tcp = _TCPServer(parse_endpoint(endpoint), _Handler)
        self._tcp.replay = self
        self._thread = None

    @property
    def address(self):
        host, port = self._tcp.server_address[:2]
        return f"{host}:{port}"

    # lifecycle

    def start(self):
        self._thread = threading.Thread(target=self._tcp.serve_forever, daemon=True)
        self._thread.start()
        return self

    def serve_forever(self):
        self._tcp.serve_forever()

    def shutdown(self):
        self._tcp.shutdown()
        self._tcp.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.shutdown()

    # bookkeeping

    def drop(self, sids):
        with self._lock:
            for sid in sids:
                self.sessions.pop(sid, None)

    def op_counts(self):
        """Per-session operation counts (the only per-session state kept)."""
        with self._lock:
            return {sid: s.backend.account.snapshot() for sid, s in self.sessions.items()}

    def _record(self, msg):
        with self._lock:
            self.transcript.append(msg)

    # dispatch

    def dispatch(self, line, conn):
        try:
            msg = json.loads(line)
        except (ValueError, UnicodeDecodeError):
            return _error("BAD_REQUEST", "request is not valid JSON")
        if not isinstance(msg, dict):
            return _error("BAD_REQUEST", "request must be a JSON object")
        self._record(msg)
        sid = msg.get("session")
        try:
            if msg.get("v") != PROTOCOL_VERSION:
                raise VersionMismatch(f"server speaks v{PROTOCOL_VERSION}, got {msg.get('v')!r}")
            kind = msg.get("type")
            handler = getattr(self, f"_on_{kind}", None) if isinstance(kind, str) else None
            if handler is None:
                raise ProtocolError("UNKNOWN_TYPE", f"unknown message type {kind!r}")
            return handler(msg, conn)
        except ProtocolError as exc:
            return _error(exc.code, exc.message, sid)
        except DimensionMismatch as exc:
            return _error("DIM_MISMATCH", str(exc), sid)
        except BadCiphertext as exc:
            return _error("BAD_BLOB", str(exc), sid)
        except BitWidthOverflow as exc:
            return _error("OVERFLOW", str(exc), sid)
        except ConformanceError as exc:
            return _error("REPLAY_ERROR", str(exc), sid)
        except (KeyError, TypeError, ValueError) as exc:
            return _error("BAD_REQUEST", f"{type(exc).__name__}: {exc}", sid)
        except Exception:  # never tear the connection down
            log.exception("internal error handling %r", msg.get("type"))
            return _error("INTERNAL", "internal server error", sid)

    def _check_mode(self, msg):
        mode = msg.get("mode", self.mode)
        if mode != self.mode:
            raise ModeUnsupported(f"server runs in {self.mode!r} mode, client asked for {mode!r}")

    def _on_hello(self, msg, conn):
        self._check_mode(msg)
        c = self.compiled
        return {"v": PROTOCOL_VERSION, "type": "hello", "places": c.n_places,
                "visible": c.n_visible, "mode": self.mode, "bit_width": self.bit_width,
                "activities": list(c.visible)}

    def _on_keys(self, msg, conn):
        self._check_mode(msg)
        if self.mode == "clear":
            raise ProtocolError("BAD_REQUEST", "clear mode takes no key material")
        try:
            conn.eval_key = base64.b64decode(msg["evaluation_key"], validate=True)
        except (ValueError, TypeError):
            raise BadCiphertext("evaluation key is not valid base64") from None
        return {"v": PROTOCOL_VERSION, "type": "keys", "ok": True}

    def _on_start(self, msg, conn):
        self._check_mode(msg)
        if self.mode == "clear":
            backend = self.backend_cls.server(None, bit_width=None)
        else:
            if conn.eval_key is None:
                raise ProtocolError("NO_KEYS", "upload key material before starting a session")
            backend = self.backend_cls.server(conn.eval_key, bit_width=self.bit_width)
        engine = ReplayEngine(self.compiled, backend)
        with self._lock:
            sid = f"s{next(self._ids)}"
            self.sessions[sid] = _Session(sid, engine, backend)
        conn.owned.add(sid)
        initial = backend.to_wire(backend.encrypt(self.compiled.initial))
        return {"v": PROTOCOL_VERSION, "type": "start_ok", "session": sid, "m": initial}

    def _session(self, msg):
        with self._lock:
            s = self.sessions.get(msg.get("session"))
        if s is None:
            raise ProtocolError("NO_SESSION", f"no open session {msg.get('session')!r}")
        return s

    def _on_step(self, msg, conn):
        s = self._session(msg)
        if not s.lock.acquire(blocking=False):
            raise ProtocolError("BUSY", "a request is already in flight for this session")
        try:
            b = s.backend
            res = s.engine.step(b.from_wire(msg["m"]), b.from_wire(msg["t"]))
            s.steps += 1
            return {"v": PROTOCOL_VERSION, "type": "step_ok", "session": s.id,
                    "m_next": b.to_wire(res.next_marking), "missing": b.to_wire(res.missing)}
        finally:
            s.lock.release()

    def _on_final(self, msg, conn):
        s = self._session(msg)
        if not s.lock.acquire(blocking=False):
            raise ProtocolError("BUSY", "a request is already in flight for this session")
        try:
            b = s.backend
            flag, remaining = s.engine.check_final_marking(b.from_wire(msg["m"]))
            return {"v": PROTOCOL_VERSION, "type": "final_ok", "session": s.id,
                    "flag": b.to_wire(flag), "remaining": b.to_wire(remaining)}
        finally:
            s.lock.release()


def _error(code, message="", sid=None):
    out = {"v": PROTOCOL_VERSION, "type": "error", "code": code, "message": message}
    if sid is not None:
        out["session"] = sid
    return out


def serve(artifact, backend="clear", endpoint="127.0.0.1:0"):
    """Bind a replay server for ``artifact``; call ``.start()`` or use it as a context manager."""
    return ReplayServer(artifact, backend, endpoint)


# --- client -------------------------------------------------------------------

class RemoteSession:
    """Client end of a connection; usable as a replay session.

    Each ``start()`` opens a fresh server session, so one connection can
    replay many traces in sequence.
    """

    def __init__(self, endpoint, mode="clear", seed=None, timeout=30.0):
        self.mode = mode
        backend_cls = get_backend(mode)
        self._sock = socket.create_connection(parse_endpoint(endpoint), timeout=timeout)
        self._rfile = self._sock.makefile("rb")
        self._lock = threading.Lock()
        self.session_id = None
        self.calls = {"start": 0, "step": 0, "final": 0}
        try:
            hello = self.request({"type": "hello", "mode": mode})
            self.n_places, self.n_visible = hello["places"], hello["visible"]
            self.activities = tuple(hello["activities"])
            self.bit_width = hello.get("bit_width")
            self._backend = backend_cls.client(seed=seed, bit_width=self.bit_width)
            key = self._backend.evaluation_key()
            if mode != "clear":
                self.request({"type": "keys", "mode": mode,
                              "evaluation_key": base64.b64encode(key).decode("ascii")})
        except BaseException:
            self.close()
            raise

    def request(self, msg):
        msg = {"v": PROTOCOL_VERSION, **msg}
        with self._lock:
            self._sock.sendall(_dump(msg))
            line = self._rfile.readline()
        if not line:
            raise ProtocolError("CONNECTION_CLOSED", "server closed the connection")
        reply = json.loads(line)
        if reply.get("type") == "error":
            code, text = reply.get("code"), reply.get("message", "")
            if code == "MODE_UNSUPPORTED":
                raise ModeUnsupported(text)
            if code == "VERSION_MISMATCH":
                raise VersionMismatch(text)
            raise ProtocolError(code, text)
        return reply

    def _enc(self, arr):
        return self._backend.to_wire(self._backend.encrypt(np.asarray(arr, dtype=np.int64)))

    def _dec(self, obj):
        return self._backend.decrypt(self._backend.from_wire(obj))

    def start(self):
        reply = self.request({"type": "start", "mode": self.mode})
        self.session_id = reply["session"]
        self.calls["start"] += 1
        return self._dec(reply["m"])

    def step(self, marking, event):
        reply = self.request({"type": "step", "session": self.session_id,
                              "m": self._enc(marking), "t": self._enc(event)})
        self.calls["step"] += 1
        return self._dec(reply["m_next"]), int(self._dec(reply["missing"]))

    def final(self, marking):
        reply = self.request({"type": "final", "session": self.session_id, "m": self._enc(marking)})
        self.calls["final"] += 1
        return int(self._dec(reply["flag"])), int(self._dec(reply["remaining"]))

    def close(self):
        try:
            self._rfile.close()
        finally:
            self._sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def connect(endpoint, mode="clear", seed=None, timeout=30.0):
    """Open a connection and complete the hello/keys handshake."""
    return RemoteSession(endpoint, mode=mode, seed=seed, timeout=timeout)
