"""TCP transport: remote participants bridged onto an in-process broker.

Frames are 4-byte big-endian lengths followed by canonical JSON. A session
opens with ``{"type": "hello", "agent_id": ..., "protocol": "1"}`` and the
server answers ``{"type": "welcome", "agent_id": ..., "config": {...}}``.
After that the client sends ``subscribe``, ``publish``, ``request`` and
``ready`` frames; the server sends ``deliver`` and ``response`` frames.
"""

from __future__ import annotations

import itertools
import logging
import queue
import socket
import threading
from typing import Callable, Dict, List, Optional

from marketsim.bus.broker import Broker, Callback, Deduper, Subscription
from marketsim.bus.envelope import (
    PROTOCOL_VERSION,
    Disconnected,
    Envelope,
    MessageKind,
    pack_frame,
    read_frame,
)
from marketsim.domain import SimError, SimTime

log = logging.getLogger(__name__)


class _Session:
    def __init__(self, server: "BusServer", sock: socket.socket):
        self.server = server
        self.sock = sock
        self.agent_id: Optional[str] = None
        self.subs: List[Subscription] = []
        self._wlock = threading.Lock()

    def send(self, obj: dict) -> None:
        data = pack_frame(obj)
        with self._wlock:
            self.sock.sendall(data)

    def run(self) -> None:
        try:
            hello = read_frame(self.sock)
            if not hello or hello.get("type") != "hello" or hello.get("protocol") != PROTOCOL_VERSION:
                self.send({"type": "error", "code": "BAD_HANDSHAKE"})
                return
            agent_id = str(hello.get("agent_id"))
            config = self.server.agent_configs.get(agent_id)
            if self.server.agent_configs and config is None:
                self.send({"type": "error", "code": "UNKNOWN_AGENT"})
                return
            self.agent_id = agent_id
            self.send({"type": "welcome", "agent_id": agent_id, "config": config or {}})
            self.server._connected(self)
            while True:
                frame = read_frame(self.sock)
                if frame is None:
                    break
                self._handle(frame)
        except (OSError, Disconnected) as exc:
            log.debug("session %s ended: %s", self.agent_id, exc)
        finally:
            for sub in self.subs:
                self.server.broker.unsubscribe(sub)
            self.server._disconnected(self)
            try:
                self.sock.close()
            except OSError:
                pass

    def _handle(self, frame: dict) -> None:
        kind = frame.get("type")
        broker = self.server.broker
        if kind == "subscribe":
            sub_no = frame["sub"]

            def forward(env: Envelope, _no=sub_no) -> None:
                try:
                    self.send({"type": "deliver", "sub": _no, "envelope": env.to_dict()})
                except OSError:
                    pass

            self.subs.append(broker.subscribe(self.agent_id, frame["pattern"], forward))
        elif kind == "publish":
            env = Envelope.from_dict(frame["envelope"])
            if env.sender != self.agent_id:
                log.warning("session %s tried to publish as %s", self.agent_id, env.sender)
                return
            broker.publish(env)
        elif kind == "request":
            env = Envelope.from_dict(frame["envelope"])
            try:
                self.send({"type": "response", "id": frame["id"], "ok": True, "payload": broker.request(env)})
            except SimError as exc:
                self.send({"type": "response", "id": frame["id"], "ok": False,
                           "error": {"code": exc.code, "message": str(exc)}})
        elif kind == "ready":
            self.server._ready(self)
        else:
            log.warning("unknown frame type %r from %s", kind, self.agent_id)


class BusServer:
    """Accepts agent connections and bridges them onto ``broker``."""

    def __init__(self, broker: Broker, host: str = "127.0.0.1", port: int = 0,
                 agent_configs: Optional[Dict[str, dict]] = None):
        self.broker = broker
        self.agent_configs = agent_configs or {}
        self._srv = socket.create_server((host, port))
        self.host, self.port = self._srv.getsockname()[:2]
        self._cv = threading.Condition()
        self.sessions: Dict[str, _Session] = {}
        self.ready_ids: set = set()
        self._thread = threading.Thread(target=self._accept_loop, name="bus-accept", daemon=True)
        self._closing = False

    def start(self) -> "BusServer":
        self._thread.start()
        return self

    def _accept_loop(self) -> None:
        while not self._closing:
            try:
                sock, _ = self._srv.accept()
            except OSError:
                break
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            sess = _Session(self, sock)
            threading.Thread(target=sess.run, name="bus-session", daemon=True).start()

    def _connected(self, sess: _Session) -> None:
        with self._cv:
            self.sessions[sess.agent_id] = sess
            self._cv.notify_all()

    def _ready(self, sess: _Session) -> None:
        with self._cv:
            self.ready_ids.add(sess.agent_id)
            self._cv.notify_all()

    def _disconnected(self, sess: _Session) -> None:
        with self._cv:
            if self.sessions.get(sess.agent_id) is sess:
                del self.sessions[sess.agent_id]
                self.ready_ids.discard(sess.agent_id)
            self._cv.notify_all()

    def wait_ready(self, agent_ids, timeout: float) -> bool:
        want = set(agent_ids)
        with self._cv:
            return self._cv.wait_for(lambda: want <= self.ready_ids, timeout)

    def close(self) -> None:
        self._closing = True
        try:
            self._srv.close()
        except OSError:
            pass
        for sess in list(self.sessions.values()):
            try:
                sess.sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass


class TcpClient:
    """Client side of the TCP transport; same surface as ``LocalClient``.

    A reader thread parses frames; deliveries are handed to a worker thread so
    callbacks may call :meth:`request` without blocking the reader.
    """

    def __init__(self, host: str, port: int, client_id: str, timeout: float = 30.0):
        self.client_id = client_id
        self._sock = socket.create_connection((host, port), timeout=timeout)
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._wlock = threading.Lock()
        self._seq = 0
        self._sub_ids = itertools.count(1)
        self._callbacks: Dict[int, Callable[[Envelope], None]] = {}
        self._pending: Dict[int, "queue.Queue[dict]"] = {}
        self._inbox: "queue.Queue[Optional[tuple]]" = queue.Queue()
        self._send({"type": "hello", "agent_id": client_id, "protocol": PROTOCOL_VERSION})
        welcome = read_frame(self._sock)
        if not welcome or welcome.get("type") != "welcome":
            raise Disconnected(f"handshake refused: {welcome}")
        self.config: dict = welcome.get("config") or {}
        self._sock.settimeout(None)
        self.closed = threading.Event()
        self._reader = threading.Thread(target=self._read_loop, name=f"tcp-read-{client_id}", daemon=True)
        self._worker = threading.Thread(target=self._work_loop, name=f"tcp-work-{client_id}", daemon=True)
        self._reader.start()
        self._worker.start()

    def _send(self, obj: dict) -> None:
        data = pack_frame(obj)
        with self._wlock:
            try:
                self._sock.sendall(data)
            except OSError as exc:
                raise Disconnected(str(exc)) from exc

    def _read_loop(self) -> None:
        try:
            while True:
                frame = read_frame(self._sock)
                if frame is None:
                    break
                t = frame.get("type")
                if t == "deliver":
                    self._inbox.put((frame["sub"], Envelope.from_dict(frame["envelope"])))
                elif t == "response":
                    q = self._pending.pop(frame["id"], None)
                    if q is not None:
                        q.put(frame)
        except (OSError, Disconnected):
            pass
        finally:
            self.closed.set()
            self._inbox.put(None)
            for q in list(self._pending.values()):
                q.put({"ok": False, "error": {"code": "DISCONNECTED", "message": "connection lost"}})

    def _work_loop(self) -> None:
        while True:
            item = self._inbox.get()
            if item is None:
                return
            sub, env = item
            cb = self._callbacks.get(sub)
            if cb is None:
                continue
            try:
                cb(env)
            except Exception:
                log.exception("callback failed for %s", env.kind.value)

    def next_seq(self) -> int:
        self._seq += 1
        return self._seq

    def subscribe(self, pattern: str, callback: Callback) -> int:
        no = next(self._sub_ids)
        dd = Deduper()

        def deliver(env: Envelope) -> None:
            if dd.accept(env):
                callback(env)

        self._callbacks[no] = deliver
        self._send({"type": "subscribe", "sub": no, "pattern": pattern})
        return no

    def publish(self, topic: str, kind: MessageKind, payload: dict, sim_time: SimTime) -> Envelope:
        if self.closed.is_set():
            raise Disconnected("connection closed")
        env = Envelope(topic, self.client_id, self.next_seq(), sim_time, kind, payload)
        self._send({"type": "publish", "envelope": env.to_dict()})
        return env

    def request(self, kind: MessageKind, payload: dict, sim_time: SimTime, timeout: float = 30.0) -> dict:
        env = Envelope("request", self.client_id, self.next_seq(), sim_time, kind, payload)
        q: "queue.Queue[dict]" = queue.Queue(maxsize=1)
        self._pending[env.seq] = q
        self._send({"type": "request", "id": env.seq, "envelope": env.to_dict()})
        try:
            frame = q.get(timeout=timeout)
        except queue.Empty:
            self._pending.pop(env.seq, None)
            raise Disconnected("request timed out")
        if not frame.get("ok"):
            err = frame.get("error") or {}
            raise SimError(err.get("message", ""), code=err.get("code", "REMOTE_ERROR"))
        return frame["payload"]

    def ready(self) -> None:
        self._send({"type": "ready"})

    def wait_closed(self, timeout: Optional[float] = None) -> bool:
        return self.closed.wait(timeout)

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()
        self._worker.join(timeout=5)
