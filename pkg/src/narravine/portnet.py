"""Named-port publish/subscribe middleware.

Peer-to-peer links between the supervisor and its satellite modules.  Every
port is a TCP listener registered under a slash-delimited name; a connection
streams length-prefixed JSON frames from a source port to a destination port.
Delivery is at-most-once per connection; broken links reconnect in the
background with exponential backoff.  Retries above that level belong to the
protocol layer, not here.

Wire format: 4-byte big-endian body length, then a UTF-8 JSON document
``{"seq", "sent_at", "kind", "payload"}``.  A frame body is capped at 1 MiB.
"""
from __future__ import annotations

import json
import logging
import os
import socket
import struct
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

log = logging.getLogger(__name__)

MAX_FRAME_BYTES = 1 << 20
BACKOFF_INITIAL_S = 0.1
BACKOFF_FACTOR = 2.0
BACKOFF_CAP_S = 3.0
CALLBACK_BUDGET_S = 0.1

PORT_BASE_ENV = "NARRAVINE_PORT_BASE"


class MiddlewareError(Exception):
    pass


class BadPortName(MiddlewareError):
    pass


class DuplicateName(MiddlewareError):
    pass


class BindFailure(MiddlewareError):
    pass


class UnknownPort(MiddlewareError):
    pass


class ConnectTimeout(MiddlewareError):
    pass


class FrameTooLarge(MiddlewareError):
    pass


class MessageKind(str, Enum):
    EVENT = "event"
    COMMAND = "command"
    REPLY = "reply"
    STREAM = "stream"


@dataclass(frozen=True)
class PortAddress:
    name: str
    host: str
    tcp_port: int


@dataclass(frozen=True)
class PortMessage:
    seq: int
    sent_at: int
    kind: MessageKind
    payload: dict

    def encode(self) -> bytes:
        body = json.dumps(
            {
                "seq": self.seq,
                "sent_at": self.sent_at,
                "kind": self.kind.value,
                "payload": self.payload,
            },
            ensure_ascii=False,
        ).encode("utf-8")
        if len(body) > MAX_FRAME_BYTES:
            raise FrameTooLarge(f"frame body is {len(body)} bytes (cap {MAX_FRAME_BYTES})")
        return struct.pack(">I", len(body)) + body

    @staticmethod
    def decode(body: bytes) -> "PortMessage":
        doc = json.loads(body.decode("utf-8"))
        return PortMessage(
            seq=doc["seq"],
            sent_at=doc["sent_at"],
            kind=MessageKind(doc["kind"]),
            payload=doc["payload"],
        )


def validate_port_name(name: str) -> None:
    if not name or not name.startswith("/") or any(c.isspace() for c in name):
        raise BadPortName(f"invalid port name: {name!r}")


def _read_exact(sock: socket.socket, n: int) -> Optional[bytes]:
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return None
        buf += chunk
    return buf


class Connection:
    """Outbound link from a source port to a destination port.

    Automatically reconnects after the destination restarts; frames published
    while the link is down are dropped (at-most-once semantics).
    """

    def __init__(self, registry: "PortRegistry", src: str, dst: str, connect_timeout: float = 5.0):
        self.registry = registry
        self.src = src
        self.dst = dst
        self._sock: Optional[socket.socket] = None
        self._lock = threading.Lock()
        self._closed = False
        self._reconnecting = False
        self._connect_once(deadline=time.monotonic() + connect_timeout)

    def _connect_once(self, deadline: float) -> None:
        delay = BACKOFF_INITIAL_S
        while True:
            addr = self.registry.lookup(self.dst)
            try:
                sock = socket.create_connection((addr.host, addr.tcp_port), timeout=1.0)
                sock.settimeout(None)
                with self._lock:
                    self._sock = sock
                return
            except OSError:
                if time.monotonic() + delay > deadline:
                    raise ConnectTimeout(f"cannot reach {self.dst} at {addr.host}:{addr.tcp_port}")
                time.sleep(delay)
                delay = min(delay * BACKOFF_FACTOR, BACKOFF_CAP_S)

    @property
    def live(self) -> bool:
        with self._lock:
            return self._sock is not None and not self._closed

    def send(self, frame: bytes) -> bool:
        """Write one frame; returns False (and kicks a reconnect) on a dead link."""
        with self._lock:
            sock = self._sock
        if sock is None:
            self._spawn_reconnect()
            return False
        try:
            sock.sendall(frame)
            return True
        except OSError:
            with self._lock:
                try:
                    sock.close()
                except OSError:
                    pass
                self._sock = None
            self._spawn_reconnect()
            return False

    def _spawn_reconnect(self) -> None:
        with self._lock:
            if self._closed or self._reconnecting:
                return
            self._reconnecting = True
        threading.Thread(target=self._reconnect_loop, daemon=True).start()

    def _reconnect_loop(self) -> None:
        delay = BACKOFF_INITIAL_S
        while not self._closed:
            try:
                addr = self.registry.lookup(self.dst)
                sock = socket.create_connection((addr.host, addr.tcp_port), timeout=1.0)
                sock.settimeout(None)
                with self._lock:
                    if self._closed:
                        sock.close()
                    else:
                        self._sock = sock
                    self._reconnecting = False
                return
            except (OSError, UnknownPort):
                time.sleep(delay)
                delay = min(delay * BACKOFF_FACTOR, BACKOFF_CAP_S)
        with self._lock:
            self._reconnecting = False

    def close(self) -> None:
        with self._lock:
            self._closed = True
            if self._sock is not None:
                try:
                    self._sock.close()
                except OSError:
                    pass
                self._sock = None


class Port:
    """A registered named port: a TCP listener plus outbound connections."""

    def __init__(self, registry: "PortRegistry", address: PortAddress, server: socket.socket):
        self.registry = registry
        self.address = address
        self._server = server
        self._callbacks: list[Callable[[PortMessage], None]] = []
        self._connections: dict[str, Connection] = {}
        self._seq = 0
        self._lock = threading.Lock()
        self._closed = False
        threading.Thread(target=self._accept_loop, daemon=True, name=f"accept{address.name}").start()

    @property
    def name(self) -> str:
        return self.address.name

    def subscribe(self, callback: Callable[[PortMessage], None]) -> None:
        self._callbacks.append(callback)

    def _accept_loop(self) -> None:
        while not self._closed:
            try:
                conn, _ = self._server.accept()
            except OSError:
                return
            threading.Thread(target=self._reader, args=(conn,), daemon=True).start()

    def _reader(self, sock: socket.socket) -> None:
        try:
            while not self._closed:
                header = _read_exact(sock, 4)
                if header is None:
                    return
                (length,) = struct.unpack(">I", header)
                if length > MAX_FRAME_BYTES:
                    log.warning("%s: dropping oversized inbound frame (%d bytes)", self.name, length)
                    return
                body = _read_exact(sock, length)
                if body is None:
                    return
                msg = PortMessage.decode(body)
                for cb in list(self._callbacks):
                    started = time.monotonic()
                    try:
                        cb(msg)
                    except Exception:
                        log.exception("%s: delivery callback raised", self.name)
                    took = time.monotonic() - started
                    if took > CALLBACK_BUDGET_S:
                        log.warning(
                            "%s: delivery callback blocked %.0f ms (budget %d ms)",
                            self.name, took * 1000, CALLBACK_BUDGET_S * 1000,
                        )
        finally:
            try:
                sock.close()
            except OSError:
                pass

    def connect(self, dst: str, timeout: float = 5.0) -> Connection:
        """Link this port to ``dst``; published frames will be delivered there."""
        self.registry.lookup(dst)
        conn = Connection(self.registry, self.name, dst, connect_timeout=timeout)
        with self._lock:
            self._connections[dst] = conn
        return conn

    def disconnect(self, dst: str) -> None:
        with self._lock:
            conn = self._connections.pop(dst, None)
        if conn:
            conn.close()

    def publish(self, payload: dict, kind: MessageKind = MessageKind.EVENT) -> int:
        """Send ``payload`` to every connected destination; returns deliveries."""
        with self._lock:
            self._seq += 1
            msg = PortMessage(seq=self._seq, sent_at=int(time.time() * 1000), kind=kind, payload=payload)
            conns = list(self._connections.values())
        frame = msg.encode()
        return sum(1 for c in conns if c.send(frame))

    def close(self) -> None:
        self._closed = True
        with self._lock:
            conns = list(self._connections.values())
            self._connections.clear()
        for c in conns:
            c.close()
        try:
            self._server.close()
        except OSError:
            pass
        self.registry._forget(self.name)


class PortRegistry:
    """In-process name service mapping port names to live addresses.

    With ``NARRAVINE_PORT_BASE`` set (or ``port_base`` given), ports are
    allocated statically from that base so external processes can attach by
    convention; otherwise the OS picks ephemeral ports.
    """

    def __init__(self, port_base: Optional[int] = None):
        env = os.environ.get(PORT_BASE_ENV)
        if port_base is None and env:
            port_base = int(env)
        self.port_base = port_base
        self._next_offset = 0
        self._ports: dict[str, Port] = {}
        self._static: dict[str, PortAddress] = {}
        self._lock = threading.Lock()

    def load_static(self, table: dict[str, dict]) -> None:
        """Install a static name->address fallback for ports living elsewhere."""
        for name, entry in table.items():
            validate_port_name(name)
            self._static[name] = PortAddress(name=name, host=entry["host"], tcp_port=int(entry["tcp_port"]))

    def register(self, name: str, host: str = "127.0.0.1", tcp_port: Optional[int] = None) -> Port:
        validate_port_name(name)
        with self._lock:
            if name in self._ports:
                raise DuplicateName(name)
            if tcp_port is None:
                if self.port_base is not None:
                    tcp_port = self.port_base + self._next_offset
                    self._next_offset += 1
                else:
                    tcp_port = 0
            server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            try:
                server.bind((host, tcp_port))
                server.listen(16)
            except OSError as exc:
                server.close()
                raise BindFailure(f"cannot bind {name} to {host}:{tcp_port}: {exc}") from exc
            bound = server.getsockname()
            address = PortAddress(name=name, host=bound[0], tcp_port=bound[1])
            port = Port(self, address, server)
            self._ports[name] = port
            return port

    def lookup(self, name: str) -> PortAddress:
        with self._lock:
            if name in self._ports:
                return self._ports[name].address
            if name in self._static:
                return self._static[name]
        raise UnknownPort(name)

    def port(self, name: str) -> Port:
        with self._lock:
            if name in self._ports:
                return self._ports[name]
        raise UnknownPort(name)

    def deregister(self, name: str) -> None:
        with self._lock:
            port = self._ports.get(name)
        if port is None:
            raise UnknownPort(name)
        port.close()

    def _forget(self, name: str) -> None:
        with self._lock:
            self._ports.pop(name, None)

    def connect(self, src: str, dst: str, timeout: float = 5.0) -> Connection:
        return self.port(src).connect(dst, timeout=timeout)

    def publish(self, src: str, payload: dict, kind: MessageKind = MessageKind.EVENT) -> int:
        return self.port(src).publish(payload, kind)

    def dump(self, path) -> None:
        """Write the live registry as a JSON debugging snapshot."""
        with self._lock:
            table = {
                name: {"host": p.address.host, "tcp_port": p.address.tcp_port}
                for name, p in self._ports.items()
            }
        with open(path, "w", encoding="utf-8") as f:
            json.dump(table, f, indent=2, sort_keys=True)

    def close(self) -> None:
        with self._lock:
            ports = list(self._ports.values())
            self._ports.clear()
        for p in ports:
            p._closed = True
            for c in p._connections.values():
                c.close()
            try:
                p._server.close()
            except OSError:
                pass
