"""Message transports: an in-memory bus for tests and length-prefixed TCP.

Wire framing is a 4-byte big-endian length followed by the payload.  Both
transports account every message by its framed size, so byte counters are
comparable between them.
"""

from __future__ import annotations

import logging
import queue
import select
import socket
import struct
import threading
from collections import defaultdict
from dataclasses import dataclass, field

logger = logging.getLogger(__name__)

MAX_FRAME = 64 * 1024 * 1024
_HEADER = struct.Struct("!I")


class TransportError(Exception):
    pass


class ConnectionRefused(TransportError):
    pass


class Timeout(TransportError):
    pass


class Closed(TransportError):
    pass


class InjectedFault(TransportError):
    pass


class FrameError(TransportError):
    pass


class BindError(TransportError):
    pass


def frame(payload: bytes) -> bytes:
    if len(payload) > MAX_FRAME:
        raise FrameError(f"payload of {len(payload)} bytes exceeds the frame limit")
    return _HEADER.pack(len(payload)) + payload


def deframe(buf: bytes) -> tuple[bytes, bytes]:
    """Split one frame off ``buf``; returns ``(payload, rest)``."""
    if len(buf) < 4:
        raise FrameError("incomplete length prefix")
    (size,) = _HEADER.unpack_from(buf)
    if size > MAX_FRAME:
        raise FrameError(f"declared length {size} exceeds the frame limit")
    if len(buf) < 4 + size:
        raise FrameError("incomplete payload")
    return bytes(buf[4:4 + size]), bytes(buf[4 + size:])


def parse_address(address: str) -> tuple[str, int]:
    host, sep, port = address.rpartition(":")
    if not sep or not host or not port.isdigit():
        raise ValueError(f"bad address {address!r}, expected host:port")
    return host, int(port)


@dataclass(frozen=True)
class Envelope:
    to: str
    from_: str
    payload: bytes
    step: str | None = None


@dataclass
class PeerCounters:
    messages_sent: int = 0
    bytes_sent: int = 0
    messages_received: int = 0
    bytes_received: int = 0


class TransportCounters:
    def __init__(self) -> None:
        self._peers: dict[str, PeerCounters] = defaultdict(PeerCounters)
        self._lock = threading.Lock()

    def sent(self, peer: str, nbytes: int) -> None:
        with self._lock:
            c = self._peers[peer]
            c.messages_sent += 1
            c.bytes_sent += nbytes

    def received(self, peer: str, nbytes: int) -> None:
        with self._lock:
            c = self._peers[peer]
            c.messages_received += 1
            c.bytes_received += nbytes

    def snapshot(self) -> dict[str, PeerCounters]:
        with self._lock:
            return {p: PeerCounters(**vars(c)) for p, c in self._peers.items()}

    def totals(self) -> PeerCounters:
        out = PeerCounters()
        for c in self.snapshot().values():
            out.messages_sent += c.messages_sent
            out.bytes_sent += c.bytes_sent
            out.messages_received += c.messages_received
            out.bytes_received += c.bytes_received
        return out


@dataclass
class FaultSpec:
    step: str
    direction: str  # send | receive
    count: int = 1


def step_matches(configured: str, label: str | None) -> bool:
    """``transfer`` matches ``transfer``, ``transfer-stage-1`` and ``transfer-stage-2``."""
    if label is None:
        return False
    return label == configured or label.startswith(configured + "-stage")


@dataclass
class FaultInjector:
    faults: list[FaultSpec] = field(default_factory=list)
    fired: list[tuple[str, str]] = field(default_factory=list)

    def __post_init__(self) -> None:
        self._lock = threading.Lock()

    def trip(self, label: str | None, direction: str) -> bool:
        """Consume one matching fault, if any is armed."""
        with self._lock:
            for f in self.faults:
                if f.count > 0 and f.direction == direction and step_matches(f.step, label):
                    f.count -= 1
                    self.fired.append((label, direction))
                    return True
        return False


class Transport:
    """Common surface: ``send`` an envelope, ``receive`` the next one."""

    address: str

    def __init__(self, faults: FaultInjector | None = None):
        self.counters = TransportCounters()
        self.faults = faults or FaultInjector()
        self._inbox: queue.Queue[Envelope | None] = queue.Queue()
        self._closed = False

    def send(self, envelope: Envelope) -> int:
        if self.faults.trip(envelope.step, "send"):
            raise InjectedFault(f"injected send fault at {envelope.step}")
        size = len(frame(envelope.payload))
        self._deliver(envelope)
        self.counters.sent(envelope.to, size)
        return size

    def _deliver(self, envelope: Envelope) -> None:
        raise NotImplementedError

    def _enqueue(self, envelope: Envelope) -> None:
        self.counters.received(envelope.from_, len(envelope.payload) + 4)
        self._inbox.put(envelope)

    def receive(self, timeout: float | None = None) -> Envelope | None:
        """Next envelope, or ``None`` if ``timeout`` elapses first."""
        if self._closed and self._inbox.empty():
            raise Closed(self.address)
        try:
            env = self._inbox.get(timeout=timeout)
        except queue.Empty:
            return None
        if env is None:
            raise Closed(self.address)
        return env

    def close(self) -> None:
        if not self._closed:
            self._closed = True
            self._inbox.put(None)


class MemoryBus:
    """Connects in-process transports by address; keeps a log of every delivery."""

    def __init__(self) -> None:
        self._endpoints: dict[str, MemoryTransport] = {}
        self._lock = threading.Lock()
        self.log: list[Envelope] = []

    def connect(self, address: str, faults: FaultInjector | None = None) -> MemoryTransport:
        parse_address(address)
        with self._lock:
            if address in self._endpoints:
                raise BindError(f"{address} already in use")
            t = MemoryTransport(self, address, faults)
            self._endpoints[address] = t
            return t

    def _route(self, envelope: Envelope) -> None:
        with self._lock:
            target = self._endpoints.get(envelope.to)
            if target is None or target._closed:
                raise ConnectionRefused(envelope.to)
            self.log.append(envelope)
            target._enqueue(envelope)

    def _remove(self, address: str) -> None:
        with self._lock:
            self._endpoints.pop(address, None)


class MemoryTransport(Transport):
    def __init__(self, bus: MemoryBus, address: str, faults: FaultInjector | None = None):
        super().__init__(faults)
        self.bus = bus
        self.address = address

    def _deliver(self, envelope: Envelope) -> None:
        self.bus._route(envelope)

    def close(self) -> None:
        super().close()
        self.bus._remove(self.address)


def _recv_exact(sock: socket.socket, size: int) -> bytes | None:
    buf = bytearray()
    while len(buf) < size:
        chunk = sock.recv(size - len(buf))
        if not chunk:
            return None
        buf.extend(chunk)
    return bytes(buf)


class TcpTransport(Transport):
    """Length-prefixed frames over TCP, one pooled connection per peer.

    ``peer_of(payload)`` names the sender of an inbound payload (the node
    passes a function reading the ACL sender address); frames it rejects
    cause the connection to be dropped.
    """

    def __init__(self, listen_address: str, peer_of=None, faults: FaultInjector | None = None,
                 connect_timeout: float = 5.0):
        super().__init__(faults)
        host, port = parse_address(listen_address)
        self._peer_of = peer_of or (lambda payload: "")
        self._connect_timeout = connect_timeout
        self._server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            self._server.bind((host, port))
        except OSError as exc:
            self._server.close()
            raise BindError(f"cannot bind {listen_address}: {exc}") from None
        self._server.listen(64)
        self.address = f"{host}:{self._server.getsockname()[1]}"
        self._pool: dict[str, socket.socket] = {}
        self._pool_lock = threading.Lock()
        self._send_locks: dict[str, threading.Lock] = defaultdict(threading.Lock)
        self._readers: list[socket.socket] = []
        threading.Thread(target=self._accept_loop, name=f"tcp-accept-{self.address}",
                         daemon=True).start()

    def _accept_loop(self) -> None:
        while not self._closed:
            try:
                conn, _ = self._server.accept()
            except OSError:
                return
            self._readers.append(conn)
            threading.Thread(target=self._read_loop, args=(conn,), daemon=True).start()

    def _read_loop(self, conn: socket.socket) -> None:
        with conn:
            while not self._closed:
                try:
                    header = _recv_exact(conn, 4)
                    if header is None:
                        return
                    (size,) = _HEADER.unpack(header)
                    if size > MAX_FRAME:
                        logger.warning("%s: dropping connection, frame length %d too large",
                                       self.address, size)
                        return
                    payload = _recv_exact(conn, size)
                    if payload is None:
                        return
                except OSError:
                    return
                try:
                    peer = self._peer_of(payload)
                except Exception:
                    logger.warning("%s: dropping connection, undecodable frame", self.address)
                    return
                self._enqueue(Envelope(self.address, peer, payload))

    def _connection(self, to: str) -> socket.socket:
        with self._pool_lock:
            sock = self._pool.get(to)
        if sock is not None:
            # a pooled socket that is readable has been closed by the peer
            readable, _, _ = select.select([sock], [], [], 0)
            if not readable:
                return sock
            self._drop(to)
        host, port = parse_address(to)
        try:
            sock = socket.create_connection((host, port), timeout=self._connect_timeout)
        except ConnectionRefusedError:
            raise ConnectionRefused(to) from None
        except socket.timeout:
            raise Timeout(to) from None
        except OSError as exc:
            raise ConnectionRefused(f"{to}: {exc}") from None
        sock.settimeout(self._connect_timeout)
        with self._pool_lock:
            self._pool[to] = sock
        return sock

    def _drop(self, to: str) -> None:
        with self._pool_lock:
            sock = self._pool.pop(to, None)
        if sock is not None:
            sock.close()

    def _deliver(self, envelope: Envelope) -> None:
        data = frame(envelope.payload)
        with self._send_locks[envelope.to]:
            for attempt in (1, 2):
                sock = self._connection(envelope.to)
                try:
                    sock.sendall(data)
                    return
                except socket.timeout:
                    self._drop(envelope.to)
                    raise Timeout(envelope.to) from None
                except OSError:
                    self._drop(envelope.to)
                    if attempt == 2:
                        raise ConnectionRefused(envelope.to) from None

    def close(self) -> None:
        super().close()
        try:
            # wakes the accept thread; close() alone leaves the port listening
            self._server.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        try:
            self._server.close()
        except OSError:
            pass
        with self._pool_lock:
            for sock in self._pool.values():
                sock.close()
            self._pool.clear()
        for conn in self._readers:
            try:
                conn.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
