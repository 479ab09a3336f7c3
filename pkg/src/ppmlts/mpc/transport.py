"""Party-to-party message channels.

Two realisations share one contract: per-channel ordered delivery of
``(tag, round, payload)`` messages. ``InProcessNetwork`` uses queues between
threads; ``TcpNetwork`` uses localhost sockets with the frame layout

    4-byte big-endian payload length | 8-byte big-endian tag | 4-byte big-endian round | payload

(see ``docs/wire_format.md``).
"""
from __future__ import annotations

import hashlib
import queue
import socket
import struct
import threading
from dataclasses import dataclass, field

from ..errors import TransportError

HEADER = struct.Struct(">IQI")
DEFAULT_TIMEOUT = 120.0


def encode_frame(tag: int, rnd: int, payload: bytes) -> bytes:
    return HEADER.pack(len(payload), tag, rnd) + payload


def decode_frame(buf: bytes) -> tuple[int, int, bytes]:
    if len(buf) < HEADER.size:
        raise TransportError("truncated frame header")
    length, tag, rnd = HEADER.unpack_from(buf)
    payload = buf[HEADER.size :]
    if len(payload) != length:
        raise TransportError(f"frame declares {length} payload bytes, got {len(payload)}")
    return tag, rnd, payload


@dataclass(frozen=True)
class TranscriptEntry:
    src: int
    dst: int
    tag: int
    round: int
    size: int
    digest: str


@dataclass
class Counters:
    messages: int = 0
    bytes: int = 0
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def add(self, nbytes: int) -> None:
        with self.lock:
            self.messages += 1
            self.bytes += nbytes


class Endpoint:
    """One party's view of the network."""

    def __init__(self, network: "Network", pid: int):
        self.network = network
        self.pid = pid
        self.sent: list[TranscriptEntry] = []

    @property
    def n_parties(self) -> int:
        return self.network.n_parties

    def send(self, dst: int, tag: int, rnd: int, payload: bytes) -> None:
        if dst == self.pid or not 0 <= dst < self.n_parties:
            raise TransportError(f"party {self.pid} cannot send to {dst}")
        digest = hashlib.sha256(payload).hexdigest() if self.network.record_digests else ""
        self.sent.append(TranscriptEntry(self.pid, dst, tag, rnd, len(payload), digest))
        self.network.counters.add(len(payload))
        self._send(dst, tag, rnd, payload)

    def recv(self, src: int, tag: int, rnd: int) -> bytes:
        got_tag, got_rnd, payload = self._recv(src)
        if (got_tag, got_rnd) != (tag, rnd):
            raise TransportError(
                f"party {self.pid} expected (tag={tag}, round={rnd}) from {src}, got ({got_tag}, {got_rnd})"
            )
        return payload

    def _send(self, dst, tag, rnd, payload):  # pragma: no cover - abstract
        raise NotImplementedError

    def _recv(self, src):  # pragma: no cover - abstract
        raise NotImplementedError


class Network:
    def __init__(self, n_parties: int, timeout: float = DEFAULT_TIMEOUT, record_digests: bool = False):
        if n_parties < 2:
            raise ValueError("need at least two parties")
        self.n_parties = n_parties
        self.record_digests = record_digests
        self.timeout = timeout
        self.counters = Counters()
        self.endpoints: list[Endpoint] = []

    def endpoint(self, pid: int) -> Endpoint:
        return self.endpoints[pid]

    def transcript(self) -> list[TranscriptEntry]:
        """Every message sent, grouped by sender in send order."""
        return [e for ep in self.endpoints for e in ep.sent]

    def reset(self) -> None:
        for ep in self.endpoints:
            ep.sent.clear()
        self.counters = Counters()

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class _QueueEndpoint(Endpoint):
    def _send(self, dst, tag, rnd, payload):
        self.network.queues[(self.pid, dst)].put((tag, rnd, payload))

    def _recv(self, src):
        try:
            return self.network.queues[(src, self.pid)].get(timeout=self.network.timeout)
        except queue.Empty:
            raise TransportError(f"party {self.pid} timed out waiting for party {src}") from None


class InProcessNetwork(Network):
    """Ordered in-memory channels between threads of one process."""

    def __init__(self, n_parties: int = 2, timeout: float = DEFAULT_TIMEOUT, record_digests: bool = False):
        super().__init__(n_parties, timeout, record_digests)
        self.queues = {(i, j): queue.Queue() for i in range(n_parties) for j in range(n_parties) if i != j}
        self.endpoints = [_QueueEndpoint(self, p) for p in range(n_parties)]


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    while n:
        chunk = sock.recv(min(n, 1 << 20))
        if not chunk:
            raise TransportError("connection closed mid-frame")
        chunks.append(chunk)
        n -= len(chunk)
    return b"".join(chunks)


class _TcpEndpoint(Endpoint):
    def __init__(self, network, pid):
        super().__init__(network, pid)
        self.socks: dict[int, socket.socket] = {}
        self.inbox: dict[int, queue.Queue] = {}
        self.readers: list[threading.Thread] = []

    def attach(self, peer: int, sock: socket.socket) -> None:
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self.socks[peer] = sock
        self.inbox[peer] = queue.Queue()
        reader = threading.Thread(target=self._read_loop, args=(peer, sock), daemon=True)
        reader.start()
        self.readers.append(reader)

    def _read_loop(self, peer, sock):
        # drain the socket continuously so large sends never block both sides
        try:
            while True:
                head = sock.recv(HEADER.size, socket.MSG_WAITALL)
                if not head:
                    return
                if len(head) < HEADER.size:
                    head += _recv_exact(sock, HEADER.size - len(head))
                length = HEADER.unpack(head)[0]
                frame = head + _recv_exact(sock, length)
                self.inbox[peer].put(decode_frame(frame))
        except (OSError, TransportError) as exc:
            self.inbox[peer].put(exc)

    def _send(self, dst, tag, rnd, payload):
        try:
            self.socks[dst].sendall(encode_frame(tag, rnd, payload))
        except OSError as exc:
            raise TransportError(f"send from {self.pid} to {dst} failed: {exc}") from exc

    def _recv(self, src):
        try:
            item = self.inbox[src].get(timeout=self.network.timeout)
        except queue.Empty:
            raise TransportError(f"party {self.pid} timed out waiting for party {src}") from None
        if isinstance(item, Exception):
            raise TransportError(f"channel {src}->{self.pid} failed: {item}")
        return item


class TcpNetwork(Network):
    """Length-prefixed frames over localhost TCP, one connection per party pair."""

    def __init__(
        self, n_parties: int = 2, timeout: float = DEFAULT_TIMEOUT, host: str = "127.0.0.1", record_digests: bool = False
    ):
        super().__init__(n_parties, timeout, record_digests)
        self.endpoints = [_TcpEndpoint(self, p) for p in range(n_parties)]
        self._sockets: list[socket.socket] = []
        for i in range(n_parties):
            for j in range(i + 1, n_parties):
                server = socket.create_server((host, 0))
                client = socket.create_connection(server.getsockname(), timeout=timeout)
                conn, _ = server.accept()
                server.close()
                client.settimeout(None)
                conn.settimeout(None)
                self.endpoints[i].attach(j, client)
                self.endpoints[j].attach(i, conn)
                self._sockets += [client, conn]

    def close(self) -> None:
        for s in self._sockets:
            try:
                s.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            s.close()
        self._sockets = []
