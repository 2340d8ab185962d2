"""Carry frames over real localhost TCP sockets.

The virtual clock still decides *when* a frame arrives; this transport only
makes the bytes take a real trip through the kernel, so framing is
exercised end to end.  Each platform gets a listener (its configured
``host:port`` or an ephemeral port on 127.0.0.1) and a reader thread that
reassembles frames from the stream.
"""

from __future__ import annotations

import queue
import socket
import threading
from collections.abc import Iterable, Mapping

from .model import FirmId
from .wire import HEADER_SIZE, frame_length

_HELLO_SIZE = 16


def _recv_exact(conn: socket.socket, n: int) -> bytes | None:
    buf = bytearray()
    while len(buf) < n:
        chunk = conn.recv(n - len(buf))
        if not chunk:
            return None
        buf.extend(chunk)
    return bytes(buf)


class SocketTransport:
    def __init__(
        self,
        firms: Iterable[FirmId],
        addresses: Mapping[FirmId, tuple[str, int] | None] | None = None,
        *,
        timeout: float = 5.0,
    ):
        addresses = addresses or {}
        self.timeout = timeout
        self._listeners: dict[FirmId, socket.socket] = {}
        self._inbox: dict[tuple[FirmId, FirmId], queue.Queue[bytes]] = {}
        self._conns: dict[tuple[FirmId, FirmId], socket.socket] = {}
        self._threads: list[threading.Thread] = []
        self._lock = threading.Lock()
        self._closed = False
        for firm in firms:
            host, port = addresses.get(firm) or ("127.0.0.1", 0)
            srv = socket.create_server((host, port))
            self._listeners[firm] = srv
            t = threading.Thread(target=self._accept_loop, args=(firm, srv), daemon=True)
            t.start()
            self._threads.append(t)

    def address(self, firm: FirmId) -> tuple[str, int]:
        return self._listeners[firm].getsockname()[:2]

    def _box(self, src: FirmId, dst: FirmId) -> queue.Queue[bytes]:
        with self._lock:
            return self._inbox.setdefault((src, dst), queue.Queue())

    def _accept_loop(self, firm: FirmId, srv: socket.socket) -> None:
        while not self._closed:
            try:
                conn, _ = srv.accept()
            except OSError:
                return
            t = threading.Thread(target=self._read_loop, args=(firm, conn), daemon=True)
            t.start()
            self._threads.append(t)

    def _read_loop(self, firm: FirmId, conn: socket.socket) -> None:
        with conn:
            hello = _recv_exact(conn, _HELLO_SIZE)
            if hello is None:
                return
            src = hello.rstrip(b"\0").decode("ascii")
            box = self._box(src, firm)
            while True:
                header = _recv_exact(conn, HEADER_SIZE)
                if header is None:
                    return
                rest = _recv_exact(conn, frame_length(header) - HEADER_SIZE)
                if rest is None:
                    return
                box.put(header + rest)

    def _conn(self, src: FirmId, dst: FirmId) -> socket.socket:
        conn = self._conns.get((src, dst))
        if conn is None:
            conn = socket.create_connection(self.address(dst), timeout=self.timeout)
            conn.sendall(src.encode("ascii").ljust(_HELLO_SIZE, b"\0"))
            self._conns[(src, dst)] = conn
        return conn

    def carry(self, src: FirmId, dst: FirmId, data: bytes) -> bytes:
        """Send ``data`` from ``src`` to ``dst`` and return the bytes received."""
        self._conn(src, dst).sendall(data)
        return self._box(src, dst).get(timeout=self.timeout)

    def close(self) -> None:
        self._closed = True
        for conn in self._conns.values():
            conn.close()
        for srv in self._listeners.values():
            srv.close()

    def __enter__(self) -> SocketTransport:
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()
