"""The broker: one listener, a client-thread pool, and a single transceiver.

Requests from every connected application are tagged with the session's
connection socket number (CSN) and funnelled through one bounded send
queue. The transceiver drains the queue in batches into the shared
device with its context left open, and files responses into a receive
store keyed by CSN, from which each session's writer picks its own.
"""

from __future__ import annotations

import errno
import itertools
import logging
import os
import socket
import struct
import threading
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .config import BrokerConfig
from .device import Device, DeviceUsageError
from .protocol import (
    UINT32_MAX,
    FrameDecoder,
    MalformedFrame,
    Pdu,
    attach_csn,
    decode_pdu,
    detach_csn,
    encode_pdu,
    error_frame,
)

log = logging.getLogger(__name__)

MAGIC = b"MECH"
VERSION = 1
HELLO_ACK = struct.Struct("<4sBI")
RECV_CHUNK = 1 << 18
POLL_S = 0.05


class BrokerExists(OSError):
    """Another live broker already owns the socket path."""


class BrokerError(RuntimeError):
    pass


class HandshakeError(ValueError):
    pass


def encode_hello(app_name: str) -> bytes:
    name = app_name.encode()
    if len(name) > 255:
        raise HandshakeError("app name longer than 255 bytes")
    return MAGIC + bytes([VERSION, len(name)]) + name


def encode_hello_ack(csn: int) -> bytes:
    return HELLO_ACK.pack(MAGIC, VERSION, csn)


def decode_hello_ack(data: bytes) -> int:
    magic, version, csn = HELLO_ACK.unpack(data)
    if magic != MAGIC or version != VERSION:
        raise HandshakeError(f"bad hello reply {data!r}")
    return csn


def recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ConnectionError("peer closed during handshake")
        buf += chunk
    return bytes(buf)


def read_hello(sock: socket.socket) -> str:
    head = recv_exact(sock, 6)
    if head[:4] != MAGIC or head[4] != VERSION:
        raise HandshakeError(f"bad hello header {head!r}")
    name = recv_exact(sock, head[5])
    try:
        return name.decode()
    except UnicodeDecodeError:
        raise HandshakeError("app name is not UTF-8") from None


class SendQueue:
    """Bounded many-producer / single-consumer FIFO; ``put`` blocks when full."""

    def __init__(self, capacity: int = 4096):
        self.capacity = capacity
        self._items: deque[bytes] = deque()
        self._lock = threading.Lock()
        self._not_empty = threading.Condition(self._lock)
        self._not_full = threading.Condition(self._lock)

    def __len__(self):
        return len(self._items)

    def put(self, item: bytes) -> None:
        with self._not_full:
            while len(self._items) >= self.capacity:
                self._not_full.wait()
            self._items.append(item)
            self._not_empty.notify()

    def drain(self, max_items: int | None = None, timeout: float | None = None) -> list[bytes]:
        """Remove up to ``max_items`` in order, waiting up to ``timeout`` for the first."""
        with self._not_empty:
            if not self._items and not self._not_empty.wait_for(lambda: self._items, timeout):
                return []
            items = self._items
            n = len(items) if max_items is None else min(max_items, len(items))
            if n == len(items):
                out = list(items)
                items.clear()
            else:
                out = [items.popleft() for _ in range(n)]
            self._not_full.notify_all()
            return out


class _Slot:
    __slots__ = ("items", "cond", "closed")

    def __init__(self, lock):
        self.items: deque[Pdu] = deque()
        self.cond = threading.Condition(lock)
        self.closed = False


class ReceiveStore:
    """Responses waiting for pickup, one FIFO per CSN."""

    def __init__(self):
        self._lock = threading.Lock()
        self._slots: dict[int, _Slot] = {}

    def register(self, csn: int) -> None:
        with self._lock:
            self._slots[csn] = _Slot(self._lock)

    def unregister(self, csn: int) -> int:
        """Forget ``csn``; return how many undelivered responses were discarded."""
        with self._lock:
            slot = self._slots.pop(csn, None)
            if slot is None:
                return 0
            slot.closed = True
            slot.cond.notify_all()
            return len(slot.items)

    def put(self, csn: int, pdu: Pdu) -> bool:
        """File a response; returns False when no live session owns ``csn``."""
        with self._lock:
            slot = self._slots.get(csn)
            if slot is None:
                return False
            slot.items.append(pdu)
            slot.cond.notify()
            return True

    def pop(self, csn: int) -> Pdu | None:
        with self._lock:
            slot = self._slots.get(csn)
            if slot is None or not slot.items:
                return None
            return slot.items.popleft()

    def take(self, csn: int, timeout: float | None = None) -> list[Pdu]:
        """Wait up to ``timeout`` for responses and pop all of them, oldest first."""
        with self._lock:
            slot = self._slots.get(csn)
            if slot is None:
                return []
            if not slot.items and not slot.closed:
                slot.cond.wait(timeout)
            out = list(slot.items)
            slot.items.clear()
            return out

    def wake(self, csn: int) -> None:
        with self._lock:
            slot = self._slots.get(csn)
            if slot is not None:
                slot.cond.notify_all()


def match_and_dispatch(store: ReceiveStore, csn: int) -> Pdu | None:
    """Pop the oldest pending response for ``csn``; None when nothing is pending."""
    return store.pop(csn)


@dataclass
class ClientSession:
    csn: int
    app_name: str
    conn: socket.socket
    next_expected_seq: int | None = None
    outstanding: int = 0
    reading: bool = True
    alive: bool = True
    error: tuple[int, int] | None = None
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)


@dataclass
class BrokerStats:
    enqueued: int = 0
    delivered: int = 0
    dropped: int = 0
    sessions: int = 0
    malformed: int = 0

    @property
    def in_flight(self) -> int:
        return self.enqueued - self.delivered - self.dropped


class Broker:
    def __init__(self, config: BrokerConfig, device: Device | None = None):
        self.config = config
        self.device = device if device is not None else Device(config.latency_model)
        self.send_queue = SendQueue(config.queue_capacity)
        self.store = ReceiveStore()
        self.stats = BrokerStats()
        self.sessions: dict[int, ClientSession] = {}
        self.fatal: BaseException | None = None
        self._csn = itertools.count(1)
        self._csn_lock = threading.Lock()
        self._stats_lock = threading.Lock()
        self._listener: socket.socket | None = None
        self._inode: int | None = None
        self._accepting = threading.Event()
        self._stop_tx = threading.Event()
        self._stopped = threading.Event()
        self._stop_requested = threading.Event()
        self._slots = threading.BoundedSemaphore(config.max_clients)
        self._pool = ThreadPoolExecutor(max_workers=2 * config.max_clients, thread_name_prefix="mecha-ct")
        self._threads: list[threading.Thread] = []
        self._last_activity = time.monotonic()

    # lifecycle

    def bind(self) -> None:
        path = self.config.socket_path
        sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
        try:
            sock.bind(path)
        except OSError as exc:
            sock.close()
            if exc.errno == errno.EADDRINUSE:
                raise BrokerExists(errno.EADDRINUSE, f"broker exists at {path}") from None
            raise
        sock.listen(min(self.config.max_clients, socket.SOMAXCONN))
        sock.settimeout(POLL_S)
        self._listener = sock
        self._inode = os.stat(path).st_ino

    def start(self) -> Broker:
        """Bind if needed and run the acceptor and transceiver in background threads."""
        if self._listener is None:
            self.bind()
        self._accepting.set()
        for target, name in ((self._accept_loop, "mecha-st"), (self._transceiver_loop, "mecha-tt")):
            t = threading.Thread(target=target, name=name, daemon=True)
            t.start()
            self._threads.append(t)
        return self

    def serve_forever(self) -> None:
        if not self._threads:
            self.start()
        try:
            while not self._stop_requested.wait(POLL_S):
                if self.fatal is not None:
                    break
        finally:
            self.shutdown()

    def stop(self) -> None:
        """Ask ``serve_forever`` to shut down; safe to call from a signal handler."""
        self._stop_requested.set()

    def shutdown(self, drain_timeout: float = 30.0) -> None:
        """Stop accepting, deliver in-flight responses, close the device, remove the socket."""
        if self._stopped.is_set():
            return
        self._accepting.clear()
        deadline = time.monotonic() + drain_timeout
        while self.stats.in_flight > 0 and self.fatal is None and time.monotonic() < deadline:
            time.sleep(0.005)
        if self.stats.in_flight > 0:
            log.warning("shutdown with %d responses undelivered", self.stats.in_flight)
        for session in list(self.sessions.values()):
            self._kill(session)
        self._stop_tx.set()
        for t in self._threads:
            t.join()
        self._pool.shutdown(wait=True)
        if self.device.context_open:
            self.device.close_context()
        self._remove_socket()
        self._stopped.set()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.shutdown()

    @property
    def running(self) -> bool:
        return self._accepting.is_set()

    def _remove_socket(self) -> None:
        if self._listener is not None:
            self._listener.close()
        path = self.config.socket_path
        try:
            # the path may have been reclaimed by a newer broker
            if os.stat(path).st_ino == self._inode:
                os.unlink(path)
        except FileNotFoundError:
            pass

    # acceptor / client threads

    def allocate_csn(self) -> int:
        with self._csn_lock:
            csn = next(self._csn)
        if csn > UINT32_MAX:
            raise BrokerError("csn space exhausted")
        return csn

    def _accept_loop(self) -> None:
        listener = self._listener
        while self._accepting.is_set():
            if not self._slots.acquire(timeout=POLL_S):
                continue
            conn = None
            while self._accepting.is_set():
                try:
                    conn, _ = listener.accept()
                    break
                except socket.timeout:
                    continue
                except OSError:
                    if self._accepting.is_set():
                        log.exception("accept failed")
                    break
            if conn is None:
                self._slots.release()
                break
            conn.settimeout(None)
            self._pool.submit(self._run_session, conn)
        listener.close()

    def _open_session(self, conn: socket.socket, app_name: str) -> ClientSession:
        session = ClientSession(self.allocate_csn(), app_name, conn)
        self.store.register(session.csn)
        self.sessions[session.csn] = session
        with self._stats_lock:
            self.stats.sessions += 1
        return session

    def _run_session(self, conn: socket.socket) -> None:
        session = None
        try:
            conn.settimeout(5.0)
            app_name = read_hello(conn)
            conn.settimeout(None)
            session = self._open_session(conn, app_name)
            conn.sendall(encode_hello_ack(session.csn))
        except (OSError, HandshakeError) as exc:
            log.info("handshake failed: %s", exc)
            conn.close()
            if session is not None:
                self._release(session)
            else:
                self._slots.release()
            return
        self._pool.submit(self._writer, session)
        self.handle_client(session)

    def adopt(self, app_name: str) -> tuple[socket.socket, int]:
        """Open an in-process session without the listener; returns the client end and its csn.

        Called before ``start()`` this deterministically yields csn 1.
        """
        if not self._slots.acquire(timeout=10):
            raise BrokerError("no free client slot")
        ours, theirs = socket.socketpair(socket.AF_UNIX, socket.SOCK_STREAM)
        session = self._open_session(ours, app_name)
        self._pool.submit(self._writer, session)
        self._pool.submit(self.handle_client, session)
        return theirs, session.csn

    def handle_client(self, session: ClientSession) -> None:
        """Client thread body: decode frames from the socket and enqueue them."""
        decoder = FrameDecoder()
        conn = session.conn
        try:
            while session.alive:
                data = conn.recv(RECV_CHUNK)
                if not data:
                    break
                for pdu in decoder.feed(data):
                    self.enqueue_request(session, pdu)
        except MalformedFrame as exc:
            header = decoder.header()
            if header is None:
                raise
            log.info("csn %d sent a malformed frame: %s", session.csn, exc)
            with self._stats_lock:
                self.stats.malformed += 1
            session.error = header
        except OSError:
            pass
        session.reading = False
        self.store.wake(session.csn)

    def enqueue_request(self, session: ClientSession, pdu: Pdu) -> None:
        frame = attach_csn(session.csn, encode_pdu(pdu))
        with session.lock:
            session.outstanding += 1
        with self._stats_lock:
            self.stats.enqueued += 1
        self.send_queue.put(frame)

    def _writer(self, session: ClientSession) -> None:
        conn = session.conn
        csn = session.csn
        try:
            while session.alive:
                pdus = self.store.take(csn, timeout=POLL_S)
                if pdus:
                    try:
                        conn.sendall(b"".join(encode_pdu(p) for p in pdus))
                    except OSError:
                        self._settle(session, dropped=len(pdus))
                        break
                    self._settle(session, delivered=len(pdus), last_seq=pdus[-1].seq)
                elif not session.reading and session.outstanding == 0:
                    if session.error is not None:
                        try:
                            conn.sendall(error_frame(*session.error))
                        except OSError:
                            pass
                    break
        finally:
            self._kill(session)
            self._release(session)

    def _settle(self, session: ClientSession, delivered: int = 0, dropped: int = 0, last_seq=None) -> None:
        with session.lock:
            session.outstanding -= delivered + dropped
            if last_seq is not None:
                session.next_expected_seq = (last_seq + 1) & UINT32_MAX
        with self._stats_lock:
            self.stats.delivered += delivered
            self.stats.dropped += dropped

    def _kill(self, session: ClientSession) -> None:
        session.alive = False
        try:
            session.conn.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass

    def _release(self, session: ClientSession) -> None:
        if self.sessions.pop(session.csn, None) is None:
            return
        discarded = self.store.unregister(session.csn)
        with session.lock:
            # responses still inside the device pipeline are counted when they surface
            session.outstanding -= discarded
        with self._stats_lock:
            self.stats.dropped += discarded
        if discarded:
            log.info("csn %d gone; dropped %d responses", session.csn, discarded)
        session.conn.close()
        self._slots.release()

    # transceiver

    def transceiver_cycle(self, timeout: float | None = None) -> int:
        """Forward one batch from the send queue to the device; returns its size."""
        batch = self.send_queue.drain(self.config.batch_max, timeout)
        device = self.device
        if not batch:
            idle_ms = self.config.idle_close_ms
            if (idle_ms is not None and device.context_open
                    and (time.monotonic() - self._last_activity) * 1e3 >= idle_ms):
                device.close_context()
            return 0
        if not device.context_open:
            device.open_context()
        for frame in device.transfer(batch):
            csn, body = detach_csn(frame)
            pdu, _ = decode_pdu(body)
            if not self.store.put(csn, pdu):
                log.debug("csn %d has no live session; response dropped", csn)
                with self._stats_lock:
                    self.stats.dropped += 1
        self._last_activity = time.monotonic()
        return len(batch)

    def _transceiver_loop(self) -> None:
        idle = self.config.idle_close_ms
        timeout = POLL_S if idle is None else min(POLL_S, idle / 1e3 or POLL_S)
        try:
            while not self._stop_tx.is_set():
                self.transceiver_cycle(timeout)
        except (DeviceUsageError, MalformedFrame) as exc:
            log.critical("transceiver failed: %s", exc)
            self.fatal = exc
            self._accepting.clear()
            for session in list(self.sessions.values()):
                self._kill(session)


def serve(config: BrokerConfig, device: Device | None = None) -> None:
    """Run a broker in the calling thread until interrupted."""
    broker = Broker(config, device)
    broker.bind()
    try:
        broker.serve_forever()
    except KeyboardInterrupt:
        broker.shutdown()
    if broker.fatal is not None:
        raise BrokerError("broker stopped after fatal error") from broker.fatal
