"""Application-side SDK: find or become the broker, then issue requests."""

from __future__ import annotations

import fcntl
import os
import socket
import time
from dataclasses import replace
from typing import Iterable

from .broker import Broker, BrokerExists, decode_hello_ack, encode_hello, recv_exact
from .config import BrokerConfig
from .protocol import ERROR_MARKER, MAX_PAYLOAD, FrameDecoder, FrameError, OpCode, Pdu, encode_pdu

RECV_CHUNK = 1 << 18
SEND_CHUNK = 64


class TransportError(ConnectionError):
    """The broker connection failed or produced an unexpected frame."""


class DeviceRejected(RuntimeError):
    """The device answered with the in-band error marker."""


def is_rejection(opcode: OpCode, payload: bytes) -> bool:
    # loopback echoes never fail, so a lone 0xEE there is data
    return opcode != OpCode.LOOPBACK and payload == ERROR_MARKER


class ClientHandle:
    """Connection to a broker. Use from one thread at a time."""

    def __init__(self, sock: socket.socket, csn: int, app_name: str):
        self.sock = sock
        self.csn = csn
        self.app_name = app_name
        self.next_seq = 0
        self.broker: Broker | None = None  # set when this process hosts the broker
        self._decoder = FrameDecoder()
        self._ready: list[Pdu] = []

    @classmethod
    def connect(cls, socket_path: str, app_name: str, timeout: float | None = None) -> ClientHandle:
        sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
        try:
            sock.settimeout(timeout)
            sock.connect(socket_path)
            sock.sendall(encode_hello(app_name))
            csn = decode_hello_ack(recv_exact(sock, 9))
        except BaseException:
            sock.close()
            raise
        return cls(sock, csn, app_name)

    def close(self) -> None:
        self.sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _take_seq(self) -> int:
        seq = self.next_seq
        self.next_seq = (seq + 1) & 0xFFFFFFFF
        return seq

    def _send(self, data: bytes) -> None:
        try:
            self.sock.sendall(data)
        except OSError as exc:
            raise TransportError(f"send failed: {exc}") from exc

    def _recv_pdus(self) -> list[Pdu]:
        while not self._ready:
            try:
                data = self.sock.recv(RECV_CHUNK)
            except OSError as exc:
                raise TransportError(f"receive failed: {exc}") from exc
            if not data:
                raise TransportError("broker closed the connection")
            try:
                self._ready.extend(self._decoder.feed(data))
            except FrameError as exc:
                raise TransportError(f"bad frame from broker: {exc}") from exc
        out, self._ready = self._ready, []
        return out

    def _expect(self, pdus: list[Pdu], seqs: Iterable[int]) -> None:
        for pdu, seq in zip(pdus, seqs):
            if pdu.seq != seq:
                raise TransportError(f"expected seq {seq}, got {pdu.seq}")

    def request(self, opcode: OpCode, payload: bytes = b"") -> bytes:
        opcode = OpCode(opcode)
        seq = self._take_seq()
        self._send(encode_pdu(Pdu(opcode, seq, payload)))
        pdus = self._recv_pdus()
        self._ready = pdus[1:]
        self._expect(pdus[:1], [seq])
        if is_rejection(opcode, pdus[0].payload):
            raise DeviceRejected(f"{opcode.name} request of {len(payload)} bytes rejected")
        return pdus[0].payload

    def stream(self, opcode: OpCode, chunks: list[bytes]) -> list[bytes]:
        """Send every chunk as its own PDU without waiting, then collect all responses in order."""
        opcode = OpCode(opcode)
        first = self.next_seq
        for i in range(0, len(chunks), SEND_CHUNK):
            frames = [encode_pdu(Pdu(opcode, self._take_seq(), c)) for c in chunks[i:i + SEND_CHUNK]]
            self._send(b"".join(frames))
        out = []
        while len(out) < len(chunks):
            pdus = self._recv_pdus()
            extra = len(out) + len(pdus) - len(chunks)
            if extra > 0:
                self._ready = pdus[-extra:]
                pdus = pdus[:-extra]
            self._expect(pdus, ((first + len(out) + i) & 0xFFFFFFFF for i in range(len(pdus))))
            out.extend(p.payload for p in pdus)
        for payload in out:
            if is_rejection(opcode, payload):
                raise DeviceRejected(f"{opcode.name} stream had a rejected PDU")
        return out

    def request_stream(self, opcode: OpCode, total_bytes: int, pdu_payload_len: int,
                       data: bytes | None = None) -> int:
        """Stream ``total_bytes`` in fixed-size PDUs; returns the number of response bytes."""
        chunks = split_chunks(total_bytes, pdu_payload_len, data)
        return sum(len(r) for r in self.stream(opcode, chunks))


def split_chunks(total_bytes: int, pdu_payload_len: int, data: bytes | None = None) -> list[bytes]:
    if not 1 <= pdu_payload_len <= MAX_PAYLOAD:
        raise ValueError(f"pdu_payload_len must be in 1..{MAX_PAYLOAD}")
    if data is None:
        data = bytes(i & 0xFF for i in range(total_bytes))
    elif len(data) != total_bytes:
        raise ValueError("data length does not match total_bytes")
    return [data[i:i + pdu_payload_len] for i in range(0, total_bytes, pdu_payload_len)]


def _should_host(app_name: str, priority: tuple[str, ...]) -> bool:
    return not priority or priority[0] == app_name


def _probe(path: str) -> bool:
    s = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
    try:
        s.connect(path)
        return True
    except (FileNotFoundError, ConnectionRefusedError):
        return False
    finally:
        s.close()


def try_host(socket_path: str, config: BrokerConfig, app_name: str = "app") -> ClientHandle | None:
    """Host a broker on ``socket_path`` unless a live one answers there.

    Returns a handle connected to the new broker (``handle.broker`` set),
    or None if another broker is already live.
    """
    # serialises stale-file cleanup; otherwise two racers could each unlink the other's socket
    with open(socket_path + ".lock", "a") as lock:
        fcntl.flock(lock, fcntl.LOCK_EX)
        if _probe(socket_path):
            return None
        try:
            os.unlink(socket_path)
        except FileNotFoundError:
            pass
        broker = Broker(replace(config, socket_path=socket_path))
        try:
            broker.bind()
        except BrokerExists:
            return None
        # the host talks to its own broker over a socketpair registered before accepting starts
        sock, csn = broker.adopt(app_name)
        broker.start()
        handle = ClientHandle(sock, csn, app_name)
        handle.broker = broker
        return handle


def ensure_broker(socket_path: str | None = None, config: BrokerConfig | None = None,
                  app_name: str = "app", retry_window_ms: float = 2000,
                  retry_interval_ms: float = 50) -> ClientHandle:
    """Connect to the broker, hosting it in-process if nobody else does.

    With an empty priority list the first application to arrive hosts. If a
    priority list is configured, only its head hosts immediately; everyone
    else keeps retrying for ``retry_window_ms`` before hosting themselves.
    """
    config = (config or BrokerConfig()).with_env()
    path = socket_path or config.socket_path
    deadline = time.monotonic() + retry_window_ms / 1e3
    while True:
        try:
            return ClientHandle.connect(path, app_name)
        except (FileNotFoundError, ConnectionRefusedError):
            pass
        if _should_host(app_name, config.priority_list) or time.monotonic() >= deadline:
            handle = try_host(path, config, app_name)
            if handle is not None:
                return handle
        else:
            time.sleep(retry_interval_ms / 1e3)
