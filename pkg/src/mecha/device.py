"""Software stand-in for the shared crypto hardware.

The device has a single context that must be opened before batches can be
processed. Latency is imposed with real sleeps according to a
:class:`LatencyModel`, so concurrency effects around the device are genuine.
"""

from __future__ import annotations

import csv
import hashlib
import threading
import time
from dataclasses import dataclass, fields
from typing import NamedTuple

from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from .protocol import CSN_LEN, ERROR_MARKER, HEADER_LEN, CsnPdu, OpCode, Pdu, decode_csn_pdu, encode_csn_pdu

EMULATOR_KEY = bytes(range(16))
BLOCK = 16


class DeviceUsageError(RuntimeError):
    """The device was driven outside its context lifecycle."""


class CryptoOpError(ValueError):
    pass


@dataclass(frozen=True)
class LatencyModel:
    ctx_open_us: float = 2000
    ctx_close_us: float = 2000
    per_byte_ns: float = 100
    per_op_us: float = 100

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be >= 0")

    def batch_delay_s(self, transferred_bytes: int, ops: int) -> float:
        return (self.per_byte_ns * transferred_bytes * 1e-9) + (self.per_op_us * ops * 1e-6)

    def pdu_delay_s(self, request_payload: int, response_payload: int) -> float:
        overhead = CSN_LEN + HEADER_LEN
        return self.batch_delay_s(request_payload + response_payload + 2 * overhead, 1)


ZERO_LATENCY = LatencyModel(0, 0, 0, 0)


def apply_crypto_op(opcode: OpCode, payload: bytes) -> bytes:
    if opcode == OpCode.LOOPBACK:
        return bytes(payload)
    if opcode == OpCode.HASH:
        return hashlib.sha256(payload).digest()
    if opcode in (OpCode.ENCRYPT, OpCode.DECRYPT):
        if not payload or len(payload) % BLOCK:
            raise CryptoOpError(f"{opcode.name} needs a positive multiple of {BLOCK} bytes, got {len(payload)}")
        cipher = Cipher(algorithms.AES(EMULATOR_KEY), modes.ECB())
        ctx = cipher.encryptor() if opcode == OpCode.ENCRYPT else cipher.decryptor()
        return ctx.update(payload) + ctx.finalize()
    raise CryptoOpError(f"unsupported opcode {opcode!r}")


class LogEvent(NamedTuple):
    event: str
    csn: int
    bytes: int
    timestamp_us: int


SPIN_S = 150e-6  # typical time.sleep overshoot on Linux is ~80 us


def _sleep_until(deadline: float) -> None:
    remaining = deadline - time.perf_counter()
    if remaining > SPIN_S:
        time.sleep(remaining - SPIN_S)
    while time.perf_counter() < deadline:
        pass


class Device:
    """Emulated single-context crypto device.

    ``transactions_log`` records ``ctx_open``, ``ctx_close`` and one ``send``
    per processed PDU whose byte count is the request frame's size on the
    device link (payload plus 13 bytes of CSN and header).
    """

    def __init__(self, latency: LatencyModel | None = None):
        self.latency = latency or LatencyModel()
        self.context_open = False
        self.transactions_log: list[LogEvent] = []
        self._busy = threading.Lock()
        self._epoch = time.perf_counter()

    def _log(self, event: str, csn: int = 0, nbytes: int = 0) -> None:
        ts = int((time.perf_counter() - self._epoch) * 1e6)
        self.transactions_log.append(LogEvent(event, csn, nbytes, ts))

    def _enter(self):
        if not self._busy.acquire(blocking=False):
            raise DeviceUsageError("concurrent device access")

    def open_context(self) -> None:
        self._enter()
        try:
            if self.context_open:
                raise DeviceUsageError("context already open")
            _sleep_until(time.perf_counter() + self.latency.ctx_open_us * 1e-6)
            self.context_open = True
            self._log("ctx_open")
        finally:
            self._busy.release()

    def close_context(self) -> None:
        self._enter()
        try:
            if not self.context_open:
                raise DeviceUsageError("context not open")
            _sleep_until(time.perf_counter() + self.latency.ctx_close_us * 1e-6)
            self.context_open = False
            self._log("ctx_close")
        finally:
            self._busy.release()

    def process_batch(self, batch: list[CsnPdu]) -> list[CsnPdu]:
        self._enter()
        try:
            if not self.context_open:
                raise DeviceUsageError("process_batch with closed context")
            start = time.perf_counter()
            overhead = CSN_LEN + HEADER_LEN
            out = []
            total = 0
            for item in batch:
                req = item.pdu
                try:
                    payload = apply_crypto_op(req.opcode, req.payload)
                except CryptoOpError:
                    payload = ERROR_MARKER
                out.append(CsnPdu(item.csn, Pdu(req.opcode, req.seq, payload)))
                total += len(req.payload) + len(payload) + 2 * overhead
                self._log("send", item.csn, len(req.payload) + overhead)
            if batch:
                _sleep_until(start + self.latency.batch_delay_s(total, len(batch)))
            return out
        finally:
            self._busy.release()

    def transfer(self, frames: list[bytes]) -> list[bytes]:
        """Byte-level device link: CSN-prefixed frames in, CSN-prefixed frames out."""
        responses = self.process_batch([decode_csn_pdu(f) for f in frames])
        return [encode_csn_pdu(r) for r in responses]

    def count(self, event: str) -> int:
        return sum(1 for e in self.transactions_log if e.event == event)

    def dump_log_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["event", "csn", "bytes", "timestamp_us"])
            w.writerows(self.transactions_log)
