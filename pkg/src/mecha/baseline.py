"""Conventional context-switching access to the shared device.

Every request takes a process-wide lock, opens the device context, sends a
single PDU and closes the context again, so each request pays the full
context cost and other callers wait for the lock.
"""

from __future__ import annotations

import threading

from .client import DeviceRejected, is_rejection
from .device import Device
from .protocol import OpCode, Pdu, decode_pdu, detach_csn, encode_pdu, attach_csn


class BaselineHandle:
    def __init__(self, device: Device, guard: threading.Lock | None = None, caller_id: int = 1):
        self.device = device
        self.guard = guard if guard is not None else threading.Lock()
        self.caller_id = caller_id
        self.next_seq = 0

    def for_caller(self, caller_id: int) -> BaselineHandle:
        """Another handle on the same device and guard."""
        return BaselineHandle(self.device, self.guard, caller_id)

    def request(self, opcode: OpCode, payload: bytes = b"") -> bytes:
        return baseline_request(self, opcode, payload)


def baseline_request(handle: BaselineHandle, opcode: OpCode, payload: bytes = b"") -> bytes:
    opcode = OpCode(opcode)
    seq = handle.next_seq
    handle.next_seq = (seq + 1) & 0xFFFFFFFF
    frame = attach_csn(handle.caller_id, encode_pdu(Pdu(opcode, seq, payload)))
    device = handle.device
    with handle.guard:
        device.open_context()
        try:
            (reply,) = device.transfer([frame])
        finally:
            device.close_context()
    _, body = detach_csn(reply)
    pdu, _ = decode_pdu(body)
    if is_rejection(opcode, pdu.payload):
        raise DeviceRejected(f"{opcode.name} request of {len(payload)} bytes rejected")
    return pdu.payload
