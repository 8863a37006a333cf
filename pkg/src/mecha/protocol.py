"""PDU framing for the client link and the CSN-prefixed device link.

Frame layout (little-endian)::

    opcode (1) | seq (4) | payload_len (4) | payload (payload_len)

On the device link every frame is additionally prefixed with a 4-byte
connection socket number (CSN).
"""

from __future__ import annotations

import enum
import struct
from collections.abc import Iterator
from dataclasses import dataclass

HEADER = struct.Struct("<BII")
HEADER_LEN = HEADER.size
CSN = struct.Struct("<I")
CSN_LEN = CSN.size
MAX_PAYLOAD = 65536
UINT32_MAX = 0xFFFFFFFF
ERROR_MARKER = b"\xee"


class FrameError(Exception):
    """Base class for framing failures."""


class IncompleteFrame(FrameError):
    """Not enough bytes yet; the caller should wait for more input."""


class MalformedFrame(FrameError):
    """The bytes can never form a valid frame."""


class EncodeError(FrameError, ValueError):
    pass


class OpCode(enum.IntEnum):
    LOOPBACK = 0x00
    HASH = 0x01
    ENCRYPT = 0x02
    DECRYPT = 0x03


_OPCODES = {op.value: op for op in OpCode}


@dataclass(frozen=True)
class Pdu:
    opcode: OpCode
    seq: int
    payload: bytes = b""


@dataclass(frozen=True)
class CsnPdu:
    csn: int
    pdu: Pdu


def encode_pdu(pdu: Pdu) -> bytes:
    n = len(pdu.payload)
    if n > MAX_PAYLOAD:
        raise EncodeError(f"payload of {n} bytes exceeds {MAX_PAYLOAD}")
    if not 0 <= pdu.seq <= UINT32_MAX:
        raise EncodeError(f"seq {pdu.seq} outside 32-bit range")
    return HEADER.pack(int(pdu.opcode), pdu.seq, n) + bytes(pdu.payload)


def parse_header(data) -> tuple[int, int, int]:
    """Return ``(raw_opcode, seq, payload_len)`` from a frame header.

    Raises IncompleteFrame if fewer than 9 bytes are available and
    MalformedFrame if the opcode or length can never be valid.
    """
    if len(data) < HEADER_LEN:
        raise IncompleteFrame(f"need {HEADER_LEN} header bytes, have {len(data)}")
    raw_op, seq, n = HEADER.unpack_from(data)
    if raw_op not in _OPCODES:
        raise MalformedFrame(f"unknown opcode 0x{raw_op:02x}")
    if n > MAX_PAYLOAD:
        raise MalformedFrame(f"payload length {n} exceeds {MAX_PAYLOAD}")
    return raw_op, seq, n


def decode_pdu(data: bytes) -> tuple[Pdu, bytes]:
    """Decode one frame from the front of ``data``; return it with the remainder."""
    raw_op, seq, n = parse_header(data)
    end = HEADER_LEN + n
    if len(data) < end:
        raise IncompleteFrame(f"need {end} bytes, have {len(data)}")
    pdu = Pdu(_OPCODES[raw_op], seq, bytes(data[HEADER_LEN:end]))
    return pdu, bytes(data[end:])


def attach_csn(csn: int, frame: bytes) -> bytes:
    if not 0 < csn <= UINT32_MAX:
        raise EncodeError(f"csn {csn} is reserved or out of range")
    return CSN.pack(csn) + frame


def detach_csn(data: bytes) -> tuple[int, bytes]:
    if len(data) < CSN_LEN:
        raise IncompleteFrame(f"need {CSN_LEN} prefix bytes, have {len(data)}")
    (csn,) = CSN.unpack_from(data)
    return csn, bytes(data[CSN_LEN:])


def encode_csn_pdu(item: CsnPdu) -> bytes:
    return attach_csn(item.csn, encode_pdu(item.pdu))


def decode_csn_pdu(data: bytes) -> CsnPdu:
    csn, frame = detach_csn(data)
    if csn == 0:
        raise MalformedFrame("csn 0 is reserved")
    pdu, rest = decode_pdu(frame)
    if rest:
        raise MalformedFrame(f"{len(rest)} trailing bytes after device frame")
    return CsnPdu(csn, pdu)


def error_frame(raw_opcode: int, seq: int) -> bytes:
    """In-band rejection frame. ``raw_opcode`` is echoed even if it is invalid."""
    return HEADER.pack(raw_opcode & 0xFF, seq & UINT32_MAX, 1) + ERROR_MARKER


class FrameDecoder:
    """Incremental decoder for a byte stream of concatenated frames.

    >>> d = FrameDecoder()
    >>> list(d.feed(encode_pdu(Pdu(OpCode.HASH, 1, b"abc"))[:5]))
    []
    >>> list(d.feed(b"\\x03\\x00\\x00\\x00abc"))
    [Pdu(opcode=<OpCode.HASH: 1>, seq=1, payload=b'abc')]
    """

    def __init__(self) -> None:
        self._buf = bytearray()

    @property
    def pending(self) -> int:
        return len(self._buf)

    def header(self) -> tuple[int, int] | None:
        """Raw ``(opcode, seq)`` of the buffered partial frame, if a header is present."""
        if len(self._buf) < HEADER_LEN:
            return None
        raw_op, seq, _ = HEADER.unpack_from(self._buf)
        return raw_op, seq

    def feed(self, data: bytes) -> Iterator[Pdu]:
        """Append ``data`` and iterate over every complete frame now available.

        Frames are yielded in stream order; MalformedFrame is raised at the
        first invalid header, after all frames preceding it were yielded.
        """
        self._buf += data
        return self._drain()

    def _drain(self) -> Iterator[Pdu]:
        buf = self._buf
        while len(buf) >= HEADER_LEN:
            raw_op, seq, n = parse_header(buf)
            end = HEADER_LEN + n
            if end > len(buf):
                return
            pdu = Pdu(_OPCODES[raw_op], seq, bytes(buf[HEADER_LEN:end]))
            del buf[:end]
            yield pdu
