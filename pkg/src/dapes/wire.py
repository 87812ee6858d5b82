"""TLV wire codec for protocol packets.

Type and length fields use a varint: one byte for values below 253,
``0xFD`` + 2-byte big-endian for values up to 65535, ``0xFE`` + 4-byte
big-endian above that. The type number assignment is private to this
project (see README, "Wire format"); interoperability with deployed NDN
stacks is a non-goal.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import List, Optional, Tuple

from .names import Name

# Outer packet types
T_INTEREST = 1
T_DATA = 2
# Common fields
T_NAME = 3
T_COMPONENT = 4
T_NONCE = 5
T_PAYLOAD = 6
T_SIG_INFO = 7
T_KEY_ID = 8
T_SIG_SCHEME = 9
T_SIG_VALUE = 10
# Collection metadata content
T_META_FORMAT = 16
T_META_DIGEST_ALGO = 17
T_META_FILE = 19
T_META_FILE_NAME = 20
T_META_PACKET_COUNT = 21
T_META_MERKLE_ROOT = 22
# Discovery data content
T_DISCOVERY_ENTRY = 32
# Subname entries deliberately live in the 3-byte type range so that the
# per-subname framing (outer T+L plus the two inner T+L pairs) is exactly
# 8 bytes: 3+1 + 1+1 + 1+1.
T_SUBNAME = 320
T_SUBNAME_INDEX = 24
T_SUBNAME_DIGEST = 25

SUBNAME_FRAMING_BYTES = 8
SUBNAME_INDEX_BYTES = 4


class CodecError(ValueError):
    """Malformed wire bytes; carries the byte offset of the problem."""

    def __init__(self, offset: int, reason: str):
        super().__init__("offset %d: %s" % (offset, reason))
        self.offset = offset
        self.reason = reason


def encode_varint(value: int) -> bytes:
    if value < 0:
        raise ValueError("varint must be nonnegative")
    if value < 253:
        return bytes((value,))
    if value <= 0xFFFF:
        return b"\xfd" + value.to_bytes(2, "big")
    if value <= 0xFFFFFFFF:
        return b"\xfe" + value.to_bytes(4, "big")
    raise ValueError("varint too large: %d" % value)


def decode_varint(buf: bytes, offset: int) -> Tuple[int, int]:
    """Return (value, next_offset); raises CodecError on truncation."""
    if offset >= len(buf):
        raise CodecError(offset, "truncated varint")
    first = buf[offset]
    if first < 253:
        return first, offset + 1
    if first == 0xFD:
        end = offset + 3
    elif first == 0xFE:
        end = offset + 5
    else:
        raise CodecError(offset, "unsupported varint prefix 0xFF")
    if end > len(buf):
        raise CodecError(offset, "truncated varint body")
    return int.from_bytes(buf[offset + 1:end], "big"), end


def encode_tlv(type_: int, value: bytes) -> bytes:
    return encode_varint(type_) + encode_varint(len(value)) + value


@dataclass(frozen=True)
class TlvElement:
    type: int
    value: bytes

    @property
    def length(self) -> int:
        return len(self.value)

    def encode(self) -> bytes:
        return encode_tlv(self.type, self.value)


def decode_tlv(buf: bytes, offset: int = 0) -> Tuple[TlvElement, int]:
    """Decode one TLV element starting at ``offset``.

    Truncated input raises CodecError; a partial element is never
    returned.
    """
    type_, off = decode_varint(buf, offset)
    length, off = decode_varint(buf, off)
    end = off + length
    if end > len(buf):
        raise CodecError(off, "value truncated (need %d bytes)" % length)
    return TlvElement(type_, bytes(buf[off:end])), end


def decode_tlv_sequence(buf: bytes) -> List[TlvElement]:
    out = []
    off = 0
    while off < len(buf):
        elem, off = decode_tlv(buf, off)
        out.append(elem)
    return out


class PacketKind(enum.Enum):
    INTEREST = "interest"
    DATA = "data"


class SigScheme(enum.IntEnum):
    HMAC_SHA256 = 1
    ED25519 = 2


@dataclass(frozen=True)
class SigInfo:
    key_id: bytes
    scheme: SigScheme


@dataclass(frozen=True)
class Packet:
    """An Interest or Data packet.

    Interests carry a 32-bit nonce and may carry application parameters
    in ``payload`` (e.g. the sender's bitmap). Data carries content in
    ``payload`` and, when signed, ``sig_value`` covers the encoded
    (name, payload, sig_info) bytes exactly.
    """

    kind: PacketKind
    name: Name
    nonce: Optional[int] = None
    payload: bytes = b""
    sig_info: Optional[SigInfo] = None
    sig_value: Optional[bytes] = None

    def validate(self) -> None:
        if self.kind is PacketKind.INTEREST:
            if self.nonce is None or not (0 <= self.nonce <= 0xFFFFFFFF):
                raise ValueError("Interest requires a 32-bit nonce")
        else:
            if self.nonce is not None:
                raise ValueError("Data carries no nonce")
        if (self.sig_info is None) != (self.sig_value is None):
            raise ValueError("sig_info and sig_value must be set together")


def interest(name: Name, nonce: int, payload: bytes = b"") -> Packet:
    return Packet(PacketKind.INTEREST, name, nonce=nonce, payload=payload)


def data(name: Name, payload: bytes,
         sig_info: Optional[SigInfo] = None,
         sig_value: Optional[bytes] = None) -> Packet:
    return Packet(PacketKind.DATA, name, payload=payload,
                  sig_info=sig_info, sig_value=sig_value)


def encode_name(name: Name) -> bytes:
    body = b"".join(encode_tlv(T_COMPONENT, c.encode("utf-8")) for c in name)
    return encode_tlv(T_NAME, body)


def _decode_name_body(value: bytes, base_offset: int) -> Name:
    comps = []
    off = 0
    while off < len(value):
        elem, off = decode_tlv(value, off)
        if elem.type != T_COMPONENT:
            raise CodecError(base_offset + off, "expected name component, got type %d" % elem.type)
        try:
            comps.append(elem.value.decode("utf-8"))
        except UnicodeDecodeError:
            raise CodecError(base_offset + off, "name component is not UTF-8")
    try:
        return Name(comps)
    except ValueError as e:
        raise CodecError(base_offset, str(e))


def _sig_info_bytes(si: SigInfo) -> bytes:
    body = encode_tlv(T_KEY_ID, si.key_id) + encode_tlv(T_SIG_SCHEME, bytes((int(si.scheme),)))
    return encode_tlv(T_SIG_INFO, body)


def signed_portion(p: Packet) -> bytes:
    """The exact bytes a Data signature covers: name, payload, sig_info."""
    if p.sig_info is None:
        raise ValueError("packet has no sig_info")
    return encode_name(p.name) + encode_tlv(T_PAYLOAD, p.payload) + _sig_info_bytes(p.sig_info)


def encode_packet(p: Packet) -> bytes:
    p.validate()
    body = encode_name(p.name)
    if p.kind is PacketKind.INTEREST:
        body += encode_tlv(T_NONCE, p.nonce.to_bytes(4, "big"))
        if p.payload:
            body += encode_tlv(T_PAYLOAD, p.payload)
        return encode_tlv(T_INTEREST, body)
    body += encode_tlv(T_PAYLOAD, p.payload)
    if p.sig_info is not None:
        body += _sig_info_bytes(p.sig_info)
        body += encode_tlv(T_SIG_VALUE, p.sig_value)
    return encode_tlv(T_DATA, body)


def _decode_sig_info(value: bytes, base_offset: int) -> SigInfo:
    key_id = None
    scheme = None
    off = 0
    while off < len(value):
        elem, off = decode_tlv(value, off)
        if elem.type == T_KEY_ID:
            key_id = elem.value
        elif elem.type == T_SIG_SCHEME:
            if len(elem.value) != 1:
                raise CodecError(base_offset + off, "bad sig scheme length")
            try:
                scheme = SigScheme(elem.value[0])
            except ValueError:
                raise CodecError(base_offset + off, "unknown sig scheme %d" % elem.value[0])
    if key_id is None or scheme is None:
        raise CodecError(base_offset, "incomplete sig_info")
    return SigInfo(key_id, scheme)


def decode_packet(buf: bytes) -> Packet:
    """Decode one packet; rejects unknown outer types and trailing bytes."""
    if not buf:
        raise CodecError(0, "empty buffer")
    outer, end = decode_tlv(buf, 0)
    if end != len(buf):
        raise CodecError(end, "trailing bytes after packet")
    if outer.type == T_INTEREST:
        kind = PacketKind.INTEREST
    elif outer.type == T_DATA:
        kind = PacketKind.DATA
    else:
        raise CodecError(0, "unknown outer type %d" % outer.type)

    name = None
    nonce = None
    payload = b""
    sig_info = None
    sig_value = None
    body = outer.value
    off = 0
    while off < len(body):
        start = off
        elem, off = decode_tlv(body, off)
        if elem.type == T_NAME:
            name = _decode_name_body(elem.value, start)
        elif elem.type == T_NONCE:
            if len(elem.value) != 4:
                raise CodecError(start, "nonce must be 4 bytes")
            nonce = int.from_bytes(elem.value, "big")
        elif elem.type == T_PAYLOAD:
            payload = elem.value
        elif elem.type == T_SIG_INFO:
            sig_info = _decode_sig_info(elem.value, start)
        elif elem.type == T_SIG_VALUE:
            sig_value = elem.value
        else:
            raise CodecError(start, "unknown field type %d" % elem.type)
    if name is None:
        raise CodecError(0, "packet has no name")

    p = Packet(kind, name, nonce=nonce, payload=payload,
               sig_info=sig_info, sig_value=sig_value)
    try:
        p.validate()
    except ValueError as e:
        raise CodecError(0, str(e))
    return p
