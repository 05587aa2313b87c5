"""Bit-exact wire codecs for the two transformed protocol headers.

Two fixed-size headers frame every routed container:

PiDatagramHeader (16 octets, big-endian)
    version          4 bits   container handling class (1 disposable, 2 reusable)
    traffic_class    8 bits   low nibble treatment, high nibble urgency
    flow_label      20 bits   end-to-end flow id for extraordinary treatment
    payload_length  16 bits   required transport mass in kilograms
    next_header      8 bits   routing method: 0 connectionless, 1 connection-oriented
    hop_limit        8 bits   remaining intermediate hub nodes allowed
    source          32 bits   source logical address
    destination     32 bits   destination logical address

PiSegmentHeader (24 octets, big-endian)
    source_port            16 bits  hub point of entry
    destination_port       16 bits  hub point of exit
    sequence_number        32 bits  container position within its shipment
    acknowledgement_number 32 bits  next expected sequence when ACK set
    data_offset             4 bits  header length in 32-bit words, fixed 6
    reserved                3 bits  must be zero
    flags                   9 bits  NS CWR ECE URG ACK PSH RST SYN FIN
    window_size            16 bits  receiver hub storage in kilograms
    checksum               16 bits  ones-complement sum, checksum field zeroed
    urgent_pointer         16 bits  must be zero
    options                32 bits  opaque optional information word

Every operation here is pure; values can be shared freely across threads.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

DATAGRAM_SIZE = 16
SEGMENT_SIZE = 24

VERSION_DISPOSABLE = 1
VERSION_REUSABLE = 2

NEXT_HEADER_CONNECTIONLESS = 0
NEXT_HEADER_CONNECTION_ORIENTED = 1

# Treatment codes carried in the low nibble of traffic_class.
TREATMENT_NONE = 0
TREATMENT_TEMPERATURE = 1
TREATMENT_FRAGILE = 2
TREATMENT_LIVE_ANIMAL = 3

SEGMENT_DATA_OFFSET = 6  # 6 x 32-bit words = 24 octets

_DATAGRAM_FMT = ">IHBBII"
_SEGMENT_FMT = ">HHIIBBHHHI"

FLAG_ORDER = ("ns", "cwr", "ece", "urg", "ack", "psh", "rst", "syn", "fin")


class CodecError(ValueError):
    """Base class for header encode/decode failures."""


class LengthError(CodecError):
    """Input is not the exact fixed octet length."""


class ChecksumError(CodecError):
    """Stored segment checksum does not verify (wire corruption)."""


class FieldValueError(CodecError):
    """A header field violates its invariant. Carries the field name."""

    def __init__(self, field_name: str, value: object, reason: str):
        self.field_name = field_name
        self.value = value
        super().__init__(f"{field_name}={value!r}: {reason}")


def _check_uint(name: str, value: int, bits: int) -> None:
    if not isinstance(value, int) or isinstance(value, bool):
        raise FieldValueError(name, value, "must be an integer")
    if not 0 <= value < (1 << bits):
        raise FieldValueError(name, value, f"must fit in {bits} unsigned bits")


@dataclass(frozen=True)
class SegmentFlags:
    """The nine one-bit segment flags, in TCP order."""

    ns: bool = False
    cwr: bool = False
    ece: bool = False   # identified or impending congestion on a route
    urg: bool = False   # urgent or very valuable freight item
    ack: bool = False   # delivery acknowledgement requested
    psh: bool = False   # must stay zero
    rst: bool = False   # must stay zero
    syn: bool = False   # first container of a shipment
    fin: bool = False   # last container of a shipment

    def names(self) -> tuple[str, ...]:
        """Names of the set flags, in canonical order."""
        return tuple(n for n in FLAG_ORDER if getattr(self, n))


@dataclass
class PiDatagramHeader:
    """Container-level header, the transformed network-layer datagram."""

    version: int = VERSION_REUSABLE
    traffic_class: int = 0
    flow_label: int = 0
    payload_length: int = 0
    next_header: int = NEXT_HEADER_CONNECTIONLESS
    hop_limit: int = 0
    source: int = 0
    destination: int = 0

    def validate(self) -> None:
        _check_uint("version", self.version, 4)
        if self.version not in (VERSION_DISPOSABLE, VERSION_REUSABLE):
            raise FieldValueError(
                "version", self.version,
                "must be 1 (disposable) or 2 (reusable)")
        _check_uint("traffic_class", self.traffic_class, 8)
        _check_uint("flow_label", self.flow_label, 20)
        _check_uint("payload_length", self.payload_length, 16)
        _check_uint("next_header", self.next_header, 8)
        if self.next_header not in (NEXT_HEADER_CONNECTIONLESS,
                                    NEXT_HEADER_CONNECTION_ORIENTED):
            raise FieldValueError(
                "next_header", self.next_header,
                "must be 0 (connectionless) or 1 (connection-oriented)")
        _check_uint("hop_limit", self.hop_limit, 8)
        _check_uint("source", self.source, 32)
        _check_uint("destination", self.destination, 32)

    @property
    def treatment_class(self) -> int:
        return self.traffic_class & 0x0F

    @property
    def urgency_class(self) -> int:
        return (self.traffic_class >> 4) & 0x0F


@dataclass
class PiSegmentHeader:
    """Shipment-flow header, the transformed transport-layer segment."""

    source_port: int = 0
    destination_port: int = 0
    sequence_number: int = 0
    acknowledgement_number: int = 0
    data_offset: int = SEGMENT_DATA_OFFSET
    reserved: int = 0
    flags: SegmentFlags = field(default_factory=SegmentFlags)
    window_size: int = 0
    checksum: int = 0
    urgent_pointer: int = 0
    options: int = 0

    def validate(self) -> None:
        _check_uint("source_port", self.source_port, 16)
        _check_uint("destination_port", self.destination_port, 16)
        _check_uint("sequence_number", self.sequence_number, 32)
        _check_uint("acknowledgement_number", self.acknowledgement_number, 32)
        if self.data_offset != SEGMENT_DATA_OFFSET:
            raise FieldValueError(
                "data_offset", self.data_offset,
                f"fixed at {SEGMENT_DATA_OFFSET} for this layout")
        if self.reserved != 0:
            raise FieldValueError("reserved", self.reserved, "must be zero")
        if self.flags.psh:
            raise FieldValueError("psh", True, "negligible flag, must be zero")
        if self.flags.rst:
            raise FieldValueError("rst", True, "negligible flag, must be zero")
        _check_uint("window_size", self.window_size, 16)
        _check_uint("checksum", self.checksum, 16)
        if self.urgent_pointer != 0:
            raise FieldValueError(
                "urgent_pointer", self.urgent_pointer,
                "no transfer defined, must be zero")
        _check_uint("options", self.options, 32)


def checksum16(data: bytes) -> int:
    """Ones-complement of the ones-complement 16-bit word sum of ``data``.

    Odd-length input is padded with one trailing zero octet.
    """
    if len(data) % 2:
        data = data + b"\x00"
    total = 0
    for i in range(0, len(data), 2):
        total += (data[i] << 8) | data[i + 1]
        total = (total & 0xFFFF) + (total >> 16)
    return (~total) & 0xFFFF


def encode_datagram(header: PiDatagramHeader) -> bytes:
    """Pack a datagram header into its 16-octet wire form."""
    header.validate()
    word0 = (header.version << 28) | (header.traffic_class << 20) | header.flow_label
    return struct.pack(
        _DATAGRAM_FMT,
        word0,
        header.payload_length,
        header.next_header,
        header.hop_limit,
        header.source,
        header.destination,
    )


def decode_datagram(data: bytes) -> PiDatagramHeader:
    """Inverse of :func:`encode_datagram`. Rejects wrong length and bad fields."""
    if len(data) != DATAGRAM_SIZE:
        raise LengthError(f"datagram header must be {DATAGRAM_SIZE} octets, got {len(data)}")
    word0, payload_length, next_header, hop_limit, source, destination = struct.unpack(
        _DATAGRAM_FMT, data)
    header = PiDatagramHeader(
        version=word0 >> 28,
        traffic_class=(word0 >> 20) & 0xFF,
        flow_label=word0 & 0xFFFFF,
        payload_length=payload_length,
        next_header=next_header,
        hop_limit=hop_limit,
        source=source,
        destination=destination,
    )
    header.validate()
    return header


def _pack_segment(header: PiSegmentHeader, checksum: int) -> bytes:
    f = header.flags
    byte12 = (header.data_offset << 4) | (header.reserved << 1) | int(f.ns)
    byte13 = (
        (int(f.cwr) << 7) | (int(f.ece) << 6) | (int(f.urg) << 5)
        | (int(f.ack) << 4) | (int(f.psh) << 3) | (int(f.rst) << 2)
        | (int(f.syn) << 1) | int(f.fin)
    )
    return struct.pack(
        _SEGMENT_FMT,
        header.source_port,
        header.destination_port,
        header.sequence_number,
        header.acknowledgement_number,
        byte12,
        byte13,
        header.window_size,
        checksum,
        header.urgent_pointer,
        header.options,
    )


def encode_segment(header: PiSegmentHeader) -> bytes:
    """Pack a segment header, computing and embedding its checksum.

    Any checksum already present on the input is ignored.
    """
    header.validate()
    wire = _pack_segment(header, 0)
    return _pack_segment(header, checksum16(wire))


def with_checksum(header: PiSegmentHeader) -> PiSegmentHeader:
    """Copy of ``header`` with the checksum field set to its wire value."""
    header.validate()
    return replace(header, checksum=checksum16(_pack_segment(header, 0)))


def decode_segment(data: bytes) -> PiSegmentHeader:
    """Inverse of :func:`encode_segment`. Verifies the checksum first."""
    if len(data) != SEGMENT_SIZE:
        raise LengthError(f"segment header must be {SEGMENT_SIZE} octets, got {len(data)}")
    (source_port, destination_port, sequence_number, acknowledgement_number,
     byte12, byte13, window_size, stored, urgent_pointer, options) = struct.unpack(
        _SEGMENT_FMT, data)
    computed = checksum16(data[:16] + b"\x00\x00" + data[18:])
    if computed != stored:
        raise ChecksumError(
            f"checksum mismatch: stored {stored:#06x}, computed {computed:#06x}")
    header = PiSegmentHeader(
        source_port=source_port,
        destination_port=destination_port,
        sequence_number=sequence_number,
        acknowledgement_number=acknowledgement_number,
        data_offset=byte12 >> 4,
        reserved=(byte12 >> 1) & 0x7,
        flags=SegmentFlags(
            ns=bool(byte12 & 0x1),
            cwr=bool(byte13 & 0x80),
            ece=bool(byte13 & 0x40),
            urg=bool(byte13 & 0x20),
            ack=bool(byte13 & 0x10),
            psh=bool(byte13 & 0x08),
            rst=bool(byte13 & 0x04),
            syn=bool(byte13 & 0x02),
            fin=bool(byte13 & 0x01),
        ),
        window_size=window_size,
        checksum=stored,
        urgent_pointer=urgent_pointer,
        options=options,
    )
    header.validate()
    return header
