"""Wire-format tests: exact octets, roundtrips, checksum behavior."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rbpi.codec import (
    DATAGRAM_SIZE,
    SEGMENT_SIZE,
    ChecksumError,
    FieldValueError,
    LengthError,
    PiDatagramHeader,
    PiSegmentHeader,
    SegmentFlags,
    checksum16,
    decode_datagram,
    decode_segment,
    encode_datagram,
    encode_segment,
    with_checksum,
)

datagram_headers = st.builds(
    PiDatagramHeader,
    version=st.sampled_from([1, 2]),
    traffic_class=st.integers(0, 255),
    flow_label=st.integers(0, (1 << 20) - 1),
    payload_length=st.integers(0, 65535),
    next_header=st.sampled_from([0, 1]),
    hop_limit=st.integers(0, 255),
    source=st.integers(0, (1 << 32) - 1),
    destination=st.integers(0, (1 << 32) - 1),
)

segment_headers = st.builds(
    PiSegmentHeader,
    source_port=st.integers(0, 65535),
    destination_port=st.integers(0, 65535),
    sequence_number=st.integers(0, (1 << 32) - 1),
    acknowledgement_number=st.integers(0, (1 << 32) - 1),
    flags=st.builds(
        SegmentFlags,
        ns=st.booleans(), cwr=st.booleans(), ece=st.booleans(),
        urg=st.booleans(), ack=st.booleans(), syn=st.booleans(),
        fin=st.booleans(),
    ),
    window_size=st.integers(0, 65535),
    options=st.integers(0, (1 << 32) - 1),
)


class TestChecksum16:
    def test_all_zero_24_octets(self):
        assert checksum16(bytes(24)) == 0xFFFF

    def test_single_word(self):
        assert checksum16(b"\x00\x01") == 0xFFFE

    def test_odd_length_pads_trailing_zero(self):
        assert checksum16(b"\x12") == checksum16(b"\x12\x00")

    @given(st.binary(max_size=64))
    def test_matches_naive_accumulator(self, data):
        # Independent oracle: accumulate in a wide integer, fold at the end.
        padded = data + b"\x00" if len(data) % 2 else data
        total = sum((padded[i] << 8) | padded[i + 1]
                    for i in range(0, len(padded), 2))
        while total >> 16:
            total = (total & 0xFFFF) + (total >> 16)
        assert checksum16(data) == (~total) & 0xFFFF


class TestDatagramCodec:
    def test_zero_case_version_nibble_high(self):
        wire = encode_datagram(PiDatagramHeader(version=1))
        assert wire == bytes.fromhex("10" + "00" * 15)

    def test_fixed_size(self):
        assert len(encode_datagram(PiDatagramHeader(version=2))) == DATAGRAM_SIZE

    def test_hop_limit_max_roundtrips(self):
        h = PiDatagramHeader(version=2, hop_limit=255)
        assert decode_datagram(encode_datagram(h)) == h

    @settings(max_examples=200)
    @given(datagram_headers)
    def test_roundtrip(self, header):
        assert decode_datagram(encode_datagram(header)) == header

    @given(datagram_headers)
    def test_encoding_pure(self, header):
        assert encode_datagram(header) == encode_datagram(header)

    def test_wrong_length_rejected(self):
        with pytest.raises(LengthError):
            decode_datagram(bytes(15))

    def test_version_7_rejected(self):
        wire = bytearray(encode_datagram(PiDatagramHeader(version=1)))
        wire[0] = 0x70
        assert 7 not in (1, 2)
        with pytest.raises(FieldValueError) as exc:
            decode_datagram(bytes(wire))
        assert exc.value.field_name == "version"

    def test_version_zero_rejected_as_corruption_canary(self):
        with pytest.raises(FieldValueError):
            encode_datagram(PiDatagramHeader(version=0))

    def test_bad_next_header_names_field(self):
        with pytest.raises(FieldValueError) as exc:
            encode_datagram(PiDatagramHeader(version=1, next_header=7))
        assert exc.value.field_name == "next_header"

    def test_overwide_flow_label_rejected(self):
        with pytest.raises(FieldValueError) as exc:
            encode_datagram(PiDatagramHeader(version=1, flow_label=1 << 20))
        assert exc.value.field_name == "flow_label"


class TestSegmentCodec:
    def test_syn_lands_in_byte_13_low_bits(self):
        h = PiSegmentHeader(sequence_number=1, flags=SegmentFlags(syn=True))
        wire = encode_segment(h)
        assert len(wire) == SEGMENT_SIZE
        assert wire[13] == 0x02
        assert wire[4:8] == (1).to_bytes(4, "big")

    def test_data_offset_in_byte_12_high_nibble(self):
        wire = encode_segment(PiSegmentHeader())
        assert wire[12] >> 4 == 6

    def test_psh_rejected(self):
        with pytest.raises(FieldValueError) as exc:
            encode_segment(PiSegmentHeader(flags=SegmentFlags(psh=True)))
        assert exc.value.field_name == "psh"

    def test_rst_rejected(self):
        with pytest.raises(FieldValueError):
            encode_segment(PiSegmentHeader(flags=SegmentFlags(rst=True)))

    def test_nonzero_urgent_pointer_rejected(self):
        with pytest.raises(FieldValueError):
            encode_segment(PiSegmentHeader(urgent_pointer=5))

    def test_nonzero_reserved_rejected(self):
        with pytest.raises(FieldValueError):
            encode_segment(PiSegmentHeader(reserved=1))

    @settings(max_examples=200)
    @given(segment_headers)
    def test_roundtrip_with_computed_checksum(self, header):
        decoded = decode_segment(encode_segment(header))
        assert decoded == with_checksum(header)

    @given(segment_headers)
    def test_bytes_roundtrip_exact(self, header):
        wire = encode_segment(header)
        assert encode_segment(decode_segment(wire)) == wire

    @given(segment_headers)
    def test_embedded_checksum_verifies(self, header):
        wire = encode_segment(header)
        assert checksum16(wire) == 0  # summing a correct packet folds to zero

    def test_wrong_length_rejected(self):
        with pytest.raises(LengthError):
            decode_segment(bytes(25))

    def test_every_single_bit_flip_detected(self):
        header = PiSegmentHeader(
            source_port=4, destination_port=9, sequence_number=41,
            acknowledgement_number=7,
            flags=SegmentFlags(ack=True, syn=True), window_size=1200,
            options=0xDEADBEEF)
        wire = encode_segment(header)
        for bit in range(len(wire) * 8):
            corrupted = bytearray(wire)
            corrupted[bit // 8] ^= 1 << (bit % 8)
            with pytest.raises(ChecksumError):
                decode_segment(bytes(corrupted))
