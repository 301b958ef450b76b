import io
import zlib

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from patrol import proto
from patrol.proto import (
    BadMagic,
    BadVersion,
    Corrupt,
    FieldRange,
    MsgType,
    Oversize,
    Reader,
    Truncated,
    UnknownType,
    Writer,
)


class TestFrame:
    def test_golden_header_bytes(self):
        # Empty CONTROL_REQ pins the exact layout.
        assert proto.encode_frame(3, 0, b"") == bytes.fromhex("4d4150310103000000000000")

    def test_round_trip_simple(self):
        frame = proto.encode_frame(MsgType.AGENT_STATE, 0b101, b"hello")
        assert proto.decode_frame(frame) == (MsgType.AGENT_STATE, 0b101, b"hello")

    @given(
        msg_type=st.sampled_from(list(MsgType)),
        flags=st.integers(0, 255),
        payload=st.binary(max_size=2048),
    )
    def test_round_trip_property(self, msg_type, flags, payload):
        t, f, p = proto.decode_frame(proto.encode_frame(msg_type, flags, payload))
        assert (t, f, p) == (msg_type, flags, payload)

    def test_oversize_payload(self):
        with pytest.raises(Oversize):
            proto.encode_frame(1, 0, b"\0" * (proto.MAX_PAYLOAD + 1))
        assert proto.encode_frame(1, 0, b"\0" * 100, max_payload=100)

    def test_bad_magic(self):
        data = b"\x00" + proto.encode_frame(3, 0, b"")[1:]
        with pytest.raises(BadMagic):
            proto.decode_frame(data)

    def test_bad_version(self):
        data = bytearray(proto.encode_frame(3, 0, b""))
        data[4] = 9
        with pytest.raises(BadVersion):
            proto.decode_frame(bytes(data))

    def test_unknown_msg_type(self):
        data = bytearray(proto.encode_frame(3, 0, b""))
        data[5] = 99
        with pytest.raises(UnknownType):
            proto.decode_frame(bytes(data))

    def test_truncated_payload(self):
        full = proto.encode_frame(1, 0, b"0123456789")
        with pytest.raises(Truncated):
            proto.decode_frame(full[: proto.HEADER_LEN + 5])

    def test_truncated_header(self):
        with pytest.raises(Truncated):
            proto.decode_frame(proto.encode_frame(3, 0, b"")[:6])

    def test_declared_oversize_rejected(self):
        header = proto.encode_frame(1, 0, b"")[:8] + (2**31).to_bytes(4, "big")
        with pytest.raises(Oversize):
            proto.decode_frame(header)

    def test_stream_source(self):
        frame = proto.encode_frame(MsgType.ANNOUNCE, 1, b"abc")
        stream = io.BytesIO(frame + b"trailing-noise")
        assert proto.read_frame(stream) == (MsgType.ANNOUNCE, 1, b"abc")


class TestCompression:
    def test_zeros_compress(self):
        out, flag = proto.compress(b"\0" * 1024)
        assert flag and len(out) < 64
        assert proto.decompress(out) == b"\0" * 1024

    def test_short_random_unchanged(self):
        data = bytes([7, 201, 33, 90])
        out, flag = proto.compress(data)
        assert not flag and out == data

    @given(st.binary(min_size=0, max_size=10 * 1024))
    @settings(max_examples=30)
    def test_inverse(self, data):
        out, flag = proto.compress(data)
        assert (proto.decompress(out) if flag else out) == data

    def test_corrupt_stream(self):
        with pytest.raises(Corrupt):
            proto.decompress(b"\xff\xff\xff\xff")

    def test_truncated_deflate(self):
        out, flag = proto.compress(b"a" * 500)
        assert flag
        with pytest.raises(Corrupt):
            proto.decompress(out[:-2])


class TestCanonical:
    def test_string_rule(self):
        w = Writer()
        w.str("a")
        assert w.getvalue() == b"\x00\x01a"

    def test_primitive_round_trip(self):
        w = Writer()
        w.u8(7)
        w.u16(65535)
        w.u32(1 << 31)
        w.u64(1 << 63)
        w.i64(-5)
        w.f64(2.5)
        w.bool(True)
        w.str("héllo")
        w.bytes(b"\x00\x01")
        w.list([1, 2, 3], Writer.u8)
        w.opt(None, Writer.u8)
        w.opt(9, Writer.u8)
        r = Reader(w.getvalue())
        assert r.u8() == 7
        assert r.u16() == 65535
        assert r.u32() == 1 << 31
        assert r.u64() == 1 << 63
        assert r.i64() == -5
        assert r.f64() == 2.5
        assert r.bool() is True
        assert r.str() == "héllo"
        assert r.bytes() == b"\x00\x01"
        assert r.list(Reader.u8) == [1, 2, 3]
        assert r.opt(Reader.u8) is None
        assert r.opt(Reader.u8) == 9
        r.expect_end()

    @given(st.integers(0, 2**32 - 1))
    def test_u32_round_trip(self, value):
        w = Writer()
        w.u32(value)
        assert Reader(w.getvalue()).u32() == value

    @pytest.mark.parametrize(
        "write",
        [
            lambda w: w.u8(256),
            lambda w: w.u8(-1),
            lambda w: w.u16(1 << 16),
            lambda w: w.u32(1 << 32),
            lambda w: w.i64(1 << 63),
            lambda w: w.f64(float("nan")),
            lambda w: w.str("x" * 70_000),
            lambda w: w.u8("5"),
        ],
    )
    def test_field_range(self, write):
        with pytest.raises(FieldRange):
            write(Writer())

    def test_trailing_bytes_rejected(self):
        r = Reader(b"\x01\x02")
        assert r.u8() == 1
        with pytest.raises(Corrupt):
            r.expect_end()

    def test_reader_eof(self):
        with pytest.raises(Corrupt):
            Reader(b"\x00").u16()

    def test_bad_bool_and_presence(self):
        with pytest.raises(Corrupt):
            Reader(b"\x05").bool()
        with pytest.raises(Corrupt):
            Reader(b"\x07").opt(Reader.u8)

    def test_determinism(self):
        def build():
            w = Writer()
            w.list(["b", "a"], Writer.str)
            w.opt(12, Writer.u32)
            return w.getvalue()

        assert build() == build()
