"""RF field simulation and the reader wire protocol."""

import struct

import pytest

from tagnet import rfidsim as rf
from tagnet.modbus import crc16
from tagnet.tagcodec import TagImage


def make_world():
    world = rf.TagWorld()
    field = world.create_field("dock-1")
    tag = world.create_tag(uid=0x23F5)
    field.enter(tag.uid)
    return world, field, tag


class TestTagWorld:
    def test_uid_zero_reserved(self):
        with pytest.raises(rf.BadUid):
            rf.TagWorld().create_tag(0)

    def test_uid_must_fit_64_bits(self):
        with pytest.raises(rf.BadUid):
            rf.TagWorld().create_tag(2**64)

    def test_uid_unique_worldwide(self):
        world = rf.TagWorld()
        world.create_tag(5)
        with pytest.raises(rf.DuplicateUid):
            world.create_tag(5)

    def test_capacity_whole_blocks(self):
        with pytest.raises(rf.RfidError):
            rf.TagWorld().create_tag(5, capacity=10, block_size=4)

    def test_new_tag_is_blank_and_absent(self):
        tag = rf.TagWorld().create_tag(5)
        assert tag.present_in is None and set(tag.image.data) == {0}

    def test_field_ids_unique(self):
        world = rf.TagWorld()
        world.create_field("a")
        with pytest.raises(rf.RfidError):
            world.create_field("a")

    def test_unknown_uid(self):
        with pytest.raises(rf.BadUid):
            rf.TagWorld().tag(123)


class TestFieldMembership:
    def test_enter_then_inventory(self):
        world, field, tag = make_world()
        assert field.inventory() == [tag.uid]

    def test_inventory_ascending(self):
        world, field, _ = make_world()
        for uid in (900, 4, 77):
            world.create_tag(uid)
            field.enter(uid)
        assert field.inventory() == [4, 77, 900, 0x23F5]

    def test_enter_moves_between_fields(self):
        world, field, tag = make_world()
        other = world.create_field("dock-2")
        other.enter(tag.uid)
        assert field.inventory() == [] and other.inventory() == [tag.uid]

    def test_leave_only_from_owner(self):
        world, field, tag = make_world()
        other = world.create_field("dock-2")
        other.leave(tag.uid)  # not here; no effect
        assert field.inventory() == [tag.uid]
        field.leave(tag.uid)
        assert field.inventory() == []

    def test_absent_tag_unreadable(self):
        world, field, tag = make_world()
        field.leave(tag.uid)
        with pytest.raises(rf.TagNotInField):
            field.read_blocks(tag.uid, 0, 1)


class TestBlockAccess:
    def test_write_read_round_trip(self):
        _, field, tag = make_world()
        field.write_blocks(tag.uid, 3, b"\x01\x02\x03\x04")
        assert field.read_blocks(tag.uid, 3, 1) == b"\x01\x02\x03\x04"

    def test_read_range_checked(self):
        _, field, tag = make_world()
        with pytest.raises(rf.BlockRangeError):
            field.read_blocks(tag.uid, 60, 5)

    def test_write_length_rules(self):
        _, field, tag = make_world()
        for blob in (b"", b"\x01\x02\x03"):
            with pytest.raises(rf.BlockRangeError):
                field.write_blocks(tag.uid, 0, blob)

    def test_protected_write_changes_nothing(self):
        _, field, tag = make_world()
        tag.protect_blocks(2, 1)
        before = bytes(tag.image.data)
        with pytest.raises(rf.WriteProtected):
            field.write_blocks(tag.uid, 0, b"\xff" * 16)  # blocks 0..3, 2 is locked
        assert bytes(tag.image.data) == before  # all-or-nothing

    def test_protect_range_checked(self):
        _, _, tag = make_world()
        with pytest.raises(rf.BlockRangeError):
            tag.protect_blocks(60, 10)


class TestWireFraming:
    def test_frame_layout(self):
        raw = rf.encode_reader_frame(0x02, b"\x10\x20")
        assert raw[0] == 0xAA and raw[1] == 3 and raw[2] == 0x02
        assert struct.unpack("<H", raw[-2:])[0] == crc16(raw[1:-2])

    def test_round_trip(self):
        raw = rf.encode_reader_frame(0x01, b"\x05")
        assert rf.decode_reader_frame(raw) == (0x01, b"\x05")

    def test_body_budget_enforced(self):
        rf.encode_reader_frame(0x03, bytes(249))
        with pytest.raises(rf.RfidError):
            rf.encode_reader_frame(0x03, bytes(250))

    @pytest.mark.parametrize("mangle", [
        lambda b: b"\x55" + b[1:],          # wrong start byte
        lambda b: b[:-1],                    # truncated
        lambda b: b + b"\x00",               # trailing garbage
        lambda b: b[:1] + bytes([b[1] + 1]) + b[2:],  # length lies
        lambda b: b[:-1] + bytes([b[-1] ^ 0x01]),     # CRC flip
        lambda b: b[:3],                     # shorter than any frame
    ])
    def test_malformed_frames_decode_to_none(self, mangle):
        raw = rf.encode_reader_frame(0x01, b"\x00")
        assert rf.decode_reader_frame(mangle(raw)) is None


class TestFrameService:
    def frame(self, field, cmd, payload=b""):
        return rf.decode_reader_frame(field.handle_frame(rf.encode_reader_frame(cmd, payload)))

    def test_inventory_frame(self):
        world, field, tag = make_world()
        world.create_tag(7)
        field.enter(7)
        cmd, payload = self.frame(field, rf.CMD_INVENTORY)
        assert cmd == rf.CMD_INVENTORY
        assert payload[0] == 2
        assert struct.unpack(">QQ", payload[1:]) == (7, 0x23F5)

    def test_read_frame(self):
        _, field, tag = make_world()
        field.write_blocks(tag.uid, 1, b"\xca\xfe\xba\xbe")
        cmd, payload = self.frame(field, rf.CMD_READ, struct.pack(">QHH", tag.uid, 1, 1))
        assert (cmd, payload) == (rf.CMD_READ, b"\xca\xfe\xba\xbe")

    def test_write_frame(self):
        _, field, tag = make_world()
        cmd, payload = self.frame(field, rf.CMD_WRITE,
                                  struct.pack(">QH", tag.uid, 2) + b"\x11\x22\x33\x44")
        assert cmd == rf.CMD_WRITE
        assert field.read_blocks(tag.uid, 2, 1) == b"\x11\x22\x33\x44"

    @pytest.mark.parametrize("cmd,payload,code", [
        (rf.CMD_READ, b"\x00" * 5, rf.ST_BAD_CMD),                       # short payload
        (rf.CMD_READ, struct.pack(">QHH", 99, 0, 1), rf.ST_TAG_ABSENT),
        (rf.CMD_READ, struct.pack(">QHH", 0x23F5, 60, 10), rf.ST_RANGE),
        (rf.CMD_READ, struct.pack(">QHH", 0x23F5, 0, 63), rf.ST_RANGE),  # reply too big
        (rf.CMD_WRITE, b"\x00" * 4, rf.ST_BAD_CMD),
        (rf.CMD_WRITE, struct.pack(">QH", 99, 0) + b"\x00" * 4, rf.ST_TAG_ABSENT),
        (rf.CMD_WRITE, struct.pack(">QH", 0x23F5, 63) + b"\x00" * 8, rf.ST_RANGE),
        (0x7F, b"", rf.ST_BAD_CMD),                                      # unknown command
    ])
    def test_error_statuses(self, cmd, payload, code):
        _, field, _ = make_world()
        rcmd, rpayload = self.frame(field, cmd, payload)
        assert rcmd == (cmd | 0x80) and rpayload == bytes([code])

    def test_protected_status(self):
        _, field, tag = make_world()
        tag.protect_blocks(0, 1)
        rcmd, rpayload = self.frame(field, rf.CMD_WRITE,
                                    struct.pack(">QH", tag.uid, 0) + b"\x00" * 4)
        assert (rcmd, rpayload) == (rf.CMD_WRITE | 0x80, bytes([rf.ST_PROTECTED]))

    def test_malformed_request_gets_silence(self):
        _, field, _ = make_world()
        raw = rf.encode_reader_frame(rf.CMD_INVENTORY)
        corrupt = raw[:-1] + bytes([raw[-1] ^ 0x80])
        assert field.handle_frame(corrupt) == b""
        assert field.handle_frame(b"") == b""


class CountingLink(rf.ReaderLink):
    def __init__(self, field):
        super().__init__(field)
        self.sent = []

    def send(self, raw):
        self.sent.append(raw)
        super().send(raw)


class TestReaderClient:
    def make_client(self):
        world, field, tag = make_world()
        link = CountingLink(field)
        return rf.ReaderClient(link), link, field, tag

    def test_inventory(self):
        client, _, _, tag = self.make_client()
        assert client.inventory() == [tag.uid]

    def test_small_read(self):
        client, link, field, tag = self.make_client()
        field.write_blocks(tag.uid, 0, b"\xaa\xbb\xcc\xdd")
        assert client.read_blocks(tag.uid, 0, 1) == b"\xaa\xbb\xcc\xdd"
        assert len(link.sent) == 1

    def test_large_read_is_chunked(self):
        client, link, field, tag = self.make_client()
        blob = bytes(range(256))
        tag.image.write_blocks(0, blob)
        assert client.read_blocks(tag.uid, 0, 64) == blob  # 256 B > one frame
        assert len(link.sent) == 2
        for raw in link.sent:  # every frame stayed inside the body budget
            assert raw[1] <= rf.MAX_BODY_LEN

    def test_large_write_is_chunked(self):
        client, link, _, tag = self.make_client()
        blob = bytes((i * 7) % 256 for i in range(256))
        client.write_blocks(tag.uid, 0, blob)
        assert bytes(tag.image.data) == blob
        assert len(link.sent) == 2

    def test_status_mapped_to_exceptions(self):
        client, _, field, tag = self.make_client()
        with pytest.raises(rf.TagNotInField):
            client.read_blocks(999, 0, 1)
        with pytest.raises(rf.BlockRangeError):
            client.read_blocks(tag.uid, 63, 2)
        tag.protect_blocks(0, 1)
        with pytest.raises(rf.WriteProtected):
            client.write_blocks(tag.uid, 0, b"\x00" * 4)

    def test_tag_image_visible_after_client_write(self):
        client, _, field, tag = self.make_client()
        img = TagImage(uid=tag.uid)
        img.data[0:4] = b"\xb2\x00\x01\x01"
        client.write_blocks(tag.uid, 0, bytes(img.data))
        assert bytes(tag.image.data) == bytes(img.data)
