"""Transaction records and their fixed-width packed-bit encodings.

A transaction exists in two representations: the field record used by
untimed testbench code (`RegPacket`, `FrameTxn`) and the flat bit vector
that crosses the link (`PackedBits`).  `FieldLayout` is the single source
of truth for field order and widths; packing is MSB-first in declaration
order, so the first declared field occupies the top bits.
"""

from dataclasses import dataclass, field


class CodecError(Exception):
    """Raised for width mismatches and malformed packed data."""


@dataclass(frozen=True)
class PackedBits:
    """A value of exactly `width` bits, MSB-first.

    `value` is the integer whose binary expansion (width bits, most
    significant first) is the bit vector.
    """

    width: int
    value: int

    def __post_init__(self):
        if self.width < 0:
            raise CodecError(f"negative width {self.width}")
        if not 0 <= self.value < (1 << self.width):
            raise CodecError(f"value 0x{self.value:x} does not fit in {self.width} bits")

    def to_bytes(self) -> bytes:
        """Byte form: zero-padded to a byte boundary, pad in the low bits
        of the final byte."""
        nbytes = (self.width + 7) // 8
        pad = nbytes * 8 - self.width
        return (self.value << pad).to_bytes(nbytes, "big")

    @classmethod
    def from_bytes(cls, width: int, data: bytes) -> "PackedBits":
        nbytes = (width + 7) // 8
        if len(data) != nbytes:
            raise CodecError(f"expected {nbytes} payload bytes for {width} bits, got {len(data)}")
        pad = nbytes * 8 - width
        raw = int.from_bytes(data, "big")
        if raw & ((1 << pad) - 1):
            raise CodecError("nonzero padding bits in packed payload")
        return cls(width, raw >> pad)


class FieldLayout:
    """Ordered (name, width) list defining a packed record layout.

    Field order defines packing order: the first field lands in the most
    significant bits.  Offsets are precomputed as left-shift amounts.
    """

    def __init__(self, fields):
        self.fields = list(fields)
        names = [n for n, _ in self.fields]
        if len(set(names)) != len(names):
            raise CodecError("duplicate field name in layout")
        self.total_width = sum(w for _, w in self.fields)
        self.shifts = {}
        self.masks = {}
        off = self.total_width
        for name, width in self.fields:
            if width < 1:
                raise CodecError(f"field {name} has width {width}")
            off -= width
            self.shifts[name] = off
            self.masks[name] = (1 << width) - 1

    def pack(self, values: dict) -> PackedBits:
        acc = 0
        for name, width in self.fields:
            v = values[name]
            if not 0 <= v <= self.masks[name]:
                raise CodecError(f"field {name}={v:#x} exceeds {width} bits")
            acc |= v << self.shifts[name]
        return PackedBits(self.total_width, acc)

    def unpack(self, packed: PackedBits) -> dict:
        if packed.width != self.total_width:
            raise CodecError(f"expected {self.total_width} bits, got {packed.width}")
        return {
            name: (packed.value >> self.shifts[name]) & self.masks[name]
            for name, _ in self.fields
        }


# Register-bus transaction layout.  Widths model a conventional 32-bit
# control bus; be == 0 marks a read request, be != 0 a write.
REG_PACKET_LAYOUT = FieldLayout(
    [
        ("req", 1),
        ("eop", 1),
        ("addr", 32),
        ("data", 32),
        ("be", 4),
        ("r_req", 1),
        ("r_data", 32),
        ("r_opc", 2),
    ]
)

# Response opcodes carried in r_opc.
R_OPC_OK = 0
R_OPC_ERROR = 1


@dataclass
class RegPacket:
    """Register-bus transaction: request fields plus response fields."""

    req: int = 0
    eop: int = 0
    addr: int = 0
    data: int = 0
    be: int = 0
    r_req: int = 0
    r_data: int = 0
    r_opc: int = 0

    def __post_init__(self):
        for name, _ in REG_PACKET_LAYOUT.fields:
            v = getattr(self, name)
            if not 0 <= v <= REG_PACKET_LAYOUT.masks[name]:
                raise CodecError(f"RegPacket.{name}={v:#x} out of range")

    @property
    def is_read(self) -> bool:
        return self.be == 0

    @property
    def kind(self) -> str:
        return "R" if self.is_read else "W"


_REQ_S = REG_PACKET_LAYOUT.shifts["req"]
_EOP_S = REG_PACKET_LAYOUT.shifts["eop"]
_ADDR_S = REG_PACKET_LAYOUT.shifts["addr"]
_DATA_S = REG_PACKET_LAYOUT.shifts["data"]
_BE_S = REG_PACKET_LAYOUT.shifts["be"]
_RREQ_S = REG_PACKET_LAYOUT.shifts["r_req"]
_RDATA_S = REG_PACKET_LAYOUT.shifts["r_data"]
_ROPC_S = REG_PACKET_LAYOUT.shifts["r_opc"]

REG_PACKET_WIDTH = REG_PACKET_LAYOUT.total_width


def pack_reg(p: RegPacket) -> PackedBits:
    """Record -> packed bits, MSB-first in declaration order."""
    value = (
        (p.req << _REQ_S)
        | (p.eop << _EOP_S)
        | (p.addr << _ADDR_S)
        | (p.data << _DATA_S)
        | (p.be << _BE_S)
        | (p.r_req << _RREQ_S)
        | (p.r_data << _RDATA_S)
        | (p.r_opc << _ROPC_S)
    )
    return PackedBits(REG_PACKET_WIDTH, value)


def unpack_reg(b: PackedBits) -> RegPacket:
    """Packed bits -> record; inverse of pack_reg."""
    if b.width != REG_PACKET_WIDTH:
        raise CodecError(f"register packet is {REG_PACKET_WIDTH} bits, got {b.width}")
    v = b.value
    return RegPacket(
        req=(v >> _REQ_S) & 1,
        eop=(v >> _EOP_S) & 1,
        addr=(v >> _ADDR_S) & 0xFFFFFFFF,
        data=(v >> _DATA_S) & 0xFFFFFFFF,
        be=(v >> _BE_S) & 0xF,
        r_req=(v >> _RREQ_S) & 1,
        r_data=(v >> _RDATA_S) & 0xFFFFFFFF,
        r_opc=v & 0x3,
    )


# Video frame stream format: one 48-bit header word, then 32-bit words
# carrying two 16-bit pixels each (earlier pixel in the high half, odd
# trailing pixel zero-padded in the low half).
FRAME_HEADER_WIDTH = 48
PIXEL_WORD_WIDTH = 32


@dataclass
class FrameTxn:
    """One video frame: header fields plus a row-major pixel list."""

    frame_id: int
    width: int
    height: int
    pixels: list = field(default_factory=list)

    def __post_init__(self):
        if not 0 <= self.frame_id <= 0xFFFF:
            raise CodecError(f"frame_id {self.frame_id:#x} exceeds 16 bits")
        if self.width < 1 or self.height < 1:
            raise CodecError(f"degenerate frame {self.width}x{self.height}")
        if self.width > 0xFFFF or self.height > 0xFFFF:
            raise CodecError("frame dimensions exceed 16 bits")
        if len(self.pixels) != self.width * self.height:
            raise CodecError(
                f"expected {self.width * self.height} pixels, got {len(self.pixels)}"
            )
        for p in self.pixels:
            if not 0 <= p <= 0xFFFF:
                raise CodecError(f"pixel {p:#x} exceeds 16 bits")


def pack_frame_header(f: FrameTxn) -> PackedBits:
    return PackedBits(
        FRAME_HEADER_WIDTH, (f.frame_id << 32) | (f.width << 16) | f.height
    )


def unpack_frame_header(b: PackedBits):
    """Header bits -> (frame_id, width, height)."""
    if b.width != FRAME_HEADER_WIDTH:
        raise CodecError(f"frame header is {FRAME_HEADER_WIDTH} bits, got {b.width}")
    frame_id = (b.value >> 32) & 0xFFFF
    width = (b.value >> 16) & 0xFFFF
    height = b.value & 0xFFFF
    if width == 0 or height == 0:
        raise CodecError("frame header encodes a degenerate size")
    return frame_id, width, height


def pack_pixel_word(first: int, second: int = 0) -> PackedBits:
    if not 0 <= first <= 0xFFFF or not 0 <= second <= 0xFFFF:
        raise CodecError("pixel exceeds 16 bits")
    return PackedBits(PIXEL_WORD_WIDTH, (first << 16) | second)


def unpack_pixel_word(b: PackedBits):
    if b.width != PIXEL_WORD_WIDTH:
        raise CodecError(f"pixel word is {PIXEL_WORD_WIDTH} bits, got {b.width}")
    return (b.value >> 16) & 0xFFFF, b.value & 0xFFFF


def frame_word_count(width: int, height: int) -> int:
    """Stream length for a frame: 1 header word + ceil(W*H/2) pixel words."""
    return 1 + (width * height + 1) // 2


def frame_to_words(f: FrameTxn):
    """Serialize a frame to its stream form: [header, pixel words...]."""
    words = [pack_frame_header(f)]
    px = f.pixels
    for i in range(0, len(px) - 1, 2):
        words.append(pack_pixel_word(px[i], px[i + 1]))
    if len(px) % 2:
        words.append(pack_pixel_word(px[-1]))
    return words


def frame_from_words(header: PackedBits, words) -> FrameTxn:
    """Reassemble a frame from its header word and pixel words."""
    frame_id, width, height = unpack_frame_header(header)
    need = (width * height + 1) // 2
    if len(words) != need:
        raise CodecError(f"expected {need} pixel words, got {len(words)}")
    pixels = []
    for w in words:
        hi, lo = unpack_pixel_word(w)
        pixels.append(hi)
        pixels.append(lo)
    pixels = pixels[: width * height]
    return FrameTxn(frame_id=frame_id, width=width, height=height, pixels=pixels)


# Golden-vector file support: one line per packet,
# "<req> <eop> <addr> <data> <be> <r_req> <r_data> <r_opc> -> <packed hex>"
# with every field in hex.  Used by cross-implementation conformance tests.

def format_golden_line(p: RegPacket) -> str:
    packed = pack_reg(p)
    return (
        f"{p.req:x} {p.eop:x} {p.addr:08x} {p.data:08x} {p.be:x} "
        f"{p.r_req:x} {p.r_data:08x} {p.r_opc:x} -> {packed.value:027x}"
    )


def parse_golden_line(line: str):
    """Parse one golden-vector line -> (RegPacket, packed value)."""
    try:
        fields_part, value_part = line.split("->")
        f = [int(tok, 16) for tok in fields_part.split()]
        if len(f) != 8:
            raise ValueError(f"expected 8 fields, got {len(f)}")
        packet = RegPacket(
            req=f[0], eop=f[1], addr=f[2], data=f[3],
            be=f[4], r_req=f[5], r_data=f[6], r_opc=f[7],
        )
        return packet, int(value_part.strip(), 16)
    except ValueError as exc:
        raise CodecError(f"bad golden-vector line {line!r}: {exc}") from exc


def dump_golden_vectors(path, packets):
    with open(path, "w") as fh:
        for p in packets:
            fh.write(format_golden_line(p) + "\n")


def load_golden_vectors(path):
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line and not line.startswith("#"):
                out.append(parse_golden_line(line))
    return out
