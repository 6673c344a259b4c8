"""Transaction-level communications link between the two sides.

The untimed side (`HvlLink`) and the cycle-accurate side (`HdlServer`)
exchange framed messages over a transport: in-process direct dispatch or
a localhost TCP socket.  The wire format is bit-exact and identical for
both transports.

Synchronization modes:

* LOCKSTEP: every clock cycle is a round trip.  `advance(n)` sends n
  CYCLE_TICK frames (one cycle each, ACKed); cycles consumed inside a
  remote task are likewise reported tick-by-tick by the HDL side and
  ACKed by the HVL side.
* TRANSACTIONAL: `advance(n)` posts a single RUN_CYCLES frame and does
  not wait; round trips happen only at transaction boundaries (remote
  calls and explicit sync points).

Either way the HDL side steps the same cycles in the same order, so the
signal trace and the stream of messages the HVL side observes are
identical; only the number of wire round trips differs.

Stream delivery rule: the HDL side flushes pending HDL-to-HVL stream
messages at the end of every directive; the HVL side files them as they
arrive but makes them visible to `stream_recv_ready` only when a
blocking directive (a call or a sync point) completes.  This keeps the
observation schedule independent of transport timing.
"""

import socket as _socket
import struct
from collections import deque
from dataclasses import dataclass
from enum import Enum, IntEnum

from .txn_codec import CodecError, PackedBits


class MsgType(IntEnum):
    XTF_CALL = 0
    XTF_RETURN = 1
    STREAM_IN = 2
    STREAM_OUT = 3
    CYCLE_TICK = 4
    CYCLE_ACK = 5
    RUN_CYCLES = 6
    SHUTDOWN = 7


class Direction(Enum):
    HVL_TO_HDL = "hvl_to_hdl"
    HDL_TO_HVL = "hdl_to_hvl"


class PortKind(Enum):
    REACTIVE = "reactive"
    STREAMING = "streaming"


class LinkMode(Enum):
    LOCKSTEP = "lockstep"
    TRANSACTIONAL = "transactional"


class FramingError(Exception):
    """Bad magic/version or truncated frame."""


class TransportError(Exception):
    """Transport closed or delivered an impossible message."""


class LinkUsageError(Exception):
    """Contract violation: wrong port kind, call while closed, etc."""


class StreamBackpressureError(Exception):
    """A stream queue exceeded its depth with no way to drain."""


class RemoteError(Exception):
    """The remote task faulted; carries the HDL cycle stamp."""

    def __init__(self, cycle, message="remote task fault"):
        super().__init__(f"{message} (cycle {cycle})")
        self.cycle = cycle


# Every XTF_RETURN payload is prefixed with a 32-bit cycle stamp (the
# HDL time at completion) ahead of the port's declared return payload;
# this is how the untimed side tracks time without a clock of its own.
STAMP_WIDTH = 32

# Reserved port id used by XTF_RETURN frames reporting a remote fault;
# their payload is a 32-bit cycle stamp plus a 32-bit reserved word.
ERROR_PORT = 0xFFFF

EMPTY = PackedBits(0, 0)


@dataclass(frozen=True)
class PortDecl:
    """One declared link port.

    Reactive ports are HVL-to-HDL with a paired return payload
    (`return_width` bits, stamped on the wire); streaming ports carry
    fixed-width one-way messages.
    """

    port_id: int
    direction: Direction
    kind: PortKind
    payload_width: int
    return_width: int = 0

    def __post_init__(self):
        if not 0 <= self.port_id < ERROR_PORT:
            raise LinkUsageError(f"port_id {self.port_id} outside 0..{ERROR_PORT - 1}")
        if self.kind is PortKind.REACTIVE:
            if self.direction is not Direction.HVL_TO_HDL:
                raise LinkUsageError("reactive ports must be HVL_TO_HDL")
        elif self.return_width:
            raise LinkUsageError("streaming ports have no return payload")


@dataclass
class Message:
    msg_type: MsgType
    port_id: int
    payload: PackedBits


# Frame layout: magic "SC" (0x53 0x43), version 0x01, msg_type (1 byte),
# port_id (2 bytes big-endian), payload bit length (4 bytes big-endian),
# payload bytes MSB-first with zero padding in the low bits of the final
# byte.
_MAGIC = b"SC"
_VERSION = 1
_HEADER = struct.Struct(">2sBBHI")
HEADER_LEN = _HEADER.size


def encode_frame(m: Message) -> bytes:
    header = _HEADER.pack(_MAGIC, _VERSION, int(m.msg_type), m.port_id, m.payload.width)
    return header + m.payload.to_bytes()


def decode_frame(data: bytes) -> Message:
    """Decode exactly one frame occupying the whole buffer."""
    if len(data) < HEADER_LEN:
        raise FramingError(f"truncated header: {len(data)} bytes")
    magic, version, msg_type, port_id, bitlen = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise FramingError(f"bad magic {magic!r}")
    if version != _VERSION:
        raise FramingError(f"unsupported version {version}")
    nbytes = (bitlen + 7) // 8
    if len(data) != HEADER_LEN + nbytes:
        raise FramingError(f"payload length mismatch: {len(data) - HEADER_LEN} != {nbytes}")
    try:
        mt = MsgType(msg_type)
    except ValueError as exc:
        raise FramingError(f"unknown message type {msg_type}") from exc
    try:
        payload = PackedBits.from_bytes(bitlen, data[HEADER_LEN:])
    except CodecError as exc:
        raise FramingError(str(exc)) from exc
    return Message(mt, port_id, payload)


def capture_line(direction: str, m: Message) -> str:
    return (
        f"{direction},{m.msg_type.name},{m.port_id},{m.payload.width},"
        f"{m.payload.to_bytes().hex()}"
    )


class SocketChannel:
    """Framed messages over a connected TCP socket (reliable, ordered)."""

    def __init__(self, sock, capture=None):
        sock.setsockopt(_socket.IPPROTO_TCP, _socket.TCP_NODELAY, 1)
        self._sock = sock
        self._buf = b""
        self.capture = capture

    def send(self, msgs):
        data = b"".join(encode_frame(m) for m in msgs)
        if self.capture is not None:
            for m in msgs:
                self.capture.append(capture_line("tx", m))
        try:
            self._sock.sendall(data)
        except OSError as exc:
            raise TransportError(f"send failed: {exc}") from exc

    def _read_exact(self, n):
        while len(self._buf) < n:
            try:
                chunk = self._sock.recv(65536)
            except OSError as exc:
                raise TransportError(f"recv failed: {exc}") from exc
            if not chunk:
                raise TransportError("connection closed")
            self._buf += chunk
        out, self._buf = self._buf[:n], self._buf[n:]
        return out

    def recv(self) -> Message:
        header = self._read_exact(HEADER_LEN)
        bitlen = struct.unpack_from(">I", header, 6)[0]
        payload = self._read_exact((bitlen + 7) // 8)
        m = decode_frame(header + payload)
        if self.capture is not None:
            self.capture.append(capture_line("rx", m))
        return m

    def close(self):
        try:
            self._sock.close()
        except OSError:
            pass


class HvlLink:
    """Untimed-side endpoint of the link.

    The only operations that move HDL time are xtf_call, advance and
    sync_cycle; `time` mirrors the HDL cycle count exactly (advance
    counts locally, calls resynchronize from the return stamp).
    """

    def __init__(self, mode: LinkMode, ports, capture=None):
        self.mode = mode
        self.ports = {p.port_id: p for p in ports}
        if len(self.ports) != len(ports):
            raise LinkUsageError("duplicate port_id in port list")
        self.capture = capture
        self.time = 0
        self._pending = {
            p.port_id: deque()
            for p in ports
            if p.kind is PortKind.STREAMING and p.direction is Direction.HDL_TO_HVL
        }
        self._visible = {pid: deque() for pid in self._pending}
        self._channel = None
        self._in_flight = False
        self._closed = False

    def attach_channel(self, channel):
        self._channel = channel

    # -- directives -----------------------------------------------------

    def xtf_call(self, port: PortDecl, payload: PackedBits) -> PackedBits:
        """Blocking remote task call on a reactive port.

        The HDL side may advance any number of cycles while servicing
        the call; the stamped return resynchronizes `time`.
        """
        self._require_open()
        if port.kind is not PortKind.REACTIVE:
            raise LinkUsageError(f"xtf_call on streaming port {port.port_id}")
        if payload.width != port.payload_width:
            raise CodecError(
                f"port {port.port_id} expects {port.payload_width} bits, got {payload.width}"
            )
        if self._in_flight:
            raise LinkUsageError("xtf_call while another call is in flight")
        self._in_flight = True
        try:
            self._channel.send([Message(MsgType.XTF_CALL, port.port_id, payload)])
            m = self._wait_for(MsgType.XTF_RETURN)
        finally:
            self._in_flight = False
        rw = port.return_width
        if m.payload.width != STAMP_WIDTH + rw:
            raise CodecError(
                f"return payload {m.payload.width} bits, expected {STAMP_WIDTH + rw}"
            )
        stamp = m.payload.value >> rw
        if stamp < self.time:
            raise TransportError(f"time ran backwards: {stamp} < {self.time}")
        self.time = stamp
        ret = PackedBits(rw, m.payload.value & ((1 << rw) - 1))
        self._promote()
        return ret

    def advance(self, n: int):
        """Advance the HDL clock by n cycles.

        Lockstep: n tick/ack round trips.  Transactional: one posted
        RUN_CYCLES frame, no round trip.  Does not publish streams; use
        sync_cycle or a call to observe results.
        """
        self._require_open()
        if n < 0:
            raise LinkUsageError(f"advance({n})")
        if n == 0:
            return
        if self.mode is LinkMode.LOCKSTEP:
            for _ in range(n):
                self._channel.send([Message(MsgType.CYCLE_TICK, 0, EMPTY)])
                self._wait_for(MsgType.CYCLE_ACK)
        else:
            self._channel.send([Message(MsgType.RUN_CYCLES, 0, PackedBits(32, n))])
        self.time += n

    def sync_cycle(self):
        """Advance exactly one cycle with a blocking round trip (both
        modes) and publish any streamed messages received so far."""
        self._require_open()
        self._channel.send([Message(MsgType.CYCLE_TICK, 0, EMPTY)])
        self._wait_for(MsgType.CYCLE_ACK)
        self.time += 1
        self._promote()

    def stream_send(self, port: PortDecl, payload: PackedBits):
        """Post one message on an HVL-to-HDL streaming port (no wait)."""
        self._require_open()
        if port.kind is not PortKind.STREAMING or port.direction is not Direction.HVL_TO_HDL:
            raise LinkUsageError(f"stream_send on port {port.port_id} ({port.kind.value})")
        if payload.width != port.payload_width:
            raise CodecError(
                f"port {port.port_id} expects {port.payload_width} bits, got {payload.width}"
            )
        self._channel.send([Message(MsgType.STREAM_IN, port.port_id, payload)])

    def stream_recv_ready(self, port: PortDecl):
        """Pop the next visible message from an HDL-to-HVL streaming
        port, or None.  Never blocks."""
        if port.port_id not in self._visible:
            raise LinkUsageError(f"port {port.port_id} is not an HDL-to-HVL stream")
        q = self._visible[port.port_id]
        return q.popleft() if q else None

    def shutdown(self):
        """Release the link; idempotent."""
        if self._closed:
            return
        if self._in_flight:
            raise LinkUsageError("shutdown with an xtf call in flight")
        self._channel.send([Message(MsgType.SHUTDOWN, 0, EMPTY)])
        self._closed = True
        self._channel.close()

    # -- internals ------------------------------------------------------

    def _require_open(self):
        if self._closed:
            raise TransportError("link is shut down")
        if self._channel is None:
            raise LinkUsageError("link has no transport attached")

    def _file_stream(self, m: Message):
        try:
            self._pending[m.port_id].append(m.payload)
        except KeyError:
            raise TransportError(f"STREAM_OUT on undeclared port {m.port_id}") from None

    def _promote(self):
        for pid in self._pending:
            p = self._pending[pid]
            if p:
                self._visible[pid].extend(p)
                p.clear()

    def _wait_for(self, want: MsgType) -> Message:
        while True:
            m = self._channel.recv()
            t = m.msg_type
            if t is MsgType.STREAM_OUT:
                self._file_stream(m)
            elif t is MsgType.CYCLE_TICK:
                # HDL-initiated per-cycle sync while a call is in flight
                # (lockstep mode only).
                self._channel.send([Message(MsgType.CYCLE_ACK, 0, EMPTY)])
            elif t is MsgType.XTF_RETURN and m.port_id == ERROR_PORT:
                stamp = m.payload.value >> 32
                raise RemoteError(stamp)
            elif t is want:
                return m
            else:
                raise TransportError(f"unexpected {t.name} while waiting for {want.name}")


class HdlServer:
    """Cycle-accurate-side endpoint: owns the kernel, the bound remote
    tasks and the stream queues, and services directives one at a time.
    """

    def __init__(self, kernel, mode: LinkMode, ports, stream_depth=1024, log=None):
        self.kernel = kernel
        self.mode = mode
        self.ports = {p.port_id: p for p in ports}
        self.stream_depth = stream_depth
        self.log = log or (lambda s: None)
        self._tasks = {}
        self._in_queues = {
            p.port_id: deque()
            for p in ports
            if p.kind is PortKind.STREAMING and p.direction is Direction.HVL_TO_HDL
        }
        self._outbuf = []
        self._send = None
        self._tick_exchange = None
        self._directive_depth = 0
        self._tick_directive = False
        self.closed = False
        kernel.on_cycle = self._cycle_hook
        kernel.step_guard = self._step_guard

    # -- HDL-side API (BFMs) ---------------------------------------------

    def bind_task(self, port: PortDecl, fn):
        if port.kind is not PortKind.REACTIVE:
            raise LinkUsageError(f"cannot bind task to streaming port {port.port_id}")
        self._tasks[port.port_id] = fn

    def stream_out(self, port: PortDecl, payload: PackedBits):
        """Queue one HDL-to-HVL stream message; flushed at the end of
        the current directive."""
        if port.kind is not PortKind.STREAMING or port.direction is not Direction.HDL_TO_HVL:
            raise LinkUsageError(f"stream_out on port {port.port_id}")
        if payload.width != port.payload_width:
            raise CodecError(
                f"port {port.port_id} expects {port.payload_width} bits, got {payload.width}"
            )
        self._outbuf.append(Message(MsgType.STREAM_OUT, port.port_id, payload))

    def in_queue(self, port: PortDecl) -> deque:
        return self._in_queues[port.port_id]

    # -- directive processing ---------------------------------------------

    def _step_guard(self):
        if self._directive_depth == 0:
            raise LinkUsageError(
                f"cycle step outside a link directive (cycle {self.kernel.now})"
            )

    def _cycle_hook(self):
        if self.mode is LinkMode.LOCKSTEP and not self._tick_directive:
            # A remote task consumed a cycle: report it and wait for the
            # ack, flushing any streams generated up to this cycle.
            msgs = self._outbuf
            self._outbuf = []
            msgs.append(Message(MsgType.CYCLE_TICK, 0, EMPTY))
            self._tick_exchange(msgs)

    def _flush_and_send(self, tail=None):
        msgs = self._outbuf
        self._outbuf = []
        if tail is not None:
            msgs.append(tail)
        if msgs:
            self._send(msgs)

    def handle_message(self, m: Message):
        if self.closed:
            raise TransportError("server already shut down")
        t = m.msg_type
        self._directive_depth += 1
        try:
            if t is MsgType.XTF_CALL:
                self._handle_call(m)
            elif t is MsgType.CYCLE_TICK:
                self._tick_directive = True
                try:
                    self.kernel.step_cycle()
                finally:
                    self._tick_directive = False
                self._flush_and_send(Message(MsgType.CYCLE_ACK, 0, EMPTY))
            elif t is MsgType.RUN_CYCLES:
                if m.payload.width != 32:
                    raise FramingError("RUN_CYCLES payload must be 32 bits")
                self._tick_directive = True
                try:
                    self.kernel.run_cycles(m.payload.value)
                finally:
                    self._tick_directive = False
                self._flush_and_send()
            elif t is MsgType.STREAM_IN:
                self._handle_stream_in(m)
            elif t is MsgType.SHUTDOWN:
                self.closed = True
                self.log(f"shutdown at cycle {self.kernel.now}")
            else:
                raise TransportError(f"unexpected directive {t.name}")
        finally:
            self._directive_depth -= 1

    def _handle_call(self, m: Message):
        port = self.ports.get(m.port_id)
        task = self._tasks.get(m.port_id)
        if port is None or port.kind is not PortKind.REACTIVE or task is None:
            self._send_fault(f"call on unbound port {m.port_id}")
            return
        if m.payload.width != port.payload_width:
            self._send_fault(f"call payload width {m.payload.width} on port {m.port_id}")
            return
        try:
            ret = task(m.payload)
        except Exception as exc:
            self._send_fault(f"task fault on port {m.port_id}: {exc!r}")
            return
        if not isinstance(ret, PackedBits) or ret.width != port.return_width:
            self._send_fault(f"task on port {m.port_id} returned a bad payload")
            return
        stamped = PackedBits(
            STAMP_WIDTH + port.return_width,
            (self.kernel.now << port.return_width) | ret.value,
        )
        self._flush_and_send(Message(MsgType.XTF_RETURN, m.port_id, stamped))

    def _send_fault(self, reason):
        self.log(f"fault: {reason} (cycle {self.kernel.now})")
        payload = PackedBits(64, (self.kernel.now & 0xFFFFFFFF) << 32)
        self._flush_and_send(Message(MsgType.XTF_RETURN, ERROR_PORT, payload))

    def _handle_stream_in(self, m: Message):
        port = self.ports.get(m.port_id)
        if (
            port is None
            or port.kind is not PortKind.STREAMING
            or port.direction is not Direction.HVL_TO_HDL
        ):
            raise TransportError(f"STREAM_IN on bad port {m.port_id}")
        if m.payload.width != port.payload_width:
            raise FramingError(f"stream payload width {m.payload.width} on port {m.port_id}")
        q = self._in_queues[m.port_id]
        if len(q) >= self.stream_depth:
            raise StreamBackpressureError(
                f"port {m.port_id} queue exceeded depth {self.stream_depth} "
                "with no cycles advancing to drain it"
            )
        q.append(m.payload)

    # -- transports -------------------------------------------------------

    def serve(self, channel):
        """Blocking directive loop over a socket channel; returns after
        SHUTDOWN or when the peer disconnects."""
        self._send = channel.send
        self._tick_exchange = lambda msgs: self._socket_tick(channel, msgs)
        try:
            while not self.closed:
                try:
                    m = channel.recv()
                except TransportError:
                    self.log(f"peer disconnected at cycle {self.kernel.now}")
                    break
                self.handle_message(m)
        finally:
            channel.close()

    @staticmethod
    def _socket_tick(channel, msgs):
        channel.send(msgs)
        reply = channel.recv()
        if reply.msg_type is not MsgType.CYCLE_ACK:
            raise TransportError(f"expected CYCLE_ACK, got {reply.msg_type.name}")


def connect_inproc(hvl_link: HvlLink, server: HdlServer):
    """Wire the two sides together in one process / one thread.

    Directives dispatch synchronously into the server; replies queue
    into an inbox the HVL side drains while "blocking".  Per-cycle sync
    in lockstep mode is a direct callback so wire captures match the
    socket transport frame-for-frame.
    """
    inbox = deque()
    capture = hvl_link.capture

    def hdl_send(msgs):
        if capture is not None:
            for m in msgs:
                capture.append(capture_line("rx", m))
        inbox.extend(msgs)

    def tick_exchange(msgs):
        hdl_send(msgs[:-1])
        tick = msgs[-1]
        if capture is not None:
            capture.append(capture_line("rx", tick))
        # the HVL side files the streams and acks the tick immediately
        for payload in inbox:
            pass
        while inbox:
            hvl_link._file_stream_or_fail(inbox.popleft())
        if capture is not None:
            capture.append(capture_line("tx", Message(MsgType.CYCLE_ACK, 0, EMPTY)))

    class _HvlChannel:
        def send(self, msgs):
            if capture is not None:
                for m in msgs:
                    capture.append(capture_line("tx", m))
            for m in msgs:
                server.handle_message(m)

        def recv(self):
            if not inbox:
                raise TransportError("no reply pending (in-process link)")
            return inbox.popleft()

        def close(self):
            pass

    server._send = hdl_send
    server._tick_exchange = tick_exchange
    hvl_link.attach_channel(_HvlChannel())
