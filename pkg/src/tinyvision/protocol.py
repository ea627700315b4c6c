"""Newline-terminated ASCII serial protocol: commands, transactions, heatmaps.

The device speaks single lines at 115200 baud. Multi-line responses are
bounded by sentinel lines (SD_LIST_START ... SD_LIST_END and friends);
binary payloads travel as base64 chunks. A response transaction missing its
closing sentinel (device reset, cable pull) is discarded, never partially
consumed. Unrecognized traffic degrades to FreeText so a raw monitor view
loses nothing.
"""

from __future__ import annotations

import base64
import binascii
import enum
import math
import time
from dataclasses import dataclass, field

BAUD_RATE = 115200
CHUNK_BYTES = 512            # raw bytes per base64 chunk line
TRANSACTION_TIMEOUT = 5.0    # seconds of line silence before an open transaction drops

MENU_KEYS = frozenset("12345tl")


class InvalidPath(ValueError):
    """Path not acceptable on the wire (not absolute, or illegal characters)."""


class MalformedFrame(ValueError):
    """HEATMAP line whose payload does not match its declared dimensions."""


def validate_path(path: str) -> str:
    if not path.startswith("/"):
        raise InvalidPath(f"path must be absolute, got {path!r}")
    if any(ch in path for ch in "\r\n:") or "\x00" in path:
        raise InvalidPath(f"path contains characters that cannot travel on the wire: {path!r}")
    return path


# ======================================================================
# commands (host -> device)
# ======================================================================

@dataclass(frozen=True)
class CamCapture:
    width: int
    height: int
    quality: int


@dataclass(frozen=True)
class CamStreamStop:
    pass


@dataclass(frozen=True)
class SdList:
    path: str


@dataclass(frozen=True)
class SdRead:
    path: str


@dataclass(frozen=True)
class SdJpegRead:
    path: str


@dataclass(frozen=True)
class SdWriteStart:
    path: str
    chunk_count: int


@dataclass(frozen=True)
class SdWriteChunk:
    b64: str


@dataclass(frozen=True)
class SdWriteEnd:
    pass


@dataclass(frozen=True)
class SdDelete:
    path: str


@dataclass(frozen=True)
class SdRmdir:
    path: str


@dataclass(frozen=True)
class HeatmapOn:
    pass


@dataclass(frozen=True)
class HeatmapOff:
    pass


@dataclass(frozen=True)
class MenuKey:
    key: str


def encode_command(cmd) -> str:
    """Exact wire form of a command, newline-terminated."""
    if isinstance(cmd, CamCapture):
        if cmd.width < 1 or cmd.height < 1:
            raise ValueError(f"capture size {cmd.width}x{cmd.height} invalid")
        return f"CAM_CAPTURE:{cmd.width}x{cmd.height}:{cmd.quality}\n"
    if isinstance(cmd, CamStreamStop):
        return "CAM_STREAM_STOP\n"
    if isinstance(cmd, SdList):
        return f"SD_LIST:{validate_path(cmd.path)}\n"
    if isinstance(cmd, SdRead):
        return f"SD_READ:{validate_path(cmd.path)}\n"
    if isinstance(cmd, SdJpegRead):
        return f"SD_JPEG:{validate_path(cmd.path)}\n"
    if isinstance(cmd, SdWriteStart):
        if cmd.chunk_count < 1:
            raise ValueError("write transaction needs at least one chunk")
        return f"SD_JPEG_WRITE_START:{validate_path(cmd.path)}:{cmd.chunk_count}\n"
    if isinstance(cmd, SdWriteChunk):
        return f"SD_JPEG_CHUNK:{cmd.b64}\n"
    if isinstance(cmd, SdWriteEnd):
        return "SD_JPEG_WRITE_END\n"
    if isinstance(cmd, SdDelete):
        return f"SD_DELETE:{validate_path(cmd.path)}\n"
    if isinstance(cmd, SdRmdir):
        return f"SD_RMDIR:{validate_path(cmd.path)}\n"
    if isinstance(cmd, HeatmapOn):
        return "HEATMAP_ON\n"
    if isinstance(cmd, HeatmapOff):
        return "HEATMAP_OFF\n"
    if isinstance(cmd, MenuKey):
        if cmd.key not in MENU_KEYS:
            raise ValueError(f"menu key must be one of 1-5, t, l; got {cmd.key!r}")
        return f"{cmd.key}\n"
    raise TypeError(f"not a command: {cmd!r}")


_SIMPLE_COMMANDS = {
    "CAM_STREAM_STOP": CamStreamStop,
    "SD_JPEG_WRITE_END": SdWriteEnd,
    "HEATMAP_ON": HeatmapOn,
    "HEATMAP_OFF": HeatmapOff,
}


def parse_command(line: str):
    """Device-side classification of one host line. None if unrecognized.

    Inverse of encode_command on every valid command; lax about argument
    values (the device validates those and answers with an ERROR line).
    """
    line = line.rstrip("\r\n")
    if line in _SIMPLE_COMMANDS:
        return _SIMPLE_COMMANDS[line]()
    if line in MENU_KEYS:
        return MenuKey(line)
    head, sep, rest = line.partition(":")
    if not sep:
        return None
    if head == "CAM_CAPTURE":
        dims, sep2, quality = rest.partition(":")
        w, by, h = dims.partition("x")
        if not (sep2 and by):
            return None
        try:
            return CamCapture(int(w), int(h), int(quality))
        except ValueError:
            return None
    if head == "SD_LIST":
        return SdList(rest)
    if head == "SD_READ":
        return SdRead(rest)
    if head == "SD_JPEG":
        return SdJpegRead(rest)
    if head == "SD_JPEG_WRITE_START":
        path, sep2, count = rest.rpartition(":")
        if not sep2:
            return None
        try:
            return SdWriteStart(path, int(count))
        except ValueError:
            return None
    if head == "SD_JPEG_CHUNK":
        return SdWriteChunk(rest)
    if head == "SD_DELETE":
        return SdDelete(rest)
    if head == "SD_RMDIR":
        return SdRmdir(rest)
    return None


# ======================================================================
# device events (device -> host)
# ======================================================================

class TxKind(enum.Enum):
    LIST = "list"            # SD_LIST_START / SD_FILE: / SD_LIST_END
    TEXT_READ = "text"       # SD_CONTENT_START / SD_LINE: / SD_CONTENT_END
    JPEG_READ = "jpeg"       # SD_JPEG_START / SD_JPEG: / SD_JPEG_END
    CAM_JPEG = "cam"         # CAM_JPEG_START / CAM_JPEG: / CAM_JPEG_END


# kind -> (start sentinel, payload prefix, end sentinel)
_TX_TOKENS = {
    TxKind.LIST: ("SD_LIST_START", "SD_FILE:", "SD_LIST_END"),
    TxKind.TEXT_READ: ("SD_CONTENT_START", "SD_LINE:", "SD_CONTENT_END"),
    TxKind.JPEG_READ: ("SD_JPEG_START", "SD_JPEG:", "SD_JPEG_END"),
    TxKind.CAM_JPEG: ("CAM_JPEG_START", "CAM_JPEG:", "CAM_JPEG_END"),
}

# base64-chunked kinds; the other two carry text payloads
_BINARY_KINDS = {TxKind.JPEG_READ, TxKind.CAM_JPEG}


@dataclass(frozen=True)
class TransactionStart:
    kind: TxKind


@dataclass(frozen=True)
class PayloadLine:
    kind: TxKind
    data: str


@dataclass(frozen=True)
class TransactionEnd:
    kind: TxKind


@dataclass(frozen=True)
class Ok:
    message: str


@dataclass(frozen=True)
class Error:
    message: str


@dataclass(frozen=True)
class HeatmapFrame:
    rows: int
    cols: int
    data: bytes


@dataclass(frozen=True)
class FreeText:
    line: str


def decode_heatmap(line: str) -> HeatmapFrame:
    """Parse 'HEATMAP:<rows>x<cols>:<base64-bytes>'. Strict about sizes."""
    if not line.startswith("HEATMAP:"):
        raise MalformedFrame(f"not a heatmap line: {line!r}")
    rest = line[len("HEATMAP:"):]
    dims, sep, payload = rest.partition(":")
    if not sep:
        raise MalformedFrame("missing payload separator")
    rows_s, sep, cols_s = dims.partition("x")
    if not sep:
        raise MalformedFrame(f"bad dimension field {dims!r}")
    try:
        rows, cols = int(rows_s), int(cols_s)
    except ValueError as exc:
        raise MalformedFrame(f"bad dimension field {dims!r}") from exc
    if rows < 1 or cols < 1:
        raise MalformedFrame(f"non-positive dimensions {rows}x{cols}")
    try:
        data = base64.b64decode(payload, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise MalformedFrame(f"payload is not base64: {exc}") from exc
    if len(data) != rows * cols:
        raise MalformedFrame(f"{rows}x{cols} frame needs {rows * cols} bytes, got {len(data)}")
    return HeatmapFrame(rows=rows, cols=cols, data=data)


def parse_line(line: str):
    """Classify one device line into a DeviceEvent. Never raises."""
    line = line.rstrip("\r\n")
    for kind, (start, prefix, end) in _TX_TOKENS.items():
        if line == start:
            return TransactionStart(kind)
        if line == end:
            return TransactionEnd(kind)
        if line.startswith(prefix):
            return PayloadLine(kind, line[len(prefix):])
    if line.startswith("OK:"):
        return Ok(line[3:])
    if line.startswith("ERROR:"):
        return Error(line[6:])
    if line.startswith("HEATMAP:"):
        try:
            return decode_heatmap(line)
        except MalformedFrame:
            return FreeText(line)
    return FreeText(line)


# ======================================================================
# SD listing entries
# ======================================================================

@dataclass(frozen=True)
class SdEntry:
    is_dir: bool
    size: int
    name: str


def format_sd_entry(entry: SdEntry) -> str:
    """Payload portion of an SD_FILE line: <D|F>:<size-bytes>:<name>."""
    return f"{'D' if entry.is_dir else 'F'}:{entry.size}:{entry.name}"


def parse_sd_entry(data: str) -> SdEntry:
    kind, sep, rest = data.partition(":")
    size_s, sep2, name = rest.partition(":")
    if kind not in ("D", "F") or not sep or not sep2 or not name:
        raise ValueError(f"bad SD entry {data!r}")
    try:
        size = int(size_s)
    except ValueError as exc:
        raise ValueError(f"bad SD entry size in {data!r}") from exc
    return SdEntry(is_dir=(kind == "D"), size=size, name=name)


# ======================================================================
# transaction assembly
# ======================================================================

class TxState(enum.Enum):
    OPEN = "open"
    COMPLETE = "complete"
    DISCARDED = "discarded"


@dataclass
class Transaction:
    kind: TxKind
    state: TxState = TxState.OPEN
    lines: list = field(default_factory=list)   # raw payload fields, in arrival order
    data: bytes = b""                           # decoded payload for binary kinds
    diagnostic: str = ""

    def text(self) -> str:
        """Joined text payload (TextRead transactions)."""
        return "\n".join(self.lines)

    def entries(self) -> list:
        """Parsed SD entries (List transactions)."""
        return [parse_sd_entry(line) for line in self.lines]


class TransactionAssembler:
    """Folds a stream of DeviceEvents into complete or discarded transactions.

    feed() returns a Transaction whenever one settles (Complete or Discarded),
    else None. A TransactionStart while another transaction is open discards
    the open one first; the new transaction still opens. poll() enforces the
    silence timeout on an open transaction.
    """

    def __init__(self, *, timeout: float = TRANSACTION_TIMEOUT, clock=time.monotonic):
        self.timeout = timeout
        self._clock = clock
        self._open: Transaction | None = None
        self._last_activity = 0.0

    @property
    def open_transaction(self) -> Transaction | None:
        return self._open

    def feed(self, event):
        self._last_activity = self._clock()
        if isinstance(event, TransactionStart):
            discarded = None
            if self._open is not None:
                discarded = self._discard("new transaction started before close")
            self._open = Transaction(kind=event.kind)
            return discarded
        if isinstance(event, PayloadLine):
            if self._open is None or event.kind is not self._open.kind:
                return None  # stray or cross-kind payload; monitor sees the raw line
            self._open.lines.append(event.data)
            return None
        if isinstance(event, TransactionEnd):
            if self._open is None:
                return None
            if event.kind is not self._open.kind:
                return self._discard(f"end sentinel for {event.kind.value} "
                                     f"closed a {self._open.kind.value} transaction")
            return self._complete()
        return None  # Ok/Error/HeatmapFrame/FreeText pass through untouched

    def poll(self, now: float | None = None):
        """Discard the open transaction after timeout seconds of silence."""
        if self._open is None:
            return None
        now = self._clock() if now is None else now
        if now - self._last_activity > self.timeout:
            return self._discard(f"no closing sentinel within {self.timeout:g}s")
        return None

    def reset(self):
        """Drop any open transaction (connection closed underneath us)."""
        return self._discard("connection reset") if self._open else None

    def _discard(self, why: str) -> Transaction:
        tx = self._open
        self._open = None
        tx.state = TxState.DISCARDED
        tx.diagnostic = why
        tx.lines = []   # discarded transactions release no payload
        tx.data = b""
        return tx

    def _complete(self) -> Transaction:
        tx = self._open
        self._open = None
        if tx.kind in _BINARY_KINDS:
            try:
                tx.data = b"".join(base64.b64decode(chunk, validate=True)
                                   for chunk in tx.lines)
            except (binascii.Error, ValueError) as exc:
                tx.state = TxState.DISCARDED
                tx.diagnostic = f"invalid base64 in chunk: {exc}"
                tx.lines = []
                return tx
        tx.state = TxState.COMPLETE
        return tx


def assemble(events, **assembler_kwargs) -> list:
    """Convenience: run a finite event iterable through a fresh assembler."""
    asm = TransactionAssembler(**assembler_kwargs)
    out = []
    for event in events:
        tx = asm.feed(event)
        if tx is not None:
            out.append(tx)
    return out


# ======================================================================
# response framing (device side)
# ======================================================================

def frame_lines(kind: TxKind, payload_fields) -> list:
    """Sentinel-bounded response: start, one prefixed line per field, end."""
    start, prefix, end = _TX_TOKENS[kind]
    return [start, *(prefix + f for f in payload_fields), end]


def frame_chunked(kind: TxKind, data: bytes, chunk_bytes: int = CHUNK_BYTES) -> list:
    """Sentinel-bounded base64 response for the binary kinds."""
    if kind not in _BINARY_KINDS:
        raise ValueError(f"{kind} is not a chunked kind")
    fields = [base64.b64encode(data[off:off + chunk_bytes]).decode("ascii")
              for off in range(0, len(data), chunk_bytes)] or [""]
    return frame_lines(kind, fields)


# ======================================================================
# chunked uploads
# ======================================================================

def chunk_payload(data: bytes, chunk_bytes: int = CHUNK_BYTES) -> list:
    """Split data into SD_JPEG_CHUNK lines of <= chunk_bytes raw bytes each."""
    if len(data) == 0:
        raise ValueError("payload is empty")
    if chunk_bytes < 1:
        raise ValueError("chunk size must be positive")
    lines = []
    for off in range(0, len(data), chunk_bytes):
        b64 = base64.b64encode(data[off:off + chunk_bytes]).decode("ascii")
        lines.append(f"SD_JPEG_CHUNK:{b64}")
    return lines


def write_transaction(path: str, data: bytes, chunk_bytes: int = CHUNK_BYTES) -> list:
    """Full upload sequence: START with exact chunk count, chunks, END.

    A zero-byte file still travels as one empty chunk since the header must
    declare at least one.
    """
    chunks = (chunk_payload(data, chunk_bytes) if data else ["SD_JPEG_CHUNK:"])
    start = encode_command(SdWriteStart(path, len(chunks))).rstrip("\n")
    return [start, *chunks, "SD_JPEG_WRITE_END"]


def expected_chunk_count(size: int, chunk_bytes: int = CHUNK_BYTES) -> int:
    return max(1, math.ceil(size / chunk_bytes))


# ======================================================================
# five-anchor color ramp
# ======================================================================

# byte positions chosen so every anchor color is hit exactly by an integer
# input; the four intervals are as equal as 0..255 allows
COLOR_ANCHORS = ((0, (0, 0, 255)),      # blue
                 (64, (0, 255, 255)),   # cyan
                 (128, (0, 255, 0)),    # green
                 (192, (255, 255, 0)),  # yellow
                 (255, (255, 0, 0)))    # red


def colormap(v: int) -> tuple:
    """Map a heatmap byte to (r, g, b) on the blue-cyan-green-yellow-red ramp."""
    v = max(0, min(255, int(v)))
    for (p0, c0), (p1, c1) in zip(COLOR_ANCHORS, COLOR_ANCHORS[1:]):
        if v <= p1:
            t = (v - p0) / (p1 - p0)
            return tuple(round(a + (b - a) * t) for a, b in zip(c0, c1))
    return COLOR_ANCHORS[-1][1]


COLORMAP_LUT = bytes(c for v in range(256) for c in colormap(v))


def heatmap_to_rgb(frame: HeatmapFrame) -> bytes:
    """Render a frame to packed row-major RGB bytes (rows*cols*3)."""
    out = bytearray(len(frame.data) * 3)
    for i, v in enumerate(frame.data):
        out[3 * i:3 * i + 3] = COLORMAP_LUT[3 * v:3 * v + 3]
    return bytes(out)
