"""Virtual device: the card-and-camera side of the serial protocol.

VirtualDevice answers command lines exactly like the firmware would, against
a sandboxed host directory standing in for the SD card and a directory of
images standing in for the camera. DeviceServer pumps a transport so clients
(including real serial programs attached to a pty) can talk to it.
"""

import base64
import io
import logging
import shutil
import threading
import time
from pathlib import Path

import numpy as np
from PIL import Image

from . import model, protocol as proto
from .codec import (ConfigInvalid, WeightCodecError, bundle_to_weights,
                    decode_bin, parse_config)
from .dataset import HEADER_DIR, CONFIG_NAME, IMAGE_EXTS, prepare_image
from .transport import LineBuffer, TransportClosed

log = logging.getLogger(__name__)

BOOT_BANNER = "TinyML vision device (simulated) ready"
DEFAULT_TICK_INTERVAL = 0.16        # ~6.3 inference frames per second


class SandboxViolation(Exception):
    """A wire path tried to leave the card root."""


class VirtualCamera:
    """Cyclic playback of a directory of images, standing in for the sensor."""

    def __init__(self, directory=None):
        self.directory = Path(directory) if directory else None
        self._paths = []
        self._cursor = 0
        self.rescan()

    def rescan(self) -> None:
        if self.directory is not None and self.directory.is_dir():
            self._paths = sorted(
                p for p in self.directory.iterdir()
                if p.is_file() and p.suffix.lower() in IMAGE_EXTS)
        else:
            self._paths = []
        if self._paths:
            self._cursor %= len(self._paths)
        else:
            self._cursor = 0

    def __len__(self):
        return len(self._paths)

    def seek(self, index: int) -> None:
        if self._paths:
            self._cursor = index % len(self._paths)

    def current_path(self):
        return self._paths[self._cursor] if self._paths else None

    def current(self):
        """The frame under the cursor as an RGB image, or None."""
        path = self.current_path()
        if path is None:
            return None
        try:
            with Image.open(path) as im:
                return im.convert("RGB")
        except Exception as exc:
            log.warning("camera cannot decode %s: %s", path, exc)
            return None

    def advance(self) -> None:
        if self._paths:
            self._cursor = (self._cursor + 1) % len(self._paths)

    def next_frame(self):
        frame = self.current()
        self.advance()
        return frame


class _WriteState:
    """Progress of one chunked upload between WRITE_START and WRITE_END."""

    def __init__(self, wire_path: str, target: Path, declared: int):
        self.wire_path = wire_path
        self.target = target
        self.declared = declared
        self.chunks = []


class VirtualDevice:
    """One simulated device: SD sandbox, camera, loaded weights, heatmap flag."""

    def __init__(self, sd_root, camera: VirtualCamera | None = None, *,
                 chunk_bytes: int = proto.CHUNK_BYTES):
        self.sd_root = Path(sd_root).resolve()
        if not self.sd_root.is_dir():
            raise ValueError(f"sd root {sd_root} is not a directory")
        self.camera = camera if camera is not None else VirtualCamera(None)
        self.chunk_bytes = chunk_bytes
        self.config = None
        self.meta = None
        self.weights = None
        self.heatmap_on = False
        self.booted = False
        self._write: _WriteState | None = None
        # after an aborted upload, swallow chunks until WRITE_END; if set to a
        # string, that error is emitted at the END line
        self._write_drain: str | None = None
        self._draining = False
        # serializes boot/handle_line/inference_tick across threads (the API
        # can reboot the device while the server thread is pumping)
        self._dev_lock = threading.RLock()

    # -- boot ----------------------------------------------------------

    def boot(self) -> list:
        """Load config and weights from /header; always comes up, possibly
        weightless, reporting what happened as log lines."""
        with self._dev_lock:
            return self._boot_locked()

    def _boot_locked(self) -> list:
        lines = [BOOT_BANNER]
        self.config = None
        self.meta = None
        self.weights = None
        weights_name = "myWeights.bin"
        cfg_path = self.sd_root / HEADER_DIR / CONFIG_NAME
        if cfg_path.is_file():
            try:
                self.config = parse_config(cfg_path.read_text())
                weights_name = self.config.weights_file
                lines.append(f"Config loaded: {self.config.num_classes} classes, "
                             f"input {self.config.input_size}")
            except (ConfigInvalid, OSError, UnicodeDecodeError) as exc:
                lines.append(f"Config load failed: {exc}")
        else:
            lines.append("No config.json on card")
        bin_path = self.sd_root / HEADER_DIR / weights_name
        if bin_path.is_file():
            try:
                bundle = decode_bin(bin_path.read_bytes())
                self.weights = bundle_to_weights(bundle)
                self.meta = bundle.meta
                lines.append(f"Weights loaded: {self.weights.param_count()} params, "
                             f"{bundle.meta.num_classes} classes")
            except (WeightCodecError, OSError) as exc:
                lines.append(f"Weight load failed: {exc}")
        else:
            lines.append("No weights file; inference disabled")
        self.booted = True
        return lines

    # -- path sandbox ----------------------------------------------------

    def _resolve(self, wire_path: str) -> Path:
        if not wire_path.startswith("/"):
            raise SandboxViolation(f"path must be absolute: {wire_path!r}")
        candidate = (self.sd_root / wire_path.lstrip("/")).resolve()
        if candidate != self.sd_root and not candidate.is_relative_to(self.sd_root):
            raise SandboxViolation(f"path escapes the card: {wire_path!r}")
        return candidate

    # -- command handling --------------------------------------------------

    def handle_line(self, line: str) -> list:
        """Respond to one host line. Never raises: bad input becomes ERROR."""
        line = line.rstrip("\r\n")
        if line == "":
            return []
        cmd = proto.parse_command(line)
        if cmd is None:
            return [f"ERROR:Unknown command: {line[:48]}"]
        try:
            with self._dev_lock:
                return self._dispatch(cmd)
        except SandboxViolation as exc:
            return [f"ERROR:{exc}"]
        except Exception as exc:          # device never crashes on input
            log.exception("command failed: %r", line)
            return [f"ERROR:Command failed: {type(exc).__name__}"]

    def _dispatch(self, cmd) -> list:
        if isinstance(cmd, proto.CamCapture):
            return self._cam_capture(cmd)
        if isinstance(cmd, proto.CamStreamStop):
            return []
        if isinstance(cmd, proto.SdList):
            return self._sd_list(cmd.path)
        if isinstance(cmd, proto.SdRead):
            return self._sd_read(cmd.path)
        if isinstance(cmd, proto.SdJpegRead):
            return self._sd_jpeg(cmd.path)
        if isinstance(cmd, proto.SdWriteStart):
            return self._write_start(cmd)
        if isinstance(cmd, proto.SdWriteChunk):
            return self._write_chunk(cmd.b64)
        if isinstance(cmd, proto.SdWriteEnd):
            return self._write_end()
        if isinstance(cmd, proto.SdDelete):
            return self._sd_delete(cmd.path)
        if isinstance(cmd, proto.SdRmdir):
            return self._sd_rmdir(cmd.path)
        if isinstance(cmd, proto.HeatmapOn):
            self.heatmap_on = True
            return ["OK:Heatmap on"]
        if isinstance(cmd, proto.HeatmapOff):
            self.heatmap_on = False
            return ["OK:Heatmap off"]
        if isinstance(cmd, proto.MenuKey):
            return [f"Menu key '{cmd.key}' accepted"]
        return [f"ERROR:Unhandled command type {type(cmd).__name__}"]

    def _cam_capture(self, cmd: proto.CamCapture) -> list:
        if cmd.width < 1 or cmd.height < 1:
            return [f"ERROR:Bad capture size {cmd.width}x{cmd.height}"]
        frame = self.camera.next_frame()
        if frame is None:
            return ["ERROR:No camera image available"]
        if frame.size != (cmd.width, cmd.height):
            frame = frame.resize((cmd.width, cmd.height), Image.BILINEAR)
        quality = max(1, min(100, cmd.quality))
        buf = io.BytesIO()
        frame.save(buf, "JPEG", quality=quality)
        return proto.frame_chunked(proto.TxKind.CAM_JPEG, buf.getvalue(),
                                   self.chunk_bytes)

    def _sd_list(self, wire_path: str) -> list:
        target = self._resolve(wire_path)
        if not target.is_dir():
            return [f"ERROR:Not a directory: {wire_path}"]
        fields = []
        for child in sorted(target.iterdir(), key=lambda p: p.name):
            entry = proto.SdEntry(is_dir=child.is_dir(),
                                  size=0 if child.is_dir() else child.stat().st_size,
                                  name=child.name)
            fields.append(proto.format_sd_entry(entry))
        return proto.frame_lines(proto.TxKind.LIST, fields)

    def _sd_read(self, wire_path: str) -> list:
        target = self._resolve(wire_path)
        if not target.is_file():
            return [f"ERROR:File not found: {wire_path}"]
        text = target.read_text(encoding="utf-8", errors="replace")
        return proto.frame_lines(proto.TxKind.TEXT_READ, text.splitlines())

    def _sd_jpeg(self, wire_path: str) -> list:
        target = self._resolve(wire_path)
        if not target.is_file():
            return [f"ERROR:File not found: {wire_path}"]
        return proto.frame_chunked(proto.TxKind.JPEG_READ, target.read_bytes(),
                                   self.chunk_bytes)

    def _write_start(self, cmd: proto.SdWriteStart) -> list:
        self._write = None
        self._draining = False
        self._write_drain = None
        if cmd.chunk_count < 1:
            self._draining = True
            return [f"ERROR:Bad chunk count {cmd.chunk_count}"]
        try:
            target = self._resolve(cmd.path)
        except SandboxViolation as exc:
            self._draining = True
            return [f"ERROR:{exc}"]
        if target == self.sd_root or not target.parent.is_dir():
            self._draining = True
            return [f"ERROR:No such directory for {cmd.path}"]
        if target.is_dir():
            self._draining = True
            return [f"ERROR:Is a directory: {cmd.path}"]
        self._write = _WriteState(cmd.path, target, cmd.chunk_count)
        return []

    def _write_chunk(self, b64: str) -> list:
        if self._draining:
            return []
        if self._write is None:
            return ["ERROR:No write transaction open"]
        try:
            data = base64.b64decode(b64, validate=True)
        except Exception:
            # abort; stay quiet until WRITE_END so the host sees one error
            self._write = None
            self._draining = True
            self._write_drain = "Write aborted: invalid base64 chunk"
            return []
        self._write.chunks.append(data)
        if len(self._write.chunks) > self._write.declared:
            self._write = None
            self._draining = True
            self._write_drain = "Write aborted: more chunks than declared"
        return []

    def _write_end(self) -> list:
        if self._draining:
            error = self._write_drain
            self._draining = False
            self._write_drain = None
            return [f"ERROR:{error}"] if error else []
        if self._write is None:
            return ["ERROR:No write transaction open"]
        state, self._write = self._write, None
        if len(state.chunks) != state.declared:
            return [f"ERROR:Chunk count mismatch: declared {state.declared}, "
                    f"got {len(state.chunks)}"]
        data = b"".join(state.chunks)
        state.target.write_bytes(data)
        return [f"OK:JPEG_WRITE_DONE {state.wire_path} ({len(data)}B)"]

    def _sd_delete(self, wire_path: str) -> list:
        target = self._resolve(wire_path)
        if target == self.sd_root:
            return ["ERROR:Cannot delete card root"]
        if target.is_dir():
            return [f"ERROR:Is a directory: {wire_path}"]
        if not target.is_file():
            return [f"ERROR:File not found: {wire_path}"]
        target.unlink()
        return ["OK:Deleted"]

    def _sd_rmdir(self, wire_path: str) -> list:
        target = self._resolve(wire_path)
        if target == self.sd_root:
            return ["ERROR:Cannot delete card root"]
        if not target.is_dir():
            return [f"ERROR:Not a directory: {wire_path}"]
        shutil.rmtree(target)
        return ["OK:Deleted"]

    # -- inference -------------------------------------------------------

    def inference_tick(self) -> list:
        """One camera-frame classification; heatmap line first when streaming."""
        with self._dev_lock:
            return self._tick_locked()

    def _tick_locked(self) -> list:
        if self.weights is None:
            return []
        frame = self.camera.current()
        if frame is None:
            return []
        meta = self.meta
        pixels = prepare_image(frame, meta.input_size, meta.grayscale)
        probs, cache = model.forward(self.weights, pixels)
        idx = int(np.argmax(probs))
        label = meta.class_labels[idx]
        lines = []
        if self.heatmap_on:
            quantized = model.quantize_heatmap(model.conv2_heatmap(cache.a2))
            b64 = base64.b64encode(quantized.tobytes()).decode("ascii")
            lines.append(f"HEATMAP:{quantized.shape[0]}x{quantized.shape[1]}:{b64}")
        lines.append(f"INFER:{idx}:{label}:{probs[idx]:.4f}")
        return lines


class DeviceServer:
    """Pumps one transport for one VirtualDevice on a background thread.

    Responses to a command are written as one block, so heatmap ticks can
    never land inside a sentinel-framed response.
    """

    def __init__(self, device: VirtualDevice, transport, *,
                 tick_interval: float = DEFAULT_TICK_INTERVAL,
                 auto_tick: bool = False, clock=time.monotonic):
        self.device = device
        self.transport = transport
        self.tick_interval = tick_interval
        self.auto_tick = auto_tick
        self._clock = clock
        self._buf = LineBuffer()
        self._stop = threading.Event()
        self._wlock = threading.Lock()
        self._thread: threading.Thread | None = None

    def start(self) -> "DeviceServer":
        if not self.device.booted:
            self._send(self.device.boot())
        self._thread = threading.Thread(target=self._run, daemon=True,
                                        name="device-server")
        self._thread.start()
        return self

    def _send(self, lines) -> None:
        if not lines:
            return
        data = "".join(line + "\n" for line in lines).encode("utf-8")
        with self._wlock:
            self.transport.write(data)

    def _run(self) -> None:
        last_tick = self._clock()
        try:
            while not self._stop.is_set():
                data = self.transport.read(4096, timeout=0.05)
                if data:
                    for line in self._buf.feed(data):
                        self._send(self.device.handle_line(line))
                if self.auto_tick and self._clock() - last_tick >= self.tick_interval:
                    last_tick = self._clock()
                    self._send(self.device.inference_tick())
        except TransportClosed:
            pass

    def tick(self) -> None:
        """Run one inference cycle now (manual pacing for tests and demos)."""
        self._send(self.device.inference_tick())

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=2.0)
        self.transport.close()

    def kill(self) -> None:
        """Abrupt death: close the wire without stopping cleanly first."""
        self.transport.close()
        self._stop.set()


def serve_tcp(device: VirtualDevice, host: str, port: int, *,
              tick_interval: float = DEFAULT_TICK_INTERVAL,
              auto_tick: bool = True, ready_callback=None,
              stop_event: threading.Event | None = None) -> None:
    """Accept one client at a time on a TCP socket, forever (or until
    stop_event is set). Each connection gets a fresh server pump."""
    from .transport import SocketTransport, listen_tcp
    stop_event = stop_event or threading.Event()
    listener = listen_tcp(host, port)
    actual_port = listener.getsockname()[1]
    if ready_callback is not None:
        ready_callback(actual_port)
    listener.settimeout(0.2)
    try:
        while not stop_event.is_set():
            try:
                conn, addr = listener.accept()
            except OSError:
                continue
            log.info("client connected from %s", addr)
            transport = SocketTransport(conn, f"tcp-client:{addr}")
            server = DeviceServer(device, transport,
                                  tick_interval=tick_interval, auto_tick=auto_tick)
            # hand the device to this connection until it drops
            server.start()
            while not stop_event.is_set() and server._thread.is_alive():
                server._thread.join(timeout=0.2)
            server.stop()
    finally:
        listener.close()
