"""Host-side device client: one request-response transaction at a time.

A background reader thread splits incoming bytes into lines, classifies
them, and folds sentinel-framed responses with a TransactionAssembler.
Unsolicited traffic (HEATMAP frames, boot logs, INFER lines) goes to
subscriber callbacks; everything tied to the active request lands in a
mailbox the requesting thread drains. Requests are serialized by a lock,
mirroring the one-outstanding-transaction wire rule.
"""

import logging
import queue
import threading
import time

from . import protocol as proto
from .simulator import DeviceServer, VirtualCamera, VirtualDevice
from .transport import (LineBuffer, TransportClosed, memory_pair,
                        open_endpoint, parse_endpoint)

log = logging.getLogger(__name__)

REQUEST_TIMEOUT = 30.0     # hard cap on waiting for one response


class DeviceClientError(Exception):
    retryable = False


class RequestTimeout(DeviceClientError):
    retryable = True


class TransactionDiscarded(DeviceClientError):
    """The response transaction broke (reset, timeout, bad chunk). Retryable."""
    retryable = True


class DeviceReplyError(DeviceClientError):
    """The device answered with an ERROR line."""


class ConnectionLost(DeviceClientError):
    retryable = True


class _Closed:
    pass


_CLOSED = _Closed()


class DeviceClient:
    def __init__(self, transport, *, timeout: float = REQUEST_TIMEOUT,
                 tx_timeout: float = proto.TRANSACTION_TIMEOUT,
                 clock=time.monotonic):
        self.transport = transport
        self.timeout = timeout
        self._clock = clock
        self._asm = proto.TransactionAssembler(timeout=tx_timeout, clock=clock)
        self._buf = LineBuffer()
        self._mailbox = queue.Queue()
        self._lock = threading.Lock()          # one outstanding request
        self._awaiting = False                 # reader routes Ok/Error by this
        self._closed = False
        self._heatmap_listeners = []
        self._log_listeners = []
        self.tap = None                        # callable(bytes), sees outbound wire bytes
        self._reader = threading.Thread(target=self._read_loop, daemon=True,
                                        name="device-client-reader")
        self._reader.start()

    # -- subscriptions -----------------------------------------------------

    def add_heatmap_listener(self, callback) -> None:
        """callback(HeatmapFrame); called from the reader thread."""
        self._heatmap_listeners.append(callback)

    def add_log_listener(self, callback) -> None:
        """callback(str) for unsolicited plain lines (boot, INFER, menus)."""
        self._log_listeners.append(callback)

    # -- reader ------------------------------------------------------------

    def _read_loop(self) -> None:
        try:
            while True:
                data = self.transport.read(4096, timeout=0.05)
                for line in self._buf.feed(data):
                    self._handle_event(proto.parse_line(line), line)
                tx = self._asm.poll()
                if tx is not None:
                    self._mailbox.put(tx)
        except TransportClosed:
            tx = self._asm.reset()
            if tx is not None:
                self._mailbox.put(tx)
            self._mailbox.put(_CLOSED)

    def _handle_event(self, event, raw_line: str) -> None:
        if isinstance(event, proto.HeatmapFrame):
            for cb in list(self._heatmap_listeners):
                try:
                    cb(event)
                except Exception:
                    log.exception("heatmap listener failed")
            return
        if isinstance(event, (proto.Ok, proto.Error)):
            if self._awaiting:
                self._mailbox.put(event)
            else:
                self._emit_log(raw_line)
            return
        if isinstance(event, (proto.TransactionStart, proto.PayloadLine,
                              proto.TransactionEnd)):
            tx = self._asm.feed(event)
            if tx is not None:
                self._mailbox.put(tx)
            return
        self._emit_log(raw_line)

    def _emit_log(self, line: str) -> None:
        for cb in list(self._log_listeners):
            try:
                cb(line)
            except Exception:
                log.exception("log listener failed")

    # -- request plumbing ----------------------------------------------------

    def _send_wire(self, text: str) -> None:
        data = text.encode("ascii")
        if self.tap is not None:
            self.tap(data)
        self.transport.write(data)

    def _drain_mailbox(self) -> None:
        while True:
            try:
                item = self._mailbox.get_nowait()
            except queue.Empty:
                return
            if item is _CLOSED:           # keep the closed marker observable
                self._mailbox.put(item)
                return

    def _await_reply(self, *, want_transaction: bool):
        deadline = self._clock() + self.timeout
        while True:
            remaining = deadline - self._clock()
            if remaining <= 0:
                raise RequestTimeout(f"no response within {self.timeout:g}s")
            try:
                item = self._mailbox.get(timeout=min(remaining, 0.25))
            except queue.Empty:
                continue
            if item is _CLOSED:
                raise ConnectionLost("connection closed mid-request")
            if isinstance(item, proto.Transaction):
                if item.state is proto.TxState.COMPLETE:
                    return item
                raise TransactionDiscarded(item.diagnostic or "transaction discarded")
            if isinstance(item, proto.Error):
                raise DeviceReplyError(item.message)
            if isinstance(item, proto.Ok):
                if want_transaction:
                    continue          # stray ack; keep waiting for the frame
                return item

    def _request(self, command, *, expect: str):
        """expect: 'transaction' | 'ok' | 'none'."""
        wire = proto.encode_command(command)
        with self._lock:
            if self._closed:
                raise ConnectionLost("client closed")
            self._drain_mailbox()
            self._awaiting = expect != "none"
            try:
                self._send_wire(wire)
                if expect == "none":
                    return None
                return self._await_reply(want_transaction=(expect == "transaction"))
            except TransportClosed as exc:
                raise ConnectionLost(str(exc)) from exc
            finally:
                self._awaiting = False

    # -- command surface -----------------------------------------------------

    def capture(self, width: int, height: int, quality: int = 12) -> bytes:
        """CAM_CAPTURE: one JPEG off the camera at the requested size."""
        tx = self._request(proto.CamCapture(width, height, quality),
                           expect="transaction")
        return tx.data

    def cam_stream_stop(self) -> None:
        self._request(proto.CamStreamStop(), expect="none")

    def sd_list(self, path: str) -> list:
        tx = self._request(proto.SdList(path), expect="transaction")
        return tx.entries()

    def sd_read_text(self, path: str) -> str:
        tx = self._request(proto.SdRead(path), expect="transaction")
        return tx.text()

    def sd_read_bytes(self, path: str) -> bytes:
        tx = self._request(proto.SdJpegRead(path), expect="transaction")
        return tx.data

    def sd_write(self, path: str, data: bytes,
                 chunk_bytes: int = proto.CHUNK_BYTES) -> str:
        """Chunked upload; returns the device's completion message."""
        proto.validate_path(path)
        lines = proto.write_transaction(path, data, chunk_bytes)
        with self._lock:
            if self._closed:
                raise ConnectionLost("client closed")
            self._drain_mailbox()
            self._awaiting = True
            try:
                self._send_wire("".join(line + "\n" for line in lines))
                reply = self._await_reply(want_transaction=False)
            except TransportClosed as exc:
                raise ConnectionLost(str(exc)) from exc
            finally:
                self._awaiting = False
        return reply.message

    def sd_delete(self, path: str) -> str:
        reply = self._request(proto.SdDelete(path), expect="ok")
        return reply.message

    def sd_rmdir(self, path: str) -> str:
        reply = self._request(proto.SdRmdir(path), expect="ok")
        return reply.message

    def heatmap(self, on: bool) -> None:
        self._request(proto.HeatmapOn() if on else proto.HeatmapOff(), expect="ok")

    def menu_key(self, key: str) -> None:
        self._request(proto.MenuKey(key), expect="none")

    def close(self) -> None:
        with self._lock:
            self._closed = True
        self.transport.close()
        self._reader.join(timeout=2.0)


class DeviceLink:
    """A client plus whatever it is talking to; in-process simulators carry
    their server and device so tests and the CLI can reach them."""

    def __init__(self, client: DeviceClient, server: DeviceServer | None = None,
                 device: VirtualDevice | None = None):
        self.client = client
        self.server = server
        self.device = device

    def close(self) -> None:
        self.client.close()
        if self.server is not None:
            self.server.stop()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def connect_sim(sd_root, camera_dir=None, *, auto_tick: bool = False,
                tick_interval: float = 0.16, **client_kwargs) -> DeviceLink:
    """Boot a VirtualDevice on an in-memory duplex and connect a client."""
    host_side, device_side = memory_pair()
    device = VirtualDevice(sd_root, VirtualCamera(camera_dir))
    server = DeviceServer(device, device_side, auto_tick=auto_tick,
                          tick_interval=tick_interval).start()
    client = DeviceClient(host_side, **client_kwargs)
    return DeviceLink(client, server, device)


def connect(endpoint_text: str, *, sd_root=None, camera_dir=None,
            **client_kwargs) -> DeviceLink:
    """Open a link for an endpoint string ('sim' needs sd_root)."""
    endpoint = parse_endpoint(endpoint_text)
    if endpoint.kind == "sim":
        if sd_root is None:
            raise ValueError("the sim endpoint needs an sd_root directory")
        return connect_sim(sd_root, camera_dir, auto_tick=True, **client_kwargs)
    transport = open_endpoint(endpoint)
    return DeviceLink(DeviceClient(transport, **client_kwargs))
