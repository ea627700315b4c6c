"""Byte-duplex transports: in-memory pair, TCP, and serial/pty via termios.

Every transport exposes the same three calls: read(max_bytes, timeout) which
returns b"" when the timeout elapses and raises TransportClosed at end of
stream, write(bytes), and close(). The protocol layer above is line oriented;
LineBuffer turns the byte stream back into lines.
"""

import os
import select
import socket
import termios
import tty
from dataclasses import dataclass

BAUD_RATE = 115200

_BAUD_CONSTANTS = {
    9600: termios.B9600,
    19200: termios.B19200,
    38400: termios.B38400,
    57600: termios.B57600,
    115200: termios.B115200,
    230400: termios.B230400,
}


class TransportClosed(ConnectionError):
    """Peer hung up or the descriptor was closed underneath us."""


class SocketTransport:
    """Wraps a connected socket (TCP or socketpair)."""

    def __init__(self, sock: socket.socket, name: str = "socket"):
        self.sock = sock
        self.name = name

    def read(self, max_bytes: int = 4096, timeout=None) -> bytes:
        try:
            self.sock.settimeout(timeout)
            data = self.sock.recv(max_bytes)
        except socket.timeout:
            return b""
        except OSError as exc:
            raise TransportClosed(str(exc)) from exc
        if data == b"":
            raise TransportClosed("peer closed the connection")
        return data

    def write(self, data: bytes) -> None:
        try:
            self.sock.sendall(data)
        except OSError as exc:
            raise TransportClosed(str(exc)) from exc

    def close(self) -> None:
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()

    def __repr__(self):
        return f"<SocketTransport {self.name}>"


class FdTransport:
    """Wraps raw file descriptors (serial ports, pty ends)."""

    def __init__(self, fd: int, name: str = "fd", extra_fds=()):
        self.fd = fd
        self.name = name
        self._extra = list(extra_fds)
        self._closed = False

    def read(self, max_bytes: int = 4096, timeout=None) -> bytes:
        if self._closed:
            raise TransportClosed("transport closed")
        try:
            ready, _, _ = select.select([self.fd], [], [], timeout)
        except (OSError, ValueError) as exc:
            raise TransportClosed(str(exc)) from exc
        if not ready:
            return b""
        try:
            data = os.read(self.fd, max_bytes)
        except OSError as exc:
            raise TransportClosed(str(exc)) from exc
        if data == b"":
            raise TransportClosed("end of stream")
        return data

    def write(self, data: bytes) -> None:
        if self._closed:
            raise TransportClosed("transport closed")
        try:
            while data:
                written = os.write(self.fd, data)
                data = data[written:]
        except OSError as exc:
            raise TransportClosed(str(exc)) from exc

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        for fd in [self.fd, *self._extra]:
            try:
                os.close(fd)
            except OSError:
                pass

    def __repr__(self):
        return f"<FdTransport {self.name}>"


def memory_pair():
    """Two linked in-process transports; what one writes the other reads."""
    a, b = socket.socketpair()
    return SocketTransport(a, "mem-host"), SocketTransport(b, "mem-device")


def connect_tcp(host: str, port: int, timeout: float = 5.0) -> SocketTransport:
    sock = socket.create_connection((host, port), timeout=timeout)
    sock.settimeout(None)
    return SocketTransport(sock, f"tcp:{host}:{port}")


def listen_tcp(host: str, port: int) -> socket.socket:
    """Bound, listening server socket; caller accepts and wraps connections."""
    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    sock.bind((host, port))
    sock.listen(1)
    return sock


def _configure_tty(fd: int, baud: int) -> None:
    speed = _BAUD_CONSTANTS.get(baud)
    if speed is None:
        supported = ", ".join(str(b) for b in sorted(_BAUD_CONSTANTS))
        raise ValueError(f"unsupported baud {baud}; supported: {supported}")
    tty.setraw(fd)
    attrs = termios.tcgetattr(fd)
    attrs[4] = speed   # input speed
    attrs[5] = speed   # output speed
    termios.tcsetattr(fd, termios.TCSANOW, attrs)


def open_serial(path: str, baud: int = BAUD_RATE) -> FdTransport:
    """Open a serial device (or pty slave) in raw mode at the given baud."""
    fd = os.open(path, os.O_RDWR | os.O_NOCTTY)
    try:
        if os.isatty(fd):
            _configure_tty(fd, baud)
    except Exception:
        os.close(fd)
        raise
    return FdTransport(fd, f"serial:{path}")


def open_pty():
    """Create a pseudo-terminal; returns (master transport, slave path).

    The slave fd stays open inside the transport so reads on the master do
    not fail before an external client attaches.
    """
    import pty as _pty
    master, slave = _pty.openpty()
    tty.setraw(slave)
    slave_path = os.ttyname(slave)
    return FdTransport(master, f"pty:{slave_path}", extra_fds=[slave]), slave_path


# ----------------------------------------------------------------------
# endpoints
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class Endpoint:
    """Where the device lives: in-process simulator, TCP, or a serial port."""
    kind: str            # "sim" | "tcp" | "serial"
    target: str = ""
    port: int = 0

    def __str__(self):
        if self.kind == "sim":
            return "sim"
        if self.kind == "tcp":
            return f"tcp:{self.target}:{self.port}"
        return f"serial:{self.target}"


def parse_endpoint(text: str) -> Endpoint:
    """Parse 'sim', 'tcp:host:port', 'serial:/dev/...', or a bare device path."""
    if text == "sim":
        return Endpoint("sim")
    if text.startswith("tcp:"):
        host, sep, port_s = text[4:].rpartition(":")
        if not sep:
            host, port_s = "127.0.0.1", text[4:]
        try:
            port = int(port_s)
        except ValueError:
            raise ValueError(f"bad tcp endpoint {text!r}") from None
        return Endpoint("tcp", host or "127.0.0.1", port)
    if text.startswith("serial:"):
        return Endpoint("serial", text[len("serial:"):])
    if text.startswith("/"):
        return Endpoint("serial", text)
    raise ValueError(f"cannot parse endpoint {text!r} "
                     "(expected sim, tcp:host:port, or serial:/dev/...)")


def open_endpoint(endpoint: Endpoint, baud: int = BAUD_RATE):
    """Open a transport for a tcp or serial endpoint. 'sim' needs a device
    instance and is wired up by the caller."""
    if endpoint.kind == "tcp":
        return connect_tcp(endpoint.target, endpoint.port)
    if endpoint.kind == "serial":
        return open_serial(endpoint.target, baud)
    raise ValueError(f"cannot open endpoint kind {endpoint.kind!r} directly")


# ----------------------------------------------------------------------
# line splitting
# ----------------------------------------------------------------------

class LineBuffer:
    """Accumulates bytes and yields complete text lines (LF or CRLF)."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> list:
        self._buf += data
        lines = []
        while True:
            idx = self._buf.find(b"\n")
            if idx < 0:
                break
            raw = bytes(self._buf[:idx])
            del self._buf[:idx + 1]
            lines.append(raw.decode("utf-8", errors="replace").rstrip("\r"))
        return lines

    def pending(self) -> bytes:
        return bytes(self._buf)
