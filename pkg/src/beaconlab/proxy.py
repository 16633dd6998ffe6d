"""Intercepting HTTP proxy with a local control channel.

Relays explicit HTTP/1.1 proxy requests to their origin and, in active
mode, runs response bodies through the beacon injector before delivery;
passive mode observes and logs without altering anything. CONNECT tunnels
are relayed opaque and logged as encrypted exchanges. A line-oriented
control socket (STATUS / MODE PASSIVE / MODE ACTIVE / SNAPSHOT) stands in
for the operator's command channel.
"""

from __future__ import annotations

import csv
import http.client
import socket
import socketserver
import threading
import time
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import urlsplit

from beaconlab.httplog import ExchangeLogWriter, HttpExchange
from beaconlab.inject import DEFAULT_STATIC_LABEL, Injector, Tag

PASSIVE = "passive"
ACTIVE = "active"

_HOP_BY_HOP = {
    "connection",
    "proxy-connection",
    "keep-alive",
    "transfer-encoding",
    "te",
    "trailers",
    "upgrade",
}


class ProxyConfigError(ValueError):
    pass


@dataclass
class ProxyConfig:
    exchange_log_path: str
    tag_log_path: str
    error_log_path: str
    listen_host: str = "127.0.0.1"
    listen_port: int = 0
    control_host: str = "127.0.0.1"
    control_port: int = 0
    mode: str = PASSIVE
    zone: str = ""
    static_label: str = DEFAULT_STATIC_LABEL
    payload_address: str = ""
    seed: int = 0
    upstream_timeout: float = 15.0

    def validate(self) -> None:
        if self.mode not in (PASSIVE, ACTIVE):
            raise ProxyConfigError(f"unknown mode: {self.mode!r}")
        if self.mode == ACTIVE and not (self.zone and self.static_label and self.payload_address):
            raise ProxyConfigError("active mode requires zone, static_label, payload_address")


def parse_control_command(line: str) -> tuple[str, str | None]:
    """(verb, argument) for one control line; raises ValueError if malformed."""
    parts = line.strip().split()
    if not parts:
        raise ValueError("empty command")
    verb = parts[0].upper()
    if verb in ("STATUS", "SNAPSHOT"):
        if len(parts) != 1:
            raise ValueError(f"{verb} takes no argument")
        return verb, None
    if verb == "MODE":
        if len(parts) != 2 or parts[1].upper() not in ("PASSIVE", "ACTIVE"):
            raise ValueError("MODE requires PASSIVE or ACTIVE")
        return verb, parts[1].lower()
    raise ValueError(f"unknown command: {parts[0]}")


class _RelayHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    service: "ProxyService"  # bound per server instance

    def log_message(self, fmt, *args):  # silence stderr chatter
        pass

    def _forward(self):
        self.service.handle_request_socketless(self)

    do_GET = do_POST = do_HEAD = do_PUT = do_DELETE = do_OPTIONS = _forward

    def do_CONNECT(self):
        self.service.handle_connect(self)


class _ControlHandler(socketserver.StreamRequestHandler):
    def handle(self):
        service: ProxyService = self.server.service  # type: ignore[attr-defined]
        for raw in self.rfile:
            line = raw.decode("utf-8", errors="replace")
            if not line.strip():
                continue
            reply = service.handle_control_line(line)
            self.wfile.write((reply + "\n").encode("utf-8"))
            self.wfile.flush()


class ProxyService:
    """Runs the listen socket, the control socket, and the logs.

    The mode flag is read once per exchange, so a switch never applies to
    an exchange already past its injection decision. The injector and
    each log writer are single-writer behind one lock.
    """

    def __init__(self, config: ProxyConfig):
        config.validate()
        self.config = config
        self._mode = config.mode
        self._mode_lock = threading.Lock()
        self._log_lock = threading.Lock()
        self.injector = (
            Injector(zone=config.zone, static_label=config.static_label, seed=config.seed)
            if config.zone
            else None
        )
        self.exchange_log = ExchangeLogWriter(config.exchange_log_path)
        self._tag_fh = open(config.tag_log_path, "a", encoding="utf-8", newline="")
        self._tag_writer = csv.writer(self._tag_fh)
        if self._tag_fh.tell() == 0:
            self._tag_writer.writerow(["kind", "subdomain", "url", "exchange_id", "injected_at"])
            self._tag_fh.flush()
        self._error_fh = open(config.error_log_path, "a", encoding="utf-8")
        self.exchanges_handled = 0
        self.tags_injected = 0
        self._exchange_seq = 0
        handler = type("BoundRelayHandler", (_RelayHandler,), {"service": self})
        self._http_server = ThreadingHTTPServer(
            (config.listen_host, config.listen_port), handler
        )
        self._control_server = socketserver.ThreadingTCPServer(
            (config.control_host, config.control_port), _ControlHandler
        )
        self._control_server.daemon_threads = True
        self._control_server.service = self  # type: ignore[attr-defined]
        self._threads: list[threading.Thread] = []

    # -- lifecycle ----------------------------------------------------------

    @property
    def listen_address(self) -> tuple[str, int]:
        return self._http_server.server_address[:2]

    @property
    def control_address(self) -> tuple[str, int]:
        return self._control_server.server_address[:2]

    def start(self) -> None:
        for server in (self._http_server, self._control_server):
            thread = threading.Thread(target=server.serve_forever, daemon=True)
            thread.start()
            self._threads.append(thread)

    def stop(self) -> None:
        self._http_server.shutdown()
        self._control_server.shutdown()
        self._http_server.server_close()
        self._control_server.server_close()
        for thread in self._threads:
            thread.join(timeout=5)
        with self._log_lock:
            self.exchange_log.close()
            self._tag_fh.close()
            self._error_fh.close()

    # -- mode / control ------------------------------------------------------

    def current_mode(self) -> str:
        with self._mode_lock:
            return self._mode

    def set_mode(self, mode: str) -> None:
        if mode == ACTIVE and self.injector is None:
            raise ProxyConfigError("active mode requires an injector zone")
        with self._mode_lock:
            self._mode = mode

    def handle_control_line(self, line: str) -> str:
        try:
            verb, argument = parse_control_command(line)
        except ValueError as exc:
            return f"ERR {exc}"
        if verb == "STATUS":
            return (
                f"OK mode={self.current_mode().upper()} "
                f"exchanges={self.exchanges_handled} tags={self.tags_injected}"
            )
        if verb == "MODE":
            try:
                self.set_mode(argument)
            except ProxyConfigError as exc:
                return f"ERR {exc}"
            return f"OK mode={argument.upper()}"
        # SNAPSHOT: flush everything and report file positions
        with self._log_lock:
            self._tag_fh.flush()
            self._error_fh.flush()
            exchange_bytes = self.exchange_log.tell()
            tag_bytes = self._tag_fh.tell()
        return f"OK exchange_log_bytes={exchange_bytes} tag_log_bytes={tag_bytes}"

    # -- exchange handling ----------------------------------------------------

    def process_response(self, exchange: HttpExchange, mode: str) -> tuple[HttpExchange, list[Tag]]:
        """Injection decision for one exchange under an already-read mode."""
        if mode == ACTIVE and self.injector is not None:
            with self._log_lock:
                return self.injector.inject(exchange)
        return exchange, []

    def _log_exchange(self, exchange: HttpExchange, tags: list[Tag]) -> None:
        with self._log_lock:
            self.exchange_log.append(exchange)
            for tag in tags:
                self._tag_writer.writerow(
                    [tag.kind, tag.subdomain, tag.url, tag.exchange_id, tag.injected_at]
                )
            if tags:
                self._tag_fh.flush()
            self.exchanges_handled += 1
            self.tags_injected += len(tags)

    def _log_error(self, message: str) -> None:
        with self._log_lock:
            self._error_fh.write(f"{time.time():.3f} {message}\n")
            self._error_fh.flush()

    def _next_ids(self) -> tuple[str, str]:
        with self._log_lock:
            seq = self._exchange_seq
            self._exchange_seq += 1
        return f"x{seq:08d}", f"fl{seq:08d}"

    def handle_request_socketless(self, handler: BaseHTTPRequestHandler) -> None:
        """Relay one absolute-URI proxy request and deliver the response."""
        url = handler.path
        parts = urlsplit(url)
        if parts.scheme != "http" or not parts.hostname:
            handler.send_error(400, "proxy requires absolute http URLs")
            return
        length = int(handler.headers.get("Content-Length") or 0)
        request_body = handler.rfile.read(length) if length else b""
        request_headers = tuple(
            (name, value)
            for name, value in handler.headers.items()
            if name.lower() not in _HOP_BY_HOP
        )
        selector = parts.path or "/"
        if parts.query:
            selector += "?" + parts.query
        try:
            conn = http.client.HTTPConnection(
                parts.hostname, parts.port or 80, timeout=self.config.upstream_timeout
            )
            upstream_headers = {
                name: value
                for name, value in request_headers
                if name.lower() not in ("host", "content-length")
            }
            conn.request(handler.command, selector, body=request_body or None,
                         headers=upstream_headers)
            upstream = conn.getresponse()
            body = upstream.read()
            status = upstream.status
            response_headers = tuple(
                (name, value)
                for name, value in upstream.getheaders()
                if name.lower() not in _HOP_BY_HOP | {"content-length"}
            ) + (("Content-Length", str(len(body))),)
            conn.close()
        except OSError as exc:
            self._log_error(f"upstream {parts.hostname}: {exc}")
            handler.send_error(502, "upstream unreachable")
            return
        exchange_id, flow_id = self._next_ids()
        exchange = HttpExchange(
            exchange_id=exchange_id,
            timestamp=time.time(),
            flow_id=flow_id,
            method=handler.command,
            url=url,
            request_headers=request_headers,
            response_status=status,
            response_headers=response_headers,
            response_body=body,
            is_encrypted=False,
        )
        mode = self.current_mode()
        delivered, tags = self.process_response(exchange, mode)
        self._log_exchange(delivered, tags)
        handler.send_response_only(delivered.response_status)
        for name, value in delivered.response_headers:
            handler.send_header(name, value)
        handler.end_headers()
        if handler.command != "HEAD":
            handler.wfile.write(delivered.response_body)
        handler.wfile.flush()

    def handle_connect(self, handler: BaseHTTPRequestHandler) -> None:
        """Opaque tunnel: logged as an encrypted exchange, never rewritten."""
        target = handler.path
        host, _, port = target.partition(":")
        try:
            upstream = socket.create_connection(
                (host, int(port or 443)), timeout=self.config.upstream_timeout
            )
        except OSError as exc:
            self._log_error(f"connect {target}: {exc}")
            handler.send_error(502, "upstream unreachable")
            return
        exchange_id, flow_id = self._next_ids()
        self._log_exchange(
            HttpExchange(
                exchange_id=exchange_id,
                timestamp=time.time(),
                flow_id=flow_id,
                method="CONNECT",
                url=f"https://{target}",
                request_headers=(),
                response_status=200,
                response_headers=(),
                response_body=b"",
                is_encrypted=True,
            ),
            [],
        )
        handler.send_response_only(200, "Connection Established")
        handler.end_headers()
        handler.wfile.flush()
        client = handler.connection

        def pump(src: socket.socket, dst: socket.socket) -> None:
            try:
                while True:
                    chunk = src.recv(65536)
                    if not chunk:
                        break
                    dst.sendall(chunk)
            except OSError:
                pass
            finally:
                try:
                    dst.shutdown(socket.SHUT_WR)
                except OSError:
                    pass

        downstream = threading.Thread(target=pump, args=(upstream, client), daemon=True)
        downstream.start()
        pump(client, upstream)
        downstream.join(timeout=self.config.upstream_timeout)
        upstream.close()
        handler.close_connection = True
