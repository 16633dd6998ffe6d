#!/usr/bin/env python3
"""Live loopback demo: origin server + active proxy + wildcard DNS.

Starts all three services on ephemeral loopback ports, fetches one page
through the proxy as a scripted client would, resolves both beacon names
against the DNS responder, and prints what each vantage point saw.
"""

import re
import socket
import sys
import tempfile
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.request import ProxyHandler, build_opener

from beaconlab import dnssim
from beaconlab.proxy import ProxyConfig, ProxyService

PAGE = b"<html><head><title>demo</title></head><body><h1>demo page</h1></body></html>"


class _Origin(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):
        pass

    def do_GET(self):
        self.send_response(200)
        self.send_header("Content-Type", "text/html")
        self.send_header("Content-Length", str(len(PAGE)))
        self.end_headers()
        self.wfile.write(PAGE)


def main() -> int:
    origin = ThreadingHTTPServer(("127.0.0.1", 0), _Origin)
    threading.Thread(target=origin.serve_forever, daemon=True).start()

    responder = dnssim.DnsResponder(
        dnssim.ZoneConfig(zone="tracker.test", payload_address="127.0.0.1", ttl_seconds=60),
        port=0,
    )
    responder.start()

    workdir = tempfile.mkdtemp(prefix="loopback_demo_")
    service = ProxyService(
        ProxyConfig(
            exchange_log_path=f"{workdir}/exchanges.jsonl",
            tag_log_path=f"{workdir}/tags.csv",
            error_log_path=f"{workdir}/errors.log",
            mode="active",
            zone="tracker.test",
            static_label="pixel",
            payload_address="127.0.0.1",
        )
    )
    service.start()

    try:
        proxy_url = f"http://{service.listen_address[0]}:{service.listen_address[1]}"
        opener = build_opener(ProxyHandler({"http": proxy_url}))
        url = f"http://{origin.server_address[0]}:{origin.server_address[1]}/demo"
        delivered = opener.open(url, timeout=5).read()
        print(f"origin page ({len(PAGE)} bytes) -> delivered ({len(delivered)} bytes)")
        print(delivered.decode())
        names = [m.decode() for m in re.findall(rb'<img src="http://([a-z0-9.-]+)/', delivered)]
        print(f"\nbeacon names in delivered page: {names}")
        for txid, name in enumerate(names, start=1):
            with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as sock:
                sock.settimeout(5)
                sock.sendto(dnssim.encode_query(txid, name), responder.address)
                reply, _ = sock.recvfrom(4096)
            print(f"  {name} -> {dnssim.parse_answer_address(reply)}")
        print("\nDNS query log:")
        for record in responder.resolver.log:
            print(f"  {record.timestamp:.3f} {record.source} {record.name}")
        print(f"\nproxy logs in {workdir}")
    finally:
        service.stop()
        responder.stop()
        origin.shutdown()
        origin.server_close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
