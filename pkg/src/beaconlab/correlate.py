"""Offline fusion of the three observation logs.

Takes the DNS query log, the beacon fetch (payload-server) log, and the
exchange log, plus the tag issue log, and recovers the headline
quantities: unique-user count from static-beacon lookups, reappearances
from repeat hits on unique dynamic subdomains, tag issue/hit accounting,
the media-type distribution, and the windowed vulnerability-ratio series.
Pure batch computation: rerunning over the same logs yields an identical
report, and ground-truth metadata in the logs is never consulted.
"""

from __future__ import annotations

import json
import os
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Sequence
from urllib.parse import urlsplit

from beaconlab.clientsim import FetchRecord, read_fetch_log
from beaconlab.dnssim import DnsQueryRecord, normalize_name, read_query_log
from beaconlab.httplog import (
    HttpExchange,
    MimeDistribution,
    mime_distribution,
    read_exchange_log,
)
from beaconlab.inject import DYNAMIC, STATIC, Tag, read_tag_log
from beaconlab.ua import (
    DEFAULT_WINDOW_SECONDS,
    RatioSeries,
    UaRecord,
    VulnDb,
    ratio_series,
    unique_ua_growth,
)


class MissingLogError(FileNotFoundError):
    """A required input log is absent; the message names which source."""

    def __init__(self, source: str, path: str):
        super().__init__(f"missing {source} log: {path}")
        self.source = source


@dataclass(frozen=True)
class Reappearance:
    subdomain: str
    hit_count: int
    timestamps: tuple[float, ...]


@dataclass(frozen=True)
class TagAccounting:
    static_issued: int
    dynamic_issued: int
    static_dns_hits: int
    dynamic_dns_hits: int
    static_object_hits: int
    dynamic_object_hits: int


@dataclass(frozen=True)
class CorrelationReport:
    unique_users: int
    reappearances: tuple[Reappearance, ...]
    static_dns_hits: int
    static_object_hits: int
    dynamic_tags_issued: int
    dynamic_dns_hits: int
    mime_distribution: MimeDistribution
    ratio_series: RatioSeries
    ua_growth: tuple[tuple[float, int], ...]
    anomalies: tuple[str, ...]  # in-zone hit labels never issued

    def to_json(self) -> dict:
        return {
            "unique_users": self.unique_users,
            "reappearances": [
                {
                    "subdomain": r.subdomain,
                    "hit_count": r.hit_count,
                    "timestamps": list(r.timestamps),
                }
                for r in self.reappearances
            ],
            "static_dns_hits": self.static_dns_hits,
            "static_object_hits": self.static_object_hits,
            "dynamic_tags_issued": self.dynamic_tags_issued,
            "dynamic_dns_hits": self.dynamic_dns_hits,
            "mime_distribution": {
                "counts": dict(sorted(self.mime_distribution.counts.items())),
                "total": self.mime_distribution.total,
            },
            "ratio_series": {
                "window_seconds": self.ratio_series.window_seconds,
                "points": [
                    [p.window_start, p.vulnerable, p.not_vulnerable, p.ratio]
                    for p in self.ratio_series.points
                ],
            },
            "ua_growth": [list(point) for point in self.ua_growth],
            "anomalies": list(self.anomalies),
        }


def _beacon_name(label: str, zone: str) -> str:
    return f"{label}.{normalize_name(zone)}"


def _label_of(name: str, zone: str) -> str | None:
    suffix = "." + normalize_name(zone)
    if name.endswith(suffix):
        return name[: -len(suffix)]
    return None


def count_unique_users(
    dns_log: Iterable[DnsQueryRecord], static_label: str, zone: str
) -> int:
    """Number of static-beacon lookups = one per browser lifetime.

    Counts raw query hits on the static name rather than distinct sources,
    so resolver aggregation cannot undercount lifetimes.
    """
    target = _beacon_name(static_label, zone)
    return sum(1 for record in dns_log if record.name == target)


def detect_reappearances(
    dns_log: Iterable[DnsQueryRecord],
    issued_dynamic: Iterable[str],
    static_label: str,
    zone: str,
) -> tuple[list[Reappearance], list[str]]:
    """Issued dynamic subdomains with >= 2 hits, plus anomalous labels.

    A second hit on a unique subdomain means the same user came back after
    a cache-clearing event. In-zone hits on labels that were never issued
    (and are not the static label or the apex) are reported separately.
    """
    issued = set(issued_dynamic)
    hits: dict[str, list[float]] = defaultdict(list)
    anomalies: set[str] = set()
    for record in dns_log:
        label = _label_of(record.name, zone)
        if label is None or label == static_label:
            continue
        if label in issued:
            hits[label].append(record.timestamp)
        else:
            anomalies.add(label)
    reappearances = [
        Reappearance(subdomain=label, hit_count=len(stamps), timestamps=tuple(sorted(stamps)))
        for label, stamps in hits.items()
        if len(stamps) >= 2
    ]
    reappearances.sort(key=lambda r: r.subdomain)
    return reappearances, sorted(anomalies)


def tag_accounting(
    tags: Sequence[Tag],
    dns_log: Iterable[DnsQueryRecord],
    fetch_log: Iterable[FetchRecord],
    static_label: str,
    zone: str,
) -> TagAccounting:
    """Issue and hit totals per tag kind, keyed by subdomain label."""
    issued_dynamic = {tag.subdomain for tag in tags if tag.kind == DYNAMIC}
    static_name = _beacon_name(static_label, zone)
    static_dns = 0
    dynamic_dns = 0
    for record in dns_log:
        if record.name == static_name:
            static_dns += 1
        else:
            label = _label_of(record.name, zone)
            if label in issued_dynamic:
                dynamic_dns += 1
    static_obj = 0
    dynamic_obj = 0
    for record in fetch_log:
        host = normalize_name(urlsplit(record.url).hostname or "")
        label = _label_of(host, zone)
        if label == static_label:
            static_obj += 1
        elif label in issued_dynamic:
            dynamic_obj += 1
    return TagAccounting(
        static_issued=sum(1 for tag in tags if tag.kind == STATIC),
        dynamic_issued=len(issued_dynamic),
        static_dns_hits=static_dns,
        dynamic_dns_hits=dynamic_dns,
        static_object_hits=static_obj,
        dynamic_object_hits=dynamic_obj,
    )


def ua_records_from_exchanges(exchanges: Iterable[HttpExchange]) -> list[UaRecord]:
    """Observable user-agent stream: one record per non-encrypted exchange,
    empty raw when the request carried no user-agent header."""
    records = []
    for exchange in exchanges:
        if exchange.is_encrypted:
            continue
        raw = exchange.header("user-agent", which="request") or ""
        records.append(UaRecord.from_raw(raw, exchange.timestamp))
    return records


def build_report(
    exchanges: Sequence[HttpExchange],
    tags: Sequence[Tag],
    dns_log: Sequence[DnsQueryRecord],
    fetch_log: Sequence[FetchRecord],
    db: VulnDb,
    static_label: str,
    zone: str,
    window_seconds: float = DEFAULT_WINDOW_SECONDS,
) -> CorrelationReport:
    """Fuse all sources into one report. All logs must share one epoch."""
    accounting = tag_accounting(tags, dns_log, fetch_log, static_label, zone)
    issued_dynamic = [tag.subdomain for tag in tags if tag.kind == DYNAMIC]
    reappearances, anomalies = detect_reappearances(dns_log, issued_dynamic, static_label, zone)
    ua_records = ua_records_from_exchanges(exchanges)
    return CorrelationReport(
        unique_users=count_unique_users(dns_log, static_label, zone),
        reappearances=tuple(reappearances),
        static_dns_hits=accounting.static_dns_hits,
        static_object_hits=accounting.static_object_hits,
        dynamic_tags_issued=accounting.dynamic_issued,
        dynamic_dns_hits=accounting.dynamic_dns_hits,
        mime_distribution=mime_distribution(exchanges),
        ratio_series=ratio_series(ua_records, db, window_seconds),
        ua_growth=tuple(unique_ua_growth(ua_records, window_seconds)),
        anomalies=tuple(anomalies),
    )


LOG_FILENAMES = {
    "exchange": "exchanges.jsonl",
    "tag": "tags.csv",
    "dns": "dns_queries.csv",
    "fetch": "fetches.csv",
}


def build_report_from_dir(
    log_dir: str,
    db: VulnDb,
    static_label: str,
    zone: str,
    window_seconds: float = DEFAULT_WINDOW_SECONDS,
) -> CorrelationReport:
    """Read the standard log layout from a directory and build the report.

    A missing file raises MissingLogError naming which source is absent.
    """
    paths = {}
    for source, filename in LOG_FILENAMES.items():
        path = os.path.join(log_dir, filename)
        if not os.path.exists(path):
            raise MissingLogError(source, path)
        paths[source] = path
    return build_report(
        exchanges=read_exchange_log(paths["exchange"]),
        tags=read_tag_log(paths["tag"]),
        dns_log=read_query_log(paths["dns"]),
        fetch_log=read_fetch_log(paths["fetch"]),
        db=db,
        static_label=static_label,
        zone=zone,
        window_seconds=window_seconds,
    )


def write_report(report: CorrelationReport, out_dir: str) -> None:
    """report.json plus comma-separated companions for plotting."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(report.to_json(), fh, indent=2)
        fh.write("\n")
    from beaconlab.ua import write_ratio_report

    write_ratio_report(report.ratio_series, os.path.join(out_dir, "ratio_series.csv"))
    with open(os.path.join(out_dir, "mime_distribution.csv"), "w", encoding="utf-8") as fh:
        fh.write("mime_type,count,percent\n")
        dist = report.mime_distribution
        for mime, count in sorted(dist.counts.items(), key=lambda kv: (-kv[1], kv[0])):
            fh.write(f"{mime},{count},{dist.percentage(mime):.2f}\n")
    with open(os.path.join(out_dir, "ua_growth.csv"), "w", encoding="utf-8") as fh:
        fh.write("window_start,cumulative_unique\n")
        for start, count in report.ua_growth:
            fh.write(f"{start},{count}\n")
