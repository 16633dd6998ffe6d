"""User-agent string analysis.

Token extraction from the wild, unstandardized user-agent grammar, lookup
against a local product/version-range vulnerability database, and the
vulnerability ratio b = V / (V + V_bar) with its windowed time series.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

DEFAULT_WINDOW_SECONDS = 900.0

# Name/Version product tokens, e.g. "AcmeBrowser/3.2.1"
_SLASH_TOKEN_RE = re.compile(r"^([A-Za-z][\w.+-]*)/(\d[\w.+-]*)$")
# Bare product names without a version, e.g. "SoloBrowser"
_BARE_TOKEN_RE = re.compile(r"^[A-Za-z][\w.+-]*$")
# Parenthesized fragments with a trailing version, e.g. "libfoo 1.2"
_PAREN_FRAGMENT_RE = re.compile(r"^(.*?[A-Za-z].*?)[\s/]+v?(\d[\d.]*)$")
_PAREN_RE = re.compile(r"\(([^)]*)\)")

ProductToken = tuple[str, str | None]


class Verdict(str, Enum):
    VULNERABLE = "vulnerable"
    NOT_VULNERABLE = "not_vulnerable"


class Reason(str, Enum):
    MATCHED_ENTRY = "matched_entry"
    MISSING_AGENT = "missing_agent"
    NO_VERSION = "no_version"
    NO_DB_MATCH = "no_db_match"


@dataclass(frozen=True)
class UaClassification:
    verdict: Verdict
    reason: Reason


@dataclass(frozen=True)
class UaRecord:
    """One observed user-agent string. raw is empty iff the header was absent."""

    raw: str
    first_seen: float
    product_tokens: tuple[ProductToken, ...]

    @classmethod
    def from_raw(cls, raw: str, first_seen: float) -> "UaRecord":
        return cls(raw=raw, first_seen=first_seen, product_tokens=parse_user_agent(raw))


def parse_user_agent(raw: str) -> tuple[ProductToken, ...]:
    """Extract ordered (name, version) product tokens from a user-agent string.

    Recognized shapes: Name/Version tokens and bare names anywhere in the
    string, plus parenthesized component lists split on ";" where a
    fragment carries a trailing dotted numeric version. Names are
    lowercased; fragments matching neither shape are dropped.
    """
    if not raw:
        return ()
    tokens: list[ProductToken] = []
    paren_groups = _PAREN_RE.findall(raw)
    outside = _PAREN_RE.sub(" ", raw)
    for piece in outside.split():
        slash = _SLASH_TOKEN_RE.match(piece)
        if slash:
            tokens.append((slash.group(1).lower(), slash.group(2)))
        elif _BARE_TOKEN_RE.match(piece):
            tokens.append((piece.lower(), None))
    for group in paren_groups:
        for fragment in group.split(";"):
            fragment = fragment.strip()
            if not fragment:
                continue
            match = _PAREN_FRAGMENT_RE.match(fragment)
            if match:
                name = " ".join(match.group(1).lower().split())
                tokens.append((name, match.group(2)))
    return tuple(tokens)


def _version_component(component: str) -> tuple[int, str]:
    match = re.match(r"(\d*)(.*)", component)
    digits = match.group(1)
    return (int(digits) if digits else 0, match.group(2))


def compare_versions(a: str, b: str) -> int:
    """Dotted version comparison: -1, 0, or 1.

    Component-wise; missing components count as 0; within a component the
    numeric prefix compares numerically and any remainder lexicographically.
    """
    parts_a = a.split(".")
    parts_b = b.split(".")
    for i in range(max(len(parts_a), len(parts_b))):
        ca = _version_component(parts_a[i]) if i < len(parts_a) else (0, "")
        cb = _version_component(parts_b[i]) if i < len(parts_b) else (0, "")
        if ca != cb:
            return -1 if ca < cb else 1
    return 0


@dataclass(frozen=True)
class VersionRange:
    """Closed interval over dotted versions; None means an open end."""

    min_version: str | None
    max_version: str | None

    def __post_init__(self):
        if self.min_version is not None and self.max_version is not None:
            if compare_versions(self.min_version, self.max_version) > 0:
                raise ValueError(
                    f"range min {self.min_version} exceeds max {self.max_version}"
                )

    def contains(self, version: str) -> bool:
        if self.min_version is not None and compare_versions(version, self.min_version) < 0:
            return False
        if self.max_version is not None and compare_versions(version, self.max_version) > 0:
            return False
        return True


@dataclass(frozen=True)
class VulnDb:
    """Local stand-in for a disclosed-vulnerability list: product name ranges."""

    entries: tuple[tuple[str, VersionRange], ...]

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, str | None, str | None]]) -> "VulnDb":
        entries = tuple(
            (product.lower(), VersionRange(lo, hi)) for product, lo, hi in pairs
        )
        return cls(entries=entries)

    def ranges_for(self, product: str) -> list[VersionRange]:
        lowered = product.lower()
        return [rng for name, rng in self.entries if name == lowered]

    @classmethod
    def load(cls, path: str) -> "VulnDb":
        pairs = []
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None:
                raise ValueError(f"{path}: empty vulnerability database")
            for row in reader:
                if not row or not any(cell.strip() for cell in row):
                    continue
                if len(row) != 3:
                    raise ValueError(f"{path}: expected 3 columns, got {len(row)}")
                product, lo, hi = (cell.strip() for cell in row)
                pairs.append((product, lo or None, hi or None))
        return cls.from_pairs(pairs)

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["product", "min_version", "max_version"])
            for product, rng in self.entries:
                writer.writerow([product, rng.min_version or "", rng.max_version or ""])


def classify(ua: UaRecord, db: VulnDb) -> UaClassification:
    """Verdict for one user-agent string.

    Missing header and versionless strings are assumed not vulnerable;
    otherwise any product token inside a database range makes the whole
    string vulnerable (attacker-optimistic: one match suffices).
    """
    if not ua.raw:
        return UaClassification(Verdict.NOT_VULNERABLE, Reason.MISSING_AGENT)
    versioned = [(name, ver) for name, ver in ua.product_tokens if ver is not None]
    if not versioned:
        return UaClassification(Verdict.NOT_VULNERABLE, Reason.NO_VERSION)
    for name, version in versioned:
        for rng in db.ranges_for(name):
            if rng.contains(version):
                return UaClassification(Verdict.VULNERABLE, Reason.MATCHED_ENTRY)
    return UaClassification(Verdict.NOT_VULNERABLE, Reason.NO_DB_MATCH)


class UndefinedRatioError(ZeroDivisionError):
    """Raised when the vulnerability ratio is requested over an empty population."""


def vulnerability_ratio(vulnerable: int, not_vulnerable: int) -> float:
    """b = V / (V + V_bar). Undefined (error) when the population is empty."""
    denominator = vulnerable + not_vulnerable
    if denominator <= 0:
        raise UndefinedRatioError("vulnerability ratio undefined for empty population")
    return vulnerable / denominator


@dataclass(frozen=True)
class RatioPoint:
    window_start: float
    vulnerable: int
    not_vulnerable: int
    ratio: float | None


@dataclass(frozen=True)
class RatioSeries:
    """Contiguous non-overlapping windows of per-window unique-UA counts."""

    window_seconds: float
    points: tuple[RatioPoint, ...]


def _window_starts(timestamps: Sequence[float], window_seconds: float) -> list[float]:
    first = min(timestamps)
    last = max(timestamps)
    start = (first // window_seconds) * window_seconds
    starts = []
    while start <= last:
        starts.append(start)
        start += window_seconds
    return starts


def ratio_series(
    records: Iterable[UaRecord],
    db: VulnDb,
    window_seconds: float = DEFAULT_WINDOW_SECONDS,
) -> RatioSeries:
    """Per-window vulnerable / not-vulnerable counts over unique raw strings.

    A raw string is counted once per window it is observed in; classification
    happens once per distinct string. Empty input yields an empty series.
    """
    if window_seconds <= 0:
        raise ValueError("window_seconds must be positive")
    records = list(records)
    if not records:
        return RatioSeries(window_seconds=window_seconds, points=())
    verdict_cache: dict[str, Verdict] = {}

    def verdict_of(record: UaRecord) -> Verdict:
        if record.raw not in verdict_cache:
            verdict_cache[record.raw] = classify(record, db).verdict
        return verdict_cache[record.raw]

    starts = _window_starts([r.first_seen for r in records], window_seconds)
    buckets: dict[float, set[str]] = {start: set() for start in starts}
    by_raw: dict[str, UaRecord] = {}
    for record in records:
        start = (record.first_seen // window_seconds) * window_seconds
        buckets[start].add(record.raw)
        by_raw.setdefault(record.raw, record)
    points = []
    for start in starts:
        vulnerable = 0
        not_vulnerable = 0
        for raw in buckets[start]:
            if verdict_of(by_raw[raw]) is Verdict.VULNERABLE:
                vulnerable += 1
            else:
                not_vulnerable += 1
        total = vulnerable + not_vulnerable
        ratio = vulnerable / total if total else None
        points.append(RatioPoint(start, vulnerable, not_vulnerable, ratio))
    return RatioSeries(window_seconds=window_seconds, points=tuple(points))


def unique_ua_growth(
    records: Iterable[UaRecord], window_seconds: float = DEFAULT_WINDOW_SECONDS
) -> list[tuple[float, int]]:
    """Cumulative distinct raw-string count at the end of each window."""
    if window_seconds <= 0:
        raise ValueError("window_seconds must be positive")
    records = sorted(records, key=lambda r: r.first_seen)
    if not records:
        return []
    starts = _window_starts([r.first_seen for r in records], window_seconds)
    seen: set[str] = set()
    growth = []
    index = 0
    for start in starts:
        end = start + window_seconds
        while index < len(records) and records[index].first_seen < end:
            seen.add(records[index].raw)
            index += 1
        growth.append((start, len(seen)))
    return growth


def read_ua_log(path: str) -> list[UaRecord]:
    """Line-delimited (timestamp, raw) observations, CSV with a header."""
    records = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        next(reader, None)
        for row in reader:
            if not row:
                continue
            records.append(UaRecord.from_raw(raw=row[1], first_seen=float(row[0])))
    return records


def write_ua_log(records: Iterable[UaRecord], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", "user_agent"])
        for record in records:
            writer.writerow([record.first_seen, record.raw])


def write_ratio_report(series: RatioSeries, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["window_start", "vulnerable", "not_vulnerable", "ratio"])
        for point in series.points:
            ratio = "" if point.ratio is None else f"{point.ratio:.6f}"
            writer.writerow([point.window_start, point.vulnerable, point.not_vulnerable, ratio])
