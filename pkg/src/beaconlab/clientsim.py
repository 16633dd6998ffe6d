"""Deterministic seeded simulator of a browser population.

Generates the traffic crossing the interception point: per-client page
visits with a configurable media-type mix and HTTPS share, beacon fetches
with client-side DNS and object caching, and scripted restarts that clear
caches and reload the cached start page (which is how a previously issued
unique subdomain gets a second lookup). Everything is reproducible from
(config, seed), and the ground-truth file records what the correlator is
later expected to recover.
"""

from __future__ import annotations

import csv
import json
import random
import re
from dataclasses import dataclass, field, asdict
from typing import Iterable
from urllib.parse import urlsplit

from beaconlab.dnssim import DnsQueryRecord, WildcardResolver, ZoneConfig, is_valid_name, normalize_name
from beaconlab.httplog import HttpExchange
from beaconlab.inject import DEFAULT_STATIC_LABEL, Injector, Tag

HOME_PAGE_URL = "http://home.example/start"

# Media-type mix measured on real intercepted traffic; the residual
# "others" bucket is folded into application/octet-stream so the mix sums
# to exactly 1.
MEASURED_MIME_MIX = {
    "text/html": 0.33,
    "image/jpeg": 0.24,
    "image/gif": 0.16,
    "image/png": 0.06,
    "text/plain": 0.05,
    "application/x-javascript": 0.04,
    "text/css": 0.03,
    "text/javascript": 0.03,
    "text/xml": 0.02,
    "application/octet-stream": 0.04,
}

_IMG_SRC_RE = re.compile(rb'<img src="(http://[^"]+)"')


class ConfigError(ValueError):
    """Invalid scenario configuration, rejected before any generation."""


@dataclass(frozen=True)
class UaSpec:
    """One population entry: the raw string, draw weight, ground-truth flag."""

    user_agent: str
    weight: float = 1.0
    vulnerable: bool = False


@dataclass(frozen=True)
class ClientProfile:
    client_id: str
    user_agent: str
    fetches_objects: bool
    uses_https_share: float
    restart_schedule: tuple[float, ...]
    home_page: str = HOME_PAGE_URL


@dataclass
class ScenarioConfig:
    seed: int = 1
    client_count: int = 50
    duration_seconds: float = 3600.0
    visit_rate: float = 0.01  # visits per second per client, beyond the start visit
    mime_mix: dict = field(default_factory=lambda: dict(MEASURED_MIME_MIX))
    http_share: float = 0.96
    ua_population: list = field(default_factory=list)
    non_fetching_share: float = 0.0
    restart_count: int = 0
    zone: str = "feedback.test"
    payload_address: str = "192.0.2.10"
    static_label: str = DEFAULT_STATIC_LABEL

    def validate(self) -> None:
        if self.client_count < 0:
            raise ConfigError("client_count must be >= 0")
        if self.duration_seconds < 0:
            raise ConfigError("duration_seconds must be >= 0")
        if self.visit_rate < 0:
            raise ConfigError("visit_rate must be >= 0")
        if not 0.0 <= self.http_share <= 1.0:
            raise ConfigError("http_share must lie in [0, 1]")
        if not 0.0 <= self.non_fetching_share <= 1.0:
            raise ConfigError("non_fetching_share must lie in [0, 1]")
        if self.restart_count < 0:
            raise ConfigError("restart_count must be >= 0")
        if abs(sum(self.mime_mix.values()) - 1.0) > 1e-6:
            raise ConfigError("mime_mix must sum to 1")
        if any(w < 0 for w in self.mime_mix.values()):
            raise ConfigError("mime_mix weights must be >= 0")
        if not is_valid_name(normalize_name(self.zone)):
            raise ConfigError(f"invalid zone: {self.zone!r}")
        if not self.ua_population and self.client_count > 0:
            raise ConfigError("ua_population must not be empty")
        if any(spec.weight < 0 for spec in self.ua_population):
            raise ConfigError("ua_population weights must be >= 0")

    def to_json(self) -> dict:
        obj = asdict(self)
        obj["ua_population"] = [asdict(spec) for spec in self.ua_population]
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "ScenarioConfig":
        data = dict(obj)
        data["ua_population"] = [UaSpec(**spec) for spec in data.get("ua_population", [])]
        return cls(**data)

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path: str) -> "ScenarioConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


@dataclass(frozen=True)
class FetchRecord:
    """One beacon object hit at the payload server."""

    timestamp: float
    source: str
    url: str


def write_fetch_log(records: Iterable[FetchRecord], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", "source", "url"])
        for record in records:
            writer.writerow([record.timestamp, record.source, record.url])


def read_fetch_log(path: str) -> list[FetchRecord]:
    records = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        next(reader, None)
        for row in reader:
            if not row:
                continue
            records.append(FetchRecord(timestamp=float(row[0]), source=row[1], url=row[2]))
    return records


class _ClientState:
    """Runtime browser state: caches are cleared at restart, the cached
    copy of the start page survives (it is what gets reloaded)."""

    def __init__(self, profile: ClientProfile, source: str):
        self.profile = profile
        self.source = source
        self.dns_cache: set[str] = set()
        self.object_cache: set[str] = set()
        self.cached_home_body: bytes | None = None
        self.home_dynamic_subdomain: str | None = None
        self.lifetimes = 1

    def restart(self) -> None:
        self.dns_cache.clear()
        self.object_cache.clear()
        self.lifetimes += 1


def beacon_urls(body: bytes, zone: str) -> list[str]:
    """Attacker-zone image URLs embedded in an HTML body, in order."""
    suffix = "." + normalize_name(zone)
    urls = []
    for match in _IMG_SRC_RE.finditer(body):
        url = match.group(1).decode("ascii", errors="replace")
        host = urlsplit(url).hostname or ""
        if normalize_name(host).endswith(suffix):
            urls.append(url)
    return urls


def client_process_response(
    state: _ClientState,
    body: bytes,
    now: float,
    resolver: WildcardResolver,
    fetch_log: list[FetchRecord],
    zone: str,
) -> tuple[list[str], list[str]]:
    """Resolve and fetch the beacon objects a browser would pull from a page.

    A name already in the client's DNS cache is not queried again; an URL
    already in the object cache is not fetched again. Returns (names
    queried, urls fetched). Clients configured to not download external
    objects never reach this point.
    """
    queried: list[str] = []
    fetched: list[str] = []
    for url in beacon_urls(body, zone):
        host = normalize_name(urlsplit(url).hostname or "")
        if host not in state.dns_cache:
            resolver.resolve(host, state.source, now)
            state.dns_cache.add(host)
            queried.append(host)
        if url not in state.object_cache:
            fetch_log.append(FetchRecord(timestamp=now, source=state.source, url=url))
            state.object_cache.add(url)
            fetched.append(url)
    return queried, fetched


@dataclass
class SimulationResult:
    exchanges: list[HttpExchange]
    tags: list[Tag]
    dns_log: list[DnsQueryRecord]
    fetch_log: list[FetchRecord]
    ground_truth: dict
    config: ScenarioConfig


def _client_visits(
    rng: random.Random, config: ScenarioConfig
) -> list[tuple[float, bool, str | None]]:
    """Visit plan for one client: (time, encrypted, mime or None).

    The first visit (the start page) must be plain-HTTP HTML for the
    feedback model to apply, so flags are swapped with a later visit
    rather than redrawn, keeping the overall marginals at the configured
    mix.
    """
    times = [0.0]
    if config.visit_rate > 0:
        t = 0.0
        while True:
            t += rng.expovariate(config.visit_rate)
            if t >= config.duration_seconds:
                break
            times.append(t)
    mimes = list(config.mime_mix.keys())
    weights = list(config.mime_mix.values())
    encrypted = [rng.random() >= config.http_share for _ in times]
    chosen = [rng.choices(mimes, weights=weights)[0] if not enc else None
              for enc in encrypted]
    if encrypted[0]:
        for j in range(1, len(times)):
            if not encrypted[j]:
                encrypted[0], encrypted[j] = encrypted[j], encrypted[0]
                chosen[0], chosen[j] = chosen[j], chosen[0]
                break
        else:
            encrypted[0] = False
            chosen[0] = rng.choices(mimes, weights=weights)[0]
    if chosen[0] != "text/html":
        for j in range(1, len(times)):
            if chosen[j] == "text/html":
                chosen[0], chosen[j] = chosen[j], chosen[0]
                break
        else:
            chosen[0] = "text/html"
    return list(zip(times, encrypted, chosen))


def _html_body(rng: random.Random) -> bytes:
    filler = "".join(rng.choices("abcdefghij nopqrs", k=rng.randrange(40, 400)))
    return (
        "<html><head><title>page</title></head>"
        f"<body><h1>doc</h1><p>{filler}</p></body></html>"
    ).encode("utf-8")


def _placeholder_body(rng: random.Random) -> bytes:
    return bytes(rng.randrange(256) for _ in range(rng.randrange(16, 128)))


def run_scenario(config: ScenarioConfig) -> SimulationResult:
    """Run one scenario end to end through an active injector.

    Deterministic for a fixed config: identical runs produce identical
    logs. Every delivered exchange carries ground_truth_client, which is
    oracle-only metadata.
    """
    config.validate()
    rng = random.Random(config.seed)
    injector = Injector(zone=config.zone, static_label=config.static_label, seed=config.seed)
    resolver = WildcardResolver(
        ZoneConfig(zone=config.zone, payload_address=config.payload_address, ttl_seconds=0)
    )
    fetch_log: list[FetchRecord] = []
    exchanges: list[HttpExchange] = []

    specs = config.ua_population
    weights = [spec.weight for spec in specs]
    non_fetching = round(config.client_count * config.non_fetching_share)
    non_fetching_ids = set(rng.sample(range(config.client_count), non_fetching))
    fetching_ids = [i for i in range(config.client_count) if i not in non_fetching_ids]
    # one restart per client, clamped so degenerate populations still run
    restarted = rng.sample(fetching_ids, min(config.restart_count, len(fetching_ids)))
    restart_times = {
        i: (rng.uniform(0.3, 0.9) * config.duration_seconds,) for i in restarted
    }

    clients: list[_ClientState] = []
    events: list[tuple[float, int, int, str, object]] = []
    taggable_delivered = 0
    for i in range(config.client_count):
        spec = rng.choices(specs, weights=weights)[0] if specs else UaSpec("")
        profile = ClientProfile(
            client_id=f"c{i:05d}",
            user_agent=spec.user_agent,
            fetches_objects=i not in non_fetching_ids,
            uses_https_share=1.0 - config.http_share,
            restart_schedule=restart_times.get(i, ()),
        )
        state = _ClientState(profile, source=f"10.{(i >> 8) & 0xFF}.{i & 0xFF}.1")
        clients.append(state)
        visit_rng = random.Random(rng.randrange(2**62))
        for seq, (t, enc, mime) in enumerate(_client_visits(visit_rng, config)):
            events.append((t, i, seq, "visit", (enc, mime)))
        for t in profile.restart_schedule:
            events.append((t, i, 10**9, "restart", None))
    events.sort(key=lambda e: (e[0], e[1], e[2]))

    body_rng = random.Random(config.seed ^ 0x5EED)
    exchange_seq = 0
    for t, i, _seq, kind, payload in events:
        state = clients[i]
        if kind == "restart":
            state.restart()
            if state.profile.fetches_objects and state.cached_home_body is not None:
                client_process_response(
                    state, state.cached_home_body, t, resolver, fetch_log, config.zone
                )
            continue
        enc, mime = payload
        is_home = _seq == 0
        exchange_id = f"x{exchange_seq:08d}"
        flow_id = f"fl{exchange_seq:08d}"
        exchange_seq += 1
        if enc:
            origin = HttpExchange(
                exchange_id=exchange_id,
                timestamp=t,
                flow_id=flow_id,
                method="CONNECT",
                url=f"https://site{body_rng.randrange(40)}.example:443",
                request_headers=(),
                response_status=200,
                response_headers=(),
                response_body=b"",
                is_encrypted=True,
                ground_truth_client=state.profile.client_id,
            )
            exchanges.append(origin)
            continue
        url = (
            state.profile.home_page
            if is_home
            else f"http://site{body_rng.randrange(40)}.example/p{body_rng.randrange(500)}"
        )
        if mime == "text/html":
            body = _html_body(body_rng)
            content_type = "text/html; charset=utf-8"
        else:
            body = _placeholder_body(body_rng)
            content_type = mime
        request_headers = [("Host", urlsplit(url).hostname or "")]
        if state.profile.user_agent:
            request_headers.append(("User-Agent", state.profile.user_agent))
        origin = HttpExchange(
            exchange_id=exchange_id,
            timestamp=t,
            flow_id=flow_id,
            method="GET",
            url=url,
            request_headers=tuple(request_headers),
            response_status=200,
            response_headers=(
                ("Content-Type", content_type),
                ("Content-Length", str(len(body))),
            ),
            response_body=body,
            is_encrypted=False,
            ground_truth_client=state.profile.client_id,
        )
        if injector.is_taggable(origin):
            taggable_delivered += 1
        delivered, tags = injector.inject(origin)
        exchanges.append(delivered)
        if is_home and state.cached_home_body is None:
            state.cached_home_body = delivered.response_body
            for tag in tags:
                if tag.kind == "dynamic":
                    state.home_dynamic_subdomain = tag.subdomain
        if state.profile.fetches_objects:
            client_process_response(
                state, delivered.response_body, t, resolver, fetch_log, config.zone
            )

    fetching = [c for c in clients if c.profile.fetches_objects]
    ground_truth = {
        "unique_user_lifetimes": sum(c.lifetimes for c in fetching),
        "reappearance_subdomains": sorted(
            clients[i].home_dynamic_subdomain
            for i in restarted
            if clients[i].home_dynamic_subdomain is not None
        ),
        "taggable_responses": taggable_delivered,
        "total_exchanges": len(exchanges),
        "clients": [
            {
                "client_id": c.profile.client_id,
                "source": c.source,
                "user_agent": c.profile.user_agent,
                "fetches_objects": c.profile.fetches_objects,
                "restart_times": list(c.profile.restart_schedule),
                "home_dynamic_subdomain": c.home_dynamic_subdomain,
            }
            for c in clients
        ],
    }
    return SimulationResult(
        exchanges=exchanges,
        tags=list(injector.issued),
        dns_log=list(resolver.log),
        fetch_log=fetch_log,
        ground_truth=ground_truth,
        config=config,
    )


def calibrated_vuln_db():
    """Fixture vulnerability database matching the calibrated population."""
    from beaconlab.ua import VulnDb

    return VulnDb.from_pairs(
        [
            ("acmebrowser", "3.0", "3.9999"),
            ("legacyview", "1.0", "2.5"),
            ("oldengine", "500.0", "540.5"),
        ]
    )


def calibrated_ua_population(count: int) -> list[UaSpec]:
    """Population with the measured category proportions: roughly 62.5%
    matching the fixture database, 3.2% missing agent, 1.3% versionless,
    remainder versioned but unknown to the database."""
    n_missing = round(0.032 * count)
    n_noversion = round(0.013 * count)
    n_vuln = round(0.625 * count)
    n_nomatch = max(count - n_missing - n_noversion - n_vuln, 0)
    population = []
    for i in range(n_vuln):
        population.append(
            UaSpec(
                f"AcmeBrowser/3.{i % 900} (DeskOS {i % 7}.{i % 10}; renderkit {1 + i % 4}.{i % 9})",
                vulnerable=True,
            )
        )
    for i in range(n_nomatch):
        population.append(UaSpec(f"FreshBrowser/9.{i} (DeskOS; netlib 2.{i % 20})"))
    for i in range(n_noversion):
        population.append(UaSpec(f"PlainFetch{i}"))
    for _ in range(n_missing):
        population.append(UaSpec(""))
    return population


def calibrated_config(
    seed: int = 1,
    client_count: int = 200,
    duration_seconds: float = 3600.0,
    visit_rate: float = 0.01,
    non_fetching_share: float = 0.1,
    restart_count: int = 5,
) -> ScenarioConfig:
    """Scenario calibrated to the measured traffic mix and UA categories."""
    return ScenarioConfig(
        seed=seed,
        client_count=client_count,
        duration_seconds=duration_seconds,
        visit_rate=visit_rate,
        mime_mix=dict(MEASURED_MIME_MIX),
        http_share=0.96,
        ua_population=calibrated_ua_population(max(client_count, 40)),
        non_fetching_share=non_fetching_share,
        restart_count=restart_count,
    )
