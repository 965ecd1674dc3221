"""Ranked domain lists and replayable measurement snapshots.

Snapshots are JSON Lines: the first line is a metadata record, then one
record per observation, with stable key order so identical inputs produce
identical files. Timestamps are RFC 3339 UTC.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Iterator, Optional

from .errors import (
    DuplicateDomain,
    DuplicateRank,
    MalformedRecord,
    ParseError,
    SchemaVersionMismatch,
)

SNAPSHOT_SCHEMA = "webdep-snapshot v1"

# probe outcome markers
YES = "yes"
NO = "no"
PROBE_FAILED = "probe-failed"

NS_OK = "ok"
NS_TIMEOUT = "timeout"
NS_SERVFAIL = "servfail"
NS_NXDOMAIN = "nxdomain"

_LABEL_RE = re.compile(r"^[a-z0-9_]([a-z0-9_-]{0,61}[a-z0-9_])?$", re.IGNORECASE)


def rfc3339_now() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def valid_hostname(domain: str) -> bool:
    if not domain or len(domain) > 253:
        return False
    return all(_LABEL_RE.match(label) for label in domain.rstrip(".").split("."))


@dataclass(frozen=True)
class DomainListEntry:
    rank: int
    domain: str


def load_domain_list(path) -> list[DomainListEntry]:
    """Parse a two-column `rank,domain` CSV into an ascending-rank list."""
    entries = []
    seen_domains = {}
    last_rank = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise ParseError(f"expected 'rank,domain', got {line!r}", path=path, line=lineno)
            rank_text, domain = parts[0].strip(), parts[1].strip().lower().rstrip(".")
            try:
                rank = int(rank_text)
            except ValueError:
                raise ParseError(f"bad rank {rank_text!r}", path=path, line=lineno) from None
            if rank < 1:
                raise ParseError(f"rank must be positive, got {rank}", path=path, line=lineno)
            if rank == last_rank:
                raise DuplicateRank(f"rank {rank} repeated", path=path, line=lineno)
            if rank < last_rank:
                raise ParseError(f"ranks must increase, got {rank} after {last_rank}", path=path, line=lineno)
            if not valid_hostname(domain):
                raise ParseError(f"invalid hostname {domain!r}", path=path, line=lineno)
            if domain in seen_domains:
                raise DuplicateDomain(
                    f"domain {domain!r} already listed at line {seen_domains[domain]}",
                    path=path, line=lineno,
                )
            seen_domains[domain] = lineno
            last_rank = rank
            entries.append(DomainListEntry(rank, domain))
    return entries


@dataclass
class CnameChainObs:
    host: str
    targets: list[str] = field(default_factory=list)
    note: str = ""

    def to_record(self):
        return {"host": self.host, "targets": list(self.targets), "note": self.note}

    @classmethod
    def from_record(cls, rec):
        return cls(host=rec["host"], targets=list(rec["targets"]), note=rec.get("note", ""))

    def nodes(self):
        """All names on the chain, origin host first."""
        return [self.host] + list(self.targets)


@dataclass
class CdnEvidence:
    chains: list[CnameChainObs] = field(default_factory=list)
    headers: list[tuple[str, str]] = field(default_factory=list)
    fetch_status: str = "ok"  # ok | failed | skipped
    note: str = ""

    def to_record(self):
        return {
            "chains": [c.to_record() for c in self.chains],
            "headers": [[n, v] for n, v in self.headers],
            "fetch_status": self.fetch_status,
            "note": self.note,
        }

    @classmethod
    def from_record(cls, rec):
        return cls(
            chains=[CnameChainObs.from_record(c) for c in rec["chains"]],
            headers=[(n, v) for n, v in rec["headers"]],
            fetch_status=rec["fetch_status"],
            note=rec.get("note", ""),
        )


@dataclass
class WebsiteObservation:
    domain: str
    rank: int
    nameservers: list[str] = field(default_factory=list)
    ns_status: str = NS_OK
    https_supported: str = PROBE_FAILED
    https_note: str = ""
    ocsp_urls: list[str] = field(default_factory=list)
    crl_urls: list[str] = field(default_factory=list)
    issuer_name: str = ""
    leaf_fingerprint: str = ""
    stapling: str = ""  # unset unless https_supported == yes
    cdn_evidence: CdnEvidence = field(default_factory=CdnEvidence)
    probe_timestamps: dict[str, str] = field(default_factory=dict)

    def validate(self):
        if self.https_supported != YES:
            if self.ocsp_urls or self.crl_urls or self.stapling:
                raise MalformedRecord(
                    f"{self.domain}: certificate fields set without https support"
                )

    def to_record(self):
        return {
            "record": "website",
            "domain": self.domain,
            "rank": self.rank,
            "nameservers": list(self.nameservers),
            "ns_status": self.ns_status,
            "https_supported": self.https_supported,
            "https_note": self.https_note,
            "ocsp_urls": list(self.ocsp_urls),
            "crl_urls": list(self.crl_urls),
            "issuer_name": self.issuer_name,
            "leaf_fingerprint": self.leaf_fingerprint,
            "stapling": self.stapling,
            "cdn_evidence": self.cdn_evidence.to_record(),
            "probe_timestamps": dict(self.probe_timestamps),
        }

    @classmethod
    def from_record(cls, rec):
        return cls(
            domain=rec["domain"],
            rank=rec["rank"],
            nameservers=list(rec["nameservers"]),
            ns_status=rec["ns_status"],
            https_supported=rec["https_supported"],
            https_note=rec.get("https_note", ""),
            ocsp_urls=list(rec["ocsp_urls"]),
            crl_urls=list(rec["crl_urls"]),
            issuer_name=rec.get("issuer_name", ""),
            leaf_fingerprint=rec.get("leaf_fingerprint", ""),
            stapling=rec["stapling"],
            cdn_evidence=CdnEvidence.from_record(rec["cdn_evidence"]),
            probe_timestamps=dict(rec["probe_timestamps"]),
        )


@dataclass
class ProviderObservation:
    provider_name: str
    provider_type: str  # CdnProvider | OcspProvider
    probed_host: str
    nameservers: list[str] = field(default_factory=list)
    ns_status: str = NS_OK
    cdn_evidence: Optional[CdnEvidence] = None

    def validate(self):
        if self.provider_type not in ("CdnProvider", "OcspProvider"):
            raise MalformedRecord(
                f"provider {self.provider_name}: type {self.provider_type!r} not allowed"
            )

    def to_record(self):
        return {
            "record": "provider",
            "provider_name": self.provider_name,
            "provider_type": self.provider_type,
            "probed_host": self.probed_host,
            "nameservers": list(self.nameservers),
            "ns_status": self.ns_status,
            "cdn_evidence": self.cdn_evidence.to_record() if self.cdn_evidence else None,
        }

    @classmethod
    def from_record(cls, rec):
        evidence = rec.get("cdn_evidence")
        return cls(
            provider_name=rec["provider_name"],
            provider_type=rec["provider_type"],
            probed_host=rec["probed_host"],
            nameservers=list(rec["nameservers"]),
            ns_status=rec["ns_status"],
            cdn_evidence=CdnEvidence.from_record(evidence) if evidence else None,
        )


@dataclass
class Snapshot:
    schema_version: str = SNAPSHOT_SCHEMA
    created_at: str = ""
    vantage_note: str = ""
    website_observations: list[WebsiteObservation] = field(default_factory=list)
    provider_observations: list[ProviderObservation] = field(default_factory=list)

    def validate(self):
        if self.schema_version != SNAPSHOT_SCHEMA:
            raise SchemaVersionMismatch(
                f"snapshot schema {self.schema_version!r}, reader supports {SNAPSHOT_SCHEMA!r}"
            )
        domains = set()
        for obs in self.website_observations:
            if obs.domain in domains:
                raise DuplicateDomain(f"domain {obs.domain!r} appears twice")
            domains.add(obs.domain)
            obs.validate()
        provider_keys = set()
        for obs in self.provider_observations:
            key = (obs.provider_name, obs.provider_type)
            if key in provider_keys:
                raise DuplicateDomain(f"provider {key} appears twice")
            provider_keys.add(key)
            obs.validate()

    def websites_by_domain(self) -> dict[str, WebsiteObservation]:
        return {obs.domain: obs for obs in self.website_observations}


def _dump(rec) -> str:
    return json.dumps(rec, sort_keys=True, separators=(",", ":"))


def save_snapshot(snapshot: Snapshot, path) -> None:
    snapshot.validate()
    with open(path, "w", encoding="utf-8", newline="") as fh:
        meta = {
            "record": "meta",
            "schema_version": snapshot.schema_version,
            "created_at": snapshot.created_at,
            "vantage_note": snapshot.vantage_note,
        }
        fh.write(_dump(meta) + "\n")
        for obs in snapshot.website_observations:
            fh.write(_dump(obs.to_record()) + "\n")
        for obs in snapshot.provider_observations:
            fh.write(_dump(obs.to_record()) + "\n")


def iter_snapshot_records(path) -> Iterator[dict]:
    """Stream raw records line by line; validates the metadata header."""
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(f"bad JSON: {exc}", path=path, line=lineno) from None
            if not isinstance(rec, dict) or "record" not in rec:
                raise MalformedRecord("record object missing 'record' field", path=path, line=lineno)
            if lineno == 1:
                if rec["record"] != "meta":
                    raise MalformedRecord("first record must be metadata", path=path, line=lineno)
                if rec.get("schema_version") != SNAPSHOT_SCHEMA:
                    raise SchemaVersionMismatch(
                        f"snapshot schema {rec.get('schema_version')!r}, "
                        f"reader supports {SNAPSHOT_SCHEMA!r}",
                        path=path, line=lineno,
                    )
            yield rec


def load_snapshot(path) -> Snapshot:
    snapshot = Snapshot()
    got_meta = False
    for lineno, rec in enumerate(iter_snapshot_records(path), start=1):
        kind = rec["record"]
        try:
            if kind == "meta":
                snapshot.schema_version = rec["schema_version"]
                snapshot.created_at = rec["created_at"]
                snapshot.vantage_note = rec["vantage_note"]
                got_meta = True
            elif kind == "website":
                snapshot.website_observations.append(WebsiteObservation.from_record(rec))
            elif kind == "provider":
                snapshot.provider_observations.append(ProviderObservation.from_record(rec))
            else:
                raise MalformedRecord(f"unknown record kind {kind!r}", path=path, line=lineno)
        except (KeyError, TypeError) as exc:
            raise MalformedRecord(f"missing or bad field: {exc}", path=path, line=lineno) from None
    if not got_meta:
        raise MalformedRecord("empty snapshot file", path=path, line=1)
    snapshot.validate()
    return snapshot
