"""Turn raw observations into provider identities and third-party verdicts.

Grouping is by registered domain with a curated alias table. Verdicts come
from curated lists first, then heuristics (customer-count thresholds for DNS
and OCSP, indicator matches for CDNs). Unknown providers are excluded from
the graph and surface on the candidates list for manual curation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from urllib.parse import urlsplit

from .errors import MalformedOcspUrl, UnparsableHostname
from .ingest import CdnEvidence, CnameChainObs, Snapshot
from .model import ServiceType
from .psl import SuffixRules

THIRD_PARTY = "third-party"
PRIVATE = "private"
UNKNOWN = "unknown"


@dataclass(frozen=True)
class HeaderPattern:
    name: str  # exact header name, case-insensitive
    value_substring: str  # case-insensitive substring; empty matches any value


@dataclass(frozen=True)
class CdnIndicator:
    label: str
    cname_patterns: tuple[str, ...] = ()
    header_patterns: tuple[HeaderPattern, ...] = ()


@dataclass
class ClassificationConfig:
    dns_tps_threshold: int = 100
    curated_dns_tps: set[str] = field(default_factory=set)
    curated_dns_private: set[str] = field(default_factory=set)
    cdn_indicators: list[CdnIndicator] = field(default_factory=list)
    curated_cdn_tps: set[str] = field(default_factory=set)
    curated_cdn_private: set[str] = field(default_factory=set)
    ocsp_min_distinct_customers: int = 2
    curated_ocsp_tps: set[str] = field(default_factory=set)
    curated_ocsp_private: set[str] = field(default_factory=set)
    aliases: dict[str, str] = field(default_factory=dict)  # alias label -> canonical label
    public_suffix_rules: SuffixRules = field(default_factory=SuffixRules.builtin)

    def __post_init__(self):
        if self.dns_tps_threshold < 1 or self.ocsp_min_distinct_customers < 1:
            raise ValueError("thresholds must be >= 1")
        for tps, private, kind in (
            (self.curated_dns_tps, self.curated_dns_private, "dns"),
            (self.curated_cdn_tps, self.curated_cdn_private, "cdn"),
            (self.curated_ocsp_tps, self.curated_ocsp_private, "ocsp"),
        ):
            overlap = tps & private
            if overlap:
                raise ValueError(f"{kind} curated lists overlap: {sorted(overlap)}")

    @classmethod
    def load(cls, config_dir) -> "ClassificationConfig":
        """Read a config directory; missing files fall back to empty defaults.

        Layout: dns_tps.txt, dns_private.txt, cdn_tps.txt, cdn_private.txt,
        ocsp_tps.txt, ocsp_private.txt (lines of `label [alias ...]`),
        cdn_indicators.json, thresholds.json, public_suffix.dat.
        """
        config_dir = Path(config_dir)
        aliases: dict[str, str] = {}

        def curated(filename):
            labels = set()
            path = config_dir / filename
            if not path.exists():
                return labels
            for raw in path.read_text("utf-8").splitlines():
                line = raw.split("#")[0].strip()
                if not line:
                    continue
                parts = line.lower().split()
                labels.add(parts[0])
                for alias in parts[1:]:
                    aliases[alias] = parts[0]
            return labels

        kwargs = {
            "curated_dns_tps": curated("dns_tps.txt"),
            "curated_dns_private": curated("dns_private.txt"),
            "curated_cdn_tps": curated("cdn_tps.txt"),
            "curated_cdn_private": curated("cdn_private.txt"),
            "curated_ocsp_tps": curated("ocsp_tps.txt"),
            "curated_ocsp_private": curated("ocsp_private.txt"),
        }

        indicators_path = config_dir / "cdn_indicators.json"
        indicators = []
        if indicators_path.exists():
            for entry in json.loads(indicators_path.read_text("utf-8")):
                indicators.append(CdnIndicator(
                    label=entry["label"],
                    cname_patterns=tuple(entry.get("cname_patterns", [])),
                    header_patterns=tuple(
                        HeaderPattern(p["name"], p.get("value_substring", ""))
                        for p in entry.get("header_patterns", [])
                    ),
                ))

        thresholds_path = config_dir / "thresholds.json"
        thresholds = {}
        if thresholds_path.exists():
            thresholds = json.loads(thresholds_path.read_text("utf-8"))

        suffix_path = config_dir / "public_suffix.dat"
        rules = SuffixRules.load(suffix_path) if suffix_path.exists() else SuffixRules.builtin()

        return cls(
            dns_tps_threshold=int(thresholds.get("dns_tps_threshold", 100)),
            ocsp_min_distinct_customers=int(thresholds.get("ocsp_min_distinct_customers", 2)),
            cdn_indicators=indicators,
            aliases=aliases,
            public_suffix_rules=rules,
            **kwargs,
        )

    @classmethod
    def default(cls) -> "ClassificationConfig":
        from importlib import resources
        with resources.as_file(resources.files("webdep.data").joinpath("default_config")) as path:
            return cls.load(path)


@dataclass
class ProviderVerdict:
    provider_type: str  # ServiceType value
    label: str
    verdict: str  # third-party | private | unknown
    evidence: str
    customer_count: int = 0


@dataclass
class Candidate:
    provider_type: str
    label: str
    customer_count: int


@dataclass
class ClassificationResult:
    providers: dict[tuple[str, str], ProviderVerdict] = field(default_factory=dict)
    ns_provider: dict[str, str] = field(default_factory=dict)
    website_cdn_labels: dict[str, tuple[str, ...]] = field(default_factory=dict)
    ocsp_url_label: dict[str, str] = field(default_factory=dict)
    malformed_ocsp_urls: set[str] = field(default_factory=set)
    provider_cdn_labels: dict[tuple[str, str], tuple[str, ...]] = field(default_factory=dict)
    candidates: list[Candidate] = field(default_factory=list)

    def merge(self, other: "ClassificationResult") -> None:
        self.providers.update(other.providers)
        self.ns_provider.update(other.ns_provider)
        self.website_cdn_labels.update(other.website_cdn_labels)
        self.ocsp_url_label.update(other.ocsp_url_label)
        self.malformed_ocsp_urls.update(other.malformed_ocsp_urls)
        self.provider_cdn_labels.update(other.provider_cdn_labels)
        self.candidates.extend(other.candidates)


def provider_of_nameserver(ns_hostname: str, config: ClassificationConfig) -> str:
    """Provider label for a nameserver host: registered domain, then aliases."""
    label = config.public_suffix_rules.registered_domain(ns_hostname)
    return config.aliases.get(label, label)


def _verdict(label, curated_tps, curated_private):
    if label in curated_tps:
        return THIRD_PARTY, "curated third-party list"
    if label in curated_private:
        return PRIVATE, "curated private list"
    return UNKNOWN, ""


def classify_dns_providers(snapshot: Snapshot, config: ClassificationConfig) -> ClassificationResult:
    """Group nameservers into providers, count distinct website customers,
    apply curated verdicts, and emit over-threshold unknowns as candidates."""
    result = ClassificationResult()
    customers: dict[str, set[str]] = {}
    all_ns: set[str] = set()
    for obs in snapshot.website_observations:
        for ns in obs.nameservers:
            host = ns.lower().rstrip(".")
            all_ns.add(host)
            try:
                label = provider_of_nameserver(host, config)
            except UnparsableHostname:
                continue
            customers.setdefault(label, set()).add(obs.domain)
    for obs in snapshot.provider_observations:
        for ns in obs.nameservers:
            all_ns.add(ns.lower().rstrip("."))

    for host in sorted(all_ns):
        try:
            label = provider_of_nameserver(host, config)
        except UnparsableHostname:
            label = host  # keep the raw host as its own label
        result.ns_provider[host] = label
        count = len(customers.get(label, ()))
        verdict, why = _verdict(label, config.curated_dns_tps, config.curated_dns_private)
        if verdict == UNKNOWN:
            why = f"serves {count} websites; threshold {config.dns_tps_threshold}"
        result.providers[(ServiceType.DNS.value, label)] = ProviderVerdict(
            ServiceType.DNS.value, label, verdict, why, count)

    for key, verdict in sorted(result.providers.items()):
        if verdict.verdict == UNKNOWN and verdict.customer_count >= config.dns_tps_threshold:
            result.candidates.append(Candidate(verdict.provider_type, verdict.label,
                                               verdict.customer_count))
    return result


def classify_cdn(cdn_evidence: CdnEvidence, config: ClassificationConfig) -> list[str]:
    """CDN labels whose CNAME or header indicators match the evidence."""
    labels = []
    chain_nodes = [node.lower() for chain in cdn_evidence.chains for node in chain.nodes()]
    headers = [(n.lower(), v.lower()) for n, v in cdn_evidence.headers]
    for indicator in config.cdn_indicators:
        matched = any(pattern.lower() in node
                      for pattern in indicator.cname_patterns for node in chain_nodes)
        if not matched:
            for hp in indicator.header_patterns:
                want_name = hp.name.lower()
                want_value = hp.value_substring.lower()
                if any(n == want_name and want_value in v for n, v in headers):
                    matched = True
                    break
        if matched and indicator.label not in labels:
            labels.append(indicator.label)
    return sorted(labels)


def _ocsp_label(url: str, config: ClassificationConfig) -> str:
    split = urlsplit(url)
    host = (split.hostname or "").lower().rstrip(".")
    if split.scheme not in ("http", "https") or not host:
        raise MalformedOcspUrl(f"not a usable OCSP URL: {url!r}")
    try:
        label = config.public_suffix_rules.registered_domain(host)
    except UnparsableHostname as exc:
        raise MalformedOcspUrl(str(exc)) from exc
    return config.aliases.get(label, label)


def classify_ocsp_providers(snapshot: Snapshot, config: ClassificationConfig) -> ClassificationResult:
    """Label OCSP responders by registered domain; third-party when curated or
    serving at least the configured number of distinct website domains."""
    result = ClassificationResult()
    rules = config.public_suffix_rules
    customers: dict[str, set[str]] = {}
    for obs in snapshot.website_observations:
        try:
            site_domain = rules.registered_domain(obs.domain)
        except UnparsableHostname:
            site_domain = obs.domain
        for url in obs.ocsp_urls:
            try:
                label = _ocsp_label(url, config)
            except MalformedOcspUrl:
                result.malformed_ocsp_urls.add(url)
                continue
            result.ocsp_url_label[url] = label
            customers.setdefault(label, set()).add(site_domain)
    for obs in snapshot.provider_observations:
        if obs.provider_type == ServiceType.OCSP.value:
            customers.setdefault(obs.provider_name, set())

    for label in sorted(customers):
        count = len(customers[label])
        verdict, why = _verdict(label, config.curated_ocsp_tps, config.curated_ocsp_private)
        if verdict == UNKNOWN:
            if count >= config.ocsp_min_distinct_customers:
                verdict = THIRD_PARTY
                why = f"serves {count} distinct website domains"
            else:
                why = f"serves {count} distinct website domains; threshold {config.ocsp_min_distinct_customers}"
        result.providers[(ServiceType.OCSP.value, label)] = ProviderVerdict(
            ServiceType.OCSP.value, label, verdict, why, count)
    return result


def _classify_cdn_usage(snapshot: Snapshot, config: ClassificationConfig) -> ClassificationResult:
    result = ClassificationResult()
    customers: dict[str, set[str]] = {}
    for obs in snapshot.website_observations:
        labels = classify_cdn(obs.cdn_evidence, config)
        result.website_cdn_labels[obs.domain] = tuple(labels)
        for label in labels:
            customers.setdefault(label, set()).add(obs.domain)

    for obs in snapshot.provider_observations:
        key = (obs.provider_type, obs.provider_name)
        if obs.provider_type == ServiceType.CDN.value:
            # match indicators against the probed host itself
            pseudo = CdnEvidence(chains=[CnameChainObs(host=obs.probed_host)], headers=[])
            result.provider_cdn_labels[key] = tuple(classify_cdn(pseudo, config))
        elif obs.provider_type == ServiceType.OCSP.value and obs.cdn_evidence is not None:
            result.provider_cdn_labels[key] = tuple(classify_cdn(obs.cdn_evidence, config))

    labels_seen = set()
    for labels in result.website_cdn_labels.values():
        labels_seen.update(labels)
    for labels in result.provider_cdn_labels.values():
        labels_seen.update(labels)
    for label in sorted(labels_seen):
        count = len(customers.get(label, ()))
        verdict, why = _verdict(label, config.curated_cdn_tps, config.curated_cdn_private)
        if verdict == UNKNOWN:
            why = f"indicator match; serves {count} websites; not curated"
        result.providers[(ServiceType.CDN.value, label)] = ProviderVerdict(
            ServiceType.CDN.value, label, verdict, why, count)
    return result


def classify_snapshot(snapshot: Snapshot, config: ClassificationConfig) -> ClassificationResult:
    """Full classification covering every provider name the snapshot references."""
    result = classify_dns_providers(snapshot, config)
    result.merge(_classify_cdn_usage(snapshot, config))
    result.merge(classify_ocsp_providers(snapshot, config))
    result.candidates.sort(key=lambda c: (c.provider_type, -c.customer_count, c.label))
    return result
