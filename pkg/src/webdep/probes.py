"""Active measurements: NS records, HTTPS support, certificate revocation
URLs, OCSP stapling, and CDN evidence (CNAME chains + response headers).

All probes run through a Transport, so a recorded transcript replays the
whole scan offline. Raw evidence only; provider naming and third-party
verdicts happen in the classify module.
"""

from __future__ import annotations

import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from html.parser import HTMLParser
from urllib.parse import urljoin, urlsplit

from cryptography import x509
from cryptography.hazmat.primitives import hashes
from cryptography.x509.oid import AuthorityInformationAccessOID, ExtensionOID

from . import dnswire, tlswire
from .errors import (
    CertificateParseError,
    CnameLoop,
    DnsParseError,
    DnsServfail,
    DnsTimeout,
    FetchFailure,
    Nxdomain,
    TlsHandshakeFailure,
)
from .ingest import (
    NO,
    NS_NXDOMAIN,
    NS_OK,
    NS_SERVFAIL,
    NS_TIMEOUT,
    PROBE_FAILED,
    YES,
    CdnEvidence,
    CnameChainObs,
    DomainListEntry,
    ProviderObservation,
    Snapshot,
    WebsiteObservation,
    valid_hostname,
)
from .psl import SuffixRules
from .transport import LiveTransport, RecordingTransport, ReplayTransport, Transcript


@dataclass
class ProbeConfig:
    recursive_resolver: str = "8.8.8.8"  # configurable; a public recursive resolver
    dns_timeout: float = 5.0
    tcp_timeout: float = 5.0
    http_timeout: float = 10.0
    max_inflight: int = 16
    per_host_min_interval: float = 0.05
    max_cname_chain: int = 8
    max_landing_links: int = 50
    max_redirects: int = 5
    user_agent: str = "webdep-scanner/0.1"
    vantage_note: str = ""
    suffix_rules: SuffixRules = field(default_factory=SuffixRules.builtin)

    def __post_init__(self):
        if min(self.dns_timeout, self.tcp_timeout, self.http_timeout) <= 0:
            raise ValueError("timeouts must be positive")
        if self.max_inflight < 1:
            raise ValueError("max_inflight must be >= 1")
        if self.max_cname_chain < 1 or self.max_landing_links < 1:
            raise ValueError("probe limits must be >= 1")


def _dns_exchange(qname, qtype, config, transport):
    desc = {"server": config.recursive_resolver, "qname": qname.lower().rstrip("."), "qtype": qtype}
    payload, error = transport.perform("dns", desc)
    if payload is None:
        raise DnsTimeout(f"{qtype} {qname}: {error or 'no answer'}")
    try:
        msg = dnswire.parse_message(payload)
    except DnsParseError as exc:
        raise DnsServfail(f"{qtype} {qname}: unparsable answer ({exc})") from exc
    if msg.rcode == dnswire.RCODE_NXDOMAIN:
        raise Nxdomain(f"{qtype} {qname}: NXDOMAIN")
    if msg.rcode == dnswire.RCODE_SERVFAIL:
        raise DnsServfail(f"{qtype} {qname}: SERVFAIL")
    if msg.rcode != dnswire.RCODE_NOERROR:
        raise DnsServfail(f"{qtype} {qname}: rcode {msg.rcode}")
    return msg


def probe_ns(domain: str, config: ProbeConfig, transport) -> list[str]:
    """Nameserver hostnames for the domain: lower-cased, deduplicated, sorted."""
    if not valid_hostname(domain):
        raise DnsParseError(f"invalid hostname {domain!r}")
    msg = _dns_exchange(domain, "NS", config, transport)
    return sorted(set(dnswire.answer_targets(msg, dnswire.TYPE_NS)))


def probe_https(domain: str, config: ProbeConfig, transport) -> tuple[str, str]:
    """Tri-state HTTPS support plus a diagnostic note."""
    payload, _error = transport.perform("tcp", {"host": domain, "port": 443})
    outcome = (payload or b"").decode("ascii", "replace")
    if outcome == "refused":
        return NO, "connection-refused"
    if outcome != "connected":
        return PROBE_FAILED, outcome or "no-outcome"
    flight_bytes, error = transport.perform("tls", {"host": domain, "port": 443})
    if flight_bytes is None:
        return PROBE_FAILED, error or "no-bytes"
    try:
        flight = tlswire.parse_server_flight(flight_bytes, partial_ok=True)
    except tlswire.TlsParseError:
        return NO, "not-tls"
    if flight.server_version is not None:
        return YES, ""
    if flight.alert is not None:
        return NO, f"tls-alert:{flight.alert[0]}.{flight.alert[1]}"
    return NO, "not-tls"


@dataclass
class CertInfo:
    ocsp_urls: list[str] = field(default_factory=list)
    crl_urls: list[str] = field(default_factory=list)
    issuer_name: str = ""
    leaf_fingerprint: str = ""


def _flight_or_raise(domain, config, transport) -> tlswire.ServerFlight:
    flight_bytes, error = transport.perform("tls", {"host": domain, "port": 443})
    if flight_bytes is None:
        raise TlsHandshakeFailure(f"{domain}: {error or 'no bytes'}")
    try:
        flight = tlswire.parse_server_flight(flight_bytes, partial_ok=True)
    except tlswire.TlsParseError as exc:
        raise TlsHandshakeFailure(f"{domain}: {exc}") from exc
    if flight.alert is not None:
        raise TlsHandshakeFailure(f"{domain}: alert {flight.alert[0]}.{flight.alert[1]}")
    if flight.server_version is None:
        raise TlsHandshakeFailure(f"{domain}: no ServerHello")
    return flight


def probe_certificate(domain: str, config: ProbeConfig, transport) -> CertInfo:
    """OCSP and CRL URLs from the leaf certificate's AIA and CDP extensions."""
    flight = _flight_or_raise(domain, config, transport)
    if not flight.certificates:
        raise TlsHandshakeFailure(f"{domain}: no certificate message")
    return extract_cert_info(flight.certificates[0])


def extract_cert_info(leaf_der: bytes) -> CertInfo:
    try:
        cert = x509.load_der_x509_certificate(leaf_der)
    except Exception as exc:
        raise CertificateParseError(f"undecodable leaf certificate: {exc}") from exc
    info = CertInfo(issuer_name=cert.issuer.rfc4514_string(),
                    leaf_fingerprint=cert.fingerprint(hashes.SHA256()).hex())
    try:
        aia = cert.extensions.get_extension_for_oid(ExtensionOID.AUTHORITY_INFORMATION_ACCESS)
        for access in aia.value:
            if access.access_method == AuthorityInformationAccessOID.OCSP and isinstance(
                    access.access_location, x509.UniformResourceIdentifier):
                info.ocsp_urls.append(access.access_location.value)
    except x509.ExtensionNotFound:
        pass
    try:
        cdp = cert.extensions.get_extension_for_oid(ExtensionOID.CRL_DISTRIBUTION_POINTS)
        for point in cdp.value:
            for name in point.full_name or []:
                if isinstance(name, x509.UniformResourceIdentifier):
                    info.crl_urls.append(name.value)
    except x509.ExtensionNotFound:
        pass
    return info


def probe_stapling(domain: str, config: ProbeConfig, transport) -> tuple[str, str]:
    """Whether the server staples an OCSP response when status is requested."""
    try:
        flight = _flight_or_raise(domain, config, transport)
    except TlsHandshakeFailure as exc:
        return PROBE_FAILED, str(exc)
    if flight.stapled_ocsp is not None:
        return YES, ""
    return NO, ""


def resolve_cname_chain(host: str, config: ProbeConfig, transport) -> CnameChainObs:
    """Follow CNAME records hop by hop; raises CnameLoop on a repeated name."""
    obs = CnameChainObs(host=host.lower().rstrip("."))
    seen = {obs.host}
    current = obs.host
    for _hop in range(config.max_cname_chain):
        try:
            msg = _dns_exchange(current, "CNAME", config, transport)
        except Nxdomain:
            break
        except (DnsTimeout, DnsServfail) as exc:
            obs.note = f"dns:{exc.__class__.__name__}"
            break
        targets = [r.target.lower().rstrip(".") for r in msg.answers
                   if r.rtype == dnswire.TYPE_CNAME and r.name.lower().rstrip(".") == current]
        if not targets:
            break
        target = targets[0]
        if target in seen:
            obs.note = "cname-loop"
            raise CnameLoop(obs.host, obs.targets)
        seen.add(target)
        obs.targets.append(target)
        current = target
    else:
        obs.note = "max-chain-length"
    return obs


class _LinkExtractor(HTMLParser):
    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.urls: list[str] = []

    def handle_starttag(self, tag, attrs):
        for name, value in attrs:
            if name in ("href", "src") and value:
                self.urls.append(value)


_REDIRECT_CODES = {301, 302, 303, 307, 308}


def parse_http_response(data: bytes):
    """Split raw response bytes into (status, headers, body); decodes chunked bodies."""
    head, sep, body = data.partition(b"\r\n\r\n")
    if not sep:
        head, sep, body = data.partition(b"\n\n")
    lines = head.decode("latin-1", "replace").splitlines()
    if not lines or not lines[0].startswith("HTTP/"):
        raise FetchFailure("not an HTTP response")
    parts = lines[0].split(None, 2)
    try:
        status = int(parts[1])
    except (IndexError, ValueError):
        raise FetchFailure(f"bad status line {lines[0]!r}") from None
    headers = []
    for line in lines[1:]:
        name, colon, value = line.partition(":")
        if colon:
            headers.append((name.strip(), value.strip()))
    if any(n.lower() == "transfer-encoding" and "chunked" in v.lower() for n, v in headers):
        body = _dechunk(body)
    return status, headers, body


def _dechunk(body: bytes) -> bytes:
    out = bytearray()
    pos = 0
    while pos < len(body):
        line_end = body.find(b"\r\n", pos)
        if line_end < 0:
            break
        size_text = body[pos:line_end].split(b";")[0].strip()
        try:
            size = int(size_text, 16)
        except ValueError:
            break
        if size == 0:
            break
        start = line_end + 2
        out.extend(body[start:start + size])
        pos = start + size + 2
    return bytes(out)


def _header_value(headers, name):
    for n, v in headers:
        if n.lower() == name.lower():
            return v
    return None


def fetch_landing(domain: str, config: ProbeConfig, transport):
    """GET the landing page, following same-registered-domain redirects.

    Returns (final_url, accumulated header pairs, body, note). Raises
    FetchFailure when the initial request yields nothing usable.
    """
    rules = config.suffix_rules
    try:
        home_domain = rules.registered_domain(domain)
    except Exception:
        home_domain = domain
    url = f"http://{domain}/"
    headers_all: list[tuple[str, str]] = []
    note = ""
    body = b""
    for hop in range(config.max_redirects + 1):
        payload, error = transport.perform("http", {"url": url})
        if payload is None:
            if hop == 0:
                raise FetchFailure(f"GET {url}: {error or 'no response'}")
            note = f"redirect-fetch-failed:{error}"
            break
        try:
            status, headers, body = parse_http_response(payload)
        except FetchFailure:
            if hop == 0:
                raise
            note = "redirect-bad-response"
            break
        headers_all.extend(headers)
        if status not in _REDIRECT_CODES:
            break
        location = _header_value(headers, "location")
        if not location:
            break
        target = urljoin(url, location)
        split = urlsplit(target)
        if split.scheme not in ("http", "https") or not split.hostname:
            note = f"unfollowable-redirect:{location}"
            break
        try:
            target_domain = rules.registered_domain(split.hostname)
        except Exception:
            target_domain = split.hostname
        if target_domain != home_domain:
            note = f"cross-domain-redirect:{target}"
            break
        url = target
    else:
        note = "too-many-redirects"
    return url, headers_all, body, note


def extract_link_hosts(body: bytes, final_url: str, home_domain: str, config: ProbeConfig) -> list[str]:
    """Hostnames referenced by the page that share the landing registered domain."""
    parser = _LinkExtractor()
    try:
        parser.feed(body.decode("utf-8", "replace"))
    except Exception:
        return []
    hosts: list[str] = []
    for raw in parser.urls:
        resolved = urljoin(final_url, raw.strip())
        split = urlsplit(resolved)
        if split.scheme not in ("http", "https") or not split.hostname:
            continue
        host = split.hostname.lower().rstrip(".")
        try:
            if config.suffix_rules.registered_domain(host) != home_domain:
                continue
        except Exception:
            continue
        if host not in hosts:
            hosts.append(host)
            if len(hosts) >= config.max_landing_links:
                break
    return hosts


def probe_cdn(domain: str, config: ProbeConfig, transport) -> CdnEvidence:
    """Raw CDN evidence: landing-fetch headers plus CNAME chains for the
    landing host and same-domain asset hosts. Failures leave partial evidence."""
    evidence = CdnEvidence()
    try:
        home_domain = config.suffix_rules.registered_domain(domain)
    except Exception:
        home_domain = domain
    hosts = [domain.lower().rstrip(".")]
    try:
        final_url, headers, body, note = fetch_landing(domain, config, transport)
        evidence.headers = headers
        evidence.note = note
        landing_host = (urlsplit(final_url).hostname or domain).lower().rstrip(".")
        if landing_host not in hosts:
            hosts = [landing_host]
        for host in extract_link_hosts(body, final_url, home_domain, config):
            if host not in hosts:
                hosts.append(host)
    except FetchFailure as exc:
        evidence.fetch_status = "failed"
        evidence.note = str(exc)
    for host in hosts:
        try:
            evidence.chains.append(resolve_cname_chain(host, config, transport))
        except CnameLoop as exc:
            evidence.chains.append(CnameChainObs(host=host, targets=exc.chain, note="cname-loop"))
    return evidence


# --- scan orchestration ---

def _ns_probe_outcome(domain, config, transport):
    try:
        return probe_ns(domain, config, transport), NS_OK
    except Nxdomain:
        return [], NS_NXDOMAIN
    except (DnsServfail, DnsParseError):
        return [], NS_SERVFAIL
    except DnsTimeout:
        return [], NS_TIMEOUT


def _scan_website(entry: DomainListEntry, config: ProbeConfig, transport) -> WebsiteObservation:
    obs = WebsiteObservation(domain=entry.domain, rank=entry.rank)
    obs.nameservers, obs.ns_status = _ns_probe_outcome(entry.domain, config, transport)
    obs.probe_timestamps["ns"] = transport.timestamp()

    obs.https_supported, obs.https_note = probe_https(entry.domain, config, transport)
    obs.probe_timestamps["https"] = transport.timestamp()

    if obs.https_supported == YES:
        try:
            info = probe_certificate(entry.domain, config, transport)
            obs.ocsp_urls = info.ocsp_urls
            obs.crl_urls = info.crl_urls
            obs.issuer_name = info.issuer_name
            obs.leaf_fingerprint = info.leaf_fingerprint
        except (TlsHandshakeFailure, CertificateParseError) as exc:
            obs.https_note = (obs.https_note + " " if obs.https_note else "") + f"cert:{exc}"
        obs.probe_timestamps["certificate"] = transport.timestamp()
        obs.stapling, stapling_note = probe_stapling(entry.domain, config, transport)
        if stapling_note:
            obs.https_note = (obs.https_note + " " if obs.https_note else "") + f"staple:{stapling_note}"
        obs.probe_timestamps["stapling"] = transport.timestamp()

    obs.cdn_evidence = probe_cdn(entry.domain, config, transport)
    obs.probe_timestamps["cdn"] = transport.timestamp()
    return obs


def _provider_candidates(observations, config):
    """Second-stage probe targets: CDN domains from terminal CNAME targets and
    OCSP hosts from certificate URLs."""
    rules = config.suffix_rules
    cdn: dict[str, str] = {}
    ocsp: dict[str, str] = {}
    for obs in observations:
        try:
            own = rules.registered_domain(obs.domain)
        except Exception:
            own = obs.domain
        for chain in obs.cdn_evidence.chains:
            if not chain.targets:
                continue
            terminal = chain.targets[-1]
            try:
                provider = rules.registered_domain(terminal)
            except Exception:
                continue
            if provider == own:
                continue
            if provider not in cdn or terminal < cdn[provider]:
                cdn[provider] = terminal
        for url in obs.ocsp_urls:
            host = (urlsplit(url).hostname or "").lower().rstrip(".")
            if not host:
                continue
            try:
                provider = rules.registered_domain(host)
            except Exception:
                continue
            if provider not in ocsp or host < ocsp[provider]:
                ocsp[provider] = host
    return cdn, ocsp


def _scan_provider(provider_name, probed_host, provider_type, config, transport) -> ProviderObservation:
    obs = ProviderObservation(provider_name=provider_name, provider_type=provider_type,
                              probed_host=probed_host)
    obs.nameservers, obs.ns_status = _ns_probe_outcome(provider_name, config, transport)
    if provider_type == "OcspProvider":
        evidence = CdnEvidence(fetch_status="skipped")
        try:
            evidence.chains.append(resolve_cname_chain(probed_host, config, transport))
        except CnameLoop as exc:
            evidence.chains.append(CnameChainObs(host=probed_host, targets=exc.chain, note="cname-loop"))
        obs.cdn_evidence = evidence
    return obs


def scan(domain_list: list[DomainListEntry], config: ProbeConfig, transport=None) -> Snapshot:
    """Probe every listed domain, then the providers they revealed.

    Per-domain failures never abort the scan; they are recorded as
    probe-failed markers in the observations.
    """
    if transport is None:
        transport = LiveTransport(config)
    snapshot = Snapshot(created_at=transport.timestamp(), vantage_note=config.vantage_note)

    with ThreadPoolExecutor(max_workers=config.max_inflight) as pool:
        sites = list(pool.map(lambda e: _scan_website(e, config, transport), domain_list))
    snapshot.website_observations = sorted(sites, key=lambda o: o.rank)

    cdn, ocsp = _provider_candidates(snapshot.website_observations, config)
    jobs = [(name, host, "CdnProvider") for name, host in sorted(cdn.items())]
    jobs += [(name, host, "OcspProvider") for name, host in sorted(ocsp.items())]
    with ThreadPoolExecutor(max_workers=config.max_inflight) as pool:
        providers = list(pool.map(
            lambda j: _scan_provider(j[0], j[1], j[2], config, transport), jobs))
    snapshot.provider_observations = sorted(providers,
                                            key=lambda o: (o.provider_type, o.provider_name))
    snapshot.validate()
    return snapshot


def record_scan(domain_list: list[DomainListEntry], config: ProbeConfig,
                transport=None) -> tuple[Snapshot, Transcript]:
    """Run a scan while recording every interaction for later replay."""
    inner = transport if transport is not None else LiveTransport(config)
    recorder = RecordingTransport(inner, meta={
        "vantage_note": config.vantage_note,
        "domains": [[e.rank, e.domain] for e in domain_list],
    })
    snapshot = scan(domain_list, config, recorder)
    return snapshot, recorder.transcript


def replay_scan(transcript: Transcript, config: ProbeConfig,
                domain_list: list[DomainListEntry] | None = None) -> Snapshot:
    """Re-run a recorded scan without touching the network."""
    if domain_list is None:
        domain_list = [DomainListEntry(rank, domain)
                       for rank, domain in transcript.meta.get("domains", [])]
    return scan(domain_list, config, ReplayTransport(transcript))


def scan_had_failures(snapshot: Snapshot) -> bool:
    for obs in snapshot.website_observations:
        if obs.ns_status != NS_OK or obs.https_supported == PROBE_FAILED:
            return True
        if obs.cdn_evidence.fetch_status == "failed":
            return True
    for obs in snapshot.provider_observations:
        if obs.ns_status != NS_OK:
            return True
    return False
