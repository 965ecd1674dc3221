"""Network transports with a record/replay layer.

Every probe goes through a Transport. LiveTransport talks to the network,
RecordingTransport wraps it and logs each interaction, ReplayTransport
serves a recorded transcript and never opens a socket. Transcripts are
stored as a JSON index plus length-prefixed binary payload records.
"""

from __future__ import annotations

import hashlib
import json
import socket
import ssl
import struct
import threading
import time
from dataclasses import dataclass, field
from urllib.parse import urlsplit

from . import dnswire
from .errors import TranscriptExhausted
from .ingest import rfc3339_now

TRANSCRIPT_FORMAT = "webdep-transcript v1"


def canonical_key(kind: str, desc: dict) -> str:
    return kind + " " + json.dumps(desc, sort_keys=True, separators=(",", ":"))


def deterministic_txid(key: str) -> int:
    return int.from_bytes(hashlib.sha256(key.encode()).digest()[:2], "big") or 1


# --- clocks and politeness ---

class SystemClock:
    def now(self) -> float:
        return time.monotonic()

    def sleep(self, seconds: float) -> None:
        if seconds > 0:
            time.sleep(seconds)


class VirtualClock:
    """Advances only when slept; lets politeness be asserted without waiting."""

    def __init__(self):
        self._now = 0.0
        self._lock = threading.Lock()

    def now(self) -> float:
        with self._lock:
            return self._now

    def sleep(self, seconds: float) -> None:
        with self._lock:
            if seconds > 0:
                self._now += seconds


class RateLimiter:
    """Enforces a minimum interval between probes to the same host."""

    def __init__(self, clock, min_interval: float):
        self._clock = clock
        self._min_interval = min_interval
        self._next_free: dict[str, float] = {}
        self._lock = threading.Lock()

    def wait(self, host: str) -> float:
        """Blocks until the host slot is free; returns the probe time."""
        if self._min_interval <= 0:
            return self._clock.now()
        with self._lock:
            now = self._clock.now()
            start = max(now, self._next_free.get(host, now))
            self._next_free[host] = start + self._min_interval
        delay = start - now
        if delay > 0:
            self._clock.sleep(delay)
        return start


# --- transcript storage ---

@dataclass
class Interaction:
    kind: str
    desc: dict
    payload: bytes | None = None
    error: str | None = None
    timestamp: str = ""

    @property
    def key(self) -> str:
        return canonical_key(self.kind, self.desc)


@dataclass
class Transcript:
    meta: dict = field(default_factory=dict)
    entries: list[Interaction] = field(default_factory=list)

    def save(self, base_path) -> None:
        base = str(base_path)
        index = {"format": TRANSCRIPT_FORMAT, "meta": self.meta, "entries": []}
        offset = 0
        with open(base + ".records.bin", "wb") as fh:
            for entry in self.entries:
                rec = {
                    "kind": entry.kind,
                    "desc": entry.desc,
                    "error": entry.error,
                    "timestamp": entry.timestamp,
                    "offset": None,
                    "length": None,
                }
                if entry.payload is not None:
                    fh.write(struct.pack(">I", len(entry.payload)))
                    fh.write(entry.payload)
                    rec["offset"] = offset
                    rec["length"] = len(entry.payload)
                    offset += 4 + len(entry.payload)
                index["entries"].append(rec)
        with open(base + ".index.json", "w", encoding="utf-8") as fh:
            json.dump(index, fh, sort_keys=True, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, base_path) -> "Transcript":
        base = str(base_path)
        with open(base + ".index.json", encoding="utf-8") as fh:
            index = json.load(fh)
        if index.get("format") != TRANSCRIPT_FORMAT:
            raise TranscriptExhausted(
                f"transcript format {index.get('format')!r}, expected {TRANSCRIPT_FORMAT!r}"
            )
        transcript = cls(meta=index.get("meta", {}))
        with open(base + ".records.bin", "rb") as fh:
            blob = fh.read()
        for rec in index["entries"]:
            payload = None
            if rec["offset"] is not None:
                start = rec["offset"]
                (length,) = struct.unpack(">I", blob[start:start + 4])
                payload = blob[start + 4:start + 4 + length]
            transcript.entries.append(Interaction(
                kind=rec["kind"], desc=rec["desc"], payload=payload,
                error=rec["error"], timestamp=rec.get("timestamp", ""),
            ))
        return transcript


# --- transports ---

class ReplayTransport:
    """Serves recorded interactions keyed by request descriptor, FIFO per key."""

    def __init__(self, transcript: Transcript):
        self._queues: dict[str, list[Interaction]] = {}
        for entry in transcript.entries:
            self._queues.setdefault(entry.key, []).append(entry)
        self._meta = transcript.meta
        self._lock = threading.Lock()

    def perform(self, kind: str, desc: dict) -> tuple[bytes | None, str | None]:
        key = canonical_key(kind, desc)
        with self._lock:
            queue = self._queues.get(key)
            if not queue:
                raise TranscriptExhausted(f"no recorded interaction for {key}")
            entry = queue.pop(0)
        return entry.payload, entry.error

    def timestamp(self) -> str:
        return self._meta.get("created_at", "1970-01-01T00:00:00Z")


class RecordingTransport:
    """Delegates to an inner transport and logs every interaction in order."""

    def __init__(self, inner, meta: dict | None = None):
        self._inner = inner
        self.transcript = Transcript(meta=dict(meta or {}))
        self.transcript.meta.setdefault("created_at", inner.timestamp())
        self._lock = threading.Lock()

    def perform(self, kind: str, desc: dict) -> tuple[bytes | None, str | None]:
        payload, error = self._inner.perform(kind, desc)
        entry = Interaction(kind=kind, desc=desc, payload=payload, error=error,
                            timestamp=self._inner.timestamp())
        with self._lock:
            self.transcript.entries.append(entry)
        return payload, error

    def timestamp(self) -> str:
        return self._inner.timestamp()


class LiveTransport:
    """Talks to the network with per-host politeness. One instance per scan."""

    MAX_HTTP_BODY = 1 << 20
    MAX_TLS_FLIGHT = 1 << 16

    def __init__(self, config, clock=None):
        self._config = config
        self._clock = clock or SystemClock()
        self._limiter = RateLimiter(self._clock, config.per_host_min_interval)

    def timestamp(self) -> str:
        return rfc3339_now()

    def perform(self, kind: str, desc: dict) -> tuple[bytes | None, str | None]:
        if kind == "dns":
            self._limiter.wait(desc["server"])
            return self._dns(desc)
        if kind == "tcp":
            self._limiter.wait(desc["host"])
            return self._tcp(desc)
        if kind == "tls":
            self._limiter.wait(desc["host"])
            return self._tls(desc)
        if kind == "http":
            self._limiter.wait(urlsplit(desc["url"]).hostname or "")
            return self._http(desc)
        raise ValueError(f"unknown probe kind {kind!r}")

    # each handler returns (payload, error); semantic interpretation stays in probes

    def _dns(self, desc):
        server = desc["server"]
        port = 53
        if ":" in server and server.count(":") == 1:
            server, port_text = server.split(":")
            port = int(port_text)
        txid = deterministic_txid(canonical_key("dns", desc))
        query = dnswire.build_query(desc["qname"], dnswire.QTYPE_BY_NAME[desc["qtype"]], txid)
        try:
            with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as sock:
                sock.settimeout(self._config.dns_timeout)
                sock.sendto(query, (server, port))
                data, _addr = sock.recvfrom(4096)
        except socket.timeout:
            return None, "timeout"
        except OSError as exc:
            return None, f"network-error:{exc.__class__.__name__}"
        try:
            msg = dnswire.parse_message(data)
        except Exception:
            return data, None  # prober reports the parse failure
        if msg.truncated:
            tcp_data, error = self._dns_tcp(server, port, query)
            if tcp_data is not None:
                return tcp_data, None
            return data, None  # fall back to the truncated UDP answer
        return data, None

    def _dns_tcp(self, server, port, query):
        try:
            with socket.create_connection((server, port), timeout=self._config.dns_timeout) as sock:
                sock.settimeout(self._config.dns_timeout)
                sock.sendall(struct.pack(">H", len(query)) + query)
                header = self._read_exact(sock, 2)
                (length,) = struct.unpack(">H", header)
                return self._read_exact(sock, length), None
        except (OSError, EOFError) as exc:
            return None, f"network-error:{exc.__class__.__name__}"

    @staticmethod
    def _read_exact(sock, n):
        buf = b""
        while len(buf) < n:
            chunk = sock.recv(n - len(buf))
            if not chunk:
                raise EOFError("connection closed")
            buf += chunk
        return buf

    def _tcp(self, desc):
        try:
            sock = socket.create_connection((desc["host"], desc["port"]),
                                            timeout=self._config.tcp_timeout)
            sock.close()
            return b"connected", None
        except ConnectionRefusedError:
            return b"refused", None
        except socket.timeout:
            return b"timeout", None
        except OSError:
            return b"unreachable", None

    def _tls(self, desc):
        from . import tlswire

        hello = tlswire.build_client_hello(desc["host"], status_request=True)
        try:
            sock = socket.create_connection((desc["host"], desc["port"]),
                                            timeout=self._config.tcp_timeout)
        except OSError as exc:
            return None, f"connect:{exc.__class__.__name__}"
        received = b""
        try:
            sock.settimeout(self._config.http_timeout)
            sock.sendall(hello)
            while len(received) < self.MAX_TLS_FLIGHT:
                try:
                    chunk = sock.recv(8192)
                except socket.timeout:
                    break
                if not chunk:
                    break
                received += chunk
                if tlswire.flight_complete(received):
                    break
        except OSError as exc:
            if not received:
                return None, f"network-error:{exc.__class__.__name__}"
        finally:
            sock.close()
        if not received:
            return None, "timeout"
        return received, None

    def _http(self, desc):
        url = urlsplit(desc["url"])
        host = url.hostname or ""
        port = url.port or (443 if url.scheme == "https" else 80)
        path = url.path or "/"
        if url.query:
            path += "?" + url.query
        request = (
            f"GET {path} HTTP/1.1\r\n"
            f"Host: {host}\r\n"
            f"User-Agent: {self._config.user_agent}\r\n"
            "Accept: */*\r\n"
            "Connection: close\r\n\r\n"
        ).encode("ascii", "ignore")
        try:
            sock = socket.create_connection((host, port), timeout=self._config.http_timeout)
        except OSError as exc:
            return None, f"connect:{exc.__class__.__name__}"
        try:
            sock.settimeout(self._config.http_timeout)
            if url.scheme == "https":
                context = ssl.create_default_context()
                # measurement fetch: record what the server serves, do not validate
                context.check_hostname = False
                context.verify_mode = ssl.CERT_NONE
                sock = context.wrap_socket(sock, server_hostname=host)
            sock.sendall(request)
            chunks = []
            total = 0
            while total < self.MAX_HTTP_BODY:
                try:
                    chunk = sock.recv(16384)
                except socket.timeout:
                    break
                if not chunk:
                    break
                chunks.append(chunk)
                total += len(chunk)
            data = b"".join(chunks)
        except OSError as exc:
            return None, f"network-error:{exc.__class__.__name__}"
        finally:
            sock.close()
        if not data:
            return None, "timeout"
        return data, None
