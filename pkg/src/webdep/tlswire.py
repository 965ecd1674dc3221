"""Build a TLS 1.2 ClientHello (with SNI and certificate-status request) and
parse the server's plaintext handshake flight.

Only the pre-key-exchange flight is read: ServerHello, Certificate,
CertificateStatus, ServerHelloDone. That is enough to observe HTTPS support,
extract the leaf certificate, and detect a stapled OCSP response without
completing the handshake.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

from .errors import TlsParseError

RECORD_HANDSHAKE = 22
RECORD_ALERT = 21

HS_SERVER_HELLO = 2
HS_CERTIFICATE = 11
HS_SERVER_KEY_EXCHANGE = 12
HS_CERTIFICATE_REQUEST = 13
HS_SERVER_HELLO_DONE = 14
HS_CERTIFICATE_STATUS = 22

EXT_SERVER_NAME = 0
EXT_STATUS_REQUEST = 5
EXT_SUPPORTED_GROUPS = 10
EXT_EC_POINT_FORMATS = 11
EXT_SIGNATURE_ALGORITHMS = 13

TLS12 = 0x0303

_CIPHER_SUITES = (
    0xC02F, 0xC030, 0xC02B, 0xC02C,  # ECDHE GCM
    0xCCA8, 0xCCA9,                  # ECDHE ChaCha20
    0x009C, 0x009D,                  # RSA GCM
    0x002F, 0x0035,                  # RSA CBC fallbacks
)

_SIG_ALGS = (0x0403, 0x0503, 0x0603, 0x0804, 0x0805, 0x0806, 0x0401, 0x0501, 0x0601, 0x0201)


def _ext(ext_type: int, body: bytes) -> bytes:
    return struct.pack(">HH", ext_type, len(body)) + body


def build_client_hello(host: str, status_request: bool = True) -> bytes:
    # deterministic client random: replay transcripts stay byte-stable
    random = hashlib.sha256(b"webdep-hello:" + host.encode("ascii", "ignore")).digest()

    suites = b"".join(struct.pack(">H", s) for s in _CIPHER_SUITES)
    sni_name = host.encode("ascii", "ignore")
    sni_list = struct.pack(">HBH", len(sni_name) + 3, 0, len(sni_name)) + sni_name
    groups = b"".join(struct.pack(">H", g) for g in (29, 23, 24))
    sig_algs = b"".join(struct.pack(">H", a) for a in _SIG_ALGS)

    extensions = _ext(EXT_SERVER_NAME, sni_list)
    if status_request:
        # OCSP status type, empty responder list, empty extensions
        extensions += _ext(EXT_STATUS_REQUEST, struct.pack(">BHH", 1, 0, 0))
    extensions += _ext(EXT_SUPPORTED_GROUPS, struct.pack(">H", len(groups)) + groups)
    extensions += _ext(EXT_EC_POINT_FORMATS, b"\x01\x00")
    extensions += _ext(EXT_SIGNATURE_ALGORITHMS, struct.pack(">H", len(sig_algs)) + sig_algs)

    body = struct.pack(">H", TLS12) + random + b"\x00"  # empty session id
    body += struct.pack(">H", len(suites)) + suites
    body += b"\x01\x00"  # null compression only
    body += struct.pack(">H", len(extensions)) + extensions

    handshake = struct.pack(">B", 1) + len(body).to_bytes(3, "big") + body
    return struct.pack(">BHH", RECORD_HANDSHAKE, 0x0301, len(handshake)) + handshake


@dataclass
class ServerFlight:
    server_version: int | None = None
    cipher: int | None = None
    extensions: dict[int, bytes] = field(default_factory=dict)
    certificates: list[bytes] = field(default_factory=list)
    stapled_ocsp: bytes | None = None
    alert: tuple[int, int] | None = None
    hello_done: bool = False

    @property
    def complete(self) -> bool:
        return self.hello_done or self.alert is not None


def parse_server_flight(data: bytes, partial_ok: bool = False) -> ServerFlight:
    """Parse TLS records into a ServerFlight.

    With partial_ok, truncated trailing data is tolerated so the caller can
    poll while bytes are still arriving.
    """
    flight = ServerFlight()
    handshake = bytearray()
    pos = 0
    while pos < len(data):
        if pos + 5 > len(data):
            if partial_ok:
                break
            raise TlsParseError("truncated record header")
        rtype, _version, length = struct.unpack(">BHH", data[pos:pos + 5])
        pos += 5
        if pos + length > len(data):
            if partial_ok:
                break
            raise TlsParseError("truncated record body")
        fragment = data[pos:pos + length]
        pos += length
        if rtype == RECORD_ALERT:
            if length >= 2:
                flight.alert = (fragment[0], fragment[1])
            else:
                flight.alert = (2, 0)
            return flight
        if rtype == RECORD_HANDSHAKE:
            handshake.extend(fragment)
        else:
            raise TlsParseError(f"unexpected record type {rtype}")

    hpos = 0
    while hpos + 4 <= len(handshake):
        msg_type = handshake[hpos]
        msg_len = int.from_bytes(handshake[hpos + 1:hpos + 4], "big")
        if hpos + 4 + msg_len > len(handshake):
            if partial_ok:
                break
            raise TlsParseError("truncated handshake message")
        body = bytes(handshake[hpos + 4:hpos + 4 + msg_len])
        hpos += 4 + msg_len
        if msg_type == HS_SERVER_HELLO:
            _parse_server_hello(body, flight)
        elif msg_type == HS_CERTIFICATE:
            _parse_certificate(body, flight)
        elif msg_type == HS_CERTIFICATE_STATUS:
            _parse_certificate_status(body, flight)
        elif msg_type == HS_SERVER_HELLO_DONE:
            flight.hello_done = True
            break
        elif msg_type in (HS_SERVER_KEY_EXCHANGE, HS_CERTIFICATE_REQUEST):
            continue
        else:
            raise TlsParseError(f"unexpected handshake message {msg_type}")
    if hpos < len(handshake) and not partial_ok and not flight.hello_done:
        raise TlsParseError("trailing handshake bytes")
    return flight


def _parse_server_hello(body: bytes, flight: ServerFlight) -> None:
    if len(body) < 38:
        raise TlsParseError("short ServerHello")
    flight.server_version = struct.unpack(">H", body[:2])[0]
    pos = 34  # version + random
    sid_len = body[pos]
    pos += 1 + sid_len
    if pos + 3 > len(body):
        raise TlsParseError("truncated ServerHello")
    flight.cipher = struct.unpack(">H", body[pos:pos + 2])[0]
    pos += 3  # cipher + compression
    if pos + 2 <= len(body):
        ext_len = struct.unpack(">H", body[pos:pos + 2])[0]
        pos += 2
        end = pos + ext_len
        if end > len(body):
            raise TlsParseError("truncated ServerHello extensions")
        while pos + 4 <= end:
            ext_type, length = struct.unpack(">HH", body[pos:pos + 4])
            pos += 4
            flight.extensions[ext_type] = body[pos:pos + length]
            pos += length


def _parse_certificate(body: bytes, flight: ServerFlight) -> None:
    if len(body) < 3:
        raise TlsParseError("short Certificate message")
    total = int.from_bytes(body[:3], "big")
    pos = 3
    end = 3 + total
    if end > len(body):
        raise TlsParseError("truncated certificate list")
    while pos + 3 <= end:
        length = int.from_bytes(body[pos:pos + 3], "big")
        pos += 3
        if pos + length > end:
            raise TlsParseError("truncated certificate entry")
        flight.certificates.append(body[pos:pos + length])
        pos += length


def _parse_certificate_status(body: bytes, flight: ServerFlight) -> None:
    if len(body) < 4:
        raise TlsParseError("short CertificateStatus")
    if body[0] != 1:  # OCSP
        return
    length = int.from_bytes(body[1:4], "big")
    if 4 + length > len(body):
        raise TlsParseError("truncated OCSP response")
    flight.stapled_ocsp = body[4:4 + length]


def flight_complete(data: bytes) -> bool:
    try:
        return parse_server_flight(data, partial_ok=True).complete
    except TlsParseError:
        return True  # malformed: no point reading further
