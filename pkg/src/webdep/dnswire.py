"""Minimal RFC 1035 wire codec: enough to issue NS/CNAME/A queries through a
recursive resolver and parse the answers, including compressed names."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

from .errors import DnsParseError

TYPE_A = 1
TYPE_NS = 2
TYPE_CNAME = 5
TYPE_SOA = 6
TYPE_AAAA = 28

CLASS_IN = 1

RCODE_NOERROR = 0
RCODE_SERVFAIL = 2
RCODE_NXDOMAIN = 3

QTYPE_BY_NAME = {"A": TYPE_A, "NS": TYPE_NS, "CNAME": TYPE_CNAME, "AAAA": TYPE_AAAA}

_MAX_POINTER_JUMPS = 64


def encode_name(name: str) -> bytes:
    out = bytearray()
    name = name.rstrip(".")
    if name:
        for label in name.split("."):
            raw = label.encode("ascii")
            if not 0 < len(raw) < 64:
                raise DnsParseError(f"label length out of range in {name!r}")
            out.append(len(raw))
            out.extend(raw)
    out.append(0)
    return bytes(out)


def decode_name(data: bytes, offset: int) -> tuple[str, int]:
    """Returns (name, offset after the name in the original stream)."""
    labels = []
    jumps = 0
    end = None
    pos = offset
    while True:
        if pos >= len(data):
            raise DnsParseError("truncated name")
        length = data[pos]
        if length & 0xC0 == 0xC0:
            if pos + 1 >= len(data):
                raise DnsParseError("truncated compression pointer")
            if end is None:
                end = pos + 2
            pos = ((length & 0x3F) << 8) | data[pos + 1]
            jumps += 1
            if jumps > _MAX_POINTER_JUMPS:
                raise DnsParseError("compression pointer loop")
            continue
        if length & 0xC0:
            raise DnsParseError(f"reserved label type {length:#x}")
        pos += 1
        if length == 0:
            break
        if pos + length > len(data):
            raise DnsParseError("truncated label")
        labels.append(data[pos:pos + length].decode("ascii", "replace"))
        pos += length
    if end is None:
        end = pos
    return ".".join(labels), end


def build_query(qname: str, qtype: int, txid: int, rd: bool = True) -> bytes:
    flags = 0x0100 if rd else 0
    header = struct.pack(">HHHHHH", txid, flags, 1, 0, 0, 0)
    return header + encode_name(qname) + struct.pack(">HH", qtype, CLASS_IN)


@dataclass
class ResourceRecord:
    name: str
    rtype: int
    rclass: int
    ttl: int
    rdata: bytes
    target: str = ""  # decoded name for NS/CNAME, dotted quad for A


@dataclass
class DnsMessage:
    txid: int
    flags: int
    question: tuple[str, int] | None = None
    answers: list[ResourceRecord] = field(default_factory=list)

    @property
    def rcode(self) -> int:
        return self.flags & 0x000F

    @property
    def truncated(self) -> bool:
        return bool(self.flags & 0x0200)

    @property
    def is_response(self) -> bool:
        return bool(self.flags & 0x8000)


def parse_message(data: bytes) -> DnsMessage:
    if len(data) < 12:
        raise DnsParseError("message shorter than header")
    txid, flags, qdcount, ancount, nscount, arcount = struct.unpack(">HHHHHH", data[:12])
    msg = DnsMessage(txid=txid, flags=flags)
    pos = 12
    for _ in range(qdcount):
        qname, pos = decode_name(data, pos)
        if pos + 4 > len(data):
            raise DnsParseError("truncated question")
        qtype, _qclass = struct.unpack(">HH", data[pos:pos + 4])
        pos += 4
        if msg.question is None:
            msg.question = (qname, qtype)
    for section_count, keep in ((ancount, True), (nscount, False), (arcount, False)):
        for _ in range(section_count):
            name, pos = decode_name(data, pos)
            if pos + 10 > len(data):
                raise DnsParseError("truncated record header")
            rtype, rclass, ttl, rdlength = struct.unpack(">HHIH", data[pos:pos + 10])
            pos += 10
            if pos + rdlength > len(data):
                raise DnsParseError("truncated rdata")
            rdata = data[pos:pos + rdlength]
            record = ResourceRecord(name=name, rtype=rtype, rclass=rclass, ttl=ttl, rdata=rdata)
            if rtype in (TYPE_NS, TYPE_CNAME):
                record.target, _ = decode_name(data, pos)
            elif rtype == TYPE_A and rdlength == 4:
                record.target = ".".join(str(b) for b in rdata)
            pos += rdlength
            if keep:
                msg.answers.append(record)
    return msg


def answer_targets(msg: DnsMessage, rtype: int) -> list[str]:
    """Decoded targets of answer records of one type, lower-cased, no trailing dot."""
    return [r.target.lower().rstrip(".") for r in msg.answers if r.rtype == rtype and r.target]
