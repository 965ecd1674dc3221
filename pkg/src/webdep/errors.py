"""Exception hierarchy shared by all webdep modules."""


class WebdepError(Exception):
    """Base class for all webdep errors."""


class DataError(WebdepError):
    """A problem with input data; carries file/line context when known."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        prefix = ""
        if path is not None:
            prefix = f"{path}: "
        if line is not None:
            prefix += f"line {line}: "
        super().__init__(prefix + message)


# --- ingest ---

class ParseError(DataError):
    pass


class DuplicateRank(DataError):
    pass


class DuplicateDomain(DataError):
    pass


class SchemaVersionMismatch(DataError):
    pass


class MalformedRecord(DataError):
    pass


# --- graph ---

class GraphError(WebdepError):
    pass


class GraphFormatError(DataError):
    pass


class DanglingReference(GraphError):
    pass


class UnknownProvider(GraphError):
    pass


class UnknownWebsite(GraphError):
    pass


class ProviderAbsentBefore(GraphError):
    pass


# --- probes ---

class ProbeError(WebdepError):
    pass


class DnsError(ProbeError):
    pass


class DnsTimeout(DnsError):
    pass


class DnsServfail(DnsError):
    pass


class Nxdomain(DnsError):
    pass


class DnsParseError(DnsError):
    pass


class TlsParseError(ProbeError):
    pass


class TlsHandshakeFailure(ProbeError):
    pass


class CertificateParseError(ProbeError):
    pass


class FetchFailure(ProbeError):
    pass


class CnameLoop(ProbeError):
    """CNAME resolution revisited a name; `chain` holds the targets up to the loop."""

    def __init__(self, host, chain):
        self.host = host
        self.chain = list(chain)
        super().__init__(f"CNAME loop while resolving {host}: {' -> '.join([host] + self.chain)}")


class TranscriptExhausted(ProbeError):
    pass


# --- classify ---

class UnparsableHostname(WebdepError):
    pass


class MalformedOcspUrl(WebdepError):
    pass


# --- cli ---

class UsageError(WebdepError):
    pass
