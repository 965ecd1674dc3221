"""Registered-domain extraction using public-suffix style rules.

Implements the standard matching algorithm: exception rules (``!``) win,
otherwise the longest matching rule wins, and an implicit ``*`` rule applies
when nothing matches. A trimmed rules snapshot ships with the package;
pass a full rules file for production use. Hostnames are expected in
ASCII/punycode form.
"""

from importlib import resources

from .errors import UnparsableHostname

_BUILTIN = None


class SuffixRules:
    def __init__(self, lines):
        self._rules = set()
        self._exceptions = set()
        for raw in lines:
            line = raw.strip()
            if not line or line.startswith("//"):
                continue
            # rules files may carry trailing comments after whitespace
            line = line.split()[0].lower()
            if line.startswith("!"):
                self._exceptions.add(tuple(line[1:].split(".")))
            else:
                self._rules.add(tuple(line.split(".")))

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls(fh)

    @classmethod
    def builtin(cls):
        global _BUILTIN
        if _BUILTIN is None:
            text = resources.files("webdep.data").joinpath("public_suffix_snapshot.dat").read_text("utf-8")
            _BUILTIN = cls(text.splitlines())
        return _BUILTIN

    def _matches(self, rule, labels):
        if len(rule) > len(labels):
            return False
        for rule_label, label in zip(reversed(rule), reversed(labels)):
            if rule_label != "*" and rule_label != label:
                return False
        return True

    def public_suffix(self, host):
        labels = _normalize(host)
        for rule in self._exceptions:
            if self._matches(rule, labels):
                return ".".join(labels[len(labels) - len(rule) + 1:])
        best = 0
        for rule in self._rules:
            if len(rule) > best and self._matches(rule, labels):
                best = len(rule)
        if best == 0:
            best = 1  # implicit "*" rule
        return ".".join(labels[len(labels) - best:])

    def registered_domain(self, host):
        """Public suffix plus one label, e.g. ns1.example.co.uk -> example.co.uk.

        Raises UnparsableHostname when the host is empty, malformed, or is
        itself a public suffix.
        """
        labels = _normalize(host)
        suffix_len = len(self.public_suffix(host).split("."))
        if len(labels) <= suffix_len:
            raise UnparsableHostname(f"{host!r} has no registrable part")
        return ".".join(labels[len(labels) - suffix_len - 1:])


def _normalize(host):
    if not isinstance(host, str):
        raise UnparsableHostname(f"not a hostname: {host!r}")
    host = host.strip().lower().rstrip(".")
    if not host or any(c.isspace() for c in host):
        raise UnparsableHostname(f"not a hostname: {host!r}")
    labels = host.split(".")
    if any(not label for label in labels):
        raise UnparsableHostname(f"empty label in {host!r}")
    return labels
