"""Typed dependency graph of websites and the infrastructure providers they use.

Nodes are (name, service type) pairs; edges are directed Direct dependencies.
Exclusivity and transitivity are derived views (see the analysis module) and
are never stored on the graph.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING, Iterable, Optional

from .errors import DanglingReference, DuplicateDomain, GraphError, GraphFormatError

if TYPE_CHECKING:
    from .classify import ClassificationResult
    from .ingest import Snapshot


class ServiceType(Enum):
    WEBSITE = "Website"
    DNS = "DnsProvider"
    CDN = "CdnProvider"
    OCSP = "OcspProvider"


PROVIDER_TYPES = (ServiceType.DNS, ServiceType.CDN, ServiceType.OCSP)

# The only (source type, target type) pairs an edge may take. Websites use
# all three provider kinds; CDNs use DNS; OCSP responders use DNS and CDNs.
ALLOWED_EDGES = frozenset({
    (ServiceType.WEBSITE, ServiceType.DNS),
    (ServiceType.WEBSITE, ServiceType.CDN),
    (ServiceType.WEBSITE, ServiceType.OCSP),
    (ServiceType.CDN, ServiceType.DNS),
    (ServiceType.OCSP, ServiceType.DNS),
    (ServiceType.OCSP, ServiceType.CDN),
})


class DependencyType(Enum):
    DIRECT = "Direct"


@dataclass(frozen=True)
class ServiceNode:
    name: str
    service_type: ServiceType

    def __post_init__(self):
        if not self.name or any(c.isspace() for c in self.name):
            raise GraphError(f"invalid node name {self.name!r}")

    @property
    def key(self):
        return (self.service_type.value, self.name)


@dataclass(frozen=True)
class DependencyEdge:
    source: ServiceNode
    target: ServiceNode
    dep_type: DependencyType = DependencyType.DIRECT

    def __post_init__(self):
        if self.source == self.target:
            raise GraphError(f"self edge on {self.source.name!r}")
        pair = (self.source.service_type, self.target.service_type)
        if pair not in ALLOWED_EDGES:
            raise GraphError(
                f"edge {pair[0].value} -> {pair[1].value} is not a permitted direction"
            )

    @property
    def key(self):
        return (self.source.key, self.target.key, self.dep_type.value)


class DependencyGraph:
    """Immutable graph with per-type adjacency indices.

    Construction validates all invariants; instances are safe to share
    between threads for reads.
    """

    def __init__(self, nodes: Iterable[ServiceNode], edges: Iterable[DependencyEdge],
                 website_rank: dict[str, int] | None = None):
        by_key = {}
        for node in nodes:
            if node.key in by_key:
                raise GraphError(f"duplicate node {node.key}")
            by_key[node.key] = node
        self._by_key = by_key
        self._nodes = tuple(sorted(by_key.values(), key=lambda n: n.key))

        seen = set()
        for edge in edges:
            if edge.key in seen:
                raise GraphError(f"duplicate edge {edge.key}")
            seen.add(edge.key)
            for end in (edge.source, edge.target):
                if self._by_key.get(end.key) != end:
                    raise GraphError(f"edge references unknown node {end.key}")
        self._edges = tuple(sorted((e for e in set(edges)), key=lambda e: e.key))

        ranks = dict(website_rank or {})
        if len(set(ranks.values())) != len(ranks):
            raise GraphError("website ranks must be unique")
        for name, rank in ranks.items():
            if not isinstance(rank, int) or rank < 1:
                raise GraphError(f"rank for {name!r} must be a positive integer")
            if (ServiceType.WEBSITE.value, name) not in self._by_key:
                raise GraphError(f"ranked website {name!r} has no node")
        self._rank = ranks

        self._out, self._in = self._build_indices(self._edges)

    @staticmethod
    def _build_indices(edges):
        out: dict[ServiceNode, dict[ServiceType, list[ServiceNode]]] = {}
        incoming: dict[ServiceNode, list[ServiceNode]] = {}
        for edge in edges:
            out.setdefault(edge.source, {}).setdefault(edge.target.service_type, []).append(edge.target)
            incoming.setdefault(edge.target, []).append(edge.source)
        out_frozen = {
            node: {t: tuple(sorted(targets, key=lambda n: n.name)) for t, targets in per_type.items()}
            for node, per_type in out.items()
        }
        in_frozen = {node: tuple(sorted(sources, key=lambda n: n.key)) for node, sources in incoming.items()}
        return out_frozen, in_frozen

    @property
    def nodes(self) -> tuple[ServiceNode, ...]:
        return self._nodes

    @property
    def edges(self) -> tuple[DependencyEdge, ...]:
        return self._edges

    @property
    def website_rank(self) -> dict[str, int]:
        return dict(self._rank)

    def rank_of(self, name: str) -> Optional[int]:
        return self._rank.get(name)

    def lookup(self, name: str, service_type: ServiceType) -> Optional[ServiceNode]:
        return self._by_key.get((service_type.value, name))

    def __contains__(self, node: ServiceNode) -> bool:
        return self._by_key.get(node.key) == node

    def websites(self) -> tuple[ServiceNode, ...]:
        return self.typed_nodes(ServiceType.WEBSITE)

    def typed_nodes(self, service_type: ServiceType) -> tuple[ServiceNode, ...]:
        return tuple(n for n in self._nodes if n.service_type is service_type)

    def out_providers(self, node: ServiceNode, provider_type: ServiceType) -> tuple[ServiceNode, ...]:
        return self._out.get(node, {}).get(provider_type, ())

    def out_types(self, node: ServiceNode) -> tuple[ServiceType, ...]:
        return tuple(sorted(self._out.get(node, {}), key=lambda t: t.value))

    def in_sources(self, node: ServiceNode) -> tuple[ServiceNode, ...]:
        return self._in.get(node, ())

    def edges_of(self, node: ServiceNode, direction: str = "out",
                 target_type: ServiceType | None = None) -> list[DependencyEdge]:
        if direction == "out":
            targets = (self.out_providers(node, target_type) if target_type
                       else [t for ts in self._out.get(node, {}).values() for t in ts])
            edges = [DependencyEdge(node, t) for t in targets]
            return sorted(edges, key=lambda e: e.target.key)
        if direction == "in":
            sources = [s for s in self.in_sources(node)
                       if target_type is None or s.service_type is target_type]
            return sorted((DependencyEdge(s, node) for s in sources), key=lambda e: e.source.key)
        raise ValueError(f"direction must be 'out' or 'in', got {direction!r}")

    def __eq__(self, other):
        if not isinstance(other, DependencyGraph):
            return NotImplemented
        return (self._nodes == other._nodes and self._edges == other._edges
                and self._rank == other._rank)

    def __repr__(self):
        return f"DependencyGraph(nodes={len(self._nodes)}, edges={len(self._edges)})"


def node_lookup(graph: DependencyGraph, name: str, service_type: ServiceType) -> Optional[ServiceNode]:
    return graph.lookup(name, service_type)


def edges_of(graph: DependencyGraph, node: ServiceNode, direction: str = "out",
             target_type: ServiceType | None = None) -> list[DependencyEdge]:
    return graph.edges_of(node, direction, target_type)


def build_graph(snapshot: "Snapshot", classification: "ClassificationResult") -> DependencyGraph:
    """Construct the dependency graph from a snapshot and its classification.

    Only providers with a third-party verdict become nodes; private and
    unknown providers are dropped along with their edges. Raises
    DanglingReference when the snapshot names a provider the classification
    does not cover, DuplicateDomain on repeated website domains.
    """
    from .classify import THIRD_PARTY  # local import avoids a module cycle

    nodes: dict[tuple, ServiceNode] = {}
    edges: set[DependencyEdge] = set()
    ranks: dict[str, int] = {}

    def provider_node(label: str, service_type: ServiceType) -> ServiceNode:
        node = ServiceNode(label, service_type)
        nodes.setdefault(node.key, node)
        return node

    def verdict_of(label: str, service_type: ServiceType):
        verdict = classification.providers.get((service_type.value, label))
        if verdict is None:
            raise DanglingReference(f"provider {label!r} ({service_type.value}) not classified")
        return verdict

    def dns_targets(nameservers):
        targets = []
        for ns in nameservers:
            label = classification.ns_provider.get(ns.lower().rstrip("."))
            if label is None:
                raise DanglingReference(f"nameserver {ns!r} not classified")
            if verdict_of(label, ServiceType.DNS).verdict == THIRD_PARTY:
                targets.append(label)
        return targets

    seen_domains = set()
    for obs in snapshot.website_observations:
        if obs.domain in seen_domains:
            raise DuplicateDomain(f"domain {obs.domain!r} appears twice in snapshot")
        seen_domains.add(obs.domain)
        site = ServiceNode(obs.domain, ServiceType.WEBSITE)
        nodes[site.key] = site
        ranks[obs.domain] = obs.rank

        for label in dns_targets(obs.nameservers):
            edges.add(DependencyEdge(site, provider_node(label, ServiceType.DNS)))

        for label in classification.website_cdn_labels.get(obs.domain, ()):
            if verdict_of(label, ServiceType.CDN).verdict == THIRD_PARTY:
                edges.add(DependencyEdge(site, provider_node(label, ServiceType.CDN)))

        for url in obs.ocsp_urls:
            if url in classification.malformed_ocsp_urls:
                continue
            label = classification.ocsp_url_label.get(url)
            if label is None:
                raise DanglingReference(f"OCSP URL {url!r} not classified")
            if verdict_of(label, ServiceType.OCSP).verdict == THIRD_PARTY:
                edges.add(DependencyEdge(site, provider_node(label, ServiceType.OCSP)))

    for obs in snapshot.provider_observations:
        if obs.provider_type == ServiceType.CDN.value:
            key = (obs.provider_type, obs.provider_name)
            if key not in classification.provider_cdn_labels:
                raise DanglingReference(f"CDN observation {obs.provider_name!r} not classified")
            for label in classification.provider_cdn_labels[key]:
                if verdict_of(label, ServiceType.CDN).verdict != THIRD_PARTY:
                    continue
                cdn = provider_node(label, ServiceType.CDN)
                for dns_label in dns_targets(obs.nameservers):
                    edges.add(DependencyEdge(cdn, provider_node(dns_label, ServiceType.DNS)))
        elif obs.provider_type == ServiceType.OCSP.value:
            if verdict_of(obs.provider_name, ServiceType.OCSP).verdict != THIRD_PARTY:
                continue
            ocsp = provider_node(obs.provider_name, ServiceType.OCSP)
            for dns_label in dns_targets(obs.nameservers):
                edges.add(DependencyEdge(ocsp, provider_node(dns_label, ServiceType.DNS)))
            key = (obs.provider_type, obs.provider_name)
            for label in classification.provider_cdn_labels.get(key, ()):
                if verdict_of(label, ServiceType.CDN).verdict == THIRD_PARTY:
                    edges.add(DependencyEdge(ocsp, provider_node(label, ServiceType.CDN)))
        else:
            raise DanglingReference(
                f"provider observation {obs.provider_name!r} has unsupported type {obs.provider_type!r}"
            )

    return DependencyGraph(nodes.values(), edges, ranks)


# --- text export / import ---

FORMAT_HEADER = "webdep-graph v1"

_TYPE_BY_VALUE = {t.value: t for t in ServiceType}


def export_graph(graph: DependencyGraph) -> str:
    lines = [FORMAT_HEADER]
    for node in graph.nodes:
        lines.append(f"node {node.service_type.value} {node.name}")
    for name, rank in sorted(graph.website_rank.items(), key=lambda kv: kv[1]):
        lines.append(f"rank {name} {rank}")
    for edge in graph.edges:
        lines.append(
            f"edge {edge.source.service_type.value} {edge.source.name} "
            f"{edge.target.service_type.value} {edge.target.name}"
        )
    return "\n".join(lines) + "\n"


def import_graph(text: str) -> DependencyGraph:
    lines = text.splitlines()
    if not lines or lines[0].strip() != FORMAT_HEADER:
        raise GraphFormatError(f"expected header {FORMAT_HEADER!r}", line=1)
    nodes: dict[tuple, ServiceNode] = {}
    edges = []
    ranks = {}
    for lineno, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line:
            continue
        parts = line.split()
        try:
            if parts[0] == "node" and len(parts) == 3:
                node = ServiceNode(parts[2], _TYPE_BY_VALUE[parts[1]])
                nodes[node.key] = node
            elif parts[0] == "rank" and len(parts) == 3:
                ranks[parts[1]] = int(parts[2])
            elif parts[0] == "edge" and len(parts) == 5:
                src = nodes[(parts[1], parts[2])]
                dst = nodes[(parts[3], parts[4])]
                edges.append(DependencyEdge(src, dst))
            else:
                raise GraphFormatError(f"unrecognized line {line!r}", line=lineno)
        except (KeyError, ValueError, GraphError) as exc:
            if isinstance(exc, GraphFormatError):
                raise
            raise GraphFormatError(f"bad record {line!r}: {exc}", line=lineno) from exc
    return DependencyGraph(nodes.values(), edges, ranks)


_DOT_SHAPE = {
    ServiceType.WEBSITE: "box",
    ServiceType.DNS: "ellipse",
    ServiceType.CDN: "hexagon",
    ServiceType.OCSP: "diamond",
}


def export_dot(graph: DependencyGraph) -> str:
    def quote(s):
        return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'

    lines = ["digraph webdep {", "  rankdir=LR;"]
    for node in graph.nodes:
        node_id = quote(f"{node.service_type.value}:{node.name}")
        lines.append(f"  {node_id} [label={quote(node.name)} shape={_DOT_SHAPE[node.service_type]}];")
    for edge in graph.edges:
        src = quote(f"{edge.source.service_type.value}:{edge.source.name}")
        dst = quote(f"{edge.target.service_type.value}:{edge.target.name}")
        lines.append(f"  {src} -> {dst};")
    lines.append("}")
    return "\n".join(lines) + "\n"
