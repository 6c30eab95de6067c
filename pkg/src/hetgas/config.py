"""System configuration: schema, loading and validation.

Configs are YAML (JSON is accepted too, being a YAML subset)::

    seed: 1
    domains:
      - {id: 0, topology: crossbar, num_nodes: 2, router_latency: 4, link_bytes_per_cycle: 4}
    nodes:
      - {rank: 0, domain: 0, kind: software, segment_size: 4096, placement: onchip}
      - {rank: 1, domain: 0, kind: hardware, behavior: echo, segment_size: 4096}
    links:
      - id: 0
        address: "127.0.0.1:47100"
        endpoints:
          - {domain: 0, routes: [[2, 3]]}
          - {domain: 1, routes: [[0, 1]]}

In bridged mode the first endpoint of a link listens on ``address`` and
the second connects to it.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any

import yaml

from .bridge import LOCAL, RoutingTable
from .errors import ConfigInvalid, DuplicateRank, ParseError
from .noc import Topology, TopologyKind
from .segment import Placement

SOFTWARE = "software"
HARDWARE = "hardware"

_TOP_KEYS = {"seed", "trace", "cycles_max", "domains", "nodes", "links"}
_DOMAIN_KEYS = {"id", "topology", "num_nodes", "router_latency", "link_bytes_per_cycle"}
_NODE_KEYS = {"rank", "domain", "kind", "behavior", "segment_size", "placement"}
_LINK_KEYS = {"id", "address", "latency", "bytes_per_cycle", "endpoints"}
_ENDPOINT_KEYS = {"domain", "routes"}


@dataclass(frozen=True)
class DomainConfig:
    id: int
    topology: TopologyKind = TopologyKind.CROSSBAR
    num_nodes: int = 1
    router_latency: int = 4
    link_bytes_per_cycle: int = 4

    def to_topology(self) -> Topology:
        return Topology(self.topology, self.num_nodes, self.router_latency,
                        self.link_bytes_per_cycle)


@dataclass(frozen=True)
class NodeConfig:
    rank: int
    domain: int = 0
    kind: str = SOFTWARE
    behavior: str | None = None
    segment_size: int = 65536
    placement: Placement = Placement.ON_CHIP


@dataclass(frozen=True)
class LinkEndpoint:
    domain: int
    routes: tuple[tuple[int, int], ...]


@dataclass(frozen=True)
class LinkConfig:
    id: int
    endpoints: tuple[LinkEndpoint, LinkEndpoint]
    address: str | None = None
    latency: int = 16
    bytes_per_cycle: int = 4


@dataclass(frozen=True)
class SystemConfig:
    domains: tuple[DomainConfig, ...]
    nodes: tuple[NodeConfig, ...]
    links: tuple[LinkConfig, ...] = ()
    seed: int = 0
    trace: str | None = None
    cycles_max: int | None = None

    @property
    def size(self) -> int:
        return len(self.nodes)

    def node(self, rank: int) -> NodeConfig:
        return self.nodes[rank]

    def domain(self, domain_id: int) -> DomainConfig:
        for d in self.domains:
            if d.id == domain_id:
                return d
        raise ConfigInvalid(f"no domain {domain_id}")

    def ranks_in(self, domain_id: int) -> list[int]:
        return [n.rank for n in self.nodes if n.domain == domain_id]

    def domain_of(self, rank: int) -> int:
        return self.nodes[rank].domain

    def routing_table(self, domain_id: int) -> RoutingTable:
        entries = []
        run = None
        for r in self.ranks_in(domain_id):
            if run and r == run[1] + 1:
                run[1] = r
            else:
                run = [r, r]
                entries.append(run)
        entries = [(lo, hi, LOCAL) for lo, hi in entries]
        for link in self.links:
            for ep in link.endpoints:
                if ep.domain == domain_id:
                    entries.extend((lo, hi, link.id) for lo, hi in ep.routes)
        table = RoutingTable(entries)
        table.check_total(self.size)
        return table

    def with_seed(self, seed: int) -> "SystemConfig":
        return replace(self, seed=seed)

    def validate(self) -> "SystemConfig":
        _validate(self)
        return self


def _int(obj: dict, key: str, default=None, minimum: int | None = None) -> int:
    if key not in obj:
        if default is None:
            raise ConfigInvalid(f"missing key {key!r} in {obj!r}")
        return default
    value = obj[key]
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigInvalid(f"{key!r} must be an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigInvalid(f"{key!r} must be >= {minimum}, got {value}")
    return value


def _check_keys(obj: Any, allowed: set[str], where: str) -> dict:
    if not isinstance(obj, dict):
        raise ConfigInvalid(f"{where} must be a mapping, got {type(obj).__name__}")
    extra = set(obj) - allowed
    if extra:
        raise ConfigInvalid(f"unknown keys in {where}: {sorted(extra)}")
    return obj


def config_from_dict(raw: Any) -> SystemConfig:
    raw = _check_keys(raw, _TOP_KEYS, "config")
    try:
        domains = tuple(
            DomainConfig(
                id=_int(d, "id", minimum=0),
                topology=TopologyKind.parse(d.get("topology", "crossbar")),
                num_nodes=_int(d, "num_nodes", minimum=1),
                router_latency=_int(d, "router_latency", 4, minimum=1),
                link_bytes_per_cycle=_int(d, "link_bytes_per_cycle", 4, minimum=1),
            )
            for d in (_check_keys(d, _DOMAIN_KEYS, "domain") for d in raw.get("domains") or [])
        )
        nodes = []
        for n in raw.get("nodes") or []:
            _check_keys(n, _NODE_KEYS, "node")
            kind = str(n.get("kind", SOFTWARE)).lower()
            if kind not in (SOFTWARE, HARDWARE):
                raise ConfigInvalid(f"node kind must be software or hardware, got {kind!r}")
            behavior = n.get("behavior")
            if kind == HARDWARE and not behavior:
                raise ConfigInvalid(f"hardware node {n.get('rank')} needs a behavior")
            if kind == SOFTWARE and behavior:
                raise ConfigInvalid(f"software node {n.get('rank')} cannot have a behavior")
            nodes.append(NodeConfig(
                rank=_int(n, "rank", minimum=0),
                domain=_int(n, "domain", 0),
                kind=kind,
                behavior=behavior,
                segment_size=_int(n, "segment_size", minimum=1),
                placement=Placement.parse(n.get("placement", "onchip")),
            ))
        links = []
        for ln in raw.get("links") or []:
            _check_keys(ln, _LINK_KEYS, "link")
            eps = ln.get("endpoints")
            if not isinstance(eps, list) or len(eps) != 2:
                raise ConfigInvalid("a link needs exactly two endpoints")
            endpoints = []
            for ep in eps:
                _check_keys(ep, _ENDPOINT_KEYS, "link endpoint")
                routes = []
                for r in ep.get("routes") or []:
                    if (not isinstance(r, (list, tuple)) or len(r) != 2
                            or not all(isinstance(x, int) for x in r)):
                        raise ConfigInvalid(f"route must be [lo, hi], got {r!r}")
                    routes.append((r[0], r[1]))
                endpoints.append(LinkEndpoint(_int(ep, "domain"), tuple(routes)))
            address = ln.get("address")
            links.append(LinkConfig(
                id=_int(ln, "id", minimum=0),
                endpoints=tuple(endpoints),
                address=str(address) if address is not None else None,
                latency=_int(ln, "latency", 16, minimum=0),
                bytes_per_cycle=_int(ln, "bytes_per_cycle", 4, minimum=1),
            ))
        cycles_max = raw.get("cycles_max")
        cfg = SystemConfig(
            domains=domains,
            nodes=tuple(sorted(nodes, key=lambda n: n.rank)),
            links=tuple(links),
            seed=_int(raw, "seed", 0, minimum=0),
            trace=raw.get("trace"),
            cycles_max=_int(raw, "cycles_max", minimum=1) if cycles_max is not None else None,
        )
    except ValueError as exc:
        if isinstance(exc, ConfigInvalid):
            raise
        raise ConfigInvalid(str(exc)) from exc
    _validate(cfg, order=[n.get("rank") for n in raw.get("nodes") or []])
    return cfg


def _validate(cfg: SystemConfig, order=None) -> None:
    ranks = [n.rank for n in cfg.nodes] if order is None else order
    seen = set()
    for r in ranks:
        if r in seen:
            raise DuplicateRank(f"rank {r} appears more than once")
        seen.add(r)
    if not cfg.nodes:
        raise ConfigInvalid("config has no nodes")
    if sorted(seen) != list(range(len(seen))):
        raise ConfigInvalid(f"ranks must be dense 0..{len(seen) - 1}, got {sorted(seen)}")
    domain_ids = [d.id for d in cfg.domains]
    if len(set(domain_ids)) != len(domain_ids):
        raise ConfigInvalid("duplicate domain id")
    for d in cfg.domains:
        members = cfg.ranks_in(d.id)
        if len(members) != d.num_nodes:
            raise ConfigInvalid(f"domain {d.id} declares {d.num_nodes} nodes, has {len(members)}")
    for n in cfg.nodes:
        if n.domain not in domain_ids:
            raise ConfigInvalid(f"node {n.rank} names unknown domain {n.domain}")
    link_ids = [ln.id for ln in cfg.links]
    if len(set(link_ids)) != len(link_ids):
        raise ConfigInvalid("duplicate link id")
    for ln in cfg.links:
        a, b = ln.endpoints
        if a.domain == b.domain or a.domain not in domain_ids or b.domain not in domain_ids:
            raise ConfigInvalid(f"link {ln.id} must join two distinct known domains")
    for d in cfg.domains:
        cfg.routing_table(d.id)


def load_config(source: str | Path | dict) -> SystemConfig:
    if isinstance(source, dict):
        return config_from_dict(source)
    try:
        text = Path(source).read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read {source}: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ParseError(f"{source}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ParseError(f"{source}: top level must be a mapping")
    return config_from_dict(raw)


def simple_config(num_nodes: int, *, topology: str = "crossbar", segment_size: int = 65536,
                  router_latency: int = 4, link_bytes_per_cycle: int = 4,
                  hardware: dict[int, str] | None = None, seed: int = 0,
                  domains: int = 1, link_latency: int = 16) -> SystemConfig:
    """Build a config of ``num_nodes`` nodes split evenly over ``domains`` chip domains.

    With more than one domain the domains are chained by links, each link
    carrying every rank that lies on the far side of it.
    """
    hardware = hardware or {}
    if num_nodes % domains:
        raise ConfigInvalid(f"{num_nodes} nodes do not split over {domains} domains")
    per = num_nodes // domains
    doms = [{"id": d, "topology": topology, "num_nodes": per, "router_latency": router_latency,
             "link_bytes_per_cycle": link_bytes_per_cycle} for d in range(domains)]
    nodes = []
    for r in range(num_nodes):
        n = {"rank": r, "domain": r // per, "segment_size": segment_size}
        if r in hardware:
            n.update(kind=HARDWARE, behavior=hardware[r])
        nodes.append(n)
    links = []
    for d in range(domains - 1):
        split = (d + 1) * per
        links.append({"id": d, "latency": link_latency, "endpoints": [
            {"domain": d, "routes": [[split, num_nodes - 1]]},
            {"domain": d + 1, "routes": [[0, split - 1]]},
        ]})
    return config_from_dict({"seed": seed, "domains": doms, "nodes": nodes, "links": links})
