"""Payment channel network graph model.

A channel network is a loopless multigraph.  The full graph carries private
per-direction balances and true edge latencies; the public view exposes only
capacities, fee policies, time-lock deltas and enabled flags, which is all a
routing node (or an attacker) legitimately sees.

Amounts are millisatoshi throughout; snapshot capacities arrive in satoshi
and are scaled by 1000 on ingestion so fees never go fractional.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field, replace

import networkx as nx
import numpy as np

from .latency import Gaussian

log = logging.getLogger(__name__)

NodeId = str
ChannelId = str

MSAT_PER_SAT = 1000

# Fallback round-trip entry when a region pair is missing from the table;
# one-way latencies are half of these.
GLOBAL_DEFAULT_RTT = (250.0, 50.0)


class SnapshotError(ValueError):
    """Malformed snapshot document."""


@dataclass
class DirectedPolicy:
    """One direction of a channel: spendable balance plus forwarding terms."""

    base_fee_msat: int = 0
    fee_rate_ppm: int = 0
    timelock_delta: int = 0
    enabled: bool = True
    balance_msat: int | None = None

    def __post_init__(self):
        if self.base_fee_msat < 0 or self.fee_rate_ppm < 0 or self.timelock_delta < 0:
            raise ValueError("policy fields must be non-negative")
        if self.balance_msat is not None and self.balance_msat < 0:
            raise ValueError("balance must be non-negative")

    @property
    def fee_rate(self) -> float:
        """Dimensionless proportional fee rate."""
        return self.fee_rate_ppm / 1_000_000

    def fee_msat(self, amount_msat: int) -> int:
        """Forwarding fee: base_fee + floor(amount * rate), exact in msat."""
        return self.base_fee_msat + (amount_msat * self.fee_rate_ppm) // 1_000_000


@dataclass
class Channel:
    """Bidirectional payment channel between u and v (u < v lexicographically)."""

    id: ChannelId
    u: NodeId
    v: NodeId
    capacity_msat: int
    policy_uv: DirectedPolicy
    policy_vu: DirectedPolicy
    latency: Gaussian | None = None

    def __post_init__(self):
        if self.u == self.v:
            raise ValueError(f"channel {self.id} is a self-loop")
        if self.capacity_msat < 0:
            raise ValueError("capacity must be non-negative")

    def other_end(self, node: NodeId) -> NodeId:
        if node == self.u:
            return self.v
        if node == self.v:
            return self.u
        raise KeyError(f"{node} is not an endpoint of {self.id}")

    def policy_from(self, node: NodeId) -> DirectedPolicy:
        """Policy governing forwards leaving `node` over this channel."""
        if node == self.u:
            return self.policy_uv
        if node == self.v:
            return self.policy_vu
        raise KeyError(f"{node} is not an endpoint of {self.id}")


@dataclass
class Node:
    id: NodeId
    region: str | None = None


@dataclass
class _GraphBase:
    nodes: dict[NodeId, Node] = field(default_factory=dict)
    channels: dict[ChannelId, Channel] = field(default_factory=dict)
    adjacency: dict[NodeId, list[ChannelId]] = field(default_factory=dict)

    def add_node(self, node: Node) -> None:
        if not node.id:
            raise ValueError("node id must be non-empty")
        self.nodes[node.id] = node
        self.adjacency.setdefault(node.id, [])

    def add_channel(self, channel: Channel) -> None:
        if channel.id in self.channels:
            raise ValueError(f"duplicate channel id {channel.id}")
        if channel.u not in self.nodes or channel.v not in self.nodes:
            raise KeyError(f"channel {channel.id} references unknown node")
        self.channels[channel.id] = channel
        self.adjacency[channel.u].append(channel.id)
        self.adjacency[channel.v].append(channel.id)

    def channels_at(self, node: NodeId) -> list[Channel]:
        return [self.channels[cid] for cid in self.adjacency.get(node, [])]

    def neighbors(self, node: NodeId) -> list[NodeId]:
        seen = {}
        for ch in self.channels_at(node):
            seen.setdefault(ch.other_end(node), None)
        return list(seen)


@dataclass
class FullGraph(_GraphBase):
    """Ground-truth view: balances and latencies populated."""

    rejections: list[str] = field(default_factory=list)

    def check_conservation(self) -> None:
        """Every channel's directional balances must sum to its capacity."""
        for ch in self.channels.values():
            bal_uv = ch.policy_uv.balance_msat
            bal_vu = ch.policy_vu.balance_msat
            if bal_uv is None or bal_vu is None:
                raise ConservationError(f"channel {ch.id} has unset balances")
            if bal_uv + bal_vu != ch.capacity_msat:
                raise ConservationError(
                    f"channel {ch.id}: {bal_uv} + {bal_vu} != {ch.capacity_msat}"
                )


@dataclass
class PublicGraph(_GraphBase):
    """Gossip-level view: no balances, no latencies."""


class ConservationError(AssertionError):
    """A channel's balances no longer sum to its capacity."""


# ---------------------------------------------------------------------------
# snapshot ingestion


def _parse_policy(raw, record_name: str) -> DirectedPolicy:
    if raw is None:
        # one-sided channel: keep the edge, disable the unknown direction
        return DirectedPolicy(enabled=False)
    try:
        return DirectedPolicy(
            base_fee_msat=int(raw.get("base_fee_msat", 0)),
            fee_rate_ppm=int(raw.get("fee_rate_ppm", 0)),
            timelock_delta=int(raw.get("time_lock_delta", 0)),
            enabled=not bool(raw.get("disabled", False)),
        )
    except (TypeError, ValueError, AttributeError) as exc:
        raise SnapshotError(f"malformed policy in {record_name}: {exc}") from exc


def load_snapshot(document: dict) -> FullGraph:
    """Build a FullGraph from a snapshot document.

    Channels referencing unknown nodes (or forming self-loops) are skipped
    and reported in graph.rejections; structurally malformed records raise
    SnapshotError naming the offending record.
    """
    if not isinstance(document, dict):
        raise SnapshotError("snapshot document must be a mapping")
    g = FullGraph()
    for i, raw in enumerate(document.get("nodes", [])):
        name = f"nodes[{i}]"
        try:
            pub_key = raw["pub_key"]
        except (TypeError, KeyError) as exc:
            raise SnapshotError(f"{name}: missing pub_key") from exc
        if not pub_key:
            raise SnapshotError(f"{name}: empty pub_key")
        g.add_node(Node(id=pub_key, region=raw.get("region")))
    for i, raw in enumerate(document.get("edges", [])):
        name = f"edges[{i}]"
        try:
            cid = raw["channel_id"]
            n1, n2 = raw["node1_pub"], raw["node2_pub"]
            cap_sat = int(raw["capacity_sat"])
        except (TypeError, KeyError, ValueError) as exc:
            raise SnapshotError(f"{name}: {exc}") from exc
        if cid in g.channels:
            raise SnapshotError(f"{name}: duplicate channel_id {cid}")
        if n1 not in g.nodes or n2 not in g.nodes:
            g.rejections.append(f"{name} ({cid}): dangling endpoint")
            continue
        if n1 == n2:
            g.rejections.append(f"{name} ({cid}): self-loop")
            continue
        p1 = _parse_policy(raw.get("node1_policy"), name)
        p2 = _parse_policy(raw.get("node2_policy"), name)
        if n1 > n2:
            n1, n2 = n2, n1
            p1, p2 = p2, p1
        g.add_channel(
            Channel(
                id=cid,
                u=n1,
                v=n2,
                capacity_msat=cap_sat * MSAT_PER_SAT,
                policy_uv=p1,
                policy_vu=p2,
            )
        )
    if g.rejections:
        log.warning("snapshot load rejected %d channel records", len(g.rejections))
    return g


def serialize_snapshot(g: FullGraph | PublicGraph) -> dict:
    """Inverse of load_snapshot on the retained channel set."""
    nodes = [
        {"pub_key": n.id, **({"region": n.region} if n.region else {})}
        for n in g.nodes.values()
    ]
    edges = []
    for ch in g.channels.values():
        edges.append(
            {
                "channel_id": ch.id,
                "node1_pub": ch.u,
                "node2_pub": ch.v,
                "capacity_sat": ch.capacity_msat // MSAT_PER_SAT,
                "node1_policy": _policy_doc(ch.policy_uv),
                "node2_policy": _policy_doc(ch.policy_vu),
            }
        )
    return {"nodes": nodes, "edges": edges}


def _policy_doc(p: DirectedPolicy) -> dict:
    return {
        "base_fee_msat": p.base_fee_msat,
        "fee_rate_ppm": p.fee_rate_ppm,
        "time_lock_delta": p.timelock_delta,
        "disabled": not p.enabled,
    }


def convert_describegraph(dump: dict) -> dict:
    """Map an LND `describegraph` dump onto the snapshot schema.

    Field mapping: capacity (sat string) -> capacity_sat, fee_base_msat ->
    base_fee_msat, fee_rate_milli_msat (millionths) -> fee_rate_ppm,
    time_lock_delta and disabled pass through.  Nodes carry no region in an
    LND dump, so regions are assigned later by assign_latencies.
    """
    nodes = [{"pub_key": n["pub_key"]} for n in dump.get("nodes", [])]
    edges = []
    for e in dump.get("edges", []):
        rec = {
            "channel_id": str(e["channel_id"]),
            "node1_pub": e["node1_pub"],
            "node2_pub": e["node2_pub"],
            "capacity_sat": int(e["capacity"]),
        }
        for src_key, dst_key in (("node1_policy", "node1_policy"), ("node2_policy", "node2_policy")):
            raw = e.get(src_key)
            rec[dst_key] = (
                None
                if raw is None
                else {
                    "base_fee_msat": int(raw.get("fee_base_msat", 0)),
                    "fee_rate_ppm": int(raw.get("fee_rate_milli_msat", 0)),
                    "time_lock_delta": int(raw.get("time_lock_delta", 0)),
                    "disabled": bool(raw.get("disabled", False)),
                }
            )
        edges.append(rec)
    return {"nodes": nodes, "edges": edges}


# ---------------------------------------------------------------------------
# balances and latencies


def init_balances(g: FullGraph, policy: str = "half") -> FullGraph:
    """Split each channel's capacity into directional balances.

    "half" gives each side capacity//2; an odd msat goes to the
    lexicographically smaller endpoint so runs are reproducible.
    """
    if policy != "half":
        raise ValueError(f"unknown balance policy {policy!r}")
    for ch in g.channels.values():
        half = ch.capacity_msat // 2
        ch.policy_uv.balance_msat = ch.capacity_msat - half
        ch.policy_vu.balance_msat = half
    return g


@dataclass
class RegionLatencyTable:
    """Round-trip-time table keyed by unordered region pair (ms)."""

    entries: dict[tuple[str, str], tuple[float, float]] = field(default_factory=dict)
    default_rtt: tuple[float, float] = GLOBAL_DEFAULT_RTT

    @staticmethod
    def _key(a: str, b: str) -> tuple[str, str]:
        return (a, b) if a <= b else (b, a)

    def add(self, region_a: str, region_b: str, rtt_mean_ms: float, rtt_std_ms: float) -> None:
        self.entries[self._key(region_a, region_b)] = (rtt_mean_ms, rtt_std_ms)

    def lookup_one_way(self, region_a: str, region_b: str) -> Gaussian:
        """One-way Gaussian for a region pair: half of the measured RTT."""
        rtt = self.entries.get(self._key(region_a, region_b), self.default_rtt)
        return Gaussian(rtt[0] / 2.0, rtt[1] / 2.0)

    def regions(self) -> list[str]:
        out = sorted({r for pair in self.entries for r in pair})
        return out

    @classmethod
    def from_rows(cls, rows) -> "RegionLatencyTable":
        t = cls()
        for region_a, region_b, mean, std in rows:
            t.add(region_a, region_b, float(mean), float(std))
        return t


# Desk-scale defaults: intra-EU/NA links are fast, cross-continent links
# slow, everything below the ~500 ms ceiling observed in the wild, with the
# global median round trip around 250 ms.
DEFAULT_REGION_RTT = RegionLatencyTable.from_rows(
    [
        ("EU", "EU", 40, 12),
        ("NA", "NA", 60, 18),
        ("AS", "AS", 90, 28),
        ("OC", "OC", 70, 20),
        ("SA", "SA", 110, 30),
        ("CN", "CN", 100, 30),
        ("AF", "AF", 130, 40),
        ("EU", "NA", 110, 25),
        ("AS", "EU", 240, 50),
        ("AS", "NA", 180, 45),
        ("EU", "OC", 290, 55),
        ("NA", "OC", 190, 45),
        ("EU", "SA", 220, 45),
        ("NA", "SA", 160, 40),
        ("CN", "EU", 310, 60),
        ("CN", "NA", 250, 55),
        ("AF", "EU", 200, 50),
        ("AF", "NA", 260, 55),
        ("AS", "OC", 160, 40),
        ("AS", "CN", 120, 35),
    ]
)


def assign_latencies(
    g: FullGraph, table: RegionLatencyTable, rng_seed: int
) -> FullGraph:
    """Give every channel a one-way latency Gaussian from the region table.

    Nodes without a region get one drawn uniformly from the table's regions,
    deterministically from rng_seed.  Missing region pairs fall back to the
    table's global default entry.
    """
    rng = np.random.default_rng(rng_seed)
    regions = table.regions()
    assigned: dict[NodeId, str | None] = {}
    for node_id in sorted(g.nodes):
        node = g.nodes[node_id]
        if node.region is not None:
            assigned[node_id] = node.region
        elif regions:
            assigned[node_id] = regions[int(rng.integers(len(regions)))]
        else:
            assigned[node_id] = None
    for cid in sorted(g.channels):
        ch = g.channels[cid]
        ra, rb = assigned[ch.u], assigned[ch.v]
        if ra is None or rb is None:
            rtt = table.default_rtt
            ch.latency = Gaussian(rtt[0] / 2.0, rtt[1] / 2.0)
        else:
            ch.latency = table.lookup_one_way(ra, rb)
    return g


# ---------------------------------------------------------------------------
# public projection and centrality


def public_view(g: FullGraph) -> PublicGraph:
    """Strip balances and latencies; everything else is copied."""
    pub = PublicGraph()
    for node in g.nodes.values():
        pub.add_node(Node(id=node.id, region=node.region))
    for ch in g.channels.values():
        pub.add_channel(
            Channel(
                id=ch.id,
                u=ch.u,
                v=ch.v,
                capacity_msat=ch.capacity_msat,
                policy_uv=replace(ch.policy_uv, balance_msat=None),
                policy_vu=replace(ch.policy_vu, balance_msat=None),
                latency=None,
            )
        )
    return pub


def betweenness_ranking(g: PublicGraph | FullGraph) -> list[NodeId]:
    """Nodes by descending shortest-path betweenness, ties by ascending id.

    Unit edge weights; parallel channels collapse to a single edge.
    """
    nxg = nx.Graph()
    nxg.add_nodes_from(g.nodes)
    for ch in g.channels.values():
        nxg.add_edge(ch.u, ch.v)
    scores = nx.betweenness_centrality(nxg, normalized=False)
    return sorted(g.nodes, key=lambda n: (-scores.get(n, 0.0), n))


def copy_graph(g: FullGraph) -> FullGraph:
    """Deep copy, so one loaded snapshot can seed many runs."""
    return copy.deepcopy(g)
