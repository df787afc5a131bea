"""Source routing over the public graph.

Route search runs backward from the destination so the per-hop forwarding
amounts are exact: the last edge carries the payment amount and every edge
before it adds the downstream forwarder's fee.  Edge selection minimizes
fee(a) + a * timelock_delta * risk_factor, the weight most deployed client
software uses.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

from .graph import Channel, ChannelId, DirectedPolicy, FullGraph, NodeId, PublicGraph

DEFAULT_RISK_FACTOR = 1.5e-8
DEFAULT_FINAL_CLTV_DELTA = 40


@dataclass(frozen=True)
class RoutingParams:
    risk_factor: float = DEFAULT_RISK_FACTOR
    final_cltv_delta: int = DEFAULT_FINAL_CLTV_DELTA

    def __post_init__(self):
        if self.risk_factor < 0 or self.final_cltv_delta < 0:
            raise ValueError("routing params must be non-negative")


@dataclass(frozen=True)
class Payment:
    """A transfer request: amount in msat, max_timelock in blocks.

    max_timelock None means the sender imposes no lock budget; the budget is
    then derived from the route actually chosen.
    """

    source: NodeId
    dest: NodeId
    amount_msat: int
    max_timelock: int | None = None

    def __post_init__(self):
        if self.source == self.dest:
            raise ValueError("source and destination must differ")
        if self.amount_msat <= 0:
            raise ValueError("amount must be positive")


@dataclass(frozen=True)
class Hop:
    channel: ChannelId
    frm: NodeId
    to: NodeId
    forward_amount_msat: int
    remaining_timelock: int


@dataclass(frozen=True)
class PaymentPath:
    hops: tuple[Hop, ...]

    def __post_init__(self):
        for a, b in zip(self.hops, self.hops[1:]):
            if a.to != b.frm:
                raise ValueError(f"hops do not chain at {a.to} -> {b.frm}")

    @property
    def source(self) -> NodeId:
        return self.hops[0].frm

    @property
    def dest(self) -> NodeId:
        return self.hops[-1].to

    def nodes(self) -> list[NodeId]:
        return [self.hops[0].frm] + [h.to for h in self.hops]

    def intermediaries(self) -> list[NodeId]:
        return [h.to for h in self.hops[:-1]]


@dataclass(frozen=True)
class ReachabilitySubgraph:
    kind: str  # "capacity" | "balance" | "timelock"
    anchor: NodeId
    direction: str  # "from-anchor" | "toward-anchor"
    members: frozenset[NodeId]


def edge_weight(amount_msat: int, policy: DirectedPolicy, params: RoutingParams) -> float:
    """Routing weight of forwarding `amount_msat` under `policy`."""
    if amount_msat <= 0:
        raise ValueError("amount must be positive")
    if not policy.enabled:
        return math.inf
    return (
        policy.fee_msat(amount_msat)
        + amount_msat * policy.timelock_delta * params.risk_factor
    )


def forwarded_amount(policy: DirectedPolicy, incoming_msat: int) -> int | None:
    """Largest f with f + fee(f) <= incoming, or None if no positive f fits.

    Inverts the fee recursion when walking a path in payment direction,
    where only the delivered amount is known.
    """
    f = incoming_msat - policy.base_fee_msat - (incoming_msat * policy.fee_rate_ppm) // 1_000_000
    if f < 1:
        return None
    while f + policy.fee_msat(f) > incoming_msat:
        f -= 1
        if f < 1:
            return None
    while f + 1 + policy.fee_msat(f + 1) <= incoming_msat:
        f += 1
    return f


def cheapest_edge(
    g: PublicGraph | FullGraph,
    frm: NodeId,
    to: NodeId,
    amount_msat: int,
    params: RoutingParams,
) -> Channel | None:
    """Lowest-weight enabled channel from `frm` to `to`; ties by channel id."""
    best: tuple[float, str] | None = None
    best_ch = None
    for ch in g.channels_at(frm):
        if ch.other_end(frm) != to:
            continue
        w = edge_weight(amount_msat, ch.policy_from(frm), params)
        if math.isinf(w):
            continue
        key = (w, ch.id)
        if best is None or key < best:
            best = key
            best_ch = ch
    return best_ch


# ---------------------------------------------------------------------------
# validity predicates


def is_timelock_valid(path: PaymentPath, max_timelock: int, g: PublicGraph | FullGraph) -> bool:
    """Literal check: every hop's delta covers the budget left after its
    predecessors, delta(e_i) >= max_timelock - sum(delta(e_j), j < i)."""
    consumed = 0
    for hop in path.hops:
        delta = g.channels[hop.channel].policy_from(hop.frm).timelock_delta
        if delta < max_timelock - consumed:
            return False
        consumed += delta
    return True


def _forward_amounts(path: PaymentPath, amount_msat: int, g) -> list[int]:
    """f_i per hop from the recursion f_last = amount, f_{i-1} = f_i + fee(e_i, f_i)."""
    amounts = [0] * len(path.hops)
    f = amount_msat
    for i in range(len(path.hops) - 1, -1, -1):
        amounts[i] = f
        if i > 0:
            policy = g.channels[path.hops[i].channel].policy_from(path.hops[i].frm)
            f = f + policy.fee_msat(f)
    return amounts


def is_capacity_valid(path: PaymentPath, amount_msat: int, g: PublicGraph | FullGraph) -> bool:
    """cap(e_i) >= f_i for every hop (vacuously true for an empty path)."""
    if not path.hops:
        return True
    for hop, f in zip(path.hops, _forward_amounts(path, amount_msat, g)):
        if g.channels[hop.channel].capacity_msat < f:
            return False
    return True


def is_balance_valid(path: PaymentPath, amount_msat: int, g_full: FullGraph) -> bool:
    """bal(e_i, from_i -> to_i) >= f_i for every hop."""
    if not path.hops:
        return True
    for hop, f in zip(path.hops, _forward_amounts(path, amount_msat, g_full)):
        bal = g_full.channels[hop.channel].policy_from(hop.frm).balance_msat
        if bal is None or bal < f:
            return False
    return True


def total_route_delta(path: PaymentPath, g) -> int:
    return sum(g.channels[h.channel].policy_from(h.frm).timelock_delta for h in path.hops)


# ---------------------------------------------------------------------------
# route search


def find_route(
    g: PublicGraph, payment: Payment, params: RoutingParams | None = None
) -> PaymentPath | None:
    """Cheapest capacity-valid route, or None.

    Backward Dijkstra from the destination; tie-breaks on (weight,
    hop count, node id) for deterministic replay.  When the payment carries
    a max_timelock, edges whose accumulated deltas plus the final delta
    would exceed it are not taken.
    """
    params = params or RoutingParams()
    if payment.source not in g.nodes or payment.dest not in g.nodes:
        raise KeyError("payment endpoints missing from graph")
    # state per node: (weight from node to dest, hops, amount the node must
    # receive, timelock consumed downstream of the node)
    best: dict[NodeId, tuple[float, int]] = {payment.dest: (0.0, 0)}
    req_in: dict[NodeId, int] = {payment.dest: payment.amount_msat}
    consumed: dict[NodeId, int] = {payment.dest: 0}
    succ: dict[NodeId, tuple[ChannelId, NodeId, int, int]] = {}
    heap: list[tuple[float, int, NodeId]] = [(0.0, 0, payment.dest)]
    settled: set[NodeId] = set()
    while heap:
        w_u, hops_u, u = heapq.heappop(heap)
        if u in settled:
            continue
        settled.add(u)
        if u == payment.source:
            break
        amount_over_edge = req_in[u]
        delta_u = consumed[u]
        for ch in g.channels_at(u):
            x = ch.other_end(u)
            if x in settled:
                continue
            policy = ch.policy_from(x)  # x would forward toward u
            w_e = edge_weight(amount_over_edge, policy, params)
            if math.isinf(w_e):
                continue
            if ch.capacity_msat < amount_over_edge:
                continue
            delta_x = delta_u + policy.timelock_delta
            if (
                payment.max_timelock is not None
                and delta_x + params.final_cltv_delta > payment.max_timelock
            ):
                continue
            cand = (w_u + w_e, hops_u + 1)
            if x in best and best[x] <= cand:
                continue
            best[x] = cand
            req_in[x] = amount_over_edge + policy.fee_msat(amount_over_edge)
            consumed[x] = delta_x
            succ[x] = (ch.id, u, amount_over_edge, policy.timelock_delta)
            heapq.heappush(heap, (cand[0], cand[1], x))
    if payment.source not in succ:
        return None
    # walk successor pointers source -> dest
    raw: list[tuple[ChannelId, NodeId, NodeId, int, int]] = []
    node = payment.source
    while node != payment.dest:
        cid, nxt, amount, delta = succ[node]
        raw.append((cid, node, nxt, amount, delta))
        node = nxt
    if payment.max_timelock is not None:
        budget = payment.max_timelock
    else:
        budget = sum(r[4] for r in raw) + params.final_cltv_delta
    hops = []
    remaining = budget
    for cid, frm, to, amount, delta in raw:
        hops.append(
            Hop(
                channel=cid,
                frm=frm,
                to=to,
                forward_amount_msat=amount,
                remaining_timelock=remaining,
            )
        )
        remaining -= delta
    return PaymentPath(hops=tuple(hops))


def path_from_channels(
    g: PublicGraph | FullGraph,
    start: NodeId,
    channel_ids: list[ChannelId],
    amount_msat: int,
    params: RoutingParams | None = None,
    max_timelock: int | None = None,
) -> PaymentPath:
    """Build a concrete payment path along the given channels.

    Forward amounts follow the fee recursion anchored at `amount_msat`
    delivered to the last node; the lock budget defaults to the route's
    summed deltas plus the final delta.  Used for crafted probe payments
    and fixtures, where the path is chosen rather than searched.
    """
    params = params or RoutingParams()
    seq: list[tuple[ChannelId, NodeId, NodeId, int]] = []
    node = start
    for cid in channel_ids:
        ch = g.channels[cid]
        nxt = ch.other_end(node)
        seq.append((cid, node, nxt, ch.policy_from(node).timelock_delta))
        node = nxt
    amounts = [0] * len(seq)
    f = amount_msat
    for i in range(len(seq) - 1, -1, -1):
        amounts[i] = f
        if i > 0:
            cid, frm, _, _ = seq[i]
            f = f + g.channels[cid].policy_from(frm).fee_msat(f)
    budget = (
        max_timelock
        if max_timelock is not None
        else sum(d for _, _, _, d in seq) + params.final_cltv_delta
    )
    hops = []
    remaining = budget
    for (cid, frm, to, delta), amount in zip(seq, amounts):
        hops.append(
            Hop(
                channel=cid,
                frm=frm,
                to=to,
                forward_amount_msat=amount,
                remaining_timelock=remaining,
            )
        )
        remaining -= delta
    return PaymentPath(hops=tuple(hops))


# ---------------------------------------------------------------------------
# reachability


@dataclass(frozen=True)
class TraversalRules:
    """Feasibility rules for walking candidate payment paths.

    Shared by reachability, the anonymity-set reduction, the endpoint
    estimators' candidate search and their brute-force test oracles, so all
    of them agree on what a feasible path is.
    """

    direction: str  # "from-anchor" | "toward-anchor"
    apply_fees: bool = True
    check_capacity: bool = True
    check_balance: bool = False
    timelock_budget: int | None = None

    def step(self, node: NodeId, channel: Channel, amount: int, delta_used: int):
        """State after crossing `channel` away from `node`, None if infeasible.

        State is (amount over the next edge, timelock consumed so far); the
        delta component stays 0 when no budget applies so it never distorts
        dominance checks.
        """
        if self.direction == "from-anchor":
            policy = channel.policy_from(node)
            if not policy.enabled:
                return None
            if self.apply_fees:
                nxt = forwarded_amount(policy, amount)
                if nxt is None:
                    return None
            else:
                nxt = amount
            if self.check_capacity and channel.capacity_msat < nxt:
                return None
            if self.check_balance:
                bal = policy.balance_msat
                if bal is None or bal < nxt:
                    return None
            if self.timelock_budget is None:
                return nxt, 0
            delta = delta_used + policy.timelock_delta
            if delta > self.timelock_budget:
                return None
            return nxt, delta
        # toward-anchor: the payment flowed other-end -> node, so the walk
        # moves against it and the amount grows by the fee of the edge the
        # walk just crossed.  `amount` is what arrived at `node`.
        other = channel.other_end(node)
        policy = channel.policy_from(other)
        if not policy.enabled:
            return None
        if self.check_capacity and channel.capacity_msat < amount:
            return None
        if self.check_balance:
            bal = policy.balance_msat
            if bal is None or bal < amount:
                return None
        nxt = amount + policy.fee_msat(amount) if self.apply_fees else amount
        return nxt, 0


def feasible_endpoints(
    g,
    anchor: NodeId,
    amount_msat: int,
    rules: TraversalRules,
    edge_candidates,
    forbidden: frozenset[NodeId] = frozenset(),
) -> frozenset[NodeId]:
    """Nodes reached by at least one feasible simple path from the anchor.

    Exhaustive DFS over simple paths.  Feasibility is path-level, so states
    from different paths are never merged; a node joins the set as soon as
    one prefix reaching it satisfies every constraint.  A lock budget or
    tight capacities bound the search depth; without either this is
    enumeration-scale machinery for fixtures and diagnostics (the route
    search and the estimators carry their own incremental checks).
    """
    members = {anchor}
    stack = [(anchor, amount_msat, 0, frozenset({anchor}) | forbidden)]
    while stack:
        node, amount, delta_used, visited = stack.pop()
        for ch in edge_candidates(g, node, amount):
            nxt_node = ch.other_end(node)
            if nxt_node in visited:
                continue
            state = rules.step(node, ch, amount, delta_used)
            if state is None:
                continue
            members.add(nxt_node)
            stack.append((nxt_node, state[0], state[1], visited | {nxt_node}))
    return frozenset(members)


def _all_edges(g, node, _amount):
    return g.channels_at(node)


def reachability_subgraph(
    g: PublicGraph | FullGraph,
    anchor: NodeId,
    amount_msat: int,
    max_timelock: int | None,
    kind: str,
    direction: str = "from-anchor",
) -> ReachabilitySubgraph:
    """Nodes reachable from/to `anchor` under one validity notion.

    `amount_msat` is the amount arriving at the anchor on the observed edge;
    walking away from the anchor it shrinks by fees, walking toward it it
    grows.  For kind "timelock", fees are ignored and crossings accumulate
    time-lock deltas against `max_timelock`; upstream traversal carries no
    timelock constraint since the sender's budget is unknown from below.
    """
    if kind not in ("capacity", "balance", "timelock"):
        raise ValueError(f"unknown reachability kind {kind!r}")
    if direction not in ("from-anchor", "toward-anchor"):
        raise ValueError(f"unknown direction {direction!r}")
    if anchor not in g.nodes:
        raise KeyError(anchor)
    rules = TraversalRules(
        direction=direction,
        apply_fees=(kind != "timelock"),
        check_capacity=(kind == "capacity"),
        check_balance=(kind == "balance"),
        timelock_budget=(
            max_timelock if kind == "timelock" and direction == "from-anchor" else None
        ),
    )
    members = feasible_endpoints(g, anchor, amount_msat, rules, _all_edges)
    return ReachabilitySubgraph(
        kind=kind, anchor=anchor, direction=direction, members=members
    )
