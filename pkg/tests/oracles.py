"""Independent brute-force oracles.

Everything here recomputes results from first principles (exhaustive
enumeration over simple paths, direct formula evaluation) without calling
the search code under test, so the two routes to each answer stay
independent.
"""

from __future__ import annotations

import math
from collections import deque


def fee(policy, amount):
    return policy.base_fee_msat + (amount * policy.fee_rate_ppm) // 1_000_000


def brute_betweenness(g) -> dict[str, float]:
    """Shortest-path betweenness by explicit enumeration of all shortest
    paths between every node pair (unit weights, parallel edges collapsed)."""
    adj: dict[str, set[str]] = {n: set() for n in g.nodes}
    for ch in g.channels.values():
        adj[ch.u].add(ch.v)
        adj[ch.v].add(ch.u)
    scores = {n: 0.0 for n in g.nodes}
    nodes = sorted(g.nodes)
    for i, s in enumerate(nodes):
        # BFS levels from s
        dist = {s: 0}
        q = deque([s])
        while q:
            x = q.popleft()
            for y in adj[x]:
                if y not in dist:
                    dist[y] = dist[x] + 1
                    q.append(y)
        for t in nodes[i + 1 :]:
            if t not in dist or t == s:
                continue
            # enumerate all shortest s-t paths by DFS constrained to levels
            all_paths = []

            def dfs(node, path):
                if node == t:
                    all_paths.append(list(path))
                    return
                for y in adj[node]:
                    if dist.get(y) == dist[node] + 1 and dist[y] <= dist[t]:
                        path.append(y)
                        dfs(y, path)
                        path.pop()

            dfs(s, [s])
            if not all_paths:
                continue
            share = 1.0 / len(all_paths)
            for p in all_paths:
                for interior in p[1:-1]:
                    scores[interior] += share
    return scores


def _simple_paths(g, source, dest):
    """All simple paths source -> dest as channel-object sequences."""
    out = []

    def dfs(node, visited, channels):
        if node == dest:
            out.append(list(channels))
            return
        for ch in g.channels_at(node):
            other = ch.other_end(node)
            if other in visited:
                continue
            visited.add(other)
            channels.append((ch, node))
            dfs(other, visited, channels)
            channels.pop()
            visited.remove(other)

    dfs(source, {source}, [])
    return out


def path_amounts(g, channel_seq, amount):
    """Forward amounts per edge: the last edge delivers `amount`, every
    earlier edge adds the downstream forwarder's fee."""
    amounts = [0] * len(channel_seq)
    f = amount
    for i in range(len(channel_seq) - 1, -1, -1):
        amounts[i] = f
        if i > 0:
            ch, frm = channel_seq[i]
            f = f + fee(ch.policy_from(frm), f)
    return amounts


def brute_route(g, source, dest, amount, risk_factor, max_timelock=None, final_cltv=40):
    """Minimum total weight over all capacity-valid simple paths, or None."""
    best = None
    for channel_seq in _simple_paths(g, source, dest):
        amounts = path_amounts(g, channel_seq, amount)
        ok = True
        weight = 0.0
        delta_sum = 0
        for (ch, frm), f in zip(channel_seq, amounts):
            policy = ch.policy_from(frm)
            if not policy.enabled or ch.capacity_msat < f:
                ok = False
                break
            weight += fee(policy, f) + f * policy.timelock_delta * risk_factor
            delta_sum += policy.timelock_delta
        if not ok:
            continue
        if max_timelock is not None and delta_sum + final_cltv > max_timelock:
            continue
        if best is None or weight < best:
            best = weight
    return best


def _inverted_amount(policy, incoming):
    """Largest f >= 1 with f + fee(f) <= incoming, by plain scan from an
    upper bound (amounts here are test-sized)."""
    f = incoming - policy.base_fee_msat
    while f >= 1 and f + fee(policy, f) > incoming:
        f -= 1
    return f if f >= 1 else None


def _cheapest(g, frm, to, amount, risk_factor):
    best_key = None
    best = None
    for ch in g.channels_at(frm):
        if ch.other_end(frm) != to:
            continue
        policy = ch.policy_from(frm)
        if not policy.enabled:
            continue
        w = fee(policy, amount) + amount * policy.timelock_delta * risk_factor
        key = (w, ch.id)
        if best_key is None or key < best_key:
            best_key, best = key, ch
    return best


def candidate_paths(
    g,
    anchor,
    seed_amount,
    direction,
    budget=None,
    risk_factor=1.5e-8,
    forbidden=(),
):
    """All feasible simple candidate paths beyond the observed edge.

    Yields (endpoint, edge_id_list).  Walks use the cheapest channel per
    node pair at the current amount.  Downstream ("from-anchor") the amount
    shrinks by fees and each edge must have capacity for it; consumed
    time-lock deltas must stay within `budget` when one is given.  Upstream
    ("toward-anchor") the amount grows by the fee of the edge just crossed
    and no lock budget applies.  The empty path (the anchor itself) is
    always yielded.
    """
    results = []

    def dfs(node, amount, used_delta, visited, edges):
        results.append((node, list(edges)))
        for nb in sorted(set(g.neighbors(node)) - visited):
            if direction == "from-anchor":
                ch = _cheapest(g, node, nb, amount, risk_factor)
                if ch is None:
                    continue
                policy = ch.policy_from(node)
                nxt = _inverted_amount(policy, amount)
                if nxt is None or ch.capacity_msat < nxt:
                    continue
                delta = used_delta + policy.timelock_delta
                if budget is not None and delta > budget:
                    continue
                dfs(nb, nxt, delta, visited | {nb}, edges + [ch.id])
            else:
                ch = _cheapest(g, nb, node, amount, risk_factor)
                if ch is None:
                    continue
                policy = ch.policy_from(nb)
                if ch.capacity_msat < amount:
                    continue
                nxt = amount + fee(policy, amount)
                dfs(nb, nxt, used_delta, visited | {nb}, edges + [ch.id])

    dfs(anchor, seed_amount, 0, {anchor} | set(forbidden), [])
    return results


def brute_reduced_set(g, anchor, seed_amount, direction, budget, forbidden=()):
    return {node for node, _ in candidate_paths(
        g, anchor, seed_amount, direction, budget, forbidden=forbidden
    )}


def loglik_at(delta_ms, mean, var, sigma_floor):
    s = max(math.sqrt(var), sigma_floor)
    z = (delta_ms - mean) / s
    return -0.5 * z * z - math.log(s) - 0.5 * math.log(2.0 * math.pi)


def observation_walk_inputs(obs, g):
    """Anchor, seed amount, direction and lock budget implied by an
    observation, spelled out from the definitions: toward the destination
    the observed amount arrives at the anchor and the observed remaining
    lock time, less the observed edge's own delta, bounds further hops;
    toward the source the far endpoint forwarded the observed amount, so
    the first upstream edge carried it plus the observed edge's fee."""
    channel = g.channels[obs.edge_observed]
    anchor = channel.other_end(obs.observer)
    if obs.direction == "toward-destination":
        budget = max(
            0, obs.timelock_blocks - channel.policy_from(obs.observer).timelock_delta
        )
        return anchor, obs.amount_msat, "from-anchor", budget
    seed = obs.amount_msat + fee(channel.policy_from(anchor), obs.amount_msat)
    return anchor, seed, "toward-anchor", None


def brute_estimate(
    g,
    model,
    obs_edge_id,
    observer,
    delta_ms,
    seed_amount,
    direction,
    budget=None,
    sigma_floor=0.1,
    risk_factor=1.5e-8,
):
    """Argmax endpoint over exhaustive candidate-path enumeration.

    Every candidate path's total latency Gaussian is the weighted sum of
    its edges' model Gaussians (observed edge included); each endpoint
    scores its best path; ties break toward the smaller node id.
    """
    t = model.traversal_weight
    anchor = g.channels[obs_edge_id].other_end(observer)
    base = model.edge_gaussian(obs_edge_id)
    best: dict[str, float] = {}
    for endpoint, edges in candidate_paths(
        g, anchor, seed_amount, direction, budget, risk_factor, forbidden=(observer,)
    ):
        mean = t * base.mean
        var = t * base.variance
        for eid in edges:
            ge = model.edge_gaussian(eid)
            mean += t * ge.mean
            var += t * ge.variance
        ll = loglik_at(delta_ms, mean, var, sigma_floor)
        if ll > best.get(endpoint, -math.inf):
            best[endpoint] = ll
    ranked = sorted(best.items(), key=lambda kv: (-kv[1], kv[0]))
    return ranked[0][0], ranked
