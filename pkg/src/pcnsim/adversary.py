"""On-path adversary: observation capture and endpoint estimation.

Malicious intermediaries time two interactive exchanges.  Toward the
destination they record when they forward an add and when the matching
fulfill returns; toward the source they deliberately fail a payment's first
attempt and time the gap until the retried attempt is committed at them.
Either time difference grows with the observer's distance from the
respective endpoint, so ranking candidate endpoints by the likelihood of
the observed difference under per-edge Gaussian latency models yields a
maximum-likelihood guess.  A First-Spy estimator (guess the adjacent node)
serves as the baseline.
"""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass

from .graph import NodeId, PublicGraph
from .latency import LatencyModel
from .routing import RoutingParams, TraversalRules, cheapest_edge, feasible_endpoints
from .sim import HopView, NodeBehavior

TOWARD_SOURCE = "toward-source"
TOWARD_DESTINATION = "toward-destination"

SIGMA_FLOOR_MS = 0.1


class EstimationError(RuntimeError):
    """Estimation could not produce a candidate (distinct from 'no valid
    endpoint exists', which reports the anchor as the only candidate)."""


@dataclass(frozen=True)
class AdversaryConfig:
    malicious_nodes: frozenset[NodeId]
    source_attack_enabled: bool = True
    timelock_reduction_enabled: bool = True
    sigma_floor_ms: float = SIGMA_FLOOR_MS

    def __post_init__(self):
        if not self.malicious_nodes:
            raise ValueError("adversary needs at least one malicious node")


@dataclass(frozen=True)
class Observation:
    """One timed sighting pair recorded at a malicious intermediary."""

    payment_id: str
    observer: NodeId
    edge_observed: str
    direction: str  # TOWARD_SOURCE | TOWARD_DESTINATION
    t0_ns: int
    t1_ns: int
    amount_msat: int
    timelock_blocks: int

    def __post_init__(self):
        if self.t1_ns < self.t0_ns:
            raise ValueError("t1 before t0")

    @property
    def delta_t_ns(self) -> int:
        return self.t1_ns - self.t0_ns

    @property
    def delta_t_ms(self) -> float:
        return self.delta_t_ns / 1e6


@dataclass(frozen=True)
class EstimationResult:
    payment_id: str
    target: str  # "source" | "destination"
    candidates: tuple[tuple[NodeId, float], ...]  # sorted by descending loglik

    @property
    def top(self) -> NodeId:
        return self.candidates[0][0]


class AdversaryObserver(NodeBehavior):
    """Behavior hook shared by all malicious nodes of one run.

    Collects destination-leg observations passively; when the source attack
    is enabled, the first malicious node to see a payment fails it once and
    times the retry.
    """

    def __init__(self, config: AdversaryConfig):
        self.config = config
        self.observations: list[Observation] = []
        # (node, payment) -> partially filled destination observation
        self._pending_dest: dict[tuple[NodeId, str], tuple[int, str, int, int]] = {}
        # payment -> (node, t0, edge, amount, timelock) waiting for the retry
        self._pending_src: dict[str, tuple[NodeId, int, str, int, int]] = {}
        self._failed_once: set[str] = set()

    # -- engine hooks --------------------------------------------------------

    def wants_reject(self, view: HopView) -> bool:
        if not self.config.source_attack_enabled:
            return False
        if view.node not in self.config.malicious_nodes or view.is_final:
            return False
        return view.payment_id not in self._failed_once

    def on_fail_sent(self, t_ns: int, view: HopView) -> None:
        if view.node not in self.config.malicious_nodes:
            return
        if view.payment_id in self._failed_once:
            return
        self._failed_once.add(view.payment_id)
        self._pending_src[view.payment_id] = (
            view.node, t_ns, view.in_channel, view.amount_msat, view.remaining_timelock,
        )

    def on_commit(self, t_ns: int, view: HopView) -> None:
        pending = self._pending_src.get(view.payment_id)
        if pending is None or pending[0] != view.node:
            return
        node, t0, channel, amount, timelock = pending
        del self._pending_src[view.payment_id]
        self.observations.append(
            Observation(
                payment_id=view.payment_id,
                observer=node,
                edge_observed=channel,
                direction=TOWARD_SOURCE,
                t0_ns=t0,
                t1_ns=t_ns,
                amount_msat=amount,
                timelock_blocks=timelock,
            )
        )

    def on_forward(self, t_ns: int, view: HopView) -> None:
        if view.node not in self.config.malicious_nodes:
            return
        self._pending_dest[(view.node, view.payment_id)] = (
            t_ns, view.next_channel, view.forward_amount_msat, view.forward_timelock,
        )

    def on_fulfill(self, t_ns: int, node: NodeId, payment_id: str) -> None:
        pending = self._pending_dest.pop((node, payment_id), None)
        if pending is None:
            return
        t0, channel, amount, timelock = pending
        self.observations.append(
            Observation(
                payment_id=payment_id,
                observer=node,
                edge_observed=channel,
                direction=TOWARD_DESTINATION,
                t0_ns=t0,
                t1_ns=t_ns,
                amount_msat=amount,
                timelock_blocks=timelock,
            )
        )

    # -- selection ------------------------------------------------------------

    def adversarially_failed(self, payment_id: str) -> bool:
        return payment_id in self._failed_once

    def estimation_inputs(self) -> dict[str, dict[str, Observation]]:
        """Pick the estimation observation per payment and direction.

        With several malicious observers on one path, the destination leg
        uses the observation of the node closest to the destination: adds
        propagate forward in time, so that is the one forwarded last.
        """
        out: dict[str, dict[str, Observation]] = {}
        for obs in self.observations:
            slot = out.setdefault(obs.payment_id, {})
            if obs.direction == TOWARD_DESTINATION:
                cur = slot.get("destination")
                if cur is None or obs.t0_ns > cur.t0_ns:
                    slot["destination"] = obs
            else:
                cur = slot.get("source")
                if cur is None or obs.t0_ns < cur.t0_ns:
                    slot["source"] = obs
        return out


# ---------------------------------------------------------------------------
# anonymity-set reduction


def _anchor_of(obs: Observation, g: PublicGraph) -> NodeId:
    return g.channels[obs.edge_observed].other_end(obs.observer)


def _walk_setup(obs: Observation, g: PublicGraph, cfg: AdversaryConfig):
    """Anchor, seed amount and traversal rules for candidate-path walks.

    Destination leg: the observed amount arrives at the anchor over the
    observed edge and shrinks by fees beyond it; the observed remaining
    timelock, less the observed edge's own delta, bounds how many deltas
    the downstream hops may still consume.  Source leg: the far endpoint
    forwarded the observed amount, so the walk grows it by the observed
    edge's fee first; the lock budget is unbounded from below.
    """
    channel = g.channels[obs.edge_observed]
    anchor = channel.other_end(obs.observer)
    if obs.direction == TOWARD_DESTINATION:
        budget = None
        if cfg.timelock_reduction_enabled:
            budget = obs.timelock_blocks - channel.policy_from(obs.observer).timelock_delta
            budget = max(budget, 0)
        rules = TraversalRules(
            direction="from-anchor",
            apply_fees=True,
            check_capacity=True,
            timelock_budget=budget,
        )
        return anchor, obs.amount_msat, rules
    policy = channel.policy_from(anchor)
    seed = obs.amount_msat + policy.fee_msat(obs.amount_msat)
    rules = TraversalRules(
        direction="toward-anchor",
        apply_fees=True,
        check_capacity=True,
        timelock_budget=None,
    )
    return anchor, seed, rules


def _search_edges(params: RoutingParams):
    """Edge chooser: one cheapest channel per neighbor, like route search."""

    def candidates(g, node, amount):
        out = []
        for nb in sorted(g.neighbors(node)):
            ch = cheapest_edge(g, node, nb, amount, params)
            if ch is not None:
                out.append(ch)
        return out

    return candidates


def reduce_anonymity_set(
    obs: Observation,
    g_pub: PublicGraph,
    cfg: AdversaryConfig,
    params: RoutingParams | None = None,
) -> frozenset[NodeId]:
    """Candidate endpoints compatible with the observed amount and lock time.

    Nodes are kept only if some simple path from the anchor satisfies the
    capacity and (destination leg, unless ablated) time-lock constraints
    jointly; the walk uses the cheapest channel per node pair, mirroring
    what the victim's route search would have picked, and never re-crosses
    the observer.
    """
    params = params or RoutingParams()
    if obs.edge_observed not in g_pub.channels:
        raise EstimationError(f"observed edge {obs.edge_observed} not in public graph")
    anchor, seed, rules = _walk_setup(obs, g_pub, cfg)
    return feasible_endpoints(
        g_pub, anchor, seed, rules, _search_edges(params), frozenset({obs.observer})
    )


# ---------------------------------------------------------------------------
# estimators


def estimate_endpoint(
    obs: Observation,
    g_pub: PublicGraph,
    model: LatencyModel,
    cfg: AdversaryConfig,
    params: RoutingParams | None = None,
) -> EstimationResult:
    """Rank candidate endpoints by the likelihood of the observed delta-t.

    Iterative traversal seeded with the known first hop across the observed
    edge.  A candidate path is extended to a neighbor only while the
    extension strictly increases the log-density of delta-t along that
    chain (the only-increasing-likelihood rule) and stays feasible for the
    observed amount and lock budget; each node's reported likelihood is the
    best over the chains that reached it.  All visited candidates are
    returned ranked, ties broken by node id.
    """
    params = params or RoutingParams()
    if obs.edge_observed not in g_pub.channels:
        raise EstimationError(f"observed edge {obs.edge_observed} not in public graph")
    t_weight = model.traversal_weight
    delta_ms = obs.delta_t_ms
    floor = cfg.sigma_floor_ms
    anchor, seed, rules = _walk_setup(obs, g_pub, cfg)
    edge_candidates = _search_edges(params)

    def loglik(mean: float, var: float) -> float:
        s = max(math.sqrt(var), floor)
        z = (delta_ms - mean) / s
        return -0.5 * z * z - math.log(s) - 0.5 * math.log(2.0 * math.pi)

    g0 = model.edge_gaussian(obs.edge_observed)
    mean0 = t_weight * g0.mean
    var0 = t_weight * g0.variance
    ll0 = loglik(mean0, var0)
    best_ll: dict[NodeId, float] = {anchor: ll0}
    queue: deque[tuple[NodeId, float, float, int, int, frozenset[NodeId], float]] = deque(
        [(anchor, mean0, var0, seed, 0, frozenset({obs.observer, anchor}), ll0)]
    )
    while queue:
        cur, mean_c, var_c, amount_c, delta_c, on_path, ll_cur = queue.popleft()
        for ch in edge_candidates(g_pub, cur, amount_c):
            nb = ch.other_end(cur)
            if nb in on_path:
                continue
            step = rules.step(cur, ch, amount_c, delta_c)
            if step is None:
                continue
            g_e = model.edge_gaussian(ch.id)
            mean_n = mean_c + t_weight * g_e.mean
            var_n = var_c + t_weight * g_e.variance
            ll_n = loglik(mean_n, var_n)
            if ll_n <= ll_cur:
                continue  # only increasing likelihood
            if ll_n > best_ll.get(nb, -math.inf):
                best_ll[nb] = ll_n
            queue.append((nb, mean_n, var_n, step[0], step[1], on_path | {nb}, ll_n))
    if not best_ll:
        raise EstimationError(f"no candidates for payment {obs.payment_id}")
    ranked = tuple(
        sorted(best_ll.items(), key=lambda item: (-item[1], item[0]))
    )
    return EstimationResult(
        payment_id=obs.payment_id,
        target="destination" if obs.direction == TOWARD_DESTINATION else "source",
        candidates=ranked,
    )


def first_spy_estimate(obs: Observation, g_pub: PublicGraph) -> EstimationResult:
    """Baseline: the node adjacent across the observed edge is the endpoint."""
    anchor = _anchor_of(obs, g_pub)
    return EstimationResult(
        payment_id=obs.payment_id,
        target="destination" if obs.direction == TOWARD_DESTINATION else "source",
        candidates=((anchor, 0.0),),
    )


# ---------------------------------------------------------------------------
# export


OBSERVATION_CSV_FIELDS = [
    "payment_id", "observer", "channel_id", "direction",
    "t0_ns", "t1_ns", "amount_msat", "timelock_blocks",
]


def export_observations(path, observations: list[Observation]) -> None:
    rows = sorted(
        observations, key=lambda o: (o.t0_ns, o.payment_id, o.observer, o.direction)
    )
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(OBSERVATION_CSV_FIELDS)
        for o in rows:
            w.writerow(
                [o.payment_id, o.observer, o.edge_observed, o.direction,
                 o.t0_ns, o.t1_ns, o.amount_msat, o.timelock_blocks]
            )
