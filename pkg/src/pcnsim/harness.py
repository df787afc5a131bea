"""Experiment orchestration.

A scenario places the adversary (top-betweenness nodes, a random sample, or
an explicit list), generates a payment workload, runs a probing campaign to
build the adversary's latency model, executes the workload on the event
engine while the malicious nodes observe, and scores both estimator
families against the ground truth.  Every run is a pure function of
(graph, config, seed).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .adversary import (
    AdversaryConfig,
    AdversaryObserver,
    EstimationResult,
    Observation,
    estimate_endpoint,
    first_spy_estimate,
)
from .graph import (
    Channel,
    DirectedPolicy,
    FullGraph,
    Node,
    NodeId,
    PublicGraph,
    RegionLatencyTable,
    DEFAULT_REGION_RTT,
    assign_latencies,
    betweenness_ranking,
    copy_graph,
    init_balances,
    public_view,
)
from .latency import (
    EdgeLatencyEstimate,
    Gaussian,
    InsufficientSamples,
    LatencyModel,
    ProbeFailedEarly,
    aggregate_models,
    estimate_first_hop,
    estimate_next_hop,
    probe_path,
)
from .metrics import (
    GroundTruth,
    MetricsReport,
    PaymentTruth,
    compromised_share,
    full_deanonymization,
    precision,
    recall,
    report,
)
from .routing import Payment, RoutingParams, find_route, path_from_channels
from .sim import PaymentEngine

log = logging.getLogger(__name__)

DEFAULT_AMOUNTS_SAT = (1, 10, 100, 1_000, 10_000, 100_000)
PROBE_AMOUNT_MSAT = 1_000


class ConfigError(ValueError):
    """Scenario configuration does not fit the graph."""


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str = "central"  # "central" | "random" | "list"
    m: int = 1
    node_list: tuple[NodeId, ...] = ()
    amounts_sat: tuple[int, ...] = DEFAULT_AMOUNTS_SAT
    payments_per_run: int = 1000
    repetitions: int = 30
    base_seed: int = 0
    retry_attack: bool = True
    timelock_reduction: bool = True
    traversal_weight: int = 6  # 4 replays the alternative per-hop weighting
    probes_per_path: int = 100
    probe_max_depth: int = 3
    max_estimates_per_channel: int = 3
    workload_mode: str = "per-amount"  # or "mixed"
    report_ablation: bool = False
    export_timeline: bool = False
    final_cltv_delta: int = 40
    risk_factor: float = 1.5e-8

    def __post_init__(self):
        if self.scenario not in ("central", "random", "list"):
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        if self.scenario != "list" and self.m < 1:
            raise ConfigError("m must be >= 1")
        if not self.amounts_sat:
            raise ConfigError("amounts must be non-empty")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if self.workload_mode not in ("per-amount", "mixed"):
            raise ConfigError(f"unknown workload mode {self.workload_mode!r}")

    def routing_params(self) -> RoutingParams:
        return RoutingParams(
            risk_factor=self.risk_factor, final_cltv_delta=self.final_cltv_delta
        )


@dataclass
class RunRecord:
    scenario: str
    m: int
    amount_sat: int
    seed: int
    truth: GroundTruth
    observations: list[Observation]
    estimates: dict[tuple[str, str], list[EstimationResult]]
    reports: list[MetricsReport]
    compromised: float
    unrouted: int
    ablation_delta: tuple[float, float] | None = None  # (d_precision, d_recall)
    outcomes: list = field(default_factory=list)  # kept only when exporting timelines


@dataclass
class ExperimentResult:
    records: list[RunRecord]
    aggregate: list[dict]
    failures: list[str] = field(default_factory=list)


# ---------------------------------------------------------------------------
# scenario pieces


def build_scenario(g: FullGraph | PublicGraph, cfg: ScenarioConfig, seed: int) -> AdversaryConfig:
    """Pick the malicious node set for one run."""
    if cfg.scenario == "central":
        ranked = betweenness_ranking(g)
        if cfg.m > len(ranked):
            raise ConfigError(f"m={cfg.m} exceeds {len(ranked)} nodes")
        malicious = frozenset(ranked[: cfg.m])
    elif cfg.scenario == "random":
        ids = sorted(g.nodes)
        if cfg.m > len(ids):
            raise ConfigError(f"m={cfg.m} exceeds {len(ids)} nodes")
        rng = np.random.default_rng(seed)
        picks = rng.choice(len(ids), size=cfg.m, replace=False)
        malicious = frozenset(ids[i] for i in picks)
    else:
        unknown = [n for n in cfg.node_list if n not in g.nodes]
        if unknown:
            raise ConfigError(f"explicit node list contains unknown nodes: {unknown}")
        if not cfg.node_list:
            raise ConfigError("explicit scenario needs a node list")
        malicious = frozenset(cfg.node_list)
    return AdversaryConfig(
        malicious_nodes=malicious,
        source_attack_enabled=cfg.retry_attack,
        timelock_reduction_enabled=cfg.timelock_reduction,
    )


def generate_workload(
    g: FullGraph, cfg: ScenarioConfig, rng, amount_sat: int
) -> list[tuple[NodeId, NodeId, int]]:
    """(source, dest, amount_msat) triples between uniformly random nodes."""
    ids = sorted(g.nodes)
    if len(ids) < 2:
        raise ConfigError("workload needs at least two nodes")
    out = []
    for i in range(cfg.payments_per_run):
        while True:
            s, t = (ids[int(k)] for k in rng.integers(len(ids), size=2))
            if s != t:
                break
        if cfg.workload_mode == "mixed":
            amt = cfg.amounts_sat[i % len(cfg.amounts_sat)] * 1000
        else:
            amt = amount_sat * 1000
        out.append((s, t, amt))
    return out


def generate_synthetic_graph(
    kind: str,
    n: int,
    seed: int = 0,
    capacity_sat: int = 1_000_000,
    base_fee_msat: int = 1_000,
    fee_rate_ppm: int = 10,
    timelock_delta: int = 40,
) -> FullGraph:
    """Deterministic test topology with uniform default policies."""
    if n < 2:
        raise ConfigError("synthetic graph needs n >= 2")
    names = [f"n{i:03d}" for i in range(n)]
    if kind == "path":
        edges = [(i, i + 1) for i in range(n - 1)]
    elif kind == "star":
        edges = [(0, i) for i in range(1, n)]
    elif kind == "ring":
        edges = [(i, (i + 1) % n) for i in range(n)]
    elif kind == "scale-free":
        import networkx as nx

        ba = nx.barabasi_albert_graph(n, min(2, n - 1), seed=seed)
        edges = sorted(tuple(sorted(e)) for e in ba.edges())
    else:
        raise ConfigError(f"unknown synthetic kind {kind!r}")
    g = FullGraph()
    for name in names:
        g.add_node(Node(id=name))
    for idx, (a, b) in enumerate(edges):
        u, v = sorted((names[a], names[b]))
        g.add_channel(
            Channel(
                id=f"c{idx:04d}",
                u=u,
                v=v,
                capacity_msat=capacity_sat * 1000,
                policy_uv=DirectedPolicy(base_fee_msat, fee_rate_ppm, timelock_delta),
                policy_vu=DirectedPolicy(base_fee_msat, fee_rate_ppm, timelock_delta),
            )
        )
    return g


# ---------------------------------------------------------------------------
# probing campaign


def probe_plan(
    g: PublicGraph | FullGraph, vantage: NodeId, max_depth: int
) -> list[tuple[str, list[str]]]:
    """(channel to estimate, probing path channels) per reachable channel.

    Breadth-first tree from the vantage; each channel is probed over the
    tree path to its closer endpoint plus the channel itself, so prefix
    edges are always estimated before they are needed as priors.
    """
    dist: dict[NodeId, int] = {vantage: 0}
    tree: dict[NodeId, list[str]] = {vantage: []}
    frontier = [vantage]
    depth = 0
    while frontier and depth < max_depth:
        nxt = []
        for node in frontier:
            for ch in sorted(g.channels_at(node), key=lambda c: c.id):
                if not ch.policy_from(node).enabled:
                    continue
                other = ch.other_end(node)
                if other in dist:
                    continue
                dist[other] = depth + 1
                tree[other] = tree[node] + [ch.id]
                nxt.append(other)
        frontier = nxt
        depth += 1
    plan: list[tuple[int, str, list[str]]] = []
    for cid in sorted(g.channels):
        ch = g.channels[cid]
        options = []
        for end in (ch.u, ch.v):
            if end in dist and dist[end] < max_depth and ch.policy_from(end).enabled:
                options.append((dist[end], end))
        if not options:
            continue
        d, end = min(options)
        plan.append((d + 1, cid, tree[end] + [cid]))
    plan.sort()
    return [(cid, path) for _, cid, path in plan]


def build_latency_model(
    graph: FullGraph,
    malicious: frozenset[NodeId],
    cfg: ScenarioConfig,
    rng_seed_seq,
) -> tuple[LatencyModel, list[EdgeLatencyEstimate]]:
    """Run the probing campaign from every malicious vantage and aggregate.

    Probes run against the true graph but only ever fail at their crafted
    hop, so balances are untouched.  Per channel only the closest few
    vantage estimates are kept; farther ones add little beyond their noise.
    """
    estimates: list[EdgeLatencyEstimate] = []
    children = rng_seed_seq.spawn(len(malicious))
    for vantage, child in zip(sorted(malicious), children):
        engine = PaymentEngine(graph, np.random.default_rng(child))
        per_edge: dict[str, Gaussian] = {}
        for cid, channel_path in probe_plan(graph, vantage, cfg.probe_max_depth):
            if any(prefix not in per_edge for prefix in channel_path[:-1]):
                continue  # a prior estimate failed; cannot isolate this edge
            path = path_from_channels(
                graph, vantage, channel_path, PROBE_AMOUNT_MSAT, cfg.routing_params()
            )
            samples = []
            discarded = 0
            for _ in range(cfg.probes_per_path):
                try:
                    samples.append(probe_path(vantage, path, engine))
                except ProbeFailedEarly:
                    discarded += 1
            if discarded:
                log.warning("%d probes to %s failed early", discarded, cid)
            try:
                if len(channel_path) == 1:
                    est = estimate_first_hop(samples, cfg.traversal_weight)
                else:
                    priors = [per_edge[p] for p in channel_path[:-1]]
                    est = estimate_next_hop(samples, priors, cfg.traversal_weight)
            except InsufficientSamples:
                continue
            per_edge[cid] = est
            estimates.append(
                EdgeLatencyEstimate(
                    channel=cid,
                    estimate=est,
                    sample_count=len(samples),
                    source_vantage=vantage,
                    hop_distance=len(channel_path),
                )
            )
    kept: list[EdgeLatencyEstimate] = []
    by_channel: dict[str, list[EdgeLatencyEstimate]] = {}
    for est in estimates:
        by_channel.setdefault(est.channel, []).append(est)
    for cid in sorted(by_channel):
        group = sorted(by_channel[cid], key=lambda e: (e.hop_distance, e.source_vantage))
        kept.extend(group[: cfg.max_estimates_per_channel])
    model = aggregate_models(kept, traversal_weight=cfg.traversal_weight)
    # The cross-vantage spread is zero whenever a channel was probed from a
    # single vantage, which would collapse density ranking to nearest-mean.
    # The probes did measure per-traversal spread, so keep it in that case.
    grouped: dict[str, list[EdgeLatencyEstimate]] = {}
    for est in kept:
        grouped.setdefault(est.channel, []).append(est)
    for cid, group in grouped.items():
        agg = model.edges[cid]
        if agg.std == 0.0:
            weights = [1.0 / e.hop_distance for e in group]
            sigma = sum(w * e.estimate.std for w, e in zip(weights, group)) / sum(weights)
            model.edges[cid] = Gaussian(agg.mean, sigma)
    return model, kept


# ---------------------------------------------------------------------------
# single run


def run_single(
    base_graph: FullGraph,
    cfg: ScenarioConfig,
    amount_sat: int,
    seed: int,
    latency_table: RegionLatencyTable = DEFAULT_REGION_RTT,
) -> RunRecord:
    """One seeded repetition at one amount."""
    root = np.random.SeedSequence(entropy=(seed, amount_sat))
    ss_latency, ss_scenario, ss_probe, ss_engine, ss_workload = root.spawn(5)
    g = copy_graph(base_graph)
    init_balances(g, "half")
    assign_latencies(g, latency_table, int(ss_latency.generate_state(1)[0]))
    adv_cfg = build_scenario(g, cfg, int(ss_scenario.generate_state(1)[0]))
    g_pub = public_view(g)
    params = cfg.routing_params()
    model, _ = build_latency_model(g, adv_cfg.malicious_nodes, cfg, ss_probe)

    observer = AdversaryObserver(adv_cfg)
    behaviors = {node: observer for node in adv_cfg.malicious_nodes}
    engine = PaymentEngine(g, np.random.default_rng(ss_engine), behaviors)
    workload = generate_workload(g, cfg, np.random.default_rng(ss_workload), amount_sat)

    truth: GroundTruth = {}
    unrouted = 0
    outcomes = []
    for i, (s, t, amount) in enumerate(workload):
        pid = f"p{amount_sat}s{seed}n{i:05d}"
        path = find_route(g_pub, Payment(s, t, amount), params)
        if path is None:
            unrouted += 1
            continue
        outcome = engine.execute_payment(path, pid)
        if cfg.export_timeline:
            outcomes.append(outcome)
        if (
            outcome.status == "failed"
            and cfg.retry_attack
            and observer.adversarially_failed(pid)
        ):
            # the sender retries over the same path right after the fail
            outcome = engine.execute_payment(path, pid)
            if cfg.export_timeline:
                outcomes.append(outcome)
        truth[pid] = PaymentTruth(
            payment_id=pid,
            source=s,
            dest=t,
            path_nodes=tuple(path.nodes()),
            observed_by=frozenset(adv_cfg.malicious_nodes & set(path.intermediaries())),
            status=outcome.status,
        )
    g.check_conservation()

    inputs = observer.estimation_inputs()
    estimates: dict[tuple[str, str], list[EstimationResult]] = {
        ("timing", "source"): [],
        ("timing", "destination"): [],
        ("first_spy", "source"): [],
        ("first_spy", "destination"): [],
    }
    ablated_dst: list[EstimationResult] = []
    ablated_cfg = replace(adv_cfg, timelock_reduction_enabled=False)
    for pid in sorted(inputs):
        for target in sorted(inputs[pid]):
            obs = inputs[pid][target]
            estimates[("timing", target)].append(
                estimate_endpoint(obs, g_pub, model, adv_cfg, params)
            )
            estimates[("first_spy", target)].append(first_spy_estimate(obs, g_pub))
            if cfg.report_ablation and target == "destination":
                ablated_dst.append(
                    estimate_endpoint(obs, g_pub, model, ablated_cfg, params)
                )

    reports = [
        report("timing", "source", estimates[("timing", "source")], truth),
        report("timing", "destination", estimates[("timing", "destination")], truth),
        report("first_spy", "source", estimates[("first_spy", "source")], truth),
        report("first_spy", "destination", estimates[("first_spy", "destination")], truth),
        full_deanonymization(
            "timing", estimates[("timing", "source")], estimates[("timing", "destination")], truth
        ),
        full_deanonymization(
            "first_spy",
            estimates[("first_spy", "source")],
            estimates[("first_spy", "destination")],
            truth,
        ),
    ]
    ablation_delta = None
    if cfg.report_ablation:
        base_dst = estimates[("timing", "destination")]
        ablation_delta = (
            precision(base_dst, truth) - precision(ablated_dst, truth),
            recall(base_dst, truth) - recall(ablated_dst, truth),
        )
    return RunRecord(
        scenario=cfg.scenario,
        m=len(adv_cfg.malicious_nodes),
        amount_sat=amount_sat,
        seed=seed,
        truth=truth,
        observations=list(observer.observations),
        estimates=estimates,
        reports=reports,
        compromised=compromised_share(truth),
        unrouted=unrouted,
        ablation_delta=ablation_delta,
        outcomes=outcomes,
    )


# ---------------------------------------------------------------------------
# experiment


def run_experiment(
    base_graph: FullGraph,
    cfg: ScenarioConfig,
    latency_table: RegionLatencyTable = DEFAULT_REGION_RTT,
) -> ExperimentResult:
    """All (amount, repetition) runs plus cross-run mean aggregates.

    A failing repetition is reported and skipped; the others proceed.
    """
    records: list[RunRecord] = []
    failures: list[str] = []
    for amount_sat in cfg.amounts_sat:
        for rep in range(cfg.repetitions):
            seed = cfg.base_seed + rep
            try:
                records.append(run_single(base_graph, cfg, amount_sat, seed, latency_table))
            except Exception as exc:  # noqa: BLE001 - repetition isolation
                msg = f"run amount={amount_sat} seed={seed} aborted: {exc!r}"
                log.error(msg)
                failures.append(msg)
    return ExperimentResult(records=records, aggregate=_aggregate(records), failures=failures)


METRICS_CSV_FIELDS = [
    "scenario", "estimator", "target", "m", "amount_sat", "seed",
    "precision", "recall", "f1", "compromised_share",
]
AGGREGATE_CSV_FIELDS = [
    "scenario", "m", "amount_sat", "estimator", "target", "runs",
    "precision_mean", "recall_mean", "f1_mean", "compromised_mean",
]


def emit_results(result: ExperimentResult, out_dir) -> list[str]:
    """Write metrics, aggregate and observation CSVs; return the paths.

    Output is fully ordered and floats are written with repr, so two runs
    of the same experiment produce byte-identical files.
    """
    import csv
    import os

    os.makedirs(out_dir, exist_ok=True)
    written = []

    metrics_path = os.path.join(out_dir, "metrics.csv")
    rows = []
    for rec in result.records:
        for rep in rec.reports:
            rows.append(
                [rec.scenario, rep.estimator, rep.target, rec.m, rec.amount_sat,
                 rec.seed, repr(rep.precision), repr(rep.recall), repr(rep.f1),
                 repr(rec.compromised)]
            )
    rows.sort(key=lambda r: (r[0], r[3], r[4], r[5], r[1], r[2]))
    with open(metrics_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRICS_CSV_FIELDS)
        w.writerows(rows)
    written.append(metrics_path)

    agg_path = os.path.join(out_dir, "metrics_aggregate.csv")
    with open(agg_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(AGGREGATE_CSV_FIELDS)
        for row in result.aggregate:
            w.writerow(
                [row["scenario"], row["m"], row["amount_sat"], row["estimator"],
                 row["target"], row["runs"], repr(row["precision_mean"]),
                 repr(row["recall_mean"]), repr(row["f1_mean"]),
                 repr(row["compromised_mean"])]
            )
    written.append(agg_path)

    from .adversary import export_observations

    obs_path = os.path.join(out_dir, "observations.csv")
    all_obs = [o for rec in result.records for o in rec.observations]
    export_observations(obs_path, all_obs)
    written.append(obs_path)

    all_outcomes = [o for rec in result.records for o in rec.outcomes]
    if all_outcomes:
        from .sim import export_timeline

        timeline_path = os.path.join(out_dir, "timeline.csv")
        export_timeline(timeline_path, all_outcomes)
        written.append(timeline_path)
    return written


def ablation_summary(result: ExperimentResult) -> tuple[float, float] | None:
    """Mean (precision, recall) change from disabling the time-lock
    reduction for the destination estimator, if it was recorded."""
    deltas = [r.ablation_delta for r in result.records if r.ablation_delta is not None]
    if not deltas:
        return None
    n = len(deltas)
    return (sum(d[0] for d in deltas) / n, sum(d[1] for d in deltas) / n)


def _aggregate(records: list[RunRecord]) -> list[dict]:
    groups: dict[tuple, list[tuple[MetricsReport, float]]] = {}
    for rec in records:
        for rep in rec.reports:
            key = (rec.scenario, rec.m, rec.amount_sat, rep.estimator, rep.target)
            groups.setdefault(key, []).append((rep, rec.compromised))
    out = []
    for key in sorted(groups):
        rows = groups[key]
        n = len(rows)
        out.append(
            {
                "scenario": key[0],
                "m": key[1],
                "amount_sat": key[2],
                "estimator": key[3],
                "target": key[4],
                "runs": n,
                "precision_mean": sum(r.precision for r, _ in rows) / n,
                "recall_mean": sum(r.recall for r, _ in rows) / n,
                "f1_mean": sum(r.f1 for r, _ in rows) / n,
                "compromised_mean": sum(c for _, c in rows) / n,
            }
        )
    return out
