"""Payment channel network simulator and timing-privacy toolkit."""

from .adversary import (
    AdversaryConfig,
    AdversaryObserver,
    EstimationResult,
    Observation,
    estimate_endpoint,
    first_spy_estimate,
    reduce_anonymity_set,
)
from .graph import (
    Channel,
    DirectedPolicy,
    FullGraph,
    Node,
    PublicGraph,
    RegionLatencyTable,
    assign_latencies,
    betweenness_ranking,
    convert_describegraph,
    init_balances,
    load_snapshot,
    public_view,
    serialize_snapshot,
)
from .harness import (
    ScenarioConfig,
    build_scenario,
    emit_results,
    generate_synthetic_graph,
    generate_workload,
    run_experiment,
    run_single,
)
from .latency import (
    EdgeLatencyEstimate,
    Gaussian,
    LatencyModel,
    aggregate_models,
    estimate_first_hop,
    estimate_next_hop,
    path_distribution,
    probe_path,
)
from .metrics import (
    MetricsReport,
    PaymentTruth,
    compromised_share,
    f1,
    full_deanonymization,
    precision,
    recall,
)
from .routing import (
    Payment,
    PaymentPath,
    RoutingParams,
    edge_weight,
    find_route,
    is_balance_valid,
    is_capacity_valid,
    is_timelock_valid,
    reachability_subgraph,
)
from .sim import EventQueue, PaymentEngine, PaymentOutcome, sample_latency

__version__ = "0.1.0"
