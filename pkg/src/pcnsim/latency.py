"""Adversarial edge-latency models.

Edge latencies are modelled as Gaussians in milliseconds.  An attacker node
measures round trips of payments that are crafted to fail at a chosen hop,
turns the samples into per-edge estimates (iteratively, subtracting the
already-estimated prefix of the probing path), and merges estimates from
several vantage points into one model, weighting by reciprocal hop distance.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

log = logging.getLogger(__name__)

# Every hop of an htlc add/settle round trip crosses its edge six times:
# the add itself, the four commitment/revocation handshake messages, and the
# returning fulfill (or fail).  4 is kept available as an alternative
# weighting for sensitivity runs.
TRAVERSAL_WEIGHT_DEFAULT = 6
TRAVERSAL_WEIGHT_ALT = 4

MEAN_FLOOR_MS = 1.0


class InsufficientSamples(ValueError):
    """Raised when an estimate is requested from fewer than two probes."""


@dataclass(frozen=True)
class Gaussian:
    """Normal distribution with mean/std in milliseconds."""

    mean: float
    std: float

    def __post_init__(self):
        if self.std < 0:
            raise ValueError(f"negative std {self.std}")

    @property
    def variance(self) -> float:
        return self.std * self.std

    def logpdf(self, x: float, sigma_floor: float = 0.0) -> float:
        s = max(self.std, sigma_floor)
        if s <= 0:
            raise ValueError("degenerate Gaussian needs a sigma floor")
        z = (x - self.mean) / s
        return -0.5 * z * z - math.log(s) - 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class EdgeLatencyEstimate:
    """One vantage point's Gaussian estimate for one channel."""

    channel: str
    estimate: Gaussian
    sample_count: int
    source_vantage: str
    hop_distance: int

    def __post_init__(self):
        if self.sample_count < 1:
            raise ValueError("sample_count must be >= 1")
        if self.hop_distance < 1:
            raise ValueError("hop_distance must be >= 1")


@dataclass
class LatencyModel:
    """Per-channel Gaussian latency map used by the timing estimators."""

    edges: dict[str, Gaussian] = field(default_factory=dict)
    traversal_weight: int = TRAVERSAL_WEIGHT_DEFAULT
    default: Gaussian = Gaussian(125.0, 25.0)
    fallback_count: int = 0

    def edge_gaussian(self, channel_id: str) -> Gaussian:
        """Look up a channel, falling back to the model default."""
        g = self.edges.get(channel_id)
        if g is None:
            self.fallback_count += 1
            return self.default
        return g


def probe_path(adversary_node: str, path, engine) -> float:
    """Measure one failing probe over `path`, in milliseconds.

    The payment is crafted to be rejected by the last node on the path, so
    the adversary's add -> fail round trip covers exactly the path's edges.
    Raises ProbeFailedEarly if some intermediate hop failed it first (that
    sample must be discarded).
    """
    if not path.hops:
        raise ValueError("probe path must contain at least one hop")
    if path.hops[0].frm != adversary_node:
        raise ValueError(f"probe path does not start at {adversary_node}")
    target = path.hops[-1].to
    outcome = engine.execute_payment(path, payment_id=engine.next_probe_id(), fail_at=target)
    # a reject by the final node reports at_hop == len(hops); anything lower
    # means some intermediary killed the probe first
    expected_hop = len(path.hops)
    if outcome.status != "failed" or outcome.failed_at_hop != expected_hop:
        raise ProbeFailedEarly(
            f"probe failed at hop {outcome.failed_at_hop}, wanted {expected_hop}"
        )
    return (outcome.completed_at - outcome.started_at) / 1e6


class ProbeFailedEarly(RuntimeError):
    """A probe payment died before reaching its intended failure hop."""


def estimate_first_hop(samples_ms: list[float], traversal_weight: int) -> Gaussian:
    """Estimate the first edge of a one-hop probing path.

    mean = sum(samples) / (T*n).  Residuals for the spread are taken against
    T*mean so both operands are full round-trip durations; the raw quotient
    would mix per-traversal and per-round-trip units.
    """
    n = len(samples_ms)
    if n < 2:
        raise InsufficientSamples(f"need >= 2 probes, got {n}")
    t = traversal_weight
    mean = sum(samples_ms) / (t * n)
    resid = sum((s - t * mean) ** 2 for s in samples_ms)
    std = math.sqrt(resid / (t * n))
    return Gaussian(mean, std)


def estimate_next_hop(
    samples_ms: list[float],
    prior_hops: list[Gaussian],
    traversal_weight: int,
) -> Gaussian:
    """Estimate the last edge of a longer probing path.

    The mean subtracts the already-estimated prefix edges; the variance of
    that subtraction inherits the prior estimates' variances, so they are
    added in quadrature to the path-level sample spread.

    A negative mean (prior estimates overshooting the path measurement) is
    clamped to 1 ms and logged rather than aborting the model build.
    """
    n = len(samples_ms)
    if n < 2:
        raise InsufficientSamples(f"need >= 2 probes, got {n}")
    if not prior_hops:
        raise ValueError("estimate_next_hop needs at least one prior hop")
    t = traversal_weight
    path_mean = sum(samples_ms) / (t * n)
    mean = path_mean - sum(g.mean for g in prior_hops)
    resid = sum((s - t * path_mean) ** 2 for s in samples_ms)
    variance = resid / (t * n) + sum(g.variance for g in prior_hops)
    if mean < MEAN_FLOOR_MS:
        log.warning(
            "edge mean estimate %.3f ms below floor (priors overshoot), clamping", mean
        )
        mean = MEAN_FLOOR_MS
    return Gaussian(mean, math.sqrt(variance))


def aggregate_models(
    estimates: list[EdgeLatencyEstimate],
    traversal_weight: int = TRAVERSAL_WEIGHT_DEFAULT,
    default: Gaussian = Gaussian(125.0, 25.0),
) -> LatencyModel:
    """Merge per-vantage estimates into one model.

    Per channel the estimates are combined by an arithmetic mean weighted
    with the reciprocal hop distance of the measuring vantage; the merged
    sigma is the weighted spread of the per-vantage means (a single estimate
    therefore yields sigma 0).
    """
    by_channel: dict[str, list[EdgeLatencyEstimate]] = {}
    for est in estimates:
        by_channel.setdefault(est.channel, []).append(est)
    edges: dict[str, Gaussian] = {}
    for cid in sorted(by_channel):
        group = by_channel[cid]
        if len(group) == 1:
            # weighting by w/w would only round; a lone estimate passes
            # through unchanged (its spread over one mean is zero)
            edges[cid] = Gaussian(group[0].estimate.mean, 0.0)
            continue
        weights = [1.0 / e.hop_distance for e in group]
        wsum = sum(weights)
        mu = sum(w * e.estimate.mean for w, e in zip(weights, group)) / wsum
        var = sum(w * (e.estimate.mean - mu) ** 2 for w, e in zip(weights, group)) / wsum
        edges[cid] = Gaussian(mu, math.sqrt(var))
    return LatencyModel(edges=edges, traversal_weight=traversal_weight, default=default)


def path_distribution(
    model: LatencyModel,
    edge_ids: list[str],
    weights: list[int] | None = None,
    mode: str = "independent",
) -> Gaussian:
    """Gaussian of the total time a message exchange spends on `edge_ids`.

    Each edge i is crossed weights[i] times (default: the model's traversal
    weight).  In "independent" mode the crossings are independent samples,
    so the variance scales linearly with the weight; "scaled" treats the
    weight as a deterministic multiplier (variance scales quadratically).
    """
    if weights is None:
        weights = [model.traversal_weight] * len(edge_ids)
    if len(weights) != len(edge_ids):
        raise ValueError("one weight per edge required")
    if mode not in ("independent", "scaled"):
        raise ValueError(f"unknown mode {mode!r}")
    mean = 0.0
    variance = 0.0
    for cid, t in zip(edge_ids, weights):
        g = model.edge_gaussian(cid)
        mean += t * g.mean
        if mode == "independent":
            variance += t * g.variance
        else:
            variance += t * t * g.variance
    return Gaussian(mean, math.sqrt(variance))


ESTIMATE_CSV_FIELDS = ["channel_id", "mu_ms", "sigma_ms", "samples", "vantage", "distance"]


def save_estimates(path, estimates: list[EdgeLatencyEstimate]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ESTIMATE_CSV_FIELDS)
        for e in estimates:
            w.writerow(
                [e.channel, repr(e.estimate.mean), repr(e.estimate.std),
                 e.sample_count, e.source_vantage, e.hop_distance]
            )


def load_estimates(path) -> list[EdgeLatencyEstimate]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(
                EdgeLatencyEstimate(
                    channel=row["channel_id"],
                    estimate=Gaussian(float(row["mu_ms"]), float(row["sigma_ms"])),
                    sample_count=int(row["samples"]),
                    source_vantage=row["vantage"],
                    hop_distance=int(row["distance"]),
                )
            )
    return out
