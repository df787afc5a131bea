import numpy as np
import pytest

from pcnsim.graph import Channel, DirectedPolicy, FullGraph, Node
from pcnsim.latency import Gaussian


def make_graph(nodes, channels, capacity_sat=1_000_000, base_fee=1_000,
               rate_ppm=10, delta=40, latency_ms=10.0, sigma_ms=0.0):
    """Small fixture builder.

    `channels` rows: (cid, u, v) or (cid, u, v, overrides) where overrides
    may set capacity_sat, per-direction policy fields or latency.
    """
    g = FullGraph()
    for n in nodes:
        g.add_node(Node(id=n))
    for row in channels:
        cid, u, v = row[:3]
        over = row[3] if len(row) > 3 else {}
        cap = over.get("capacity_sat", capacity_sat)

        def policy(side):
            return DirectedPolicy(
                base_fee_msat=over.get(f"base_fee_{side}", over.get("base_fee", base_fee)),
                fee_rate_ppm=over.get(f"rate_ppm_{side}", over.get("rate_ppm", rate_ppm)),
                timelock_delta=over.get(f"delta_{side}", over.get("delta", delta)),
                enabled=over.get(f"enabled_{side}", over.get("enabled", True)),
            )

        a, b = sorted((u, v))
        g.add_channel(
            Channel(
                id=cid,
                u=a,
                v=b,
                capacity_msat=cap * 1000,
                policy_uv=policy("uv"),
                policy_vu=policy("vu"),
                latency=Gaussian(over.get("latency_ms", latency_ms),
                                 over.get("sigma_ms", sigma_ms)),
            )
        )
    return g


def split_balances(g):
    for ch in g.channels.values():
        half = ch.capacity_msat // 2
        ch.policy_uv.balance_msat = ch.capacity_msat - half
        ch.policy_vu.balance_msat = half
    return g


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def line_graph():
    """a - b - c - d, uniform 10 ms edges."""
    g = make_graph(
        ["a", "b", "c", "d"],
        [("e0", "a", "b"), ("e1", "b", "c"), ("e2", "c", "d")],
    )
    return split_balances(g)
