"""Cost model for token dispatch on a two-tier cluster.

Devices live on nodes; links within a node are faster than links between
nodes.  All-to-All is modeled as D-1 serialized ring rotations where
round r lets device s exchange with device (s + r) mod D and costs the
worst pair in that round (latency plus bytes over the pair's bandwidth
class).  The group-wise variant sends only 1/g of each device's
inter-node bytes (the rest is reconstructed by an intra-node ring
All-Gather across the g-device group), trading slow-link volume for
fast-link replication.

Bandwidths and latencies here are illustrative configuration, not
measurements; the shipped defaults live in :mod:`moelab.defaults`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ClusterTopology:
    """Two-tier device layout with per-tier bandwidth (bytes/s) and latency (s)."""

    n_nodes: int
    devices_per_node: int
    intra_bw: float
    inter_bw: float
    intra_latency: float
    inter_latency: float

    def __post_init__(self):
        if self.n_nodes < 1 or self.devices_per_node < 1:
            raise ValueError("topology needs at least one node and one device per node")
        if not self.intra_bw > self.inter_bw > 0:
            raise ValueError(
                f"expected intra_bw > inter_bw > 0, got intra={self.intra_bw}, "
                f"inter={self.inter_bw}"
            )
        if self.intra_latency < 0 or self.inter_latency < 0:
            raise ValueError("latencies must be >= 0")

    @property
    def total_devices(self) -> int:
        return self.n_nodes * self.devices_per_node

    def node_of(self, device) -> np.ndarray:
        return np.asarray(device, dtype=np.int64) // self.devices_per_node


@dataclass(frozen=True)
class ExpertPlacement:
    """Maps each expert to the device (and thereby node) hosting it."""

    device_of_expert: tuple[int, ...]

    def __post_init__(self):
        if len(self.device_of_expert) == 0:
            raise ValueError("placement must cover at least one expert")

    @property
    def n_experts(self) -> int:
        return len(self.device_of_expert)

    def devices(self) -> np.ndarray:
        return np.asarray(self.device_of_expert, dtype=np.int64)

    def expert_nodes(self, topology: ClusterTopology) -> np.ndarray:
        devices = self.devices()
        if devices.max() >= topology.total_devices or devices.min() < 0:
            raise ValueError("placement references a device outside the topology")
        return topology.node_of(devices)


def round_robin_placement(n_experts: int, topology: ClusterTopology) -> ExpertPlacement:
    """Experts spread over devices in index order, wrapping if needed."""
    d = topology.total_devices
    return ExpertPlacement(tuple(int(e % d) for e in range(n_experts)))


@dataclass(frozen=True)
class CommPhase:
    kind: str  # "all_to_all" or "all_gather"
    participants: tuple[int, ...]
    volume: np.ndarray  # D x D bytes moved in this phase

    @property
    def total_bytes(self) -> float:
        return float(self.volume.sum())


@dataclass(frozen=True)
class CommPlan:
    phases: tuple[CommPhase, ...]

    @property
    def total_bytes(self) -> float:
        return float(sum(p.total_bytes for p in self.phases))


def build_volume_matrix(outcome, placement: ExpertPlacement, token_bytes: int, source_map) -> np.ndarray:
    """Device-to-device dispatch bytes implied by a routing outcome.

    Entry (s, t) counts token_bytes for every served token whose source
    device is s and whose expert lives on device t.  Dropped tokens never
    travel.  The diagonal (token served where it originates) is kept; the
    cost model charges it nothing because ring rounds never pair a device
    with itself.
    """
    source = np.asarray(source_map, dtype=np.int64)
    expert = outcome.expert_of_token
    if source.shape != expert.shape:
        raise ValueError("source_map must assign a device to every token")
    devices = placement.devices()
    if expert.max() >= devices.shape[0]:
        raise ValueError(
            f"routing references expert {int(expert.max())} but placement "
            f"covers only {devices.shape[0]} experts"
        )
    n_dev = int(max(source.max(), devices.max())) + 1
    keep = ~outcome.dropped
    dest = devices[expert[keep]]
    src = source[keep]
    volume = np.zeros((n_dev, n_dev))
    np.add.at(volume, (src, dest), float(token_bytes))
    return volume


def _pair_params(topology: ClusterTopology, senders: np.ndarray, receivers: np.ndarray):
    same = topology.node_of(senders) == topology.node_of(receivers)
    lat = np.where(same, topology.intra_latency, topology.inter_latency)
    bw = np.where(same, topology.intra_bw, topology.inter_bw)
    return lat, bw


def alltoall_cost(volume: np.ndarray, topology: ClusterTopology) -> float:
    """Ring-scheduled pairwise exchange cost in seconds.

    D-1 serialized rounds; in round r device s sends volume[s, (s+r) % D].
    Each round costs its slowest pair: latency(s,t) + bytes/bw(s,t).  With
    zero volume this degenerates to (D-1) times the worst round latency.
    """
    volume = np.asarray(volume, dtype=float)
    d = topology.total_devices
    if volume.shape != (d, d):
        raise ValueError(f"volume must be {d}x{d} for this topology, got {volume.shape}")
    if (volume < 0).any():
        raise ValueError("volumes must be non-negative")
    senders = np.arange(d)
    total = 0.0
    for r in range(1, d):
        receivers = (senders + r) % d
        lat, bw = _pair_params(topology, senders, receivers)
        total += float((lat + volume[senders, receivers] / bw).max())
    return total


def groupwise_alltoall_cost(
    volume: np.ndarray,
    topology: ClusterTopology,
    tp_group_size: int,
) -> tuple[float, CommPlan]:
    """Cost of the sharded exchange: thin inter-node All-to-All plus
    intra-node All-Gather.

    Each device sends only 1/g of its own inter-node bytes in phase one
    (its g-device group covers the rest); intra-node bytes are unchanged.
    Phase two runs a ring All-Gather inside every group so each member
    ends up with the group's full remote payload: per group,
    (g-1)/g * gathered bytes / intra_bw + (g-1) * intra_latency, groups in
    parallel.  With g = 1 both phases collapse to the plain cost exactly.
    """
    volume = np.asarray(volume, dtype=float)
    d = topology.total_devices
    g = tp_group_size
    if g < 1 or topology.devices_per_node % g != 0:
        raise ValueError(
            f"tp_group_size={g} must divide devices_per_node="
            f"{topology.devices_per_node}"
        )
    if volume.shape != (d, d):
        raise ValueError(f"volume must be {d}x{d} for this topology, got {volume.shape}")

    devices = np.arange(d)
    inter = topology.node_of(devices)[:, None] != topology.node_of(devices)[None, :]
    sharded = np.where(inter, volume / g, volume)
    phase1_cost = alltoall_cost(sharded, topology)
    phases = [CommPhase(kind="all_to_all", participants=tuple(range(d)), volume=sharded)]

    group_of = devices // g  # consecutive devices within a node form a group
    received = np.where(inter, sharded, 0.0).sum(axis=0)  # remote bytes landing per device
    phase2_cost = 0.0
    if g > 1:
        for gid in np.unique(group_of):
            members = devices[group_of == gid]
            gathered = float(received[members].sum())
            cost = (g - 1) / g * gathered / topology.intra_bw + (g - 1) * topology.intra_latency
            phase2_cost = max(phase2_cost, cost)
            ring_volume = np.zeros((d, d))
            nxt = np.roll(members, -1)
            # each member's accumulated shards pass over its outgoing ring edge;
            # the shard originating at the edge's head never crosses it
            ring_volume[members, nxt] = gathered - received[nxt]
            phases.append(
                CommPhase(kind="all_gather", participants=tuple(int(m) for m in members), volume=ring_volume)
            )
    return phase1_cost + phase2_cost, CommPlan(phases=tuple(phases))


def locality_fraction(outcome, placement: ExpertPlacement, source_map, topology: ClusterTopology) -> float:
    """Share of served tokens whose expert lives on the token's source node."""
    source = np.asarray(source_map, dtype=np.int64)
    expert = outcome.expert_of_token
    if source.shape != expert.shape:
        raise ValueError("source_map must assign a device to every token")
    keep = ~outcome.dropped
    if not keep.any():
        return 0.0
    dest_node = placement.expert_nodes(topology)[expert[keep]]
    src_node = topology.node_of(source[keep])
    return float(np.mean(dest_node == src_node))


def compare_strategies(
    runs: dict,
    placement: ExpertPlacement,
    topology: ClusterTopology,
    token_bytes: int,
    tp_group_size: int = 8,
    compute_seconds: float | None = None,
    overlap_ratio: float = 0.5,
) -> list[dict]:
    """Model communication for the final assignment of each training run.

    ``runs`` maps a router name to an object exposing ``final_outcome``
    and ``source_device`` (a toy-training run).  For each router the
    report carries plain and group-wise modeled seconds, the locality
    fraction, and the visible communication share of a modeled epoch,
    where visible = max(0, comm - overlap_ratio * compute); the overlap
    term is a deliberately coarse stand-in for interleaved execution.
    """
    if compute_seconds is not None and compute_seconds < 0:
        raise ValueError("compute_seconds must be >= 0")
    rows = []
    for name, run in runs.items():
        outcome = run.final_outcome
        volume = build_volume_matrix(outcome, placement, token_bytes, run.source_device)
        plain = alltoall_cost(volume, topology)
        grouped, _ = groupwise_alltoall_cost(volume, topology, tp_group_size)
        frac = locality_fraction(outcome, placement, run.source_device, topology)
        compute = run.modeled_compute_seconds if compute_seconds is None else compute_seconds
        visible = max(0.0, plain - overlap_ratio * compute)
        rows.append(
            {
                "router": name,
                "plain_alltoall_s": plain,
                "groupwise_alltoall_s": grouped,
                "tp_group_size": tp_group_size,
                "locality_fraction": frac,
                "modeled_compute_s": compute,
                "visible_comm_s": visible,
                "comm_share": visible / (compute + visible) if compute + visible > 0 else 0.0,
            }
        )
    return rows
