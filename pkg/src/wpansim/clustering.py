"""Cluster structure and broadcast routing for a two-tier mobile ad hoc network.

The network is partitioned into clusters, each dominated by a clusterhead; no
two clusterheads may be neighbors. Gateways are non-clusterhead nodes with at
least one neighbor affiliated to a different cluster and carry traffic across
cluster borders. Routing is diffusion-based: a sender hands its message to
its clusterhead, which unicasts to the destination if it is a member and
broadcasts otherwise; gateways push the wave outward, suppressing duplicates.

Known (and deliberately reproduced) flaw of the scheme: clusters keep
flooding a unicast after it was delivered elsewhere, until the message's
validity deadline expires. The redundancy is measured, not patched; the only
mitigations modeled are the validity deadline and the clusterhead replay of
recent broadcasts toward freshly joined members.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from enum import Enum

from .core import ConfigurationError

BROADCAST = -1


class Role(Enum):
    CLUSTERHEAD = "clusterhead"
    GATEWAY = "gateway"
    ORDINARY = "ordinary"


@dataclass
class Message:
    msg_id: int
    src: int
    dst: int  # node id or BROADCAST
    size_bytes: int
    created_at: int
    validity_deadline: int
    hop_trace: tuple[int, ...] = ()
    route: tuple[int, ...] = ()  # precomputed hops, fixed-clusterhead mode only

    def __post_init__(self):
        if self.validity_deadline < self.created_at:
            raise ConfigurationError("validity_deadline must be >= created_at")

    def expired(self, now: int) -> bool:
        return now > self.validity_deadline

    def forked(self, via: int) -> "Message":
        return replace(self, hop_trace=self.hop_trace + (via,))


@dataclass
class NodeRecord:
    node_id: int
    x: float
    y: float
    role: Role = Role.ORDINARY
    cluster_id: int | None = None
    member_table: set[int] = field(default_factory=set)
    dedup_cache: OrderedDict = field(default_factory=OrderedDict)  # msg_id -> time
    replay_cache: list = field(default_factory=list)  # (time, Message)


class ClusterTopology:
    """Node records plus the unit-disk adjacency they induce."""

    def __init__(self, nodes: dict[int, NodeRecord], radio_range: float):
        if not nodes:
            raise ConfigurationError("topology needs at least one node")
        self.nodes = nodes
        self.radio_range = radio_range
        self._adjacency: dict[int, list[int]] | None = None

    def distance(self, a: int, b: int) -> float:
        na, nb = self.nodes[a], self.nodes[b]
        return math.hypot(na.x - nb.x, na.y - nb.y)

    def in_range(self, a: int, b: int) -> bool:
        return a != b and self.distance(a, b) <= self.radio_range

    def neighbors(self, node_id: int) -> list[int]:
        if self._adjacency is None:
            ids = sorted(self.nodes)
            self._adjacency = {i: [] for i in ids}
            for idx, a in enumerate(ids):
                for b in ids[idx + 1:]:
                    if self.in_range(a, b):
                        self._adjacency[a].append(b)
                        self._adjacency[b].append(a)
        return self._adjacency[node_id]

    def move(self, node_id: int, x: float, y: float) -> None:
        rec = self.nodes[node_id]
        rec.x, rec.y = x, y
        self._adjacency = None

    def clusterheads(self) -> list[int]:
        return sorted(i for i, r in self.nodes.items() if r.role is Role.CLUSTERHEAD)

    def is_connected(self) -> bool:
        ids = sorted(self.nodes)
        seen = {ids[0]}
        stack = [ids[0]]
        while stack:
            for nb in self.neighbors(stack.pop()):
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        return len(seen) == len(ids)

    def check_invariants(self) -> list[str]:
        """Brute-force check of the structural invariants; empty means healthy."""
        bad = []
        heads = set(self.clusterheads())
        for h in heads:
            for nb in self.neighbors(h):
                if nb in heads:
                    bad.append(f"clusterheads {h} and {nb} are neighbors")
        for i in sorted(self.nodes):
            rec = self.nodes[i]
            if rec.role is Role.CLUSTERHEAD:
                if rec.cluster_id != i:
                    bad.append(f"clusterhead {i} has cluster_id {rec.cluster_id}")
                expect = {j for j, r in self.nodes.items()
                          if j != i and r.cluster_id == i}
                if rec.member_table != expect:
                    bad.append(f"member table of {i} is stale")
                continue
            ch = rec.cluster_id
            if ch is None or ch not in heads:
                bad.append(f"node {i} is not affiliated to a clusterhead")
            elif not self.in_range(i, ch):
                bad.append(f"node {i} affiliated to out-of-range clusterhead {ch}")
            foreign = any(self.nodes[nb].cluster_id != rec.cluster_id
                          for nb in self.neighbors(i))
            if rec.role is Role.GATEWAY and not foreign:
                bad.append(f"gateway {i} has no foreign neighbor")
            if rec.role is Role.ORDINARY and foreign:
                bad.append(f"node {i} should be a gateway")
        return bad


def form_clusters(nodes, radio_range: float) -> ClusterTopology:
    """Partition nodes into clusters with the lowest-id heuristic.

    Scanning ids upward, every still-undecided node becomes a clusterhead (it
    has the smallest id among undecided nodes) and captures its undecided
    neighbors. Isolated nodes end up as singleton clusterheads. The result is
    deterministic and stable under order-preserving id relabeling.
    """
    records = {}
    for node_id, x, y in nodes:
        if node_id in records:
            raise ConfigurationError(f"duplicate node id {node_id}")
        if node_id == BROADCAST:
            raise ConfigurationError("node id -1 is reserved")
        records[node_id] = NodeRecord(node_id, float(x), float(y))
    topo = ClusterTopology(records, radio_range)

    undecided = set(records)
    for node_id in sorted(records):
        if node_id not in undecided:
            continue
        undecided.discard(node_id)
        head = records[node_id]
        head.role = Role.CLUSTERHEAD
        head.cluster_id = node_id
        for nb in topo.neighbors(node_id):
            if nb in undecided:
                undecided.discard(nb)
                records[nb].cluster_id = node_id
                head.member_table.add(nb)
    classify_gateways(topo)
    return topo


def classify_gateways(topology: ClusterTopology) -> ClusterTopology:
    """Mark every non-clusterhead with a foreign neighbor as a gateway."""
    for node_id in sorted(topology.nodes):
        rec = topology.nodes[node_id]
        if rec.role is Role.CLUSTERHEAD:
            continue
        foreign = any(topology.nodes[nb].cluster_id != rec.cluster_id
                      for nb in topology.neighbors(node_id))
        rec.role = Role.GATEWAY if foreign else Role.ORDINARY
    return topology


def join_cluster(topology: ClusterTopology, node_id: int, ch_id: int, now: int,
                 replay_window: int) -> list[Message]:
    """Affiliate a node to a clusterhead and replay recent matching broadcasts.

    Returns the unexpired cached messages addressed to the joining node that
    the clusterhead broadcast within `replay_window` before now; expired and
    out-of-window cache entries are purged.
    """
    ch = topology.nodes[ch_id]
    if ch.role is not Role.CLUSTERHEAD:
        raise ConfigurationError(f"node {ch_id} is not a clusterhead")
    rec = topology.nodes[node_id]
    old = rec.cluster_id
    if old is not None and old in topology.nodes:
        topology.nodes[old].member_table.discard(node_id)
    rec.cluster_id = ch_id
    rec.role = Role.ORDINARY
    ch.member_table.add(node_id)

    ch.replay_cache = [(t, m) for t, m in ch.replay_cache
                       if t >= now - replay_window and not m.expired(now)]
    return [m for t, m in ch.replay_cache if m.dst == node_id]


def reaffiliate(topology: ClusterTopology, node_id: int, now: int,
                replay_window: int = 0) -> list[Message]:
    """Re-home one node after a mobility step.

    The node joins the nearest in-range clusterhead (ties to the lowest id)
    or elects itself clusterhead when none is reachable. A clusterhead that
    drifted next to a lower-id clusterhead demotes first; its members are
    re-homed too. Gateway roles are recomputed. Returns any join replays.
    """
    replays = []
    rec = topology.nodes[node_id]

    if rec.role is Role.CLUSTERHEAD:
        rivals = [nb for nb in topology.neighbors(node_id)
                  if topology.nodes[nb].role is Role.CLUSTERHEAD]
        if not rivals:
            classify_gateways(topology)
            return replays
        if min(rivals) < node_id:
            orphans = sorted(rec.member_table)
            rec.member_table = set()
            rec.role = Role.ORDINARY
            rec.cluster_id = None
            for orphan in orphans:
                topology.nodes[orphan].cluster_id = None
            replays += reaffiliate(topology, node_id, now, replay_window)
            for orphan in orphans:
                replays += reaffiliate(topology, orphan, now, replay_window)
            return replays
        classify_gateways(topology)
        return replays

    heads = [(topology.distance(node_id, h), h) for h in topology.clusterheads()
             if topology.in_range(node_id, h)]
    if heads:
        _, best = min(heads)
        if best != rec.cluster_id:
            replays += join_cluster(topology, node_id, best, now, replay_window)
    else:
        if rec.cluster_id is not None and rec.cluster_id in topology.nodes:
            topology.nodes[rec.cluster_id].member_table.discard(node_id)
        rec.role = Role.CLUSTERHEAD
        rec.cluster_id = node_id
        rec.member_table = set()
    classify_gateways(topology)
    return replays


def repair_topology(topology: ClusterTopology, now: int,
                    replay_window: int = 0) -> list[Message]:
    """Restore all structural invariants after arbitrary position changes.

    Pass 1 demotes the higher-id clusterhead of every adjacent pair, orphaning
    its members. Pass 2 re-homes every non-clusterhead to its nearest in-range
    clusterhead, electing stranded nodes (in id order) as new singleton heads.
    Returns the join replays triggered along the way.
    """
    replays = []
    changed = True
    while changed:
        changed = False
        for h in topology.clusterheads():
            rec = topology.nodes[h]
            if rec.role is not Role.CLUSTERHEAD:
                continue
            rivals = [nb for nb in topology.neighbors(h)
                      if topology.nodes[nb].role is Role.CLUSTERHEAD]
            if rivals and min(rivals) < h:
                for orphan in sorted(rec.member_table):
                    topology.nodes[orphan].cluster_id = None
                rec.member_table = set()
                rec.role = Role.ORDINARY
                rec.cluster_id = None
                changed = True

    for node_id in sorted(topology.nodes):
        rec = topology.nodes[node_id]
        if rec.role is Role.CLUSTERHEAD:
            continue
        heads = [(topology.distance(node_id, h), h) for h in topology.clusterheads()
                 if topology.in_range(node_id, h)]
        if heads:
            _, best = min(heads)
            if best != rec.cluster_id:
                replays += join_cluster(topology, node_id, best, now, replay_window)
        else:
            if rec.cluster_id is not None and rec.cluster_id in topology.nodes:
                topology.nodes[rec.cluster_id].member_table.discard(node_id)
            rec.role = Role.CLUSTERHEAD
            rec.cluster_id = node_id
            rec.member_table = set()
    classify_gateways(topology)
    return replays


@dataclass(frozen=True)
class Forward:
    """One transmission requested by the routing rules."""

    sender: int
    msg: Message
    kind: str  # "unicast" | "broadcast"
    addressed_to: int | None = None
    guaranteed: bool = False  # fixed-clusterhead GTS hop


class ClusterRouter:
    """Per-reception forwarding rules plus the caches they maintain.

    Every radio transmission is heard by all in-range neighbors; a node
    processes a given message id at most once (bounded duplicate cache).
    Ordinary nodes only consume; gateways push the wave across the border;
    clusterheads short-circuit to members they know. With fixed clusterheads
    the message instead follows a precomputed backbone route of addressed
    unicasts and nothing floods.
    """

    def __init__(self, topology: ClusterTopology, *, dedup_capacity: int = 256,
                 replay_window: int = 0, fixed_clusterheads: bool = False):
        if dedup_capacity < 1:
            raise ConfigurationError("dedup_capacity must be >= 1")
        self.topology = topology
        self.dedup_capacity = dedup_capacity
        self.replay_window = replay_window
        self.fixed_clusterheads = fixed_clusterheads
        self.expiry_drops = 0

    def _mark(self, node_id: int, msg_id: int, now: int) -> bool:
        """Record msg_id at node; False when it was already processed."""
        cache = self.topology.nodes[node_id].dedup_cache
        if msg_id in cache:
            return False
        cache[msg_id] = now
        while len(cache) > self.dedup_capacity:
            cache.popitem(last=False)
        return True

    def originate(self, src: int, msg: Message, now: int) -> list[Forward]:
        """First transmission of a fresh message from its source node."""
        if msg.expired(now):
            self.expiry_drops += 1
            return []
        self._mark(src, msg.msg_id, now)
        rec = self.topology.nodes[src]
        if self.fixed_clusterheads and msg.dst != BROADCAST:
            route = self._backbone_route(src, msg.dst)
            if route is None:
                return []
            routed = replace(msg, route=route)
            return [Forward(src, routed.forked(src), "unicast", route[1], guaranteed=True)]
        if rec.role is Role.CLUSTERHEAD:
            return self._dispatch(src, msg, now)
        return [Forward(src, msg.forked(src), "unicast", rec.cluster_id)]

    def receive(self, receiver: int, msg: Message, sender: int, now: int,
                addressed_to: int | None = None) -> tuple[bool, list[Forward]]:
        """Handle one radio reception; returns (delivered_here, forwards)."""
        rec = self.topology.nodes[receiver]

        if self.fixed_clusterheads and msg.route:
            if addressed_to != receiver:
                return False, []
            self._mark(receiver, msg.msg_id, now)
            if msg.expired(now):
                self.expiry_drops += 1
                return False, []
            if msg.dst == receiver:
                return True, []
            idx = msg.route.index(receiver)
            return False, [Forward(receiver, msg.forked(receiver), "unicast",
                                   msg.route[idx + 1], guaranteed=True)]

        if not self._mark(receiver, msg.msg_id, now):
            return False, []
        if msg.expired(now):
            self.expiry_drops += 1
            return False, []

        delivered = msg.dst == receiver or msg.dst == BROADCAST
        if msg.dst == receiver:
            return True, []

        if rec.role is Role.CLUSTERHEAD:
            return delivered, self._dispatch(receiver, msg, now)
        if rec.role is Role.GATEWAY:
            sender_cluster = self.topology.nodes[sender].cluster_id
            if sender_cluster == rec.cluster_id:
                return delivered, [Forward(receiver, msg.forked(receiver), "broadcast")]
            return delivered, [Forward(receiver, msg.forked(receiver), "unicast",
                                       rec.cluster_id)]
        return delivered, []

    def _dispatch(self, ch: int, msg: Message, now: int) -> list[Forward]:
        """Clusterhead action: member short-circuit or intra-cluster broadcast."""
        rec = self.topology.nodes[ch]
        rec.replay_cache.append((now, msg))
        rec.replay_cache = [(t, m) for t, m in rec.replay_cache
                            if t >= now - self.replay_window and not m.expired(now)]
        if msg.dst != BROADCAST and msg.dst in rec.member_table:
            return [Forward(ch, msg.forked(ch), "unicast", msg.dst)]
        return [Forward(ch, msg.forked(ch), "broadcast")]

    def join_replays(self, node_id: int, ch_id: int, now: int) -> list[Forward]:
        """Replay transmissions owed to a node that just joined ch_id."""
        msgs = join_cluster(self.topology, node_id, ch_id, now, self.replay_window)
        return [Forward(ch_id, m.forked(ch_id), "unicast", node_id) for m in msgs]

    def _backbone_route(self, src: int, dst: int) -> tuple[int, ...] | None:
        """Shortest hop path over clusterheads and gateways (plus endpoints)."""
        topo = self.topology
        allowed = {i for i, r in topo.nodes.items()
                   if r.role in (Role.CLUSTERHEAD, Role.GATEWAY)}
        allowed.update((src, dst))
        parent = {src: None}
        frontier = [src]
        while frontier and dst not in parent:
            nxt = []
            for u in frontier:
                for v in topo.neighbors(u):
                    if v in allowed and v not in parent:
                        parent[v] = u
                        nxt.append(v)
            frontier = nxt
        if dst not in parent:
            return None
        path = [dst]
        while parent[path[-1]] is not None:
            path.append(parent[path[-1]])
        return tuple(reversed(path))
