"""Deterministic discrete-event core.

One simulation is one isolated single-threaded event loop: a (time, seq)
priority queue, a unit-disk radio channel with interval-overlap collision
semantics (no capture), per-node radio-state/energy bookkeeping and metrics
collection. Identical (scenario, seed) inputs produce bit-identical outputs.

Two scenario modes share the loop:

* pan    -- one beacon-enabled coordinator plus devices: superframes, slotted
            CSMA-CA in the CAP, GTS traffic in the CFP, tracked/untracked
            synchronization, indirect coordinator-to-node transfers.
* manet  -- clustered multi-hop topology driven by the broadcast routing
            rules; transmissions are modeled at frame granularity over the
            unit-disk graph without MAC contention (protocol-level study).
"""

from __future__ import annotations

import heapq
import math
import random
from dataclasses import dataclass, field
from enum import Enum

from .clustering import (BROADCAST, ClusterRouter, Forward, Message,
                         form_clusters, repair_topology)
from .core import (ConfigurationError, EnergyLedger, RadioState, frame_airtime)
from .csma import (CsmaPhase, TxOutcome, TxResult, draw_backoff, fits_in_cap,
                   init_attempt, on_cca)
from .mobility import RandomWaypoint
from .scenario import Scenario
from .superframe import (GtsDenied, SuperframeSchedule, allocate_gts,
                         deallocate_gts, derive_schedule, locate_gts)

DATA_REQUEST_BYTES = 12
ACK_BYTES = 11
BEACON_MISS_SLACK = 600  # symbols past the expected beacon before declaring a miss


class EventKind(Enum):
    BEACON_TX = "beacon-tx"
    FRAME_TX_START = "frame-tx-start"
    FRAME_TX_END = "frame-tx-end"
    CCA = "cca"
    WAKE = "wake"
    SLEEP = "sleep"
    MOBILITY_TICK = "mobility-tick"
    APP_PACKET = "app-packet"
    GTS_WINDOW = "gts-window"
    DEADLINE_EXPIRY = "deadline-expiry"


class EventQueue:
    """Priority queue ordered by (time, seq); seq breaks ties in scheduling order."""

    def __init__(self):
        self._heap = []
        self._seq = 0
        self.now = 0

    def push(self, time: int, kind: EventKind, node, fn, detail: str = "") -> None:
        if time < self.now:
            raise RuntimeError(f"event scheduled in the past: {time} < {self.now}")
        heapq.heappush(self._heap, (time, self._seq, kind, node, fn, detail))
        self._seq += 1

    def pop(self):
        time, seq, kind, node, fn, detail = heapq.heappop(self._heap)
        self.now = time
        return time, seq, kind, node, fn, detail

    def peek_time(self):
        return self._heap[0][0] if self._heap else None

    def __bool__(self):
        return bool(self._heap)


@dataclass(frozen=True)
class ChannelModel:
    """Unit-disk reception: heard iff euclidean distance <= range_m."""

    range_m: float
    arena: tuple[float, float] | None = None


def _overlaps(a_start, a_end, b_start, b_end) -> bool:
    if a_start == a_end:  # zero-length sample window
        return b_start <= a_start < b_end
    if b_start == b_end:
        return a_start <= b_start < a_end
    return a_start < b_end and b_start < a_end


def deliver(transmissions, positions, range_m: float) -> dict:
    """Per-receiver outcome of a set of frame transmissions.

    `transmissions` is a list of (sender_id, start, end). A receiver hears a
    frame iff it is within range of the sender; the frame is clean iff no
    other in-range transmission overlaps it (no capture effect). Returns
    {receiver: {sender: clean}} for every node in `positions`.
    """
    out = {}
    for r in sorted(positions):
        rx, ry = positions[r]
        heard = []
        for (s, st, en) in transmissions:
            if s == r:
                continue
            sx, sy = positions[s]
            if math.hypot(sx - rx, sy - ry) <= range_m:
                heard.append((s, st, en))
        outcomes = {}
        for (s, st, en) in heard:
            clean = not any(_overlaps(st, en, st2, en2)
                            for (s2, st2, en2) in heard if s2 != s)
            outcomes[s] = clean
        out[r] = outcomes
    return out


@dataclass
class Frame:
    kind: str  # "beacon" | "data" | "data_request" | "ack" | "gts_data"
    sender: int
    dst: int
    mpdu_bytes: int
    packet: "AppPacket | None" = None
    meta: dict = field(default_factory=dict)


@dataclass
class AppPacket:
    packet_id: int
    src: int
    dst: int
    size_bytes: int
    created_at: int
    deadline: int | None
    direction: str  # "up" | "down"
    state: str = "pending"  # -> delivered | failed | expired
    listed_beacons: int = 0


class _Transmission:
    __slots__ = ("sender", "frame", "start", "end", "candidates")

    def __init__(self, sender, frame, start, end, candidates):
        self.sender = sender
        self.frame = frame
        self.start = start
        self.end = end
        self.candidates = candidates  # receivers in RX for the whole frame so far


class Channel:
    """Stateful unit-disk channel tracking in-flight frames and listeners."""

    def __init__(self, sim):
        self.sim = sim
        self.window = []  # transmissions still relevant for overlap checks

    def _in_range(self, a: int, b: int) -> bool:
        ax, ay = self.sim.positions[a]
        bx, by = self.sim.positions[b]
        return math.hypot(ax - bx, ay - by) <= self.sim.scenario.radio_range_m

    def begin(self, sender: int, frame: Frame, start: int, end: int) -> _Transmission:
        horizon = start - 4 * self.sim.max_airtime
        self.window = [t for t in self.window if t.end > horizon]
        candidates = {n for n, node in self.sim.nodes.items()
                      if n != sender and node.state is RadioState.RX
                      and self._in_range(sender, n)}
        tx = _Transmission(sender, frame, start, end, candidates)
        self.window.append(tx)
        return tx

    def drop_candidate(self, node_id: int, now: int) -> None:
        """A node that leaves RX mid-frame cannot receive that frame."""
        for t in self.window:
            if t.end > now:
                t.candidates.discard(node_id)

    def add_candidate(self, node_id: int, now: int) -> None:
        """A node entering RX exactly at a frame's first symbol still hears it."""
        for t in self.window:
            if t.start == now and t.sender != node_id and self._in_range(t.sender, node_id):
                t.candidates.add(node_id)

    def busy_for(self, node_id: int, t0: int, t1: int) -> bool:
        """Clear channel assessment over [t0, t1): any in-range energy counts."""
        return any(t.sender != node_id and _overlaps(t0, t1, t.start, t.end)
                   and self._in_range(t.sender, node_id)
                   for t in self.window)

    def end(self, tx: _Transmission) -> list[int]:
        """Clean receivers of a finished frame; corrupted pairs feed the
        collision counter when the receiver was the frame's addressee."""
        clean = []
        for r in sorted(tx.candidates):
            corrupted = any(t is not tx and _overlaps(tx.start, tx.end, t.start, t.end)
                            and self._in_range(t.sender, r)
                            for t in self.window)
            if corrupted:
                if tx.frame.dst == r or tx.frame.dst == BROADCAST:
                    self.sim.metrics_collisions += 1
            else:
                clean.append(r)
        return clean


@dataclass
class NodeMetrics:
    node_id: int
    role: str
    sync_mode: str
    ledger: EnergyLedger
    frames_tx: int = 0
    frames_rx: int = 0
    caf_count: int = 0


@dataclass
class MetricsReport:
    horizon_symbols: int
    symbol_period_us: float
    nodes: list[NodeMetrics]
    generated: int = 0
    delivered: int = 0
    expired: int = 0
    failed: int = 0
    collisions: int = 0
    channel_access_failures: int = 0
    deferrals: int = 0
    redundant_transmissions: int = 0
    gts_frames: int = 0
    window_overflows: int = 0
    gts_waste_symbols: int = 0
    delivered_bits: int = 0
    latencies_ms: list = field(default_factory=list)
    outcomes: list = field(default_factory=list)

    @property
    def in_flight(self) -> int:
        return self.generated - self.delivered - self.expired - self.failed

    @property
    def horizon_s(self) -> float:
        return self.horizon_symbols * self.symbol_period_us / 1e6

    @property
    def gts_waste_ms(self) -> float:
        return self.gts_waste_symbols * self.symbol_period_us / 1000.0

    def mean_latency_ms(self) -> float | None:
        if not self.latencies_ms:
            return None
        return sum(self.latencies_ms) / len(self.latencies_ms)

    def p95_latency_ms(self) -> float | None:
        if not self.latencies_ms:
            return None
        ordered = sorted(self.latencies_ms)
        rank = max(0, math.ceil(0.95 * len(ordered)) - 1)
        return ordered[rank]

    def effective_throughput_bps(self) -> float:
        return self.delivered_bits / self.horizon_s if self.horizon_s > 0 else 0.0


class _Node:
    """Mutable per-node simulation state (pan and manet modes share it)."""

    def __init__(self, sim, node_id, sync_mode, is_coordinator):
        self.sim = sim
        self.nid = node_id
        self.sync_mode = sync_mode
        self.is_coordinator = is_coordinator
        self.state = RadioState.SLEEP
        self.state_since = 0
        self.ledger = EnergyLedger(sim.scenario.phy.symbol_period_us)
        self.rng = random.Random((sim.seed << 24) ^ (node_id * 0x9E3779B1) ^ 0x5BD1)
        self.frames_tx = 0
        self.frames_rx = 0
        self.caf_count = 0
        # device-side MAC state
        self.queue = []  # CSMA uplink frames (AppPackets / data requests)
        self.gts_queue = []
        self.sched: SuperframeSchedule | None = None
        self.interval_start = 0
        self.interval_index = -1
        self.lost_beacons = 0
        self.acquiring = False
        self.csma_active = False
        self.at_cca = False
        self.backoff_remaining = 0
        self.attempt = None
        self.retries = 0
        self.attempt_rounds = 0
        self.backoff_spent = 0
        self.request_queued = False
        self.ack_token = 0
        # coordinator-side state
        self.pending: dict[int, list[AppPacket]] = {}
        self.seen_packets: set[int] = set()
        self.gts_activity: dict[int, int] = {}
        self.gts_idle: dict[int, int] = {}


class Simulator:
    """Executes one scenario deterministically; `run()` yields the metrics."""

    def __init__(self, scenario: Scenario, seed: int | None = None,
                 collect_trace: bool = False):
        self.scenario = scenario
        self.seed = scenario.seed if seed is None else seed
        self.queue = EventQueue()
        self.trace: list[str] | None = [] if collect_trace else None
        self.horizon = scenario.horizon_symbols
        self.max_airtime = frame_airtime(127, scenario.phy)
        self.positions: dict[int, tuple[float, float]] = {}
        self.nodes: dict[int, _Node] = {}
        self.channel = Channel(self)
        self.packets: list[AppPacket] = []
        self.latencies: list[float] = []
        self.outcomes: list[TxOutcome] = []
        self.metrics_collisions = 0
        self.deferrals = 0
        self.gts_frames = 0
        self.window_overflows = 0
        self.gts_waste = 0
        self.delivered_bits = 0
        self.delivered = 0
        self.expired = 0
        self.failed = 0
        self.redundant_tx = 0
        if scenario.mode == "pan":
            self._build_pan()
        else:
            self._build_manet()

    # ------------------------------------------------------------------ util

    def _log(self, time, seq, kind, node, detail):
        if self.trace is not None:
            nid = "-" if node is None else str(node)
            self.trace.append(f"{time}\t{seq}\t{nid}\t{kind.value}\t{detail}")

    def _push(self, time, kind, node, fn, detail=""):
        self.queue.push(time, kind, node, fn, detail)

    def set_state(self, node: _Node, new_state: RadioState, now: int) -> None:
        if node.state is new_state:
            return
        node.ledger.accrue(node.state, now - node.state_since, self.scenario.power)
        if node.state is RadioState.RX:
            self.channel.drop_candidate(node.nid, now)
        node.state = new_state
        node.state_since = now
        if new_state is RadioState.RX:
            self.channel.add_candidate(node.nid, now)

    def _close_ledgers(self) -> None:
        for node in self.nodes.values():
            node.ledger.accrue(node.state, self.horizon - node.state_since,
                               self.scenario.power)
            node.state_since = self.horizon

    def run(self) -> MetricsReport:
        while self.queue:
            t = self.queue.peek_time()
            if t > self.horizon:
                break
            time, seq, kind, node, fn, detail = self.queue.pop()
            self._log(time, seq, kind, node, detail)
            fn(time)
        self.queue.now = self.horizon
        if self.scenario.mode == "manet":
            self._finish_manet_metrics()
        self._close_ledgers()
        return self._report()

    def _report(self) -> MetricsReport:
        rows = []
        for nid in sorted(self.nodes):
            node = self.nodes[nid]
            if node.ledger.total_time_symbols != self.horizon:
                raise RuntimeError(f"ledger of node {nid} does not cover the horizon")
            rows.append(NodeMetrics(nid, self._role_of(nid), node.sync_mode,
                                    node.ledger, node.frames_tx, node.frames_rx,
                                    node.caf_count))
        report = MetricsReport(
            horizon_symbols=self.horizon,
            symbol_period_us=self.scenario.phy.symbol_period_us,
            nodes=rows,
            generated=len(self.packets),
            delivered=self.delivered,
            expired=self.expired,
            failed=self.failed,
            collisions=self.metrics_collisions,
            channel_access_failures=sum(n.caf_count for n in self.nodes.values()),
            deferrals=self.deferrals,
            redundant_transmissions=self.redundant_tx,
            gts_frames=self.gts_frames,
            window_overflows=self.window_overflows,
            gts_waste_symbols=self.gts_waste,
            delivered_bits=self.delivered_bits,
            latencies_ms=self.latencies,
            outcomes=self.outcomes,
        )
        if report.in_flight < 0:
            raise RuntimeError("packet accounting went negative")
        return report

    def _role_of(self, nid: int) -> str:
        if self.scenario.mode == "pan":
            return "coordinator" if nid == self.scenario.coordinator_id else "device"
        return self.topology.nodes[nid].role.value

    def _sym_per_ms(self) -> float:
        return 1000.0 / self.scenario.phy.symbol_period_us

    def _mark_delivered(self, pkt: AppPacket, now: int) -> None:
        if pkt.state != "pending":
            return
        pkt.state = "delivered"
        self.delivered += 1
        self.delivered_bits += pkt.size_bytes * 8
        self.latencies.append((now - pkt.created_at)
                              * self.scenario.phy.symbol_period_us / 1000.0)

    def _mark_failed(self, pkt: AppPacket) -> None:
        if pkt.state == "pending":
            pkt.state = "failed"
            self.failed += 1

    def _mark_expired(self, pkt: AppPacket) -> None:
        if pkt.state == "pending":
            pkt.state = "expired"
            self.expired += 1

    # ====================================================================== #
    # pan mode                                                               #
    # ====================================================================== #

    def _build_pan(self) -> None:
        sc = self.scenario
        coord_id = sc.coordinator_id
        self.positions[coord_id] = (0.0, 0.0)
        coord = _Node(self, coord_id, "tracked", True)
        self.nodes[coord_id] = coord
        for i, spec in enumerate(sc.nodes):
            if spec.x is not None and spec.y is not None:
                pos = (spec.x, spec.y)
            else:
                angle = 2.0 * math.pi * i / max(1, len(sc.nodes))
                pos = (math.cos(angle), math.sin(angle))
            self.positions[spec.node_id] = pos
            node = _Node(self, spec.node_id, spec.sync_mode, False)
            self.nodes[spec.node_id] = node
            if spec.sync_mode == "tracked":
                node.state = RadioState.RX  # listening for the first beacon

        # static GTS allocations requested by the scenario
        self.base_schedule = derive_schedule(sc.config, sc.phy)
        for req in sc.gts_requests:
            try:
                _, self.base_schedule = allocate_gts(
                    self.base_schedule, req.node, req.direction, req.slots)
            except GtsDenied as exc:
                raise ConfigurationError(
                    f"gts_requests: node {req.node} denied ({exc.reason})") from None
        self.gts_list = self.base_schedule.gts_list
        self.gts_nodes = {d.device_id for d in self.gts_list}

        self._generate_pan_workload()
        bi = sc.beacon_interval_symbols
        for k in range(sc.duration_intervals):
            self._push(k * bi, EventKind.BEACON_TX, coord_id,
                       lambda now, k=k: self._beacon(now, k), f"interval={k}")

    def _generate_pan_workload(self) -> None:
        sc = self.scenario
        bi = sc.beacon_interval_symbols
        arrivals = []  # (time, order, workload-index, spec)
        for w_idx, w in enumerate(sc.workload):
            rng = random.Random((self.seed << 16) ^ (w_idx * 0x85EB_CA6B) ^ 0xC2B2)
            if w.model == "bernoulli":
                for k in range(sc.duration_intervals):
                    if rng.random() < w.p:
                        off = rng.randrange(bi) if w.jitter == "uniform" else 0
                        arrivals.append((k * bi + off, w_idx, w))
            elif w.model == "poisson":
                t = 0.0
                sym_per_s = 1e6 / sc.phy.symbol_period_us
                while w.rate_pps > 0:
                    t += rng.expovariate(w.rate_pps) * sym_per_s
                    if t >= self.horizon:
                        break
                    arrivals.append((int(t), w_idx, w))
            elif w.model == "periodic":
                for k in range(0, sc.duration_intervals, w.period_intervals):
                    off = rng.randrange(bi) if w.jitter == "uniform" else 0
                    arrivals.append((k * bi + off, w_idx, w))
            elif w.model == "oneshot":
                if 0 <= w.at_interval < sc.duration_intervals:
                    arrivals.append((w.at_interval * bi, w_idx, w))
        arrivals.sort(key=lambda a: (a[0], a[1]))
        for order, (time, w_idx, w) in enumerate(arrivals):
            deadline = None
            if w.validity_ms is not None:
                deadline = time + sc.ms_to_symbols(w.validity_ms)
            if w.direction == "up":
                src, dst = w.node, sc.coordinator_id
            else:
                src, dst = sc.coordinator_id, w.node
            pkt = AppPacket(order, src, dst, w.size_bytes, time, deadline, w.direction)
            self.packets.append(pkt)
            self._push(time, EventKind.APP_PACKET, w.node,
                       lambda now, p=pkt: self._app_packet(p, now),
                       f"pkt={order} dir={w.direction}")
            if deadline is not None:
                self._push(deadline + 1, EventKind.DEADLINE_EXPIRY, w.node,
                           lambda now, p=pkt: self._mark_expired(p), f"pkt={order}")

    # ------------------------------------------------------------- beacons

    def _beacon(self, now: int, k: int) -> None:
        sc = self.scenario
        coord = self.nodes[sc.coordinator_id]
        self._gts_bookkeeping(k)
        self._pending_bookkeeping()
        pending_ids = tuple(sorted(n for n, q in coord.pending.items() if q))
        sched = derive_schedule(sc.config, sc.phy, self.gts_list, pending_ids)
        coord.sched = sched
        coord.interval_start = now
        coord.interval_index = k
        frame = Frame("beacon", coord.nid, BROADCAST, sched.beacon_bytes,
                      meta={"schedule": sched, "interval": k, "start": now})
        self._transmit(coord, frame, now)
        # coordinator stays in RX for the active portion, sleeps after SD
        sd_at = now + sched.active_duration
        if sd_at < now + sched.beacon_interval:
            self._push(sd_at, EventKind.SLEEP, coord.nid,
                       lambda t, n=coord: self._end_of_active(n, t), "coordinator")

    def _gts_bookkeeping(self, k: int) -> None:
        if not self.gts_list or k == 0:
            return
        sc = self.scenario
        coord = self.nodes[sc.coordinator_id]
        sched = derive_schedule(sc.config, sc.phy, self.gts_list)
        removed = []
        for d in self.gts_list:
            window = locate_gts(sched, d.device_id)
            used = coord.gts_activity.get(d.device_id, 0)
            self.gts_waste += max(0, (window[1] - window[0]) - used)
            if used == 0:
                coord.gts_idle[d.device_id] = coord.gts_idle.get(d.device_id, 0) + 1
                if coord.gts_idle[d.device_id] >= sc.gts_expiry_intervals:
                    removed.append(d.device_id)
            else:
                coord.gts_idle[d.device_id] = 0
        coord.gts_activity = {}
        for dev in removed:
            sched2 = derive_schedule(sc.config, sc.phy, self.gts_list)
            sched2 = deallocate_gts(sched2, dev)
            self.gts_list = sched2.gts_list

    def _pending_bookkeeping(self) -> None:
        sc = self.scenario
        coord = self.nodes[sc.coordinator_id]
        for nid in sorted(coord.pending):
            kept = []
            for pkt in coord.pending[nid]:
                if pkt.state != "pending":
                    continue
                if pkt.deadline is not None and self.queue.now > pkt.deadline:
                    self._mark_expired(pkt)
                    continue
                pkt.listed_beacons += 1
                if pkt.listed_beacons > sc.pending_expiry_intervals:
                    self._mark_expired(pkt)
                    continue
                kept.append(pkt)
            coord.pending[nid] = kept

    # ------------------------------------------------------- frame plumbing

    def _transmit(self, node: _Node, frame: Frame, now: int) -> None:
        air = frame_airtime(frame.mpdu_bytes, self.scenario.phy)
        self.set_state(node, RadioState.TX, now)
        node.frames_tx += 1
        tx = self.channel.begin(node.nid, frame, now, now + air)
        self._push(now, EventKind.FRAME_TX_START, node.nid, lambda t: None,
                   f"kind={frame.kind} bytes={frame.mpdu_bytes} dst={frame.dst}")
        self._push(now + air, EventKind.FRAME_TX_END, node.nid,
                   lambda t, tx=tx: self._tx_end(tx, t),
                   f"kind={frame.kind}")

    def _tx_end(self, tx: _Transmission, now: int) -> None:
        sender = self.nodes[tx.sender]
        receivers = self.channel.end(tx)
        frame = tx.frame
        # sender-side continuation
        if frame.kind == "beacon":
            self.set_state(sender, RadioState.RX, now)
        elif frame.kind in ("data", "data_request"):
            self._await_ack(sender, frame, now)
        elif frame.kind == "ack":
            self.set_state(sender, RadioState.RX, now)
            if frame.meta.get("final_for") is not None and not sender.is_coordinator:
                self._transaction_done(sender, now)
        elif frame.kind == "gts_data":
            self._gts_next(sender, now)
        # receiver-side processing
        for r in receivers:
            self._handle_frame(self.nodes[r], frame, now)

    def _handle_frame(self, node: _Node, frame: Frame, now: int) -> None:
        if frame.kind == "beacon":
            if not node.is_coordinator:
                self._on_beacon(node, frame, now)
            return
        if frame.dst != node.nid:
            return  # overheard
        node.frames_rx += 1
        if node.is_coordinator:
            self._coordinator_frame(node, frame, now)
        else:
            self._device_frame(node, frame, now)

    # --------------------------------------------------------- device side

    def _on_beacon(self, node: _Node, frame: Frame, now: int) -> None:
        sc = self.scenario
        if frame.sender != sc.coordinator_id:
            return
        node.frames_rx += 1
        sched: SuperframeSchedule = frame.meta["schedule"]
        k = frame.meta["interval"]
        node.sched = sched
        node.interval_start = frame.meta["start"]
        node.interval_index = k
        node.lost_beacons = 0
        node.acquiring = False

        if node.sync_mode == "tracked":
            nxt = node.interval_start + sched.beacon_interval
            if nxt <= self.horizon:
                wake_at = max(now, nxt - sc.beacon_guard_symbols)
                self._push(wake_at, EventKind.WAKE, node.nid,
                           lambda t, n=node: self._wake(n, t), f"interval={k + 1}")
                self._push(nxt + BEACON_MISS_SLACK, EventKind.WAKE, node.nid,
                           lambda t, n=node, kk=k + 1: self._check_beacon(n, kk, t),
                           f"miss-check={k + 1}")

        if (node.sync_mode == "tracked" and not node.request_queued
                and node.nid in sched.pending_addresses):
            node.queue.append("request")
            node.request_queued = True

        if node.nid in self.gts_nodes and sched.descriptor_for(node.nid) and node.gts_queue:
            window = locate_gts(sched, node.nid)
            self._push(node.interval_start + window[0], EventKind.GTS_WINDOW,
                       node.nid, lambda t, n=node: self._gts_window(n, t),
                       f"slots={window}")

        if node.csma_active:
            if node.at_cca:
                self._pre_cca(node, now)
            else:
                self._resume_countdown(node, now)
        elif node.queue:
            self._service(node, now)
        else:
            self._idle_policy(node, now)
        self._schedule_end_of_active(node, now)

    def _schedule_end_of_active(self, node: _Node, now: int) -> None:
        sc = self.scenario
        sched = node.sched
        sd_at = node.interval_start + sched.active_duration
        next_wake = node.interval_start + sched.beacon_interval - sc.beacon_guard_symbols
        if sd_at < next_wake and sd_at <= self.horizon:
            self._push(sd_at, EventKind.SLEEP, node.nid,
                       lambda t, n=node: self._end_of_active(n, t), "device")

    def _end_of_active(self, node: _Node, now: int) -> None:
        if node.state is not RadioState.RX:
            return
        if node.sync_mode == "untracked" and node.csma_active:
            node.acquiring = True  # must catch the next beacon to resume
            return
        self.set_state(node, RadioState.SLEEP, now)

    def _wake(self, node: _Node, now: int) -> None:
        if node.state is RadioState.SLEEP:
            self.set_state(node, RadioState.RX, now)

    def _check_beacon(self, node: _Node, k: int, now: int) -> None:
        sc = self.scenario
        if node.interval_index >= k or node.acquiring:
            return
        node.lost_beacons += 1
        if node.lost_beacons >= sc.max_lost_beacons:
            node.acquiring = True  # sync loss: fall back to untracked acquisition
            self.set_state(node, RadioState.RX, now)
            return
        bi = node.sched.beacon_interval if node.sched else sc.beacon_interval_symbols
        nxt = node.interval_start + (node.lost_beacons + 1) * bi
        if nxt > self.horizon:
            return
        if not node.csma_active and node.state is RadioState.RX:
            self.set_state(node, RadioState.SLEEP, now)
        self._push(max(now, nxt - sc.beacon_guard_symbols), EventKind.WAKE, node.nid,
                   lambda t, n=node: self._wake(n, t), f"interval={k + 1}")
        self._push(nxt + BEACON_MISS_SLACK, EventKind.WAKE, node.nid,
                   lambda t, n=node, kk=k + 1: self._check_beacon(n, kk, t),
                   f"miss-check={k + 1}")

    def _idle_policy(self, node: _Node, now: int) -> None:
        """Nothing left to send this interval: sleep now or idle in RX to SD."""
        if node.sync_mode == "untracked":
            self.set_state(node, RadioState.SLEEP, now)
            return
        if self.scenario.sleep_after_ack:
            self.set_state(node, RadioState.SLEEP, now)
        else:
            self.set_state(node, RadioState.RX, now)

    def _app_packet(self, pkt: AppPacket, now: int) -> None:
        if pkt.direction == "down":
            coord = self.nodes[self.scenario.coordinator_id]
            coord.pending.setdefault(pkt.dst, []).append(pkt)
            return
        node = self.nodes[pkt.src]
        if node.nid in self.gts_nodes:
            self._gts_enqueue(node, pkt, now)
            return
        node.queue.append(pkt)
        if node.sync_mode == "untracked" and node.state is RadioState.SLEEP:
            node.acquiring = True
            self.set_state(node, RadioState.RX, now)
        elif (node.sync_mode == "tracked" and not node.csma_active
              and node.state is RadioState.RX and node.sched is not None
              and node.interval_index >= 0):
            self._service(node, now)

    # ------------------------------------------------------------ CSMA glue

    def _cap_bounds(self, node: _Node) -> tuple[int, int]:
        sched = node.sched
        return (node.interval_start + sched.cap[0], node.interval_start + sched.cap[1])

    def _frame_for(self, node: _Node, item) -> Frame:
        if item == "request":
            return Frame("data_request", node.nid, self.scenario.coordinator_id,
                         DATA_REQUEST_BYTES)
        return Frame("data", node.nid, self.scenario.coordinator_id,
                     item.size_bytes, packet=item)

    def _transaction_symbols(self, node: _Node, item) -> int:
        phy = self.scenario.phy
        ack = frame_airtime(ACK_BYTES, phy)
        if item == "request":
            chain = (frame_airtime(DATA_REQUEST_BYTES, phy) + phy.turnaround_symbols
                     + ack + phy.turnaround_symbols + self.max_airtime
                     + phy.turnaround_symbols + ack)
        else:
            chain = (frame_airtime(item.size_bytes, phy)
                     + phy.turnaround_symbols + ack)
        return 2 * phy.cca_symbols + chain

    def _service(self, node: _Node, now: int) -> None:
        while node.queue:
            item = node.queue[0]
            if item != "request" and item.state != "pending":
                node.queue.pop(0)
                continue
            if (item != "request" and item.deadline is not None
                    and now > item.deadline):
                self._mark_expired(item)
                node.queue.pop(0)
                continue
            break
        if not node.queue:
            node.csma_active = False
            self._idle_policy(node, now)
            return
        node.csma_active = True
        node.at_cca = False
        node.attempt = init_attempt(self.scenario.csma)
        node.retries = 0
        node.attempt_rounds = 1
        node.backoff_spent = 0
        self._begin_backoff(node, now)

    def _begin_backoff(self, node: _Node, now: int) -> None:
        periods = draw_backoff(node.attempt, node.rng)
        node.backoff_remaining = periods * self.scenario.phy.unit_backoff_symbols
        node.backoff_spent += node.backoff_remaining
        self._resume_countdown(node, now)

    def _resume_countdown(self, node: _Node, now: int) -> None:
        unit = self.scenario.phy.unit_backoff_symbols
        cap0, cap1 = self._cap_bounds(node)
        if now >= cap1:
            return  # parked; resumes at the next received beacon
        self.set_state(node, RadioState.RX, now)
        start = max(now, cap0)
        aligned = cap0 + -(-(start - cap0) // unit) * unit
        if aligned >= cap1:
            return
        end = aligned + node.backoff_remaining
        if end <= cap1:
            node.backoff_remaining = 0
            node.at_cca = True
            self._push(end, EventKind.CCA, node.nid,
                       lambda t, n=node: self._pre_cca(n, t), "countdown-done")
        else:
            consumed = (cap1 - aligned) // unit * unit
            node.backoff_remaining -= consumed
            # countdown pauses outside the CAP and resumes next interval

    def _pre_cca(self, node: _Node, now: int) -> None:
        cap0, cap1 = self._cap_bounds(node)
        if now < cap0 or now >= cap1:
            return
        txn = self._transaction_symbols(node, node.queue[0])
        if not fits_in_cap(now, txn, cap1):
            self.deferrals += 1
            node.attempt.cw = 2  # CCA pair restarts in the next CAP
            self.outcomes.append(TxOutcome(TxResult.DEFERRED_TO_NEXT_CAP,
                                           node.attempt_rounds, node.backoff_spent))
            return  # parked at CCA; resumes at the next beacon
        cca = self.scenario.phy.cca_symbols
        self._push(now + cca, EventKind.CCA, node.nid,
                   lambda t, n=node, t0=now: self._cca_result(n, t0, t), "cca")

    def _cca_result(self, node: _Node, t0: int, now: int) -> None:
        busy = self.channel.busy_for(node.nid, t0, now)
        on_cca(node.attempt, busy, self.scenario.csma)
        phase = node.attempt.phase
        if phase is CsmaPhase.BACKING_OFF:
            node.at_cca = False
            node.attempt_rounds += 1
            self._begin_backoff(node, now)
        elif phase is CsmaPhase.DONE_FAILURE:
            node.caf_count += 1
            self.outcomes.append(TxOutcome(TxResult.CHANNEL_ACCESS_FAILURE,
                                           node.attempt_rounds, node.backoff_spent))
            item = node.queue.pop(0)
            if item == "request":
                node.request_queued = False
            else:
                self._mark_failed(item)
            node.csma_active = False
            node.at_cca = False
            self._service(node, now)
        elif phase is CsmaPhase.TRANSMITTING:
            node.at_cca = False
            self._transmit(node, self._frame_for(node, node.queue[0]), now)
        else:  # second CCA of the pair
            cca = self.scenario.phy.cca_symbols
            self._push(now + cca, EventKind.CCA, node.nid,
                       lambda t, n=node, t0=now: self._cca_result(n, t0, t), "cca")

    def _await_ack(self, node: _Node, frame: Frame, now: int) -> None:
        phy = self.scenario.phy
        turn = phy.turnaround_symbols
        ack_air = frame_airtime(ACK_BYTES, phy)
        self.set_state(node, RadioState.IDLE, now)
        node.ack_token += 1
        token = node.ack_token
        self._push(now + turn, EventKind.WAKE, node.nid,
                   lambda t, n=node: self.set_state(n, RadioState.RX, t), "ack-rx")
        self._push(now + turn + ack_air + 1, EventKind.WAKE, node.nid,
                   lambda t, n=node, tok=token: self._ack_timeout(n, tok, t),
                   "ack-timeout")

    def _ack_timeout(self, node: _Node, token: int, now: int) -> None:
        if node.ack_token != token or not node.csma_active:
            return
        node.retries += 1
        if node.retries > self.scenario.max_frame_retries:
            self.outcomes.append(TxOutcome(TxResult.NO_ACK, node.attempt_rounds,
                                           node.backoff_spent))
            item = node.queue.pop(0)
            if item == "request":
                node.request_queued = False
            else:
                self._mark_failed(item)
            node.csma_active = False
            self._service(node, now)
            return
        node.attempt = init_attempt(self.scenario.csma)
        node.attempt_rounds += 1
        self._begin_backoff(node, now)

    def _device_frame(self, node: _Node, frame: Frame, now: int) -> None:
        phy = self.scenario.phy
        if frame.kind == "ack":
            node.ack_token += 1  # cancels the timeout
            if not node.csma_active or not node.queue:
                return
            item = node.queue[0]
            if item == "request":
                if frame.meta.get("pending"):
                    return  # stay in RX: the coordinator sends the data next
                node.queue.pop(0)
                node.request_queued = False
                self._transaction_done(node, now)
            else:
                node.queue.pop(0)
                self.outcomes.append(TxOutcome(TxResult.DELIVERED,
                                               node.attempt_rounds,
                                               node.backoff_spent))
                self._transaction_done(node, now)
        elif frame.kind == "data":
            # indirect transfer: downlink data after our data request
            self._mark_delivered(frame.packet, now)
            self._push(now + phy.turnaround_symbols, EventKind.FRAME_TX_START,
                       node.nid,
                       lambda t, n=node, p=frame.packet: self._final_ack(n, p, t),
                       "final-ack")
            self.set_state(node, RadioState.IDLE, now)

    def _final_ack(self, node: _Node, pkt: AppPacket, now: int) -> None:
        ack = Frame("ack", node.nid, self.scenario.coordinator_id, ACK_BYTES,
                    meta={"final_for": pkt.packet_id})
        self._transmit(node, ack, now)
        if node.csma_active and node.queue and node.queue[0] == "request":
            node.queue.pop(0)
            node.request_queued = False

    def _transaction_done(self, node: _Node, now: int) -> None:
        node.csma_active = False
        if node.queue:
            self._service(node, now)
        else:
            self._idle_policy(node, now)

    # ------------------------------------------------------------- GTS path

    def _gts_enqueue(self, node: _Node, pkt: AppPacket, now: int) -> None:
        sched = derive_schedule(self.scenario.config, self.scenario.phy, self.gts_list)
        window = locate_gts(sched, node.nid)
        if window is None:
            node.queue.append(pkt)  # descriptor expired: fall back to the CAP
            return
        air = frame_airtime(pkt.size_bytes, self.scenario.phy)
        if air > window[1] - window[0]:
            self.window_overflows += 1
            self._mark_failed(pkt)
            return
        node.gts_queue.append(pkt)

    def _gts_window(self, node: _Node, now: int) -> None:
        self._gts_next(node, now)

    def _gts_next(self, node: _Node, now: int) -> None:
        sched = node.sched
        window = locate_gts(sched, node.nid)
        if window is None:
            self.set_state(node, RadioState.SLEEP, now)
            return
        window_end = node.interval_start + window[1]
        while node.gts_queue:
            pkt = node.gts_queue[0]
            if pkt.state != "pending":
                node.gts_queue.pop(0)
                continue
            if pkt.deadline is not None and now > pkt.deadline:
                self._mark_expired(pkt)
                node.gts_queue.pop(0)
                continue
            air = frame_airtime(pkt.size_bytes, self.scenario.phy)
            if now + air > window_end:
                break  # next interval's window
            node.gts_queue.pop(0)
            frame = Frame("gts_data", node.nid, self.scenario.coordinator_id,
                          pkt.size_bytes, packet=pkt)
            self._transmit(node, frame, now)
            return
        self.set_state(node, RadioState.SLEEP, now)

    # ------------------------------------------------------ coordinator side

    def _coordinator_frame(self, coord: _Node, frame: Frame, now: int) -> None:
        phy = self.scenario.phy
        turn = phy.turnaround_symbols
        if frame.kind == "data":
            pkt = frame.packet
            if pkt.packet_id not in coord.seen_packets:
                coord.seen_packets.add(pkt.packet_id)
                self._mark_delivered(pkt, now)
            self._send_ack(coord, frame.sender, now + turn, pending=False)
        elif frame.kind == "data_request":
            queue = [p for p in coord.pending.get(frame.sender, [])
                     if p.state == "pending"]
            coord.pending[frame.sender] = queue
            has_pending = bool(queue)
            self._send_ack(coord, frame.sender, now + turn, pending=has_pending)
            if has_pending:
                ack_air = frame_airtime(ACK_BYTES, phy)
                data_at = now + turn + ack_air + turn
                pkt = queue[0]
                self._push(data_at, EventKind.FRAME_TX_START, coord.nid,
                           lambda t, p=pkt, dst=frame.sender:
                           self._tx_downlink(coord, p, dst, t), "indirect-data")
        elif frame.kind == "gts_data":
            pkt = frame.packet
            if pkt.packet_id not in coord.seen_packets:
                coord.seen_packets.add(pkt.packet_id)
                self._mark_delivered(pkt, now)
                self.gts_frames += 1
            air = frame_airtime(frame.mpdu_bytes, self.scenario.phy)
            coord.gts_activity[frame.sender] = (
                coord.gts_activity.get(frame.sender, 0) + air)
        elif frame.kind == "ack" and frame.meta.get("final_for") is not None:
            pkt_id = frame.meta["final_for"]
            for nid in sorted(coord.pending):
                coord.pending[nid] = [p for p in coord.pending[nid]
                                      if p.packet_id != pkt_id]

    def _send_ack(self, coord: _Node, dst: int, at: int, pending: bool) -> None:
        self.set_state(coord, RadioState.IDLE, self.queue.now)
        self._push(at, EventKind.FRAME_TX_START, coord.nid,
                   lambda t: self._transmit(
                       coord, Frame("ack", coord.nid, dst, ACK_BYTES,
                                    meta={"pending": pending}), t), "ack")

    def _tx_downlink(self, coord: _Node, pkt: AppPacket, dst: int, now: int) -> None:
        if pkt.state != "pending":
            return
        frame = Frame("data", coord.nid, dst, pkt.size_bytes, packet=pkt)
        self._transmit(coord, frame, now)

    # ====================================================================== #
    # manet mode                                                             #
    # ====================================================================== #

    def _build_manet(self) -> None:
        sc = self.scenario
        self.topology = form_clusters(
            [(n.node_id, n.x, n.y) for n in sc.nodes], sc.radio_range_m)
        for n in sc.nodes:
            self.positions[n.node_id] = (n.x, n.y)
            node = _Node(self, n.node_id, "-", False)
            node.state = RadioState.IDLE  # awake; no superframe duty cycle here
            self.nodes[n.node_id] = node
        bi = sc.beacon_interval_symbols
        self.router = ClusterRouter(
            self.topology,
            dedup_capacity=sc.dedup_capacity,
            replay_window=int(sc.replay_window_intervals * bi),
            fixed_clusterheads=sc.fixed_clusterheads,
        )
        self.msg_total_tx: dict[int, int] = {}
        self.msg_delivered_to: dict[int, set] = {}
        self.msg_path_len: dict[int, int] = {}
        self.msg_packet: dict[int, AppPacket] = {}

        order = 0
        originations = []
        for m in sc.messages:
            if m.at_interval is not None:
                times = [m.at_interval * bi]
            else:
                times = [k * bi for k in range(0, sc.duration_intervals,
                                               m.period_intervals)]
            for t in times:
                originations.append((t, order, m))
                order += 1
        originations.sort(key=lambda a: (a[0], a[1]))
        for t, msg_id, m in originations:
            deadline = self.horizon + 1
            if m.validity_ms is not None:
                deadline = t + sc.ms_to_symbols(m.validity_ms)
            pkt = AppPacket(msg_id, m.src, m.dst, m.size_bytes, t,
                            deadline if m.validity_ms is not None else None, "msg")
            self.packets.append(pkt)
            self.msg_packet[msg_id] = pkt
            msg = Message(msg_id, m.src, m.dst, m.size_bytes, t, deadline)
            self._push(t, EventKind.APP_PACKET, m.src,
                       lambda now, s=m.src, mm=msg: self._originate(s, mm, now),
                       f"msg={msg_id} dst={m.dst}")
            if m.validity_ms is not None:
                self._push(deadline + 1, EventKind.DEADLINE_EXPIRY, m.src,
                           lambda now, p=pkt: self._mark_expired(p), f"msg={msg_id}")

        for mv in sc.moves:
            self._push(int(mv.at_interval * bi), EventKind.MOBILITY_TICK, mv.node,
                       lambda now, m=mv: self._scripted_move(m, now),
                       f"move node={mv.node}")
        if sc.mobility.model == "random_waypoint":
            rng = random.Random((self.seed << 8) ^ 0xDA7A_B0B)
            self.waypoint = RandomWaypoint(sc.arena_m[0], sc.arena_m[1],
                                           sc.mobility.speed_min_mps,
                                           sc.mobility.speed_max_mps, rng)
            tick = max(1, sc.ms_to_symbols(sc.mobility.tick_ms))
            for t in range(tick, self.horizon + 1, tick):
                self._push(t, EventKind.MOBILITY_TICK, None,
                           lambda now: self._mobility_tick(now), "waypoint")

    def _originate(self, src: int, msg: Message, now: int) -> None:
        pkt = self.msg_packet[msg.msg_id]
        self.msg_total_tx.setdefault(msg.msg_id, 0)
        self.msg_delivered_to.setdefault(msg.msg_id, set())
        forwards = self.router.originate(src, msg, now)
        if self.scenario.fixed_clusterheads and msg.dst != BROADCAST and not forwards:
            if not msg.expired(now):
                self._mark_failed(pkt)  # no backbone route
            return
        self._exec_forwards(forwards, now)

    def _exec_forwards(self, forwards: list[Forward], now: int) -> None:
        for fw in forwards:
            self._push(now, EventKind.FRAME_TX_START, fw.sender,
                       lambda t, f=fw: self._manet_tx(f, t),
                       f"msg={fw.msg.msg_id} kind={fw.kind}")

    def _manet_tx(self, fw: Forward, now: int) -> None:
        msg = fw.msg
        if msg.expired(now):
            self.router.expiry_drops += 1
            return
        air = frame_airtime(msg.size_bytes, self.scenario.phy)
        end = now + air
        self.msg_total_tx[msg.msg_id] = self.msg_total_tx.get(msg.msg_id, 0) + 1
        sender = self.nodes[fw.sender]
        sender.frames_tx += 1
        self._accrue_manet(sender, RadioState.TX, now, end)
        receivers = sorted(self.topology.neighbors(fw.sender))
        self._push(end, EventKind.FRAME_TX_END, fw.sender,
                   lambda t, f=fw, rcv=tuple(receivers): self._manet_rx(f, rcv, t),
                   f"msg={msg.msg_id}")

    def _accrue_manet(self, node: _Node, state: RadioState, start: int, end: int) -> None:
        # state_since doubles as the busy watermark: overlapping receptions
        # are only billed once and nothing accrues past the horizon.
        start = max(start, node.state_since)
        end = min(end, self.horizon)
        if end <= start:
            return
        node.ledger.accrue(RadioState.IDLE, start - node.state_since,
                           self.scenario.power)
        node.ledger.accrue(state, end - start, self.scenario.power)
        node.state_since = end

    def _manet_rx(self, fw: Forward, receivers, now: int) -> None:
        msg = fw.msg
        air = frame_airtime(msg.size_bytes, self.scenario.phy)
        pkt = self.msg_packet.get(msg.msg_id)
        for r in receivers:
            node = self.nodes[r]
            node.frames_rx += 1
            self._accrue_manet(node, RadioState.RX, now - air, now)
            delivered, forwards = self.router.receive(
                r, msg, fw.sender, now, addressed_to=fw.addressed_to)
            if delivered:
                self.msg_delivered_to[msg.msg_id].add(r)
                if msg.dst == r:
                    self.msg_path_len.setdefault(msg.msg_id, len(msg.hop_trace))
                    self._mark_delivered(pkt, now)
                elif msg.dst == BROADCAST:
                    if pkt.state == "pending":
                        self._mark_delivered(pkt, now)
                    else:
                        self.latencies.append(
                            (now - msg.created_at)
                            * self.scenario.phy.symbol_period_us / 1000.0)
            if forwards:
                self._exec_forwards(forwards, now + self.scenario.relay_delay_symbols)

    def _scripted_move(self, mv, now: int) -> None:
        self.topology.move(mv.node, mv.x, mv.y)
        self.positions[mv.node] = (mv.x, mv.y)
        self._after_mobility(now)

    def _mobility_tick(self, now: int) -> None:
        sc = self.scenario
        dt_s = sc.mobility.tick_ms / 1000.0
        for nid in sorted(self.topology.nodes):
            rec = self.topology.nodes[nid]
            x, y = self.waypoint.step(nid, rec.x, rec.y, dt_s)
            self.topology.move(nid, x, y)
            self.positions[nid] = (x, y)
        self._after_mobility(now)

    def _after_mobility(self, now: int) -> None:
        bi = self.scenario.beacon_interval_symbols
        window = int(self.scenario.replay_window_intervals * bi)
        replays = repair_topology(self.topology, now, window)
        for msg in replays:
            ch = self.topology.nodes[msg.dst].cluster_id
            self._exec_forwards(
                [Forward(ch, msg.forked(ch), "unicast", msg.dst)], now)

    def _finish_manet_metrics(self) -> None:
        for msg_id, pkt in sorted(self.msg_packet.items()):
            if pkt.dst == BROADCAST:
                continue
            if pkt.state == "delivered":
                total = self.msg_total_tx.get(msg_id, 0)
                path = self.msg_path_len.get(msg_id, 0)
                self.redundant_tx += max(0, total - path)


def run(scenario: Scenario, seed: int | None = None,
        collect_trace: bool = False) -> tuple[MetricsReport, list[str]]:
    """Run one scenario; returns (metrics, trace lines)."""
    sim = Simulator(scenario, seed=seed, collect_trace=collect_trace)
    report = sim.run()
    return report, sim.trace or []
