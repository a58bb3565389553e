"""Scenario schema: typed simulation inputs and strict JSON loading.

A scenario file is a JSON document (the one structured-text syntax this tool
accepts). Unknown keys are rejected and every constraint of the referenced
modules is re-validated at load, so a bad file fails before any event runs.
The full schema is documented in README.md.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .core import ConfigurationError, PhyProfile, RadioPowerProfile
from .csma import CsmaParams
from .superframe import GtsDirection, SuperframeConfig


@dataclass(frozen=True)
class NodeSpec:
    node_id: int
    sync_mode: str = "tracked"  # "tracked" | "untracked"
    x: float | None = None
    y: float | None = None


@dataclass(frozen=True)
class GtsRequest:
    node: int
    direction: GtsDirection
    slots: int


@dataclass(frozen=True)
class WorkloadSpec:
    """Traffic generator bound to one node (pan mode)."""

    node: int
    model: str  # "bernoulli" | "poisson" | "periodic" | "oneshot"
    direction: str = "up"  # "up" | "down"
    size_bytes: int = 127
    p: float = 0.0
    rate_pps: float = 0.0
    period_intervals: int = 1
    at_interval: int = 0
    validity_ms: float | None = None
    jitter: str = "uniform"  # "uniform" | "none" (arrival offset in interval)


@dataclass(frozen=True)
class MessageSpec:
    """Routed message workload (manet mode)."""

    src: int
    dst: int  # node id; -1 broadcasts
    size_bytes: int = 32
    at_interval: int | None = None
    period_intervals: int | None = None
    validity_ms: float | None = None


@dataclass(frozen=True)
class MobilitySpec:
    model: str = "none"  # "none" | "random_waypoint"
    speed_min_mps: float = 0.5
    speed_max_mps: float = 2.0
    tick_ms: float = 100.0


@dataclass(frozen=True)
class MoveSpec:
    at_interval: float
    node: int
    x: float
    y: float


@dataclass
class Scenario:
    mode: str = "pan"
    seed: int = 1
    duration_intervals: int = 100
    phy: PhyProfile = field(default_factory=PhyProfile)
    power: RadioPowerProfile = field(default_factory=RadioPowerProfile)
    config: SuperframeConfig = field(default_factory=lambda: SuperframeConfig(3, 3))
    csma: CsmaParams = field(default_factory=CsmaParams)
    max_frame_retries: int = 3
    sleep_after_ack: bool = True
    pending_expiry_intervals: int = 4
    gts_expiry_intervals: int = 4
    beacon_guard_symbols: int = 60
    max_lost_beacons: int = 4
    radio_range_m: float = 10.0
    arena_m: tuple[float, float] = (100.0, 100.0)
    coordinator_id: int = 0
    nodes: tuple[NodeSpec, ...] = ()
    gts_requests: tuple[GtsRequest, ...] = ()
    workload: tuple[WorkloadSpec, ...] = ()
    # manet mode
    fixed_clusterheads: bool = False
    replay_window_intervals: float = 4.0
    dedup_capacity: int = 256
    relay_delay_symbols: int = 960
    mobility: MobilitySpec = field(default_factory=MobilitySpec)
    moves: tuple[MoveSpec, ...] = ()
    messages: tuple[MessageSpec, ...] = ()
    source_sha256: str = ""

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.mode not in ("pan", "manet"):
            raise ConfigurationError(f"mode={self.mode!r}: expected 'pan' or 'manet'")
        if self.duration_intervals < 1:
            raise ConfigurationError("duration_intervals must be >= 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigurationError("seed must be a 64-bit unsigned integer")
        if self.max_frame_retries < 0:
            raise ConfigurationError("max_frame_retries must be >= 0")
        if self.beacon_guard_symbols < 0:
            raise ConfigurationError("beacon_guard_symbols must be >= 0")
        if self.radio_range_m <= 0:
            raise ConfigurationError("radio_range_m must be > 0")
        if self.relay_delay_symbols < 0:
            raise ConfigurationError("relay_delay_symbols must be >= 0")
        ids = [n.node_id for n in self.nodes]
        if len(ids) != len(set(ids)):
            raise ConfigurationError("duplicate node ids")
        if self.mode == "pan":
            if self.coordinator_id in ids:
                raise ConfigurationError("coordinator_id collides with a node id")
            for n in self.nodes:
                if n.sync_mode not in ("tracked", "untracked"):
                    raise ConfigurationError(
                        f"node {n.node_id}: sync_mode must be tracked or untracked")
            for g in self.gts_requests:
                if g.node not in ids:
                    raise ConfigurationError(f"gts request names unknown node {g.node}")
                if g.slots < 1:
                    raise ConfigurationError("gts request slots must be >= 1")
            for w in self.workload:
                if w.node not in ids:
                    raise ConfigurationError(f"workload names unknown node {w.node}")
                _validate_workload(w)
        else:
            if len(ids) < 1:
                raise ConfigurationError("manet mode needs an explicit node list")
            for n in self.nodes:
                if n.x is None or n.y is None:
                    raise ConfigurationError(
                        f"node {n.node_id}: manet nodes need x and y positions")
            for m in self.messages:
                if m.src not in ids:
                    raise ConfigurationError(f"message src {m.src} unknown")
                if m.dst != -1 and m.dst not in ids:
                    raise ConfigurationError(f"message dst {m.dst} unknown")
                if (m.at_interval is None) == (m.period_intervals is None):
                    raise ConfigurationError(
                        "message needs exactly one of at_interval / period_intervals")
            for mv in self.moves:
                if mv.node not in ids:
                    raise ConfigurationError(f"move names unknown node {mv.node}")
            if self.mobility.model not in ("none", "random_waypoint"):
                raise ConfigurationError("mobility.model must be none or random_waypoint")

    @property
    def beacon_interval_symbols(self) -> int:
        return self.phy.base_superframe_symbols * (2 ** self.config.bo)

    @property
    def horizon_symbols(self) -> int:
        return self.duration_intervals * self.beacon_interval_symbols

    def ms_to_symbols(self, ms: float) -> int:
        return round(ms * 1000.0 / self.phy.symbol_period_us)


def _validate_workload(w: WorkloadSpec) -> None:
    if w.model not in ("bernoulli", "poisson", "periodic", "oneshot"):
        raise ConfigurationError(f"workload model {w.model!r} unknown")
    if w.direction not in ("up", "down"):
        raise ConfigurationError("workload direction must be 'up' or 'down'")
    if w.size_bytes < 1 or w.size_bytes > 127:
        raise ConfigurationError("workload size_bytes must be in 1..127")
    if w.model == "bernoulli" and not 0.0 <= w.p <= 1.0:
        raise ConfigurationError("bernoulli workload needs p in [0, 1]")
    if w.model == "poisson" and w.rate_pps < 0:
        raise ConfigurationError("poisson workload needs rate_pps >= 0")
    if w.model == "periodic" and w.period_intervals < 1:
        raise ConfigurationError("periodic workload needs period_intervals >= 1")
    if w.jitter not in ("uniform", "none"):
        raise ConfigurationError("workload jitter must be 'uniform' or 'none'")


# ---------------------------------------------------------------------------
# JSON loading

def _check_keys(obj: dict, allowed: set[str], context: str) -> None:
    unknown = sorted(set(obj) - allowed)
    if unknown:
        raise ConfigurationError(f"{context}: unknown key {unknown[0]!r}")


def _get(obj: dict, key: str, types, context: str, default):
    if key not in obj:
        if default is _REQUIRED:
            raise ConfigurationError(f"{context}: missing required key {key!r}")
        return default
    value = obj[key]
    if types is float:
        types = (int, float)
    if not isinstance(value, types) or isinstance(value, bool) and types != bool:
        raise ConfigurationError(f"{context}: key {key!r} has the wrong type")
    return value


_REQUIRED = object()

_TOP_KEYS = {
    "mode", "seed", "duration_intervals", "phy", "power", "mac",
    "radio_range_m", "arena_m", "coordinator_id", "nodes", "gts_requests",
    "workload", "fixed_clusterheads", "replay_window_intervals",
    "dedup_capacity", "relay_delay_symbols", "mobility", "moves", "messages",
}
_PHY_KEYS = {"symbol_period_us", "bits_per_symbol", "phy_overhead_bytes",
             "base_slot_symbols", "num_slots", "unit_backoff_symbols",
             "cca_symbols", "turnaround_symbols"}
_POWER_KEYS = {"i_tx_ma", "i_rx_ma", "i_idle_ma", "i_sleep_ma", "supply_v"}
_MAC_KEYS = {"bo", "so", "ble", "mac_min_be", "a_max_be",
             "mac_max_csma_backoffs", "max_frame_retries", "sleep_after_ack",
             "pending_expiry_intervals", "gts_expiry_intervals",
             "beacon_guard_symbols", "max_lost_beacons"}
_NODE_KEYS = {"id", "sync_mode", "x", "y"}
_GTS_KEYS = {"node", "direction", "slots"}
_WORKLOAD_KEYS = {"node", "model", "direction", "size_bytes", "p", "rate_pps",
                  "period_intervals", "at_interval", "validity_ms", "jitter"}
_MESSAGE_KEYS = {"src", "dst", "size_bytes", "at_interval", "period_intervals",
                 "validity_ms"}
_MOBILITY_KEYS = {"model", "speed_min_mps", "speed_max_mps", "tick_ms"}
_MOVE_KEYS = {"at_interval", "node", "x", "y"}


def scenario_from_dict(data: dict, source_sha256: str = "") -> Scenario:
    if not isinstance(data, dict):
        raise ConfigurationError("scenario root must be a JSON object")
    _check_keys(data, _TOP_KEYS, "scenario")

    phy_d = _get(data, "phy", dict, "scenario", {})
    _check_keys(phy_d, _PHY_KEYS, "phy")
    for key, value in phy_d.items():
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ConfigurationError(f"phy: key {key!r} must be a number")
    phy = PhyProfile(**phy_d)

    pow_d = _get(data, "power", dict, "scenario", {})
    _check_keys(pow_d, _POWER_KEYS, "power")
    for key, value in pow_d.items():
        if value is None and key == "supply_v":
            continue
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ConfigurationError(f"power: key {key!r} must be a number")
    power = RadioPowerProfile(**pow_d)

    mac = _get(data, "mac", dict, "scenario", {})
    _check_keys(mac, _MAC_KEYS, "mac")
    config = SuperframeConfig(
        bo=_get(mac, "bo", int, "mac", 3),
        so=_get(mac, "so", int, "mac", 3),
        ble=_get(mac, "ble", bool, "mac", False),
    )
    csma = CsmaParams(
        mac_min_be=_get(mac, "mac_min_be", int, "mac", 3),
        a_max_be=_get(mac, "a_max_be", int, "mac", 5),
        mac_max_csma_backoffs=_get(mac, "mac_max_csma_backoffs", int, "mac", 4),
        ble=config.ble,
    )

    nodes = []
    for i, nd in enumerate(_get(data, "nodes", list, "scenario", [])):
        ctx = f"nodes[{i}]"
        if not isinstance(nd, dict):
            raise ConfigurationError(f"{ctx}: must be an object")
        _check_keys(nd, _NODE_KEYS, ctx)
        nodes.append(NodeSpec(
            node_id=_get(nd, "id", int, ctx, _REQUIRED),
            sync_mode=_get(nd, "sync_mode", str, ctx, "tracked"),
            x=_get(nd, "x", float, ctx, None),
            y=_get(nd, "y", float, ctx, None),
        ))

    gts = []
    for i, gd in enumerate(_get(data, "gts_requests", list, "scenario", [])):
        ctx = f"gts_requests[{i}]"
        _check_keys(gd, _GTS_KEYS, ctx)
        direction = _get(gd, "direction", str, ctx, "node_to_coord")
        try:
            gdir = GtsDirection(direction)
        except ValueError:
            raise ConfigurationError(f"{ctx}: direction {direction!r} unknown") from None
        gts.append(GtsRequest(node=_get(gd, "node", int, ctx, _REQUIRED),
                              direction=gdir,
                              slots=_get(gd, "slots", int, ctx, 1)))

    workload = []
    for i, wd in enumerate(_get(data, "workload", list, "scenario", [])):
        ctx = f"workload[{i}]"
        _check_keys(wd, _WORKLOAD_KEYS, ctx)
        workload.append(WorkloadSpec(
            node=_get(wd, "node", int, ctx, _REQUIRED),
            model=_get(wd, "model", str, ctx, _REQUIRED),
            direction=_get(wd, "direction", str, ctx, "up"),
            size_bytes=_get(wd, "size_bytes", int, ctx, 127),
            p=_get(wd, "p", float, ctx, 0.0),
            rate_pps=_get(wd, "rate_pps", float, ctx, 0.0),
            period_intervals=_get(wd, "period_intervals", int, ctx, 1),
            at_interval=_get(wd, "at_interval", int, ctx, 0),
            validity_ms=_get(wd, "validity_ms", float, ctx, None),
            jitter=_get(wd, "jitter", str, ctx, "uniform"),
        ))

    messages = []
    for i, md in enumerate(_get(data, "messages", list, "scenario", [])):
        ctx = f"messages[{i}]"
        _check_keys(md, _MESSAGE_KEYS, ctx)
        messages.append(MessageSpec(
            src=_get(md, "src", int, ctx, _REQUIRED),
            dst=_get(md, "dst", int, ctx, _REQUIRED),
            size_bytes=_get(md, "size_bytes", int, ctx, 32),
            at_interval=_get(md, "at_interval", int, ctx, None),
            period_intervals=_get(md, "period_intervals", int, ctx, None),
            validity_ms=_get(md, "validity_ms", float, ctx, None),
        ))

    mob_d = _get(data, "mobility", dict, "scenario", {})
    _check_keys(mob_d, _MOBILITY_KEYS, "mobility")
    mobility = MobilitySpec(
        model=_get(mob_d, "model", str, "mobility", "none"),
        speed_min_mps=_get(mob_d, "speed_min_mps", float, "mobility", 0.5),
        speed_max_mps=_get(mob_d, "speed_max_mps", float, "mobility", 2.0),
        tick_ms=_get(mob_d, "tick_ms", float, "mobility", 100.0),
    )

    moves = []
    for i, md in enumerate(_get(data, "moves", list, "scenario", [])):
        ctx = f"moves[{i}]"
        _check_keys(md, _MOVE_KEYS, ctx)
        moves.append(MoveSpec(
            at_interval=_get(md, "at_interval", float, ctx, _REQUIRED),
            node=_get(md, "node", int, ctx, _REQUIRED),
            x=_get(md, "x", float, ctx, _REQUIRED),
            y=_get(md, "y", float, ctx, _REQUIRED),
        ))

    arena = _get(data, "arena_m", list, "scenario", [100.0, 100.0])
    if len(arena) != 2:
        raise ConfigurationError("arena_m must be [width, height]")

    return Scenario(
        mode=_get(data, "mode", str, "scenario", "pan"),
        seed=_get(data, "seed", int, "scenario", 1),
        duration_intervals=_get(data, "duration_intervals", int, "scenario", 100),
        phy=phy,
        power=power,
        config=config,
        csma=csma,
        max_frame_retries=_get(mac, "max_frame_retries", int, "mac", 3),
        sleep_after_ack=_get(mac, "sleep_after_ack", bool, "mac", True),
        pending_expiry_intervals=_get(mac, "pending_expiry_intervals", int, "mac", 4),
        gts_expiry_intervals=_get(mac, "gts_expiry_intervals", int, "mac", 4),
        beacon_guard_symbols=_get(mac, "beacon_guard_symbols", int, "mac", 60),
        max_lost_beacons=_get(mac, "max_lost_beacons", int, "mac", 4),
        radio_range_m=_get(data, "radio_range_m", float, "scenario", 10.0),
        arena_m=(float(arena[0]), float(arena[1])),
        coordinator_id=_get(data, "coordinator_id", int, "scenario", 0),
        nodes=tuple(nodes),
        gts_requests=tuple(gts),
        workload=tuple(workload),
        fixed_clusterheads=_get(data, "fixed_clusterheads", bool, "scenario", False),
        replay_window_intervals=_get(data, "replay_window_intervals", float, "scenario", 4.0),
        dedup_capacity=_get(data, "dedup_capacity", int, "scenario", 256),
        relay_delay_symbols=_get(data, "relay_delay_symbols", int, "scenario", 960),
        mobility=mobility,
        moves=tuple(moves),
        messages=tuple(messages),
        source_sha256=source_sha256,
    )


def load_scenario(path: str | Path) -> Scenario:
    """Parse and validate a scenario file; raises ConfigurationError."""
    raw = Path(path).read_bytes()
    digest = hashlib.sha256(raw).hexdigest()
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"scenario is not valid JSON: {exc}") from None
    return scenario_from_dict(data, source_sha256=digest)
