"""Beacon-mode superframe layout derived from BO/SO, GTS allocation, duty cycle.

The active portion is split into 16 equal slots holding beacon + CAP + CFP;
the CFP is the block of guaranteed time slots packed against the end of the
active portion, at most 7 of them.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .core import ConfigurationError, PhyProfile, DEFAULT_PHY, frame_airtime

MAX_GTS = 7
MIN_CAP_SYMBOLS = 440  # aMinCAPLength, 2003 MAC
BEACON_BASE_BYTES = 15
BEACON_GTS_DESCRIPTOR_BYTES = 3
BEACON_PENDING_ADDRESS_BYTES = 2


class GtsDirection(Enum):
    NODE_TO_COORD = "node_to_coord"
    COORD_TO_NODE = "coord_to_node"


class GtsDenied(Exception):
    """GTS request rejected; `reason` is gts-limit-reached or cap-too-short."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class GtsOverflowError(ConfigurationError):
    """A GTS list shrinks the CAP below its floor."""


def beacon_mpdu_bytes(n_gts: int, n_pending: int) -> int:
    """Simplified fixed-cost beacon size; bit-exact encoding is out of scope."""
    return (BEACON_BASE_BYTES
            + BEACON_GTS_DESCRIPTOR_BYTES * n_gts
            + BEACON_PENDING_ADDRESS_BYTES * n_pending)


@dataclass(frozen=True)
class SuperframeConfig:
    bo: int
    so: int
    ble: bool = False

    def __post_init__(self):
        if not (0 <= self.bo <= 14):
            raise ConfigurationError(f"bo={self.bo} violates 0 <= bo <= 14")
        if not (0 <= self.so <= 14):
            raise ConfigurationError(f"so={self.so} violates 0 <= so <= 14")
        if self.so > self.bo:
            raise ConfigurationError(f"so={self.so}, bo={self.bo} violates so <= bo")


def duty_cycle(config: SuperframeConfig) -> float:
    """Active fraction of the superframe, 2^(SO-BO)."""
    return 2.0 ** (config.so - config.bo)


@dataclass(frozen=True)
class GtsDescriptor:
    device_id: int
    direction: GtsDirection
    start_slot: int
    length_slots: int

    def __post_init__(self):
        if self.length_slots < 1:
            raise ConfigurationError("GTS length_slots must be >= 1")
        if self.start_slot < 0 or self.start_slot + self.length_slots > 16:
            raise ConfigurationError("GTS slots must lie within the 16-slot frame")

    @property
    def end_slot(self) -> int:
        return self.start_slot + self.length_slots


@dataclass(frozen=True)
class SuperframeSchedule:
    """Concrete symbol-level layout of one beacon interval.

    All ranges are half-open [start, end) in symbols relative to beacon start.
    """

    config: SuperframeConfig
    phy: PhyProfile
    gts_list: tuple[GtsDescriptor, ...]
    pending_addresses: tuple[int, ...]
    beacon_interval: int
    active_duration: int
    slot_duration: int
    beacon_window: tuple[int, int]
    cap: tuple[int, int]
    cfp: tuple[int, int] | None
    inactive: tuple[int, int] | None

    @property
    def beacon_bytes(self) -> int:
        return beacon_mpdu_bytes(len(self.gts_list), len(self.pending_addresses))

    @property
    def cap_length(self) -> int:
        return self.cap[1] - self.cap[0]

    def descriptor_for(self, device_id: int) -> GtsDescriptor | None:
        for d in self.gts_list:
            if d.device_id == device_id:
                return d
        return None


def _validate_gts_list(gts: tuple[GtsDescriptor, ...]) -> None:
    if len(gts) > MAX_GTS:
        raise ConfigurationError(f"at most {MAX_GTS} GTS per superframe")
    seen = set()
    for d in gts:
        if d.device_id in seen:
            raise ConfigurationError(f"device {d.device_id} holds more than one GTS")
        seen.add(d.device_id)
    ordered = sorted(gts, key=lambda d: d.start_slot)
    for a, b in zip(ordered, ordered[1:]):
        if a.end_slot > b.start_slot:
            raise ConfigurationError("GTS descriptors overlap")
    if ordered:
        # CFP must be one contiguous block ending at the last slot.
        if ordered[-1].end_slot != 16:
            raise ConfigurationError("CFP must end at the active-portion boundary")
        for a, b in zip(ordered, ordered[1:]):
            if a.end_slot != b.start_slot:
                raise ConfigurationError("CFP slots must be contiguous")


def derive_schedule(config: SuperframeConfig,
                    phy: PhyProfile = DEFAULT_PHY,
                    gts: tuple[GtsDescriptor, ...] = (),
                    pending: tuple[int, ...] = ()) -> SuperframeSchedule:
    """Lay out one beacon interval: beacon window, CAP, CFP and inactive period.

    Raises GtsOverflowError when the GTS list would leave the CAP shorter than
    MIN_CAP_SYMBOLS.
    """
    gts = tuple(gts)
    pending = tuple(pending)
    _validate_gts_list(gts)

    base = phy.base_superframe_symbols
    bi = base * (2 ** config.bo)
    sd = base * (2 ** config.so)
    slot = phy.base_slot_symbols * (2 ** config.so)

    beacon_len = frame_airtime(beacon_mpdu_bytes(len(gts), len(pending)), phy)
    if beacon_len >= sd:
        raise ConfigurationError("beacon frame does not fit the active portion")

    cfp_start_slot = min((d.start_slot for d in gts), default=16)
    cfp_start = cfp_start_slot * slot
    cap = (beacon_len, cfp_start)
    if gts and cap[1] - cap[0] < MIN_CAP_SYMBOLS:
        raise GtsOverflowError("gts-overflow: CAP below 440 symbols")
    if cap[1] <= cap[0]:
        raise GtsOverflowError("gts-overflow: no CAP left")

    cfp = (cfp_start, sd) if gts else None
    inactive = (sd, bi) if sd < bi else None
    return SuperframeSchedule(
        config=config, phy=phy, gts_list=gts, pending_addresses=pending,
        beacon_interval=bi, active_duration=sd, slot_duration=slot,
        beacon_window=(0, beacon_len), cap=cap, cfp=cfp, inactive=inactive,
    )


def _repack(gts: tuple[GtsDescriptor, ...]) -> tuple[GtsDescriptor, ...]:
    """Re-pack descriptors against the end of the active portion.

    List order is allocation order, so the first-allocated descriptor keeps
    the last slots; allocate-then-deallocate restores the original layout.
    """
    cursor = 16
    packed = []
    for d in gts:
        cursor -= d.length_slots
        packed.append(GtsDescriptor(d.device_id, d.direction, cursor, d.length_slots))
    return tuple(packed)


def allocate_gts(schedule: SuperframeSchedule, device_id: int,
                 direction: GtsDirection,
                 length_slots: int) -> tuple[GtsDescriptor, SuperframeSchedule]:
    """Grow the CFP toward the beacon by one descriptor.

    Returns (descriptor, new schedule); raises GtsDenied on gts-limit-reached
    or cap-too-short, leaving the original schedule untouched.
    """
    if length_slots < 1:
        raise ConfigurationError("length_slots must be >= 1")
    if len(schedule.gts_list) >= MAX_GTS:
        raise GtsDenied("gts-limit-reached")
    if schedule.descriptor_for(device_id) is not None:
        raise ConfigurationError(f"device {device_id} already holds a GTS")

    first = min((d.start_slot for d in schedule.gts_list), default=16)
    start = first - length_slots
    if start < 0:
        raise GtsDenied("cap-too-short")
    descriptor = GtsDescriptor(device_id, direction, start, length_slots)
    try:
        new = derive_schedule(schedule.config, schedule.phy,
                              schedule.gts_list + (descriptor,),
                              schedule.pending_addresses)
    except GtsOverflowError:
        raise GtsDenied("cap-too-short") from None
    return descriptor, new


def deallocate_gts(schedule: SuperframeSchedule, device_id: int) -> SuperframeSchedule:
    """Remove a device's descriptor and re-pack the remaining CFP."""
    if schedule.descriptor_for(device_id) is None:
        raise ConfigurationError(f"device {device_id} holds no GTS")
    remaining = tuple(d for d in schedule.gts_list if d.device_id != device_id)
    return derive_schedule(schedule.config, schedule.phy, _repack(remaining),
                           schedule.pending_addresses)


def locate_gts(schedule: SuperframeSchedule, device_id: int) -> tuple[int, int] | None:
    """Absolute [start, end) window of the device's GTS within the interval."""
    d = schedule.descriptor_for(device_id)
    if d is None:
        return None
    return d.start_slot * schedule.slot_duration, d.end_slot * schedule.slot_duration
