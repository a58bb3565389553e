"""Slotted CSMA-CA state machine for the contention access period.

Three per-attempt variables drive channel access: NB counts failed backoff
rounds, CW is the contention window (two clear channel assessments must
succeed back to back), BE is the backoff exponent. Battery-life extension
caps BE at 2 to shorten idle listening.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from enum import Enum

from .core import ConfigurationError

BLE_MAX_BE = 2


class CsmaPhase(Enum):
    BACKING_OFF = "backing-off"
    CCA = "cca"
    TRANSMITTING = "transmitting"
    DONE_SUCCESS = "done-success"
    DONE_FAILURE = "done-failure"


class TxResult(Enum):
    DELIVERED = "delivered"
    CHANNEL_ACCESS_FAILURE = "channel-access-failure"
    NO_ACK = "no-ack"
    DEFERRED_TO_NEXT_CAP = "deferred-to-next-cap"


@dataclass(frozen=True)
class CsmaParams:
    mac_min_be: int = 3
    a_max_be: int = 5
    mac_max_csma_backoffs: int = 4
    ble: bool = False

    def __post_init__(self):
        if not (0 <= self.mac_min_be <= self.a_max_be <= 8):
            raise ConfigurationError("expected 0 <= mac_min_be <= a_max_be <= 8")
        if self.mac_max_csma_backoffs < 0:
            raise ConfigurationError("mac_max_csma_backoffs must be >= 0")

    @property
    def be_cap(self) -> int:
        return BLE_MAX_BE if self.ble else self.a_max_be


@dataclass
class CsmaAttempt:
    nb: int
    cw: int
    be: int
    phase: CsmaPhase


@dataclass(frozen=True)
class TxOutcome:
    result: TxResult
    attempts_used: int = 1
    total_backoff_symbols: int = 0


def init_attempt(params: CsmaParams) -> CsmaAttempt:
    """Fresh attempt: NB=0, CW=2, BE=macMinBE (capped at 2 under BLE)."""
    be = min(params.mac_min_be, BLE_MAX_BE) if params.ble else params.mac_min_be
    return CsmaAttempt(nb=0, cw=2, be=be, phase=CsmaPhase.BACKING_OFF)


def draw_backoff(attempt: CsmaAttempt, rng: random.Random) -> int:
    """Random delay in whole unit backoff periods, uniform on [0, 2^BE - 1].

    Advances the attempt to the CCA phase; the caller waits out the delay
    (one period = 20 symbols by default) before sensing the channel.
    """
    if attempt.phase is not CsmaPhase.BACKING_OFF:
        raise ValueError("draw_backoff requires the backing-off phase")
    delay = rng.randrange(2 ** attempt.be)
    attempt.phase = CsmaPhase.CCA
    return delay


def on_cca(attempt: CsmaAttempt, channel_busy: bool, params: CsmaParams) -> CsmaAttempt:
    """Apply one clear-channel-assessment outcome.

    Busy: NB and BE increment (BE saturating at the cap), CW resets to 2; the
    attempt fails once NB exceeds macMaxCSMABackoffs, otherwise a new random
    backoff starts. Idle: CW decrements and transmission begins at zero.
    """
    if attempt.phase is not CsmaPhase.CCA:
        raise ValueError("on_cca requires the cca phase")
    if channel_busy:
        attempt.nb += 1
        attempt.be = min(attempt.be + 1, params.be_cap)
        attempt.cw = 2
        if attempt.nb > params.mac_max_csma_backoffs:
            attempt.phase = CsmaPhase.DONE_FAILURE
        else:
            attempt.phase = CsmaPhase.BACKING_OFF
    else:
        attempt.cw -= 1
        if attempt.cw == 0:
            attempt.phase = CsmaPhase.TRANSMITTING
    return attempt


def fits_in_cap(now: int, remaining_transaction: int, cap_end: int) -> bool:
    """True iff the whole remaining transaction completes before the CAP ends."""
    if now > cap_end:
        raise ValueError("now must not be past cap_end")
    return now + remaining_transaction <= cap_end
