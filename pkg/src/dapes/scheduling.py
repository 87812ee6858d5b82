"""Bitmap transmission timing: linear prioritization, PEBA, and the
closed-form delay/fetch-time estimates.

A peer about to advertise its bitmap delays by a linear timer derived
from how much it can contribute (more contribution, shorter wait). When
two timers land close enough to collide, the priority-based exponential
backoff (PEBA) kicks in: the slot count doubles per collision round and
peers pick a random slot inside the priority group matching their
contribution.
"""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass, field

from .errors import DomainError


class Phase(enum.Enum):
    FIRST_BITMAP = "first"
    SUBSEQUENT = "subsequent"


@dataclass
class PrioritizationState:
    """Per-encounter advertisement bookkeeping: what has been heard so far."""

    window: float = 0.020
    heard_union: int = 0          # OR of all bitmaps transmitted this encounter
    phase: Phase = Phase.FIRST_BITMAP

    def note_heard(self, bits: int) -> None:
        self.heard_union |= bits
        self.phase = Phase.SUBSEQUENT


def bitmap_timer_linear(window: float, share_fraction: float) -> float:
    """Delay before transmitting a bitmap: window divided by the percent share.

    A 100% share waits window/100; smaller shares wait proportionally
    longer. Zero share is a domain error: a peer with nothing to offer
    does not schedule a transmission at all.
    """
    if share_fraction <= 0.0:
        raise DomainError("share fraction must be positive")
    if share_fraction > 1.0:
        raise DomainError("share fraction above 1")
    return window / (100.0 * share_fraction)


@dataclass
class PebaState:
    """Per-encounter backoff state; slot count doubles each collision round."""

    group_count: int = 2
    slot_duration: float = 0.001
    collision_round: int = 0

    @property
    def slot_count(self) -> int:
        return 2 ** self.collision_round

    def on_collision(self) -> None:
        self.collision_round += 1

    def reset(self) -> None:
        self.collision_round = 0


def priority_group(contribution: int, max_contribution: int, k: int) -> int:
    """Group index for a contribution; group 0 is highest priority.

    With k groups the thresholds sit at fractions (k-1)/k, (k-2)/k, ...
    of the reference contribution, so for k=2 a peer holding at least
    half of the missing packets lands in the first group.
    """
    if k < 1:
        raise DomainError("need at least one group")
    if max_contribution <= 0:
        return 0
    for j in range(k - 1):
        if contribution * k >= max_contribution * (k - 1 - j):
            return j
    return k - 1


def peba_assign_slot(st: PebaState, my_missing_contribution: int,
                     max_missing_contribution: int, rng: random.Random) -> int:
    """Pick a transmission slot inside the peer's priority group."""
    L = st.slot_count
    k = st.group_count
    if L < k:
        raise DomainError("slot count %d below group count %d" % (L, k))
    n = L // k
    j = priority_group(my_missing_contribution, max_missing_contribution, k)
    return rng.randrange(j * n, (j + 1) * n)


def expected_transmit_delay(L: int, k: int, tau: float) -> float:
    """Average bitmap transmission delay for L slots and k priority groups.

    Uses the average contention window L_avg = (n-1)/2 with n = floor(L/k)
    slots per group; the closed form goes negative once n <= 1, which is
    clamped to zero here.
    """
    if k < 1 or L < k:
        raise DomainError("need L >= k >= 1")
    if tau < 0:
        raise DomainError("slot duration must be nonnegative")
    n = L // k
    l_avg = (n - 1) / 2.0
    return max(0.0, (l_avg - 1) / 2.0 * tau)


def expected_group_delay(L: int, k: int, j: int, tau: float) -> float:
    """Mean pre-transmission delay of a lone peer assigned to group j.

    The peer draws uniformly from the n = floor(L/k) slots of its group,
    whose base offset is j*n, so the mean slot is j*n + (n-1)/2 -- the
    group base plus the average contention window.
    """
    if k < 1 or L < k:
        raise DomainError("need L >= k >= 1")
    if not (0 <= j < k):
        raise DomainError("group index out of range")
    n = L // k
    return (j * n + (n - 1) / 2.0) * tau


class ExchangeMode(enum.Enum):
    BITMAPS_FIRST = "bitmaps-first"
    INTERLEAVED = "interleaved"


def data_fetch_time(delta_t: float, t_delay: float, d: float, b: int,
                    mode: ExchangeMode) -> float:
    """Average time left for data fetching out of a connection of length delta_t.

    Exchanging b bitmaps up front spends (t_delay + d) * b before any data
    flows; interleaving only requires the connection to outlast a single
    bitmap exchange.
    """
    if min(delta_t, t_delay, d) < 0 or b < 0:
        raise DomainError("arguments must be nonnegative")
    per_bitmap = t_delay + d
    if mode is ExchangeMode.BITMAPS_FIRST:
        if per_bitmap * b < delta_t:
            return delta_t - per_bitmap * b
        return 0.0
    if per_bitmap > 0 and b > int(delta_t / per_bitmap):
        raise DomainError("b exceeds the bitmaps exchangeable within delta_t")
    if per_bitmap < delta_t:
        return delta_t - per_bitmap * b
    return 0.0
