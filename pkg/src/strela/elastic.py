"""Latency-insensitive building blocks: elastic buffer, fork sender, join/merge.

All functions here are pure: they look at cycle-start state and return the
handshake decision. State only changes in the explicit commit step.
"""
from dataclasses import dataclass
from enum import IntEnum
from typing import NamedTuple, Optional, Sequence

from .errors import InvalidConfig, PreconditionViolation

MASK32 = 0xFFFF_FFFF
EB_CAPACITY = 2


def word(x: int) -> int:
    """Truncate to an unsigned 32-bit token."""
    return x & MASK32


def signed(x: int) -> int:
    x &= MASK32
    return x - 0x1_0000_0000 if x & 0x8000_0000 else x


class JoinMergeMode(IntEnum):
    JoinNoControl = 0
    JoinWithControl = 1
    Merge = 2


@dataclass(frozen=True)
class ElasticBufferState:
    slots: tuple = ()
    capacity: int = EB_CAPACITY

    def __post_init__(self):
        if len(self.slots) > self.capacity:
            raise PreconditionViolation(f"buffer over capacity: {self.slots}")


class ChannelOffer(NamedTuple):
    valid: bool
    data: int = 0


class ChannelDemand(NamedTuple):
    ready: bool


def eb_offer(state: ElasticBufferState):
    """Offer/demand of a 2-slot buffer, both from cycle-start occupancy."""
    n = len(state.slots)
    offer = ChannelOffer(n > 0, state.slots[0] if n else 0)
    return offer, ChannelDemand(n < state.capacity)


def eb_commit(state: ElasticBufferState, fired_in: Optional[int], fired_out: bool) -> ElasticBufferState:
    n = len(state.slots)
    if fired_in is not None and n >= state.capacity:
        raise PreconditionViolation("push into a full elastic buffer")
    if fired_out and n == 0:
        raise PreconditionViolation("pop from an empty elastic buffer")
    slots = state.slots[1:] if fired_out else state.slots
    if fired_in is not None:
        slots = slots + (word(fired_in),)
    return ElasticBufferState(slots, state.capacity)


class ForkResult(NamedTuple):
    fire: bool
    valids_out: int


def fork_eval(valid_in: bool, mask: int, readies: int, width: int = 6) -> ForkResult:
    """All-ready fork: fires only when every enabled destination is ready.

    mask and readies are bit-vectors of the same width (bit d = destination d).
    """
    full = (1 << width) - 1
    if mask & ~full or readies & ~full:
        raise InvalidConfig(f"fork vector wider than {width} bits")
    if mask == 0:
        if valid_in:
            raise InvalidConfig("fork mask is all-zero but a token arrived")
        return ForkResult(False, 0)
    fire = bool(valid_in) and (readies & mask) == mask
    return ForkResult(fire, mask if fire else 0)


class JoinResult(NamedTuple):
    fire: bool
    consume_a: bool
    consume_b: bool
    consume_ctrl: bool
    merge_sel: Optional[int] = None  # 0 = A, 1 = B
    collision: bool = False


def join_eval(mode: JoinMergeMode, valid_a: bool, valid_b: bool, valid_ctrl: bool,
              ready_down: bool) -> JoinResult:
    if mode == JoinMergeMode.JoinNoControl:
        fire = valid_a and valid_b and ready_down
        return JoinResult(fire, fire, fire, False)
    if mode == JoinMergeMode.JoinWithControl:
        fire = valid_a and valid_b and valid_ctrl and ready_down
        return JoinResult(fire, fire, fire, fire)
    if mode == JoinMergeMode.Merge:
        # A has priority on the (illegal) both-valid case; B stays pending
        collision = valid_a and valid_b
        if not (valid_a or valid_b) or not ready_down:
            return JoinResult(False, False, False, False, None, collision)
        sel = 0 if valid_a else 1
        return JoinResult(True, sel == 0, sel == 1, False, sel, collision)
    raise InvalidConfig(f"unknown join mode {mode!r}")
