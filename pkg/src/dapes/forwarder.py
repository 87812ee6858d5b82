"""Per-node forwarding engine: content store, PIT, suppression, policies.

Every wireless node has one broadcast radio plus a local application
face. Faces are identified by integers: the application face is -1 and
a radio arrival carries the link-layer sender's node id, so the PIT can
tell requesters apart even though all transmissions are broadcasts.
The FIB degenerates to "broadcast everything", so no table is kept; an
Interest that the role policy clears is simply re-broadcast.

Interests are matched exactly in the CS and PIT; Data satisfies every
PIT entry whose name is a prefix of the Data name (discovery and bitmap
replies extend their Interest's name by the responder's components).
"""

from __future__ import annotations

import random
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Set, Tuple, Union

from .names import Name
from .wire import Packet, PacketKind

APP_FACE = -1


@dataclass
class ForwarderConfig:
    cs_capacity: int = 10000
    pit_lifetime: float = 2.0
    suppress_duration: float = 5.0
    fwd_jitter_max: float = 0.020
    forward_prob: float = 0.20


@dataclass
class Forward:
    delay: float
    suppress_on_fail: bool = False


class Suppress:
    __slots__ = ()

    def __repr__(self):
        return "Suppress()"


SUPPRESS = Suppress()
Decision = Union[Forward, Suppress]


@dataclass
class SendData:
    packet: Packet
    delay: float


@dataclass
class ForwardInterest:
    packet: Packet
    delay: float
    suppress_on_fail: bool = False
    from_app: bool = False


@dataclass
class DeliverData:
    packet: Packet


Action = Union[SendData, ForwardInterest, DeliverData]


class ContentStore:
    """Exact-match packet cache with LRU eviction."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.entries: "OrderedDict[Name, Packet]" = OrderedDict()

    def lookup(self, name: Name) -> Optional[Packet]:
        pkt = self.entries.get(name)
        if pkt is not None:
            self.entries.move_to_end(name)
        return pkt

    def insert(self, pkt: Packet) -> None:
        name = pkt.name
        if name in self.entries:
            self.entries.move_to_end(name)
            return
        self.entries[name] = pkt
        if len(self.entries) > self.capacity:
            self.entries.popitem(last=False)

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, name: Name) -> bool:
        return name in self.entries


@dataclass
class PitEntry:
    name: Name
    in_faces: Set[int]
    expiry: float


@dataclass
class NodeState:
    """Forwarder tables plus counters; role behavior is plugged in as policy."""

    node_id: int
    config: ForwarderConfig
    cs: ContentStore = None
    pit: Dict[Name, PitEntry] = field(default_factory=dict)
    suppression: Dict[Name, float] = field(default_factory=dict)
    dup: Dict[Tuple[Name, int], float] = field(default_factory=dict)
    counters: Dict[str, int] = field(default_factory=dict)
    # policy(interest, in_face, now, rng) -> Forward | Suppress
    policy: Callable[[Packet, int, float, random.Random], Decision] = None

    def __post_init__(self):
        if self.cs is None:
            self.cs = ContentStore(self.config.cs_capacity)
        if self.policy is None:
            self.policy = lambda pkt, in_face, now, rng: SUPPRESS

    def count(self, key: str, n: int = 1) -> None:
        self.counters[key] = self.counters.get(key, 0) + n

    def purge(self, now: float) -> None:
        """Drop expired PIT, duplicate and suppression entries."""
        for d in (self.pit, self.dup):
            dead = [k for k, v in d.items()
                    if (v.expiry if isinstance(v, PitEntry) else v) <= now]
            for k in dead:
                del d[k]
        dead = [k for k, v in self.suppression.items() if v <= now]
        for k in dead:
            del self.suppression[k]


def on_interest(node: NodeState, pkt: Packet, in_face: int, now: float,
                rng: random.Random) -> List[Action]:
    """CS -> PIT -> policy pipeline for one received Interest."""
    assert pkt.kind is PacketKind.INTEREST
    key = (pkt.name, pkt.nonce)
    seen = node.dup.get(key)
    if seen is not None and seen > now:
        node.count("interest_dup_dropped")
        return []
    node.dup[key] = now + node.config.pit_lifetime

    cached = node.cs.lookup(pkt.name)
    if cached is not None:
        node.count("cs_hits")
        return [SendData(cached, rng.uniform(0.0, node.config.fwd_jitter_max))]

    entry = node.pit.get(pkt.name)
    if entry is not None and entry.expiry > now:
        entry.in_faces.add(in_face)
        node.count("pit_aggregated")
        return []

    node.pit[pkt.name] = PitEntry(pkt.name, {in_face}, now + node.config.pit_lifetime)
    decision = node.policy(pkt, in_face, now, rng)
    if isinstance(decision, Forward):
        node.count("interests_forwarded" if in_face != APP_FACE else "interests_sent")
        return [ForwardInterest(pkt, decision.delay, decision.suppress_on_fail,
                                from_app=in_face == APP_FACE)]
    if in_face != APP_FACE:
        node.count("interests_suppressed")
    return []


def on_data(node: NodeState, pkt: Packet, in_face: int, now: float,
            rng: random.Random) -> List[Action]:
    """Satisfy pending Interests (prefix match) and cache the packet."""
    assert pkt.kind is PacketKind.DATA
    faces: Set[int] = set()
    matched = []
    # a matching PIT name is some prefix of the Data name: probe each one
    comps = pkt.name.components
    for k in range(len(comps), -1, -1):
        name = Name._raw(comps[:k])
        entry = node.pit.get(name)
        if entry is not None and entry.expiry > now:
            matched.append(name)
    for name in matched:
        faces |= node.pit.pop(name).in_faces
    faces.discard(in_face)

    actions: List[Action] = []
    if APP_FACE in faces:
        actions.append(DeliverData(pkt))
        faces.discard(APP_FACE)
    if faces:
        if in_face == APP_FACE:
            # locally produced reply; the application already timed it
            actions.append(SendData(pkt, 0.0))
        else:
            node.count("data_relayed")
            actions.append(SendData(pkt, rng.uniform(0.0, node.config.fwd_jitter_max)))
    if not matched and in_face != APP_FACE:
        node.count("data_overheard")
    node.cs.insert(pkt)
    return actions


def pure_forward_decide(node: NodeState, pkt: Packet, now: float,
                        rng: random.Random) -> Decision:
    """Probabilistic forwarding with per-name suppression.

    The caller installs the suppression timer when a forwarded name
    fails to bring Data back within the PIT lifetime; this function
    only consults the table and flips the forwarding coin.
    """
    expiry = node.suppression.get(pkt.name)
    if expiry is not None and expiry > now:
        node.count("suppression_hits")
        return SUPPRESS
    if rng.random() < node.config.forward_prob:
        return Forward(rng.uniform(0.0, node.config.fwd_jitter_max), suppress_on_fail=True)
    return SUPPRESS


def install_suppression(node: NodeState, name: Name, now: float) -> None:
    node.suppression[name] = now + node.config.suppress_duration
    node.count("suppressions_installed")
