"""The protocol application running on each DAPES-aware node.

A peer beacons discovery Interests with an adaptive period, learns what
collections its neighbors hold, fetches and authenticates collection
metadata, exchanges bitmaps (before or interleaved with data fetching),
requests packets rarest-first, and answers or forwards the Interests of
others based on short-lived knowledge of nearby holdings.

Message namespaces:

* ``/dapes/discovery`` Interest; replies are ``/dapes/discovery/<peer>``
  listing (collection name, metadata packet count) pairs.
* ``<collection>/metadata/<seq>`` carries the metadata segments.
* ``<collection>/bitmap`` Interest whose application parameters hold the
  sender id (8 bytes) plus its bitmap; replies are named
  ``<collection>/bitmap/<peer>/<version>`` where the version is the
  responder's packet count at reply time (bitmaps only ever grow, so
  equal versions imply equal content and stale cache entries are never
  an exact match for a fresh request).
* ``<collection>/<file>/<seq>`` is the collection data itself.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Set, Tuple

from . import forwarder as fwd
from .advertisement import Bitmap, RarityTracker, bitmap_from_metadata, bitmap_name
from .collection import (
    Collection,
    CollectionMetadata,
    METADATA_COMPONENT,
    MetadataFormat,
    Verdict,
    VerifyContext,
    metadata_from_packets,
    sign_data,
    verify_metadata_signature,
    verify_packet,
)
from .config import ScenarioConfig
from .crypto import Keystore, Signer
from .errors import DomainError
from .names import Name
from .scheduling import (
    ExchangeMode,
    PebaState,
    Phase,
    PrioritizationState,
    bitmap_timer_linear,
    peba_assign_slot,
)
from .wire import Packet, PacketKind, encode_tlv, decode_tlv_sequence
from . import wire

DISCOVERY_PREFIX = Name(["dapes", "discovery"])
BITMAP_COMPONENT = "bitmap"

MAX_REPLY_RETRIES = 8
BITMAP_EXHAUST_ATTEMPTS = 3


def classify_name(name: Name) -> str:
    c = name.components
    if len(c) >= 2 and c[0] == "dapes" and c[1] == "discovery":
        return "discovery"
    if BITMAP_COMPONENT in c:
        return "bitmap"
    if METADATA_COMPONENT in c:
        return "metadata"
    return "data"


@dataclass
class PeerRuntimeConfig:
    exchange_mode: ExchangeMode = ExchangeMode.INTERLEAVED
    bitmaps: Optional[int] = 3
    strategy: str = "local"
    random_start: bool = True
    window: float = 0.020
    peba: bool = True
    peba_groups: int = 2
    tau: float = 0.0008
    pipeline_depth: int = 4
    discovery_period_min: float = 1.0
    discovery_period_max: float = 32.0
    knowledge_ttl: float = 10.0
    history_capacity: int = 20
    retransmit_max: int = 5
    pit_lifetime: float = 2.0
    fwd_jitter_max: float = 0.020

    @classmethod
    def from_scenario(cls, cfg: ScenarioConfig) -> "PeerRuntimeConfig":
        p = cfg.peer
        tau = p.tau
        if tau is None:
            # slot spans the largest packet on air, with framing headroom
            tau = (cfg.collection.packet_size + 100) * 8.0 / cfg.medium.data_rate
        return cls(
            exchange_mode=p.exchange_mode, bitmaps=p.bitmaps, strategy=p.strategy,
            random_start=p.random_start, window=p.window, peba=p.peba,
            peba_groups=p.peba_groups, tau=tau, pipeline_depth=p.pipeline_depth,
            discovery_period_min=p.discovery_period_min,
            discovery_period_max=p.discovery_period_max,
            knowledge_ttl=p.knowledge_ttl, history_capacity=p.history_capacity,
            retransmit_max=p.retransmit_max, pit_lifetime=p.pit_lifetime,
            fwd_jitter_max=p.fwd_jitter_max,
        )


@dataclass
class KnowledgeEntry:
    last_heard: float = 0.0
    hops: int = 2  # 1 once heard directly; 2 while known only via relays
    collections: Dict[Name, int] = field(default_factory=dict)  # -> md packet count
    bitmaps: Dict[Name, Tuple[int, float]] = field(default_factory=dict)


@dataclass
class DownloadSession:
    collection: Name
    md_count: int
    md: Optional[CollectionMetadata] = None
    md_chunks: Dict[int, bytes] = field(default_factory=dict)
    md_outstanding: Optional[int] = None
    md_attempts: int = 0

    own: Optional[Bitmap] = None
    tracker: Optional[RarityTracker] = None
    name_to_g: Dict[Name, int] = field(default_factory=dict)
    payloads: Dict[int, bytes] = field(default_factory=dict)
    verify_ctx: VerifyContext = field(default_factory=VerifyContext)
    rejected_packets: int = 0

    in_flight: Dict[int, int] = field(default_factory=dict)  # g -> attempts
    inflight_mask: int = 0

    # surveyed bitmaps mirrored in the tracker (peer id -> bits)
    surveyed: Dict[int, int] = field(default_factory=dict)

    # per-encounter exchange state
    heard_peers: Set[int] = field(default_factory=set)
    known_group: Set[int] = field(default_factory=set)
    bitmap_outstanding: bool = False
    bitmap_deadline: float = 0.0
    bitmap_attempts_without_new: int = 0
    prio: PrioritizationState = field(default_factory=PrioritizationState)
    peba: PebaState = field(default_factory=PebaState)
    encounter_active: bool = False
    reply_retries: int = 0

    complete: bool = False
    complete_time: Optional[float] = None

    @property
    def bitmaps_heard(self) -> int:
        return len(self.heard_peers)


class PeerApp:
    def __init__(self, node, cfg: PeerRuntimeConfig, keystore: Keystore,
                 trust_anchors: Set[bytes], wants_any: bool):
        self.node = node
        self.cfg = cfg
        self.keystore = keystore
        self.trust_anchors = trust_anchors
        self.wants_any = wants_any
        self.peer_id = node.id
        key_id = b"peer-%d" % node.id
        keystore.add_hmac_key(key_id, b"secret-%d" % node.id)
        self.signer = Signer(keystore, key_id)

        self.knowledge: Dict[int, KnowledgeEntry] = {}
        self.name_seen: Dict[Name, float] = {}
        self.blacklist: Set[Name] = set()
        self.session: Optional[DownloadSession] = None

        self.discovery_period = cfg.discovery_period_min
        self.last_neighbor_heard = -1e9
        self._pending_discovery_reply = False
        self._last_discovery_reply = -1e9
        self._pending_bitmap_reply = None  # (collection, Event)

    # -- lifecycle -------------------------------------------------------------

    def start(self) -> None:
        offset = self.node.world.rng.uniform(0.0, self.cfg.discovery_period_min)
        self.node.world.schedule(offset, self._discovery_tick)

    def adopt_complete_collection(self, collection: Collection,
                                  md: CollectionMetadata, md_count: int) -> None:
        s = DownloadSession(collection.name, md_count, md=md)
        s.own = bitmap_from_metadata(md)
        for plist in collection.packets:
            for pkt in plist:
                g = md.global_index(pkt.name[len(md.collection_name)],
                                    int(pkt.name[-1]))
                s.own.set(g)
                s.payloads[g] = pkt.payload
        s.name_to_g = {md.packet_name(g): g for g in range(md.total_packets)}
        s.tracker = RarityTracker(s.own.length)
        s.tracker.add_map(s.own.bits)
        s.surveyed = {}
        s.complete = True
        s.complete_time = 0.0
        self.session = s

    # -- time and helpers --------------------------------------------------------

    @property
    def now(self) -> float:
        return self.node.world.now

    @property
    def rng(self) -> random.Random:
        return self.node.world.rng

    def _fresh(self, entry: KnowledgeEntry) -> bool:
        return entry.last_heard >= self.now - self.cfg.knowledge_ttl

    def _fresh_holders(self, collection: Name, exclude: int = -2) -> List[int]:
        return [pid for pid, e in self.knowledge.items()
                if pid != exclude and self._fresh(e) and collection in e.collections]

    def _touch(self, pid: int, direct: bool = True) -> KnowledgeEntry:
        entry = self.knowledge.get(pid)
        if entry is None:
            entry = self.knowledge[pid] = KnowledgeEntry()
        entry.last_heard = self.now
        if direct:
            entry.hops = 1
        self.last_neighbor_heard = self.now
        return entry

    # -- discovery ----------------------------------------------------------------

    def _discovery_tick(self) -> None:
        # beacons are fire-and-forget signaling: transmitted directly, no
        # PIT entry of our own (replies arrive as overheard data), but
        # dup-recorded so echoes relayed back at us are dropped
        pkt = Packet(PacketKind.INTEREST, DISCOVERY_PREFIX,
                     nonce=self.rng.randrange(1 << 32))
        self.node.state.dup[(pkt.name, pkt.nonce)] = self.now + self.cfg.pit_lifetime
        self.node.state.count("interests_sent")
        self.node.send_packet(pkt, self.rng.uniform(0.0, self.cfg.fwd_jitter_max),
                              cancellable=False)
        if self.now - self.last_neighbor_heard <= self.discovery_period:
            self.discovery_period = self.cfg.discovery_period_min
        else:
            self.discovery_period = min(2.0 * self.discovery_period,
                                        self.cfg.discovery_period_max)
        self.node.world.schedule(self.discovery_period, self._discovery_tick)

    def _discovery_reply_payload(self) -> bytes:
        out = b""
        s = self.session
        if s is not None and s.md_count:
            body = wire.encode_name(s.collection)
            body += encode_tlv(wire.T_META_PACKET_COUNT, s.md_count.to_bytes(4, "big"))
            out += encode_tlv(wire.T_DISCOVERY_ENTRY, body)
        return out

    def _send_discovery_reply(self) -> None:
        self._pending_discovery_reply = False
        self._last_discovery_reply = self.now
        name = DISCOVERY_PREFIX.append(str(self.peer_id))
        pkt = sign_data(name, self._discovery_reply_payload(), self.signer)
        self.node.inject_data(pkt)

    def _parse_discovery_payload(self, payload: bytes) -> List[Tuple[Name, int]]:
        entries = []
        try:
            for elem in decode_tlv_sequence(payload):
                if elem.type != wire.T_DISCOVERY_ENTRY:
                    continue
                name = None
                count = 0
                for inner in decode_tlv_sequence(elem.value):
                    if inner.type == wire.T_NAME:
                        name = wire._decode_name_body(inner.value, 0)
                    elif inner.type == wire.T_META_PACKET_COUNT:
                        count = int.from_bytes(inner.value, "big")
                if name is not None:
                    entries.append((name, count))
        except wire.CodecError:
            pass
        return entries

    # -- inbound events -------------------------------------------------------------

    def on_interest_seen(self, pkt: Packet, sender: int) -> None:
        if sender == self.peer_id:
            return
        entry = self._touch(sender)
        name = pkt.name
        cat = classify_name(name)
        if cat == "discovery":
            # neighbors overheard the last reply; repeating it within a
            # beacon period adds nothing
            recently = self.now - self._last_discovery_reply \
                < self.cfg.discovery_period_min
            if not self._pending_discovery_reply and not recently:
                self._pending_discovery_reply = True
                delay = self.rng.uniform(0.0, self.cfg.fwd_jitter_max)
                self.node.world.schedule(delay, self._send_discovery_reply)
            return
        if cat == "bitmap" and name.components[-1] == BITMAP_COMPONENT:
            collection = name.prefix(len(name) - 1)
            owner, bits = self._decode_bitmap_params(pkt.payload)
            if owner is not None and owner != self.peer_id:
                self._heard_bitmap(owner, collection, bits, via=sender)
            self._maybe_schedule_bitmap_reply(collection)
            return
        if cat == "data":
            # the requester is interested in this collection
            s = self.session
            if s is not None and s.collection.is_prefix_of(name):
                entry.collections.setdefault(s.collection, s.md_count)

    def on_data_seen(self, pkt: Packet, sender: int, delivered: bool) -> None:
        if sender != self.peer_id:
            self._touch(sender)
        name = pkt.name
        cat = classify_name(name)
        if cat == "discovery":
            if len(name) == 3:
                try:
                    owner = int(name[2])
                except ValueError:
                    return
                if owner == self.peer_id:
                    return
                entry = self._touch(owner, direct=owner == sender)
                for coll, md_count in self._parse_discovery_payload(pkt.payload):
                    entry.collections[coll] = md_count
                self._maybe_start_session()
                s = self.session
                if s is not None:
                    self._touch_encounter(s)
            return
        if cat == "metadata":
            self._on_metadata_data(name, pkt.payload)
            return
        if cat == "bitmap":
            # <collection>/bitmap/<owner>/<version>
            idx = name.components.index(BITMAP_COMPONENT)
            collection = name.prefix(idx)
            if len(name) >= idx + 2:
                try:
                    owner = int(name[idx + 1])
                except ValueError:
                    return
                try:
                    bits_map = Bitmap.decode(collection, pkt.payload)
                except ValueError:
                    return
                if owner != self.peer_id:
                    self._heard_bitmap(owner, collection, bits_map.bits,
                                       via=sender, from_data=True)
            return
        self._on_collection_data(name, pkt, sender)

    def on_tx_collision(self, pkt: Packet) -> None:
        if pkt.kind is not PacketKind.DATA:
            return
        name = pkt.name
        if classify_name(name) != "bitmap":
            return
        idx = name.components.index(BITMAP_COMPONENT)
        try:
            owner = int(name[idx + 1])
        except (ValueError, IndexError):
            return
        if owner != self.peer_id:
            return
        self._bitmap_reply_collided(name.prefix(idx))

    def housekeeping(self) -> None:
        now = self.now
        ttl = self.cfg.knowledge_ttl
        stale = [pid for pid, e in self.knowledge.items() if e.last_heard < now - ttl]
        for pid in stale:
            del self.knowledge[pid]
        s = self.session
        if s is not None and s.tracker is not None and self.cfg.strategy == "local":
            fresh = set(self._fresh_holders(s.collection))
            for pid in [p for p in s.surveyed if p not in fresh]:
                s.tracker.remove_map(s.surveyed.pop(pid))
        dead = [n for n, t in self.name_seen.items() if t < now - ttl]
        for n in dead:
            del self.name_seen[n]
        if s is not None:
            self._touch_encounter(s)
            if s.md is None and s.md_outstanding is None \
                    and self._fresh_holders(s.collection, exclude=self.peer_id):
                self._request_next_metadata()
            if not s.complete:
                self._pump()

    # -- session bring-up --------------------------------------------------------------

    def _maybe_start_session(self) -> None:
        if not self.wants_any or self.session is not None:
            return
        candidates = []
        for pid, entry in self.knowledge.items():
            if not self._fresh(entry):
                continue
            for coll, md_count in entry.collections.items():
                if coll not in self.blacklist and md_count > 0:
                    candidates.append((str(coll), coll, md_count))
        if not candidates:
            return
        candidates.sort()
        _, coll, md_count = candidates[0]
        self.session = DownloadSession(coll, md_count)
        self._touch_encounter(self.session)
        self._request_next_metadata()

    def _request_next_metadata(self) -> None:
        s = self.session
        if s is None or s.md is not None:
            return
        missing = next((i for i in range(s.md_count) if i not in s.md_chunks), None)
        if missing is None:
            self._finish_metadata()
            return
        if s.md_outstanding == missing:
            return
        s.md_outstanding = missing
        name = s.collection.append(METADATA_COMPONENT, str(missing))
        self.node.inject_interest(Packet(PacketKind.INTEREST, name,
                                         nonce=self.rng.randrange(1 << 32)))
        self.node.world.schedule(self.cfg.pit_lifetime + 0.1,
                                 lambda i=missing: self._metadata_timeout(i))

    def _metadata_timeout(self, i: int) -> None:
        s = self.session
        if s is None or s.md is not None or i in s.md_chunks:
            return
        s.md_outstanding = None
        s.md_attempts += 1
        # per-encounter budget; an encounter reset zeroes it and the
        # housekeeping kick resumes the fetch
        if s.md_attempts >= self.cfg.retransmit_max * s.md_count + 5:
            return
        if self._fresh_holders(s.collection, exclude=self.peer_id):
            self._request_next_metadata()

    def _on_metadata_data(self, name: Name, payload: bytes) -> None:
        s = self.session
        if s is None or s.md is not None:
            return
        if not s.collection.is_prefix_of(name) or len(name) != len(s.collection) + 2:
            return
        try:
            i = int(name[-1])
        except ValueError:
            return
        if i in s.md_chunks or i >= s.md_count:
            return
        s.md_chunks[i] = payload
        s.md_outstanding = None
        self._request_next_metadata()

    def _finish_metadata(self) -> None:
        s = self.session
        try:
            md = metadata_from_packets([s.md_chunks[i] for i in range(s.md_count)])
        except (wire.CodecError, ValueError, KeyError):
            self._reject_collection("undecodable metadata")
            return
        if md.producer_key_id not in self.trust_anchors or \
                not verify_metadata_signature(md, self.keystore):
            self._reject_collection("metadata signature rejected")
            return
        if md.collection_name != s.collection:
            self._reject_collection("metadata names a different collection")
            return
        s.md = md
        s.own = bitmap_from_metadata(md)
        s.name_to_g = {md.packet_name(g): g for g in range(md.total_packets)}
        s.tracker = RarityTracker(s.own.length)
        s.tracker.add_map(s.own.bits)
        self._touch_encounter(s)
        self._pump()

    def _reject_collection(self, reason: str) -> None:
        s = self.session
        self.node.world.metrics.metadata_rejections += 1
        self.node.world.log(self.peer_id, "MD_REJECT", s.collection, reason)
        self.blacklist.add(s.collection)
        self.session = None
        self._maybe_start_session()

    # -- encounters ---------------------------------------------------------------------

    def _touch_encounter(self, s: DownloadSession) -> None:
        """Reset the per-encounter exchange state when the group changes.

        Prioritization, backoff and heard-bitmap state are scoped to one
        group of connected participants; a peer joining (directly or via
        a relay) forms a new group and restarts the contention."""
        fresh = set(self._fresh_holders(s.collection, exclude=self.peer_id))
        if fresh and (not s.encounter_active or not fresh <= s.known_group):
            s.encounter_active = True
            s.known_group = fresh
            s.heard_peers.clear()
            s.bitmap_outstanding = False
            s.bitmap_attempts_without_new = 0
            s.prio = PrioritizationState(window=self.cfg.window)
            s.peba = PebaState(group_count=self.cfg.peba_groups,
                               slot_duration=self.cfg.tau)
            s.reply_retries = 0
            for g in s.in_flight:
                s.in_flight[g] = 0
            s.md_attempts = 0
            if self.cfg.strategy == "local":
                # local-neighborhood rarity holds no state across encounters
                for pid, bits in list(s.surveyed.items()):
                    s.tracker.remove_map(bits)
                s.surveyed.clear()
        elif not fresh and s.encounter_active:
            s.encounter_active = False
            s.known_group = set()

    # -- bitmap exchange -------------------------------------------------------------------

    def _encode_bitmap_params(self, own: Bitmap) -> bytes:
        return self.peer_id.to_bytes(8, "big") + own.encode()

    def _decode_bitmap_params(self, payload: bytes):
        if len(payload) < 12:
            return None, 0
        owner = int.from_bytes(payload[:8], "big")
        try:
            bm = Bitmap.decode(Name(), payload[8:])
        except ValueError:
            return None, 0
        return owner, bm.bits

    def _heard_bitmap(self, owner: int, collection: Name, bits: int,
                      via: int = -1, from_data: bool = False) -> None:
        entry = self._touch(owner, direct=owner == via)
        entry.collections.setdefault(collection, 0)
        entry.bitmaps[collection] = (bits, self.now)
        s = self.session
        if s is None or s.collection != collection or s.own is None:
            return
        self._touch_encounter(s)
        new_peer = owner not in s.heard_peers
        s.heard_peers.add(owner)
        s.prio.note_heard(bits)
        if new_peer:
            s.bitmap_attempts_without_new = 0
        if from_data:
            s.bitmap_outstanding = False
        # fold into the surveyed set (both strategies see current neighbors)
        if self.cfg.strategy == "local":
            old = s.surveyed.get(owner)
            if old is None:
                s.tracker.add_map(bits)
            else:
                s.tracker.change_map(old, bits)
            s.surveyed[owner] = bits
        else:
            old = s.surveyed.get(owner)
            if old is None:
                s.tracker.add_map(bits)
                s.surveyed[owner] = bits
                while len(s.surveyed) > self.cfg.history_capacity:
                    oldest = next(iter(s.surveyed))
                    s.tracker.remove_map(s.surveyed.pop(oldest))
            else:
                s.tracker.change_map(old, bits)
                del s.surveyed[owner]  # refresh recency order
                s.surveyed[owner] = bits
        if self._pending_bitmap_reply is not None:
            self._maybe_schedule_bitmap_reply(collection, reschedule=True)
        if not s.complete:
            self._pump()

    def _reply_contribution(self, s: DownloadSession) -> Tuple[int, int, float]:
        """(contribution, total missing, share fraction) for the reply timer."""
        own = s.own
        if s.prio.phase is Phase.FIRST_BITMAP:
            return own.have_count, own.length, own.have_count / own.length
        missing_mask = ~s.prio.heard_union & own.full_mask
        total_missing = bin(missing_mask).count("1")
        if total_missing == 0:
            return 0, 0, 0.0
        contribution = bin(own.bits & missing_mask).count("1")
        return contribution, total_missing, contribution / total_missing

    def _maybe_schedule_bitmap_reply(self, collection: Name, reschedule: bool = False) -> None:
        s = self.session
        if s is None or s.collection != collection or s.own is None:
            return
        self._touch_encounter(s)
        contribution, total, fraction = self._reply_contribution(s)
        if self._pending_bitmap_reply is not None:
            coll, ev = self._pending_bitmap_reply
            ev.cancel()
            self._pending_bitmap_reply = None
        if fraction <= 0.0:
            return
        if self.cfg.peba and s.peba.collision_round > 0:
            slot = peba_assign_slot(s.peba, contribution, total, self.rng)
            delay = slot * self.cfg.tau
        else:
            delay = bitmap_timer_linear(self.cfg.window, fraction)
            if not self.cfg.peba:
                delay += self.rng.uniform(0.0, self.cfg.tau)
        if not reschedule:
            s.reply_retries = 0
        ev = self.node.world.schedule(delay, lambda c=collection: self._send_bitmap_reply(c))
        self._pending_bitmap_reply = (collection, ev)

    def _bitmap_reply_packet(self, s: DownloadSession) -> Packet:
        name = bitmap_name(s.collection).append(str(self.peer_id), str(s.own.have_count))
        return sign_data(name, s.own.encode(), self.signer)

    def _send_bitmap_reply(self, collection: Name) -> None:
        self._pending_bitmap_reply = None
        s = self.session
        if s is None or s.collection != collection:
            return
        self.node.inject_data(self._bitmap_reply_packet(s))
        # own advertisement is now part of the transmitted set
        s.prio.note_heard(s.own.bits)

    def _bitmap_reply_collided(self, collection: Name) -> None:
        s = self.session
        if s is None or s.collection != collection:
            return
        s.reply_retries += 1
        if s.reply_retries > MAX_REPLY_RETRIES:
            return
        contribution, total, fraction = self._reply_contribution(s)
        if fraction <= 0.0:
            return
        if self.cfg.peba:
            s.peba.on_collision()
            slot = peba_assign_slot(s.peba, contribution, total, self.rng)
            delay = slot * self.cfg.tau
        else:
            delay = bitmap_timer_linear(self.cfg.window, fraction) \
                + self.rng.uniform(0.0, self.cfg.tau)
        pkt = self._bitmap_reply_packet(s)
        self.node.send_direct(pkt, delay)

    def _send_bitmap_interest(self, s: DownloadSession) -> None:
        name = bitmap_name(s.collection)
        pkt = Packet(PacketKind.INTEREST, name, nonce=self.rng.randrange(1 << 32),
                     payload=self._encode_bitmap_params(s.own))
        self.node.inject_interest(pkt)
        s.bitmap_outstanding = True
        s.bitmap_deadline = self.now + self.cfg.pit_lifetime + 0.1
        self.node.world.schedule(self.cfg.pit_lifetime + 0.1, self._bitmap_interest_timeout)

    def _bitmap_interest_timeout(self) -> None:
        s = self.session
        if s is None or not s.bitmap_outstanding or self.now < s.bitmap_deadline:
            return
        s.bitmap_outstanding = False
        s.bitmap_attempts_without_new += 1
        if not s.complete:
            self._pump()

    # -- data fetching ----------------------------------------------------------------------

    def _want_more_bitmaps(self, s: DownloadSession) -> bool:
        b = self.cfg.bitmaps
        if b is not None and s.bitmaps_heard >= b:
            return False
        if s.bitmap_attempts_without_new >= BITMAP_EXHAUST_ATTEMPTS:
            return False
        unheard = [pid for pid in self._fresh_holders(s.collection, exclude=self.peer_id)
                   if pid not in s.heard_peers]
        return bool(unheard)

    def _pump(self) -> None:
        s = self.session
        if s is None or s.complete or s.own is None:
            return
        if not self._fresh_holders(s.collection, exclude=self.peer_id):
            return
        want_bitmaps = self._want_more_bitmaps(s)
        mode = self.cfg.exchange_mode
        if mode is ExchangeMode.BITMAPS_FIRST:
            if want_bitmaps:
                if not s.bitmap_outstanding:
                    self._send_bitmap_interest(s)
                return
        else:
            b = self.cfg.bitmaps
            if b is None or b > 0:
                if s.bitmaps_heard == 0 and want_bitmaps:
                    if not s.bitmap_outstanding:
                        self._send_bitmap_interest(s)
                    return
        while len(s.in_flight) < self.cfg.pipeline_depth:
            if (mode is ExchangeMode.INTERLEAVED and want_bitmaps
                    and not s.bitmap_outstanding and self.rng.random() < 0.5):
                self._send_bitmap_interest(s)
                continue
            g = s.tracker.rarest(~s.own.bits & s.own.full_mask & ~s.inflight_mask,
                                 self.rng, self.cfg.random_start)
            if g is None:
                break
            self._send_data_interest(s, g)

    def _send_data_interest(self, s: DownloadSession, g: int) -> None:
        s.in_flight[g] = s.in_flight.get(g, 0) + 1
        s.inflight_mask |= 1 << g
        name = s.md.packet_name(g)
        self.node.inject_interest(Packet(PacketKind.INTEREST, name,
                                         nonce=self.rng.randrange(1 << 32)))
        self.node.world.schedule(self.cfg.pit_lifetime + 0.1,
                                 lambda: self._data_timeout(g))

    def _data_timeout(self, g: int) -> None:
        s = self.session
        if s is None or s.complete or g not in s.in_flight:
            return
        if not self._fresh_holders(s.collection, exclude=self.peer_id):
            del s.in_flight[g]
            s.inflight_mask &= ~(1 << g)
            return
        if s.in_flight[g] < self.cfg.retransmit_max:
            name = s.md.packet_name(g)
            s.in_flight[g] += 1
            self.node.inject_interest(Packet(PacketKind.INTEREST, name,
                                             nonce=self.rng.randrange(1 << 32)))
            self.node.world.schedule(self.cfg.pit_lifetime + 0.1,
                                     lambda: self._data_timeout(g))
        else:
            del s.in_flight[g]
            s.inflight_mask &= ~(1 << g)
            self._pump()

    def _on_collection_data(self, name: Name, pkt: Packet, sender: int) -> None:
        s = self.session
        if s is None or s.md is None or not s.collection.is_prefix_of(name):
            if sender != self.peer_id:
                self.name_seen[name] = self.now
                entry = self.knowledge.get(sender)
                if entry is not None and len(name) >= 3:
                    entry.collections.setdefault(name.prefix(len(name) - 2), 0)
            return
        g = s.name_to_g.get(name)
        if g is None or s.complete or s.own.get(g):
            return
        result = verify_packet(s.md, pkt, s.verify_ctx)
        if result.verdict is Verdict.REJECTED:
            s.rejected_packets += 1
            if result.resolved_indices:
                self._merkle_reject(s, name)
            self._clear_in_flight(s, g)
            self._pump()
            return
        old = s.own.bits
        s.own.set(g)
        s.tracker.change_map(old, s.own.bits)
        s.payloads[g] = pkt.payload
        self._clear_in_flight(s, g)
        self._check_complete(s)
        if not s.complete:
            self._pump()

    def _clear_in_flight(self, s: DownloadSession, g: int) -> None:
        if g in s.in_flight:
            del s.in_flight[g]
        s.inflight_mask &= ~(1 << g)

    def _merkle_reject(self, s: DownloadSession, name: Name) -> None:
        """A completed tree failed: drop every buffered packet of that file."""
        fi, _ = s.md.locate(s.name_to_g[name])
        base = s.md.file_offset(fi)
        for local in range(s.md.files[fi].packet_count):
            g = base + local
            if s.own.get(g):
                old = s.own.bits
                s.own.clear(g)
                s.tracker.change_map(old, s.own.bits)
            s.payloads.pop(g, None)

    def _check_complete(self, s: DownloadSession) -> None:
        if s.complete or not s.own.complete:
            return
        if s.md.format is MetadataFormat.MERKLE_ROOTS:
            if not all(s.verify_ctx.verified_files.get(fi) for fi in range(len(s.md.files))):
                return
        s.complete = True
        s.complete_time = self.now
        self.node.world.note_completion(self.peer_id)

    # -- forwarding policy ---------------------------------------------------------------------

    def forward_policy(self, pkt: Packet, in_face: int, now: float,
                       rng: random.Random) -> fwd.Decision:
        if in_face == fwd.APP_FACE:
            return fwd.Forward(rng.uniform(0.0, self.cfg.fwd_jitter_max))
        name = pkt.name
        if DISCOVERY_PREFIX.is_prefix_of(name):
            return fwd.SUPPRESS
        s = self.session
        if s is not None and s.md is not None and s.collection.is_prefix_of(name):
            g = s.name_to_g.get(name)
            if g is not None:
                for pid, entry in self.knowledge.items():
                    if pid == in_face or not self._fresh(entry):
                        continue
                    held = entry.bitmaps.get(s.collection)
                    if held is not None and (held[0] >> g) & 1:
                        return fwd.Forward(rng.uniform(0.0, self.cfg.fwd_jitter_max))
                return fwd.SUPPRESS
            # bitmap or metadata traffic for our collection: forward when
            # someone besides the requester participates in it
            others = [p for p in self._fresh_holders(s.collection, exclude=in_face)
                      if p != self.peer_id]
            if others:
                return fwd.Forward(rng.uniform(0.0, self.cfg.fwd_jitter_max))
            return fwd.SUPPRESS
        known = self._known_collection_for(name)
        if known is not None:
            if self._foreign_evidence(known, name, exclude=in_face):
                return fwd.Forward(rng.uniform(0.0, self.cfg.fwd_jitter_max))
            return fwd.SUPPRESS
        return fwd.pure_forward_decide(self.node.state, pkt, now, rng)

    def _known_collection_for(self, name: Name) -> Optional[Name]:
        for entry in self.knowledge.values():
            for coll in entry.collections:
                if coll.is_prefix_of(name):
                    return coll
        for seen in self.name_seen:
            if seen == name:
                return name
        return None

    def _foreign_evidence(self, collection: Name, name: Name, exclude: int) -> bool:
        t = self.name_seen.get(name)
        if t is not None and t >= self.now - self.cfg.knowledge_ttl:
            return True
        for pid, entry in self.knowledge.items():
            if pid == exclude or not self._fresh(entry):
                continue
            held = entry.bitmaps.get(collection)
            if held is not None and held[0]:
                return True
            if collection in entry.collections:
                return True
        return False
