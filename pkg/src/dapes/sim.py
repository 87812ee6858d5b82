"""Deterministic discrete-event simulation of a broadcast wireless swarm.

One world is fully determined by (scenario config, seed): a min-heap of
(time, seq) events, a unit-disk radio medium with independent loss and
overlap collisions, random-direction mobility with wall reflection, and
per-node forwarder + application state. Two RNG streams are used: the
protocol stream drives every protocol decision, while a separate
mobility stream drives placement and movement so that runs differing
only in protocol knobs see identical node trajectories under the same
seed.

Radios are half-duplex: a node transmitting during any part of a
delivery window misses that delivery. A receiver hit by two overlapping
foreign transmissions decodes neither and counts a collision per
corrupted delivery; a sender whose transmission overlapped another one
audible at its own position observes the collision at the end of its
transmission (this feeds the bitmap backoff).
"""

from __future__ import annotations

import heapq
import math
import random
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

from . import forwarder as fwd
from .collection import (
    MetadataFormat,
    build_collection,
    build_metadata,
    FileSpec,
)
from .config import ScenarioConfig
from .crypto import Keystore, Signer
from .names import Name
from .peer import PeerApp, PeerRuntimeConfig, classify_name
from .wire import Packet, PacketKind, encode_packet

APP_FACE = fwd.APP_FACE


class Event:
    __slots__ = ("time", "seq", "fn", "cancelled")

    def __init__(self, time: float, seq: int, fn: Callable[[], None]):
        self.time = time
        self.seq = seq
        self.fn = fn
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True

    def __lt__(self, other) -> bool:
        return (self.time, self.seq) < (other.time, other.seq)


@dataclass
class Transmission:
    sender: int
    start: float
    end: float
    packet: Packet
    receivers: Tuple[int, ...]      # in range at start, sender excluded
    audible_set: frozenset


ROLE_PRODUCER = "producer"
ROLE_REPO = "repo"
ROLE_DOWNLOADER = "downloader"
ROLE_FORWARDER = "pure-forwarder"
ROLE_INTERMEDIATE = "intermediate"


class SimNode:
    """A wireless node: forwarder state plus an optional protocol app."""

    def __init__(self, world: "SimWorld", node_id: int, role: str, mobile: bool):
        self.world = world
        self.id = node_id
        self.role = role
        self.mobile = mobile
        self.state = fwd.NodeState(node_id=node_id, config=world.fwd_config)
        self.app: Optional[PeerApp] = None
        self.tx_busy_until = 0.0
        # name -> list of cancellable pending transmissions for that name
        self.pending_sends: Dict[Name, List[Event]] = {}
        # forwarded-interest bookkeeping: name -> (deadline event, suppress_on_fail)
        self.pending_answers: Dict[Name, Tuple[Event, bool]] = {}

    # -- transmit path ----------------------------------------------------

    def send_packet(self, pkt: Packet, delay: float, cancellable: bool = True) -> None:
        """Queue a broadcast after ``delay``; cancellable sends are dropped
        when the same (or satisfying) packet is overheard first."""
        ev = self.world.schedule(delay, lambda: None)
        ev.fn = lambda: self._tx_now(pkt, ev, cancellable)
        if cancellable:
            self.pending_sends.setdefault(pkt.name, []).append(ev)

    def _retire_pending(self, name: Name, ev: Event) -> None:
        pending = self.pending_sends.get(name)
        if not pending:
            return
        live = [e for e in pending if e is not ev and not e.cancelled]
        if live:
            self.pending_sends[name] = live
        else:
            del self.pending_sends[name]

    def _tx_now(self, pkt: Packet, ev: Event, cancellable: bool) -> None:
        if cancellable:
            self._retire_pending(pkt.name, ev)
        now = self.world.now
        if now < self.tx_busy_until:
            self.send_packet(pkt, self.tx_busy_until - now, cancellable)
            return
        self.world.broadcast(self.id, pkt)

    def cancel_pending_for_data(self, data_name: Name) -> None:
        """Overhearing Data kills queued sends it makes redundant: the same
        Data packet, or an Interest forward that this Data satisfies."""
        if not self.pending_sends:
            return
        comps = data_name.components
        for k in range(len(comps), -1, -1):
            pending = self.pending_sends.pop(Name._raw(comps[:k]), None)
            if pending:
                for ev in pending:
                    ev.cancel()

    # -- receive path ------------------------------------------------------

    def receive(self, pkt: Packet, sender: int) -> None:
        world = self.world
        now = world.now
        if pkt.kind is PacketKind.INTEREST:
            actions = fwd.on_interest(self.state, pkt, sender, now, world.rng)
            for act in actions:
                if isinstance(act, fwd.SendData):
                    self.send_packet(act.packet, act.delay)
                elif isinstance(act, fwd.ForwardInterest):
                    self._forward_interest(act.packet, act.delay, act.suppress_on_fail)
            if self.app is not None:
                self.app.on_interest_seen(pkt, sender)
        else:
            # queued sends this Data makes redundant must die before the
            # forwarder schedules a relay of this same packet
            self.cancel_pending_for_data(pkt.name)
            delivered = False
            for act in fwd.on_data(self.state, pkt, sender, now, world.rng):
                if isinstance(act, fwd.DeliverData):
                    delivered = True
                elif isinstance(act, fwd.SendData):
                    self.send_packet(act.packet, act.delay)
            self._note_answer(pkt.name)
            if self.app is not None:
                self.app.on_data_seen(pkt, sender, delivered)

    def inject_interest(self, pkt: Packet) -> None:
        """Application-originated Interest enters the local pipeline."""
        for act in fwd.on_interest(self.state, pkt, APP_FACE, self.world.now, self.world.rng):
            if isinstance(act, fwd.SendData):
                # answered from own CS; hand straight back to the app
                if self.app is not None:
                    self.app.on_data_seen(act.packet, self.id, True)
            elif isinstance(act, fwd.ForwardInterest):
                self.send_packet(act.packet, act.delay)

    def inject_data(self, pkt: Packet) -> None:
        """Application-originated Data reply; transmitted iff a PIT entry
        still wants it (someone else's reply may have consumed it)."""
        for act in fwd.on_data(self.state, pkt, APP_FACE, self.world.now, self.world.rng):
            if isinstance(act, fwd.SendData):
                self.send_packet(act.packet, act.delay)

    def send_direct(self, pkt: Packet, delay: float) -> None:
        """Retransmission path that bypasses PIT gating (PEBA re-sends)."""
        self.send_packet(pkt, delay)

    # -- forwarded-interest success bookkeeping -----------------------------

    def _forward_interest(self, pkt: Packet, delay: float, suppress_on_fail: bool = False):
        self.send_packet(pkt, delay)
        if pkt.name in self.pending_answers:
            return
        deadline = self.world.fwd_config.pit_lifetime + delay
        ev = self.world.schedule(deadline, lambda: self._answer_timeout(pkt.name))
        self.pending_answers[pkt.name] = (ev, suppress_on_fail)
        self.world.metrics.forwards += 1

    def _note_answer(self, data_name: Name) -> None:
        for name in [n for n in self.pending_answers if n.is_prefix_of(data_name)]:
            ev, _ = self.pending_answers.pop(name)
            ev.cancel()
            self.world.metrics.forward_successes += 1

    def _answer_timeout(self, name: Name) -> None:
        entry = self.pending_answers.pop(name, None)
        if entry is None:
            return
        _, suppress_on_fail = entry
        self.world.metrics.forward_failures += 1
        if suppress_on_fail:
            fwd.install_suppression(self.state, name, self.world.now)


@dataclass
class Metrics:
    tx_counts: Dict[str, int] = field(default_factory=dict)
    collisions: int = 0
    losses: int = 0
    forwards: int = 0
    forward_successes: int = 0
    forward_failures: int = 0
    metadata_rejections: int = 0
    download_times: Dict[int, float] = field(default_factory=dict)
    timed_out: List[int] = field(default_factory=list)

    def count_tx(self, key: str) -> None:
        self.tx_counts[key] = self.tx_counts.get(key, 0) + 1

    @property
    def total_tx(self) -> int:
        return sum(self.tx_counts.values())

    @property
    def forward_success_ratio(self) -> Optional[float]:
        done = self.forward_successes + self.forward_failures
        return self.forward_successes / done if done else None


class SimWorld:
    def __init__(self, config: ScenarioConfig, seed: int, trace=None):
        self.config = config
        self.seed = seed
        self.now = 0.0
        self._seq = 0
        self._queue: List[Event] = []
        self.rng = random.Random("%d/protocol" % seed)
        self.mob_rng = random.Random("%d/mobility" % seed)
        self.metrics = Metrics()
        self.trace = trace  # file-like or None
        self.fwd_config = fwd.ForwarderConfig(
            cs_capacity=config.peer.cs_capacity,
            pit_lifetime=config.peer.pit_lifetime,
            suppress_duration=config.peer.suppress_duration,
            fwd_jitter_max=config.peer.fwd_jitter_max,
            forward_prob=config.peer.forward_prob,
        )
        self.nodes: List[SimNode] = []
        self.positions: List[List[float]] = []
        self.velocities: List[List[float]] = []
        self.active_tx: List[Transmission] = []
        self.downloader_ids: List[int] = []
        self._remaining = 0
        self._build()

    # -- event queue ---------------------------------------------------------

    def schedule(self, delay: float, fn: Callable[[], None]) -> Event:
        ev = Event(self.now + delay, self._seq, fn)
        self._seq += 1
        heapq.heappush(self._queue, ev)
        return ev

    def run(self, max_time: float) -> None:
        while self._queue:
            ev = heapq.heappop(self._queue)
            if ev.cancelled:
                continue
            if ev.time > max_time:
                self.now = max_time
                break
            self.now = ev.time
            ev.fn()
            if self._remaining == 0:
                break
        for nid in self.downloader_ids:
            if nid not in self.metrics.download_times:
                self.metrics.timed_out.append(nid)

    def log(self, node: int, kind: str, name, detail: str = "") -> None:
        if self.trace is not None:
            self.trace.write("%.9f\t%d\t%s\t%s\t%s\n" % (self.now, node, kind, name, detail))

    # -- world construction ---------------------------------------------------

    def _build(self) -> None:
        cfg = self.config
        # shared key material: one producer key trusted by everyone
        keystore = Keystore()
        producer_key = b"producer-key"
        keystore.add_hmac_key(producer_key, b"producer-secret")
        trust_anchors = {producer_key}
        signer = Signer(keystore, producer_key)

        coll_cfg = cfg.collection
        content_rng = random.Random("%d/content" % self.seed)
        files = [FileSpec("file-%d" % i, content_rng.randbytes(coll_cfg.file_size))
                 for i in range(coll_cfg.files)]
        collection = build_collection(Name([coll_cfg.name]), files,
                                      coll_cfg.packet_size, signer)
        metadata, md_packets = build_metadata(collection, coll_cfg.metadata_format,
                                              coll_cfg.digest_algo, signer)
        self.collection = collection
        self.metadata = metadata
        self.md_packets = md_packets

        peer_cfg = PeerRuntimeConfig.from_scenario(cfg)

        roles = ([ROLE_PRODUCER] + [ROLE_REPO] * (cfg.nodes.repos - 1)
                 + [ROLE_DOWNLOADER] * cfg.nodes.downloaders
                 + [ROLE_FORWARDER] * cfg.nodes.pure_forwarders
                 + [ROLE_INTERMEDIATE] * cfg.nodes.intermediates)
        n_static = cfg.nodes.repos
        arena_w, arena_h = cfg.mobility.arena_width, cfg.mobility.arena_height

        for nid, role in enumerate(roles):
            mobile = nid >= n_static
            node = SimNode(self, nid, role, mobile)
            if role == ROLE_FORWARDER:
                node.state.policy = (
                    lambda pkt, in_face, now, rng, _s=node.state:
                    fwd.pure_forward_decide(_s, pkt, now, rng))
            else:
                app = PeerApp(node, peer_cfg, keystore, trust_anchors,
                              wants_any=role in (ROLE_REPO, ROLE_DOWNLOADER))
                node.app = app
                node.state.policy = app.forward_policy
            self.nodes.append(node)
            if mobile:
                x = self.mob_rng.uniform(0, arena_w)
                y = self.mob_rng.uniform(0, arena_h)
                self.positions.append([x, y])
                self.velocities.append([0.0, 0.0])
                self._redraw_velocity(nid)
            else:
                # repos sit on an even grid line across the arena
                k = nid + 1
                x = arena_w * k / (n_static + 1)
                y = arena_h * k / (n_static + 1)
                self.positions.append([x, y])
                self.velocities.append([0.0, 0.0])

        producer = self.nodes[0]
        for pkt in collection.all_packets():
            producer.state.cs.insert(pkt)
        for pkt in md_packets:
            producer.state.cs.insert(pkt)
        producer.app.adopt_complete_collection(collection, metadata, len(md_packets))

        self.downloader_ids = [n.id for n in self.nodes
                               if n.role in (ROLE_REPO, ROLE_DOWNLOADER)]
        self._remaining = len(self.downloader_ids)

        for node in self.nodes:
            if node.app is not None:
                node.app.start()
        self.schedule(cfg.mobility.tick, self._mobility_tick)
        self.schedule(1.0, self._housekeeping)

    # -- mobility --------------------------------------------------------------

    def _redraw_velocity(self, nid: int) -> None:
        m = self.config.mobility
        speed = self.mob_rng.uniform(m.speed_min, m.speed_max)
        heading = self.mob_rng.uniform(0.0, 2.0 * math.pi)
        self.velocities[nid][0] = speed * math.cos(heading)
        self.velocities[nid][1] = speed * math.sin(heading)

    def step_mobility(self, dt: float) -> None:
        if dt <= 0:
            raise ValueError("dt must be positive")
        w = self.config.mobility.arena_width
        h = self.config.mobility.arena_height
        for node in self.nodes:
            if not node.mobile:
                continue
            pos = self.positions[node.id]
            vel = self.velocities[node.id]
            pos[0] += vel[0] * dt
            pos[1] += vel[1] * dt
            if pos[0] < 0.0:
                pos[0] = -pos[0]
                vel[0] = -vel[0]
            elif pos[0] > w:
                pos[0] = 2.0 * w - pos[0]
                vel[0] = -vel[0]
            if pos[1] < 0.0:
                pos[1] = -pos[1]
                vel[1] = -vel[1]
            elif pos[1] > h:
                pos[1] = 2.0 * h - pos[1]
                vel[1] = -vel[1]

    def _mobility_tick(self) -> None:
        m = self.config.mobility
        self.step_mobility(m.tick)
        # redraw speeds and headings on epoch boundaries, in node order
        epoch = int(self.now / m.redraw_period)
        prev_epoch = int((self.now - m.tick) / m.redraw_period)
        if epoch != prev_epoch:
            for node in self.nodes:
                if node.mobile:
                    self._redraw_velocity(node.id)
        self.schedule(m.tick, self._mobility_tick)

    def _housekeeping(self) -> None:
        for node in self.nodes:
            node.state.purge(self.now)
            if node.app is not None:
                node.app.housekeeping()
        self.schedule(1.0, self._housekeeping)

    # -- radio medium ------------------------------------------------------------

    def in_range(self, a: int, b: int) -> bool:
        r = self.config.medium.range
        pa, pb = self.positions[a], self.positions[b]
        dx = pa[0] - pb[0]
        dy = pa[1] - pb[1]
        return dx * dx + dy * dy <= r * r

    def neighbors_of(self, nid: int) -> List[int]:
        return [o.id for o in self.nodes if o.id != nid and self.in_range(nid, o.id)]

    def broadcast(self, sender: int, pkt: Packet) -> None:
        size = len(encode_packet(pkt))
        airtime = size * 8.0 / self.config.medium.data_rate
        now = self.now
        receivers = tuple(self.neighbors_of(sender))
        audible = frozenset(receivers) | {sender}
        tx = Transmission(sender, now, now + airtime, pkt, receivers, audible)
        self.active_tx = [t for t in self.active_tx if t.end > now - 0.05]
        self.active_tx.append(tx)
        self.nodes[sender].tx_busy_until = now + airtime

        cat = classify_name(pkt.name)
        kind = "interest" if pkt.kind is PacketKind.INTEREST else "data"
        self.metrics.count_tx("%s_%s" % (cat, kind))
        self.log(sender, "TX", pkt.name, "%s_%s %dB" % (cat, kind, size))

        loss_rate = self.config.medium.loss_rate
        for rid in receivers:
            lost = loss_rate > 0.0 and self.rng.random() < loss_rate
            self.schedule(airtime, lambda t=tx, r=rid, l=lost: self._deliver(t, r, l))
        self.schedule(airtime, lambda t=tx: self._tx_end(t))

    def _overlaps(self, t1: Transmission, t2: Transmission) -> bool:
        return t1.start < t2.end and t2.start < t1.end

    def _deliver(self, tx: Transmission, rid: int, lost: bool) -> None:
        if lost:
            self.metrics.losses += 1
            self.log(rid, "LOST", tx.packet.name, "from=%d" % tx.sender)
            return
        for other in self.active_tx:
            if other is tx:
                continue
            # another audible transmission overlapping the window corrupts
            # the delivery, as does the receiver's own (half-duplex radio)
            if (other.sender == rid or rid in other.audible_set) \
                    and self._overlaps(tx, other):
                self.metrics.collisions += 1
                self.log(rid, "COLLISION", tx.packet.name, "from=%d" % tx.sender)
                return
        self.log(rid, "RX", tx.packet.name, "from=%d" % tx.sender)
        self.nodes[rid].receive(tx.packet, tx.sender)

    def _tx_end(self, tx: Transmission) -> None:
        sender = self.nodes[tx.sender]
        for other in self.active_tx:
            if other is tx:
                continue
            if tx.sender in other.audible_set and self._overlaps(tx, other):
                if sender.app is not None:
                    sender.app.on_tx_collision(tx.packet)
                break

    # -- completion ----------------------------------------------------------------

    def note_completion(self, node_id: int) -> None:
        if node_id in self.metrics.download_times:
            return
        self.metrics.download_times[node_id] = self.now
        self.log(node_id, "COMPLETE", "", "%.3f" % self.now)
        if node_id in self.downloader_ids:
            self._remaining -= 1


def run_world(config: ScenarioConfig, seed: int, trace=None) -> SimWorld:
    world = SimWorld(config, seed, trace=trace)
    world.run(config.run.max_sim_time)
    return world
