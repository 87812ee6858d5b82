"""Bitmaps, packet rarity, and the rarest-piece-first request policy.

One bit per collection packet, in the canonical global order given by
the metadata (files in metadata order, packets in index order; the
metadata object owns the offset arithmetic). Rarity of a packet is the
number of surveyed bitmaps that show it missing; the surveying peer's
own bitmap is included, which shifts all candidate scores equally and
leaves the argmax unchanged.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Set

from .collection import CollectionMetadata
from .errors import DomainError, LengthMismatch
from .names import Name

BITMAP_COMPONENT = "bitmap"


class Bitmap:
    """Fixed-length bit vector backed by an int; bit g set means packet g held."""

    __slots__ = ("collection_name", "length", "bits", "have_count")

    def __init__(self, collection_name: Name, length: int, bits: int = 0):
        self.collection_name = collection_name
        self.length = length
        self.bits = bits
        self.have_count = bin(bits).count("1")

    def get(self, g: int) -> bool:
        return (self.bits >> g) & 1 == 1

    def set(self, g: int) -> None:
        if not (0 <= g < self.length):
            raise IndexError(g)
        mask = 1 << g
        if not self.bits & mask:
            self.bits |= mask
            self.have_count += 1

    def clear(self, g: int) -> None:
        mask = 1 << g
        if self.bits & mask:
            self.bits &= ~mask
            self.have_count -= 1

    @property
    def full_mask(self) -> int:
        return (1 << self.length) - 1

    @property
    def complete(self) -> bool:
        return self.have_count == self.length

    def copy(self) -> "Bitmap":
        return Bitmap(self.collection_name, self.length, self.bits)

    def __eq__(self, other) -> bool:
        return (isinstance(other, Bitmap)
                and self.collection_name == other.collection_name
                and self.length == other.length and self.bits == other.bits)

    def __repr__(self) -> str:
        return "Bitmap(%s, %d/%d)" % (self.collection_name, self.have_count, self.length)

    # Wire form: 4-byte big-endian bit count, then packed bytes with bit 0
    # in the most significant position of the first byte. Packing bit g at
    # position (nbits-1-g) of a big-endian integer is a bit reversal, done
    # via string reversal to stay off Python-level per-bit loops.
    def encode(self) -> bytes:
        nbytes = (self.length + 7) // 8
        nbits = nbytes * 8
        if nbits:
            packed_int = int(format(self.bits, "0%db" % nbits)[::-1], 2)
            packed = packed_int.to_bytes(nbytes, "big")
        else:
            packed = b""
        return self.length.to_bytes(4, "big") + packed

    @classmethod
    def decode(cls, collection_name: Name, buf: bytes) -> "Bitmap":
        if len(buf) < 4:
            raise ValueError("bitmap too short")
        length = int.from_bytes(buf[:4], "big")
        nbytes = (length + 7) // 8
        if len(buf) != 4 + nbytes:
            raise ValueError("bitmap length mismatch")
        if nbytes:
            packed_int = int.from_bytes(buf[4:], "big")
            bits = int(format(packed_int, "0%db" % (nbytes * 8))[::-1], 2)
        else:
            bits = 0
        if bits >> length:
            raise ValueError("padding bits set beyond bitmap length")
        return cls(collection_name, length, bits)


def bitmap_from_metadata(md: CollectionMetadata) -> Bitmap:
    """All-zero bitmap sized to the collection's total packet count."""
    return Bitmap(md.collection_name, md.total_packets)


def bitmap_name(collection_name: Name) -> Name:
    """Name prefix under which bitmaps for a collection travel."""
    return collection_name.append(BITMAP_COMPONENT)


# --- Encounter history ------------------------------------------------------

@dataclass
class EncounterHistory:
    """Most recent bitmap per encountered peer, bounded to ``capacity`` peers."""

    capacity: int = 20
    entries: Dict[int, tuple] = field(default_factory=dict)  # peer -> (Bitmap, time)

    def record(self, peer_id: int, bitmap: Bitmap, now: float) -> None:
        if peer_id in self.entries:
            del self.entries[peer_id]
        self.entries[peer_id] = (bitmap.copy(), now)
        while len(self.entries) > self.capacity:
            oldest = next(iter(self.entries))
            del self.entries[oldest]

    def bitmaps(self) -> List[Bitmap]:
        return [bm for bm, _ in self.entries.values()]


# --- Rarity -----------------------------------------------------------------

RarityVector = List[int]


def _check_lengths(own: Bitmap, others: Iterable[Bitmap]) -> None:
    for b in others:
        if b.length != own.length or b.collection_name != own.collection_name:
            raise LengthMismatch("%s vs %s" % (own, b))


def rarity_local(own: Bitmap, neighbors: List[Bitmap]) -> RarityVector:
    """score[g] = number of surveyed bitmaps (self included) missing packet g."""
    _check_lengths(own, neighbors)
    maps = [own.bits] + [b.bits for b in neighbors]
    return [sum(1 for m in maps if not (m >> g) & 1) for g in range(own.length)]


def rarity_encounter(own: Bitmap, hist: EncounterHistory) -> RarityVector:
    return rarity_local(own, hist.bitmaps())


def next_request(own: Bitmap, rarity: RarityVector, in_flight: Set[int],
                 rng: random.Random, random_start: bool = False) -> Optional[int]:
    """Pick the next packet to request: rarest first among missing packets.

    Ties go to the lowest index, or to a uniformly random tied index when
    ``random_start`` is set. Returns None when nothing is requestable.
    """
    if len(rarity) != own.length:
        raise LengthMismatch("rarity length %d vs bitmap %d" % (len(rarity), own.length))
    best = None
    best_r = -1
    tied: List[int] = []
    bits = own.bits
    for g in range(own.length):
        if (bits >> g) & 1 or g in in_flight:
            continue
        r = rarity[g]
        if r > best_r:
            best_r = r
            best = g
            if random_start:
                tied = [g]
        elif random_start and r == best_r:
            tied.append(g)
    if best is None:
        return None
    if random_start and len(tied) > 1:
        return tied[rng.randrange(len(tied))]
    return best


def rpf_effectiveness(n_packets: int, k_peers: int) -> float:
    """Sharing effectiveness 1 - (ln N / N)^k; zero for isolated peers."""
    if k_peers == 0:
        return 0.0
    if n_packets < 2:
        raise DomainError("need at least 2 packets, got %d" % n_packets)
    if k_peers < 0:
        raise DomainError("peer count must be nonnegative")
    return 1.0 - (math.log(n_packets) / n_packets) ** k_peers


# --- Incremental rarity for the simulator hot path --------------------------

class RarityTracker:
    """Maintains per-bit rarity and rarity buckets under delta updates.

    The surveyed set is the owner's bitmap plus any registered neighbor
    maps; every mutation is an O(changed bits) update, and the rarest
    candidate query walks bucket masks from the highest score down.
    """

    def __init__(self, length: int):
        self.length = length
        self.full_mask = (1 << length) - 1
        self.n_maps = 0
        self.vec = [0] * length
        self.buckets: List[int] = [0]

    def _move(self, g: int, old: int, new: int) -> None:
        mask = 1 << g
        self.buckets[old] &= ~mask
        while len(self.buckets) <= new:
            self.buckets.append(0)
        self.buckets[new] |= mask
        self.vec[g] = new

    def _bump(self, mask: int, delta: int) -> None:
        vec = self.vec
        while mask:
            lsb = mask & -mask
            g = lsb.bit_length() - 1
            self._move(g, vec[g], vec[g] + delta)
            mask ^= lsb

    def add_map(self, bits: int) -> None:
        """Register a surveyed bitmap (use 0 for an all-missing map)."""
        self.n_maps += 1
        while len(self.buckets) <= self.n_maps:
            self.buckets.append(0)
        # every bit not set in the new map gains one "missing" vote
        self._bump(~bits & self.full_mask, +1)

    def remove_map(self, bits: int) -> None:
        self._bump(~bits & self.full_mask, -1)
        self.n_maps -= 1

    def change_map(self, old_bits: int, new_bits: int) -> None:
        self._bump(new_bits & ~old_bits, -1)
        self._bump(old_bits & ~new_bits, +1)

    def as_vector(self) -> RarityVector:
        return list(self.vec)

    def rarest(self, candidates: int, rng: random.Random,
               random_start: bool) -> Optional[int]:
        """Highest-rarity candidate bit, lowest index or random among ties."""
        for r in range(len(self.buckets) - 1, -1, -1):
            m = self.buckets[r] & candidates
            if m:
                if not random_start:
                    return (m & -m).bit_length() - 1
                n = bin(m).count("1")
                k = rng.randrange(n)
                while k:
                    m &= m - 1
                    k -= 1
                return (m & -m).bit_length() - 1
        return None
