import math
import random
from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

from dapes.advertisement import (
    Bitmap,
    EncounterHistory,
    RarityTracker,
    bitmap_from_metadata,
    bitmap_name,
    next_request,
    rarity_encounter,
    rarity_local,
    rpf_effectiveness,
)
from dapes.errors import DomainError, LengthMismatch
from dapes.names import Name

GOLDEN = Path(__file__).parent.parent / "testdata" / "golden_bitmap.txt"
COLL = Name(["c"])


def bm(bits_str, name=COLL):
    """Bitmap from a left-to-right bit string: index 0 is the first char."""
    b = Bitmap(name, len(bits_str))
    for i, ch in enumerate(bits_str):
        if ch == "1":
            b.set(i)
    return b


# --- bitmap basics -----------------------------------------------------------

def test_bitmap_from_metadata_lengths():
    from dapes.collection import FileSpec, MetadataFormat, build_collection, build_metadata
    from dapes.crypto import DigestAlgo, Keystore, Signer
    ks = Keystore()
    ks.add_hmac_key(b"k", b"s")
    s = Signer(ks, b"k")
    c = build_collection(Name(["c"]), [
        FileSpec("a", bytes(100 * 16)), FileSpec("b", bytes(100 * 16))], 16, s)
    md, _ = build_metadata(c, MetadataFormat.MERKLE_ROOTS, DigestAlgo.SHA256, s)
    b = bitmap_from_metadata(md)
    assert b.length == 200 and b.have_count == 0
    # first packet of the second file is the 101st bit
    g = md.global_index("b", 0)
    assert g == 100
    b.set(g)
    assert b.get(100) and b.have_count == 1


def test_one_packet_collection_bitmap():
    b = Bitmap(COLL, 1)
    assert b.length == 1 and not b.complete
    b.set(0)
    assert b.complete


def test_set_is_idempotent_and_counts():
    b = bm("000")
    b.set(1)
    b.set(1)
    assert b.have_count == 1 and b.get(1)


def test_bitmap_wire_round_trip_and_golden():
    b = bm("1010000001")
    enc = b.encode()
    assert Bitmap.decode(COLL, enc) == b
    assert enc.hex() == GOLDEN.read_text().strip()


@given(st.integers(1, 77), st.integers(0, 2 ** 77 - 1))
def test_bitmap_wire_round_trip_random(length, bits):
    b = Bitmap(COLL, length, bits & ((1 << length) - 1))
    assert Bitmap.decode(COLL, b.encode()) == b


def test_bitmap_name_prefix():
    assert str(bitmap_name(Name(["x", "y"]))) == "/x/y/bitmap"


# --- rarity ------------------------------------------------------------------

def rarity_oracle(own, neighbors):
    """Brute-force double loop over every surveyed map and bit."""
    maps = [own] + list(neighbors)
    return [sum(1 for m in maps if not m.get(g)) for g in range(own.length)]


def test_rarity_local_spec_example():
    own = bm("000")
    n1, n2 = bm("101"), bm("011")
    assert rarity_local(own, [n1, n2]) == [2, 2, 1]


def test_rarity_no_neighbors():
    own = bm("0110")
    assert rarity_local(own, []) == [1, 0, 0, 1]


def test_rarity_all_full_is_zero():
    own = bm("111")
    assert rarity_local(own, [bm("111")]) == [0, 0, 0]


def test_rarity_length_mismatch():
    with pytest.raises(LengthMismatch):
        rarity_local(bm("00"), [bm("000")])


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 64), st.integers(0, 8), st.randoms(use_true_random=False))
def test_rarity_matches_oracle(length, n_neighbors, rnd):
    own = Bitmap(COLL, length, rnd.getrandbits(length))
    neighbors = [Bitmap(COLL, length, rnd.getrandbits(length)) for _ in range(n_neighbors)]
    assert rarity_local(own, neighbors) == rarity_oracle(own, neighbors)


@given(st.integers(2, 32), st.randoms(use_true_random=False))
def test_rarity_monotone_under_having(length, rnd):
    """Adding a neighbor that has packet g never increases rarity[g]."""
    own = Bitmap(COLL, length, rnd.getrandbits(length))
    neighbors = [Bitmap(COLL, length, rnd.getrandbits(length)) for _ in range(3)]
    before = rarity_local(own, neighbors)
    extra = Bitmap(COLL, length, rnd.getrandbits(length))
    after = rarity_local(own, neighbors + [extra])
    for g in range(length):
        if extra.get(g):
            assert after[g] <= before[g]


def test_encounter_history_replacement():
    h = EncounterHistory(capacity=4)
    h.record(7, bm("100"), 1.0)
    h.record(7, bm("110"), 2.0)
    assert len(h.entries) == 1
    assert h.bitmaps()[0].bits == bm("110").bits


def test_encounter_history_capacity_one():
    h = EncounterHistory(capacity=1)
    for i, s in enumerate(["100", "010", "001"]):
        h.record(i, bm(s), float(i))
    assert len(h.entries) == 1
    assert h.bitmaps()[0].bits == bm("001").bits


def test_rarity_encounter_empty_equals_local():
    own = bm("010")
    assert rarity_encounter(own, EncounterHistory()) == rarity_local(own, [])


def test_rarity_encounter_double_snapshot_counts_latest():
    own = bm("000")
    h = EncounterHistory()
    h.record(5, bm("100"), 1.0)
    h.record(5, bm("111"), 2.0)
    assert rarity_encounter(own, h) == [1, 1, 1]


# --- next_request ------------------------------------------------------------

def test_next_request_spec_example():
    own = bm("010")
    rng = random.Random(0)
    assert next_request(own, [2, 0, 1], set(), rng) == 0


def test_next_request_complete_returns_none():
    own = bm("111")
    assert next_request(own, [0, 0, 0], set(), random.Random(0)) is None


def test_next_request_skips_in_flight():
    own = bm("000")
    assert next_request(own, [3, 2, 1], {0}, random.Random(0)) == 1


def test_next_request_never_returns_held_or_in_flight():
    rnd = random.Random(42)
    for _ in range(300):
        length = rnd.randint(1, 40)
        own = Bitmap(COLL, length, rnd.getrandbits(length))
        rarity = [rnd.randint(0, 5) for _ in range(length)]
        in_flight = {g for g in range(length) if rnd.random() < 0.2}
        g = next_request(own, rarity, in_flight, rnd, random_start=bool(rnd.getrandbits(1)))
        if g is not None:
            assert not own.get(g) and g not in in_flight
        else:
            assert all(own.get(g) or g in in_flight for g in range(length))


def test_random_start_uniform_over_ties():
    """Chi-squared at alpha=0.01: picks over 4 tied maxima are uniform."""
    own = bm("0000")
    counts = [0, 0, 0, 0]
    trials = 10_000
    for seed in range(trials):
        g = next_request(own, [2, 2, 2, 2], set(), random.Random(seed), random_start=True)
        counts[g] += 1
    expected = trials / 4
    chi2 = sum((c - expected) ** 2 / expected for c in counts)
    assert chi2 < 11.345  # df=3, alpha=0.01


def test_random_start_documented_pick_is_deterministic():
    own = bm("0000")
    g1 = next_request(own, [1, 1, 1, 1], set(), random.Random(7), random_start=True)
    g2 = next_request(own, [1, 1, 1, 1], set(), random.Random(7), random_start=True)
    assert g1 == g2


# --- eta ---------------------------------------------------------------------

def test_eta_isolated_is_zero():
    assert rpf_effectiveness(5000, 0) == 0.0


def test_eta_values():
    assert rpf_effectiveness(5000, 1) == pytest.approx(1 - math.log(5000) / 5000, abs=1e-12)
    assert rpf_effectiveness(5000, 1) == pytest.approx(0.9982966, abs=1e-5)
    assert rpf_effectiveness(5000, 2) == pytest.approx(0.9999971, abs=1e-6)
    assert rpf_effectiveness(5000, 1) >= 0.99


def test_eta_domain():
    with pytest.raises(DomainError):
        rpf_effectiveness(1, 3)


def test_eta_nondecreasing_in_k():
    for n in (3, 10, 100, 5000):
        vals = [rpf_effectiveness(n, k) for k in range(0, 8)]
        assert vals == sorted(vals)


# --- incremental tracker ------------------------------------------------------

def test_tracker_equals_vector_under_random_updates():
    rnd = random.Random(11)
    for _ in range(60):
        length = rnd.randint(1, 50)
        own = Bitmap(COLL, length, 0)
        tracker = RarityTracker(length)
        tracker.add_map(own.bits)
        maps = {}
        for _ in range(rnd.randint(0, 30)):
            op = rnd.random()
            if op < 0.3 and own.have_count < length:
                missing = [g for g in range(length) if not own.get(g)]
                g = rnd.choice(missing)
                old = own.bits
                own.set(g)
                tracker.change_map(old, own.bits)
            elif op < 0.6:
                pid = rnd.randrange(4)
                new = rnd.getrandbits(length)
                if pid in maps:
                    tracker.change_map(maps[pid], new)
                else:
                    tracker.add_map(new)
                maps[pid] = new
            elif maps:
                pid = rnd.choice(list(maps))
                tracker.remove_map(maps.pop(pid))
        neighbor_bitmaps = [Bitmap(COLL, length, v) for v in maps.values()]
        assert tracker.as_vector() == rarity_local(own, neighbor_bitmaps)
        # rarest query agrees with next_request
        cand = ~own.bits & tracker.full_mask
        got = tracker.rarest(cand, random.Random(3), random_start=False)
        want = next_request(own, tracker.as_vector(), set(), random.Random(3))
        assert got == want
