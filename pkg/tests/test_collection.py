import random
from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

from dapes.collection import (
    Collection,
    CollectionMetadata,
    DuplicateFileName,
    FileSpec,
    IndexOutOfRange,
    MetadataFormat,
    UnknownFile,
    Verdict,
    VerifyContext,
    build_collection,
    build_metadata,
    decode_metadata,
    encode_metadata,
    merkle_root,
    metadata_from_packets,
    metadata_subnames_bytes,
    packet_name_from_global_index,
    subnames_wire_size,
    verify_metadata_signature,
    verify_packet,
)
from dapes.crypto import DigestAlgo, Keystore, Signer, digest
from dapes.names import Name, parse_name
from dapes.wire import Packet, PacketKind, signed_portion

GOLDEN = Path(__file__).parent.parent / "testdata" / "golden_metadata.txt"


def make_signer(key_id=b"prod", scheme="hmac"):
    ks = Keystore()
    if scheme == "hmac":
        ks.add_hmac_key(key_id, b"secret-" + key_id)
    else:
        ks.add_ed25519_key(key_id, b"seed-" + key_id)
    return Signer(ks, key_id)


def det_bytes(n, seed=1):
    return random.Random(seed).randbytes(n)


# --- signing ---------------------------------------------------------------

@pytest.mark.parametrize("scheme", ["hmac", "ed25519"])
def test_sign_verify_round_trip(scheme):
    s = make_signer(scheme=scheme)
    msg = b"the message"
    sig = s.sign(msg)
    assert s.keystore.verify(msg, sig, s.key_id)
    assert not s.keystore.verify(msg + b"!", sig, s.key_id)


def test_verify_wrong_key_is_false():
    ks = Keystore()
    ks.add_hmac_key(b"k1", b"one")
    ks.add_hmac_key(b"k2", b"two")
    sig = ks.sign(b"m", b"k1")
    assert not ks.verify(b"m", sig, b"k2")


def test_unknown_key_raises():
    from dapes.crypto import UnknownKey
    with pytest.raises(UnknownKey):
        Keystore().sign(b"m", b"nope")


# --- segmentation and naming -------------------------------------------------

def test_hundred_packet_file_names():
    c = build_collection(Name(["c"]), [FileSpec("f", det_bytes(100 * 1024))],
                         1024, make_signer())
    plist = c.packets[0]
    assert len(plist) == 100
    assert str(plist[0].name) == "/c/f/0"
    assert str(plist[99].name) == "/c/f/99"


def test_single_byte_file():
    c = build_collection(Name(["c"]), [FileSpec("f", b"x")], 1024, make_signer())
    assert [str(p.name) for p in c.packets[0]] == ["/c/f/0"]


def test_remainder_packet():
    c = build_collection(Name(["c"]), [FileSpec("f", det_bytes(1025))], 1024, make_signer())
    assert len(c.packets[0]) == 2
    assert len(c.packets[0][1].payload) == 1


def test_duplicate_file_name_rejected():
    with pytest.raises(DuplicateFileName):
        build_collection(Name(["c"]), [FileSpec("f", b"a"), FileSpec("f", b"b")],
                         1024, make_signer())


def test_every_packet_is_signed():
    s = make_signer()
    c = build_collection(Name(["c"]), [FileSpec("f", det_bytes(3000))], 1024, s)
    for p in c.all_packets():
        assert p.sig_value is not None
        assert s.keystore.verify(signed_portion(p), p.sig_value, p.sig_info.key_id)


@settings(max_examples=30, deadline=None)
@given(
    n_files=st.integers(1, 5),
    sizes_seed=st.integers(0, 10 ** 6),
    packet_size=st.sampled_from([256, 1024]),
)
def test_reassembly_round_trip(n_files, sizes_seed, packet_size):
    rng = random.Random(sizes_seed)
    files = [FileSpec("f%d" % i, rng.randbytes(rng.randint(1, 64 * 1024 // 8)))
             for i in range(n_files)]
    c = build_collection(Name(["c"]), files, packet_size, make_signer())
    for f, plist in zip(c.files, c.packets):
        assert b"".join(p.payload for p in plist) == f.content


# --- merkle ------------------------------------------------------------------

def _merkle_oracle(leaves, algo):
    """Independent recursion: pair left-to-right, promote the odd one."""
    if len(leaves) == 1:
        return leaves[0]
    nxt = []
    i = 0
    while i + 1 < len(leaves):
        nxt.append(digest(algo, leaves[i] + leaves[i + 1]))
        i += 2
    if i < len(leaves):
        nxt.append(leaves[i])
    return _merkle_oracle(nxt, algo)


@given(st.lists(st.binary(min_size=4, max_size=8), min_size=1, max_size=17))
def test_merkle_matches_oracle(leaves):
    assert merkle_root(leaves, DigestAlgo.SHA256) == _merkle_oracle(leaves, DigestAlgo.SHA256)


def test_merkle_three_leaves_shape():
    a, b, c = b"a", b"b", b"c"
    algo = DigestAlgo.SHA256
    expect = digest(algo, digest(algo, a + b) + c)
    assert merkle_root([a, b, c], algo) == expect


# --- metadata size arithmetic -------------------------------------------------

def test_subnames_formula_values():
    assert metadata_subnames_bytes(1000, 4, 20, 8) == 32_000
    assert metadata_subnames_bytes(0, 4, 20, 8) == 0
    assert metadata_subnames_bytes(1, 4, 32, 8) == 44


def one_mb_collection(signer):
    # 10 files x 100 KiB at 1 KiB packets = 1000 packets
    files = [FileSpec("file-%d" % i, det_bytes(100 * 1024, seed=i)) for i in range(10)]
    return build_collection(Name(["big"]), files, 1024, signer)


def test_digest_list_metadata_spans_32_packets():
    s = make_signer()
    c = one_mb_collection(s)
    md, pkts = build_metadata(c, MetadataFormat.DIGEST_LIST, DigestAlgo.SHA1, s)
    assert md.total_packets == 1000
    assert subnames_wire_size(md) == 32_000
    assert len(pkts) >= 32
    assert str(pkts[0].name) == "/big/metadata/0"


def test_merkle_metadata_fits_one_packet():
    s = make_signer()
    c = one_mb_collection(s)
    md, pkts = build_metadata(c, MetadataFormat.MERKLE_ROOTS, DigestAlgo.TRUNC24, s)
    assert len(pkts) == 1
    assert all(fm.merkle_root is not None and len(fm.merkle_root) == 24 for fm in md.files)


def test_tiny_digest_list_fits_one_packet():
    s = make_signer()
    c = build_collection(Name(["c"]), [FileSpec("f", b"z")], 1024, s)
    _, pkts = build_metadata(c, MetadataFormat.DIGEST_LIST, DigestAlgo.SHA256, s)
    assert len(pkts) == 1


@settings(max_examples=20, deadline=None)
@given(
    n_files=st.integers(1, 4),
    seed=st.integers(0, 10 ** 6),
    algo=st.sampled_from([DigestAlgo.SHA1, DigestAlgo.SHA256, DigestAlgo.TRUNC24]),
)
def test_size_law_matches_serializer(n_files, seed, algo):
    rng = random.Random(seed)
    s = make_signer()
    files = [FileSpec("f%d" % i, rng.randbytes(rng.randint(1, 4000))) for i in range(n_files)]
    c = build_collection(Name(["c"]), files, 256, s)
    md, _ = build_metadata(c, MetadataFormat.DIGEST_LIST, algo, s)
    assert subnames_wire_size(md) == metadata_subnames_bytes(
        md.total_packets, 4, algo.digest_size, 8)


def test_metadata_encoding_is_deterministic_and_decodes():
    s = make_signer()
    c = build_collection(Name(["c"]), [FileSpec("f", det_bytes(5000))], 1024, s)
    md1, pkts1 = build_metadata(c, MetadataFormat.DIGEST_LIST, DigestAlgo.SHA256, s)
    md2, pkts2 = build_metadata(c, MetadataFormat.DIGEST_LIST, DigestAlgo.SHA256, s)
    assert [p.payload for p in pkts1] == [p.payload for p in pkts2]
    back = metadata_from_packets([p.payload for p in pkts1])
    assert back.collection_name == md1.collection_name
    assert back.format is md1.format
    assert [fm.per_packet_digests for fm in back.files] == \
        [fm.per_packet_digests for fm in md1.files]
    assert verify_metadata_signature(back, s.keystore)


def test_metadata_signature_tamper_detected():
    s = make_signer()
    c = build_collection(Name(["c"]), [FileSpec("f", b"data!")], 1024, s)
    md, _ = build_metadata(c, MetadataFormat.DIGEST_LIST, DigestAlgo.SHA256, s)
    md.files[0].per_packet_digests[0] = bytes(32)
    assert not verify_metadata_signature(md, s.keystore)


def test_golden_metadata_vector():
    s = make_signer()
    c = build_collection(Name(["gold"]),
                         [FileSpec("a", b"abcdef"), FileSpec("b", b"0123456789" * 40)],
                         256, s)
    md, _ = build_metadata(c, MetadataFormat.DIGEST_LIST, DigestAlgo.SHA1, s)
    assert encode_metadata(md).hex() == GOLDEN.read_text().strip()


# --- global index mapping -----------------------------------------------------

def figure_layout_metadata():
    """Two files: 100 packets then 60 packets, digest-list, like the paper's example."""
    s = make_signer()
    files = [FileSpec("bridge-picture", det_bytes(100 * 512, seed=3)),
             FileSpec("bridge-location", det_bytes(60 * 512, seed=4))]
    c = build_collection(parse_name("/damaged-bridge-1533783192"), files, 512, s)
    md, _ = build_metadata(c, MetadataFormat.DIGEST_LIST, DigestAlgo.SHA256, s)
    return c, md


def test_global_index_mapping():
    _, md = figure_layout_metadata()
    assert str(packet_name_from_global_index(md, 0)) == \
        "/damaged-bridge-1533783192/bridge-picture/0"
    assert str(packet_name_from_global_index(md, 100)) == \
        "/damaged-bridge-1533783192/bridge-location/0"
    assert str(packet_name_from_global_index(md, 101)) == \
        "/damaged-bridge-1533783192/bridge-location/1"
    with pytest.raises(IndexOutOfRange):
        packet_name_from_global_index(md, md.total_packets)


def test_global_index_inverse():
    _, md = figure_layout_metadata()
    for g in range(md.total_packets):
        fi, local = md.locate(g)
        assert md.global_index(md.files[fi].file_name, local) == g


# --- packet verification -------------------------------------------------------

def three_packet_collection(fmt):
    s = make_signer()
    c = build_collection(Name(["c"]), [FileSpec("f", det_bytes(3 * 64, seed=9))], 64, s)
    md, _ = build_metadata(c, fmt, DigestAlgo.SHA256, s)
    return c, md


def test_digest_list_accepts_untampered():
    c, md = three_packet_collection(MetadataFormat.DIGEST_LIST)
    for p in c.all_packets():
        assert verify_packet(md, p).verdict is Verdict.ACCEPTED


def _flip(pkt, pos):
    payload = bytearray(pkt.payload)
    payload[pos] ^= 0x01
    return Packet(PacketKind.DATA, pkt.name, payload=bytes(payload))


def test_digest_list_rejects_every_single_byte_flip():
    c, md = three_packet_collection(MetadataFormat.DIGEST_LIST)
    for p in c.all_packets():
        for pos in range(len(p.payload)):
            r = verify_packet(md, _flip(p, pos))
            assert r.verdict is Verdict.REJECTED


def test_merkle_defers_then_accepts():
    c, md = three_packet_collection(MetadataFormat.MERKLE_ROOTS)
    ctx = VerifyContext()
    pkts = c.packets[0]
    assert verify_packet(md, pkts[0], ctx).verdict is Verdict.DEFERRED
    assert verify_packet(md, pkts[1], ctx).verdict is Verdict.DEFERRED
    r = verify_packet(md, pkts[2], ctx)
    assert r.verdict is Verdict.ACCEPTED
    assert set(r.resolved_indices) == {0, 1}


def test_merkle_rejects_every_single_byte_flip_on_completion():
    c, md = three_packet_collection(MetadataFormat.MERKLE_ROOTS)
    pkts = c.packets[0]
    for victim in range(3):
        for pos in range(len(pkts[victim].payload)):
            ctx = VerifyContext()
            bad = [_flip(p, pos) if i == victim else p for i, p in enumerate(pkts)]
            verdicts = [verify_packet(md, p, ctx).verdict for p in bad]
            assert verdicts[:2] == [Verdict.DEFERRED, Verdict.DEFERRED]
            assert verdicts[2] is Verdict.REJECTED


def test_merkle_flip_changes_root():
    leaves = [digest(DigestAlgo.SHA256, b) for b in (b"p0", b"p1", b"p2")]
    base = merkle_root(leaves, DigestAlgo.SHA256)
    tampered = [digest(DigestAlgo.SHA256, b) for b in (b"p0", b"p1", b"q2")]
    assert merkle_root(tampered, DigestAlgo.SHA256) != base


def test_verify_unknown_file_and_bad_index():
    c, md = three_packet_collection(MetadataFormat.DIGEST_LIST)
    good = c.packets[0][0]
    with pytest.raises(UnknownFile):
        verify_packet(md, Packet(PacketKind.DATA, Name(["c", "nope", "0"]), payload=b"x"))
    with pytest.raises(IndexOutOfRange):
        verify_packet(md, Packet(PacketKind.DATA, Name(["c", "f", "3"]), payload=b"x"))


if __name__ == "__main__":  # regenerate the golden metadata vector
    s = make_signer()
    c = build_collection(Name(["gold"]),
                         [FileSpec("a", b"abcdef"), FileSpec("b", b"0123456789" * 40)],
                         256, s)
    md, _ = build_metadata(c, MetadataFormat.DIGEST_LIST, DigestAlgo.SHA1, s)
    GOLDEN.parent.mkdir(exist_ok=True)
    GOLDEN.write_text(encode_metadata(md).hex() + "\n")
    print("wrote", GOLDEN)
