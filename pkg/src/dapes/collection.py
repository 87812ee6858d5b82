"""File collections: segmentation, naming, signed metadata, integrity.

A collection is an ordered group of files segmented into fixed-size
packets named ``<collection>/<file>/<index>`` with indices starting at
0. The producer publishes signed metadata in one of two formats:

* digest-list: one (index, digest) subname per packet, allowing each
  packet to be verified on arrival; large, segmented into many packets.
* merkle-roots: one tree root per file; tiny, but a file's packets can
  only be verified together once all of them have arrived.

Metadata data packets are named ``<collection>/metadata/<seq>``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from . import wire
from .crypto import DigestAlgo, Keystore, Signer, digest
from .names import Name
from .wire import Packet, SigInfo, encode_tlv

METADATA_COMPONENT = "metadata"

DEFAULT_PACKET_SIZE = 1024


class DuplicateFileName(ValueError):
    pass


class UnknownFile(KeyError):
    pass


class IndexOutOfRange(IndexError):
    pass


class MetadataFormat(enum.IntEnum):
    DIGEST_LIST = 1
    MERKLE_ROOTS = 2


@dataclass(frozen=True)
class FileSpec:
    name: str          # single name component
    content: bytes

    def __post_init__(self):
        if not self.content:
            raise ValueError("file content must be nonempty")
        Name([self.name])  # validates the component


@dataclass
class Collection:
    name: Name
    files: List[FileSpec]
    packet_size: int
    # per file, packets in index order
    packets: List[List[Packet]]

    def all_packets(self):
        for plist in self.packets:
            yield from plist


def sign_data(name: Name, payload: bytes, signer: Signer) -> Packet:
    """Build a signed Data packet; the signature covers name+payload+sig_info."""
    si = SigInfo(signer.key_id, signer.scheme)
    unsigned = Packet(wire.PacketKind.DATA, name, payload=payload, sig_info=si)
    sig = signer.sign(wire.signed_portion(unsigned))
    return Packet(wire.PacketKind.DATA, name, payload=payload, sig_info=si, sig_value=sig)


def segment(content: bytes, packet_size: int) -> List[bytes]:
    return [content[i:i + packet_size] for i in range(0, len(content), packet_size)]


def build_collection(name: Name, files: Sequence[FileSpec], packet_size: int,
                     signer: Signer) -> Collection:
    """Segment and sign every file; packet names are <collection>/<file>/<i>."""
    if packet_size < 1:
        raise ValueError("packet_size must be >= 1")
    seen = set()
    for f in files:
        if f.name in seen:
            raise DuplicateFileName(f.name)
        seen.add(f.name)
    packets = []
    for f in files:
        plist = []
        for i, chunk in enumerate(segment(f.content, packet_size)):
            plist.append(sign_data(name.append(f.name, str(i)), chunk, signer))
        packets.append(plist)
    return Collection(name, list(files), packet_size, packets)


# --- Merkle trees -----------------------------------------------------------

def merkle_root(leaves: Sequence[bytes], algo: DigestAlgo) -> bytes:
    """Root of the tree over ``leaves``; an unpaired node is promoted as-is."""
    if not leaves:
        raise ValueError("merkle tree needs at least one leaf")
    level = list(leaves)
    while len(level) > 1:
        nxt = []
        for i in range(0, len(level) - 1, 2):
            nxt.append(digest(algo, level[i] + level[i + 1]))
        if len(level) % 2:
            nxt.append(level[-1])
        level = nxt
    return level[0]


# --- Metadata ---------------------------------------------------------------

@dataclass
class FileMeta:
    file_name: str
    packet_count: int
    per_packet_digests: Optional[List[bytes]] = None
    merkle_root: Optional[bytes] = None


@dataclass
class CollectionMetadata:
    collection_name: Name
    format: MetadataFormat
    digest_algo: DigestAlgo
    files: List[FileMeta]
    producer_key_id: bytes
    signature: bytes

    # prefix sums over packet counts, in metadata file order
    _offsets: List[int] = field(default_factory=list, repr=False)

    def __post_init__(self):
        self._rebuild_offsets()

    def _rebuild_offsets(self):
        off = 0
        self._offsets = []
        for fm in self.files:
            self._offsets.append(off)
            off += fm.packet_count

    @property
    def total_packets(self) -> int:
        return sum(fm.packet_count for fm in self.files)

    def file_offset(self, file_index: int) -> int:
        return self._offsets[file_index]

    def locate(self, g: int) -> Tuple[int, int]:
        """Map a global packet index to (file index, local index)."""
        if not (0 <= g < self.total_packets):
            raise IndexOutOfRange(g)
        lo, hi = 0, len(self.files) - 1
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if self._offsets[mid] <= g:
                lo = mid
            else:
                hi = mid - 1
        return lo, g - self._offsets[lo]

    def file_index(self, file_name: str) -> int:
        for i, fm in enumerate(self.files):
            if fm.file_name == file_name:
                return i
        raise UnknownFile(file_name)

    def global_index(self, file_name: str, local: int) -> int:
        i = self.file_index(file_name)
        if not (0 <= local < self.files[i].packet_count):
            raise IndexOutOfRange(local)
        return self._offsets[i] + local

    def packet_name(self, g: int) -> Name:
        """Full packet name for a global bitmap index."""
        fi, local = self.locate(g)
        return self.collection_name.append(self.files[fi].file_name, str(local))


def packet_name_from_global_index(md: CollectionMetadata, g: int) -> Name:
    return md.packet_name(g)


def metadata_subnames_bytes(n_subnames: int, index_bytes: int, digest_bytes: int,
                            tlv_framing_bytes: int) -> int:
    """Bytes needed to encode ``n_subnames`` (index, digest) subname entries."""
    if min(n_subnames, index_bytes, digest_bytes, tlv_framing_bytes) < 0:
        raise ValueError("arguments must be nonnegative")
    return n_subnames * (index_bytes + digest_bytes + tlv_framing_bytes)


def _encode_subname(index: int, dgst: bytes) -> bytes:
    body = encode_tlv(wire.T_SUBNAME_INDEX, index.to_bytes(wire.SUBNAME_INDEX_BYTES, "big"))
    body += encode_tlv(wire.T_SUBNAME_DIGEST, dgst)
    return encode_tlv(wire.T_SUBNAME, body)


def _encode_file_meta(fm: FileMeta, fmt: MetadataFormat) -> bytes:
    body = encode_tlv(wire.T_META_FILE_NAME, fm.file_name.encode("utf-8"))
    body += encode_tlv(wire.T_META_PACKET_COUNT, fm.packet_count.to_bytes(4, "big"))
    if fmt is MetadataFormat.DIGEST_LIST:
        for i, d in enumerate(fm.per_packet_digests):
            body += _encode_subname(i, d)
    else:
        body += encode_tlv(wire.T_META_MERKLE_ROOT, fm.merkle_root)
    return encode_tlv(wire.T_META_FILE, body)


def _metadata_core_bytes(md: CollectionMetadata) -> bytes:
    out = wire.encode_name(md.collection_name)
    out += encode_tlv(wire.T_META_FORMAT, bytes((int(md.format),)))
    out += encode_tlv(wire.T_META_DIGEST_ALGO, bytes((int(md.digest_algo),)))
    for fm in md.files:
        out += _encode_file_meta(fm, md.format)
    out += encode_tlv(wire.T_KEY_ID, md.producer_key_id)
    return out


def encode_metadata(md: CollectionMetadata) -> bytes:
    return _metadata_core_bytes(md) + encode_tlv(wire.T_SIG_VALUE, md.signature)


def subnames_wire_size(md: CollectionMetadata) -> int:
    """Total encoded size of the subname entries, measured from the encoder."""
    if md.format is not MetadataFormat.DIGEST_LIST:
        return 0
    return sum(len(_encode_subname(i, d))
               for fm in md.files for i, d in enumerate(fm.per_packet_digests))


def decode_metadata(buf: bytes) -> CollectionMetadata:
    elems = wire.decode_tlv_sequence(buf)
    collection_name = None
    fmt = None
    algo = None
    files: List[FileMeta] = []
    key_id = None
    signature = None
    for elem in elems:
        if elem.type == wire.T_NAME:
            collection_name = wire._decode_name_body(elem.value, 0)
        elif elem.type == wire.T_META_FORMAT:
            fmt = MetadataFormat(elem.value[0])
        elif elem.type == wire.T_META_DIGEST_ALGO:
            algo = DigestAlgo(elem.value[0])
        elif elem.type == wire.T_META_FILE:
            files.append(_decode_file_meta(elem.value))
        elif elem.type == wire.T_KEY_ID:
            key_id = elem.value
        elif elem.type == wire.T_SIG_VALUE:
            signature = elem.value
        else:
            raise wire.CodecError(0, "unknown metadata field %d" % elem.type)
    if None in (collection_name, fmt, algo, key_id, signature):
        raise wire.CodecError(0, "incomplete metadata")
    return CollectionMetadata(collection_name, fmt, algo, files, key_id, signature)


def _decode_file_meta(buf: bytes) -> FileMeta:
    name = None
    count = None
    digests: List[bytes] = []
    root = None
    for elem in wire.decode_tlv_sequence(buf):
        if elem.type == wire.T_META_FILE_NAME:
            name = elem.value.decode("utf-8")
        elif elem.type == wire.T_META_PACKET_COUNT:
            count = int.from_bytes(elem.value, "big")
        elif elem.type == wire.T_SUBNAME:
            inner = wire.decode_tlv_sequence(elem.value)
            digests.append(inner[1].value)
        elif elem.type == wire.T_META_MERKLE_ROOT:
            root = elem.value
    if name is None or count is None:
        raise wire.CodecError(0, "incomplete file metadata")
    return FileMeta(name, count, digests if digests else None, root)


def verify_metadata_signature(md: CollectionMetadata, keystore: Keystore) -> bool:
    return keystore.verify(_metadata_core_bytes(md), md.signature, md.producer_key_id)


def build_metadata(c: Collection, fmt: MetadataFormat, algo: DigestAlgo,
                   signer: Signer) -> Tuple[CollectionMetadata, List[Packet]]:
    """Produce signed metadata and its data packets for a collection.

    The metadata signature covers the canonical encoding (files in
    creation order, subnames in index order), and each metadata data
    packet is additionally signed like any other packet.
    """
    files = []
    for f, plist in zip(c.files, c.packets):
        leaf_digests = [digest(algo, p.payload) for p in plist]
        if fmt is MetadataFormat.DIGEST_LIST:
            files.append(FileMeta(f.name, len(plist), per_packet_digests=leaf_digests))
        else:
            files.append(FileMeta(f.name, len(plist), merkle_root=merkle_root(leaf_digests, algo)))
    md = CollectionMetadata(c.name, fmt, algo, files, signer.key_id, b"")
    md.signature = signer.sign(_metadata_core_bytes(md))
    blob = encode_metadata(md)
    packets = [
        sign_data(c.name.append(METADATA_COMPONENT, str(i)), chunk, signer)
        for i, chunk in enumerate(segment(blob, c.packet_size))
    ]
    return md, packets


def metadata_from_packets(chunks: Sequence[bytes]) -> CollectionMetadata:
    return decode_metadata(b"".join(chunks))


# --- Packet verification ----------------------------------------------------

class Verdict(enum.Enum):
    ACCEPTED = "accepted"
    REJECTED = "rejected"
    DEFERRED = "deferred"


@dataclass(frozen=True)
class VerifyResult:
    verdict: Verdict
    reason: str = ""
    # local indices resolved together with this packet (merkle completion)
    resolved_indices: Tuple[int, ...] = ()


@dataclass
class VerifyContext:
    """Buffers per-file leaf digests until a merkle tree can be checked."""

    pending: Dict[int, Dict[int, bytes]] = field(default_factory=dict)
    verified_files: Dict[int, bool] = field(default_factory=dict)

    def reset_file(self, file_index: int) -> None:
        self.pending.pop(file_index, None)
        self.verified_files.pop(file_index, None)


def verify_packet(md: CollectionMetadata, pkt: Packet,
                  context: Optional[VerifyContext] = None) -> VerifyResult:
    """Check a collection packet's payload against the metadata.

    Digest-list metadata verifies immediately. Merkle metadata defers
    until every leaf of the packet's file is present in ``context``,
    then accepts or rejects them all at once.
    """
    name = pkt.name
    base = len(md.collection_name)
    if not md.collection_name.is_prefix_of(name) or len(name) != base + 2:
        raise UnknownFile(str(name))
    fi = md.file_index(name[base])
    try:
        local = int(name[base + 1])
    except ValueError:
        raise IndexOutOfRange(name[base + 1])
    fm = md.files[fi]
    if not (0 <= local < fm.packet_count):
        raise IndexOutOfRange(local)

    d = digest(md.digest_algo, pkt.payload)
    if md.format is MetadataFormat.DIGEST_LIST:
        if d == fm.per_packet_digests[local]:
            return VerifyResult(Verdict.ACCEPTED)
        return VerifyResult(Verdict.REJECTED, "digest mismatch at packet %d" % local)

    if context is None:
        raise ValueError("merkle verification requires a VerifyContext")
    if context.verified_files.get(fi):
        # tree already proven; a re-received packet must match its recorded leaf
        if context.pending[fi][local] == d:
            return VerifyResult(Verdict.ACCEPTED)
        return VerifyResult(Verdict.REJECTED, "leaf mismatch after verification")
    leaves = context.pending.setdefault(fi, {})
    leaves[local] = d
    if len(leaves) < fm.packet_count:
        return VerifyResult(Verdict.DEFERRED)
    ordered = [leaves[i] for i in range(fm.packet_count)]
    siblings = tuple(i for i in range(fm.packet_count) if i != local)
    if merkle_root(ordered, md.digest_algo) == fm.merkle_root:
        context.verified_files[fi] = True
        return VerifyResult(Verdict.ACCEPTED, resolved_indices=siblings)
    context.reset_file(fi)
    return VerifyResult(Verdict.REJECTED, "merkle root mismatch for file %s" % fm.file_name,
                        resolved_indices=siblings)
