"""Canonical byte encoding for ledger records.

The block log and all hashes are defined over this encoding, so it is
normative: length-prefixed variable fields, fixed-width big-endian
integers, and JSON documents with sorted keys. Two implementations that
follow these rules produce byte-identical block logs for the same run.

Layout summary:
    u32 / u64      big-endian fixed width
    bytes          u32 length + payload
    str            bytes of the UTF-8 encoding
    list           u32 count + elements
    transaction    tx_id, creator(org_id, member_id, role), channel,
                   chaincode, function, submit_time u64, args,
                   read_set [(key, version u64)], write_set [(key, bytes)]
    block          number u64, prev_hash 32 raw, cut_time u64,
                   tx list (length-prefixed encoded transactions),
                   hash 32 raw
    block hash     sha256(number u64 | prev_hash | u32 n | tx_id*)
                   -- the hash covers ordering, not payloads; payload
                   integrity is checked by replay.
"""

from __future__ import annotations

import hashlib
import json
import struct


class DecodeError(ValueError):
    """Raised when a canonical record does not parse cleanly."""


ZERO_HASH = b"\x00" * 32


def canonical_json(doc) -> bytes:
    """Serialize a JSON-like document with sorted keys, no whitespace."""
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")


def parse_json(raw: bytes):
    return json.loads(raw.decode("utf-8"))


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def enc_u32(n: int) -> bytes:
    return struct.pack(">I", n)


def enc_u64(n: int) -> bytes:
    return struct.pack(">Q", n)


def enc_bytes(b: bytes) -> bytes:
    return struct.pack(">I", len(b)) + b


def enc_str(s: str) -> bytes:
    return enc_bytes(s.encode("utf-8"))


class Reader:
    """Sequential decoder over one canonical record."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def _take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise DecodeError(f"truncated record at offset {self.pos}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack(">I", self._take(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self._take(8))[0]

    def raw(self, n: int) -> bytes:
        return self._take(n)

    def bytes_(self) -> bytes:
        return self._take(self.u32())

    def str_(self) -> str:
        try:
            return self.bytes_().decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DecodeError(f"invalid UTF-8 at offset {self.pos}") from exc

    def done(self) -> None:
        if self.pos != len(self.data):
            raise DecodeError(f"{len(self.data) - self.pos} trailing bytes")


def block_hash(number: int, prev_hash: bytes, tx_ids) -> bytes:
    """Digest binding a block into the chain: number, parent, tx order."""
    h = hashlib.sha256()
    h.update(enc_u64(number))
    h.update(prev_hash)
    h.update(enc_u32(len(tx_ids)))
    for tx_id in tx_ids:
        h.update(enc_str(tx_id))
    return h.digest()


def encode_transaction(tx) -> bytes:
    parts = [
        enc_str(tx.tx_id),
        enc_str(tx.creator.org_id),
        enc_str(tx.creator.member_id),
        enc_str(tx.creator.role),
        enc_str(tx.channel),
        enc_str(tx.chaincode),
        enc_str(tx.function),
        enc_u64(tx.submit_time),
        enc_u32(len(tx.args)),
    ]
    for a in tx.args:
        parts.append(enc_str(a))
    parts.append(enc_u32(len(tx.read_set)))
    for key, version in tx.read_set:
        parts.append(enc_str(key))
        parts.append(enc_u64(version))
    parts.append(enc_u32(len(tx.write_set)))
    for key, value in tx.write_set:
        parts.append(enc_str(key))
        parts.append(enc_bytes(value))
    return b"".join(parts)


def decode_transaction(r: Reader):
    # local import avoids a module cycle; ledger types are plain dataclasses
    from .ledger import Identity, Transaction

    tx_id = r.str_()
    creator = Identity(org_id=r.str_(), member_id=r.str_(), role=r.str_())
    channel = r.str_()
    chaincode = r.str_()
    function = r.str_()
    submit_time = r.u64()
    args = [r.str_() for _ in range(r.u32())]
    read_set = [(r.str_(), r.u64()) for _ in range(r.u32())]
    write_set = [(r.str_(), r.bytes_()) for _ in range(r.u32())]
    return Transaction(
        tx_id=tx_id,
        creator=creator,
        channel=channel,
        chaincode=chaincode,
        function=function,
        args=args,
        submit_time=submit_time,
        read_set=read_set,
        write_set=write_set,
    )


def encode_block(block) -> bytes:
    parts = [
        enc_u64(block.number),
        block.prev_hash,
        enc_u64(block.cut_time),
        enc_u32(len(block.tx_list)),
    ]
    for tx in block.tx_list:
        parts.append(enc_bytes(encode_transaction(tx)))
    parts.append(block.hash)
    return b"".join(parts)


def decode_block(data: bytes):
    from .ledger import Block

    r = Reader(data)
    number = r.u64()
    prev_hash = r.raw(32)
    cut_time = r.u64()
    n = r.u32()
    txs = []
    for _ in range(n):
        body = Reader(r.bytes_())
        tx = decode_transaction(body)
        body.done()
        txs.append(tx)
    digest = r.raw(32)
    r.done()
    return Block(number=number, prev_hash=prev_hash, tx_list=txs, cut_time=cut_time, hash=digest)


def serialize_state(state: dict) -> bytes:
    """Canonical bytes of a world-state map, for byte-for-byte comparison."""
    parts = [enc_u32(len(state))]
    for key in sorted(state):
        value, version = state[key]
        parts.append(enc_str(key))
        parts.append(enc_bytes(value))
        parts.append(enc_u64(version))
    return b"".join(parts)
