"""Key derivation, block/checkpoint sealing, bucket-hash trees, rollback
records, and the monotone request counter.

Primitives: HKDF-SHA256 (extract-then-expand) for key derivation,
AES-128-GCM with 96-bit deterministic position nonces for all sealing,
HMAC-SHA256 for rollback-record tags, SHA-256 for bucket/trees hashes.

Rollback record wire layout (fixed offsets, big-endian):

    0   magic  "OBRR"
    4   version u16
    6   ctr     u64
    14  root_ann  32 bytes
    46  root_data 32 bytes
    78  tag       32 bytes   (HMAC over bytes 0..78)
    110 end

Checkpoint wire layout:

    0   magic  "OBCP"
    4   version u16
    6   nonce   12 bytes
    18  ciphertext  pad_size + 16 bytes (AEAD of ctr u64 | state_len u64 |
        state | zero padding, padded to exactly pad_size before sealing)
"""

from __future__ import annotations

import hashlib
import hmac as _hmac
import os
import struct
from dataclasses import dataclass

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

RECORD_MAGIC = b"OBRR"
CHECKPOINT_MAGIC = b"OBCP"
CRYPTO_VERSION = 1
NONCE_LEN = 12
TAG_LEN = 16
DEFAULT_CHECKPOINT_PAD = 1 << 20  # 1 MiB desk default; production uses 64 MiB

_MAC_LABEL = b"oblivmem/mac-key/v1"
_ENC_LABEL = b"oblivmem/enc-key/v1"
_RECORD_DOMAIN = b"oblivmem/rollback-record/v1"
_CHECKPOINT_AAD = b"oblivmem/checkpoint/v1"


class CryptoError(Exception):
    pass


class LengthMismatch(CryptoError):
    pass


class AuthFailure(CryptoError):
    pass


class BadTag(CryptoError):
    pass


class CounterMismatch(CryptoError):
    pass


class StaleState(CryptoError):
    pass


class Oversize(CryptoError):
    pass


class ReplayDetected(CryptoError):
    pass


@dataclass(frozen=True)
class ClientSecret:
    k: bytes
    ctr: int = 0

    @staticmethod
    def generate() -> "ClientSecret":
        return ClientSecret(os.urandom(32), 0)


@dataclass(frozen=True)
class DerivedKeys:
    k_mac: bytes  # 32 bytes, HMAC-SHA256
    k_enc: bytes  # 16 bytes, AES-128-GCM


def derive_keys(k: bytes | ClientSecret) -> DerivedKeys:
    if isinstance(k, ClientSecret):
        k = k.k
    if len(k) != 32:
        raise LengthMismatch("client secret must be 32 bytes")

    def expand(label: bytes, length: int) -> bytes:
        return HKDF(
            algorithm=hashes.SHA256(), length=length, salt=b"", info=label
        ).derive(k)

    return DerivedKeys(k_mac=expand(_MAC_LABEL, 32), k_enc=expand(_ENC_LABEL, 16))


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def pack_block_nonce(tree_code: int, bucket: int, slot: int, epoch: int) -> bytes:
    """96-bit nonce from the block's physical position and write epoch.

    Each (bucket, slot) pair is written at most once per epoch, so the
    nonce is never reused under one key.
    """
    return struct.pack(">BIB", tree_code, bucket, slot) + epoch.to_bytes(6, "big")


def seal_block(keys: DerivedKeys, plaintext: bytes, nonce: bytes, block_size: int) -> bytes:
    if len(plaintext) != block_size:
        raise LengthMismatch(f"plaintext is {len(plaintext)} bytes, expected {block_size}")
    if len(nonce) != NONCE_LEN:
        raise LengthMismatch("nonce must be 12 bytes")
    return AESGCM(keys.k_enc).encrypt(nonce, plaintext, None)


def open_block(keys: DerivedKeys, ciphertext: bytes, nonce: bytes) -> bytes:
    try:
        return AESGCM(keys.k_enc).decrypt(nonce, ciphertext, None)
    except InvalidTag as e:
        raise AuthFailure("block authentication failed") from e


class BucketHashTree:
    """SHA-256 digests of every bucket, folded into a single root.

    node_hash(i) = H(bucket_hash(i) || node_hash(2i+1) || node_hash(2i+2)),
    missing children contribute empty strings.  The combined hashes are
    maintained incrementally; recompute-from-scratch is the test oracle.
    """

    def __init__(self, num_buckets: int, bucket_hashes: list[bytes] | None = None):
        self.n = num_buckets
        self.bucket_hashes: list[bytes] = bucket_hashes or [b"\0" * 32] * num_buckets
        self.nodes: list[bytes] = [b""] * num_buckets
        self._build()

    def _combine(self, i: int) -> bytes:
        left = self.nodes[2 * i + 1] if 2 * i + 1 < self.n else b""
        right = self.nodes[2 * i + 2] if 2 * i + 2 < self.n else b""
        return sha256(self.bucket_hashes[i] + left + right)

    def _build(self) -> None:
        for i in range(self.n - 1, -1, -1):
            self.nodes[i] = self._combine(i)

    def update(self, i: int, bucket_hash: bytes) -> None:
        self.bucket_hashes[i] = bucket_hash
        while True:
            self.nodes[i] = self._combine(i)
            if i == 0:
                return
            i = (i - 1) >> 1

    def update_many(self, items) -> None:
        touched = set()
        for i, h in items:
            self.bucket_hashes[i] = h
            touched.add(i)
        # Recompute every ancestor of the touched set, deepest first.
        pending = set(touched)
        for i in touched:
            j = i
            while j != 0:
                j = (j - 1) >> 1
                pending.add(j)
        for i in sorted(pending, reverse=True):
            self.nodes[i] = self._combine(i)

    @property
    def root(self) -> bytes:
        return self.nodes[0]

    @staticmethod
    def root_of(bucket_hashes: list[bytes]) -> bytes:
        return BucketHashTree(len(bucket_hashes), list(bucket_hashes)).root


@dataclass(frozen=True)
class RollbackRecord:
    ctr: int
    root_ann: bytes
    root_data: bytes
    tag: bytes

    def to_bytes(self) -> bytes:
        return (
            RECORD_MAGIC
            + struct.pack(">HQ", CRYPTO_VERSION, self.ctr)
            + self.root_ann
            + self.root_data
            + self.tag
        )

    @staticmethod
    def from_bytes(raw: bytes) -> "RollbackRecord":
        if len(raw) != 110 or raw[:4] != RECORD_MAGIC:
            raise BadTag("malformed rollback record")
        version, ctr = struct.unpack(">HQ", raw[4:14])
        if version != CRYPTO_VERSION:
            raise BadTag(f"unsupported record version {version}")
        return RollbackRecord(ctr, raw[14:46], raw[46:78], raw[78:110])


def _record_mac(keys: DerivedKeys, ctr: int, root_ann: bytes, root_data: bytes) -> bytes:
    # Canonical encoding: domain label, fixed order, fixed-width integers.
    msg = _RECORD_DOMAIN + struct.pack(">Q", ctr) + root_ann + root_data
    return _hmac.new(keys.k_mac, msg, hashlib.sha256).digest()


def make_rollback_record(
    keys: DerivedKeys, ctr: int, root_ann: bytes, root_data: bytes
) -> RollbackRecord:
    if len(root_ann) != 32 or len(root_data) != 32:
        raise LengthMismatch("roots must be 32 bytes")
    return RollbackRecord(ctr, root_ann, root_data, _record_mac(keys, ctr, root_ann, root_data))


def verify_rollback_record(
    keys: DerivedKeys,
    record: RollbackRecord,
    observed_ctr: int,
    observed_root_ann: bytes,
    observed_root_data: bytes,
) -> None:
    """Accept iff the tag is valid, the counter is current, and both roots match.

    Raises BadTag / CounterMismatch / StaleState; each aborts the request.
    """
    expect = _record_mac(keys, record.ctr, record.root_ann, record.root_data)
    if not _hmac.compare_digest(expect, record.tag):
        raise BadTag("rollback record tag invalid")
    if record.ctr != observed_ctr:
        raise CounterMismatch(
            f"record counter {record.ctr} != current counter {observed_ctr}"
        )
    if record.root_ann != observed_root_ann or record.root_data != observed_root_data:
        raise StaleState("storage roots do not match the rollback record")


@dataclass(frozen=True)
class Checkpoint:
    nonce: bytes
    ciphertext: bytes

    def to_bytes(self) -> bytes:
        return CHECKPOINT_MAGIC + struct.pack(">H", CRYPTO_VERSION) + self.nonce + self.ciphertext

    @staticmethod
    def from_bytes(raw: bytes) -> "Checkpoint":
        if len(raw) < 18 or raw[:4] != CHECKPOINT_MAGIC:
            raise AuthFailure("malformed checkpoint")
        return Checkpoint(raw[6:18], raw[18:])


def seal_checkpoint(
    keys: DerivedKeys, ctr: int, client_state: bytes, pad_size: int = DEFAULT_CHECKPOINT_PAD
) -> Checkpoint:
    """AEAD-seal (ctr, client_state) padded to exactly pad_size bytes."""
    body = struct.pack(">QQ", ctr, len(client_state)) + client_state
    if len(body) > pad_size:
        raise Oversize(
            f"client state needs {len(body)} bytes, checkpoint pad is {pad_size}"
        )
    body = body.ljust(pad_size, b"\0")
    nonce = os.urandom(NONCE_LEN)
    ct = AESGCM(keys.k_enc).encrypt(nonce, body, _CHECKPOINT_AAD)
    return Checkpoint(nonce, ct)


def open_checkpoint(keys: DerivedKeys, cp: Checkpoint) -> tuple[int, bytes]:
    try:
        body = AESGCM(keys.k_enc).decrypt(cp.nonce, cp.ciphertext, _CHECKPOINT_AAD)
    except InvalidTag as e:
        raise AuthFailure("checkpoint authentication failed") from e
    ctr, length = struct.unpack(">QQ", body[:16])
    if 16 + length > len(body):
        raise AuthFailure("checkpoint length field out of range")
    return ctr, body[16 : 16 + length]


def accept_request_counter(last_accepted: int, incoming: int) -> int:
    """Monotone counter check: accept iff incoming > last_accepted."""
    if incoming <= last_accepted:
        raise ReplayDetected(
            f"counter {incoming} not strictly larger than last accepted {last_accepted}"
        )
    return incoming


class CounterGate:
    """Stateful wrapper enforcing strictly increasing request counters."""

    def __init__(self, last_accepted: int = 0):
        self.last_accepted = last_accepted

    def accept(self, incoming: int) -> None:
        self.last_accepted = accept_request_counter(self.last_accepted, incoming)
