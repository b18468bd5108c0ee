import os
import random

import pytest

from oblivmem.crypto import (
    AuthFailure,
    BadTag,
    BucketHashTree,
    Checkpoint,
    ClientSecret,
    CounterGate,
    CounterMismatch,
    LengthMismatch,
    Oversize,
    ReplayDetected,
    RollbackRecord,
    StaleState,
    accept_request_counter,
    derive_keys,
    make_rollback_record,
    open_block,
    open_checkpoint,
    pack_block_nonce,
    seal_block,
    seal_checkpoint,
    sha256,
    verify_rollback_record,
)


def keys():
    return derive_keys(b"\x07" * 32)


class TestKeyDerivation:
    def test_deterministic(self):
        assert derive_keys(b"\x01" * 32) == derive_keys(b"\x01" * 32)

    def test_distinct_secrets_distinct_keys(self):
        a = derive_keys(os.urandom(32))
        b = derive_keys(os.urandom(32))
        assert a != b

    def test_mac_and_enc_keys_differ(self):
        # Same input key material, different labels: the two derived keys
        # must never collide.
        k = derive_keys(b"\x02" * 32)
        assert k.k_mac[: len(k.k_enc)] != k.k_enc

    def test_secret_must_be_32_bytes(self):
        with pytest.raises(LengthMismatch):
            derive_keys(b"short")

    def test_accepts_client_secret(self):
        s = ClientSecret(b"\x03" * 32, 5)
        assert derive_keys(s) == derive_keys(s.k)


class TestBlockSealing:
    def test_roundtrip(self):
        k = keys()
        nonce = pack_block_nonce(0, 5, 2, 9)
        pt = b"x" * 272
        assert open_block(k, seal_block(k, pt, nonce, 272), nonce) == pt

    def test_fresh_nonce_changes_ciphertext(self):
        k = keys()
        pt = b"y" * 272
        a = seal_block(k, pt, pack_block_nonce(0, 5, 2, 9), 272)
        b = seal_block(k, pt, pack_block_nonce(0, 5, 2, 10), 272)
        assert a != b
        assert len(a) == len(b) == 272 + 16

    def test_bit_flip_detected(self):
        k = keys()
        nonce = pack_block_nonce(1, 0, 0, 1)
        ct = bytearray(seal_block(k, b"z" * 272, nonce, 272))
        ct[10] ^= 0x04
        with pytest.raises(AuthFailure):
            open_block(k, bytes(ct), nonce)

    def test_length_enforced(self):
        with pytest.raises(LengthMismatch):
            seal_block(keys(), b"tiny", pack_block_nonce(0, 0, 0, 0), 272)

    def test_nonce_is_position_unique(self):
        seen = {
            pack_block_nonce(t, b, s, e)
            for t in (0, 1)
            for b in (0, 7)
            for s in (0, 8)
            for e in (0, 1, 2)
        }
        assert len(seen) == 2 * 2 * 2 * 3


class TestRollbackRecord:
    def test_honest_record_verifies(self):
        k = keys()
        rec = make_rollback_record(k, 12, b"\xaa" * 32, b"\xbb" * 32)
        verify_rollback_record(k, rec, 12, b"\xaa" * 32, b"\xbb" * 32)

    def test_root_bit_change_fails(self):
        k = keys()
        rec = make_rollback_record(k, 12, b"\xaa" * 32, b"\xbb" * 32)
        bad = RollbackRecord(rec.ctr, b"\xab" + rec.root_ann[1:], rec.root_data, rec.tag)
        with pytest.raises(BadTag):
            verify_rollback_record(k, bad, 12, bad.root_ann, bad.root_data)

    def test_swapped_roots_fail(self):
        # Canonical encoding distinguishes field positions.
        k = keys()
        rec = make_rollback_record(k, 12, b"\xaa" * 32, b"\xbb" * 32)
        swapped = RollbackRecord(rec.ctr, rec.root_data, rec.root_ann, rec.tag)
        with pytest.raises(BadTag):
            verify_rollback_record(k, swapped, 12, swapped.root_ann, swapped.root_data)

    def test_stale_tree_with_current_record(self):
        k = keys()
        rec = make_rollback_record(k, 12, b"\xaa" * 32, b"\xbb" * 32)
        with pytest.raises(StaleState):
            verify_rollback_record(k, rec, 12, b"\x00" * 32, b"\xbb" * 32)

    def test_replayed_record_counter_mismatch(self):
        # Rollback of record and trees together: the counter check fires.
        k = keys()
        old = make_rollback_record(k, 5, b"\x01" * 32, b"\x02" * 32)
        with pytest.raises(CounterMismatch):
            verify_rollback_record(k, old, 9, b"\x01" * 32, b"\x02" * 32)

    def test_wire_roundtrip_and_offsets(self):
        k = keys()
        rec = make_rollback_record(k, 77, b"\xaa" * 32, b"\xbb" * 32)
        raw = rec.to_bytes()
        assert len(raw) == 110
        assert raw[:4] == b"OBRR"
        assert raw[14:46] == rec.root_ann and raw[46:78] == rec.root_data
        assert RollbackRecord.from_bytes(raw) == rec


class TestCheckpoint:
    def test_roundtrip(self):
        k = keys()
        cp = seal_checkpoint(k, 9, b"client state", pad_size=1024)
        assert open_checkpoint(k, cp) == (9, b"client state")

    def test_ciphertext_length_is_pad_plus_tag(self):
        cp = seal_checkpoint(keys(), 1, b"abc", pad_size=4096)
        assert len(cp.ciphertext) == 4096 + 16

    def test_truncation_detected(self):
        k = keys()
        cp = seal_checkpoint(k, 9, b"client state", pad_size=1024)
        with pytest.raises(AuthFailure):
            open_checkpoint(k, Checkpoint(cp.nonce, cp.ciphertext[:-1]))

    def test_oversize_rejected(self):
        with pytest.raises(Oversize):
            seal_checkpoint(keys(), 1, b"x" * 1024, pad_size=64)

    def test_wire_roundtrip(self):
        cp = seal_checkpoint(keys(), 3, b"s", pad_size=128)
        raw = cp.to_bytes()
        assert raw[:4] == b"OBCP"
        again = Checkpoint.from_bytes(raw)
        assert open_checkpoint(keys(), again) == (3, b"s")


class TestCounter:
    def test_strictly_increasing(self):
        assert accept_request_counter(5, 6) == 6

    def test_equal_rejected(self):
        with pytest.raises(ReplayDetected):
            accept_request_counter(5, 5)

    def test_smaller_rejected(self):
        with pytest.raises(ReplayDetected):
            accept_request_counter(5, 3)

    def test_gate_sequence(self):
        gate = CounterGate()
        for c in (1, 2, 5, 9):
            gate.accept(c)
        with pytest.raises(ReplayDetected):
            gate.accept(9)


class TestBucketHashTree:
    def test_incremental_matches_recompute(self):
        rng = random.Random(1)
        n = 31
        hashes = [sha256(rng.randbytes(64)) for _ in range(n)]
        tree = BucketHashTree(n, list(hashes))
        for _ in range(50):
            i = rng.randrange(n)
            hashes[i] = sha256(rng.randbytes(64))
            tree.update(i, hashes[i])
        assert tree.root == BucketHashTree.root_of(hashes)

    def test_update_many_matches(self):
        rng = random.Random(2)
        n = 15
        hashes = [sha256(bytes([i])) for i in range(n)]
        tree = BucketHashTree(n, list(hashes))
        batch = [(i, sha256(rng.randbytes(16))) for i in (0, 3, 7, 14)]
        for i, h in batch:
            hashes[i] = h
        tree.update_many(batch)
        assert tree.root == BucketHashTree.root_of(hashes)

    def test_any_leaf_changes_root(self):
        hashes = [sha256(bytes([i])) for i in range(7)]
        tree = BucketHashTree(7, list(hashes))
        before = tree.root
        tree.update(6, sha256(b"changed"))
        assert tree.root != before
