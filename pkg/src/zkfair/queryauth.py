"""Authenticated query answering between client, provider, and an offline
verifier store.

One query runs: a commit-reveal coin flip for the public randomness r, the
client's signature over (q, r), the provider's decision and signature over
(q, r, o), and the client's hash commitment H(q, r, o) appended to the
verifier's store.  Versus a bare q -> o exchange the overhead is constant:
two signatures, two verifications, one hash, and the one extra round for
the coins.  The verifier stays offline; the store is an append-only file
it reads later.

Signatures are Ed25519 over the canonical byte payloads from `encoding`;
any EUF-CMA scheme satisfying the Signer interface plugs in.  Commitments
use the algebraic hash end-to-end so the audit can reopen them in-circuit.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from . import mimc
from .encoding import query_payload, record_payload, record_elements
from .errors import ProtocolError
from .field import P
from .models import ThresholdedModel


class QueryAbort(ProtocolError):
    """A party aborted the query protocol; `blamed` names the culprit."""

    def __init__(self, message: str, blamed: str):
        super().__init__(message)
        self.blamed = blamed


# ----- signatures --------------------------------------------------------------

class Signer:
    """Ed25519 signer with a deterministic seed-derived key."""

    def __init__(self, seed: bytes):
        if len(seed) != 32:
            raise ProtocolError("signing seed must be 32 bytes")
        self._key = Ed25519PrivateKey.from_private_bytes(seed)
        self.public_bytes = self._key.public_key().public_bytes_raw()

    def sign(self, payload: bytes) -> bytes:
        return self._key.sign(payload)


def verify_sig(public_bytes: bytes, payload: bytes, signature: bytes) -> bool:
    try:
        Ed25519PublicKey.from_public_bytes(public_bytes).verify(signature, payload)
        return True
    except InvalidSignature:
        return False


def signer_from_label(master_seed: bytes, label: str) -> Signer:
    return Signer(hashlib.blake2b(master_seed + label.encode(),
                                  digest_size=32).digest())


# ----- commit-reveal coin flip ---------------------------------------------------

def coin_commitment(seed: int, nonce: bytes) -> bytes:
    return hashlib.blake2b(int(seed).to_bytes(8, "little") + nonce,
                           digest_size=32).digest()


def coin_flip(x_seed: int, x_nonce: bytes, y_seed: int, n_elements: int,
              x_opened_seed: int | None = None) -> np.ndarray:
    """Two-party fair coins.

    x commits to its seed, y reveals its own, x opens; the output is the
    hash-PRG over the xor-combined seeds.  A mismatched opening aborts
    with the blame on x.  `x_opened_seed` exists so tests can model a
    cheating x.
    """
    commitment = coin_commitment(x_seed, x_nonce)
    opened = x_seed if x_opened_seed is None else x_opened_seed
    if coin_commitment(opened, x_nonce) != commitment:
        raise QueryAbort("coin-flip opening does not match commitment", blamed="x")
    combined = (int(opened) ^ int(y_seed)) % P
    return mimc.prg_stream(combined, n_elements)


# ----- records and stores ---------------------------------------------------------

@dataclass
class QueryRecord:
    """Provider-retained record of one answered query."""

    index: int
    q_fp: np.ndarray          # int64 fixed-point features
    r: int
    o: int
    sig_p: bytes              # client's signature over (q, r)
    sig_c: bytes              # provider's signature over (q, r, o)
    client_id: str
    commitment: int

    def elements(self) -> list[int]:
        return record_elements(self.q_fp, self.r, self.o)


@dataclass
class ClientRecord:
    """Client-retained record: the signed answer it can open for blame."""

    index: int
    q_fp: np.ndarray
    r: int
    o: int
    sig_c: bytes


class CommitmentStore:
    """Append-only commitment list owned by the verifier role."""

    def __init__(self):
        self.entries: list[tuple[int, int, str]] = []

    def append(self, commitment: int, client_id: str) -> int:
        idx = len(self.entries)
        self.entries.append((idx, int(commitment), client_id))
        return idx

    def __len__(self):
        return len(self.entries)

    def commitment(self, index: int) -> int:
        entry = self.entries[index]
        assert entry[0] == index
        return entry[1]

    def dump_jsonl(self, path):
        with open(path, "w") as fh:
            for idx, c, cid in self.entries:
                fh.write(json.dumps({"index": idx, "commitment": f"{c:016x}",
                                     "client_id": cid}, sort_keys=True) + "\n")

    @staticmethod
    def load_jsonl(path) -> "CommitmentStore":
        store = CommitmentStore()
        with open(path) as fh:
            for line in fh:
                rec = json.loads(line)
                if rec["index"] != len(store.entries):
                    raise ProtocolError("commitment store indices not dense")
                store.entries.append((rec["index"], int(rec["commitment"], 16),
                                      rec["client_id"]))
        return store


# ----- parties --------------------------------------------------------------------

@dataclass
class Client:
    client_id: str
    signer: Signer
    coin_seed: int
    records: list[ClientRecord] = field(default_factory=list)

    def coin_for(self, index: int) -> int:
        return int(mimc.prg_stream(self.coin_seed, 1, start=index)[0])


@dataclass
class Provider:
    model: ThresholdedModel
    signer: Signer
    coin_seed: int
    sensitive_index: int
    certified_digest: int | None = None
    log: list[QueryRecord] = field(default_factory=list)
    inference_hook: "object | None" = None  # fn(q_fp, r, honest_o, index) -> o

    def group_of(self, q_fp: np.ndarray) -> int:
        return int(q_fp[self.sensitive_index]) >> self.model.qmodel.fpc.fractional_bits

    def decide(self, q_fp: np.ndarray, r: int, index: int) -> int:
        group = self.group_of(q_fp)
        honest = int(self.model.predict_fp_batch(
            q_fp.reshape(1, -1), np.array([group]), r=r)[0])
        if self.inference_hook is not None:
            return int(self.inference_hook(q_fp, r, honest, index))
        return honest


def answer_query(client: Client, provider: Provider, store: CommitmentStore,
                 q_fp: np.ndarray) -> int:
    """One authenticated query exchange; returns the decision o."""
    if provider.certified_digest is None:
        raise ProtocolError("provider has no certified model digest")
    index = len(provider.log)
    # coins: client commits, provider reveals, client opens
    nonce = hashlib.blake2b(f"{client.client_id}:{index}".encode(),
                            digest_size=16).digest()
    r = int(coin_flip(client.coin_for(index), nonce,
                      int(mimc.prg_stream(provider.coin_seed, 1, start=index)[0]),
                      1)[0])
    sig_p = client.signer.sign(query_payload(q_fp, r))
    if not verify_sig(client.signer.public_bytes, query_payload(q_fp, r), sig_p):
        raise QueryAbort("client query signature invalid", blamed="client")
    o = provider.decide(q_fp, r, index)
    sig_c = provider.signer.sign(record_payload(q_fp, r, o))
    if not verify_sig(provider.signer.public_bytes, record_payload(q_fp, r, o),
                      sig_c):
        raise QueryAbort("provider answer signature invalid", blamed="provider")
    commitment = mimc.hash_elements(record_elements(q_fp, r, o))
    store.append(commitment, client.client_id)
    provider.log.append(QueryRecord(index=index, q_fp=q_fp.copy(), r=r, o=o,
                                    sig_p=sig_p, sig_c=sig_c,
                                    client_id=client.client_id,
                                    commitment=commitment))
    client.records.append(ClientRecord(index=index, q_fp=q_fp.copy(), r=r, o=o,
                                       sig_c=sig_c))
    return o


# ----- blame attestation -------------------------------------------------------------

def blame_attestation(provider_record: QueryRecord, client_record: ClientRecord,
                      stored_commitment: int, client_pub: bytes,
                      provider_pub: bytes) -> str | None:
    """Decide who falsified a disputed record.

    The client's retained tuple is checked against the provider's
    signature and the deposited commitment; if the client's material is
    self-consistent, any divergence in the provider's audit input blames
    the provider.  Returns None when both sides agree with the commitment
    (an audit-layer inconsistency, not a party's lie).
    """
    c_tuple_ok = verify_sig(
        provider_pub,
        record_payload(client_record.q_fp, client_record.r, client_record.o),
        client_record.sig_c)
    c_store_ok = (mimc.hash_elements(record_elements(
        client_record.q_fp, client_record.r, client_record.o))
        == stored_commitment)
    if c_tuple_ok and c_store_ok:
        same = ((provider_record.q_fp == client_record.q_fp).all()
                and provider_record.r == client_record.r
                and provider_record.o == client_record.o)
        return None if same else "provider"
    return "client"


# ----- binary provider log ------------------------------------------------------------

def dump_provider_log(records: list[QueryRecord], path):
    with open(path, "wb") as fh:
        fh.write(b"OATHLOG1")
        fh.write(len(records).to_bytes(4, "little"))
        for rec in records:
            payload = record_payload(rec.q_fp, rec.r, rec.o)
            cid = rec.client_id.encode()
            for blob in (payload, rec.sig_p, rec.sig_c, cid):
                fh.write(len(blob).to_bytes(4, "little"))
                fh.write(blob)
            fh.write(int(rec.commitment).to_bytes(8, "little"))


def load_provider_log(path) -> list[QueryRecord]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != b"OATHLOG1":
        raise ProtocolError("bad provider log magic")
    try:
        off = 8
        count = int.from_bytes(data[off:off + 4], "little")
        off += 4
        records = []
        for idx in range(count):
            blobs = []
            for _ in range(4):
                ln = int.from_bytes(data[off:off + 4], "little")
                off += 4
                if off + ln > len(data):
                    raise ValueError("truncated record")
                blobs.append(data[off:off + ln])
                off += ln
            commitment = int.from_bytes(data[off:off + 8], "little")
            off += 8
            payload, sig_p, sig_c, cid = blobs
            n_elems = int.from_bytes(payload[9:13], "little")
            elems = np.frombuffer(payload, dtype="<u8", count=n_elems, offset=13)
            q_fp = elems[:-2].astype(np.int64)
            q_fp = np.where(q_fp > P // 2, q_fp - P, q_fp)
            records.append(QueryRecord(
                index=idx, q_fp=q_fp, r=int(elems[-2]), o=int(elems[-1]),
                sig_p=sig_p, sig_c=sig_c, client_id=cid.decode(),
                commitment=commitment))
        if off != len(data):
            raise ValueError("trailing bytes")
    except (ValueError, IndexError, UnicodeDecodeError) as exc:
        raise ProtocolError(f"corrupt provider log: {exc}") from exc
    return records
