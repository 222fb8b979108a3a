"""Canonical byte and field-element encodings.

Signatures, hash commitments, and model digests must agree bit-for-bit
across parties and protocol phases, so every serialized artifact goes
through the fixed little-endian layouts here.  Formats are versioned by
their magic tags.
"""

from __future__ import annotations

import struct

import numpy as np

from .field import P

RECORD_MAGIC = b"OATHREC1"
MODEL_MAGIC = b"OATHMDL1"


def fe_bytes(elements) -> bytes:
    """Length-prefixed little-endian u64 encoding of field elements."""
    arr = np.asarray([int(x) % P for x in elements], dtype="<u8")
    return struct.pack("<I", arr.shape[0]) + arr.tobytes()


def query_payload(q_fp: np.ndarray, r: int) -> bytes:
    """Bytes signed by the client: the query and the shared coins."""
    return RECORD_MAGIC + b"Q" + fe_bytes(list(q_fp) + [r])


def record_payload(q_fp: np.ndarray, r: int, o: int) -> bytes:
    """Bytes signed by the provider: query, coins, and decision."""
    return RECORD_MAGIC + b"A" + fe_bytes(list(q_fp) + [r, o])


def record_elements(q_fp: np.ndarray, r: int, o: int) -> list[int]:
    """Field-element sequence hashed into the record commitment."""
    return [int(x) % P for x in q_fp] + [int(r) % P, int(o) % P]
