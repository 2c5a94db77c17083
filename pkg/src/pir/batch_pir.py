"""
t-private, l-server information-theoretic batch PIR over GF(2^8).

Each requested row index i becomes the standard basis vector e_i, and every
coordinate is Shamir-shared across the servers (server j sits at point j).
A server multiplies its q x r share matrix by the database D (r x s); the
client interpolates any t+1 responses at zero to recover the q rows.
"""
from __future__ import annotations

import itertools
import logging
import struct
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..core.errors import DecodeError, InsufficientSharesError, PIRError, ParameterError
from ..crypto.field import FieldElement, MUL_TABLE, gf_matmul, gf_poly_eval
from ..crypto.shamir import lagrange_coeffs

logger = logging.getLogger(__name__)

WIRE_VERSION = 0x01
_HEADER = struct.Struct(">BHII")
HEADER_BYTES = _HEADER.size


@dataclass(frozen=True)
class PIRQueryBatch:
    """q hidden row indices and the per-server share matrices"""
    indices: Tuple[int, ...]
    r: int
    servers: int
    t: int
    payloads: Dict[int, np.ndarray]

    @property
    def q(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class PIRResponse:
    point: int
    matrix: np.ndarray


@dataclass
class ServerWork:
    """Field operations and database row reads performed by one server"""
    mul: int = 0
    add: int = 0
    row_reads: int = 0

    def total(self, s: int) -> int:
        return self.mul + self.add + self.row_reads * s


def build_query_batch(indices: Sequence[int], r: int, servers: int, t: int,
                      rng: np.random.Generator) -> PIRQueryBatch:
    """
    Share the basis vectors of `indices` among `servers` servers.

    Raises:
        ParameterError: index out of range, fewer than t+1 servers, or fewer than 2
    """
    if servers < 2 or servers >= 256:
        raise ParameterError(f"need 2 <= servers < 256, got {servers}")
    if t < 0 or servers < t + 1:
        raise ParameterError(f"need servers >= t+1, got servers={servers}, t={t}")
    indices = tuple(int(i) for i in indices)
    if not indices or len(indices) > 0xFFFF:
        raise ParameterError(f"batch size must be in 1..65535, got {len(indices)}")
    bad = [i for i in indices if not 0 <= i < r]
    if bad:
        raise ParameterError(f"row indices out of range 0..{r - 1}: {bad}")
    q = len(indices)
    coeffs = np.zeros((t + 1, q, r), dtype=np.uint8)
    coeffs[0, np.arange(q), list(indices)] = 1
    if t > 0:
        coeffs[1:] = rng.integers(0, 256, size=(t, q, r), dtype=np.uint8)
    payloads = {j: gf_poly_eval(coeffs, j) for j in range(1, servers + 1)}
    return PIRQueryBatch(indices, r, servers, t, payloads)


def server_process(payload: np.ndarray, database: np.ndarray,
                   work: Optional[ServerWork] = None) -> np.ndarray:
    """
    Response = payload x D over GF(2^8).

    Raises:
        PIRError: dimension mismatch
    """
    payload = np.asarray(payload, dtype=np.uint8)
    if payload.ndim != 2 or database.ndim != 2 or payload.shape[1] != database.shape[0]:
        raise PIRError(f"payload shape {payload.shape} does not match database {database.shape}")
    if work is not None:
        q, r = payload.shape
        s = database.shape[1]
        work.mul += q * r * s
        work.add += q * r * s
        # blocked product streams each database row once per batch
        work.row_reads += r
    return gf_matmul(payload, database)


def reconstruct_records(responses: Sequence[PIRResponse], t: int) -> np.ndarray:
    """
    Interpolate t+1 responses at zero.

    Raises:
        InsufficientSharesError: fewer than t+1 responses
        PIRError: responses of different shapes
    """
    if len(responses) < t + 1:
        raise InsufficientSharesError(f"need {t + 1} PIR responses, got {len(responses)}")
    used = sorted(responses, key=lambda resp: resp.point)[: t + 1]
    shapes = {resp.matrix.shape for resp in used}
    if len(shapes) != 1:
        raise PIRError(f"inconsistent response dimensions: {sorted(shapes)}")
    lambdas = lagrange_coeffs([FieldElement.gf256(resp.point) for resp in used])
    out = np.zeros(used[0].matrix.shape, dtype=np.uint8)
    for lam, resp in zip(lambdas, used):
        out ^= MUL_TABLE[lam.value][resp.matrix]
    return out


def reconstruct_verified_records(responses: Sequence[PIRResponse], t: int,
                                 verify: Callable[[np.ndarray], bool]) -> Tuple[np.ndarray, Tuple[int, ...]]:
    """
    Try (t+1)-subsets of responses until the records pass `verify`.

    Returns:
        records and the server points that produced them

    Raises:
        PIRError: no subset yields verifiable records
    """
    ordered = sorted(responses, key=lambda resp: resp.point)
    for subset in itertools.combinations(ordered, t + 1):
        try:
            records = reconstruct_records(subset, t)
        except PIRError:
            continue
        if verify(records):
            return records, tuple(resp.point for resp in subset)
    raise PIRError("no subset of PIR responses reconstructs verifiable records")


# Wire format: version u8, q u16, r u32, s u32, row-major payload

def encode_payload(matrix: np.ndarray, r: int, s: int) -> bytes:
    q = matrix.shape[0]
    return _HEADER.pack(WIRE_VERSION, q, r, s) + np.ascontiguousarray(matrix, dtype=np.uint8).tobytes()


def decode_payload(data: bytes, columns: str) -> Tuple[np.ndarray, int, int]:
    """
    Decode a query (columns='r') or response (columns='s').

    Raises:
        DecodeError: bad version or payload length
    """
    if len(data) < HEADER_BYTES:
        raise DecodeError("PIR message shorter than its header")
    version, q, r, s = _HEADER.unpack_from(data)
    if version != WIRE_VERSION:
        raise DecodeError(f"unknown PIR wire version {version}")
    width = r if columns == "r" else s
    body = data[HEADER_BYTES:]
    if len(body) != q * width:
        raise DecodeError(f"PIR payload is {len(body)} bytes, expected {q * width}")
    return np.frombuffer(body, dtype=np.uint8).reshape(q, width).copy(), r, s


@dataclass
class CommunicationCounter:
    """Field elements and wire bytes exchanged with one server"""
    elements_up: int = 0
    elements_down: int = 0
    bytes_up: int = 0
    bytes_down: int = 0


class PIRServer:
    """DB side: stateless query processing over its replica matrix"""

    def __init__(self, point: int, database: np.ndarray):
        self.point = point
        self.database = database
        self.work = ServerWork()
        self.observed: List[np.ndarray] = []

    def handle(self, message: bytes) -> bytes:
        payload, r, s = decode_payload(message, "r")
        if r != self.database.shape[0] or s != self.database.shape[1]:
            raise PIRError(f"query for a {r}x{s} database sent to a {self.database.shape} replica")
        self.observed.append(payload)
        response = server_process(payload, self.database, self.work)
        return encode_payload(response, r, s)


@dataclass
class PIRClient:
    """Leader side: builds batches, tracks communication, reconstructs"""
    servers: int
    t: int
    r: int
    s: int
    rng: np.random.Generator
    counters: Dict[int, CommunicationCounter] = field(default_factory=dict)

    def queries(self, indices: Sequence[int]) -> Tuple[PIRQueryBatch, Dict[int, bytes]]:
        batch = build_query_batch(indices, self.r, self.servers, self.t, self.rng)
        messages = {}
        for point, payload in batch.payloads.items():
            messages[point] = encode_payload(payload, self.r, self.s)
            counter = self.counters.setdefault(point, CommunicationCounter())
            counter.elements_up += payload.size
            counter.bytes_up += len(messages[point])
        return batch, messages

    def receive(self, point: int, message: bytes) -> PIRResponse:
        matrix, _, _ = decode_payload(message, "s")
        counter = self.counters.setdefault(point, CommunicationCounter())
        counter.elements_down += matrix.size
        counter.bytes_down += len(message)
        return PIRResponse(point, matrix)

    def retrieve(self, responses: Sequence[PIRResponse],
                 verify: Optional[Callable[[np.ndarray], bool]] = None) -> np.ndarray:
        if verify is None:
            return reconstruct_records(responses, self.t)
        records, points = reconstruct_verified_records(responses, self.t, verify)
        logger.debug(f"PIR records reconstructed from servers {points}")
        return records
