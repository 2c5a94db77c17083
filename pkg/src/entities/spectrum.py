"""
Spectrum database model: the N x N grid, fixed-width signed records and the
r x b replica matrix every DB serves PIR queries from.
"""
from __future__ import annotations

import json
import logging
import random
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from ..core.errors import DecodeError, ParameterError
from ..core.utilities import sha256_hex
from ..crypto.bls import RECORD_DST, BlsKeyPair, batch_verify_same_key, bls_verify
from ..crypto.curve import G1_BYTES
from ..ledger.contract import UsageEntry, UsageRules

logger = logging.getLogger(__name__)

RECORD_VERSION = 0x01
# version, cell, channel, max power, duration | rules | usage epoch, active, power mW | blocked epoch
_BODY = struct.Struct(">BIHhI" "HhI" "IHI" "I")
BODY_BYTES = _BODY.size
MIN_RECORD_BYTES = BODY_BYTES + G1_BYTES


@dataclass(frozen=True)
class Grid:
    """N x N cells, ids 0..N^2-1 in row-major order"""
    n: int

    def __post_init__(self):
        if self.n <= 0:
            raise ParameterError(f"grid side must be positive, got {self.n}")

    @property
    def cells(self) -> int:
        return self.n * self.n

    def coords(self, cell: int) -> Tuple[int, int]:
        if not 0 <= cell < self.cells:
            raise ParameterError(f"cell {cell} outside a {self.n}x{self.n} grid")
        return divmod(cell, self.n)

    def cell_id(self, row: int, col: int) -> int:
        if not (0 <= row < self.n and 0 <= col < self.n):
            raise ParameterError(f"({row},{col}) outside a {self.n}x{self.n} grid")
        return row * self.n + col

    def distance(self, a: int, b: int) -> int:
        """Chebyshev distance in cells"""
        ra, ca = self.coords(a)
        rb, cb = self.coords(b)
        return max(abs(ra - rb), abs(ca - cb))


@dataclass(frozen=True)
class DbLayout:
    grid: Grid
    channels: int
    record_bytes: int = 128

    def __post_init__(self):
        if self.channels <= 0 or self.channels > 0xFFFF:
            raise ParameterError(f"channels must be in 1..65535, got {self.channels}")
        if self.record_bytes < MIN_RECORD_BYTES:
            raise ParameterError(f"record width {self.record_bytes} < {MIN_RECORD_BYTES} bytes")

    @property
    def r(self) -> int:
        return self.grid.cells * self.channels

    @property
    def b(self) -> int:
        return self.record_bytes

    @property
    def eta(self) -> int:
        """Database size in bytes"""
        return self.r * self.b

    def cell_channel(self, index: int) -> Tuple[int, int]:
        if not 0 <= index < self.r:
            raise ParameterError(f"row {index} outside 0..{self.r - 1}")
        return divmod(index, self.channels)

    def rows_for_cells(self, cells: Iterable[int]) -> List[int]:
        return [record_index(c, ch, self) for c in sorted(set(cells)) for ch in range(self.channels)]


def record_index(cell: int, channel: int, layout: DbLayout) -> int:
    """
    Inverted index from (cell, channel) to a database row.

    Raises:
        ParameterError: cell or channel out of range
    """
    if not 0 <= cell < layout.grid.cells:
        raise ParameterError(f"cell {cell} outside 0..{layout.grid.cells - 1}")
    if not 0 <= channel < layout.channels:
        raise ParameterError(f"channel {channel} outside 0..{layout.channels - 1}")
    return cell * layout.channels + channel


def _deci(dbm: float) -> int:
    return int(round(dbm * 10))


@dataclass(frozen=True)
class SpectrumRecord:
    cell: int
    channel: int
    max_power_dbm: float
    duration_s: int
    rules: UsageRules
    usage_epoch: int = 0
    active_users: int = 0
    aggregate_power_mw: int = 0
    blocked_epoch: int = 0
    signature: bytes = bytes(G1_BYTES)

    @property
    def available(self) -> bool:
        return self.max_power_dbm > 0

    def remaining_capacity(self, epoch: int) -> int:
        if not self.available or self.blocked_epoch == epoch:
            return 0
        used = self.active_users if self.usage_epoch == epoch else 0
        return max(0, self.rules.max_concurrent_sus - used)

    def body(self) -> bytes:
        return _BODY.pack(
            RECORD_VERSION, self.cell, self.channel, _deci(self.max_power_dbm), self.duration_s,
            self.rules.max_concurrent_sus, _deci(self.rules.max_tx_power_dbm), self.rules.epoch_duration_s,
            self.usage_epoch, self.active_users, self.aggregate_power_mw, self.blocked_epoch,
        )

    def signed_bytes(self, width: int) -> bytes:
        """Padded row contents covered by the DB signature"""
        return self.body().ljust(width - G1_BYTES, b"\x00")

    def to_row(self, width: int) -> bytes:
        return self.signed_bytes(width) + self.signature

    @classmethod
    def from_row(cls, row: bytes) -> "SpectrumRecord":
        """
        Raises:
            DecodeError: short row or unknown record version
        """
        row = bytes(row)
        if len(row) < MIN_RECORD_BYTES:
            raise DecodeError(f"record row of {len(row)} bytes is shorter than {MIN_RECORD_BYTES}")
        (version, cell, channel, power, duration, cap, rule_power, epoch_s,
         usage_epoch, active, agg_mw, blocked) = _BODY.unpack_from(row)
        if version != RECORD_VERSION:
            raise DecodeError(f"unknown record version {version}")
        try:
            rules = UsageRules(cap, rule_power / 10, epoch_s)
        except ParameterError as e:
            raise DecodeError(f"record ({cell},{channel}) carries invalid rules: {e}") from e
        return cls(cell, channel, power / 10, duration, rules, usage_epoch, active, agg_mw,
                   blocked, row[-G1_BYTES:])


def sign_record(record: SpectrumRecord, key: BlsKeyPair, width: int) -> SpectrumRecord:
    return replace(record, signature=key.sign(record.signed_bytes(width), RECORD_DST))


def verify_record(row: bytes, public: bytes) -> bool:
    """Check a padded row's trailing signature over everything before it"""
    row = bytes(row)
    if len(row) < MIN_RECORD_BYTES:
        return False
    try:
        return bls_verify(public, row[:-G1_BYTES], row[-G1_BYTES:], RECORD_DST)
    except DecodeError:
        return False


def verify_rows(rows: np.ndarray, public: bytes, rng: random.Random) -> bool:
    """Batch-verify every row of a record matrix"""
    if rows.size == 0:
        return True
    messages = [bytes(row[:-G1_BYTES]) for row in rows]
    signatures = [bytes(row[-G1_BYTES:]) for row in rows]
    try:
        return batch_verify_same_key(public, messages, signatures, RECORD_DST, rng)
    except DecodeError:
        return False


class SpectrumDB:
    """One DB replica: the r x b record matrix plus its consortium public key"""

    def __init__(self, replica_id: int, layout: DbLayout, matrix: np.ndarray, public_key: bytes):
        if matrix.shape != (layout.r, layout.b):
            raise ParameterError(f"matrix shape {matrix.shape} does not match layout {(layout.r, layout.b)}")
        self.replica_id = replica_id
        self.layout = layout
        self.matrix = matrix
        self.public_key = public_key

    @classmethod
    def generate(cls, layout: DbLayout, signer: BlsKeyPair, rng: random.Random,
                 rules: UsageRules, availability: float = 0.85, power_range: Tuple[int, int] = (20, 30)) -> "SpectrumDB":
        """
        Build a signed database with seeded contents.

        Each record is available with probability `availability`; caps vary
        from 1 to the default cap.
        """
        matrix = np.zeros((layout.r, layout.b), dtype=np.uint8)
        for index in range(layout.r):
            cell, channel = layout.cell_channel(index)
            available = rng.random() < availability
            record = SpectrumRecord(
                cell=cell,
                channel=channel,
                max_power_dbm=float(rng.randint(*power_range)) if available else 0.0,
                duration_s=rules.epoch_duration_s,
                rules=UsageRules(rng.randint(1, rules.max_concurrent_sus), rules.max_tx_power_dbm,
                                 rules.epoch_duration_s),
            )
            matrix[index] = np.frombuffer(sign_record(record, signer, layout.b).to_row(layout.b), dtype=np.uint8)
        logger.info(f"generated spectrum DB: r={layout.r}, b={layout.b}, eta={layout.eta} bytes")
        return cls(0, layout, matrix, signer.public)

    def replicate(self, replica_id: int) -> "SpectrumDB":
        return SpectrumDB(replica_id, self.layout, self.matrix.copy(), self.public_key)

    def row(self, index: int) -> bytes:
        return self.matrix[index].tobytes()

    def record(self, index: int) -> SpectrumRecord:
        return SpectrumRecord.from_row(self.row(index))

    def record_at(self, cell: int, channel: int) -> SpectrumRecord:
        return self.record(record_index(cell, channel, self.layout))

    def _store(self, record: SpectrumRecord, signer: BlsKeyPair) -> int:
        index = record_index(record.cell, record.channel, self.layout)
        signed = sign_record(record, signer, self.layout.b)
        self.matrix[index] = np.frombuffer(signed.to_row(self.layout.b), dtype=np.uint8)
        return index

    def apply_usage(self, usage: Sequence[UsageEntry], epoch: int, signer: BlsKeyPair) -> List[int]:
        """
        Add committed usage to the affected rows and re-sign them.

        Usage from an earlier epoch is replaced, usage within the same epoch
        accumulates across clusters.

        Returns:
            updated row indices
        """
        updated = []
        for entry in usage:
            current = self.record_at(entry.cell, entry.channel)
            if current.usage_epoch == epoch:
                active = current.active_users + entry.active_users
                power = current.aggregate_power_mw + entry.aggregate_power_mw
            else:
                active, power = entry.active_users, entry.aggregate_power_mw
            updated.append(self._store(replace(current, usage_epoch=epoch, active_users=active,
                                               aggregate_power_mw=power), signer))
        logger.debug(f"replica {self.replica_id}: usage applied to rows {updated}")
        return updated

    def vacate(self, cell: int, channels: Iterable[int], epoch: int, signer: BlsKeyPair) -> List[int]:
        """Mark channels in a cell unavailable for one epoch (incumbent arrival)"""
        return [self._store(replace(self.record_at(cell, ch), blocked_epoch=epoch), signer)
                for ch in channels]

    def digest(self) -> str:
        return sha256_hex(self.matrix.tobytes())

    def dump(self, path: Path) -> None:
        """Raw row-major matrix preceded by a length-prefixed JSON header"""
        header = json.dumps({
            "replica_id": self.replica_id,
            "grid_n": self.layout.grid.n,
            "channels": self.layout.channels,
            "record_bytes": self.layout.b,
            "public_key": self.public_key.hex(),
            "digest": self.digest(),
        }, sort_keys=True).encode("utf-8")
        Path(path).write_bytes(struct.pack(">I", len(header)) + header + self.matrix.tobytes())

    @classmethod
    def load(cls, path: Path) -> "SpectrumDB":
        """
        Raises:
            DecodeError: truncated file or digest mismatch
        """
        data = Path(path).read_bytes()
        if len(data) < 4:
            raise DecodeError(f"{path}: missing header")
        (size,) = struct.unpack_from(">I", data)
        try:
            meta = json.loads(data[4:4 + size])
        except json.JSONDecodeError as e:
            raise DecodeError(f"{path}: bad header: {e}") from e
        layout = DbLayout(Grid(meta["grid_n"]), meta["channels"], meta["record_bytes"])
        body = data[4 + size:]
        if len(body) != layout.eta:
            raise DecodeError(f"{path}: matrix is {len(body)} bytes, expected {layout.eta}")
        matrix = np.frombuffer(body, dtype=np.uint8).reshape(layout.r, layout.b).copy()
        db = cls(meta["replica_id"], layout, matrix, bytes.fromhex(meta["public_key"]))
        if db.digest() != meta["digest"]:
            raise DecodeError(f"{path}: digest mismatch")
        return db


def replicas_consistent(replicas: Sequence[SpectrumDB]) -> bool:
    return len({db.digest() for db in replicas}) <= 1
