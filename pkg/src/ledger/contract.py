"""
Spectrum allocation contract.

The contract is a fixed, deterministic program parameterized by the usage
rules carried in each database record. Every member runs it on its own chain
copy and must obtain byte-identical output.
"""
from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Protocol, Sequence, Tuple

from ..core.errors import ParameterError
from ..core.utilities import canonical_json, pseudonym_order, sha256_hex

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class UsageRules:
    """Per-record usage policy"""
    max_concurrent_sus: int
    max_tx_power_dbm: float
    epoch_duration_s: int

    def __post_init__(self):
        if self.max_concurrent_sus <= 0:
            raise ParameterError(f"max_concurrent_sus must be positive, got {self.max_concurrent_sus}")
        if self.max_tx_power_dbm <= 0:
            raise ParameterError(f"max_tx_power_dbm must be positive, got {self.max_tx_power_dbm}")
        if self.epoch_duration_s <= 0:
            raise ParameterError(f"epoch_duration_s must be positive, got {self.epoch_duration_s}")

    def to_dict(self) -> dict:
        return {"max_concurrent_sus": self.max_concurrent_sus,
                "max_tx_power_dbm": self.max_tx_power_dbm,
                "epoch_duration_s": self.epoch_duration_s}

    @classmethod
    def from_dict(cls, data: dict) -> "UsageRules":
        return cls(int(data["max_concurrent_sus"]), float(data["max_tx_power_dbm"]),
                   int(data["epoch_duration_s"]))


class AvailabilityRecord(Protocol):
    cell: int
    channel: int
    max_power_dbm: float
    rules: UsageRules

    def remaining_capacity(self, epoch: int) -> int: ...


@dataclass(frozen=True)
class Assignment:
    pseudonym: str
    cell: int
    channel: int
    power_dbm: float

    def to_dict(self) -> dict:
        return {"pseudonym": self.pseudonym, "cell": self.cell, "channel": self.channel,
                "power_dbm": self.power_dbm}


@dataclass(frozen=True)
class UsageEntry:
    """Active users and aggregate transmit power on one (cell, channel)"""
    cell: int
    channel: int
    active_users: int
    aggregate_power_mw: int

    def to_dict(self) -> dict:
        return {"cell": self.cell, "channel": self.channel, "active_users": self.active_users,
                "aggregate_power_mw": self.aggregate_power_mw}

    @classmethod
    def from_dict(cls, data: dict) -> "UsageEntry":
        return cls(int(data["cell"]), int(data["channel"]), int(data["active_users"]),
                   int(data["aggregate_power_mw"]))


@dataclass(frozen=True)
class AssignmentMap:
    """Contract output for one epoch, valid until the epoch ends"""
    epoch: int
    assignments: Tuple[Assignment, ...]

    def to_dict(self) -> dict:
        return {"epoch": self.epoch, "assignments": [a.to_dict() for a in self.assignments]}

    @classmethod
    def from_dict(cls, data: dict) -> "AssignmentMap":
        return cls(int(data["epoch"]), tuple(
            Assignment(a["pseudonym"], int(a["cell"]), int(a["channel"]), float(a["power_dbm"]))
            for a in data["assignments"]))

    def digest(self) -> str:
        return sha256_hex(canonical_json(self.to_dict()))

    def for_member(self, pseudonym: str) -> Optional[Assignment]:
        return next((a for a in self.assignments if a.pseudonym == pseudonym), None)

    def counts(self) -> Dict[Tuple[int, int], int]:
        out: Dict[Tuple[int, int], int] = defaultdict(int)
        for a in self.assignments:
            out[(a.cell, a.channel)] += 1
        return dict(out)

    def __len__(self) -> int:
        return len(self.assignments)


def dbm_to_mw(dbm: float) -> float:
    return math.pow(10.0, dbm / 10.0)


def usage_summary(assignments: AssignmentMap) -> List[UsageEntry]:
    """Per-(cell, channel) usage in ascending (cell, channel) order"""
    users: Dict[Tuple[int, int], int] = defaultdict(int)
    power: Dict[Tuple[int, int], float] = defaultdict(float)
    for a in assignments.assignments:
        users[(a.cell, a.channel)] += 1
        power[(a.cell, a.channel)] += dbm_to_mw(a.power_dbm)
    return [UsageEntry(cell, channel, users[(cell, channel)], int(round(power[(cell, channel)])))
            for cell, channel in sorted(users)]


def _effective_cap(record: AvailabilityRecord, rules: UsageRules, epoch: int) -> int:
    cap = min(record.rules.max_concurrent_sus, rules.max_concurrent_sus)
    used = record.rules.max_concurrent_sus - record.remaining_capacity(epoch)
    return max(0, cap - used)


def execute_contract(rules: UsageRules, members: Sequence[Tuple[str, int]],
                     availability: Iterable[AvailabilityRecord], epoch: int) -> AssignmentMap:
    """
    Allocate channels to members.

    Members are served in ascending pseudonym byte order; each takes the
    lowest channel in its cell that still has capacity. A member left without
    capacity is simply not assigned.

    Args:
        rules: cluster-wide bound applied on top of each record's own rules
        members: (pseudonym, cell) pairs
        availability: records retrieved for this epoch
        epoch: epoch the assignment is valid for
    """
    by_cell: Dict[int, List[AvailabilityRecord]] = defaultdict(list)
    for record in availability:
        by_cell[record.cell].append(record)
    remaining: Dict[Tuple[int, int], int] = {}
    for cell, records in by_cell.items():
        records.sort(key=lambda rec: rec.channel)
        for rec in records:
            remaining[(cell, rec.channel)] = _effective_cap(rec, rules, epoch)

    assigned: List[Assignment] = []
    for pseudonym, cell in sorted(members, key=lambda m: pseudonym_order(m[0])):
        for rec in by_cell.get(cell, ()):
            key = (cell, rec.channel)
            if remaining[key] <= 0:
                continue
            remaining[key] -= 1
            power = min(rec.max_power_dbm, rec.rules.max_tx_power_dbm, rules.max_tx_power_dbm)
            assigned.append(Assignment(pseudonym, cell, rec.channel, power))
            break
    logger.debug(f"contract epoch {epoch}: {len(assigned)}/{len(members)} members assigned")
    return AssignmentMap(epoch, tuple(assigned))


def check_assignment(assignments: AssignmentMap, rules: UsageRules,
                     availability: Iterable[AvailabilityRecord], epoch: int) -> List[str]:
    """
    Brute-force validation of an assignment against the records it came from.

    Returns:
        human-readable violations, empty when the assignment is feasible
    """
    records = {(rec.cell, rec.channel): rec for rec in availability}
    violations = []
    seen = set()
    for a in assignments.assignments:
        if a.pseudonym in seen:
            violations.append(f"{a.pseudonym[:8]} assigned twice")
        seen.add(a.pseudonym)
        rec = records.get((a.cell, a.channel))
        if rec is None:
            violations.append(f"({a.cell},{a.channel}) was not available")
            continue
        if a.power_dbm > min(rec.max_power_dbm, rec.rules.max_tx_power_dbm, rules.max_tx_power_dbm):
            violations.append(f"{a.pseudonym[:8]} exceeds max power on ({a.cell},{a.channel})")
    for key, count in assignments.counts().items():
        rec = records.get(key)
        if rec is not None and count > _effective_cap(rec, rules, epoch):
            violations.append(f"{key} carries {count} SUs, cap {_effective_cap(rec, rules, epoch)}")
    return violations
