"""
Clusters of nearby SUs and the beacons they advertise.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from ..core.errors import ParameterError
from ..core.utilities import pseudonym_hash, pseudonym_order
from .spectrum import Grid

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Beacon:
    beacon_id: str
    cluster_id: int
    issuer: str
    period_s: float
    duration_s: float
    control_channel: int
    cells: Tuple[int, ...] = ()
    valid: bool = True

    def to_dict(self) -> dict:
        return {"beacon_id": self.beacon_id, "cluster_id": self.cluster_id, "issuer": self.issuer,
                "period_s": self.period_s, "duration_s": self.duration_s,
                "control_channel": self.control_channel, "cells": list(self.cells), "valid": self.valid}

    @classmethod
    def from_dict(cls, data: dict) -> "Beacon":
        return cls(data["beacon_id"], int(data["cluster_id"]), data["issuer"], float(data["period_s"]),
                   float(data["duration_s"]), int(data["control_channel"]), tuple(data.get("cells", ())),
                   bool(data.get("valid", True)))

    def audible_from(self, cell: int, grid: Grid, radius: int) -> bool:
        return any(grid.distance(cell, c) <= radius for c in self.cells)


def cluster_threshold(n: int) -> int:
    """TBLS degree for a cluster of n members"""
    return n // 2


def elect_leader(members: Iterable[str], exclude: Iterable[str] = ()) -> str:
    """
    Raises:
        ParameterError: no eligible member
    """
    excluded = set(exclude)
    eligible = [m for m in members if m not in excluded]
    if not eligible:
        raise ParameterError("cannot elect a leader from an empty member set")
    return min(eligible, key=pseudonym_hash)


@dataclass
class ClusterState:
    cluster_id: int
    center_cell: int
    members: Dict[str, int]
    leader: str
    tau: int
    t_epoch: float
    t_beacon: float
    beacon_duration: float
    y: Optional[bytes] = None
    z: Dict[str, bytes] = field(default_factory=dict)
    indices: Dict[str, int] = field(default_factory=dict)
    key_epoch: int = 0
    epoch: int = 0
    beacon: Optional[Beacon] = None
    pending_joins: Dict[str, int] = field(default_factory=dict)
    # members admitted mid-epoch receive assignments from this epoch on
    active_from: Dict[str, int] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.members)

    @property
    def t(self) -> int:
        return cluster_threshold(self.n)

    @property
    def can_query(self) -> bool:
        return self.n >= self.tau

    @property
    def cells(self) -> Tuple[int, ...]:
        return tuple(sorted(set(self.members.values())))

    def sorted_members(self) -> List[str]:
        return sorted(self.members, key=pseudonym_order)

    def active_members(self, epoch: int) -> List[Tuple[str, int]]:
        return [(p, self.members[p]) for p in self.sorted_members() if self.active_from.get(p, 0) <= epoch]

    def representative(self, epoch: int) -> str:
        """Member transmitting the beacon this epoch, rotating in pseudonym order"""
        ordered = self.sorted_members()
        return ordered[epoch % len(ordered)]

    def check(self) -> None:
        if self.leader not in self.members:
            raise ParameterError(f"cluster {self.cluster_id}: leader is not a member")


def form_clusters(sus: Sequence[Tuple[str, int]], grid: Grid, radius: int, tau: int,
                  t_epoch: float, t_beacon: float, beacon_duration: float,
                  max_members: Optional[int] = None) -> List[ClusterState]:
    """
    Greedy cell-radius agglomeration.

    The next cluster is seeded at the cell that reaches the most unclustered
    SUs within `radius` (ties to the lower cell id) and absorbs all of them,
    up to `max_members` in pseudonym order.

    Args:
        sus: (pseudonym, cell) pairs
        radius: Chebyshev radius around the seed cell
    """
    if radius < 0:
        raise ParameterError(f"cluster radius must be non-negative, got {radius}")
    remaining = {p: cell for p, cell in sus}
    clusters: List[ClusterState] = []
    while remaining:
        occupied = sorted(set(remaining.values()))

        def reach(center: int) -> int:
            return sum(1 for c in remaining.values() if grid.distance(center, c) <= radius)

        center = max(occupied, key=lambda c: (reach(c), -c))
        chosen = sorted((p for p, c in remaining.items() if grid.distance(center, c) <= radius),
                        key=pseudonym_order)
        if max_members is not None:
            chosen = chosen[:max_members]
        members = {p: remaining.pop(p) for p in chosen}
        clusters.append(ClusterState(
            cluster_id=len(clusters),
            center_cell=center,
            members=members,
            leader=elect_leader(members),
            tau=tau,
            t_epoch=t_epoch,
            t_beacon=t_beacon,
            beacon_duration=beacon_duration,
        ))
    logger.info(f"formed {len(clusters)} clusters from {len(sus)} SUs (radius {radius})")
    return clusters
