"""
State Manager - simulated clock, epochs and the beacon air schedule
"""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple
import logging
import math

from .errors import ParameterError
from .event_handler import EventHandler, ProtocolEvents
from ..entities.clusters import Beacon, ClusterState
from ..entities.spectrum import Grid

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EpochClock:
    """Epoch numbering: epoch 1 covers [0, t_epoch)"""
    t_epoch: float

    def __post_init__(self):
        if self.t_epoch <= 0:
            raise ParameterError(f"epoch duration must be positive, got {self.t_epoch}")

    def epoch_at(self, t: float) -> int:
        return int(t // self.t_epoch) + 1

    def epoch_start(self, epoch: int) -> float:
        return (epoch - 1) * self.t_epoch

    def next_epoch_start(self, t: float) -> float:
        return self.epoch_start(self.epoch_at(t) + 1)


@dataclass(frozen=True)
class BeaconSchedule:
    """A beacon on air for `duration` at offset + k * period"""
    period: float
    duration: float
    offset: float = 0.0

    def __post_init__(self):
        if self.period <= 0 or not 0 < self.duration <= self.period:
            raise ParameterError(f"beacon needs 0 < d <= T_beta, got d={self.duration}, T={self.period}")

    def transmissions(self, start: float, end: float) -> int:
        """Number of transmissions starting in [start, end)"""
        if end <= start:
            return 0
        first = math.ceil((start - self.offset) / self.period)
        last = math.ceil((end - self.offset) / self.period) - 1
        return max(0, last - first + 1)

    def heard(self, scan_start: float, scan_duration: float) -> bool:
        """True when some transmission overlaps the scan window"""
        scan_end = scan_start + scan_duration
        k = math.floor((scan_start - self.offset) / self.period)
        for j in (k, k + 1):
            on = self.offset + j * self.period
            if on < scan_end and scan_start < on + self.duration:
                return True
        return False


@dataclass
class EpochRecord:
    epoch: int
    started_at: float
    representatives: Dict[int, str] = field(default_factory=dict)
    transmissions: Dict[int, int] = field(default_factory=dict)


class StateManager:
    """Clusters, their beacons and the epoch they are in"""

    def __init__(self, event_handler: EventHandler, t_epoch: float, grid: Grid, hearing_radius: int):
        self.event_handler = event_handler
        self.clock = EpochClock(t_epoch)
        self.grid = grid
        self.hearing_radius = hearing_radius
        self.clusters: Dict[int, ClusterState] = {}
        self.schedules: Dict[str, BeaconSchedule] = {}
        self.epochs: List[EpochRecord] = []

        logger.info(f"State Manager initialized (T_epoch={t_epoch}s)")

    @property
    def epoch(self) -> int:
        return self.epochs[-1].epoch if self.epochs else 0

    def add_cluster(self, cluster: ClusterState) -> None:
        self.clusters[cluster.cluster_id] = cluster

    def next_cluster_id(self) -> int:
        return max(self.clusters, default=-1) + 1

    def cluster_of(self, pseudonym: str) -> Optional[ClusterState]:
        return next((c for c in self.clusters.values() if pseudonym in c.members), None)

    def put_on_air(self, beacon: Beacon, offset: float = 0.0) -> BeaconSchedule:
        schedule = BeaconSchedule(beacon.period_s, beacon.duration_s, offset)
        self.schedules[beacon.beacon_id] = schedule
        return schedule

    def take_off_air(self, beacon_id: str) -> None:
        self.schedules.pop(beacon_id, None)
        for cluster in self.clusters.values():
            if cluster.beacon is not None and cluster.beacon.beacon_id == beacon_id:
                cluster.beacon = None

    def start_epoch(self, epoch: int, now: float) -> EpochRecord:
        """Rotate beacon representatives and count the transmissions of the epoch"""
        record = EpochRecord(epoch, now)
        start, end = self.clock.epoch_start(epoch), self.clock.epoch_start(epoch + 1)
        for cid, cluster in sorted(self.clusters.items()):
            cluster.epoch = epoch
            if cluster.beacon is None or cluster.beacon.beacon_id not in self.schedules or not cluster.members:
                continue
            rep = cluster.representative(epoch)
            count = self.schedules[cluster.beacon.beacon_id].transmissions(start, end)
            record.representatives[cid] = rep
            record.transmissions[cid] = count
            self.event_handler.emit(ProtocolEvents.BEACON_TRANSMITTED, rep, {
                "cluster": cid, "beacon": cluster.beacon.beacon_id, "epoch": epoch, "transmissions": count,
            })
        self.epochs.append(record)
        self.event_handler.emit(ProtocolEvents.EPOCH_STARTED, "sim", {"epoch": epoch, "clusters": len(self.clusters)})
        return record

    def audible_beacons(self, cell: int, valid: List[str], scan_start: float,
                        scan_duration: float) -> List[Tuple[Beacon, ClusterState]]:
        """
        Beacons a scanning SU in `cell` hears on the control channel.

        Only beacons still valid on the global chain and on air during the
        scan window count; closest cluster first.
        """
        heard = []
        for cluster in self.clusters.values():
            beacon = cluster.beacon
            if beacon is None or beacon.beacon_id not in valid:
                continue
            schedule = self.schedules.get(beacon.beacon_id)
            if schedule is None or not beacon.audible_from(cell, self.grid, self.hearing_radius):
                continue
            if schedule.heard(scan_start, scan_duration):
                heard.append((beacon, cluster))
        heard.sort(key=lambda bc: (self.grid.distance(cell, bc[1].center_cell), bc[1].cluster_id))
        return heard
