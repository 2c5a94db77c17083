"""
Event Handler - protocol event bus for the simulator
"""
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional
import logging

logger = logging.getLogger(__name__)


@dataclass
class BaseEvent:
    """One traced protocol event"""
    event_type: str
    sim_time: float
    node: str
    detail: Dict[str, Any] = field(default_factory=dict)
    side: str = "su"

    def to_record(self) -> Dict[str, Any]:
        return {"sim_time": self.sim_time, "node": self.node, "event": self.event_type, "detail": self.detail}


class ProtocolEvents:
    """Protocol event type constants"""
    # bootstrapping and peering
    GROUP_KEYS_GENERATED = "group_keys_generated"
    KPK_DISTRIBUTED = "kpk_distributed"
    ANCHOR_AUTHENTICATED = "anchor_authenticated"
    ANCHOR_EXCLUDED = "anchor_excluded"
    SU_REGISTERED = "su_registered"
    SU_PEERED = "su_peered"
    CLUSTERS_FORMED = "clusters_formed"
    LEADER_ELECTED = "leader_elected"
    VALIDATOR_SET_FORMED = "validator_set_formed"
    LEADER_AUTHENTICATED = "leader_authenticated"
    LEADER_REJECTED = "leader_rejected"
    CLUSTER_KEY_SUBMITTED = "cluster_key_submitted"
    BEACON_ISSUED = "beacon_issued"
    BEACON_TRANSMITTED = "beacon_transmitted"

    # rekeying
    DKG_COMPLETED = "dkg_completed"
    KEY_BOUND = "key_bound"
    BINDINGS_COMMITTED = "bindings_committed"
    GLOBAL_KEY_UPDATED = "global_key_updated"
    MEMBER_REVOKED = "member_revoked"
    GROUP_RENEWED = "group_renewed"

    # joining
    BEACON_SCANNED = "beacon_scanned"
    JOIN_AUTHENTICATED = "join_authenticated"
    JOIN_ACCEPTED = "join_accepted"
    JOIN_DENIED = "join_denied"
    REKEY_SCHEDULED = "rekey_scheduled"
    NEW_CLUSTER_CREATED = "new_cluster_created"

    # private spectrum query
    QUERY_SIGNATURES_GATHERED = "query_signatures_gathered"
    QUERY_AUTHORIZED = "query_authorized"
    QUERY_REJECTED = "query_rejected"
    QUERY_DEFERRED = "query_deferred"
    LEADER_TIMEOUT = "leader_timeout"
    PIR_BATCH_COMPLETED = "pir_batch_completed"
    PIR_SERVED = "pir_served"
    AVAILABILITY_SUBMITTED = "availability_submitted"
    AVAILABILITY_COMMITTED = "availability_committed"
    AVAILABILITY_REJECTED = "availability_rejected"
    CONTRACT_EXECUTED = "contract_executed"

    # usage notification
    USAGE_BLOCK_BUILT = "usage_block_built"
    USAGE_SHARE_CONTRIBUTED = "usage_share_contributed"
    USAGE_SIGNED = "usage_signed"
    USAGE_COMMITTED = "usage_committed"
    LEADER_REVOKED = "leader_revoked"

    # harness
    EPOCH_STARTED = "epoch_started"
    CONSENSUS_COMMITTED = "consensus_committed"
    CONSENSUS_ABORTED = "consensus_aborted"
    PU_VACATED = "pu_vacated"
    REPLICAS_CHECKED = "replicas_checked"


# Every protocol step and the single event type that traces it
ALGORITHM_STEPS: Dict[str, str] = {
    "bootstrap: FCC generates group keys": ProtocolEvents.GROUP_KEYS_GENERATED,
    "bootstrap: Kpk shared with DBs": ProtocolEvents.KPK_DISTRIBUTED,
    "bootstrap: anchors authenticate pairwise": ProtocolEvents.ANCHOR_AUTHENTICATED,
    "bootstrap: joining SU receives sk and anchor list": ProtocolEvents.SU_REGISTERED,
    "bootstrap: SUs peer": ProtocolEvents.SU_PEERED,
    "bootstrap: clusters formed": ProtocolEvents.CLUSTERS_FORMED,
    "bootstrap: leaders elected": ProtocolEvents.LEADER_ELECTED,
    "bootstrap: DBs form validator set": ProtocolEvents.VALIDATOR_SET_FORMED,
    "bootstrap: leader authenticates with DBs": ProtocolEvents.LEADER_AUTHENTICATED,
    "bootstrap: leader joins validators and submits y": ProtocolEvents.CLUSTER_KEY_SUBMITTED,
    "bootstrap: beacon issued on the global chain": ProtocolEvents.BEACON_ISSUED,
    "bootstrap: representatives transmit the beacon": ProtocolEvents.BEACON_TRANSMITTED,
    "rekeying: DKG": ProtocolEvents.DKG_COMPLETED,
    "rekeying: members bind z_j": ProtocolEvents.KEY_BOUND,
    "rekeying: bindings committed to the local chain": ProtocolEvents.BINDINGS_COMMITTED,
    "rekeying: new y submitted to the global chain": ProtocolEvents.GLOBAL_KEY_UPDATED,
    "join: scan control channel": ProtocolEvents.BEACON_SCANNED,
    "join: TwoWayEPID with leader": ProtocolEvents.JOIN_AUTHENTICATED,
    "join: peer and download local chain": ProtocolEvents.JOIN_ACCEPTED,
    "join: wait for next epoch and rekey": ProtocolEvents.REKEY_SCHEDULED,
    "join: no beacon: new cluster": ProtocolEvents.NEW_CLUSTER_CREATED,
    "query: leader gathers tau EPID signatures": ProtocolEvents.QUERY_SIGNATURES_GATHERED,
    "query: DBs verify the signatures": ProtocolEvents.QUERY_AUTHORIZED,
    "query: verification failure: leader revoked": ProtocolEvents.QUERY_REJECTED,
    "query: leader timeout: new leader": ProtocolEvents.LEADER_TIMEOUT,
    "query: BatchPIR": ProtocolEvents.PIR_BATCH_COMPLETED,
    "query: availability block submitted": ProtocolEvents.AVAILABILITY_SUBMITTED,
    "query: members validate the block": ProtocolEvents.AVAILABILITY_COMMITTED,
    "query: contracts triggered": ProtocolEvents.CONTRACT_EXECUTED,
    "usage: usage block built": ProtocolEvents.USAGE_BLOCK_BUILT,
    "usage: members contribute shares": ProtocolEvents.USAGE_SHARE_CONTRIBUTED,
    "usage: cluster signature reconstructed": ProtocolEvents.USAGE_SIGNED,
    "usage: validators verify and DBs update": ProtocolEvents.USAGE_COMMITTED,
    "usage: forged usage: leader revoked, beacon removed": ProtocolEvents.LEADER_REVOKED,
}


class EventHandler:
    """Synchronous publish/subscribe over protocol events, stamped with simulated time"""

    def __init__(self, clock: Optional[Callable[[], float]] = None, max_history: int = 100_000):
        self.clock = clock or (lambda: 0.0)
        self.listeners: Dict[str, List[Callable]] = defaultdict(list)
        self.wildcard: List[Callable] = []
        self.event_history: List[BaseEvent] = []
        self.max_history = max_history

    def subscribe(self, event_type: str, handler: Callable) -> None:
        self.listeners[event_type].append(handler)
        logger.debug(f"Subscribed handler {handler.__name__} to event type: {event_type}")

    def subscribe_all(self, handler: Callable) -> None:
        self.wildcard.append(handler)

    def unsubscribe(self, event_type: str, handler: Callable) -> None:
        if handler in self.listeners[event_type]:
            self.listeners[event_type].remove(handler)

    def emit(self, event_type: str, node: str, detail: Optional[Dict[str, Any]] = None,
             side: str = "su") -> BaseEvent:
        """
        Emit an event; handler errors propagate so invariant failures stop the run.
        """
        event = BaseEvent(event_type, self.clock(), node, detail or {}, side)
        self._store_event(event)
        for handler in self.wildcard:
            handler(event)
        for handler in self.listeners[event_type]:
            handler(event)
        return event

    def _store_event(self, event: BaseEvent) -> None:
        self.event_history.append(event)
        if len(self.event_history) > self.max_history:
            self.event_history.pop(0)

    def get_event_history(self, event_type: Optional[str] = None, limit: int = 100) -> List[BaseEvent]:
        if event_type:
            return [e for e in self.event_history if e.event_type == event_type][-limit:]
        return self.event_history[-limit:]

    def count(self, event_type: str) -> int:
        return sum(1 for e in self.event_history if e.event_type == event_type)

    def clear_history(self) -> None:
        self.event_history.clear()
        logger.info("Event history cleared")
