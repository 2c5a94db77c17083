import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Set

from .errors import PrivacyViolation
from .event_handler import BaseEvent


class ProtocolEventLogger:
    """
    Structured logging of simulator events plus the replayable trace.

    Each event goes to the `trustsas.protocol` logger as
    `EVENT: <type> | NODE: <node> | T: <sim_time> | DETAIL: {json}` and is
    appended to the in-memory trace. DB-side events pass a redaction guard:
    a registered true SU identity in one of them is a privacy violation.
    """

    def __init__(self, log_level: int = logging.INFO):
        """
        Initialize the protocol event logger.

        Args:
            log_level: Logging level (default: INFO)
        """
        # Use only the default/root logger configuration; do not attach custom handlers
        self.logger = logging.getLogger("trustsas.protocol")
        self.logger.setLevel(log_level)
        self.logger.propagate = True
        self.trace: List[Dict[str, Any]] = []
        self._identities: Set[str] = set()

    def register_identities(self, identities: Iterable[str]) -> None:
        """True SU identities that must never reach a DB-side record"""
        self._identities.update(identities)

    def _guard(self, event: BaseEvent) -> None:
        if event.side != "db" or not self._identities:
            return
        text = event.node + json.dumps(event.detail, sort_keys=True, default=str)
        leaked = sorted(i for i in self._identities if i in text)
        if leaked:
            raise PrivacyViolation(f"DB-side event {event.event_type} at {event.node} exposes {leaked[0]}")

    def log_event(self, event: BaseEvent, log_level: int = logging.INFO) -> None:
        """
        Log a protocol event with structured format.

        Args:
            event: the emitted event
            log_level: Logging level for this event
        """
        self._guard(event)
        record = event.to_record()
        self.trace.append(record)
        detail = json.dumps(event.detail, sort_keys=True, separators=(',', ':'), default=str)
        message = f"EVENT: {event.event_type} | NODE: {event.node} | T: {event.sim_time:.6f} | DETAIL: {detail}"
        self.logger.log(log_level, message)

    def __call__(self, event: BaseEvent) -> None:
        self.log_event(event, logging.DEBUG)

    def trace_bytes(self) -> bytes:
        return b"".join(
            json.dumps(r, sort_keys=True, separators=(',', ':'), default=str).encode("utf-8") + b"\n"
            for r in self.trace
        )

    def trace_hash(self) -> str:
        return hashlib.sha256(self.trace_bytes()).hexdigest()

    def dump_trace(self, path: Path) -> None:
        Path(path).write_bytes(self.trace_bytes())

    def events(self, event_type: Optional[str] = None) -> List[Dict[str, Any]]:
        return [r for r in self.trace if event_type is None or r["event"] == event_type]


def load_trace(path: Path) -> List[Dict[str, Any]]:
    return [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]
