"""
Deterministic discrete-event simulator.

Generator-based processes yield events (timeouts, other processes, all_of /
any_of conditions) and are resumed when those fire. Ties in time are broken
by scheduling order, so a run is a pure function of its inputs and seed.
"""
from __future__ import annotations

import heapq
import logging
import random
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, Generator, Iterable, List, Optional, Sequence, Set, Tuple

from .errors import InvariantViolation, ParameterError

logger = logging.getLogger(__name__)


class Event:
    """Fires once, at which point its callbacks run in registration order"""

    def __init__(self, sim: "Simulator"):
        self.sim = sim
        self.callbacks: List[Callable[["Event"], None]] = []
        self.triggered = False
        self.processed = False
        self.value: Any = None

    def succeed(self, value: Any = None) -> "Event":
        if self.triggered:
            raise InvariantViolation("event triggered twice")
        self.triggered = True
        self.value = value
        self.sim.schedule(0.0, self._fire)
        return self

    def _fire(self) -> None:
        self.processed = True
        callbacks, self.callbacks = self.callbacks, []
        for cb in callbacks:
            cb(self)

    def add_callback(self, cb: Callable[["Event"], None]) -> None:
        if self.processed:
            self.sim.schedule(0.0, cb, self)
        else:
            self.callbacks.append(cb)


class Timeout(Event):
    def __init__(self, sim: "Simulator", delay: float, value: Any = None):
        if delay < 0:
            raise ParameterError(f"negative timeout {delay}")
        super().__init__(sim)
        self.triggered = True
        self.value = value
        sim.schedule(delay, self._fire)


class Process(Event):
    """Drives a generator; succeeds with the generator's return value"""

    def __init__(self, sim: "Simulator", generator: Generator, name: str = ""):
        super().__init__(sim)
        self.name = name
        self._gen = generator
        sim.schedule(0.0, self._resume, None)

    def _resume(self, value: Any) -> None:
        try:
            target = self._gen.send(value)
        except StopIteration as stop:
            self.succeed(stop.value)
            return
        if not isinstance(target, Event):
            raise ParameterError(f"process {self.name!r} yielded {type(target).__name__}, expected an Event")
        target.add_callback(lambda ev: self._resume(ev.value))


class Condition(Event):
    def __init__(self, sim: "Simulator", events: Sequence[Event], need_all: bool):
        super().__init__(sim)
        self.events = list(events)
        self.need_all = need_all
        self._done = 0
        if not self.events:
            self.succeed({})
            return
        for ev in self.events:
            ev.add_callback(self._check)

    def _check(self, ev: Event) -> None:
        if self.triggered:
            return
        self._done += 1
        if not self.need_all or self._done == len(self.events):
            self.succeed({e: e.value for e in self.events if e.processed or e is ev})


class Simulator:
    def __init__(self, seed: int = 0):
        self.now = 0.0
        self.seed = seed
        self.rng = random.Random(seed)
        self._queue: List[Tuple[float, int, Callable, tuple]] = []
        self._seq = 0
        self.events_processed = 0

    def schedule(self, delay: float, fn: Callable, *args) -> None:
        self.schedule_at(self.now + delay, fn, *args)

    def schedule_at(self, time: float, fn: Callable, *args) -> None:
        if time < self.now:
            raise InvariantViolation(f"scheduling into the past: {time} < {self.now}")
        heapq.heappush(self._queue, (time, self._seq, fn, args))
        self._seq += 1

    def node_rng(self, name: str) -> random.Random:
        """Independent stream per node, stable across runs with the same seed"""
        return random.Random(f"{self.seed}:{name}")

    def event(self) -> Event:
        return Event(self)

    def timeout(self, delay: float, value: Any = None) -> Timeout:
        return Timeout(self, delay, value)

    def process(self, generator: Generator, name: str = "") -> Process:
        return Process(self, generator, name)

    def all_of(self, events: Sequence[Event]) -> Condition:
        return Condition(self, events, need_all=True)

    def any_of(self, events: Sequence[Event]) -> Condition:
        return Condition(self, events, need_all=False)

    def step(self) -> None:
        time, _, fn, args = heapq.heappop(self._queue)
        if time < self.now:
            raise InvariantViolation(f"event at {time} executed after {self.now}")
        self.now = time
        self.events_processed += 1
        fn(*args)

    def run(self, until: Optional[float] = None) -> float:
        while self._queue:
            if until is not None and self._queue[0][0] > until:
                self.now = until
                break
            self.step()
        return self.now

    def run_until(self, event: Event, limit: Optional[float] = None) -> Any:
        """
        Run until `event` fires.

        Raises:
            InvariantViolation: the queue drains or `limit` passes first
        """
        while not event.processed:
            if not self._queue:
                raise InvariantViolation("simulation drained before the awaited event fired")
            if limit is not None and self._queue[0][0] > limit:
                raise InvariantViolation(f"awaited event did not fire before t={limit}")
            self.step()
        return event.value


# Network

@dataclass(frozen=True)
class LinkModel:
    latency_s: float = 0.020
    bandwidth_bps: float = 10e6

    def delay(self, size: int) -> float:
        return self.latency_s + size * 8 / self.bandwidth_bps


@dataclass(frozen=True)
class Message:
    src: str
    dst: str
    kind: str
    payload: Any
    size: int
    tampered: bool = False


@dataclass
class TrafficStats:
    messages: int = 0
    bytes: int = 0
    dropped: int = 0
    per_kind: Dict[str, int] = field(default_factory=dict)
    bytes_per_kind: Dict[str, int] = field(default_factory=dict)
    sent_by: Dict[str, int] = field(default_factory=dict)

    def record(self, message: Message) -> None:
        family = message.kind.split(":")[0]
        self.messages += 1
        self.bytes += message.size
        self.per_kind[family] = self.per_kind.get(family, 0) + 1
        self.bytes_per_kind[family] = self.bytes_per_kind.get(family, 0) + message.size
        self.sent_by[message.src] = self.sent_by.get(message.src, 0) + 1


class FaultInjector:
    """
    Outbound misbehavior of designated Byzantine nodes.

    Behaviors: "silent" drops everything, "drop" loses each message with
    `drop_rate`, "duplicate" sends twice, "alter" marks the message tampered
    and applies the registered alteration for its kind.
    """

    BEHAVIORS = ("silent", "drop", "duplicate", "alter", "equivocate")

    def __init__(self, behaviors: Optional[Dict[str, str]] = None, drop_rate: float = 0.5,
                 seed: int = 0):
        self.behaviors: Dict[str, str] = {}
        self.drop_rate = drop_rate
        self.rng = random.Random(f"faults:{seed}")
        self.alterations: Dict[str, Callable[[Any], Any]] = {}
        for node, behavior in (behaviors or {}).items():
            self.assign(node, behavior)

    def assign(self, node: str, behavior: str) -> None:
        if behavior not in self.BEHAVIORS:
            raise ParameterError(f"unknown Byzantine behavior {behavior!r}")
        self.behaviors[node] = behavior

    def behavior(self, node: str) -> Optional[str]:
        return self.behaviors.get(node)

    def is_byzantine(self, node: str) -> bool:
        return node in self.behaviors

    def outbound(self, message: Message) -> List[Message]:
        behavior = self.behaviors.get(message.src)
        if behavior is None or behavior == "equivocate":
            return [message]
        if behavior == "silent":
            return []
        if behavior == "drop":
            return [] if self.rng.random() < self.drop_rate else [message]
        if behavior == "duplicate":
            return [message, message]
        alter = self.alterations.get(message.kind.split(":")[0])
        payload = alter(message.payload) if alter else message.payload
        return [replace(message, payload=payload, tampered=True)]


Handler = Callable[[Message], None]


class Network:
    """
    Point-to-point links with per-message delay latency + size/bandwidth,
    FIFO per ordered pair and crash-stop nodes.
    """

    def __init__(self, sim: Simulator, link: LinkModel, faults: Optional[FaultInjector] = None):
        self.sim = sim
        self.link = link
        self.faults = faults or FaultInjector()
        self.handlers: Dict[Tuple[str, str], Handler] = {}
        self.crashed: Set[str] = set()
        self.stats = TrafficStats()
        self._last_delivery: Dict[Tuple[str, str], float] = {}
        # per-protocol dispatchers sharing this network, e.g. consensus routing
        self.services: Dict[str, Any] = {}

    def register(self, node: str, family: str, handler: Handler) -> None:
        self.handlers[(node, family)] = handler

    def unregister(self, node: str, family: str) -> None:
        self.handlers.pop((node, family), None)

    def crash(self, node: str) -> None:
        self.crashed.add(node)
        logger.info(f"node {node} crashed at t={self.sim.now:.3f}")

    def recover(self, node: str) -> None:
        self.crashed.discard(node)

    def transmit(self, message: Message) -> Optional[float]:
        """
        Schedule delivery of `message`.

        Returns:
            delivery time of the last copy sent, None when nothing was sent
        """
        if message.size < 0:
            raise ParameterError(f"negative message size {message.size}")
        if message.src in self.crashed:
            self.stats.dropped += 1
            return None
        delivered_at = None
        for out in self.faults.outbound(message):
            if out.tampered and not self.faults.is_byzantine(out.src):
                raise InvariantViolation(f"honest message from {out.src} altered in flight")
            pair = (out.src, out.dst)
            at = max(self.sim.now + self.link.delay(out.size), self._last_delivery.get(pair, 0.0))
            self._last_delivery[pair] = at
            self.stats.record(out)
            self.sim.schedule_at(at, self._deliver, out)
            delivered_at = at
        if delivered_at is None:
            self.stats.dropped += 1
        return delivered_at

    def send(self, src: str, dst: str, kind: str, payload: Any, size: int) -> Optional[float]:
        return self.transmit(Message(src, dst, kind, payload, size))

    def broadcast(self, src: str, dsts: Iterable[str], kind: str, payload: Any, size: int) -> List[Optional[float]]:
        return [self.send(src, dst, kind, payload, size) for dst in dsts if dst != src]

    def _deliver(self, message: Message) -> None:
        if message.dst in self.crashed:
            self.stats.dropped += 1
            return
        handler = self.handlers.get((message.dst, message.kind.split(":")[0]))
        if handler is not None:
            handler(message)


class CpuModel:
    """Per-node busy timeline; work on one node is serialized"""

    def __init__(self, sim: Simulator):
        self.sim = sim
        self.busy_until: Dict[str, float] = {}
        self.busy_total: Dict[str, float] = {}

    def charge(self, node: str, seconds: float) -> float:
        """Queue `seconds` of work on `node`; returns its completion time"""
        if seconds < 0:
            raise ParameterError(f"negative CPU cost {seconds}")
        start = max(self.sim.now, self.busy_until.get(node, 0.0))
        done = start + seconds
        self.busy_until[node] = done
        self.busy_total[node] = self.busy_total.get(node, 0.0) + seconds
        return done

    def work(self, node: str, seconds: float) -> Timeout:
        """Event firing when the charged work completes"""
        return self.sim.timeout(self.charge(node, seconds) - self.sim.now)
