"""
Gossip-disseminated PBFT.

Each consensus instance runs pre-prepare / prepare / commit with a view
change. Votes travel as aggregated vote sets (one bitset per view, phase
and digest) pushed to `fanout` random peers; receivers merge the sets and
push again, so per-validator traffic stays O(n log n) per round instead of
the O(n^2) of all-to-all PBFT.

A shared registry records which votes were actually cast. Every received
bitset is intersected with it, which stands in for the aggregate BLS
signature a real vote set carries: a Byzantine node cannot claim an honest
validator's vote.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional, Set, Tuple

from ..core.config import CalibrationTable, ConsensusConfig, NetworkConfig
from ..core.errors import InvariantViolation, ParameterError
from ..core.simulator import CpuModel, Event, FaultInjector, LinkModel, Message, Network, Simulator
from .chain import Block, CommitProof, ValidatorSet, make_commit_proof, sign_vote

logger = logging.getLogger(__name__)

PREPARE = "prepare"
COMMIT = "commit"
VIEW_CHANGE = "view_change"

SIG_BYTES = 48
HEADER_BYTES = 24
HEARTBEAT_TICKS = 4

VoteKey = Tuple[int, str, str]
Validate = Callable[[Block], Optional[str]]


def vote_set_size(n: int) -> int:
    """Aggregate signature plus the signer bitmap"""
    return SIG_BYTES + math.ceil(n / 8)


def message_bound(n: int, fanout: int) -> int:
    """Per-validator message budget of one consensus round"""
    if n <= 1:
        return 0
    return 2 * fanout * n * max(1, math.ceil(math.log(n, fanout) - 1e-9)) if fanout > 1 else 2 * n * n


def check_message_bound(outcome: ConsensusOutcome, n: int, fanout: int) -> None:
    """
    Raises:
        InvariantViolation: a validator sent more than the per-round budget allows
    """
    budget = message_bound(n, fanout) * outcome.views
    worst = max(outcome.sent_by.items(), key=lambda kv: kv[1], default=("", 0))
    if worst[1] > budget:
        raise InvariantViolation(f"{outcome.instance}: {worst[0]} sent {worst[1]} messages, budget {budget}")


@dataclass
class ConsensusOutcome:
    instance: str
    committed: bool
    block: Optional[Block]
    started_at: float
    decided_at: Optional[float]
    views: int
    messages: int
    bytes: int
    sent_by: Dict[str, int] = field(default_factory=dict)
    decisions: Dict[str, str] = field(default_factory=dict)
    reason: str = ""

    @property
    def duration(self) -> Optional[float]:
        return None if self.decided_at is None else self.decided_at - self.started_at

    @property
    def commit_proof(self) -> Optional[CommitProof]:
        return self.block.commit_proof if self.block is not None else None

    def to_dict(self) -> dict:
        return {"instance": self.instance, "committed": self.committed, "duration": self.duration,
                "views": self.views, "messages": self.messages, "bytes": self.bytes,
                "max_sent": max(self.sent_by.values(), default=0), "reason": self.reason}


class ConsensusRouter:
    """Dispatches `bft` traffic of one network to the instance it belongs to"""

    def __init__(self, network: Network):
        self.network = network
        self.routes: Dict[Tuple[str, str], "Replica"] = {}
        self._registered: Set[str] = set()

    @classmethod
    def of(cls, network: Network) -> "ConsensusRouter":
        return network.services.setdefault("bft", cls(network))

    def attach(self, replica: "Replica") -> None:
        self.routes[(replica.node, replica.instance.name)] = replica
        if replica.node not in self._registered:
            self.network.register(replica.node, "bft", self._dispatch)
            self._registered.add(replica.node)

    def detach(self, replica: "Replica") -> None:
        self.routes.pop((replica.node, replica.instance.name), None)

    def _dispatch(self, message: Message) -> None:
        replica = self.routes.get((message.dst, message.payload["instance"]))
        if replica is not None:
            replica.receive(message)


class VoteRegistry:
    """Votes actually cast, and the prepared certificate each view-change vote carried"""

    def __init__(self):
        self.cast: Dict[VoteKey, int] = {}
        self.reports: Dict[Tuple[int, str], Optional[Tuple[int, str]]] = {}
        self.proposals: Dict[int, List[Tuple[str, int]]] = {}
        self.blocks: Dict[str, Block] = {}

    def record(self, key: VoteKey, bit: int) -> None:
        self.cast[key] = self.cast.get(key, 0) | bit


class Replica:
    """One validator's state machine inside an instance"""

    def __init__(self, instance: "GossipBFT", node: str, index: int, behavior: Optional[str]):
        self.instance = instance
        self.node = node
        self.bit = 1 << index
        self.behavior = behavior
        self.rng = instance.sim.node_rng(f"bft:{instance.name}:{node}")
        self.view = 0
        self.known: Dict[VoteKey, int] = {}
        self.blocks: Dict[str, Block] = {}
        # view -> digest voted for; None while the proposal is being checked
        self.voted_prepare: Dict[int, Optional[str]] = {}
        self.voted_commit: Set[int] = set()
        self.vc_cast = 0
        self.lock: Optional[Tuple[int, str]] = None
        self.decided: Optional[str] = None
        self.decided_at: Optional[float] = None
        self.aborted = False
        self.linger = 0
        self.dirty = False
        self.push_scheduled = False
        self.last_push = -math.inf
        self.idle_ticks = 0
        self.pushed_blocks: Set[Tuple[str, str]] = set()
        self.last_reply: Dict[str, float] = {}

    @property
    def equivocating(self) -> bool:
        return self.behavior == "equivocate"

    @property
    def done(self) -> bool:
        return self.aborted or self.decided is not None

    # votes

    def _count(self, key: VoteKey) -> int:
        return bin(self.known.get(key, 0)).count("1")

    def _cast(self, key: VoteKey) -> None:
        self.instance.registry.record(key, self.bit)
        self.known[key] = self.known.get(key, 0) | self.bit
        self._mark_dirty()

    def _mark_dirty(self) -> None:
        self.dirty = True
        self.idle_ticks = 0
        self._schedule_push()

    # view changes

    def start(self) -> None:
        self._enter_view(0)

    def _enter_view(self, view: int) -> None:
        inst = self.instance
        self.view = view
        inst.sim.schedule(inst.config.view_timeout_s, self._on_timeout, view)
        if inst.primary(view) == self.node:
            inst.propose(self, view)
        self._advance()
        self._schedule_push()

    def _on_timeout(self, view: int) -> None:
        if self.done or self.view != view:
            return
        target = max(self.view, self.vc_cast) + 1
        if target >= self.instance.config.max_views:
            self.aborted = True
            logger.debug(f"{self.instance.name}: {self.node} aborts after {target} views")
            self.instance.check_finished()
            return
        self._vote_view_change(target)
        self.instance.sim.schedule(self.instance.config.view_timeout_s, self._on_timeout, view)

    def _vote_view_change(self, target: int) -> None:
        if target <= self.vc_cast:
            return
        self.vc_cast = target
        self.instance.registry.reports[(target, self.node)] = self.lock
        self._cast((target, VIEW_CHANGE, ""))

    # receiving

    def receive(self, message: Message) -> None:
        inst = self.instance
        sets = message.payload["sets"]
        cost = inst.calibration.bls_verify_s * max(1, len(sets))
        done = inst.cpu.charge(self.node, cost)
        inst.sim.schedule_at(done, self._merge, message)

    def _merge(self, message: Message) -> None:
        if self.aborted or message.tampered:
            return
        registry = self.instance.registry
        changed = False
        for key, bits in message.payload["sets"].items():
            bits &= registry.cast.get(key, 0)
            if bits & ~self.known.get(key, 0):
                self.known[key] = self.known.get(key, 0) | bits
                changed = True
        for digest in message.payload["blocks"]:
            if digest not in self.blocks:
                self.blocks[digest] = registry.blocks[digest]
                changed = True
        if changed and self.decided is None:
            self._mark_dirty()
        self._advance()
        if self.decided is not None and not message.payload["decided"]:
            self._reply(message.src)

    def _reply(self, peer: str) -> None:
        inst = self.instance
        if inst.sim.now - self.last_reply.get(peer, -math.inf) < inst.config.gossip_interval_s:
            return
        self.last_reply[peer] = inst.sim.now
        sets = {k: v for k, v in self.known.items() if k[1] == COMMIT and v}
        inst.send(self, peer, "bft:reply", sets, [])

    # progress

    def _advance(self) -> None:
        if self.aborted:
            return
        inst = self.instance
        quorum = inst.validators.quorum
        vc_views = sorted((k[0] for k in self.known if k[1] == VIEW_CHANGE and k[0] > self.view), reverse=True)
        for w in vc_views:
            count = self._count((w, VIEW_CHANGE, ""))
            if count >= inst.validators.f + 1 and self.vc_cast < w and not self.done:
                self._vote_view_change(w)
            if count >= quorum and not self.done:
                self._enter_view(w)
                return
        if self.decided is None:
            self._maybe_prepare()
            self._maybe_commit()
            self._maybe_decide()

    def _maybe_prepare(self) -> None:
        inst = self.instance
        view = self.view
        if view in self.voted_prepare or self.vc_cast > view:
            return
        for digest, justify in inst.registry.proposals.get(view, []):
            if digest not in self.blocks:
                continue
            if self.equivocating:
                if (view, PREPARE, digest) not in self.known or not self.known[(view, PREPARE, digest)] & self.bit:
                    self._cast((view, PREPARE, digest))
                continue
            if self.lock is not None and self.lock[1] != digest and justify < self.lock[0]:
                continue
            self.voted_prepare[view] = None
            done = inst.cpu.charge(self.node, inst.validate_cost(self.blocks[digest]))
            inst.sim.schedule_at(done, self._finish_prepare, view, digest)
            return

    def _finish_prepare(self, view: int, digest: str) -> None:
        if self.done or self.view != view or self.vc_cast > view:
            return
        reason = self.instance.check(self.blocks[digest])
        if reason is not None:
            logger.debug(f"{self.instance.name}: {self.node} rejects {digest[:12]}: {reason}")
            # an invalid proposal convicts the primary
            if view + 1 < self.instance.config.max_views:
                self._vote_view_change(view + 1)
            return
        self.voted_prepare[view] = digest
        self._cast((view, PREPARE, digest))
        self._advance()

    def _maybe_commit(self) -> None:
        quorum = self.instance.validators.quorum
        for key in [k for k in self.known if k[1] == PREPARE]:
            view, _, digest = key
            if self._count(key) < quorum or digest not in self.blocks:
                continue
            if self.lock is None or view > self.lock[0]:
                self.lock = (view, digest)
            if self.equivocating:
                if not self.known.get((view, COMMIT, digest), 0) & self.bit:
                    self._cast((view, COMMIT, digest))
            elif view == self.view and view not in self.voted_commit and self.vc_cast <= view \
                    and self.voted_prepare.get(view) == digest:
                self.voted_commit.add(view)
                self._cast((view, COMMIT, digest))

    def _maybe_decide(self) -> None:
        quorum = self.instance.validators.quorum
        for key in sorted(k for k in self.known if k[1] == COMMIT):
            if self._count(key) >= quorum:
                self.decided = key[2]
                self.decided_at = self.instance.sim.now
                self.instance.decided_view[self.node] = key[0]
                self.linger = self.instance.config.linger_ticks
                self._mark_dirty()
                self.instance.check_finished()
                return

    # gossip

    def _schedule_push(self, at: Optional[float] = None) -> None:
        if self.push_scheduled or self.aborted:
            return
        inst = self.instance
        self.push_scheduled = True
        if at is None:
            at = max(inst.sim.now, self.last_push + inst.config.gossip_interval_s)
        inst.sim.schedule_at(at, self._push)

    def _push(self) -> None:
        self.push_scheduled = False
        if self.aborted:
            return
        inst = self.instance
        if not self.dirty:
            if self.decided is not None:
                if self.linger <= 0:
                    return
                self.linger -= 1
            else:
                self.idle_ticks += 1
                if self.idle_ticks % HEARTBEAT_TICKS:
                    self._schedule_next()
                    return
        self.dirty = False
        self.last_push = inst.sim.now
        fanout = min(inst.config.fanout, len(inst.ids) - 1)
        drawn = self.rng.sample(inst.ids, min(len(inst.ids), fanout + 1))
        targets = [p for p in drawn if p != self.node][:fanout]
        low = max(0, self.view - 1)
        sets = {k: v for k, v in self.known.items() if v and k[0] >= low}
        for peer in targets:
            blocks = []
            for view in (self.view, self.view - 1):
                for digest, _ in inst.registry.proposals.get(view, []):
                    if digest in self.blocks and (peer, digest) not in self.pushed_blocks:
                        self.pushed_blocks.add((peer, digest))
                        blocks.append(digest)
            inst.send(self, peer, "bft:gossip", sets, blocks)
        self._schedule_next()

    def _schedule_next(self) -> None:
        if self.dirty:
            self._schedule_push()
        elif self.decided is None or self.linger > 0:
            self._schedule_push(self.instance.sim.now + self.instance.config.gossip_interval_s)


class GossipBFT:
    """
    One consensus instance over `validators` for a proposed block.

    Args:
        validate: honest validators' acceptance check for a proposal
        validate_cost: simulated seconds an honest validator spends checking a proposal
        reproposal: block a new primary proposes when no prepared block carries over;
            returning None leaves the view without a proposal
        secrets: validator BLS secrets; when given the decided block gets a commit proof
    """

    def __init__(self, sim: Simulator, network: Network, cpu: CpuModel, validators: ValidatorSet,
                 proposal: Block, config: ConsensusConfig, calibration: CalibrationTable,
                 validate: Optional[Validate] = None, validate_cost: Optional[Callable[[Block], float]] = None,
                 reproposal: Optional[Callable[[str], Optional[Block]]] = None, secrets: Optional[Dict[str, int]] = None,
                 name: str = "bft"):
        if proposal.proposer not in validators:
            raise ParameterError(f"proposer {proposal.proposer} is not a validator")
        self.sim = sim
        self.network = network
        self.cpu = cpu
        self.validators = validators
        self.proposal = proposal
        self.config = config
        self.calibration = calibration
        self.validate = validate or (lambda block: None)
        self.validate_cost = validate_cost or (lambda block: 0.0)
        self.reproposal = reproposal
        self.secrets = secrets
        self.name = name
        self.ids = validators.ids()
        self.registry = VoteRegistry()
        self.started_at = sim.now
        self.messages = 0
        self.bytes = 0
        self.sent_by: Dict[str, int] = {}
        self.decided_view: Dict[str, int] = {}
        self._checked: Dict[str, Optional[str]] = {}
        self._set_bytes = vote_set_size(validators.n)
        self._first = self.ids.index(proposal.proposer)
        self.finished: Event = sim.event()
        faults = network.faults
        self.replicas: Dict[str, Replica] = {}
        router = ConsensusRouter.of(network)
        for i, v in enumerate(self.ids):
            behavior = faults.behavior(v)
            if behavior == "silent" or v in network.crashed:
                continue
            replica = Replica(self, v, i, behavior)
            self.replicas[v] = replica
            router.attach(replica)
        self.honest = [v for v in self.ids if not faults.is_byzantine(v) and v not in network.crashed]

    def primary(self, view: int) -> str:
        return self.ids[(self._first + view) % len(self.ids)]

    def check(self, block: Block) -> Optional[str]:
        """Shared, memoized acceptance check; every honest validator reaches the same verdict"""
        digest = block.block_hash
        if digest not in self._checked:
            self._checked[digest] = self.validate(block)
        return self._checked[digest]

    def start(self) -> Event:
        logger.debug(f"{self.name}: consensus among {len(self.ids)} validators, quorum {self.validators.quorum}")
        for v in self.ids:
            if v in self.replicas:
                self.sim.schedule(0.0, self.replicas[v].start)
        if not self.honest:
            self.sim.schedule(0.0, self.check_finished)
        return self.finished

    def propose(self, replica: Replica, view: int) -> None:
        registry = self.registry
        if view in registry.proposals:
            return
        justify = -1
        block = None
        if view == 0:
            block = self.proposal
        else:
            voters = replica.known.get((view, VIEW_CHANGE, ""), 0)
            best: Optional[Tuple[int, str]] = None
            for i, v in enumerate(self.ids):
                if voters >> i & 1:
                    report = registry.reports.get((view, v))
                    if report is not None and (best is None or report[0] > best[0]):
                        best = report
            if best is not None:
                justify, block = best[0], registry.blocks[best[1]]
            else:
                block = self.reproposal(replica.node) if self.reproposal else self.proposal
        if block is None:
            logger.debug(f"{self.name}: view {view} primary {replica.node} has nothing to propose")
            return
        proposals = [block]
        if replica.equivocating:
            proposals.append(replace(block, timestamp=block.timestamp + 1e-3))
        registry.proposals[view] = [(b.block_hash, justify) for b in proposals]
        for b in proposals:
            registry.blocks[b.block_hash] = b
        if replica.equivocating:
            peers = [v for v in self.ids if v != replica.node]
            half = len(peers) // 2
            for i, peer in enumerate(peers):
                chosen = proposals[0] if i < half else proposals[1]
                replica.pushed_blocks.add((peer, chosen.block_hash))
                self.send(replica, peer, "bft:gossip", {}, [chosen.block_hash])
            replica.blocks.update({b.block_hash: b for b in proposals})
        else:
            replica.blocks[block.block_hash] = block
        logger.debug(f"{self.name}: view {view} primary {replica.node} proposes {block.block_hash[:12]}")

    def send(self, replica: Replica, peer: str, kind: str, sets: Dict[VoteKey, int], blocks: List[str]) -> None:
        size = HEADER_BYTES + self._set_bytes * len(sets)
        size += sum(self.registry.blocks[d].wire_size() for d in blocks)
        payload = {"instance": self.name, "sets": dict(sets), "blocks": list(blocks),
                   "decided": replica.decided is not None}
        self.messages += 1
        self.bytes += size
        self.sent_by[replica.node] = self.sent_by.get(replica.node, 0) + 1
        self.network.send(replica.node, peer, kind, payload, size)

    def check_finished(self) -> None:
        if self.finished.triggered:
            return
        live = [self.replicas[v] for v in self.honest if v in self.replicas]
        if not all(r.done for r in live):
            return
        self.finished.succeed(self.outcome())

    def outcome(self) -> ConsensusOutcome:
        decisions = {v: r.decided for v, r in self.replicas.items() if v in self.honest and r.decided}
        if len(set(decisions.values())) > 1:
            raise InvariantViolation(f"{self.name}: honest validators committed different blocks")
        views = max([r.view for r in self.replicas.values()] + [0]) + 1
        if not decisions:
            logger.warning(f"{self.name}: consensus aborted after {views} views")
            return ConsensusOutcome(self.name, False, None, self.started_at, None, views, self.messages,
                                    self.bytes, dict(self.sent_by), {}, "aborted")
        digest = next(iter(decisions.values()))
        block = self.registry.blocks[digest]
        if self.secrets:
            block = block.with_proof(self._commit_proof(digest))
        decided_at = max(self.replicas[v].decided_at for v in decisions)
        return ConsensusOutcome(self.name, True, block, self.started_at, decided_at, views, self.messages,
                                self.bytes, dict(self.sent_by), decisions)

    def _commit_proof(self, digest: str) -> CommitProof:
        view = min(self.decided_view.values())
        bits = self.registry.cast.get((view, COMMIT, digest), 0)
        signers = [v for i, v in enumerate(self.ids) if bits >> i & 1 and v in self.secrets]
        if len(signers) < self.validators.quorum:
            raise InvariantViolation(f"{self.name}: {len(signers)} commit signers below quorum")
        block_hash = self.registry.blocks[digest].block_hash
        return make_commit_proof({v: sign_vote(block_hash, self.secrets[v]) for v in signers})

    def close(self) -> None:
        router = ConsensusRouter.of(self.network)
        for replica in self.replicas.values():
            router.detach(replica)


def bft_consensus(sim: Simulator, network: Network, cpu: CpuModel, validators: ValidatorSet,
                  proposal: Block, config: ConsensusConfig, calibration: CalibrationTable, **kwargs: Any):
    """
    Simulator process agreeing on `proposal`; its value is a ConsensusOutcome.

    Honest validators either all commit the same block or all abort after
    `config.max_views` views.
    """
    instance = GossipBFT(sim, network, cpu, validators, proposal, config, calibration, **kwargs)
    outcome = yield instance.start()
    logger.info(f"{instance.name}: {'commit' if outcome.committed else 'abort'} after {outcome.views} view(s), "
                f"{outcome.messages} messages")
    return outcome


def run_consensus(validators: ValidatorSet, proposal: Block, config: Optional[ConsensusConfig] = None,
                  calibration: Optional[CalibrationTable] = None, network: Optional[NetworkConfig] = None,
                  behaviors: Optional[Dict[str, str]] = None, seed: int = 0, **kwargs: Any) -> ConsensusOutcome:
    """Standalone run on a fresh simulator and network"""
    config = config or ConsensusConfig()
    calibration = calibration or CalibrationTable()
    network = network or NetworkConfig()
    sim = Simulator(seed)
    net = Network(sim, LinkModel(network.latency_s, network.bandwidth_bps), FaultInjector(behaviors, seed=seed))
    cpu = CpuModel(sim)
    process = sim.process(bft_consensus(sim, net, cpu, validators, proposal, config, calibration,
                                        name=f"bft-{seed}", **kwargs), name="bft")
    outcome = sim.run_until(process)
    sim.run()
    return outcome
