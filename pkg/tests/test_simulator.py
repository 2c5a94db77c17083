import pytest

from src.core.errors import InvariantViolation, ParameterError
from src.core.simulator import CpuModel, FaultInjector, LinkModel, Message, Network, Simulator


def test_timeouts_fire_in_time_then_schedule_order():
    sim = Simulator()
    fired = []
    for label, delay in (("b", 2.0), ("a", 1.0), ("c", 2.0)):
        sim.timeout(delay, label).add_callback(lambda ev: fired.append((sim.now, ev.value)))
    sim.run()
    assert fired == [(1.0, "a"), (2.0, "b"), (2.0, "c")]


def test_process_returns_generator_value():
    sim = Simulator()

    def worker():
        first = yield sim.timeout(1.5, 3)
        second = yield sim.timeout(0.5, 4)
        return first + second

    proc = sim.process(worker(), "worker")
    assert sim.run_until(proc) == 7
    assert sim.now == 2.0


def test_all_of_and_any_of():
    sim = Simulator()
    slow, fast = sim.timeout(3.0, "slow"), sim.timeout(1.0, "fast")
    either = sim.any_of([slow, fast])
    sim.run_until(either)
    assert sim.now == 1.0
    both = sim.all_of([slow, fast])
    assert set(sim.run_until(both).values()) == {"slow", "fast"}
    assert sim.now == 3.0
    assert sim.run_until(sim.all_of([])) == {}


def test_run_until_limit_and_drain():
    sim = Simulator()
    never = sim.event()
    sim.timeout(5.0)
    with pytest.raises(InvariantViolation):
        sim.run_until(never, limit=1.0)
    with pytest.raises(InvariantViolation):
        sim.run_until(never)


def test_run_stops_at_horizon():
    sim = Simulator()
    fired = []
    sim.timeout(10.0).add_callback(lambda ev: fired.append(sim.now))
    assert sim.run(until=4.0) == 4.0
    assert fired == []
    sim.run()
    assert fired == [10.0]


def test_event_misuse():
    sim = Simulator()
    ev = sim.event().succeed(1)
    with pytest.raises(InvariantViolation):
        ev.succeed(2)
    with pytest.raises(ParameterError):
        sim.timeout(-1.0)

    def bad():
        yield 42

    sim.process(bad(), "bad")
    with pytest.raises(ParameterError):
        sim.run()


def test_node_rng_is_stable_and_independent():
    a, b = Simulator(seed=9), Simulator(seed=9)
    assert a.node_rng("su-1").random() == b.node_rng("su-1").random()
    assert a.node_rng("su-1").random() != a.node_rng("su-2").random()
    assert Simulator(seed=10).node_rng("su-1").random() != a.node_rng("su-1").random()


def _network(behaviors=None):
    sim = Simulator()
    net = Network(sim, LinkModel(latency_s=0.01, bandwidth_bps=8000.0), FaultInjector(behaviors))
    inbox = []
    net.register("b", "ping", lambda m: inbox.append((sim.now, m)))
    return sim, net, inbox


def test_delivery_delay_and_fifo():
    sim, net, inbox = _network()
    assert net.send("a", "b", "ping:big", "x", 1000) == pytest.approx(1.01)
    assert net.send("a", "b", "ping:small", "y", 0) == pytest.approx(1.01)
    sim.run()
    assert [m.payload for _, m in inbox] == ["x", "y"]
    assert net.stats.messages == 2
    assert net.stats.per_kind == {"ping": 2}
    assert net.stats.bytes == 1000


def test_crashed_nodes_neither_send_nor_receive():
    sim, net, inbox = _network()
    net.crash("a")
    assert net.send("a", "b", "ping", None, 1) is None
    net.recover("a")
    net.send("a", "b", "ping", None, 1)
    net.crash("b")
    sim.run()
    assert inbox == []
    assert net.stats.dropped == 2


def test_fault_injector_behaviors():
    sim, net, inbox = _network({"s": "silent", "d": "duplicate", "x": "alter"})
    net.faults.alterations["ping"] = lambda payload: payload + 1
    net.send("s", "b", "ping", 1, 1)
    net.send("d", "b", "ping", 1, 1)
    net.send("x", "b", "ping", 1, 1)
    sim.run()
    payloads = sorted((m.src, m.payload, m.tampered) for _, m in inbox)
    assert payloads == [("d", 1, False), ("d", 1, False), ("x", 2, True)]
    with pytest.raises(ParameterError):
        FaultInjector({"n": "lazy"})


def test_honest_message_cannot_arrive_tampered():
    sim, net, _ = _network()
    with pytest.raises(InvariantViolation):
        net.transmit(Message("a", "b", "ping", None, 1, tampered=True))


def test_cpu_work_is_serialized_per_node():
    sim = Simulator()
    cpu = CpuModel(sim)
    assert cpu.charge("db0", 2.0) == 2.0
    assert cpu.charge("db0", 1.0) == 3.0
    assert cpu.charge("db1", 1.0) == 1.0
    sim.run_until(cpu.work("db0", 0.5))
    assert sim.now == 3.5
    assert cpu.busy_total["db0"] == 3.5
