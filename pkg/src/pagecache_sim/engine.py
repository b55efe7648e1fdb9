"""Discrete-event engine with a virtual clock.

Logical processes are plain generators. A process yields a command
(``Timeout``, ``Transfer``, ``Event``) and is resumed with the current
virtual time once the command completes. Helper routines that consume
simulated time are generators too and are composed with ``yield from``.

Bandwidth sharing: a :class:`Resource` serves all of its active flows at
``capacity / n`` each, and rates are recomputed only when a flow starts or
finishes.
"""

from __future__ import annotations

import heapq
import itertools
import logging
from typing import Any, Callable, Generator

log = logging.getLogger(__name__)

Proc = Generator[Any, Any, Any]


class SimulationError(RuntimeError):
    pass


class DeadlockError(SimulationError):
    """All live processes are blocked and no event is pending."""


class ContractError(SimulationError, ValueError):
    """A precondition of a simulation primitive was violated."""


class Command:
    def start(self, engine: "Engine", proc: "Process") -> None:
        raise NotImplementedError


class Timeout(Command):
    __slots__ = ("delay",)

    def __init__(self, delay: float):
        self.delay = delay

    def start(self, engine, proc):
        engine._schedule(max(self.delay, 0.0), proc._resume)


class Event(Command):
    """One-shot event. Processes yielding it block until ``succeed``."""

    def __init__(self, engine: "Engine"):
        self.engine = engine
        self.triggered = False
        self.value: Any = None
        self._waiters: list[Process] = []

    def succeed(self, value: Any = None) -> None:
        if self.triggered:
            raise SimulationError("event already triggered")
        self.triggered = True
        self.value = value
        for proc in self._waiters:
            self.engine._schedule(0.0, proc._resume)
        self._waiters.clear()

    def start(self, engine, proc):
        if self.triggered:
            engine._schedule(0.0, proc._resume)
        else:
            proc.state = "blocked"
            self._waiters.append(proc)


class _Flow:
    __slots__ = ("amount", "finish", "callback")

    def __init__(self, amount: float, finish: float, callback: Callable[[], None]):
        self.amount = amount
        self.finish = finish
        self.callback = callback


class Resource:
    """A fair-shared capacity (units per second).

    Progress is tracked in virtual time: ``vtime`` is the service every
    active flow has received so far, so a flow added at ``vtime = v`` with
    ``amount`` units completes when ``vtime`` reaches ``v + amount``. Flows
    sit in a heap keyed by that finish tag, which keeps each arrival or
    departure at O(log n).
    """

    def __init__(self, engine: "Engine", name: str, capacity: float):
        if capacity <= 0:
            raise ContractError(f"resource {name!r}: capacity must be > 0")
        self.engine = engine
        self.name = name
        self.capacity = float(capacity)
        self.flows: list[tuple[float, int, _Flow]] = []
        self.vtime = 0.0
        self.served = 0.0
        self.transfers = 0
        self.recomputations = 0
        self._last_update = 0.0
        self._version = 0
        self._seq = itertools.count()

    def __repr__(self):
        return f"Resource({self.name!r}, {self.capacity:g}/s, {len(self.flows)} flows)"

    @property
    def rate(self) -> float:
        """Current per-flow rate."""
        return self.capacity / len(self.flows) if self.flows else self.capacity

    def transfer(self, amount: float, latency: float = 0.0) -> "Transfer":
        return Transfer(self, amount, latency)

    def _advance(self) -> None:
        now = self.engine.now
        dt = now - self._last_update
        if dt > 0 and self.flows:
            self.vtime += self.rate * dt
            self.served += self.capacity * dt
        self._last_update = now

    def _reschedule(self) -> None:
        self.recomputations += 1
        self._version += 1
        if not self.flows:
            self.vtime = 0.0  # idle: restart the virtual clock to keep tags small
            return
        delay = max(self.flows[0][0] - self.vtime, 0.0) / self.rate
        version = self._version
        self.engine._schedule(delay, lambda: self._on_completion(version))

    def _add(self, amount: float, callback: Callable[[], None]) -> None:
        self._advance()
        self.transfers += 1
        flow = _Flow(amount, self.vtime + amount, callback)
        heapq.heappush(self.flows, (flow.finish, next(self._seq), flow))
        self._reschedule()

    def _on_completion(self, version: int) -> None:
        if version != self._version:
            return
        self._advance()
        nearest = self.flows[0][0]
        done = []
        # equal-sized flows started together finish in the same event
        while self.flows and self.flows[0][0] - nearest <= 1e-9 * max(self.flows[0][2].amount, 1.0):
            done.append(heapq.heappop(self.flows)[2])
        self._reschedule()
        for flow in done:
            flow.callback()


class Transfer(Command):
    __slots__ = ("resource", "amount", "latency")

    def __init__(self, resource: Resource, amount: float, latency: float = 0.0):
        if amount < 0:
            raise ContractError(f"negative transfer amount {amount} on {resource.name}")
        self.resource = resource
        self.amount = amount
        self.latency = latency

    def start(self, engine, proc):
        proc.state = "transferring"
        if self.latency > 0:
            engine._schedule(self.latency, lambda: self._begin(engine, proc))
        else:
            self._begin(engine, proc)

    def _begin(self, engine, proc):
        if self.amount == 0:
            engine._schedule(0.0, proc._resume)
        else:
            self.resource._add(self.amount, proc._resume)


class Process:
    def __init__(self, engine: "Engine", gen: Proc, name: str, pid: int, daemon: bool):
        self.engine = engine
        self.gen = gen
        self.name = name
        self.pid = pid
        self.daemon = daemon
        self.state = "runnable"
        self.value: Any = None
        self.done = Event(engine)
        self._started = False

    def __repr__(self):
        return f"<Process {self.pid}:{self.name} {self.state}>"

    def _resume(self) -> None:
        self.state = "running"
        try:
            if self._started:
                cmd = self.gen.send(self.engine.now)
            else:
                self._started = True
                cmd = next(self.gen)
        except StopIteration as stop:
            self.state = "terminated"
            self.value = stop.value
            self.engine._terminated(self)
            self.done.succeed(stop.value)
            return
        if not isinstance(cmd, Command):
            raise SimulationError(f"{self!r} yielded {cmd!r}, expected a Command")
        if isinstance(cmd, Timeout):
            self.state = "sleeping"
        cmd.start(self.engine, self)


class Engine:
    def __init__(self):
        self.now = 0.0
        self._queue: list[tuple[float, int, Callable[[], None]]] = []
        self._seq = itertools.count()
        self._pids = itertools.count()
        self.processes: list[Process] = []
        self._live = 0
        self.events_processed = 0

    def _schedule(self, delay: float, callback: Callable[[], None]) -> None:
        heapq.heappush(self._queue, (self.now + delay, next(self._seq), callback))

    def _terminated(self, proc: Process) -> None:
        if not proc.daemon:
            self._live -= 1

    def timeout(self, delay: float) -> Timeout:
        return Timeout(delay)

    sleep = timeout

    def event(self) -> Event:
        return Event(self)

    def resource(self, name: str, capacity: float) -> Resource:
        return Resource(self, name, capacity)

    def spawn(self, gen: Proc, name: str | None = None, daemon: bool = False) -> Process:
        pid = next(self._pids)
        proc = Process(self, gen, name or f"proc{pid}", pid, daemon)
        self.processes.append(proc)
        if not daemon:
            self._live += 1
        self._schedule(0.0, proc._resume)
        return proc

    def run(self, until: float | None = None) -> float:
        """Run until every non-daemon process has terminated.

        Daemon processes (e.g. background flushing) never keep the run alive.
        Returns the final virtual time.
        """
        while self._live > 0:
            if not self._queue:
                blocked = [p for p in self.processes if p.state != "terminated"]
                raise DeadlockError(f"no pending events at t={self.now}; live processes: {blocked}")
            t, _, callback = self._queue[0]
            if until is not None and t > until:
                self.now = until
                break
            heapq.heappop(self._queue)
            if t < self.now:
                raise SimulationError(f"clock went backwards: {t} < {self.now}")
            self.now = t
            self.events_processed += 1
            callback()
        return self.now

    run_until_idle = run

    def call(self, gen: Proc, name: str | None = None) -> Any:
        """Spawn ``gen``, run the engine, and return the generator's result."""
        proc = self.spawn(gen, name=name)
        self.run()
        if proc.state != "terminated":
            raise SimulationError(f"{proc!r} did not finish")
        return proc.value
