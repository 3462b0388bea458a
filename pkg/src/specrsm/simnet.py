"""Deterministic discrete-event network simulation.

A single seeded RNG drives link delays and probabilistic drops, and the
event heap orders strictly by (tick, insertion sequence), so a given
(scenario, seed) pair always produces byte-identical traces.

Fault model: probabilistic per-link drops, bidirectional partitions, fixed
extra per-link delays, crash (volatile state lost, durable records kept) and
recover (node rebuilt through a caller-supplied hook). A heal clears
partitions, drops, and delays at once. No message ever crosses an active
partition, and a crashed node neither receives messages nor fires timers
from its previous incarnation.

Trace format: one record per line, tab-separated (tick, node, kind, detail).
"""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field
from typing import Callable

Pid = int


@dataclass(frozen=True)
class FaultSpec:
    tick: int
    kind: str  # crash | recover | partition | heal | drop | delay
    args: tuple = ()


@dataclass
class SimResult:
    trace: list[str]
    ticks: int
    quiescent: bool
    seed: int


class NodeCtx:
    """Per-node handle through which a node talks to the simulation."""

    def __init__(self, net: "SimNet", pid: Pid) -> None:
        self._net = net
        self.pid = pid

    def now(self) -> int:
        return self._net.now

    def send(self, dst: Pid, msg) -> None:
        self._net.send(self.pid, dst, msg)

    def set_timer(self, delay: int, name: str, data=None) -> None:
        self._net.set_timer(self.pid, delay, name, data)

    def trace(self, kind: str, detail: str) -> None:
        self._net.trace(self.pid, kind, detail)


class SimNet:
    def __init__(self, seed: int = 0, tick_limit: int = 1000,
                 min_delay: int = 1, max_delay: int = 3) -> None:
        self.seed = seed
        self.rng = random.Random(seed)
        self.tick_limit = tick_limit
        self.min_delay = min_delay
        self.max_delay = max_delay
        self.now = 0
        self._seq = 0
        self._heap: list[tuple] = []
        self.nodes: dict[Pid, object] = {}
        self._recover_hooks: dict[Pid, Callable[[], object]] = {}
        self.down: set[Pid] = set()
        self._incarnation: dict[Pid, int] = {}
        self._partitions: list[tuple[frozenset, frozenset]] = []
        self._drop_p: dict[tuple[Pid, Pid], float] = {}
        self._extra_delay: dict[tuple[Pid, Pid], int] = {}
        self._faults: list[FaultSpec] = []
        self._fault_idx = 0
        self.trace_lines: list[str] = []

    # -- construction -----------------------------------------------------

    def add_node(self, pid: Pid, node, recover_hook: Callable[[], object] | None = None) -> None:
        self.nodes[pid] = node
        self._incarnation[pid] = 0
        if recover_hook is not None:
            self._recover_hooks[pid] = recover_hook

    def add_fault(self, tick: int, kind: str, *args) -> None:
        if self._faults and tick < self._faults[-1].tick:
            raise ValueError("fault ticks must be non-decreasing")
        self._faults.append(FaultSpec(tick, kind, args))

    # -- node-facing API ---------------------------------------------------

    def trace(self, pid: Pid | str, kind: str, detail: str) -> None:
        self.trace_lines.append(f"{self.now}\t{pid}\t{kind}\t{detail}")

    def send(self, src: Pid, dst: Pid, msg) -> None:
        t, b, s, bal, cmd = msg.trace_fields()
        self.trace(src, "send", f"{t} {b} {s} {bal} {cmd} {dst}")
        p = self._drop_p.get((src, dst))
        if p is not None and self.rng.random() < p:
            self.trace(src, "drop", f"{t} {dst} reason=lossy")
            return
        delay = self.rng.randint(self.min_delay, self.max_delay)
        delay += self._extra_delay.get((src, dst), 0)
        self._push(self.now + delay, ("msg", dst, src, msg))

    def set_timer(self, pid: Pid, delay: int, name: str, data=None) -> None:
        if delay < 1:
            delay = 1
        self._push(self.now + delay, ("timer", pid, self._incarnation[pid], name, data))

    # -- internals ----------------------------------------------------------

    def _push(self, tick: int, item: tuple) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (tick, self._seq, item))

    def _blocked(self, a: Pid, b: Pid) -> bool:
        for left, right in self._partitions:
            if (a in left and b in right) or (a in right and b in left):
                return True
        return False

    def _apply_fault(self, f: FaultSpec) -> None:
        self.now = max(self.now, f.tick)
        if f.kind == "crash":
            (pid,) = f.args
            self.down.add(pid)
            self.trace(pid, "fault", "crash")
        elif f.kind == "recover":
            (pid,) = f.args
            self.down.discard(pid)
            self._incarnation[pid] += 1
            self.trace(pid, "fault", "recover")
            hook = self._recover_hooks.get(pid)
            if hook is not None:
                node = hook()
                self.nodes[pid] = node
                node.on_start(NodeCtx(self, pid))
        elif f.kind == "partition":
            left, right = f.args
            self._partitions.append((frozenset(left), frozenset(right)))
            self.trace("-", "fault",
                       "partition {%s}|{%s}" % (",".join(map(str, sorted(left))),
                                                ",".join(map(str, sorted(right)))))
        elif f.kind == "heal":
            self._partitions.clear()
            self._drop_p.clear()
            self._extra_delay.clear()
            self.trace("-", "fault", "heal")
        elif f.kind == "drop":
            a, b, p = f.args
            self._drop_p[(a, b)] = p
            self.trace("-", "fault", f"drop {a}->{b} p={p}")
        elif f.kind == "delay":
            a, b, d = f.args
            self._extra_delay[(a, b)] = d
            self.trace("-", "fault", f"delay {a}->{b} +{d}")
        else:
            raise ValueError(f"unknown fault {f.kind}")

    def _dispatch(self, item: tuple) -> None:
        if item[0] == "msg":
            _, dst, src, msg = item
            if dst in self.down:
                self.trace(dst, "drop", f"{msg.trace_fields()[0]} {src} reason=down")
                return
            if self._blocked(src, dst):
                self.trace(dst, "drop", f"{msg.trace_fields()[0]} {src} reason=partition")
                return
            node = self.nodes.get(dst)
            if node is None:
                return
            node.on_message(src, msg)
        else:
            _, pid, incarnation, name, data = item
            if pid in self.down or incarnation != self._incarnation[pid]:
                return
            self.nodes[pid].on_timer(name, data)

    # -- main loop -----------------------------------------------------------

    def run(self) -> SimResult:
        for pid, node in self.nodes.items():
            node.on_start(NodeCtx(self, pid))
        quiescent = True
        while True:
            next_tick = self._heap[0][0] if self._heap else None
            if self._fault_idx < len(self._faults):
                f = self._faults[self._fault_idx]
                if next_tick is None or f.tick <= next_tick:
                    if f.tick > self.tick_limit:
                        break
                    self._fault_idx += 1
                    self._apply_fault(f)
                    continue
            if next_tick is None:
                break
            if next_tick > self.tick_limit:
                quiescent = False
                break
            tick, _, item = heapq.heappop(self._heap)
            self.now = tick
            self._dispatch(item)
        return SimResult(self.trace_lines, self.now, quiescent, self.seed)
