"""Scenario execution: wires replicas, clients, and the admin driver onto the
simulated network, injects faults, and computes summary statistics.

Clients resubmit a command (same id) until a validate notification arrives;
at-most-once application makes the retries harmless. The admin driver routes
reconfiguration requests to the leader the registry currently advertises,
unless the scenario pins an explicit target.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from . import messages as m
from .durable import FileBackend, MemoryBackend, PersistentLog
from .membership import Registry, make_policy, select_leader
from .replica import TimingConfig, init_idle, init_replica, recover_replica
from .scenario import Scenario
from .simnet import SimNet
from .trunk import NotificationKind
from .types import Command, CommandId, Configuration, user_command

ADMIN_PID = 99


class ClientNode:
    """Scenario client: submits scheduled payloads to the advertised leader
    and retries until each command is validated."""

    def __init__(self, cid: int, submits: list[tuple[int, bytes]],
                 registry: Registry, retry_period: int) -> None:
        self.cid = cid
        self.submits = submits
        self.registry = registry
        self.retry_period = retry_period
        self.pending: dict[CommandId, Command] = {}
        self.done: set[CommandId] = set()
        self.ctx = None
        self._retry_armed = False

    def on_start(self, ctx) -> None:
        self.ctx = ctx
        for seq, (tick, payload) in enumerate(self.submits, start=1):
            cmd = user_command(CommandId(self.cid, seq), payload)
            ctx.set_timer(max(tick, 1), "submit", cmd)

    def on_timer(self, name: str, data) -> None:
        if name == "submit":
            self._submit(data)
        elif name == "retry":
            self._retry_armed = False
            for cid in sorted(self.pending, key=lambda c: c.sequence):
                self._submit(self.pending[cid])

    def _submit(self, cmd: Command) -> None:
        if cmd.id in self.done:
            return
        self.pending[cmd.id] = cmd
        _, leader = self.registry.lookup()
        self.ctx.trace("submit", cmd.render())
        self.ctx.send(leader, m.ClientSubmit(cmd))
        if not self._retry_armed:
            self._retry_armed = True
            self.ctx.set_timer(self.retry_period, "retry")

    def on_message(self, src: int, msg) -> None:
        if isinstance(msg, m.Notify) and msg.kind == NotificationKind.VALIDATE.value:
            self.pending.pop(msg.cmd_id, None)
            self.done.add(msg.cmd_id)


class AdminNode:
    """Delivers scripted reconfiguration requests."""

    def __init__(self, recons: list[tuple[int, int | None, Configuration]],
                 registry: Registry) -> None:
        self.recons = recons
        self.registry = registry

    def on_start(self, ctx) -> None:
        self.ctx = ctx
        for tick, target, cfg in self.recons:
            ctx.set_timer(max(tick, 1), "recon", (target, cfg))

    def on_timer(self, name: str, data) -> None:
        target, cfg = data
        if target is None:
            _, target = self.registry.lookup()
        self.ctx.trace("recon_request", f"{cfg.render()} -> {target}")
        self.ctx.send(target, m.ReconRequest(cfg))

    def on_message(self, src: int, msg) -> None:
        pass


@dataclass
class RunResult:
    trace: list[str]
    net: SimNet
    registry: Registry
    replicas: dict[int, object]   # live node objects at end of run
    clients: dict[int, ClientNode]
    stores: dict[int, PersistentLog]
    ticks: int
    quiescent: bool
    seed: int


def build_simulation(scenario: Scenario, seed: int, *, backend: str = "mem",
                     clip_limit: int = 1024, tick_limit: int | None = None,
                     timing: TimingConfig | None = None,
                     data_dir: str | None = None) -> tuple[SimNet, RunResult]:
    timing = timing or TimingConfig()
    if scenario.timing_overrides:
        timing = replace(timing, **dict(scenario.timing_overrides))
    net = SimNet(seed, tick_limit or scenario.tick_limit)
    registry = Registry(scenario.cohort, select_leader(scenario.cohort, ()))
    policy = make_policy(*scenario.policy) if scenario.policy else None

    stores: dict[int, PersistentLog] = {}
    for pid in scenario.group:
        if backend == "file":
            if data_dir is None:
                raise ValueError("file backend needs data_dir")
            be = FileBackend(data_dir, f"replica-{pid}-{seed}")
        else:
            be = MemoryBackend()
        stores[pid] = PersistentLog(be, clip_limit)

    deps = dict(registry=registry, timing=timing, policy=policy)
    for pid in scenario.group:
        if pid in scenario.cohort:
            node = init_replica(pid, scenario.cohort, group_members=scenario.group,
                                store=stores[pid], **deps)
        else:
            node = init_idle(pid, scenario.cohort, group_members=scenario.group,
                             store=stores[pid], **deps)

        def hook(pid=pid):
            return recover_replica(pid, scenario.cohort,
                                   group_members=scenario.group,
                                   store=stores[pid], **deps)

        net.add_node(pid, node, hook)

    submits: dict[int, list[tuple[int, bytes]]] = {}
    recons: list[tuple[int, int | None, Configuration]] = []
    for ev in scenario.events:
        if ev.kind == "submit":
            submits.setdefault(ev.args[0], []).append((ev.tick, ev.args[1]))
        elif ev.kind == "recon":
            recons.append((ev.tick, None, ev.args[0]))
        elif ev.kind == "recon_at":
            recons.append((ev.tick, ev.args[0], ev.args[1]))
        else:
            net.add_fault(ev.tick, ev.kind, *ev.args)

    clients = {}
    for cid in sorted(submits):
        client = ClientNode(cid, submits[cid], registry, timing.client_retry)
        clients[cid] = client
        net.add_node(cid, client)
    if recons:
        net.add_node(ADMIN_PID, AdminNode(recons, registry))

    result = RunResult([], net, registry, {}, clients, stores, 0, False, seed)
    return net, result


def run_scenario(scenario: Scenario, seed: int, **opts) -> RunResult:
    net, result = build_simulation(scenario, seed, **opts)
    sim = net.run()
    result.trace = sim.trace
    result.ticks = sim.ticks
    result.quiescent = sim.quiescent
    result.replicas = {pid: net.nodes[pid] for pid in scenario.group}
    return result


def stats_from_trace(trace: list[str]) -> dict:
    """Summary counters: decisions/tick, messages/decision, merge counts, and
    how many commands a merge carried into the trunk without re-proposal."""
    decided: set[tuple[str, str]] = set()
    messages = 0
    merges = 0
    ticks = 0
    decide_tick: dict[tuple[str, str, str], int] = {}
    merge_tick: dict[tuple[str, str], int] = {}
    trunk_after_merge = 0
    node_trunks: dict[str, list[tuple[int, str, str]]] = {}
    for line in trace:
        tick_s, node, kind, detail = line.split("\t", 3)
        tick = int(tick_s)
        ticks = max(ticks, tick)
        if kind == "send":
            messages += 1
        elif kind == "decide":
            bid, slot, _ = detail.split(" ", 2)
            decided.add((bid, slot))
            decide_tick[(node, bid, slot)] = tick
        elif kind == "merge":
            merges += 1
            merge_tick[(node, detail)] = tick
    # Count trunk entries whose decision at that node pre-dated the merge of
    # their branch: those are speculative wins.
    for (node, bid), mt in merge_tick.items():
        for (dnode, dbid, slot), dt in decide_tick.items():
            if dnode == node and dbid == bid and dt <= mt:
                trunk_after_merge += 1
    return {
        "ticks": ticks,
        "messages": messages,
        "decisions": len(decided),
        "merges": merges,
        "speculative_carryover": trunk_after_merge,
        "decisions_per_tick": round(len(decided) / ticks, 4) if ticks else 0.0,
        "messages_per_decision": round(messages / len(decided), 2) if decided else 0.0,
    }
