"""The consistent log manager: one replica's branches, trunk, and handlers.

A replica owns the set of live branches, routes protocol messages by branch
id, fans user and reconfiguration submissions across every branch it leads,
creates speculative branches on join messages, merges decided slots into the
trunk, and persists everything needed to survive a crash.

Single-threaded by construction: every entry point runs on the owning
simulation event loop.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum

from . import messages as m
from .durable import (DurableRecord, PersistentLog, RecordKind, bid_from_obj,
                      bid_obj)
from .engine import AcceptorSlotState, BranchEngine, Effects
from .membership import ConfigManager, NoLeader, Registry, select_leader
from .transfer import TransferManager
from .trunk import (DIGEST_INIT, Notification, NotificationKind, Trunk,
                    TrunkBuilder, fold_digest)
from .types import (BranchId, Command, CommandId, CommandKind, Configuration,
                    ProcessId, initial_branch_id, recon_command)


class NotAMember(ValueError):
    """init_replica requires the process to belong to the initial cohort."""


class NotLeader(RuntimeError):
    """This replica currently leads no branch; forward to the known leader."""


class BranchStatus(Enum):
    SPECULATIVE = "SPECULATIVE"
    VALID = "VALID"
    INVALID = "INVALID"


@dataclass
class BranchRecord:
    engine: BranchEngine
    parent: BranchId | None
    status: BranchStatus


@dataclass
class TimingConfig:
    hb_period: int = 5
    suspect_after: int = 15       # 3 missed heartbeats
    gossip_period: int = 10
    policy_period: int = 20
    rejoin_period: int = 2
    transfer_timeout: int = 5
    transfer_chunk: int = 64
    catchup_period: int = 10
    client_retry: int = 30


@dataclass
class _JoinTracker:
    msg: m.Join
    pending: set[ProcessId] = field(default_factory=set)


class Replica:
    def __init__(self, pid: ProcessId, group_members, initial_config: Configuration,
                 *, store: PersistentLog, registry: Registry | None = None,
                 timing: TimingConfig | None = None, policy=None,
                 notification_cb=None, seed_cohort: bool = False) -> None:
        self.pid = pid
        self.group_members = tuple(sorted(group_members))
        self.initial_config = initial_config
        self.timing = timing or TimingConfig()
        self.store = store
        self.registry = registry
        self.policy = policy
        self.notification_cb = notification_cb
        self.ctx = None
        self._recovered = False

        self.branches: dict[BranchId, BranchRecord] = {}
        self.tombstones: set[BranchId] = set()
        self.pending_recons: dict[BranchId, list[Configuration]] = {}
        self.join_pending: dict[BranchId, _JoinTracker] = {}
        self._rejoin_armed = False
        self._last_prepare: dict[BranchId, int] = {}

        b0 = initial_branch_id(initial_config)
        self.trunk = Trunk(b0)
        self.builder = TrunkBuilder(self.trunk, self)
        self.membership = ConfigManager(pid, self.group_members, initial_config,
                                        self.timing.suspect_after)
        self.transfer = TransferManager(self)

        if seed_cohort:
            root = recon_command(b0, initial_config)
            self.trunk.append(root)
            self.store.append(DurableRecord(RecordKind.TRUNK_APPEND, slot=0, cmd=root))
            eng = BranchEngine(pid, b0, None, initial_config, b0.bal, 1)
            self.branches[b0] = BranchRecord(eng, None, BranchStatus.VALID)
            self.store.append(DurableRecord(RecordKind.BRANCH, bid=b0,
                                            config=initial_config))

    # -- lifecycle -----------------------------------------------------------

    def on_start(self, ctx) -> None:
        self.ctx = ctx
        now = ctx.now()
        self.membership.reset_grace(now)
        t = self.timing
        ctx.set_timer(t.hb_period, "hb")
        ctx.set_timer(t.gossip_period, "gossip")
        ctx.set_timer(t.catchup_period, "catchup")
        if self.policy is not None:
            ctx.set_timer(t.policy_period, "policy")
        if self._recovered:
            ctx.trace("recover", f"trunk={self.trunk.next} branches={len(self.branches)}")
        else:
            ctx.trace("trunk_seed", str(self.trunk.next))

    def on_timer(self, name: str, data) -> None:
        if name == "hb":
            self._hb_tick()
        elif name == "gossip":
            self._gossip_tick()
        elif name == "policy":
            self._policy_tick()
        elif name == "rejoin":
            self._rejoin_tick()
        elif name == "catchup":
            self._catchup_tick()

    def on_message(self, src: ProcessId, msg) -> None:
        if isinstance(msg, (m.Prepare, m.Promise, m.Propose, m.Accepted, m.Decide)):
            self.route(src, msg)
        elif isinstance(msg, m.Join):
            self.on_join(src, msg.parent, msg.bid, msg.config)
        elif isinstance(msg, m.JoinAck):
            tracker = self.join_pending.get(msg.bid)
            if tracker is not None:
                tracker.pending.discard(src)
                if not tracker.pending:
                    del self.join_pending[msg.bid]
        elif isinstance(msg, m.ClientSubmit):
            self._on_client_submit(src, msg)
        elif isinstance(msg, m.ReconRequest):
            self._on_recon_request(src, msg)
        elif isinstance(msg, m.Heartbeat):
            self.membership.record_heartbeat(src, self.ctx.now())
        elif isinstance(msg, m.ViewGossip):
            before = self.membership.cohort
            self.membership.on_gossip(msg.cohort, msg.leader, msg.trunk_len,
                                      self.trunk.next)
            if self.membership.cohort != before:
                self.ctx.trace("cohort", self.membership.cohort.render())
        elif isinstance(msg, m.TransferRequest):
            self._serve_transfer(src, msg)
        elif isinstance(msg, m.TransferReply):
            self.transfer.on_reply(src, msg)
            self._advance()
        elif isinstance(msg, m.FetchDecisions):
            self._serve_decisions(src, msg)
        elif isinstance(msg, m.DecisionReply):
            self._on_decision_reply(src, msg)

    # -- routing and engine effects -------------------------------------------

    def route(self, src: ProcessId, msg) -> None:
        """Deliver a branch-tagged message to its engine; unknown or
        discarded branches drop the message silently."""
        rec = self.branches.get(msg.bid)
        if rec is None or rec.engine.dead:
            return
        was_complete = rec.engine.phase1_complete
        eff = rec.engine.handle(src, msg, self.ctx.now())
        self._apply(rec, eff)
        if not was_complete and rec.engine.phase1_complete:
            self._flush_pending_recons(rec)

    def _apply(self, rec: BranchRecord, eff: Effects) -> None:
        for hint in eff.persist:
            if hint[0] == "promise":
                self.store.append(DurableRecord(RecordKind.PROMISE, bid=hint[1],
                                                bal=hint[2]))
            else:
                self.store.append(DurableRecord(RecordKind.ACCEPT, bid=hint[1],
                                                slot=hint[2], bal=hint[3], cmd=hint[4]))
        for slot in eff.decided:
            self.store.append(DurableRecord(RecordKind.DECISION, bid=rec.engine.bid,
                                            slot=slot, cmd=rec.engine.decisions[slot]))
        for dst, msg in eff.sends:
            self.ctx.send(dst, msg)
        for slot in eff.decided:
            self._on_decided(rec, slot)
        if eff.decided:
            self._advance()

    def _on_decided(self, rec: BranchRecord, slot: int) -> None:
        cmd = rec.engine.decisions[slot]
        bid = rec.engine.bid
        self.ctx.trace("decide", f"{bid.render()} {slot} {cmd.render()}")
        if cmd.kind is CommandKind.USER:
            self._notify(Notification(NotificationKind.SPECULATIVE, cmd.id, bid, slot))
        # A decided slot settles the fate of every child rooted there.
        for cbid, crec in self.branches.items():
            if (crec.parent == bid and cbid.slot_num == slot
                    and crec.status is BranchStatus.SPECULATIVE):
                if cmd.kind is CommandKind.RECON and cmd.branch_ref == cbid:
                    self._set_status(cbid, crec, BranchStatus.VALID)
                else:
                    self._set_status(cbid, crec, BranchStatus.INVALID)

    def _set_status(self, bid: BranchId, rec: BranchRecord, status: BranchStatus) -> None:
        rec.status = status
        self.ctx.trace("status", f"{bid.render()} {status.value}")

    # -- submissions ------------------------------------------------------------

    def _led_records(self) -> list[tuple[BranchId, BranchRecord]]:
        suspected = self.membership.suspected(self.ctx.now())
        led = []
        for bid, rec in self.branches.items():
            if rec.engine.dead:
                continue
            try:
                if select_leader(rec.engine.config, suspected) == self.pid:
                    led.append((bid, rec))
            except NoLeader:
                continue
        return led

    def submit_user(self, cmd: Command) -> None:
        """Propose a user command in every branch this replica leads; the
        same command may occupy slots in several branches at once."""
        led = self._led_records()
        if not led:
            raise NotLeader(f"{self.pid} leads no branch")
        now = self.ctx.now()
        for _, rec in led:
            if cmd.id in rec.engine.proposed_ids:
                continue
            self._apply(rec, rec.engine.propose(cmd, now))

    def submit_recon(self, new_config: Configuration) -> None:
        """Spawn a speculative branch for new_config under every branch this
        replica leads: join messages first, then the recon proposal."""
        led = self._led_records()
        if not led:
            raise NotLeader(f"{self.pid} leads no branch")
        now = self.ctx.now()
        for bid, rec in led:
            if rec.engine.phase1_complete:
                self._spawn_recon(rec, new_config)
            else:
                # The branch-ref must carry the post-election ballot and slot;
                # hold the request until phase 1 finishes.
                self.pending_recons.setdefault(bid, []).append(new_config)
                self._maybe_take_over(bid, rec, now)

    def _spawn_recon(self, rec: BranchRecord, new_config: Configuration) -> None:
        eng = rec.engine
        x = BranchId(eng.next_slot, eng.bal, self.pid)
        join = m.Join(eng.bid, x, new_config)
        self.join_pending[x] = _JoinTracker(join, set(new_config.members))
        if not self._rejoin_armed:
            self._rejoin_armed = True
            self.ctx.set_timer(self.timing.rejoin_period, "rejoin")
        for member in new_config.members:
            self.ctx.send(member, join)
        self._apply(rec, eng.propose(recon_command(x, new_config), self.ctx.now()))

    def _flush_pending_recons(self, rec: BranchRecord) -> None:
        for config in self.pending_recons.pop(rec.engine.bid, []):
            self._spawn_recon(rec, config)

    def _on_client_submit(self, src: ProcessId, msg: m.ClientSubmit) -> None:
        cmd = msg.cmd
        occurrence = self.trunk.validated_at.get(cmd.id)
        if occurrence is not None:
            bid, slot = occurrence
            self.ctx.send(cmd.id.client,
                          m.Notify(NotificationKind.VALIDATE.value, cmd.id, bid, slot))
            return
        try:
            self.submit_user(cmd)
        except NotLeader:
            if msg.forwarded:
                return
            leader = self.membership.current_leader(self.ctx.now())
            if leader is not None and leader != self.pid:
                self.ctx.send(leader, m.ClientSubmit(cmd, forwarded=True))

    def _on_recon_request(self, src: ProcessId, msg: m.ReconRequest) -> None:
        try:
            self.submit_recon(msg.config)
        except NotLeader:
            if msg.forwarded:
                return
            leader = self.membership.current_leader(self.ctx.now())
            if leader is not None and leader != self.pid:
                self.ctx.send(leader, m.ReconRequest(msg.config, forwarded=True))

    # -- join handling ------------------------------------------------------------

    def on_join(self, src: ProcessId, parent: BranchId, x: BranchId,
                config: Configuration) -> None:
        """Create the speculative branch a join message announces. Duplicate
        joins are no-ops; tombstoned branches are never resurrected."""
        if self.pid not in config:
            return
        self.ctx.send(src, m.JoinAck(x))
        if x in self.branches or x in self.tombstones:
            return
        merged = self.trunk.get(x.slot_num)
        if merged is not None and not (
                merged.kind is CommandKind.RECON and merged.branch_ref == x):
            # The root slot was already merged with something else; this
            # branch lost before we ever heard of it.
            self.tombstones.add(x)
            self.store.append(DurableRecord(RecordKind.DISCARD, bid=x))
            return
        eng = BranchEngine(self.pid, x, parent, config, x.bal, x.slot_num + 1)
        rec = BranchRecord(eng, parent, BranchStatus.SPECULATIVE)
        self.branches[x] = rec
        self.store.append(DurableRecord(RecordKind.BRANCH, bid=x, parent=parent,
                                        config=config))
        self.ctx.trace("branch",
                       f"{x.render()} parent={parent.render()} config={config.render()}")
        prec = self.branches.get(parent)
        decided = prec.engine.decisions.get(x.slot_num) if prec else merged
        if decided is not None:
            if decided.kind is CommandKind.RECON and decided.branch_ref == x:
                self._set_status(x, rec, BranchStatus.VALID)
            else:
                self._set_status(x, rec, BranchStatus.INVALID)
        if prec is None:
            # Joining from outside the old configuration: fill the missing
            # trunk prefix while the new branch orders commands in parallel.
            self.transfer.begin(x, (), config)
        self._maybe_take_over(x, rec, self.ctx.now())
        self._advance()

    def _maybe_take_over(self, bid: BranchId, rec: BranchRecord, now: int) -> None:
        """Run phase 1 if this replica should lead the branch but has not
        established a ballot; rate-limited so retries back off to the
        heartbeat cadence."""
        eng = rec.engine
        if eng.dead or eng.phase1_complete:
            return
        try:
            leader = select_leader(eng.config, self.membership.suspected(now))
        except NoLeader:
            return
        if leader != self.pid:
            return
        last = self._last_prepare.get(bid)
        if last is not None and now - last < 2 * self.timing.hb_period:
            return
        self._last_prepare[bid] = now
        self._apply(rec, eng.take_over(now))

    # -- trunk host hooks ---------------------------------------------------------

    def branch_engine(self, bid: BranchId) -> BranchEngine | None:
        rec = self.branches.get(bid)
        return rec.engine if rec is not None and not rec.engine.dead else None

    def children_at(self, parent: BranchId, slot: int) -> list[BranchId]:
        return [bid for bid, rec in self.branches.items()
                if rec.parent == parent and bid.slot_num == slot]

    def merge_switch(self, old: BranchId, new: BranchId, slot: int) -> None:
        self.ctx.trace("merge", new.render())
        rec = self.branches.get(new)
        if rec is not None and rec.status is BranchStatus.SPECULATIVE:
            self._set_status(new, rec, BranchStatus.VALID)
        if old in self.branches:
            # Retire the merged-out parent; everything it decided past the
            # reconfiguration slot dies with it, but the winner subtree and
            # its siblings (handled by prune_losers) are not ours to touch.
            siblings = set(self.children_at(old, slot))
            self._discard(old, slot + 1, "merged", mark_invalid=False,
                          skip=siblings | {new})

    def prune_losers(self, losers: list[BranchId], slot: int) -> None:
        for bid in losers:
            self._discard(bid, slot + 1, "loser", mark_invalid=True)

    def _discard(self, bid: BranchId, invalidate_from: int, reason: str,
                 mark_invalid: bool, skip: frozenset | set = frozenset()) -> None:
        rec = self.branches.pop(bid, None)
        self.tombstones.add(bid)
        self.store.append(DurableRecord(RecordKind.DISCARD, bid=bid))
        self.ctx.trace("discard", f"{bid.render()} reason={reason}")
        if rec is not None:
            if mark_invalid and rec.status is BranchStatus.SPECULATIVE:
                self._set_status(bid, rec, BranchStatus.INVALID)
            rec.engine.dead = True
            for slot in sorted(rec.engine.decisions):
                cmd = rec.engine.decisions[slot]
                if cmd.kind is CommandKind.USER and slot >= invalidate_from:
                    self._notify(Notification(NotificationKind.INVALIDATE,
                                              cmd.id, bid, slot))
            self.pending_recons.pop(bid, None)
        for child in [b for b, r in self.branches.items() if r.parent == bid]:
            if child in skip:
                continue
            self._discard(child, invalidate_from, "descendant", mark_invalid=False)

    def on_append(self, slot: int, cmd: Command) -> None:
        self.store.append(DurableRecord(RecordKind.TRUNK_APPEND, slot=slot, cmd=cmd))
        self.ctx.trace("trunk", f"{slot} {cmd.render()}")
        if cmd.kind is CommandKind.RECON and cmd.new_config != self.membership.cohort:
            self.membership.on_recon_merged(cmd.new_config)
            self.ctx.trace("cohort", cmd.new_config.render())

    def emit(self, n: Notification) -> None:
        self._notify(n)

    def _notify(self, n: Notification) -> None:
        self.ctx.trace("notify",
                       f"{n.kind.value} {n.cmd_id.render()} {n.bid.render()} {n.slot}")
        if self.notification_cb is not None:
            self.notification_cb(n)
        # Only the believed leader pushes notifications to the client, so a
        # command yields one authoritative signal rather than one per replica.
        if self.membership.current_leader(self.ctx.now()) == self.pid:
            self.ctx.send(n.cmd_id.client,
                          m.Notify(n.kind.value, n.cmd_id, n.bid, n.slot))

    def _advance(self) -> None:
        self.builder.advance()
        self.builder.apply_prefix(self.trunk.next)
        clipped = self.store.maybe_clip(self.trunk.next, self.trunk.applied_upto,
                                        self._snapshot_body)
        if clipped is not None:
            self.ctx.trace("clip", str(clipped))

    def _snapshot_body(self, upto: int) -> dict:
        """State as of trunk slot upto, recomputed by folding the in-memory
        entries forward from the previous snapshot point. The in-memory trunk
        is never trimmed, so the fold always has its input at hand."""
        snap = self.store.backend.load_snapshot()
        if snap is not None:
            prev = json.loads(snap[1])
            digest = prev["digest"]
            applied = {tuple(x) for x in prev["applied"]}
            start = prev["upto"]
            cur = bid_from_obj(prev["cur_branch"])
        else:
            digest = DIGEST_INIT
            applied = set()
            start = self.trunk.base
            cur = initial_branch_id(self.initial_config)
        for slot in range(start, upto):
            cmd = self.trunk.get(slot)
            if cmd.kind is CommandKind.RECON:
                cur = cmd.branch_ref
            elif cmd.kind is CommandKind.USER:
                key = (cmd.id.client, cmd.id.sequence)
                if key not in applied:
                    applied.add(key)
                    digest = fold_digest(digest, cmd)
        return {"upto": upto, "digest": digest,
                "applied": sorted(list(k) for k in applied),
                "cur_branch": bid_obj(cur)}

    # -- timers ---------------------------------------------------------------------

    def _hb_tick(self) -> None:
        now = self.ctx.now()
        hb = m.Heartbeat()
        for member in self.group_members:
            if member != self.pid:
                self.ctx.send(member, hb)
        for bid, rec in list(self.branches.items()):
            self._maybe_take_over(bid, rec, now)
        self.ctx.set_timer(self.timing.hb_period, "hb")

    def _gossip_tick(self) -> None:
        now = self.ctx.now()
        if self.membership.current_leader(now) == self.pid:
            gossip = m.ViewGossip(self.membership.cohort, self.pid, self.trunk.next)
            for member in self.group_members:
                if member != self.pid:
                    self.ctx.send(member, gossip)
            if self.registry is not None:
                self.registry.update(self.membership.cohort, self.pid, now)
        self.ctx.set_timer(self.timing.gossip_period, "gossip")

    def _policy_tick(self) -> None:
        now = self.ctx.now()
        view = self.membership.group_view(now)
        if view.leader == self.pid:
            target = self.policy(view, {"tick": now, "trunk_len": self.trunk.next})
            if target is not None:
                if not set(target.members) <= set(self.group_members):
                    self.ctx.trace("policy_violation", target.render())
                elif target != view.cohort:
                    try:
                        self.submit_recon(target)
                    except NotLeader:
                        pass
        self.ctx.set_timer(self.timing.policy_period, "policy")

    def _rejoin_tick(self) -> None:
        for x, tracker in list(self.join_pending.items()):
            if x in self.tombstones or not tracker.pending:
                del self.join_pending[x]
                continue
            for member in sorted(tracker.pending):
                self.ctx.send(member, tracker.msg)
        if self.join_pending:
            self.ctx.set_timer(self.timing.rejoin_period, "rejoin")
        else:
            self._rejoin_armed = False

    def _catchup_tick(self) -> None:
        now = self.ctx.now()
        self.transfer.on_tick(now)
        for _, rec in self._led_records():
            self._apply(rec, rec.engine.retransmit_pending(
                now, self.timing.catchup_period))
        self.ctx.set_timer(self.timing.catchup_period, "catchup")

    # -- transfer serving ---------------------------------------------------------------

    def _serve_transfer(self, src: ProcessId, msg: m.TransferRequest) -> None:
        have = msg.have_upto
        if have < self.trunk.base:
            self.ctx.send(src, m.TransferReply((), False, self.trunk.next))
            return
        end = min(self.trunk.next, have + self.timing.transfer_chunk)
        entries = tuple((s, self.trunk.get(s)) for s in range(have, end))
        self.ctx.send(src, m.TransferReply(entries, end == self.trunk.next,
                                           self.trunk.next))

    def _serve_decisions(self, src: ProcessId, msg: m.FetchDecisions) -> None:
        rec = self.branches.get(msg.bid)
        if rec is None:
            return
        entries = tuple(
            (s, rec.engine.decisions[s])
            for s in sorted(rec.engine.decisions) if s >= msg.from_slot
        )[:self.timing.transfer_chunk]
        if entries:
            self.ctx.send(src, m.DecisionReply(msg.bid, entries))

    def _on_decision_reply(self, src: ProcessId, msg: m.DecisionReply) -> None:
        rec = self.branches.get(msg.bid)
        if rec is None or rec.engine.dead:
            return
        newly = []
        for slot, cmd in msg.entries:
            if rec.engine.learn_decision(slot, cmd):
                newly.append(slot)
                self.store.append(DurableRecord(RecordKind.DECISION, bid=msg.bid,
                                                slot=slot, cmd=cmd))
        for slot in newly:
            self._on_decided(rec, slot)
        if newly:
            self._advance()


# -- construction ---------------------------------------------------------------

def init_replica(pid: ProcessId, c0: Configuration, **deps) -> Replica:
    """Boot a cohort member: the root branch engine runs and the trunk holds
    the initial reconfiguration entry."""
    if pid not in c0:
        raise NotAMember(f"{pid} not in {c0.render()}")
    return Replica(pid, deps.pop("group_members", c0.members), c0,
                   seed_cohort=True, **deps)


def init_idle(pid: ProcessId, c0: Configuration, **deps) -> Replica:
    """Boot an idle group member: it knows the initial configuration and
    serves transfer requests, but orders nothing until it is recruited."""
    replica = Replica(pid, deps.pop("group_members", (pid,)), c0,
                      seed_cohort=False, **deps)
    root = recon_command(initial_branch_id(c0), c0)
    replica.trunk.append(root)
    replica.store.append(DurableRecord(RecordKind.TRUNK_APPEND, slot=0, cmd=root))
    return replica


def recover_replica(pid: ProcessId, c0: Configuration, **deps) -> Replica:
    """Rebuild a crashed replica from its durable log: snapshot state, then
    replay of every intact record; the torn tail (if any) was discarded."""
    replica = Replica(pid, deps.pop("group_members", c0.members), c0,
                      seed_cohort=False, **deps)
    replica._recovered = True
    snapshot, records = replica.store.recover()
    trunk = replica.trunk
    if snapshot is not None:
        trunk.base = snapshot["upto"]
        trunk.applied_upto = snapshot["upto"]
        trunk.digest = snapshot["digest"]
        trunk.applied_ids = {CommandId(c, q) for c, q in snapshot["applied"]}
        trunk.cur_branch = bid_from_obj(snapshot["cur_branch"])
        # Commands validated inside the clipped prefix keep their at-most-once
        # standing; the exact slot is gone with the clip.
        for cid in trunk.applied_ids:
            trunk.validated_at[cid] = (trunk.cur_branch, -1)
    for rec in records:
        kind = rec.kind
        if kind is RecordKind.BRANCH:
            if rec.bid in replica.tombstones:
                continue
            eng = BranchEngine(pid, rec.bid, rec.parent, rec.config, rec.bid.bal,
                               rec.bid.slot_num + 1)
            eng.phase1_complete = False
            replica.branches[rec.bid] = BranchRecord(eng, rec.parent,
                                                     BranchStatus.SPECULATIVE)
        elif kind is RecordKind.DISCARD:
            replica.tombstones.add(rec.bid)
            dead = replica.branches.pop(rec.bid, None)
            if dead is not None:
                dead.engine.dead = True
        elif kind is RecordKind.PROMISE:
            eng = _live_engine(replica, rec.bid)
            if eng is not None and rec.bal > eng.promised:
                eng.promised = rec.bal
                if rec.bal > eng.bal:
                    eng.bal = rec.bal
        elif kind is RecordKind.ACCEPT:
            eng = _live_engine(replica, rec.bid)
            if eng is not None:
                eng.acceptor[rec.slot] = AcceptorSlotState(rec.bal, rec.bal, rec.cmd)
                if rec.bal > eng.bal:
                    eng.bal = rec.bal
                if rec.slot >= eng.next_slot:
                    eng.next_slot = rec.slot + 1
        elif kind is RecordKind.DECISION:
            eng = _live_engine(replica, rec.bid)
            if eng is not None:
                eng.learn_decision(rec.slot, rec.cmd)
        elif kind is RecordKind.TRUNK_APPEND:
            if rec.slot == trunk.next:
                trunk.append(rec.cmd)
                cmd = rec.cmd
                if cmd.kind is CommandKind.RECON:
                    trunk.cur_branch = cmd.branch_ref
                    replica.membership.on_recon_merged(cmd.new_config)
                elif cmd.kind is CommandKind.USER and cmd.id not in trunk.validated_at:
                    trunk.validated_at[cmd.id] = (trunk.cur_branch, rec.slot)
    replica.builder.apply_prefix(trunk.next)
    # Re-derive branch statuses from what the durable decisions imply.
    for bid, brec in replica.branches.items():
        prec = replica.branches.get(brec.parent) if brec.parent else None
        decided = (prec.engine.decisions.get(bid.slot_num) if prec
                   else trunk.get(bid.slot_num))
        if decided is not None:
            if decided.kind is CommandKind.RECON and decided.branch_ref == bid:
                brec.status = BranchStatus.VALID
            else:
                brec.status = BranchStatus.INVALID
    return replica


def _live_engine(replica: Replica, bid: BranchId):
    rec = replica.branches.get(bid)
    return rec.engine if rec is not None else None
