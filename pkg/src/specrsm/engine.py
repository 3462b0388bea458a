"""Multi-decree Paxos scoped to a single branch.

Phase 1 (prepare/promise) is shared across all of the branch's slots; phase 2
(propose/accepted) runs per slot; a slot is decided once a quorum has
accepted, and the decision is disseminated with an explicit decide message.

The engine is a pure state machine: handlers return what to send, what must
be durable before anything goes out, and which slots became decided. It never
touches the network or the clock directly; callers pass the current tick in
so proposal retransmission can be rate-limited deterministically.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .messages import Accepted, Decide, Prepare, Promise, Propose
from .types import (NOOP, Ballot, BranchId, Command, CommandId, CommandKind,
                    Configuration, ProcessId)


class BadSlot(ValueError):
    """next_slot must be the slot immediately after the branch root."""


class BranchDead(RuntimeError):
    """The branch was discarded; it accepts no further proposals."""


class ProtocolViolation(RuntimeError):
    """Two different decisions for one slot, or a malformed slot reference."""


@dataclass
class AcceptorSlotState:
    promised: Ballot
    accepted_bal: Ballot | None = None
    accepted_val: Command | None = None


@dataclass
class _SlotProposal:
    bal: Ballot
    cmd: Command
    proposed_at: int
    accepted_by: set[ProcessId] = field(default_factory=set)


@dataclass
class Effects:
    """Handler output. Callers persist first, then send, then react to
    the decided slots (in that order)."""

    persist: list[tuple] = field(default_factory=list)
    sends: list[tuple[ProcessId, object]] = field(default_factory=list)
    decided: list[int] = field(default_factory=list)

    def extend(self, other: "Effects") -> None:
        self.persist.extend(other.persist)
        self.sends.extend(other.sends)
        self.decided.extend(other.decided)


class BranchEngine:
    """Agreement stream for one branch.

    cmd_log is the contiguous decided prefix: cmd_log[i] holds global slot
    bid.slot_num + 1 + i. decisions may run ahead of it when decide messages
    arrive out of order.
    """

    def __init__(self, owner: ProcessId, bid: BranchId, parent: BranchId | None,
                 config: Configuration, init_ballot: Ballot, next_slot: int) -> None:
        if next_slot != bid.slot_num + 1:
            raise BadSlot(f"next_slot {next_slot} != root slot {bid.slot_num} + 1")
        self.owner = owner
        self.bid = bid
        self.parent = parent
        self.config = config
        self.bal = init_ballot              # maximum ballot locally known
        self.next_slot = next_slot          # next global slot not proposed locally
        self.cmd_log: list[Command] = []
        self.decisions: dict[int, Command] = {}
        self.acceptor: dict[int, AcceptorSlotState] = {}
        self.promised: Ballot = init_ballot  # branch-wide phase-1 floor
        # The branch inherits its spawning ballot: its proposer skips phase 1.
        self.phase1_complete = owner == init_ballot.proposer
        self.preparing = False
        self.dead = False
        self.proposals: dict[int, _SlotProposal] = {}
        self.buffered: list[Command] = []
        self.proposed_ids: set[CommandId] = set()
        self._promises: dict[ProcessId, Promise] = {}
        self._prepare_from = next_slot

    # -- derived state -------------------------------------------------

    def first_undecided(self) -> int:
        return self.bid.slot_num + 1 + len(self.cmd_log)

    @property
    def quorum(self) -> int:
        return self.config.quorum_size

    # -- proposer side ---------------------------------------------------

    def propose(self, cmd: Command, now: int) -> Effects:
        """Assign cmd the next slot and push it through phase 2, or buffer it
        behind a fresh phase 1 when this process has not established one."""
        if self.dead:
            raise BranchDead(f"branch {self.bid.render()} was discarded")
        if cmd.id is not None:
            self.proposed_ids.add(cmd.id)
        if not self.phase1_complete:
            if cmd.kind is CommandKind.RECON:
                # Reconfigurations are re-stamped by the caller after phase 1;
                # buffering one here would freeze a stale (slot, ballot) pair.
                raise ProtocolViolation("recon proposed before phase 1 completed")
            self.buffered.append(cmd)
            if not self.preparing:
                return self._start_prepare()
            return Effects()
        slot = self.next_slot
        self.next_slot += 1
        return self._send_propose(slot, cmd, now)

    def take_over(self, now: int) -> Effects:
        """Run phase 1 under a fresh higher ballot (new-leader path)."""
        if self.dead or self.phase1_complete:
            return Effects()
        return self._start_prepare()

    def retransmit_pending(self, now: int, min_age: int) -> Effects:
        """Re-send outstanding proposals older than min_age to the members
        that have not accepted them; keeps slots live across message loss."""
        eff = Effects()
        if self.dead:
            return eff
        for slot in sorted(self.proposals):
            prop = self.proposals[slot]
            if now - prop.proposed_at < min_age:
                continue
            msg = Propose(self.bid, slot, prop.bal, prop.cmd)
            for m in self.config.members:
                if m not in prop.accepted_by:
                    eff.sends.append((m, msg))
            prop.proposed_at = now
        return eff

    def _start_prepare(self) -> Effects:
        self.bal = Ballot(self.bal.round + 1, self.owner)
        self.preparing = True
        self._promises = {}
        self._prepare_from = self.first_undecided()
        eff = Effects()
        msg = Prepare(self.bid, self.bal, self._prepare_from)
        for m in self.config.members:
            eff.sends.append((m, msg))
        return eff

    def _send_propose(self, slot: int, cmd: Command, now: int) -> Effects:
        self.proposals[slot] = _SlotProposal(self.bal, cmd, now)
        eff = Effects()
        msg = Propose(self.bid, slot, self.bal, cmd)
        for m in self.config.members:
            eff.sends.append((m, msg))
        return eff

    # -- message handling --------------------------------------------------

    def handle(self, src: ProcessId, msg, now: int) -> Effects:
        if self.dead:
            return Effects()
        if msg.bid != self.bid:
            raise ProtocolViolation("message routed to the wrong branch")
        if isinstance(msg, Prepare):
            return self._on_prepare(src, msg)
        if isinstance(msg, Promise):
            return self._on_promise(src, msg, now)
        if isinstance(msg, Propose):
            return self._on_propose(src, msg)
        if isinstance(msg, Accepted):
            return self._on_accepted(src, msg)
        if isinstance(msg, Decide):
            return self._on_decide(msg)
        raise ProtocolViolation(f"unknown message {type(msg).__name__}")

    def _on_prepare(self, src: ProcessId, msg: Prepare) -> Effects:
        eff = Effects()
        if not msg.bal > self.promised:
            return eff  # stale ballot, dropped silently
        self.promised = msg.bal
        if msg.bal > self.bal:
            self.bal = msg.bal
        for st in self.acceptor.values():
            if msg.bal > st.promised:
                st.promised = msg.bal
        eff.persist.append(("promise", self.bid, msg.bal))
        history = tuple(
            (slot, st.accepted_bal, st.accepted_val)
            for slot, st in sorted(self.acceptor.items())
            if slot >= msg.from_slot and st.accepted_bal is not None
        )
        eff.sends.append((src, Promise(self.bid, msg.bal, msg.from_slot, history)))
        return eff

    def _on_promise(self, src: ProcessId, msg: Promise, now: int) -> Effects:
        eff = Effects()
        if not self.preparing or self.phase1_complete or msg.bal != self.bal:
            return eff
        self._promises[src] = msg
        if len(self._promises) < self.quorum:
            return eff
        self.phase1_complete = True
        self.preparing = False
        # Adopt the highest-ballot accepted value per slot, fill holes with
        # no-ops, then release anything buffered while phase 1 ran.
        best: dict[int, tuple[Ballot, Command]] = {}
        for pm in self._promises.values():
            for slot, abal, aval in pm.accepted:
                cur = best.get(slot)
                if cur is None or abal > cur[0]:
                    best[slot] = (abal, aval)
        fill_upto = self._prepare_from - 1
        if best:
            fill_upto = max(fill_upto, max(best))
        if self.decisions:
            fill_upto = max(fill_upto, max(self.decisions))
        for slot in range(self._prepare_from, fill_upto + 1):
            if slot in self.decisions:
                eff.sends.extend(
                    (m, Decide(self.bid, slot, self.decisions[slot]))
                    for m in self.config.members if m != self.owner
                )
                continue
            cmd = best[slot][1] if slot in best else NOOP
            eff.extend(self._send_propose(slot, cmd, now))
        self.next_slot = max(self.next_slot, fill_upto + 1)
        buffered, self.buffered = self.buffered, []
        for cmd in buffered:
            slot = self.next_slot
            self.next_slot += 1
            eff.extend(self._send_propose(slot, cmd, now))
        return eff

    def _on_propose(self, src: ProcessId, msg: Propose) -> Effects:
        eff = Effects()
        st = self.acceptor.get(msg.slot)
        if st is None:
            st = AcceptorSlotState(self.promised)
            self.acceptor[msg.slot] = st
        if msg.bal < st.promised:
            return eff  # stale ballot, dropped silently
        st.promised = msg.bal
        st.accepted_bal = msg.bal
        st.accepted_val = msg.cmd
        if msg.bal > self.bal:
            self.bal = msg.bal
        if msg.slot >= self.next_slot:
            self.next_slot = msg.slot + 1
        eff.persist.append(("accept", self.bid, msg.slot, msg.bal, msg.cmd))
        eff.sends.append((src, Accepted(self.bid, msg.slot, msg.bal)))
        return eff

    def _on_accepted(self, src: ProcessId, msg: Accepted) -> Effects:
        eff = Effects()
        prop = self.proposals.get(msg.slot)
        if prop is None or prop.bal != msg.bal:
            return eff
        prop.accepted_by.add(src)
        if len(prop.accepted_by) < self.quorum or msg.slot in self.decisions:
            return eff
        if self.learn_decision(msg.slot, prop.cmd):
            eff.decided.append(msg.slot)
        eff.sends.extend(
            (m, Decide(self.bid, msg.slot, prop.cmd))
            for m in self.config.members if m != self.owner
        )
        return eff

    def _on_decide(self, msg: Decide) -> Effects:
        eff = Effects()
        if self.learn_decision(msg.slot, msg.cmd):
            eff.decided.append(msg.slot)
        return eff

    # -- decisions -------------------------------------------------------

    def learn_decision(self, slot: int, cmd: Command) -> bool:
        """Record a decided slot; returns True when it was news. A decided
        slot's value never changes: a conflicting decision is a hard error."""
        if slot <= self.bid.slot_num:
            raise ProtocolViolation(f"slot {slot} precedes branch root {self.bid.slot_num}")
        existing = self.decisions.get(slot)
        if existing is not None:
            if existing != cmd:
                raise ProtocolViolation(
                    f"conflicting decisions at {self.bid.render()} slot {slot}")
            return False
        self.decisions[slot] = cmd
        self.proposals.pop(slot, None)
        if slot >= self.next_slot:
            self.next_slot = slot + 1
        nxt = self.first_undecided()
        while nxt in self.decisions:
            self.cmd_log.append(self.decisions[nxt])
            nxt += 1
        return True


def start_engine(owner: ProcessId, bid: BranchId, parent: BranchId | None,
                 config: Configuration, init_ballot: Ballot, next_slot: int) -> BranchEngine:
    """Start the agreement stream for a freshly created branch."""
    return BranchEngine(owner, bid, parent, config, init_ballot, next_slot)
