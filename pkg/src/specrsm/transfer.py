"""State transfer: prefix fill for joining replicas, plus gap repair.

A joining replica pulls the trunk prefix it is missing from members of the
old configuration, falling back to any group member, while the new branch
keeps ordering commands; decisions the joiner missed on the new branch are
fetched from the branch initiator. The same machinery doubles as general
anti-entropy: when gossip advertises a longer trunk than we hold, or a
branch's decision stream has holes, we ask for the missing pieces.

Requests run round-robin over the known sources with doubling backoff,
retrying indefinitely; progress resumes whenever a source becomes reachable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .messages import FetchDecisions, TransferReply, TransferRequest
from .types import BranchId, ProcessId


@dataclass
class _PrefixFill:
    bid: BranchId
    sources: list[ProcessId]
    src_idx: int = 0
    sent_at: int | None = None
    timeout: int = 0
    attempts: int = 0


class TransferManager:
    def __init__(self, replica) -> None:
        self.replica = replica
        self.fills: dict[BranchId, _PrefixFill] = {}
        self._last_catchup = -(10 ** 9)
        self._gap_rr = 0

    # -- prefix fill -------------------------------------------------------

    def begin(self, bid: BranchId, old_members, new_config) -> None:
        """Start filling the trunk prefix for a freshly joined branch and ask
        the branch initiator for any decisions we already missed."""
        r = self.replica
        sources: list[ProcessId] = []
        for m in list(old_members) + list(r.membership.cohort.members) + list(r.group_members):
            if m != r.pid and m not in sources:
                sources.append(m)
        if not sources:
            return
        fill = _PrefixFill(bid, sources, timeout=r.timing.transfer_timeout)
        self.fills[bid] = fill
        self._request(fill)
        if bid.initiator != r.pid:
            r.ctx.send(bid.initiator, FetchDecisions(bid, bid.slot_num + 1))

    def _request(self, fill: _PrefixFill) -> None:
        r = self.replica
        dst = fill.sources[fill.src_idx % len(fill.sources)]
        want = max(r.membership.remote_trunk_len, fill.bid.slot_num + 1)
        r.ctx.send(dst, TransferRequest(fill.bid, r.trunk.next, want))
        fill.sent_at = r.ctx.now()

    def on_reply(self, src: ProcessId, msg: TransferReply) -> None:
        r = self.replica
        if msg.trunk_len > r.membership.remote_trunk_len:
            r.membership.remote_trunk_len = msg.trunk_len
        staged = 0
        for slot, cmd in msg.entries:
            if r.trunk.stage(slot, cmd):
                staged += 1
        # The caller advances the trunk after this returns; chase the same
        # source for the next chunk while it keeps being useful.
        for bid, fill in list(self.fills.items()):
            if self._done(fill):
                del self.fills[bid]
            elif staged and not msg.complete:
                fill.attempts = 0
                self._request(fill)

    def _done(self, fill: _PrefixFill) -> bool:
        return self.replica.trunk.next > fill.bid.slot_num

    # -- periodic work -----------------------------------------------------

    def on_tick(self, now: int) -> None:
        r = self.replica
        for bid, fill in list(self.fills.items()):
            if self._done(fill):
                del self.fills[bid]
                continue
            backoff = min(fill.timeout * (1 + fill.attempts // max(1, len(fill.sources))),
                          8 * fill.timeout)
            if fill.sent_at is None or now - fill.sent_at >= backoff:
                fill.src_idx += 1
                fill.attempts += 1
                self._request(fill)
        self._trunk_catchup(now)
        self._gap_fetch(now)

    def _trunk_catchup(self, now: int) -> None:
        """Gossip advertised a longer trunk than we hold: pull the difference
        from the current branch's members (the new configuration) when known,
        otherwise from the cached cohort."""
        r = self.replica
        if r.membership.remote_trunk_len <= r.trunk.next or self.fills:
            return
        if now - self._last_catchup < r.timing.catchup_period:
            return
        rec = r.branches.get(r.trunk.cur_branch)
        members = rec.engine.config.members if rec else r.membership.cohort.members
        candidates = [m for m in members if m != r.pid]
        if not candidates:
            candidates = [m for m in r.group_members if m != r.pid]
        if not candidates:
            return
        dst = candidates[(now // r.timing.catchup_period) % len(candidates)]
        r.ctx.send(dst, TransferRequest(None, r.trunk.next, r.membership.remote_trunk_len))
        self._last_catchup = now

    def _gap_fetch(self, now: int) -> None:
        """A branch has decisions beyond its contiguous prefix: some decide
        messages were lost. Ask another member for the hole."""
        r = self.replica
        for bid, rec in r.branches.items():
            eng = rec.engine
            fu = eng.first_undecided()
            if not eng.decisions or max(eng.decisions) < fu:
                continue
            others = [m for m in eng.config.members if m != r.pid]
            if bid.initiator != r.pid and bid.initiator not in others:
                others.append(bid.initiator)
            if not others:
                continue
            self._gap_rr += 1
            r.ctx.send(others[self._gap_rr % len(others)], FetchDecisions(bid, fu))
