"""Total-order construction: extend the globally agreed prefix by consuming
decided slots of the current branch, switch branches when a decided
reconfiguration matches a child, prune losing subtrees, and surface
validate/invalidate notifications.

The builder is host-agnostic: the owning replica supplies branch lookup,
discard, and notification hooks, which keeps the merge loop unit-testable
against a fake host.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .engine import ProtocolViolation
from .types import BranchId, Command, CommandId, CommandKind


class NotificationKind(Enum):
    SPECULATIVE = "SPECULATIVE"
    VALIDATE = "VALIDATE"
    INVALIDATE = "INVALIDATE"


@dataclass(frozen=True)
class Notification:
    kind: NotificationKind
    cmd_id: CommandId
    bid: BranchId
    slot: int


DIGEST_INIT = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK = 0xFFFFFFFFFFFFFFFF


def fold_digest(digest: int, cmd: Command) -> int:
    """Order-sensitive FNV-1a fold of a command into a state digest."""
    for b in cmd.render().encode():
        digest = ((digest ^ b) * _FNV_PRIME) & _MASK
    return digest


class Trunk:
    """Globally agreed prefix. Slots below `base` were clipped into a
    snapshot; entries[i] holds global slot base + i."""

    def __init__(self, cur_branch: BranchId, base: int = 0) -> None:
        self.base = base
        self.entries: list[Command] = []
        self.cur_branch = cur_branch
        self.staged: dict[int, Command] = {}
        self.validated_at: dict[CommandId, tuple[BranchId, int]] = {}
        self.applied_ids: set[CommandId] = set()
        self.applied_upto = base
        self.digest = DIGEST_INIT

    @property
    def next(self) -> int:
        return self.base + len(self.entries)

    def get(self, slot: int) -> Command | None:
        if self.base <= slot < self.next:
            return self.entries[slot - self.base]
        return None

    def append(self, cmd: Command) -> None:
        self.entries.append(cmd)

    def stage(self, slot: int, cmd: Command) -> bool:
        """Buffer a transferred entry for a future slot; stale slots drop."""
        if slot < self.next:
            return False
        self.staged[slot] = cmd
        return True

    def digest_hex(self) -> str:
        return f"{self.digest:016x}"


class TrunkBuilder:
    """Merge loop bound to a host. The host must provide:

    branch_engine(bid) -> engine | None       live engine lookup
    children_at(parent_bid, slot) -> [bid]    live children rooted there
    merge_switch(old_bid, new_bid, slot)      retire old, mark new valid
    prune_losers(bids, slot)                  invalidate + discard subtrees
    on_append(slot, cmd)                      persistence / traces / views
    emit(notification)                        client + trace delivery
    """

    def __init__(self, trunk: Trunk, host) -> None:
        self.trunk = trunk
        self.host = host

    def advance(self) -> int:
        """Consume every decided or transferred slot that extends the trunk.
        Total: stops as soon as the next slot has no agreed value locally."""
        trunk = self.trunk
        appended = 0
        while True:
            nxt = trunk.next
            cmd = trunk.staged.pop(nxt, None)
            eng = self.host.branch_engine(trunk.cur_branch)
            if eng is not None:
                idx = nxt - trunk.cur_branch.slot_num  # 1-based into cmd_log
                if 1 <= idx <= len(eng.cmd_log):
                    local = eng.cmd_log[idx - 1]
                    if cmd is not None and cmd != local:
                        raise ProtocolViolation(
                            f"transferred entry disagrees with decision at slot {nxt}")
                    cmd = local
            if cmd is None:
                break
            children = self.host.children_at(trunk.cur_branch, nxt)
            if cmd.kind is CommandKind.RECON:
                winner = cmd.branch_ref
                losers = [b for b in children if b != winner]
                self.host.merge_switch(trunk.cur_branch, winner, nxt)
                if losers:
                    self.host.prune_losers(losers, nxt)
                trunk.cur_branch = winner
            elif children:
                # A user command at a branching slot invalidates every child
                # rooted there.
                self.host.prune_losers(children, nxt)
            trunk.append(cmd)
            self.host.on_append(nxt, cmd)
            if cmd.kind is CommandKind.USER and cmd.id not in trunk.validated_at:
                trunk.validated_at[cmd.id] = (trunk.cur_branch, nxt)
                self.host.emit(Notification(
                    NotificationKind.VALIDATE, cmd.id, trunk.cur_branch, nxt))
            appended += 1
        return appended

    def apply_prefix(self, upto: int) -> int:
        """Apply user entries in [watermark, upto) to the state digest, at
        most once per command id; repeats act as no-ops."""
        trunk = self.trunk
        if upto > trunk.next:
            raise ValueError(f"apply_prefix({upto}) beyond trunk end {trunk.next}")
        applied = 0
        for slot in range(max(trunk.applied_upto, trunk.base), upto):
            cmd = trunk.entries[slot - trunk.base]
            if cmd.kind is CommandKind.USER and cmd.id not in trunk.applied_ids:
                trunk.applied_ids.add(cmd.id)
                trunk.digest = fold_digest(trunk.digest, cmd)
                applied += 1
        if upto > trunk.applied_upto:
            trunk.applied_upto = upto
        return applied
