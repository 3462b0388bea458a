"""Messages carried by the simulated network.

Every message renders itself into the canonical trace columns
(type, bid, slot, ballot, command); the network appends the destination and
logs the sender as the record's node column. Absent fields render as "-".
"""

from __future__ import annotations

from dataclasses import dataclass

from .types import Ballot, BranchId, Command, CommandId, Configuration

ABSENT = "-"


@dataclass(frozen=True)
class Prepare:
    bid: BranchId
    bal: Ballot
    from_slot: int  # acceptors report accepted values from this global slot up

    def trace_fields(self) -> tuple[str, str, str, str, str]:
        return ("PREPARE", self.bid.render(), str(self.from_slot), self.bal.render(), ABSENT)


@dataclass(frozen=True)
class Promise:
    bid: BranchId
    bal: Ballot
    from_slot: int
    accepted: tuple[tuple[int, Ballot, Command], ...]  # (slot, accepted ballot, value)

    def trace_fields(self):
        return ("PROMISE", self.bid.render(), str(self.from_slot), self.bal.render(),
                f"h{len(self.accepted)}")


@dataclass(frozen=True)
class Propose:
    bid: BranchId
    slot: int
    bal: Ballot
    cmd: Command

    def trace_fields(self):
        return ("PROPOSE", self.bid.render(), str(self.slot), self.bal.render(),
                self.cmd.render())


@dataclass(frozen=True)
class Accepted:
    bid: BranchId
    slot: int
    bal: Ballot

    def trace_fields(self):
        return ("ACCEPTED", self.bid.render(), str(self.slot), self.bal.render(), ABSENT)


@dataclass(frozen=True)
class Decide:
    bid: BranchId
    slot: int
    cmd: Command

    def trace_fields(self):
        return ("DECIDE", self.bid.render(), str(self.slot), ABSENT, self.cmd.render())


@dataclass(frozen=True)
class Join:
    parent: BranchId
    bid: BranchId
    config: Configuration

    def trace_fields(self):
        return ("JOIN", self.bid.render(), self.parent.render(), self.bid.bal.render(),
                self.config.render())


@dataclass(frozen=True)
class JoinAck:
    bid: BranchId

    def trace_fields(self):
        return ("JOINACK", self.bid.render(), ABSENT, ABSENT, ABSENT)


@dataclass(frozen=True)
class Heartbeat:
    def trace_fields(self):
        return ("HEARTBEAT", ABSENT, ABSENT, ABSENT, ABSENT)


@dataclass(frozen=True)
class ViewGossip:
    cohort: Configuration
    leader: int
    trunk_len: int

    def trace_fields(self):
        return ("GOSSIP", ABSENT, str(self.trunk_len), ABSENT,
                f"{self.cohort.render()}/{self.leader}")


@dataclass(frozen=True)
class ClientSubmit:
    cmd: Command
    forwarded: bool = False

    def trace_fields(self):
        return ("SUBMIT", ABSENT, ABSENT, ABSENT, self.cmd.render())


@dataclass(frozen=True)
class ReconRequest:
    config: Configuration
    forwarded: bool = False

    def trace_fields(self):
        return ("RECONREQ", ABSENT, ABSENT, ABSENT, self.config.render())


@dataclass(frozen=True)
class Notify:
    kind: str  # SPECULATIVE | VALIDATE | INVALIDATE
    cmd_id: CommandId
    bid: BranchId
    slot: int

    def trace_fields(self):
        return ("NOTIFY", self.bid.render(), str(self.slot), ABSENT,
                f"{self.kind}:{self.cmd_id.render()}")


@dataclass(frozen=True)
class TransferRequest:
    branch: BranchId | None  # branch whose creation triggered the request
    have_upto: int           # first missing global slot
    want_upto: int           # best known remote trunk length (0 = unknown)

    def trace_fields(self):
        b = self.branch.render() if self.branch else ABSENT
        return ("TREQ", b, str(self.have_upto), ABSENT, f"want={self.want_upto}")


@dataclass(frozen=True)
class TransferReply:
    entries: tuple[tuple[int, Command], ...]  # contiguous ascending slots
    complete: bool                             # reply reaches the responder's trunk end
    trunk_len: int                             # responder's trunk length

    def trace_fields(self):
        first = str(self.entries[0][0]) if self.entries else ABSENT
        return ("TREP", ABSENT, first, ABSENT,
                f"n={len(self.entries)},len={self.trunk_len},c={int(self.complete)}")


@dataclass(frozen=True)
class FetchDecisions:
    bid: BranchId
    from_slot: int

    def trace_fields(self):
        return ("DFETCH", self.bid.render(), str(self.from_slot), ABSENT, ABSENT)


@dataclass(frozen=True)
class DecisionReply:
    bid: BranchId
    entries: tuple[tuple[int, Command], ...]

    def trace_fields(self):
        first = str(self.entries[0][0]) if self.entries else ABSENT
        return ("DREP", self.bid.render(), first, ABSENT, f"n={len(self.entries)}")
