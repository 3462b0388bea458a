"""Immutable protocol value types and their orderings.

ProcessId is a plain int; everything else is a frozen dataclass so values
can be shared freely between replicas and used as dict keys. Each type has
a canonical textual rendering used in traces: ballots render as "round.pid",
branch ids as "(slot,ballot,initiator)".
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Iterator

ProcessId = int


class EmptyConfiguration(ValueError):
    """A configuration must contain at least one member."""


@dataclass(frozen=True, order=True)
class Ballot:
    """Proposal number, totally ordered by (round, proposer)."""

    round: int
    proposer: ProcessId

    def render(self) -> str:
        return f"{self.round}.{self.proposer}"


def ballot_less(a: Ballot, b: Ballot) -> bool:
    """Strict total order on ballots: round first, proposer id breaks ties."""
    return (a.round, a.proposer) < (b.round, b.proposer)


@dataclass(frozen=True, init=False)
class Configuration:
    """Ordered, duplicate-free, non-empty member set."""

    members: tuple[ProcessId, ...]

    def __init__(self, members: Iterable[ProcessId]) -> None:
        uniq = tuple(sorted(set(members)))
        if not uniq:
            raise EmptyConfiguration("configuration has no members")
        object.__setattr__(self, "members", uniq)

    @property
    def quorum_size(self) -> int:
        return len(self.members) // 2 + 1

    def __contains__(self, pid: object) -> bool:
        return pid in self.members

    def __iter__(self) -> Iterator[ProcessId]:
        return iter(self.members)

    def __len__(self) -> int:
        return len(self.members)

    def render(self) -> str:
        return "{" + ",".join(str(m) for m in self.members) + "}"


@dataclass(frozen=True)
class BranchId:
    """Identity of a branch: the parent slot it roots at, the ballot it was
    proposed under, and the leader that proposed it."""

    slot_num: int
    bal: Ballot
    initiator: ProcessId

    def render(self) -> str:
        return f"({self.slot_num},{self.bal.render()},{self.initiator})"


def initial_branch_id(c0: Configuration) -> BranchId:
    """Root branch id: the smallest member of the initial configuration
    seeds ballot zero and counts as the branch initiator."""
    q = c0.members[0]
    return BranchId(0, Ballot(0, q), q)


@dataclass(frozen=True)
class CommandId:
    """Client-assigned command identity; equal ids denote the same logical
    command no matter how many slots it ends up occupying."""

    client: ProcessId
    sequence: int

    def render(self) -> str:
        return f"{self.client}.{self.sequence}"


class CommandKind(Enum):
    USER = "user"
    RECON = "recon"
    NOOP = "noop"


@dataclass(frozen=True)
class Command:
    """Log entry: user payload, reconfiguration proposal, or filler no-op.

    Exactly the fields for the declared kind must be set.
    """

    kind: CommandKind
    id: CommandId | None = None
    payload: bytes | None = None
    new_config: Configuration | None = None
    branch_ref: BranchId | None = None

    def __post_init__(self) -> None:
        if self.kind is CommandKind.USER:
            ok = (self.id is not None and self.payload is not None
                  and self.new_config is None and self.branch_ref is None)
        elif self.kind is CommandKind.RECON:
            ok = (self.id is None and self.payload is None
                  and self.new_config is not None and self.branch_ref is not None)
        else:
            ok = (self.id, self.payload, self.new_config, self.branch_ref) == (None,) * 4
        if not ok:
            raise ValueError(f"malformed {self.kind.value} command")

    def render(self) -> str:
        if self.kind is CommandKind.USER:
            return f"user:{self.id.render()}:{self.payload.hex()}"
        if self.kind is CommandKind.RECON:
            return f"recon:{self.branch_ref.render()}:{self.new_config.render()}"
        return "noop"


def user_command(cid: CommandId, payload: bytes) -> Command:
    return Command(CommandKind.USER, id=cid, payload=payload)


def recon_command(branch_ref: BranchId, new_config: Configuration) -> Command:
    return Command(CommandKind.RECON, new_config=new_config, branch_ref=branch_ref)


NOOP = Command(CommandKind.NOOP)
