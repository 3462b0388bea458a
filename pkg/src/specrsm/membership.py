"""Cohort tracking, heartbeat failure detection, leader selection, and
pluggable reconfiguration policies.

Leader selection is deterministic (smallest unsuspected cohort member) so
replicas with identical suspicion sets agree on the leader without extra
communication. The in-process Registry stands in for an external lookup
service: clients ask it for the current (cohort, leader).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

from .types import Configuration, ProcessId


class NoLeader(RuntimeError):
    """Every cohort member is suspected; ordering pauses."""


class PolicyViolation(ValueError):
    """A policy proposed members outside the replication group."""


@dataclass(frozen=True)
class GroupView:
    group_members: tuple[ProcessId, ...]
    cohort: Configuration
    leader: ProcessId | None
    suspected: frozenset[ProcessId]


def select_leader(cohort: Configuration, suspected) -> ProcessId:
    """Smallest unsuspected cohort member; identical inputs give identical
    answers at every replica."""
    for m in cohort.members:
        if m not in suspected:
            return m
    raise NoLeader(f"all of {cohort.render()} suspected")


Policy = Callable[[GroupView, Mapping], Optional[Configuration]]


def replace_suspected(view: GroupView, stats: Mapping) -> Configuration | None:
    """Swap suspected cohort members for the smallest unsuspected idle ones."""
    bad = [m for m in view.cohort if m in view.suspected]
    if not bad:
        return None
    idle = [m for m in view.group_members
            if m not in view.cohort and m not in view.suspected]
    keep = [m for m in view.cohort if m not in view.suspected]
    for _ in range(min(len(bad), len(idle))):
        keep.append(idle.pop(0))
    if not keep:
        return None
    new = Configuration(keep)
    return None if new == view.cohort else new


def scale_to(n: int) -> Policy:
    """Grow toward n members using idle recruits, shrink by dropping the
    largest ids; never proposes a config containing suspected members."""

    def policy(view: GroupView, stats: Mapping) -> Configuration | None:
        healthy = [m for m in view.cohort if m not in view.suspected]
        idle = [m for m in view.group_members
                if m not in view.cohort and m not in view.suspected]
        target = list(healthy)
        while len(target) < n and idle:
            target.append(idle.pop(0))
        while len(target) > n:
            target.pop()
        if not target:
            return None
        new = Configuration(target)
        return None if new == view.cohort else new

    return policy


def make_policy(name: str, *args: str) -> Policy:
    if name == "replace-suspected":
        return replace_suspected
    if name == "scale-to":
        return scale_to(int(args[0]))
    raise ValueError(f"unknown policy {name!r}")


@dataclass
class Registry:
    """In-process (cohort, leader) lookup for clients and joiners."""

    cohort: Configuration
    leader: ProcessId
    updated_at: int = 0

    def update(self, cohort: Configuration, leader: ProcessId, now: int) -> None:
        self.cohort = cohort
        self.leader = leader
        self.updated_at = now

    def lookup(self) -> tuple[Configuration, ProcessId]:
        return self.cohort, self.leader


@dataclass
class ConfigManager:
    """Per-replica membership state: cached cohort/leader plus the
    heartbeat-based failure detector (suspect after `suspect_after` silent
    ticks)."""

    pid: ProcessId
    group_members: tuple[ProcessId, ...]
    cohort: Configuration
    suspect_after: int
    last_heard: dict[ProcessId, int] = field(default_factory=dict)
    remote_trunk_len: int = 0

    def __post_init__(self) -> None:
        for m in self.group_members:
            self.last_heard.setdefault(m, 0)

    def reset_grace(self, now: int) -> None:
        for m in self.group_members:
            self.last_heard[m] = now

    def record_heartbeat(self, src: ProcessId, now: int) -> None:
        if src in self.last_heard:
            self.last_heard[src] = now

    def suspected(self, now: int) -> frozenset[ProcessId]:
        return frozenset(
            m for m in self.group_members
            if m != self.pid and now - self.last_heard[m] > self.suspect_after
        )

    def current_leader(self, now: int) -> ProcessId | None:
        try:
            return select_leader(self.cohort, self.suspected(now))
        except NoLeader:
            return None

    def group_view(self, now: int) -> GroupView:
        return GroupView(self.group_members, self.cohort,
                         self.current_leader(now), self.suspected(now))

    def on_recon_merged(self, config: Configuration) -> None:
        self.cohort = config

    def on_gossip(self, cohort: Configuration, leader: ProcessId,
                  trunk_len: int, local_trunk_len: int) -> None:
        """Adopt a gossiped view only when the sender is at least as current
        as we are; always remember the longest advertised trunk."""
        if trunk_len > self.remote_trunk_len:
            self.remote_trunk_len = trunk_len
        if trunk_len >= local_trunk_len:
            self.cohort = cohort
