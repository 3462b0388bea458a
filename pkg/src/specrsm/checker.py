"""Trace invariant checker.

Single pass over a harness trace, verifying:

 - branch agreement: one command per (branch, slot), across every node
 - trunk agreement: one command per global slot, across every node
 - trunk contiguity/stability per node: appends are gap-free and monotone,
   and a recovery restores exactly the durably appended prefix
 - status monotonicity: speculative -> valid | invalid, both terminal
 - notification exactness: validate exactly on a command's first trunk
   occurrence at that node, at most once ever; no occurrence both validated
   and invalidated; invalidate only for occurrences the node decided
 - phase-1 sharing: every propose ballot is either the branch's inherited
   ballot or was established by an earlier prepare on that branch
 - merge payoff: a node never re-proposes a slot it already decided

The verdict carries every violation found (the first one first); a verdict
with no violations is a PASS.
"""

from __future__ import annotations

from dataclasses import dataclass, field


class TraceParseError(ValueError):
    pass


@dataclass(frozen=True)
class Violation:
    line_no: int
    rule: str
    message: str


@dataclass
class Verdict:
    ok: bool
    violations: list[Violation] = field(default_factory=list)
    lines: int = 0

    def first(self) -> Violation | None:
        return self.violations[0] if self.violations else None


_STATUS_ORDER = {"SPECULATIVE": 0, "VALID": 1, "INVALID": 1}


def _bid_ballot(bid: str) -> str:
    # "(slot,round.pid,initiator)" -> "round.pid"
    try:
        return bid[1:-1].split(",")[1]
    except IndexError:
        raise TraceParseError(f"malformed branch id {bid!r}")


def check_trace(lines) -> Verdict:
    violations: list[Violation] = []
    branch_decision: dict[tuple[str, str], str] = {}
    trunk_global: dict[str, str] = {}
    trunk_next: dict[str, int] = {}
    trunk_seen_user: dict[str, set[str]] = {}
    expected_validate: dict[tuple[str, str], tuple[int, str, str]] = {}
    validated: dict[tuple[str, str], tuple[str, str]] = {}
    invalidated: dict[tuple[str, str], set[tuple[str, str]]] = {}
    node_decides: dict[tuple[str, str, str], tuple[int, str]] = {}
    statuses: dict[tuple[str, str], str] = {}
    prepared: dict[str, set[str]] = {}

    def bad(line_no: int, rule: str, message: str) -> None:
        violations.append(Violation(line_no, rule, message))

    n = 0
    for line_no, raw in enumerate(lines, start=1):
        line = raw.rstrip("\n")
        if not line:
            continue
        n += 1
        parts = line.split("\t")
        if len(parts) != 4:
            raise TraceParseError(f"line {line_no}: expected 4 columns")
        tick_s, node, kind, detail = parts
        try:
            tick = int(tick_s)
        except ValueError:
            raise TraceParseError(f"line {line_no}: bad tick {tick_s!r}")

        if kind == "send":
            fields = detail.split(" ")
            if len(fields) != 6:
                raise TraceParseError(f"line {line_no}: send wants 6 fields")
            mtype, bid, slot, bal, _cmd, _dst = fields
            if mtype == "PREPARE":
                prepared.setdefault(bid, set()).add(bal)
            elif mtype == "PROPOSE":
                inherited = _bid_ballot(bid)
                if bal != inherited and bal not in prepared.get(bid, ()):
                    bad(line_no, "phase1-sharing",
                        f"{node} proposed under {bal} on {bid} without a prepare")
                key = (node, bid, slot)
                if key in node_decides:
                    bad(line_no, "re-propose-after-decide",
                        f"{node} re-proposed {bid} slot {slot} after deciding it")

        elif kind == "decide":
            bid, slot, cmd = detail.split(" ", 2)
            prev = branch_decision.get((bid, slot))
            if prev is None:
                branch_decision[(bid, slot)] = cmd
            elif prev != cmd:
                bad(line_no, "branch-agreement",
                    f"{bid} slot {slot}: {cmd!r} vs earlier {prev!r}")
            mine = node_decides.get((node, bid, slot))
            if mine is not None and mine[1] != cmd:
                bad(line_no, "stability",
                    f"{node} changed its decision at {bid} slot {slot}")
            node_decides[(node, bid, slot)] = (tick, cmd)

        elif kind == "trunk":
            slot_s, cmd = detail.split(" ", 1)
            slot = int(slot_s)
            expected = trunk_next.get(node)
            if expected is None:
                bad(line_no, "trunk-contiguity",
                    f"{node} appended before announcing a start position")
                trunk_next[node] = slot + 1
            elif slot != expected:
                bad(line_no, "trunk-contiguity",
                    f"{node} appended slot {slot}, expected {expected}")
                trunk_next[node] = max(expected, slot + 1)
            else:
                trunk_next[node] = slot + 1
            prev = trunk_global.get(slot_s)
            if prev is None:
                trunk_global[slot_s] = cmd
            elif prev != cmd:
                bad(line_no, "trunk-agreement",
                    f"slot {slot}: {node} appended {cmd!r}, someone else {prev!r}")
            if cmd.startswith("user:"):
                cid = cmd.split(":")[1]
                seen = trunk_seen_user.setdefault(node, set())
                if cid not in seen:
                    seen.add(cid)
                    expected_validate[(node, cid)] = (line_no, slot_s, cmd)

        elif kind == "trunk_seed":
            trunk_next[node] = int(detail)

        elif kind == "recover":
            fields = dict(f.split("=") for f in detail.split(" "))
            restored = int(fields["trunk"])
            prior = trunk_next.get(node)
            if prior is not None and restored != prior:
                bad(line_no, "recovery-fidelity",
                    f"{node} restored trunk length {restored}, durable was {prior}")
            trunk_next[node] = restored

        elif kind == "status":
            bid, status = detail.split(" ")
            if status not in _STATUS_ORDER:
                raise TraceParseError(f"line {line_no}: bad status {status!r}")
            prev = statuses.get((node, bid))
            if prev is not None and prev != "SPECULATIVE" and prev != status:
                bad(line_no, "status-monotonicity",
                    f"{node} moved {bid} from terminal {prev} to {status}")
            statuses[(node, bid)] = status

        elif kind == "notify":
            nkind, cid, bid, slot = detail.split(" ")
            if nkind == "VALIDATE":
                key = (node, cid)
                if key in validated:
                    bad(line_no, "notification-exactness",
                        f"{node} validated {cid} twice")
                validated[key] = (bid, slot)
                exp = expected_validate.pop(key, None)
                if exp is None:
                    bad(line_no, "notification-exactness",
                        f"{node} validated {cid} with no first trunk occurrence")
                elif exp[1] != slot:
                    bad(line_no, "notification-exactness",
                        f"{node} validated {cid} at slot {slot}, first occurrence "
                        f"was slot {exp[1]}")
            elif nkind == "INVALIDATE":
                if (node, bid, slot) not in node_decides:
                    bad(line_no, "notification-exactness",
                        f"{node} invalidated {cid} at {bid} slot {slot} "
                        "without a decided occurrence")
                occ = validated.get((node, cid))
                if occ == (bid, slot):
                    bad(line_no, "notification-exactness",
                        f"{node} both validated and invalidated {cid} at "
                        f"{bid} slot {slot}")
                invalidated.setdefault((node, cid), set()).add((bid, slot))

    # Validates promised by a first occurrence but never emitted.
    for (node, cid), (line_no, slot_s, _cmd) in sorted(expected_validate.items(),
                                                       key=lambda kv: kv[1][0]):
        bad(line_no, "notification-exactness",
            f"{node} appended first occurrence of {cid} at slot {slot_s} "
            "but never validated it")
    # A validated occurrence later invalidated at the same (bid, slot).
    for (node, cid), occ in validated.items():
        if occ in invalidated.get((node, cid), ()):
            bad(n, "notification-exactness",
                f"{node}: {cid} validated and invalidated at the same occurrence")

    violations.sort(key=lambda v: v.line_no)
    return Verdict(not violations, violations, n)


def check_file(path: str) -> Verdict:
    with open(path, "r", encoding="utf-8") as fh:
        return check_trace(fh)
