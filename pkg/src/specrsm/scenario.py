"""Line-oriented scenario files.

One directive per line; '#' starts a comment. Replicas are named p<N>
(N < 100), clients c<N> (mapped to ids 100+N). Event ticks must be
non-decreasing.

    group p1 p2 p3 p4 p5
    cohort p1 p2 p3
    tick-limit 400
    policy replace-suspected
    at 10 submit c1 hello
    at 40 recon p1 p2 p4
    at 45 recon-at p2 p2 p3 p5
    at 60 crash p3
    at 70 recover p3
    at 80 partition p1 p2 | p3 p4 p5
    at 90 drop p1 p2 0.5
    at 95 delay p1 p2 4
    at 120 heal
"""

from __future__ import annotations

from dataclasses import dataclass

from .types import Configuration

CLIENT_BASE = 100


class ScenarioParseError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioEvent:
    tick: int
    kind: str
    args: tuple


@dataclass(frozen=True)
class Scenario:
    name: str
    group: tuple[int, ...]
    cohort: Configuration
    tick_limit: int
    events: tuple[ScenarioEvent, ...]
    policy: tuple[str, ...] | None = None
    timing_overrides: tuple[tuple[str, int], ...] = ()


def parse_pid(token: str, line_no: int) -> int:
    if token.startswith("p") and token[1:].isdigit():
        pid = int(token[1:])
        if 0 < pid < CLIENT_BASE:
            return pid
    raise ScenarioParseError(f"line {line_no}: bad replica id {token!r}")


def parse_client(token: str, line_no: int) -> int:
    if token.startswith("c") and token[1:].isdigit():
        return CLIENT_BASE + int(token[1:])
    raise ScenarioParseError(f"line {line_no}: bad client id {token!r}")


def parse_scenario(text: str, name: str = "") -> Scenario:
    group: tuple[int, ...] | None = None
    cohort: Configuration | None = None
    tick_limit = 1000
    policy: tuple[str, ...] | None = None
    timing: list[tuple[str, int]] = []
    events: list[ScenarioEvent] = []
    last_tick = 0

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        head = tokens[0]
        if head == "group":
            group = tuple(sorted(parse_pid(t, line_no) for t in tokens[1:]))
        elif head == "cohort":
            cohort = Configuration(parse_pid(t, line_no) for t in tokens[1:])
        elif head == "tick-limit":
            tick_limit = int(tokens[1])
        elif head == "policy":
            policy = tuple(tokens[1:])
        elif head == "timing":
            timing.append((tokens[1].replace("-", "_"), int(tokens[2])))
        elif head == "at":
            if len(tokens) < 3:
                raise ScenarioParseError(f"line {line_no}: truncated event")
            tick = int(tokens[1])
            if tick < last_tick:
                raise ScenarioParseError(
                    f"line {line_no}: tick {tick} decreases (last was {last_tick})")
            last_tick = tick
            events.append(_parse_event(tick, tokens[2], tokens[3:], line_no))
        else:
            raise ScenarioParseError(f"line {line_no}: unknown directive {head!r}")

    if group is None or cohort is None:
        raise ScenarioParseError("scenario needs both 'group' and 'cohort' lines")
    if not set(cohort.members) <= set(group):
        raise ScenarioParseError("cohort must be a subset of the group")
    for ev in events:
        if ev.kind in ("crash", "recover") and ev.args[0] not in group:
            raise ScenarioParseError(f"{ev.kind} targets non-member p{ev.args[0]}")
    return Scenario(name, group, cohort, tick_limit, tuple(events), policy,
                    tuple(timing))


def _parse_event(tick: int, kind: str, rest: list[str], line_no: int) -> ScenarioEvent:
    if kind == "submit":
        if len(rest) != 2:
            raise ScenarioParseError(f"line {line_no}: submit wants <client> <payload>")
        return ScenarioEvent(tick, "submit",
                             (parse_client(rest[0], line_no), rest[1].encode()))
    if kind == "recon":
        cfg = Configuration(parse_pid(t, line_no) for t in rest)
        return ScenarioEvent(tick, "recon", (cfg,))
    if kind == "recon-at":
        target = parse_pid(rest[0], line_no)
        cfg = Configuration(parse_pid(t, line_no) for t in rest[1:])
        return ScenarioEvent(tick, "recon_at", (target, cfg))
    if kind in ("crash", "recover"):
        return ScenarioEvent(tick, kind, (parse_pid(rest[0], line_no),))
    if kind == "partition":
        if "|" not in rest:
            raise ScenarioParseError(f"line {line_no}: partition wants '|' separator")
        split = rest.index("|")
        left = frozenset(parse_pid(t, line_no) for t in rest[:split])
        right = frozenset(parse_pid(t, line_no) for t in rest[split + 1:])
        if not left or not right:
            raise ScenarioParseError(f"line {line_no}: partition side is empty")
        return ScenarioEvent(tick, "partition", (left, right))
    if kind == "heal":
        return ScenarioEvent(tick, "heal", ())
    if kind == "drop":
        a, b = parse_pid(rest[0], line_no), parse_pid(rest[1], line_no)
        p = float(rest[2]) if len(rest) > 2 else 1.0
        return ScenarioEvent(tick, "drop", (a, b, p))
    if kind == "delay":
        a, b = parse_pid(rest[0], line_no), parse_pid(rest[1], line_no)
        return ScenarioEvent(tick, "delay", (a, b, int(rest[2])))
    raise ScenarioParseError(f"line {line_no}: unknown event {kind!r}")


def load_scenario(path: str) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_scenario(fh.read(), name=path)
