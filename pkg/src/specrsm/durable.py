"""Durable append-only log with CRC framing, snapshot clipping, recovery.

Frame layout (big-endian): u32 payload length, u32 CRC-32 of the payload,
payload. Payloads are canonical JSON (sorted keys). The snapshot file is a
u32 trunk-length header followed by a JSON body. Recovery reads the snapshot,
then replays every frame up to the first torn or corrupt one; the damaged
tail is discarded, never reordered.

Record kinds:
  BRANCH       branch created (bid, parent, config)
  DISCARD      branch discarded; doubles as a durable tombstone
  PROMISE      acceptor promised a ballot on a branch
  ACCEPT       acceptor accepted (slot, ballot, value) on a branch
  DECISION     slot decided within a branch
  TRUNK_APPEND global slot merged into the trunk
  CLIP         prefix below a slot folded into the snapshot

Acceptor promises and accepts are durable before the corresponding replies
go out; forgetting either across a crash would let a recovered acceptor
contradict itself.
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from dataclasses import dataclass
from enum import Enum

from .types import (Ballot, BranchId, Command, CommandId, CommandKind,
                    Configuration)


class StorageError(RuntimeError):
    """The backing store failed; the replica is treated as crashed."""


class ClipBeyondWatermark(ValueError):
    """Only applied (validated) prefix entries may be clipped."""


class RecordKind(Enum):
    BRANCH = "BRANCH"
    DISCARD = "DISCARD"
    PROMISE = "PROMISE"
    ACCEPT = "ACCEPT"
    DECISION = "DECISION"
    TRUNK_APPEND = "TRUNK_APPEND"
    CLIP = "CLIP"


@dataclass(frozen=True)
class DurableRecord:
    kind: RecordKind
    slot: int | None = None
    bid: BranchId | None = None
    bal: Ballot | None = None
    cmd: Command | None = None
    parent: BranchId | None = None
    config: Configuration | None = None


# -- value codecs ----------------------------------------------------------

def ballot_obj(b: Ballot) -> list:
    return [b.round, b.proposer]


def bid_obj(bid: BranchId) -> list:
    return [bid.slot_num, ballot_obj(bid.bal), bid.initiator]


def _cmd_obj(cmd: Command) -> dict:
    if cmd.kind is CommandKind.USER:
        return {"k": "u", "c": cmd.id.client, "q": cmd.id.sequence,
                "p": cmd.payload.hex()}
    if cmd.kind is CommandKind.RECON:
        return {"k": "r", "x": bid_obj(cmd.branch_ref),
                "m": list(cmd.new_config.members)}
    return {"k": "n"}


def ballot_from_obj(o) -> Ballot:
    return Ballot(o[0], o[1])


def bid_from_obj(o) -> BranchId:
    return BranchId(o[0], ballot_from_obj(o[1]), o[2])


def cmd_from_obj(o) -> Command:
    if o["k"] == "u":
        return Command(CommandKind.USER, id=CommandId(o["c"], o["q"]),
                       payload=bytes.fromhex(o["p"]))
    if o["k"] == "r":
        return Command(CommandKind.RECON, branch_ref=bid_from_obj(o["x"]),
                       new_config=Configuration(o["m"]))
    return Command(CommandKind.NOOP)


def encode_record(rec: DurableRecord) -> bytes:
    obj: dict = {"t": rec.kind.value}
    if rec.slot is not None:
        obj["s"] = rec.slot
    if rec.bid is not None:
        obj["b"] = bid_obj(rec.bid)
    if rec.bal is not None:
        obj["l"] = ballot_obj(rec.bal)
    if rec.cmd is not None:
        obj["c"] = _cmd_obj(rec.cmd)
    if rec.parent is not None:
        obj["p"] = bid_obj(rec.parent)
    if rec.config is not None:
        obj["g"] = list(rec.config.members)
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def decode_record(payload: bytes) -> DurableRecord:
    obj = json.loads(payload)
    return DurableRecord(
        kind=RecordKind(obj["t"]),
        slot=obj.get("s"),
        bid=bid_from_obj(obj["b"]) if "b" in obj else None,
        bal=ballot_from_obj(obj["l"]) if "l" in obj else None,
        cmd=cmd_from_obj(obj["c"]) if "c" in obj else None,
        parent=bid_from_obj(obj["p"]) if "p" in obj else None,
        config=Configuration(obj["g"]) if "g" in obj else None,
    )


def frame(payload: bytes) -> bytes:
    return struct.pack(">II", len(payload), zlib.crc32(payload)) + payload


def unframe_all(data: bytes) -> tuple[list[bytes], int]:
    """Split framed data into payloads; stops at the first torn or corrupt
    frame. Returns (payloads, number of valid bytes)."""
    payloads = []
    off = 0
    while off + 8 <= len(data):
        length, crc = struct.unpack_from(">II", data, off)
        end = off + 8 + length
        if end > len(data):
            break
        payload = data[off + 8:end]
        if zlib.crc32(payload) != crc:
            break
        payloads.append(payload)
        off = end
    return payloads, off


# -- backends --------------------------------------------------------------

class MemoryBackend:
    """In-memory store with crash-survival semantics: the harness keeps the
    backend object across a simulated crash/recover cycle."""

    def __init__(self) -> None:
        self.frames: list[bytes] = []
        self.snapshot: tuple[int, bytes] | None = None

    def append(self, framed: bytes) -> None:
        self.frames.append(framed)

    def read_all(self) -> bytes:
        return b"".join(self.frames)

    def rewrite(self, framed_records: list[bytes]) -> None:
        self.frames = list(framed_records)

    def save_snapshot(self, trunk_len: int, body: bytes) -> None:
        self.snapshot = (trunk_len, body)

    def load_snapshot(self) -> tuple[int, bytes] | None:
        return self.snapshot


class FileBackend:
    """One log file plus one snapshot file per replica."""

    def __init__(self, directory: str, label: str) -> None:
        try:
            os.makedirs(directory, exist_ok=True)
            self.log_path = os.path.join(directory, f"{label}.log")
            self.snap_path = os.path.join(directory, f"{label}.snap")
            self._fh = open(self.log_path, "ab")
        except OSError as exc:
            raise StorageError(str(exc)) from exc

    def append(self, framed: bytes) -> None:
        try:
            self._fh.write(framed)
            self._fh.flush()
        except OSError as exc:
            raise StorageError(str(exc)) from exc

    def read_all(self) -> bytes:
        self._fh.flush()
        with open(self.log_path, "rb") as fh:
            return fh.read()

    def rewrite(self, framed_records: list[bytes]) -> None:
        try:
            self._fh.close()
            tmp = self.log_path + ".tmp"
            with open(tmp, "wb") as fh:
                fh.writelines(framed_records)
            os.replace(tmp, self.log_path)
            self._fh = open(self.log_path, "ab")
        except OSError as exc:
            raise StorageError(str(exc)) from exc

    def truncate_to(self, size: int) -> None:
        try:
            self._fh.close()
            with open(self.log_path, "rb+") as fh:
                fh.truncate(size)
            self._fh = open(self.log_path, "ab")
        except OSError as exc:
            raise StorageError(str(exc)) from exc

    def save_snapshot(self, trunk_len: int, body: bytes) -> None:
        try:
            tmp = self.snap_path + ".tmp"
            with open(tmp, "wb") as fh:
                fh.write(struct.pack(">I", trunk_len) + body)
            os.replace(tmp, self.snap_path)
        except OSError as exc:
            raise StorageError(str(exc)) from exc

    def load_snapshot(self) -> tuple[int, bytes] | None:
        if not os.path.exists(self.snap_path):
            return None
        with open(self.snap_path, "rb") as fh:
            data = fh.read()
        if len(data) < 4:
            return None
        (trunk_len,) = struct.unpack_from(">I", data)
        return trunk_len, data[4:]


# -- per-replica log -------------------------------------------------------

class PersistentLog:
    """Durable record stream for one replica, with size-triggered clipping."""

    def __init__(self, backend, clip_limit: int = 1024) -> None:
        self.backend = backend
        self.clip_limit = clip_limit
        self.record_count = 0
        self.clip_upto = 0
        snap = backend.load_snapshot()
        if snap is not None:
            self.clip_upto = snap[0]
        payloads, _ = unframe_all(backend.read_all())
        self.record_count = len(payloads)

    def append(self, rec: DurableRecord) -> None:
        self.backend.append(frame(encode_record(rec)))
        self.record_count += 1

    def recover(self) -> tuple[dict | None, list[DurableRecord]]:
        """Snapshot body (if any) plus every intact record, torn tail dropped."""
        data = self.backend.read_all()
        payloads, valid = unframe_all(data)
        if valid < len(data) and hasattr(self.backend, "truncate_to"):
            self.backend.truncate_to(valid)
        records = [decode_record(p) for p in payloads]
        self.record_count = len(records)
        snap = self.backend.load_snapshot()
        body = json.loads(snap[1]) if snap is not None else None
        return body, records

    def clip(self, upto: int, watermark: int, snapshot_body: dict) -> None:
        """Fold trunk slots below upto into the snapshot and drop the log
        records they cover, along with records of discarded branches."""
        if upto > watermark:
            raise ClipBeyondWatermark(f"clip {upto} beyond watermark {watermark}")
        if upto <= self.clip_upto:
            return
        body, records = self.recover()
        del body  # snapshot is replaced wholesale
        discarded = {r.bid for r in records if r.kind is RecordKind.DISCARD}
        kept: list[DurableRecord] = [DurableRecord(RecordKind.CLIP, slot=upto)]
        for rec in records:
            if rec.kind is RecordKind.CLIP:
                continue
            if rec.kind is RecordKind.DISCARD:
                kept.append(rec)
                continue
            if rec.bid is not None and rec.bid in discarded:
                continue
            if rec.kind is RecordKind.TRUNK_APPEND and rec.slot < upto:
                continue
            if rec.kind in (RecordKind.ACCEPT, RecordKind.DECISION) and rec.slot < upto:
                continue
            kept.append(rec)
        self.backend.save_snapshot(upto, json.dumps(snapshot_body, sort_keys=True).encode())
        self.backend.rewrite([frame(encode_record(r)) for r in kept])
        self.record_count = len(kept)
        self.clip_upto = upto

    def maybe_clip(self, trunk_len: int, watermark: int, snapshot_body_fn) -> int | None:
        """Clip when the log outgrows its limit; returns the clip point used.

        The clip point keeps roughly clip_limit trunk entries durable:
        upto = min(watermark, trunk_len - clip_limit).
        """
        if self.record_count <= self.clip_limit:
            return None
        upto = min(watermark, max(0, trunk_len - self.clip_limit))
        # Hysteresis: rewriting the log per append would be quadratic, so
        # wait until the clip would reclaim a meaningful chunk.
        if upto - self.clip_upto < max(1, self.clip_limit // 4):
            return None
        self.clip(upto, watermark, snapshot_body_fn(upto))
        return upto
