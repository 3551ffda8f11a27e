"""The fast-path machine: tracking sets, cached and direct accesses, aborts.

Every primitive application is funneled through one of ``direct``, ``cached``
or ``commit_cache``; each call is a single atomic step of the machine.  A
cached access operates on the caller's tracking set (a buffered copy of the
base objects it touched); a direct access goes straight to memory without
entering the tracking set, modeling non-speculative accesses inside a
hardware transaction.

Conflict rule: after any primitive on base ``b`` by process ``i``, every
other process holding ``b`` in exclusive mode is invalidated, and every
other process holding ``b`` in shared mode is invalidated if the primitive
was nontrivial.  Invalidation is lazy: the flag is set by the conflicting
event and the abort is delivered at the victim's next cached step or at its
cache-commit.  A process never invalidates its own tracking set through its
own direct accesses.

Capacity rule: a cached access to a base not yet tracked, by a transaction
whose data set spans more than one t-object, aborts when the tracking set
already holds TS entries.  Single-t-object transactions are exempt.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .memory import (
    ABORT_CAPACITY,
    ABORT_SPURIOUS,
    ABORT_TRACKING,
    CACHED,
    COMMIT,
    DIRECT,
    INVOKE,
    PRIM,
    RESPOND,
    Event,
    Memory,
    ModelViolation,
    Rmw,
    apply_word,
)

SHARED = 0
EXCLUSIVE = 1

DEFAULT_TS = 64


class HwAbort:
    """Abort signal returned (not raised) by cached accesses and commits."""

    __slots__ = ("cause",)

    def __init__(self, cause: str):
        self.cause = cause

    def __repr__(self):  # pragma: no cover
        return f"HwAbort({self.cause})"


@dataclass
class TrackingSet:
    entries: dict[int, tuple[int, int]] = field(default_factory=dict)  # base -> (value, mode)
    valid: bool = True

    def modes(self) -> dict[int, int]:
        return {b: m for b, (_v, m) in self.entries.items()}


@dataclass
class HwHandle:
    """One live hardware transaction; at most one per process."""

    pid: int
    txn: int
    dset: set[int] = field(default_factory=set)

    def touch(self, tobj: int) -> None:
        self.dset.add(tobj)


class Emulator:
    """Shared memory plus per-process tracking sets.

    Not internally synchronized: callers serialize steps (the deterministic
    scheduler by construction, the threaded harness through a gate).
    """

    def __init__(
        self,
        size: int,
        ts: int = DEFAULT_TS,
        spurious: float = 0.0,
        rng: random.Random | None = None,
        record: bool = True,
    ):
        if not 0.0 <= spurious <= 1.0:
            raise ValueError("spurious abort probability must be in [0, 1]")
        self.memory = Memory(size)
        self.ts = ts
        self.spurious = spurious
        self.rng = rng or random.Random(0)
        self.record_events = record
        self.history: list[Event] = []
        self.tsets: dict[int, TrackingSet] = {}
        self.handles: dict[int, HwHandle] = {}

    # -- recording --

    def _rec(self, ev: Event) -> None:
        if self.record_events:
            self.history.append(ev)

    def record_invoke(self, pid: int, txn: int, op: int, tobj: int, value: int) -> None:
        self._rec(Event(pid, txn, INVOKE, base=tobj, mode=op, value=value))

    def record_respond(self, pid: int, txn: int, op: int, tobj: int, status: int, value: int) -> None:
        self._rec(Event(pid, txn, RESPOND, base=tobj, mode=op, trivial=status, value=value))

    # -- hardware transaction lifecycle --

    def hw_begin(self, pid: int, txn: int) -> HwHandle:
        if pid in self.handles:
            raise ModelViolation(f"nested hardware transaction begin by pid {pid}")
        handle = HwHandle(pid, txn)
        self.handles[pid] = handle
        self.tsets[pid] = TrackingSet()
        return handle

    def discard(self, pid: int) -> None:
        """Drop the live hardware transaction, publishing nothing. Idempotent."""
        self.handles.pop(pid, None)
        self.tsets.pop(pid, None)

    def _deliver_abort(self, pid: int, txn: int, kind: int, base: int, cause: str) -> HwAbort:
        self._rec(Event(pid, txn, kind, base=base, mode=CACHED))
        self.discard(pid)
        return HwAbort(cause)

    def _spurious_fires(self) -> bool:
        return self.spurious > 0.0 and self.rng.random() < self.spurious

    # -- primitive application --

    def direct(self, pid: int, txn: int, base: int, spec: Rmw) -> tuple[int, int]:
        """Apply a primitive straight to memory. Never aborts."""
        self.memory.check(base)
        old = self.memory.read(base)
        new, ret = apply_word(old, spec, pid)
        changed = new != old
        if changed:
            self.memory.write_word(base, new)
        self._rec(Event(pid, txn, PRIM, base=base, mode=DIRECT, trivial=int(not changed), value=ret))
        self.propagate_conflict(pid, base, changed)
        return ret, changed

    def cached(self, pid: int, txn: int, base: int, spec: Rmw):
        """Apply a primitive to the caller's tracking set.

        Returns ``(returned, changed)`` or an ``HwAbort``; on abort the
        tracking set is emptied and the enclosing transaction must abort.
        """
        handle = self.handles.get(pid)
        if handle is None:
            raise ModelViolation(f"cached access by pid {pid} without a live hardware txn")
        tset = self.tsets[pid]
        if self._spurious_fires():
            return self._deliver_abort(pid, txn, ABORT_SPURIOUS, base, "spurious")
        if not tset.valid:
            return self._deliver_abort(pid, txn, ABORT_TRACKING, base, "tracking")
        entry = tset.entries.get(base)
        if entry is None:
            # Capacity is checked before inserting a new distinct base;
            # re-access of a tracked base never capacity-aborts.
            if len(handle.dset) > 1 and len(tset.entries) >= self.ts:
                return self._deliver_abort(pid, txn, ABORT_CAPACITY, base, "capacity")
            self.memory.check(base)
            old, mode = self.memory.read(base), SHARED
        else:
            old, mode = entry
        new, ret = apply_word(old, spec, pid)
        changed = new != old
        if changed:
            mode = EXCLUSIVE
        tset.entries[base] = (new, mode)
        self._rec(Event(pid, txn, PRIM, base=base, mode=CACHED, trivial=int(not changed), value=ret))
        self.propagate_conflict(pid, base, changed)
        return ret, changed

    def commit_cache(self, pid: int, txn: int):
        """Atomically publish all exclusive entries; one step."""
        handle = self.handles.get(pid)
        if handle is None:
            raise ModelViolation(f"cache-commit by pid {pid} without a live hardware txn")
        tset = self.tsets[pid]
        if self._spurious_fires():
            return self._deliver_abort(pid, txn, ABORT_SPURIOUS, -1, "spurious")
        if not tset.valid:
            return self._deliver_abort(pid, txn, ABORT_TRACKING, -1, "tracking")
        published = [(b, v) for b, (v, m) in tset.entries.items() if m == EXCLUSIVE]
        for b, v in published:
            self.memory.write_word(b, v)
        self._rec(Event(pid, txn, COMMIT, mode=CACHED, value=len(published)))
        self.discard(pid)
        for b, _v in published:
            self.propagate_conflict(pid, b, True)
        return len(published)

    def propagate_conflict(self, origin_pid: int, base: int, nontrivial: bool) -> set[int]:
        """Invalidate other processes' tracking sets per the conflict rule."""
        invalidated: set[int] = set()
        for pid, tset in self.tsets.items():
            if pid == origin_pid or not tset.valid:
                continue
            entry = tset.entries.get(base)
            if entry is not None and (entry[1] == EXCLUSIVE or nontrivial):
                tset.valid = False
                invalidated.add(pid)
        return invalidated
