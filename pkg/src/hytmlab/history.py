"""Histories: recorded event sequences, their file format, and derived views.

File format (stable, one event per line, integers in decimal):

    seq pid txn kind base mode trivial value

``seq`` is the event's position.  The remaining columns are the fields of
:class:`hytmlab.memory.Event`; see that class for the per-kind meanings.
All checkers consume only these columns, so replayed histories verify
identically to freshly recorded ones.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .memory import (
    ABORT_CAPACITY,
    ABORT_SPURIOUS,
    ABORT_TRACKING,
    CACHED,
    COMMIT,
    INVOKE,
    OP_READ,
    OP_TRYC,
    OP_WRITE,
    PRIM,
    RESPOND,
    ST_ABORTED,
    ST_COMMITTED,
    ST_OK,
    Event,
)


@dataclass
class History:
    events: list[Event] = field(default_factory=list)
    truncated: bool = False

    def __len__(self):
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    def txns(self) -> list[int]:
        """Transaction ids in order of first appearance."""
        seen: dict[int, None] = {}
        for e in self.events:
            if e.txn >= 0:
                seen.setdefault(e.txn, None)
        return list(seen)

    def restricted_to(self, txn: int) -> list[Event]:
        return [e for e in self.events if e.txn == txn]


def to_lines(history: History) -> list[str]:
    return [
        f"{i} {e.pid} {e.txn} {e.kind} {e.base} {e.mode} {e.trivial} {e.value}"
        for i, e in enumerate(history.events)
    ]


def write_history(history: History, path) -> None:
    with open(path, "w") as fh:
        fh.write("\n".join(to_lines(history)))
        fh.write("\n")


def parse_line(line: str) -> Event:
    parts = line.split()
    if len(parts) != 8:
        raise ValueError(f"malformed history record: {line!r}")
    _seq, pid, txn, kind, base, mode, trivial, value = (int(p) for p in parts)
    return Event(pid, txn, kind, base=base, mode=mode, trivial=trivial, value=value)


def read_history(path) -> History:
    events = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                events.append(parse_line(line))
    return History(events)


# ---------------------------------------------------------------------------
# Derived per-transaction views
# ---------------------------------------------------------------------------


@dataclass
class OpView:
    """One t-operation: its invoke, its respond (if any), and its primitives."""

    op: int
    tobj: int
    arg: int
    invoke_idx: int
    respond_idx: int | None = None
    status: int | None = None
    result: int = 0
    prim_idxs: list[int] = field(default_factory=list)


@dataclass
class TxnView:
    txn: int
    pid: int
    first_idx: int
    last_idx: int
    fast: bool = False
    ops: list[OpView] = field(default_factory=list)
    committed_via_commit_event: bool = False

    @property
    def status(self) -> str:
        """'committed', 'aborted' or 'live', judged from responses alone."""
        for op in self.ops:
            if op.status == ST_ABORTED:
                return "aborted"
            if op.op == OP_TRYC and op.status == ST_COMMITTED:
                return "committed"
        return "live"

    @property
    def tcomplete_idx(self) -> int | None:
        """Index of the terminal respond event, or None while live."""
        for op in self.ops:
            if op.status == ST_ABORTED:
                return op.respond_idx
            if op.op == OP_TRYC and op.status == ST_COMMITTED:
                return op.respond_idx
        return None

    def reads(self) -> list[OpView]:
        return [o for o in self.ops if o.op == OP_READ]

    def writes_ok(self) -> list[OpView]:
        return [o for o in self.ops if o.op == OP_WRITE and o.status == ST_OK]

    def read_set(self) -> set[int]:
        return {o.tobj for o in self.ops if o.op == OP_READ}

    def write_set(self) -> set[int]:
        return {o.tobj for o in self.ops if o.op == OP_WRITE}

    def data_set(self) -> set[int]:
        return self.read_set() | self.write_set()


def build_views(history: History) -> dict[int, TxnView]:
    """Index a history by transaction.

    A transaction is fast-path iff it contains at least one cached event
    (cached primitive, cache-commit, or a hardware abort delivery).
    """
    views: dict[int, TxnView] = {}
    open_ops: dict[int, OpView] = {}
    for idx, e in enumerate(history.events):
        if e.txn < 0:
            continue
        view = views.get(e.txn)
        if view is None:
            view = views[e.txn] = TxnView(e.txn, e.pid, idx, idx)
        view.last_idx = idx
        if e.kind == INVOKE:
            op = OpView(op=e.mode, tobj=e.base, arg=e.value, invoke_idx=idx)
            view.ops.append(op)
            open_ops[e.txn] = op
        elif e.kind == RESPOND:
            op = open_ops.pop(e.txn, None)
            if op is not None:
                op.respond_idx = idx
                op.status = e.trivial
                op.result = e.value
        elif e.kind == PRIM:
            if e.mode == CACHED:
                view.fast = True
            op = open_ops.get(e.txn)
            if op is not None:
                op.prim_idxs.append(idx)
        elif e.kind == COMMIT:
            view.fast = True
            view.committed_via_commit_event = True
        elif e.kind in (ABORT_TRACKING, ABORT_CAPACITY, ABORT_SPURIOUS):
            view.fast = True
    return views
