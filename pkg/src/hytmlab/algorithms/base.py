"""Shared plumbing for the transactional algorithms.

Every algorithm exposes its fast and slow paths as :class:`TxnApi` objects
whose ``begin``/``read``/``write``/``commit`` methods are generators yielding
one scheduler request per step.  ``run_transaction`` drives a user program
through retry attempts: an optional uninstrumented "fast fast" attempt, up
to ``max_fast_attempts`` on the algorithm's fast path, then the slow path
until it commits (or an attempt cap or the per-operation step budget cuts
the run short).
"""

from __future__ import annotations

import itertools
import random
from dataclasses import dataclass, field

from ..emulator import DEFAULT_TS, Emulator, HwAbort
from ..memory import (
    BASE_F,
    CACHED,
    DIRECT,
    NO_TXN,
    OP_BEGIN,
    OP_READ,
    OP_TRYC,
    OP_WRITE,
    READ,
    ST_ABORTED,
    ST_COMMITTED,
    ST_OK,
    Rmw,
    faa,
    memory_size,
    write,
)


class TxnAbort(Exception):
    """One transaction attempt aborted; consumed by the retry driver."""

    def __init__(self, cause: str):
        super().__init__(cause)
        self.cause = cause


class _OpAbort(Exception):
    """Internal: an operation decided to abort (lock held, validation, ...)."""

    def __init__(self, cause: str):
        self.cause = cause


class _HwAborted(Exception):
    """Internal: the hardware machine delivered an abort."""

    def __init__(self, cause: str):
        self.cause = cause


class LivenessExceeded(Exception):
    """An operation ran past its step budget without committing."""


class AttemptsExhausted:
    """Sentinel result when a capped operation never committed."""

    def __repr__(self):  # pragma: no cover
        return "AttemptsExhausted"


ATTEMPTS_EXHAUSTED = AttemptsExhausted()


@dataclass
class RetryPolicy:
    max_fast_attempts: int = 20
    fast_fast: bool = False
    max_total_attempts: int | None = None
    step_budget: int = 1_000_000


@dataclass
class TmStats:
    commits: dict[str, int] = field(default_factory=dict)
    aborts: dict[tuple[str, str], int] = field(default_factory=dict)
    ops_completed: int = 0
    ops_failed: int = 0
    steps: int = 0
    validations: int = 0
    last_commit_step: int = 0
    read_footprints: list[int] = field(default_factory=list)

    def note_commit(self, path: str) -> None:
        self.commits[path] = self.commits.get(path, 0) + 1

    def note_abort(self, path: str, cause: str) -> None:
        key = (path, cause)
        self.aborts[key] = self.aborts.get(key, 0) + 1

    def total_commits(self) -> int:
        return sum(self.commits.values())

    def total_aborts(self) -> int:
        return sum(self.aborts.values())

    def aborts_by_cause(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for (_path, cause), n in self.aborts.items():
            out[cause] = out.get(cause, 0) + n
        return out

    def aborts_by_path(self, path: str) -> int:
        return sum(n for (p, _c), n in self.aborts.items() if p == path)


class TmRuntime:
    """One run's shared state: the emulator, stats, and id allocation."""

    def __init__(
        self,
        num_tobjects: int,
        ts: int = DEFAULT_TS,
        spurious: float = 0.0,
        seed: int = 0,
        record: bool = True,
    ):
        self.num_tobjects = num_tobjects
        self.emu = Emulator(
            memory_size(num_tobjects),
            ts=ts,
            spurious=spurious,
            rng=random.Random(seed ^ 0x5EED),
            record=record,
        )
        self.stats = TmStats()
        self._txn_ids = itertools.count(0)

    def next_txn(self) -> int:
        return next(self._txn_ids)


class TxnApi:
    """Base class for one transaction attempt on a particular path.

    Subclasses implement ``_do_begin``/``_do_read``/``_do_write``/``_do_commit``
    as generators; the wrappers here record invoke/respond events, convert
    aborts into :class:`TxnAbort`, and meter per-read base-object footprints.
    """

    path = "slow"

    def __init__(self, rt: TmRuntime, pid: int, txn: int):
        self.rt = rt
        self.pid = pid
        self.txn = txn
        self._fp: set[int] | None = None

    # -- step helpers --

    def _direct(self, base: int, spec: Rmw):
        ret, changed = yield ("prim", self.txn, base, spec, DIRECT)
        if self._fp is not None:
            self._fp.add(base)
        return ret, changed

    def _cached(self, base: int, spec: Rmw):
        res = yield ("prim", self.txn, base, spec, CACHED)
        if isinstance(res, HwAbort):
            raise _HwAborted(res.cause)
        if self._fp is not None:
            self._fp.add(base)
        return res

    def _access(self, base: int, spec: Rmw, access: int):
        if access == CACHED:
            return (yield from self._cached(base, spec))
        return (yield from self._direct(base, spec))

    def _commit_cache(self):
        res = yield ("commit", self.txn)
        if isinstance(res, HwAbort):
            raise _HwAborted(res.cause)
        return res

    def _discard_hw(self) -> None:
        if self.path == "fast":
            self.rt.emu.discard(self.pid)

    # -- t-operations --

    def begin(self):
        yield ("invoke", self.txn, OP_BEGIN, -1, 0)
        try:
            yield from self._do_begin()
        except (_OpAbort, _HwAborted) as a:
            self._discard_hw()
            yield ("respond", self.txn, OP_BEGIN, -1, ST_ABORTED, 0)
            raise TxnAbort(a.cause) from None
        yield ("respond", self.txn, OP_BEGIN, -1, ST_OK, 0)

    def read(self, tobj: int):
        yield ("invoke", self.txn, OP_READ, tobj, 0)
        self._fp = set()
        try:
            value = yield from self._do_read(tobj)
        except (_OpAbort, _HwAborted) as a:
            self._fp = None
            self._discard_hw()
            yield ("respond", self.txn, OP_READ, tobj, ST_ABORTED, 0)
            raise TxnAbort(a.cause) from None
        self.rt.stats.read_footprints.append(len(self._fp))
        self._fp = None
        yield ("respond", self.txn, OP_READ, tobj, ST_OK, value)
        return value

    def write(self, tobj: int, value: int):
        yield ("invoke", self.txn, OP_WRITE, tobj, value)
        try:
            yield from self._do_write(tobj, value)
        except (_OpAbort, _HwAborted) as a:
            self._discard_hw()
            yield ("respond", self.txn, OP_WRITE, tobj, ST_ABORTED, 0)
            raise TxnAbort(a.cause) from None
        yield ("respond", self.txn, OP_WRITE, tobj, ST_OK, 0)

    def commit(self):
        yield ("invoke", self.txn, OP_TRYC, -1, 0)
        try:
            yield from self._do_commit()
        except (_OpAbort, _HwAborted) as a:
            self._discard_hw()
            yield ("respond", self.txn, OP_TRYC, -1, ST_ABORTED, 0)
            raise TxnAbort(a.cause) from None
        yield ("respond", self.txn, OP_TRYC, -1, ST_COMMITTED, 0)

    # -- subclass hooks --

    def _do_begin(self):
        yield from ()

    def _do_read(self, tobj: int):
        raise NotImplementedError

    def _do_write(self, tobj: int, value: int):
        raise NotImplementedError

    def _do_commit(self):
        yield from ()


class Algorithm:
    """An algorithm names its paths; instances may carry per-run knobs."""

    name = "?"
    has_fast_path = True

    def fast_api(self, rt: TmRuntime, pid: int, txn: int) -> TxnApi:
        raise NotImplementedError

    def slow_api(self, rt: TmRuntime, pid: int, txn: int) -> TxnApi:
        raise NotImplementedError


class FastFastApi(TxnApi):
    """Uninstrumented hardware attempt gated on the live-updater counter.

    The counter read is cached, so a slow updater's later increment
    invalidates every running uninstrumented transaction.
    """

    path = "fast"

    def __init__(self, rt, pid, txn):
        super().__init__(rt, pid, txn)
        self.handle = None

    def _do_begin(self):
        self.handle = self.rt.emu.hw_begin(self.pid, self.txn)
        f, _ = yield from self._cached(BASE_F, READ)
        if f != 0:
            raise _OpAbort("fastfast")

    def _do_read(self, tobj):
        from ..memory import value_base

        self.handle.touch(tobj)
        val, _ = yield from self._cached(value_base(tobj), READ)
        return val

    def _do_write(self, tobj, value):
        from ..memory import value_base

        self.handle.touch(tobj)
        yield from self._cached(value_base(tobj), write(value))

    def _do_commit(self):
        yield from self._commit_cache()


def _drive(agen, policy: RetryPolicy, counter: list[int]):
    """Pump an attempt generator, enforcing the per-operation step budget."""
    out = None
    while True:
        try:
            req = agen.send(out)
        except StopIteration as stop:
            return stop.value
        counter[0] += 1
        if counter[0] > policy.step_budget:
            agen.close()
            raise LivenessExceeded(
                f"operation exceeded step budget of {policy.step_budget}"
            )
        out = yield req


def _attempt(api: TxnApi, program):
    yield from api.begin()
    result = yield from program(api)
    yield from api.commit()
    return result


def run_transaction(rt: TmRuntime, pid: int, program, algorithm: Algorithm, policy: RetryPolicy | None = None):
    """Drive ``program`` to a commit; a generator to be run by a scheduler.

    Returns the program's result, or ``ATTEMPTS_EXHAUSTED`` when a total
    attempt cap was configured and hit.  Aborts are consumed and counted.
    """
    policy = policy or RetryPolicy()
    steps = [0]
    total = 0
    updates = not getattr(program, "readonly", False)

    def paths():
        if policy.fast_fast:
            yield "fastfast"
        if algorithm.has_fast_path:
            for _ in range(policy.max_fast_attempts):
                yield "fast"
        while True:
            yield "slow"

    for kind in paths():
        if policy.max_total_attempts is not None and total >= policy.max_total_attempts:
            rt.stats.ops_failed += 1
            return ATTEMPTS_EXHAUSTED
        total += 1
        txn = rt.next_txn()
        if kind == "fastfast":
            api: TxnApi = FastFastApi(rt, pid, txn)
        elif kind == "fast":
            api = algorithm.fast_api(rt, pid, txn)
        else:
            api = algorithm.slow_api(rt, pid, txn)
        # The fast-fast transformation brackets slow updating attempts with
        # a live-updater count maintained outside the transaction.
        bracket = kind == "slow" and policy.fast_fast and updates
        if bracket:
            yield ("prim", NO_TXN, BASE_F, faa(1), DIRECT)
        try:
            result = yield from _drive(_attempt(api, program), policy, steps)
        except TxnAbort as abort:
            rt.stats.note_abort(api.path, abort.cause)
            if bracket:
                yield ("prim", NO_TXN, BASE_F, faa(-1), DIRECT)
            continue
        if bracket:
            yield ("prim", NO_TXN, BASE_F, faa(-1), DIRECT)
        rt.stats.note_commit(api.path)
        rt.stats.ops_completed += 1
        return result
