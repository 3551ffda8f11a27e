"""Deterministic cooperative execution of transaction step machines.

Programs are generators that yield one request per step; the scheduler
executes exactly one request per schedule entry, so replaying a schedule on
identical programs reproduces the history bit for bit.  Requests:

    ("prim", txn, base, rmw, access)   apply a primitive; resumes with
                                       (returned_word, changed) or HwAbort
    ("commit", txn)                    cache-commit; int or HwAbort
    ("invoke", txn, op, tobj, value)   record a t-operation invocation
    ("respond", txn, op, tobj, status, value)
    ("pause",)                         fragment barrier, consumes no step

A schedule is either an explicit pid list or a seed: the seeded form picks
uniformly among live processes at every step.  Schedule files hold either a
single ``seed:<u64>`` line or a whitespace-separated pid list.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass

from .memory import CACHED, OP_TRYC, ST_COMMITTED

log = logging.getLogger(__name__)


@dataclass
class Schedule:
    pids: list[int] | None = None
    seed: int | None = None
    max_steps: int | None = None

    @classmethod
    def seeded(cls, seed: int, max_steps: int) -> "Schedule":
        return cls(seed=seed, max_steps=max_steps)

    @classmethod
    def explicit(cls, pids) -> "Schedule":
        return cls(pids=list(pids))

    def to_text(self) -> str:
        if self.seed is not None:
            return f"seed:{self.seed}\n"
        return " ".join(str(p) for p in self.pids or []) + "\n"

    @classmethod
    def from_text(cls, text: str, max_steps: int = 100_000) -> "Schedule":
        text = text.strip()
        if text.startswith("seed:"):
            return cls.seeded(int(text[len("seed:"):]), max_steps)
        return cls.explicit(int(tok) for tok in text.split())


class _Proc:
    __slots__ = ("gen", "pending", "started", "done", "result")

    def __init__(self, gen):
        self.gen = gen
        self.pending = None
        self.started = False
        self.done = False
        self.result = None


def execute_request(rt, pid: int, req):
    """Apply one step request against the runtime. Shared with threaded mode."""
    tag = req[0]
    emu = rt.emu
    if tag == "prim":
        _, txn, base, spec, access = req
        if access == CACHED:
            return emu.cached(pid, txn, base, spec)
        return emu.direct(pid, txn, base, spec)
    if tag == "commit":
        return emu.commit_cache(pid, req[1])
    if tag == "invoke":
        _, txn, op, tobj, value = req
        emu.record_invoke(pid, txn, op, tobj, value)
        return None
    if tag == "respond":
        _, txn, op, tobj, status, value = req
        emu.record_respond(pid, txn, op, tobj, status, value)
        if op == OP_TRYC and status == ST_COMMITTED:
            rt.stats.last_commit_step = rt.stats.steps
        return None
    raise ValueError(f"unknown request {req!r}")


class Scheduler:
    """Drives a set of process generators one primitive event at a time."""

    def __init__(self, rt, programs: dict[int, object]):
        self.rt = rt
        self.procs = {pid: _Proc(gen) for pid, gen in programs.items()}

    def alive(self) -> list[int]:
        return [pid for pid, p in self.procs.items() if not p.done]

    def results(self) -> dict[int, object]:
        return {pid: p.result for pid, p in self.procs.items() if p.done}

    def step(self, pid: int) -> bool:
        """Run one step of ``pid``; False once the process has finished."""
        p = self.procs[pid]
        if p.done:
            return False
        try:
            if p.started:
                req = p.gen.send(p.pending)
            else:
                p.started = True
                req = next(p.gen)
        except StopIteration as stop:
            p.done = True
            p.result = stop.value
            return False
        if req[0] == "pause":
            p.pending = None
            return True
        p.pending = execute_request(self.rt, pid, req)
        self.rt.stats.steps += 1
        return True

    def run(self, schedule: Schedule):
        """Execute under the schedule; returns the recorded History."""
        from .history import History

        if schedule.pids is not None:
            for pid in schedule.pids:
                if pid not in self.procs:
                    log.warning("schedule names unknown process %d; skipped", pid)
                    continue
                if self.procs[pid].done:
                    log.warning("schedule names finished process %d; skipped", pid)
                    continue
                self.step(pid)
        else:
            rng = random.Random(schedule.seed)
            steps = schedule.max_steps or 0
            for _ in range(steps):
                alive = self.alive()
                if not alive:
                    break
                self.step(alive[rng.randrange(len(alive))])
        return History(self.rt.emu.history, truncated=bool(self.alive()))

    def run_fragment(self, pid: int, max_steps: int = 1_000_000) -> str:
        """Run ``pid`` alone until it pauses or finishes (step-contention-free)."""
        p = self.procs[pid]
        for _ in range(max_steps):
            if p.done:
                return "done"
            try:
                if p.started:
                    req = p.gen.send(p.pending)
                else:
                    p.started = True
                    req = next(p.gen)
            except StopIteration as stop:
                p.done = True
                p.result = stop.value
                return "done"
            if req[0] == "pause":
                p.pending = None
                return "paused"
            p.pending = execute_request(self.rt, pid, req)
            self.rt.stats.steps += 1
        raise RuntimeError(f"fragment of pid {pid} exceeded {max_steps} steps")

    def run_to_completion(self, order=None, max_steps: int = 1_000_000):
        """Round-robin everything to completion; convenience for tests."""
        from .history import History

        pids = list(order or self.procs)
        for _ in range(max_steps):
            alive = [pid for pid in pids if not self.procs[pid].done]
            if not alive:
                return History(self.rt.emu.history, truncated=False)
            for pid in alive:
                self.step(pid)
        return History(self.rt.emu.history, truncated=True)


def enumerate_interleavings(factory, max_total_steps: int = 64):
    """Exhaustively enumerate every interleaving of a small program set.

    ``factory()`` must build a fresh ``(rt, programs)`` pair each call;
    exploration replays prefixes from scratch, so programs must be
    deterministic.  Yields ``(pid_sequence, history, results)`` once per
    complete interleaving, without duplication or omission.
    """

    def replay(prefix):
        rt, programs = factory()
        sched = Scheduler(rt, programs)
        for pid in prefix:
            sched.step(pid)
        return rt, sched

    def explore(prefix):
        if len(prefix) > max_total_steps:
            raise RuntimeError("interleaving enumeration exceeded step bound")
        rt, sched = replay(prefix)
        alive = sched.alive()
        if not alive:
            from .history import History

            yield list(prefix), History(rt.emu.history), sched.results()
            return
        for pid in alive:
            yield from explore(prefix + [pid])

    yield from explore([])
