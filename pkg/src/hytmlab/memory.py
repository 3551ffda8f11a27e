"""Base objects, read-modify-write primitives, and the event vocabulary.

Shared memory is an array of 64-bit words ("base objects") accessed only
through atomic rmw primitives.  A primitive application is *trivial* iff it
leaves the target word unchanged in the configuration it is applied to;
triviality is what drives conflict propagation between tracking sets, so it
is computed from the actual old/new words, never assumed from the kind.

Sequence locks are packed into a single word so that one lock is one base
object:

    bit 0        locked flag
    bits 1..16   owner process id (meaningful only while locked)
    bits 17..63  sequence number

A plain ``unlock`` clears the lock bit and owner and never touches the
sequence.  ``unlock_inc`` additionally bumps the sequence by one in the same
atomic step (used when releasing after a write-back, so that concurrent
readers' validation observes the change).  ``unlock_set`` installs an
explicit sequence (versioned-lock release).  Sequence overflow in 47 bits is
ignored; no desk-scale run can exhaust it.
"""

from __future__ import annotations

from dataclasses import dataclass

MASK64 = (1 << 64) - 1

# ---------------------------------------------------------------------------
# Rmw primitives
# ---------------------------------------------------------------------------


class ModelViolation(Exception):
    """Fatal model violation (algorithm bug), never a transactional abort."""


@dataclass(frozen=True, slots=True)
class Rmw:
    """A read-modify-write primitive. Lock owners are taken from the caller pid."""

    kind: str
    a: int = 0
    b: int = 0


READ = Rmw("read")
TRY_LOCK = Rmw("try_lock")
UNLOCK = Rmw("unlock")
UNLOCK_INC = Rmw("unlock_inc")
INC_SEQ = Rmw("inc_seq")


def write(value: int) -> Rmw:
    return Rmw("write", value & MASK64)


def cas(expect: int, new: int) -> Rmw:
    return Rmw("cas", expect & MASK64, new & MASK64)


def faa(delta: int) -> Rmw:
    return Rmw("faa", delta & MASK64)


def unlock_set(sequence: int) -> Rmw:
    return Rmw("unlock_set", sequence)


# Sequence-lock word codec.  Lossless: pack(*unpack(w)) == w for any word.

def is_locked(word: int) -> bool:
    return bool(word & 1)


def lock_owner(word: int) -> int:
    return (word >> 1) & 0xFFFF


def sequence(word: int) -> int:
    return word >> 17


def pack_lock(locked: bool, owner: int, seq: int) -> int:
    return ((seq << 17) | ((owner & 0xFFFF) << 1) | (1 if locked else 0)) & MASK64


def unpack_lock(word: int) -> tuple[bool, int, int]:
    return is_locked(word), lock_owner(word), sequence(word)


def _check_owned(old: int, pid: int, kind: str) -> None:
    if not is_locked(old):
        raise ModelViolation(f"{kind} of unlocked word by pid {pid}")
    if lock_owner(old) != pid:
        raise ModelViolation(
            f"{kind} by pid {pid} of word held by pid {lock_owner(old)}"
        )


def apply_word(old: int, spec: Rmw, pid: int) -> tuple[int, int]:
    """Apply ``spec`` to the word ``old``; return ``(new, returned)``.

    ``returned`` is always the prior word.  Success of a try_lock or cas is
    recovered from whether the word changed.
    """
    k = spec.kind
    if k == "read":
        return old, old
    if k == "write":
        return spec.a, old
    if k == "cas":
        return (spec.b if old == spec.a else old), old
    if k == "faa":
        return (old + spec.a) & MASK64, old
    if k == "try_lock":
        if is_locked(old):
            return old, old
        return pack_lock(True, pid, sequence(old)), old
    if k == "unlock":
        _check_owned(old, pid, "unlock")
        return pack_lock(False, 0, sequence(old)), old
    if k == "unlock_inc":
        _check_owned(old, pid, "unlock_inc")
        return pack_lock(False, 0, sequence(old) + 1), old
    if k == "unlock_set":
        _check_owned(old, pid, "unlock_set")
        return pack_lock(False, 0, spec.a), old
    if k == "inc_seq":
        return pack_lock(is_locked(old), lock_owner(old), sequence(old) + 1), old
    raise ModelViolation(f"unknown rmw kind {k!r}")


# ---------------------------------------------------------------------------
# Events
# ---------------------------------------------------------------------------

# Event kinds.
INVOKE = 0
RESPOND = 1
PRIM = 2
COMMIT = 3          # cache-commit
ABORT_TRACKING = 4
ABORT_CAPACITY = 5
ABORT_SPURIOUS = 6

# T-operation codes (``mode`` column of invoke/respond events).
OP_READ = 0
OP_WRITE = 1
OP_TRYC = 2
OP_BEGIN = 3

# Respond status (``trivial`` column of respond events).
ST_OK = 0
ST_ABORTED = 1
ST_COMMITTED = 2

# Access tags (``mode`` column of primitive events).
DIRECT = 0
CACHED = 1

NO_TXN = -1  # process-level maintenance steps outside any transaction


@dataclass(frozen=True, slots=True)
class Event:
    """One history record.

    Column meanings depend on ``kind``:

    * invoke/respond: ``base`` is the t-object (-1 for tryC/begin), ``mode``
      is the op code, ``trivial`` is the respond status, ``value`` carries
      the written value (invoke of a write) or the returned value (respond
      of a read).
    * primitive: ``base`` is the base object, ``mode`` is direct/cached,
      ``trivial`` is the triviality flag, ``value`` is the returned word.
    * cache-commit: ``value`` is the number of words published.
    * abort events: ``base`` is the base being accessed at delivery (or -1).
    """

    pid: int
    txn: int
    kind: int
    base: int = -1
    mode: int = 0
    trivial: int = 0
    value: int = 0


# ---------------------------------------------------------------------------
# Shared-memory layout
# ---------------------------------------------------------------------------

# Reserved metadata words.
BASE_L = 0       # global lock (second algorithm / lock elision fallback)
BASE_GSL = 1     # global sequence lock
BASE_ESL = 2     # companion lock narrowing the fast-path contention window
BASE_GVC = 3     # global version clock
BASE_F = 4       # live slow-updater counter for the fast-fast wrapper
META_REGION = 8

LOCK_BITS = 20
LOCK_COUNT = 1 << LOCK_BITS
LOCK_REGION = META_REGION
VALUE_REGION = META_REGION + LOCK_COUNT

_HASH_MULT = 0x9E3779B97F4A7C15  # odd 64-bit multiplier, top LOCK_BITS kept


def lock_index(tobj: int) -> int:
    return ((tobj * _HASH_MULT) & MASK64) >> (64 - LOCK_BITS)


def lock_base(tobj: int) -> int:
    return LOCK_REGION + lock_index(tobj)


def value_base(tobj: int) -> int:
    return VALUE_REGION + tobj


def memory_size(num_tobjects: int) -> int:
    return VALUE_REGION + num_tobjects


class Memory:
    """Sparse bounded array of base objects, all initially zero."""

    def __init__(self, size: int):
        self.size = size
        self._words: dict[int, int] = {}

    def check(self, base: int) -> None:
        if not 0 <= base < self.size:
            raise ModelViolation(f"base object {base} outside memory of size {self.size}")

    def read(self, base: int) -> int:
        return self._words.get(base, 0)

    def write_word(self, base: int, value: int) -> None:
        self._words[base] = value & MASK64

    def snapshot(self) -> dict[int, int]:
        return dict(self._words)
