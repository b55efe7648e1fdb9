"""Memory Manager: page cache state as two LRU lists of variable-size data blocks.

A data block is a run of one file's pages that entered the cache in the
same I/O operation. Blocks may be split at any byte boundary. Both lists
are kept sorted by ``last_access`` (least recently used first).

State mutations are synchronous; only device transfers consume simulated
time. Operations that transfer data are generators and must be driven with
``yield from`` inside an engine process.
"""

from __future__ import annotations

import bisect
import itertools
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from operator import attrgetter
from typing import Callable, Iterator

from .engine import ContractError, Engine
from .storage import StorageDevice

log = logging.getLogger(__name__)

WRITEBACK = "writeback"
WRITETHROUGH = "writethrough"


class InvariantError(AssertionError):
    pass


@dataclass(eq=False)
class DataBlock:
    file_name: str
    size: int
    dirty: bool
    last_access: float
    entry_time: float
    where: str | None = field(default=None, repr=False)
    order: tuple = field(default=(), repr=False)

    def key(self):
        return (self.file_name, self.size, self.dirty, self.last_access, self.entry_time)

    def split(self, first: int) -> "DataBlock":
        """Detach the leading ``first`` bytes as a new block; self keeps the rest."""
        if not 0 < first < self.size:
            raise ContractError(f"cannot split {self.size}-byte block at {first}")
        self.size -= first
        return DataBlock(self.file_name, first, self.dirty, self.last_access,
                         self.entry_time, self.where)


_order = attrgetter("order")


def _insort(view: list, block: DataBlock) -> None:
    view.insert(bisect.bisect_right(view, block.order, key=_order), block)


def _discard(view: list, block: DataBlock) -> None:
    i = bisect.bisect_left(view, block.order, key=_order)
    if view[i] is not block:
        raise ContractError(f"{block} not found at its sort position")
    del view[i]


class LRUList:
    """Blocks ordered by last access, least recent first.

    Each block carries a unique sort key ``(last_access, seq, ...)``. A new
    block gets a fresh ``seq`` so it lands after every block with the same
    access time. When a block is split in place the front keeps the key and
    the rest extends it, which puts the rest right behind the front. Per-file
    and dirty-only views share the key, so reads and flushes only visit
    blocks they can act on, and removal never scans.
    """

    def __init__(self, name: str):
        self.name = name
        self.blocks: list[DataBlock] = []
        self.bytes = 0
        self.dirty = 0
        self.by_file: dict[str, list[DataBlock]] = {}
        self.dirty_blocks: list[DataBlock] = []
        self._seq = itertools.count()

    def __iter__(self) -> Iterator[DataBlock]:
        return iter(self.blocks)

    def __len__(self):
        return len(self.blocks)

    def __getitem__(self, i):
        return self.blocks[i]

    def __repr__(self):
        return f"LRUList({self.name}, {len(self.blocks)} blocks, {self.bytes} B)"

    def _add(self, block: DataBlock) -> None:
        block.where = self.name
        self.bytes += block.size
        _insort(self.blocks, block)
        _insort(self.by_file.setdefault(block.file_name, []), block)
        if block.dirty:
            self.dirty += block.size
            _insort(self.dirty_blocks, block)

    def insert_sorted(self, block: DataBlock) -> None:
        """Insert after every block accessed no later than ``block``."""
        block.order = (block.last_access, next(self._seq))
        self._add(block)

    append = insert_sorted

    def remove(self, block: DataBlock) -> DataBlock:
        _discard(self.blocks, block)
        block.where = None
        self.bytes -= block.size
        view = self.by_file[block.file_name]
        _discard(view, block)
        if not view:
            del self.by_file[block.file_name]
        if block.dirty:
            self.dirty -= block.size
            _discard(self.dirty_blocks, block)
        return block

    def pop(self, i: int) -> DataBlock:
        return self.remove(self.blocks[i])

    def split_block(self, block: DataBlock, first: int) -> DataBlock:
        """Split ``block`` in place; the leading part takes its position."""
        self.remove(block)
        front = block.split(first)
        front.order = block.order
        block.order = block.order + (1,)
        self._add(front)
        self._add(block)
        return front

    def split_at(self, i: int, first: int) -> DataBlock:
        return self.split_block(self.blocks[i], first)

    def take_front(self, block: DataBlock, first: int) -> DataBlock:
        """Detach the leading ``first`` bytes of ``block`` out of the list."""
        front = block.split(first)
        front.where = None
        self.bytes -= first
        if block.dirty:
            self.dirty -= first
        return front

    def mark_clean(self, block: DataBlock) -> None:
        _discard(self.dirty_blocks, block)
        self.dirty -= block.size
        block.dirty = False


class MemoryManager:
    def __init__(self, engine: Engine, total_mem: int, memory: StorageDevice,
                 disk: StorageDevice, dirty_ratio: float = 0.2,
                 expire_time: float = 30.0, flush_interval: float = 5.0,
                 write_policy: str = WRITEBACK, name: str = "host"):
        if not 0 < dirty_ratio < 1:
            raise ValueError(f"dirty_ratio must be in (0, 1), got {dirty_ratio}")
        if total_mem <= 0:
            raise ValueError("total_mem must be > 0")
        self.engine = engine
        self.name = name
        self.total_mem = int(total_mem)
        self.free_mem = int(total_mem)
        self.anonymous = 0
        self.dirty = 0
        self.memory = memory
        self.disk = disk
        self.dirty_ratio = dirty_ratio
        self.expire_time = expire_time
        self.flush_interval = flush_interval
        self.write_policy = write_policy
        self.inactive = LRUList("inactive")
        self.active = LRUList("active")
        self.file_cached: dict[str, int] = defaultdict(int)
        self.file_dirty: dict[str, int] = defaultdict(int)
        self.flushed_bytes = 0
        self.observers: list[Callable[["MemoryManager"], None]] = []

    def __repr__(self):
        return (f"MemoryManager({self.name}: free={self.free_mem} anon={self.anonymous} "
                f"cached={self.cached_bytes} dirty={self.dirty})")

    # -- accounting --------------------------------------------------------

    @property
    def now(self) -> float:
        return self.engine.now

    @property
    def cached_bytes(self) -> int:
        return self.inactive.bytes + self.active.bytes

    @property
    def evictable(self) -> int:
        return self.cached_bytes - self.dirty

    @property
    def avail_mem(self) -> int:
        return self.free_mem + self.cached_bytes

    @property
    def dirty_limit(self) -> int:
        return int(self.dirty_ratio * self.avail_mem)

    def cached(self, file_name: str) -> int:
        return self.file_cached.get(file_name, 0)

    def _changed(self) -> None:
        for observer in self.observers:
            observer(self)

    def _insert(self, lst: LRUList, block: DataBlock) -> None:
        lst.append(block)
        self.free_mem -= block.size
        self.file_cached[block.file_name] += block.size
        if block.dirty:
            self.dirty += block.size
            self.file_dirty[block.file_name] += block.size

    def _release(self, block: DataBlock) -> DataBlock:
        """Account for a block that has left the cache."""
        self.free_mem += block.size
        fc = self.file_cached[block.file_name] - block.size
        if fc:
            self.file_cached[block.file_name] = fc
        else:
            del self.file_cached[block.file_name]
        return block

    def _clean(self, block: DataBlock) -> None:
        (self.inactive if block.where == "inactive" else self.active).mark_clean(block)
        self.dirty -= block.size
        fd = self.file_dirty[block.file_name] - block.size
        if fd:
            self.file_dirty[block.file_name] = fd
        else:
            del self.file_dirty[block.file_name]

    # -- cache insertion ---------------------------------------------------

    def add_to_cache(self, file_name: str, amount: int) -> None:
        """Append a clean block to the inactive list. Takes no simulated time."""
        if amount <= 0:
            return
        if amount > self.free_mem:
            raise ContractError(f"add_to_cache({file_name}, {amount}) with free_mem={self.free_mem}")
        now = self.now
        self._insert(self.inactive, DataBlock(file_name, int(amount), False, now, now))
        self._changed()

    def insert_dirty(self, file_name: str, amount: int) -> None:
        """State part of :meth:`write_to_cache`."""
        if amount <= 0:
            return
        if amount > self.free_mem:
            raise ContractError(f"write_to_cache({file_name}, {amount}) with free_mem={self.free_mem}")
        now = self.now
        self._insert(self.inactive, DataBlock(file_name, int(amount), True, now, now))
        self._changed()

    def write_to_cache(self, file_name: str, amount: int):
        """Append a dirty block and time the memory write."""
        if amount <= 0:
            return 0.0
        self.insert_dirty(file_name, amount)
        return (yield from self.memory.write(amount))

    # -- cached reads ------------------------------------------------------

    def touch(self, file_name: str, amount: int) -> None:
        """Promote ``amount`` cached bytes of a file to the active list.

        Inactive blocks are taken before active ones, each list in LRU order.
        Touched clean data is merged into one block; touched dirty blocks are
        moved one by one so they keep their entry time.
        """
        if amount <= 0:
            return
        if amount > self.cached(file_name):
            raise ContractError(
                f"cache_read({file_name}, {amount}) but only {self.cached(file_name)} cached")
        remaining = amount
        clean: list[DataBlock] = []
        dirty: list[DataBlock] = []
        for lst in (self.inactive, self.active):
            view = lst.by_file.get(file_name)
            while remaining > 0 and view:
                block = view[0]
                if block.size > remaining:
                    block = lst.take_front(block, remaining)
                else:
                    lst.remove(block)
                remaining -= block.size
                (dirty if block.dirty else clean).append(block)
        now = self.now
        for block in dirty:
            block.last_access = now
            self.active.append(block)
        if clean:
            merged = DataBlock(file_name, sum(b.size for b in clean), False, now,
                               min(b.entry_time for b in clean))
            self.active.append(merged)
        self.balance_lists()
        self._changed()

    def cache_read(self, file_name: str, amount: int):
        if amount <= 0:
            return 0.0
        self.touch(file_name, amount)
        return (yield from self.memory.read(amount))

    # -- flushing and eviction ---------------------------------------------

    def mark_flushed(self, amount: int, exclude_file: str | None = None) -> int:
        """Clear the dirty flag on up to ``amount`` bytes, LRU first.

        The inactive list is traversed before the active list. Returns the
        number of bytes cleaned; the caller is responsible for timing the
        disk write (see :meth:`flush`).
        """
        if amount <= 0 or self.dirty == 0:
            return 0
        remaining = amount
        for lst in (self.inactive, self.active):
            view = lst.dirty_blocks
            i = 0
            while remaining > 0 and i < len(view):
                block = view[i]
                if block.file_name == exclude_file:
                    i += 1
                    continue
                if block.size > remaining:
                    block = lst.split_block(block, remaining)
                self._clean(block)  # drops it from the view, so i now points at the next one
                remaining -= block.size
            if remaining <= 0:
                break
        flushed = amount - remaining
        if flushed:
            self.flushed_bytes += flushed
            self._changed()
        return flushed

    def flush(self, amount: int, exclude_file: str | None = None):
        flushed = self.mark_flushed(amount, exclude_file)
        if not flushed:
            return 0.0
        return (yield from self.disk.write(flushed))

    def evict(self, amount: int, exclude_file: str | None = None) -> int:
        """Drop clean inactive blocks, LRU first. Takes no simulated time."""
        if amount <= 0:
            return 0
        remaining = amount
        lst = self.inactive
        blocks = lst.blocks
        ahead = lst.bytes - lst.dirty  # clean bytes not yet passed
        i = 0
        while remaining > 0 and ahead > 0:
            block = blocks[i]
            if block.dirty:
                i += 1
                continue
            ahead -= block.size
            if block.file_name == exclude_file:
                i += 1
                continue
            if block.size > remaining:
                block = lst.take_front(block, remaining)
            else:
                lst.remove(block)
            remaining -= self._release(block).size
        evicted = amount - remaining
        if evicted:
            self.balance_lists()
            self._changed()
        return evicted

    def deactivate(self, amount: int) -> int:
        """Move up to ``amount`` bytes from the head of the active list to the inactive list."""
        moved = 0
        while moved < amount and len(self.active):
            need = amount - moved
            block = self.active[0]
            if block.size > need:
                block = self.active.take_front(block, need)
            else:
                self.active.remove(block)
            self.inactive.insert_sorted(block)
            moved += block.size
        if moved:
            self._changed()
        return moved

    def balance_lists(self) -> None:
        """Keep the active list at most twice the size of the inactive list."""
        excess = self.active.bytes - 2 * self.inactive.bytes
        if excess <= 0:
            return
        # moving x bytes changes the excess by 3x
        self.deactivate(-(-excess // 3))

    # -- anonymous memory --------------------------------------------------

    def use_anonymous_mem(self, amount: int) -> None:
        if amount > self.free_mem:
            raise ContractError(f"use_anonymous_mem({amount}) with free_mem={self.free_mem}")
        self.anonymous += amount
        self.free_mem -= amount
        self._changed()

    def release_anonymous_mem(self, amount: int) -> None:
        if amount > self.anonymous:
            raise ContractError(f"release_anonymous_mem({amount}) with anonymous={self.anonymous}")
        self.anonymous -= amount
        self.free_mem += amount
        self._changed()

    # -- periodic flushing -------------------------------------------------

    def expired_blocks(self, lst: LRUList) -> list[DataBlock]:
        now = self.now
        return [b for b in lst.dirty_blocks if now - b.entry_time > self.expire_time]

    def periodic_flush(self):
        """Background process: flush expired dirty blocks every ``flush_interval`` seconds."""
        engine = self.engine
        yield engine.timeout(self.flush_interval)
        while True:
            blocks = self.expired_blocks(self.inactive) + self.expired_blocks(self.active)
            flushing_time = 0.0
            for block in blocks:
                # foreground flushing or eviction may have got there first
                if not block.dirty or block.where is None:
                    continue
                self._clean(block)
                self.flushed_bytes += block.size
                self._changed()
                flushing_time += yield from self.disk.write(block.size)
            if flushing_time < self.flush_interval:
                yield engine.timeout(self.flush_interval - flushing_time)

    def start(self):
        return self.engine.spawn(self.periodic_flush(), name=f"{self.name}:pdflush", daemon=True)

    # -- inspection --------------------------------------------------------

    def blocks(self) -> list[tuple]:
        return [("inactive",) + b.key() for b in self.inactive] + \
               [("active",) + b.key() for b in self.active]

    def check_invariants(self, deep: bool = False) -> None:
        cached = self.cached_bytes
        if self.free_mem + self.anonymous + cached != self.total_mem:
            raise InvariantError(f"conservation broken: {self!r}")
        if min(self.free_mem, self.anonymous, self.dirty) < 0 or self.dirty > cached:
            raise InvariantError(f"negative or inconsistent accounting: {self!r}")
        if self.active.bytes > 2 * self.inactive.bytes:
            raise InvariantError(f"active list too large: {self.active!r} vs {self.inactive!r}")
        if not deep:
            return
        per_file: dict[str, int] = defaultdict(int)
        per_file_dirty: dict[str, int] = defaultdict(int)
        dirty = 0
        for lst in (self.inactive, self.active):
            if lst.bytes != sum(b.size for b in lst):
                raise InvariantError(f"{lst.name} byte counter out of sync")
            if lst.dirty != sum(b.size for b in lst if b.dirty):
                raise InvariantError(f"{lst.name} dirty counter out of sync")
            if lst.dirty_blocks != [b for b in lst if b.dirty]:
                raise InvariantError(f"{lst.name} dirty view out of sync")
            views = {}
            for b in lst:
                views.setdefault(b.file_name, []).append(b)
            if views != lst.by_file:
                raise InvariantError(f"{lst.name} per-file view out of sync")
            prev = float("-inf")
            for b in lst:
                if b.size <= 0:
                    raise InvariantError(f"empty block {b}")
                if b.where != lst.name:
                    raise InvariantError(f"block {b} tagged {b.where} in {lst.name}")
                if b.last_access < prev:
                    raise InvariantError(f"{lst.name} list out of LRU order at {b}")
                if not b.entry_time <= b.last_access <= self.now:
                    raise InvariantError(f"bad timestamps on {b} at t={self.now}")
                prev = b.last_access
                per_file[b.file_name] += b.size
                if b.dirty:
                    dirty += b.size
                    per_file_dirty[b.file_name] += b.size
        if dirty != self.dirty:
            raise InvariantError(f"dirty counter {self.dirty} != {dirty}")
        if dict(per_file) != dict(self.file_cached) or dict(per_file_dirty) != dict(self.file_dirty):
            raise InvariantError("per-file accounting out of sync")
