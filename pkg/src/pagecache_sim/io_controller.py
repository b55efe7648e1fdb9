"""I/O Controller: chunked file reads and writes on top of the Memory Manager."""

from __future__ import annotations

from dataclasses import dataclass

from .engine import SimulationError
from .page_cache import WRITEBACK, WRITETHROUGH, MemoryManager
from .storage import StorageDevice


class OutOfMemoryError(SimulationError):
    pass


class StuckSimulationError(SimulationError):
    pass


@dataclass
class FileHandle:
    file_name: str
    file_size: int
    chunk_size: int
    device: StorageDevice

    def __post_init__(self):
        if self.file_size <= 0:
            raise ValueError(f"{self.file_name}: file size must be > 0")
        if not 0 < self.chunk_size:
            raise ValueError(f"{self.file_name}: chunk size must be > 0")

    def chunks(self):
        """Chunk sizes in access order; the last one may be short."""
        offset = 0
        while offset < self.file_size:
            n = min(self.chunk_size, self.file_size - offset)
            yield n
            offset += n


class IOController:
    """Serves chunk reads/writes for the processes of one host.

    With ``page_cache=False`` every access goes straight to the device at
    ``D / b``; only anonymous memory is still accounted.
    """

    def __init__(self, mm: MemoryManager, page_cache: bool = True,
                 write_policy: str | None = None):
        self.mm = mm
        self.page_cache = page_cache
        self.write_policy = write_policy or mm.write_policy
        self.disk_bytes_written = 0

    # -- reads -------------------------------------------------------------

    def read_chunk(self, fh: FileHandle, cs: int | None = None, use_anonymous: bool = True):
        """Read one chunk; returns the elapsed simulated time.

        ``use_anonymous=False`` is for server-side reads (NFS) where the
        chunk is shipped over the network instead of copied into an
        application buffer.
        """
        mm = self.mm
        cs = fh.chunk_size if cs is None else cs
        start = mm.now
        if not self.page_cache:
            if use_anonymous:
                mm.use_anonymous_mem(cs)
            yield from fh.device.read(cs)
            return mm.now - start

        fn = fh.file_name
        disk_read = max(min(cs, fh.file_size - mm.cached(fn)), 0)
        cache_read = cs - disk_read
        required = disk_read + (cs if use_anonymous else 0)
        yield from mm.flush(required - mm.free_mem - mm.evictable, fn)
        mm.evict(required - mm.free_mem, fn)
        yield from self._reclaim(required, fn)

        # state changes are applied together so concurrent processes cannot
        # take the memory freed above before this chunk uses it
        mm.touch(fn, cache_read)
        mm.add_to_cache(fn, disk_read)
        throttled = 0
        if use_anonymous:
            excess = mm.dirty - int(mm.dirty_ratio * (mm.avail_mem - cs))
            throttled = mm.mark_flushed(excess)
            mm.use_anonymous_mem(cs)

        if disk_read > 0:
            yield from fh.device.read(disk_read)
        if cache_read > 0:
            yield from mm.memory.read(cache_read)
        if throttled:
            yield from mm.disk.write(throttled)
        return mm.now - start

    def _reclaim(self, required: int, fn: str):
        """Free memory beyond what flush + evict achieved, or fail.

        Clean data can sit in the active list where eviction does not reach
        it, so active blocks are demoted before flushing more. The file being
        read is spared until nothing else is left.
        """
        mm = self.mm
        exclude: str | None = fn
        while mm.free_mem < required:
            short = required - mm.free_mem
            if mm.evict(short, exclude):
                continue
            if mm.deactivate(short):
                continue
            flushed = mm.mark_flushed(short, exclude)
            if flushed:
                yield from mm.disk.write(flushed)
                continue
            if exclude is not None:
                # only the file being read is left; give up protecting it
                exclude = None
                continue
            raise OutOfMemoryError(
                f"{mm.name}: need {required} bytes for {fn}, only {mm.free_mem} reclaimable")

    def _make_room(self, needed: int, fn: str | None = None) -> None:
        """Untimed variant of :meth:`_reclaim`: evict, demoting active blocks if needed."""
        mm = self.mm
        while mm.free_mem < needed:
            short = needed - mm.free_mem
            if mm.evict(short, fn):
                continue
            if not mm.deactivate(short):
                return

    def read_file(self, fh: FileHandle, use_anonymous: bool = True):
        mm = self.mm
        if not fh.device.has_file(fh.file_name) and not mm.cached(fh.file_name):
            raise FileNotFoundError(fh.file_name)
        start = mm.now
        for cs in fh.chunks():
            yield from self.read_chunk(fh, cs, use_anonymous)
        return mm.now - start

    # -- writes ------------------------------------------------------------

    def write_chunk(self, fh: FileHandle, cs: int | None = None):
        """Writeback chunk write, throttled by the dirty ratio."""
        mm = self.mm
        cs = fh.chunk_size if cs is None else cs
        fn = fh.file_name
        start = mm.now
        if cs <= 0:
            return 0.0
        remain_dirty = mm.dirty_limit - mm.dirty
        mem_amt = 0
        if remain_dirty > 0:
            mm.evict(min(cs, remain_dirty) - mm.free_mem)
            mem_amt = min(cs, remain_dirty, mm.free_mem)
            yield from mm.write_to_cache(fn, mem_amt)
        remaining = cs - mem_amt
        stalls = 0
        while remaining > 0:
            # flush, evict and cache insert are applied at one instant so that
            # concurrent writers cannot take the dirty headroom freed here
            flushed = mm.mark_flushed(cs - mem_amt)
            mm.evict(cs - mem_amt - mm.free_mem)
            if mm.free_mem < remaining:
                self._make_room(remaining)
            headroom = mm.dirty_limit - mm.dirty
            to_cache = max(min(remaining, mm.free_mem, headroom), 0)
            mm.insert_dirty(fn, to_cache)
            if flushed:
                yield from mm.disk.write(flushed)
            if to_cache == 0:
                stalls += 1
                if stalls >= 2:
                    raise StuckSimulationError(
                        f"{mm.name}: no progress writing {fn} ({remaining} bytes left), {mm!r}")
                continue
            stalls = 0
            yield from mm.memory.write(to_cache)
            remaining -= to_cache
        return mm.now - start

    def write_chunk_writethrough(self, fh: FileHandle, cs: int | None = None):
        mm = self.mm
        cs = fh.chunk_size if cs is None else cs
        start = mm.now
        if cs <= 0:
            return 0.0
        yield from fh.device.write(cs)
        self.disk_bytes_written += cs
        self._make_room(cs, fh.file_name)
        mm.add_to_cache(fh.file_name, min(cs, mm.free_mem))
        return mm.now - start

    def write_file(self, fh: FileHandle, policy: str | None = None):
        mm = self.mm
        policy = policy or self.write_policy
        start = mm.now
        written = 0
        for cs in fh.chunks():
            if not self.page_cache:
                yield from fh.device.write(cs)
                self.disk_bytes_written += cs
            elif policy == WRITETHROUGH:
                yield from self.write_chunk_writethrough(fh, cs)
            elif policy == WRITEBACK:
                yield from self.write_chunk(fh, cs)
            else:
                raise ValueError(f"unknown write policy {policy!r}")
            written += cs
            fh.device.store(fh.file_name, written)
        return mm.now - start
