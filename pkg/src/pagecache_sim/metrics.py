"""Observation of simulated memory state and application operations.

Exported files (times in seconds with 6 decimals, sizes in bytes):

``memory_profile.csv``
    time, host, total_used, cached, dirty, anonymous, free
``ops.csv``
    instance, task, op, file, start, end
``cache_snapshots.csv``
    time, host, file, cached_bytes, dirty_bytes
``summary.json``
    run metadata, makespan, per-task phase durations, wall-clock time
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable

from .page_cache import MemoryManager

MEMORY_COLUMNS = ["time", "host", "total_used", "cached", "dirty", "anonymous", "free"]
OP_COLUMNS = ["instance", "task", "op", "file", "start", "end"]
SNAPSHOT_COLUMNS = ["time", "host", "file", "cached_bytes", "dirty_bytes"]


@dataclass(frozen=True)
class MemorySample:
    time: float
    host: str
    total_used: int
    cached: int
    dirty: int
    anonymous: int
    free: int


@dataclass(frozen=True)
class OpRecord:
    instance: int
    task: str
    op: str  # read | compute | write
    file: str
    start: float
    end: float

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass
class CacheSnapshot:
    time: float
    host: str
    files: dict[str, tuple[int, int]] = field(default_factory=dict)

    @property
    def cached(self) -> int:
        return sum(c for c, _ in self.files.values())


def sample_memory(mm: MemoryManager) -> MemorySample:
    cached = mm.cached_bytes
    return MemorySample(mm.now, mm.name, mm.anonymous + cached, cached, mm.dirty,
                        mm.anonymous, mm.free_mem)


def snapshot_cache(mm: MemoryManager) -> CacheSnapshot:
    files = {name: (size, mm.file_dirty.get(name, 0))
             for name, size in sorted(mm.file_cached.items())}
    return CacheSnapshot(mm.now, mm.name, files)


def _t(x: float) -> str:
    return f"{x:.6f}"


class Recorder:
    """Collects samples, op records and cache snapshots during a run.

    With ``event_driven`` a memory sample is taken after every Memory
    Manager state change. ``check`` verifies the accounting invariants on
    each sample and raises on the first violation.
    """

    def __init__(self, event_driven: bool = True, check: bool = False):
        self.event_driven = event_driven
        self.check = check
        self.samples: list[MemorySample] = []
        self.ops: list[OpRecord] = []
        self.snapshots: list[CacheSnapshot] = []
        self.dirty_violations = 0

    def attach(self, mm: MemoryManager) -> None:
        if self.event_driven:
            mm.observers.append(self.observe)

    def observe(self, mm: MemoryManager) -> None:
        if self.check:
            mm.check_invariants()
            if mm.dirty > mm.dirty_ratio * mm.avail_mem:
                self.dirty_violations += 1
        self.samples.append(sample_memory(mm))

    def record_op(self, instance: int, task: str, op: str, file: str,
                  start: float, end: float) -> OpRecord:
        rec = OpRecord(instance, task, op, file, start, end)
        self.ops.append(rec)
        return rec

    def snapshot(self, mm: MemoryManager) -> CacheSnapshot:
        snap = snapshot_cache(mm)
        self.snapshots.append(snap)
        return snap

    def cadence_sampler(self, mms: Iterable[MemoryManager], cadence: float):
        """Daemon process sampling every ``cadence`` seconds."""
        mms = list(mms)
        engine = mms[0].engine
        while True:
            for mm in mms:
                self.samples.append(sample_memory(mm))
            yield engine.timeout(cadence)

    def samples_for(self, host: str) -> list[MemorySample]:
        return [s for s in self.samples if s.host == host]

    def export(self, directory: str | Path, summary: dict | None = None) -> dict[str, Path]:
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "memory_profile": out / "memory_profile.csv",
            "ops": out / "ops.csv",
            "cache_snapshots": out / "cache_snapshots.csv",
            "summary": out / "summary.json",
        }
        samples = sorted(self.samples, key=lambda s: s.time)
        with open(paths["memory_profile"], "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(MEMORY_COLUMNS)
            for s in samples:
                w.writerow([_t(s.time), s.host, s.total_used, s.cached, s.dirty,
                            s.anonymous, s.free])
        with open(paths["ops"], "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(OP_COLUMNS)
            for r in self.ops:
                w.writerow([r.instance, r.task, r.op, r.file, _t(r.start), _t(r.end)])
        with open(paths["cache_snapshots"], "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(SNAPSHOT_COLUMNS)
            for snap in self.snapshots:
                for name, (cached, dirty) in snap.files.items():
                    w.writerow([_t(snap.time), snap.host, name, cached, dirty])
        with open(paths["summary"], "w") as f:
            json.dump(summary or {}, f, indent=2, sort_keys=True)
            f.write("\n")
        return paths


def op_summary(ops: Iterable[OpRecord]) -> list[dict]:
    return [asdict(r) | {"duration": r.duration} for r in ops]
