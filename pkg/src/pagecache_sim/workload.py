"""Simulated applications: pipelines of read / compute / write tasks.

A :class:`Simulation` owns the engine, one Memory Manager per host, and the
devices and links. Applications reach storage through a binding: either a
host-local disk or an NFS mount served by another host's page cache.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable

from .engine import Engine
from .io_controller import FileHandle, IOController
from .metrics import Recorder
from .page_cache import WRITEBACK, WRITETHROUGH, MemoryManager
from .storage import NetworkLink, StorageDevice

log = logging.getLogger(__name__)

DEFAULT_CHUNK = 10**6


@dataclass
class TaskSpec:
    name: str
    inputs: list[tuple[str, int]] = field(default_factory=list)
    outputs: list[tuple[str, int]] = field(default_factory=list)
    cpu_time: float = 0.0

    def __post_init__(self):
        if self.cpu_time < 0:
            raise ValueError(f"task {self.name}: cpu_time must be >= 0")
        for fname, size in self.inputs + self.outputs:
            if size <= 0:
                raise ValueError(f"task {self.name}: file {fname} has size {size}")


@dataclass
class PipelineSpec:
    tasks: list[TaskSpec]
    release_anon_after_task: bool = True

    def external_inputs(self) -> list[tuple[str, int]]:
        """Input files not produced by an earlier task (must pre-exist on storage)."""
        produced: set[str] = set()
        found: dict[str, int] = {}
        for task in self.tasks:
            for fname, size in task.inputs:
                if fname not in produced:
                    found.setdefault(fname, size)
            produced.update(f for f, _ in task.outputs)
        return list(found.items())

    def renamed(self, suffix: str) -> "PipelineSpec":
        def ren(files):
            return [(f"{f}{suffix}", s) for f, s in files]
        tasks = [TaskSpec(t.name, ren(t.inputs), ren(t.outputs), t.cpu_time) for t in self.tasks]
        return PipelineSpec(tasks, self.release_anon_after_task)


@dataclass
class HostSpec:
    name: str
    total_mem: int
    memory_bw: float = 4812e6
    disks: list[StorageDevice] = field(default_factory=list)
    dirty_ratio: float = 0.2
    expire_time: float = 30.0
    flush_interval: float = 5.0
    memory_write_bw: float | None = None

    def __post_init__(self):
        if self.total_mem <= 0:
            raise ValueError(f"host {self.name}: total_mem must be > 0")


@dataclass
class NFSMount:
    name: str
    client: str
    server: str
    disk: str
    link: str
    server_policy: str = WRITETHROUGH


@dataclass
class TaskTiming:
    instance: int
    task: str
    start: float
    read: float = 0.0
    compute: float = 0.0
    write: float = 0.0
    end: float = 0.0


class Host:
    def __init__(self, engine: Engine, spec: HostSpec, write_policy: str, page_cache: bool):
        self.spec = spec
        self.name = spec.name
        mem_bw = spec.memory_bw
        self.memory = StorageDevice(f"{spec.name}:memory", spec.total_mem, mem_bw,
                                    spec.memory_write_bw or mem_bw).attach(engine)
        self.disks = {d.name: d.attach(engine) for d in spec.disks}
        backing = spec.disks[0] if spec.disks else self.memory
        self.mm = MemoryManager(engine, spec.total_mem, self.memory, backing,
                                dirty_ratio=spec.dirty_ratio, expire_time=spec.expire_time,
                                flush_interval=spec.flush_interval,
                                write_policy=write_policy, name=spec.name)
        self.io = IOController(self.mm, page_cache=page_cache, write_policy=write_policy)

    def disk(self, name: str | None = None) -> StorageDevice:
        if name is None:
            return next(iter(self.disks.values()))
        return self.disks[name]


class LocalStorage:
    """Files on a disk of the host running the application."""

    def __init__(self, host: Host, disk: StorageDevice):
        self.host = host
        self.disk = disk
        self.client_mm = host.mm

    def handle(self, fname, size, cs) -> FileHandle:
        return FileHandle(fname, size, min(cs, size), self.disk)

    def create(self, fname: str, size: int) -> None:
        self.disk.store(fname, size)

    def read_file(self, fname, size, cs):
        return (yield from self.host.io.read_file(self.handle(fname, size, cs)))

    def write_file(self, fname, size, cs):
        return (yield from self.host.io.write_file(self.handle(fname, size, cs)))


class RemoteStorage:
    """Files on an NFS server disk; no client-side cache.

    Each chunk is served by the server (page cache + disk) and then shipped
    over the link; network and disk are serialized per chunk.
    """

    def __init__(self, client: Host, server: Host, disk: StorageDevice, link: NetworkLink):
        self.client = client
        self.server = server
        self.disk = disk
        self.link = link
        self.client_mm = client.mm
        self.server_io = IOController(server.mm, page_cache=server.io.page_cache,
                                      write_policy=WRITETHROUGH)

    def handle(self, fname, size, cs) -> FileHandle:
        return FileHandle(fname, size, min(cs, size), self.disk)

    def create(self, fname: str, size: int) -> None:
        self.disk.store(fname, size)

    def remote_read_chunk(self, fh: FileHandle, cs: int):
        start = self.client_mm.now
        yield from self.server_io.read_chunk(fh, cs, use_anonymous=False)
        yield from self.link.transfer(cs)
        self.client_mm.use_anonymous_mem(cs)
        return self.client_mm.now - start

    def remote_write_chunk(self, fh: FileHandle, cs: int):
        start = self.client_mm.now
        yield from self.link.transfer(cs)
        if self.server_io.page_cache:
            yield from self.server_io.write_chunk_writethrough(fh, cs)
        else:
            yield from fh.device.write(cs)
        return self.client_mm.now - start

    def read_file(self, fname, size, cs):
        fh = self.handle(fname, size, cs)
        if not self.disk.has_file(fname) and not self.server.mm.cached(fname):
            raise FileNotFoundError(fname)
        start = self.client_mm.now
        for n in fh.chunks():
            yield from self.remote_read_chunk(fh, n)
        return self.client_mm.now - start

    def write_file(self, fname, size, cs):
        fh = self.handle(fname, size, cs)
        start = self.client_mm.now
        written = 0
        for n in fh.chunks():
            yield from self.remote_write_chunk(fh, n)
            written += n
            self.disk.store(fname, written)
        return self.client_mm.now - start


class Simulation:
    def __init__(self, hosts: Iterable[HostSpec], links: Iterable[NetworkLink] = (),
                 mounts: Iterable[NFSMount] = (), page_cache: bool = True,
                 write_policy: str = WRITEBACK, chunk_size: int = DEFAULT_CHUNK,
                 cadence: float | None = None, recorder: Recorder | None = None):
        if write_policy not in (WRITEBACK, WRITETHROUGH):
            raise ValueError(f"unknown write policy {write_policy!r}")
        self.engine = Engine()
        self.page_cache = page_cache
        self.write_policy = write_policy
        self.chunk_size = int(chunk_size)
        self.recorder = recorder or Recorder()
        self.hosts = {h.name: Host(self.engine, h, write_policy, page_cache) for h in hosts}
        self.links = {l.name: l.attach(self.engine) for l in links}
        self.mounts = {m.name: m for m in mounts}
        for host in self.hosts.values():
            self.recorder.attach(host.mm)
            if page_cache:
                host.mm.start()
        if cadence:
            mms = [h.mm for h in self.hosts.values()]
            self.engine.spawn(self.recorder.cadence_sampler(mms, cadence), "sampler", daemon=True)

    @property
    def now(self) -> float:
        return self.engine.now

    def local(self, host: str, disk: str | None = None) -> LocalStorage:
        h = self.hosts[host]
        return LocalStorage(h, h.disk(disk))

    def nfs(self, mount: str) -> RemoteStorage:
        m = self.mounts[mount]
        server = self.hosts[m.server]
        return RemoteStorage(self.hosts[m.client], server, server.disk(m.disk), self.links[m.link])

    # -- applications ------------------------------------------------------

    def run_task(self, task: TaskSpec, storage, instance: int = 0, release_anon: bool = True):
        """Process body: read inputs, compute, write outputs, release buffers."""
        rec = self.recorder
        engine = self.engine
        mm = storage.client_mm
        cs = self.chunk_size
        timing = TaskTiming(instance, task.name, engine.now)
        anon_used = 0
        for fname, size in task.inputs:
            t0 = engine.now
            yield from storage.read_file(fname, size, cs)
            anon_used += size
            rec.record_op(instance, task.name, "read", fname, t0, engine.now)
            timing.read += engine.now - t0
            self._snapshot(storage)
        t0 = engine.now
        if task.cpu_time > 0:
            yield engine.timeout(task.cpu_time)
        rec.record_op(instance, task.name, "compute", "", t0, engine.now)
        timing.compute = engine.now - t0
        for fname, size in task.outputs:
            t0 = engine.now
            yield from storage.write_file(fname, size, cs)
            rec.record_op(instance, task.name, "write", fname, t0, engine.now)
            timing.write += engine.now - t0
            self._snapshot(storage)
        if release_anon:
            mm.release_anonymous_mem(anon_used)
        timing.end = engine.now
        return timing

    def _snapshot(self, storage) -> None:
        server = getattr(storage, "server", None)
        self.recorder.snapshot((server or storage.host).mm)

    def pipeline_process(self, pipeline: PipelineSpec, storage, instance: int = 0):
        timings = []
        for task in pipeline.tasks:
            timing = yield from self.run_task(task, storage, instance,
                                              pipeline.release_anon_after_task)
            timings.append(timing)
        return timings

    def prepare(self, pipeline: PipelineSpec, storage) -> None:
        for fname, size in pipeline.external_inputs():
            if not storage.disk.has_file(fname):
                storage.create(fname, size)

    def run_pipeline(self, pipeline: PipelineSpec, storage) -> list[TaskTiming]:
        return self.run_concurrent(pipeline, 1, storage)[0]

    def run_concurrent(self, pipeline: PipelineSpec, n: int, storage) -> list[list[TaskTiming]]:
        """Start ``n`` instances at the current time on disjoint copies of the files."""
        if n < 1:
            raise ValueError("need at least one instance")
        procs = []
        for k in range(n):
            p = pipeline if n == 1 else pipeline.renamed(f".{k}")
            self.prepare(p, storage)
            procs.append(self.engine.spawn(self.pipeline_process(p, storage, k), f"app{k}"))
        self.engine.run()
        return [proc.value for proc in procs]
