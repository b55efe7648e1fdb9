"""Scenario files: YAML description of platform, workload, simulation and output.

Sizes and bandwidths accept plain numbers or strings with a unit
(``"20GB"``, ``"246GiB"``, ``"465MB/s"``, ``"1e8"``); decimal units are
powers of 1000, binary units powers of 1024.
"""

from __future__ import annotations

import copy
import gc
import re
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any

import yaml

from .metrics import Recorder
from .page_cache import WRITEBACK, WRITETHROUGH
from .storage import NetworkLink, StorageDevice
from .workload import DEFAULT_CHUNK, HostSpec, NFSMount, PipelineSpec, Simulation, TaskSpec

SCHEMA_VERSION = 1

_UNITS = {
    "": 1, "b": 1,
    "kb": 10**3, "mb": 10**6, "gb": 10**9, "tb": 10**12,
    "kib": 2**10, "mib": 2**20, "gib": 2**30, "tib": 2**40,
}
_SIZE_RE = re.compile(r"^\s*([0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)\s*([A-Za-z]*)\s*(?:/s)?\s*$")


class ScenarioError(ValueError):
    def __init__(self, message: str, path: str = "", line: int | None = None):
        self.path = path
        self.line = line
        where = f"line {line}: " if line else ""
        where += f"{path}: " if path else ""
        super().__init__(where + message)


class _Map(dict):
    """dict that remembers the source line of each key."""
    lines: dict[str, int]
    line: int | None = None


class _Loader(yaml.SafeLoader):
    pass


def _construct_map(loader, node):
    loader.flatten_mapping(node)
    m = _Map()
    m.lines = {}
    m.line = node.start_mark.line + 1
    for key_node, value_node in node.value:
        key = loader.construct_object(key_node, deep=True)
        m[key] = loader.construct_object(value_node, deep=True)
        m.lines[key] = key_node.start_mark.line + 1
    return m


_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_map)


def parse_quantity(value: Any, path: str = "", line: int | None = None) -> float:
    if isinstance(value, bool):
        raise ScenarioError(f"expected a number, got {value!r}", path, line)
    if isinstance(value, (int, float)):
        return value
    if isinstance(value, str):
        m = _SIZE_RE.match(value)
        if m and m.group(2).lower() in _UNITS:
            number = float(m.group(1))
            unit = _UNITS[m.group(2).lower()]
            return int(number * unit) if (number * unit).is_integer() else number * unit
    raise ScenarioError(f"cannot parse quantity {value!r}", path, line)


class _Reader:
    """Typed field access with path/line diagnostics."""

    def __init__(self, data: Any, path: str = "", line: int | None = None):
        if not isinstance(data, dict):
            raise ScenarioError("expected a mapping", path, line)
        self.data = data
        self.path = path
        self.line = getattr(data, "line", line)

    def _where(self, key):
        lines = getattr(self.data, "lines", {})
        return (f"{self.path}.{key}" if self.path else key), lines.get(key, self.line)

    def has(self, key) -> bool:
        return key in self.data and self.data[key] is not None

    def raw(self, key, default=...):
        if key not in self.data or self.data[key] is None:
            if default is ...:
                path, _ = self._where(key)
                raise ScenarioError("missing required field", path, self.line)
            return default
        return self.data[key]

    def error(self, key, message):
        path, line = self._where(key)
        return ScenarioError(message, path, line)

    def sub(self, key, default=...) -> "_Reader":
        value = self.raw(key, {} if default is ... else default)
        path, line = self._where(key)
        return _Reader(value, path, line)

    def items(self, key, required=True) -> list["_Reader"]:
        value = self.raw(key, ... if required else [])
        path, line = self._where(key)
        if not isinstance(value, list):
            raise ScenarioError("expected a list", path, line)
        return [_Reader(v, f"{path}[{i}]", line) for i, v in enumerate(value)]

    def quantity(self, key, default=..., positive=True, integer=False):
        value = self.raw(key, default)
        path, line = self._where(key)
        q = parse_quantity(value, path, line)
        if positive and q <= 0:
            raise ScenarioError(f"must be > 0, got {value!r}", path, line)
        if not positive and q < 0:
            raise ScenarioError(f"must be >= 0, got {value!r}", path, line)
        return int(q) if integer else q

    def string(self, key, default=...) -> str:
        value = self.raw(key, default)
        if value is None and default is None:
            return None
        if not isinstance(value, str):
            raise self.error(key, f"expected a string, got {value!r}")
        return value

    def boolean(self, key, default=...) -> bool:
        value = self.raw(key, default)
        if isinstance(value, str) and value.lower() in ("on", "off"):
            return value.lower() == "on"
        if not isinstance(value, bool):
            raise self.error(key, f"expected true/false, got {value!r}")
        return value


@dataclass
class Scenario:
    name: str
    hosts: list[HostSpec]
    links: list[NetworkLink]
    mounts: list[NFSMount]
    pipeline: PipelineSpec
    host: str
    disk: str | None = None
    mount: str | None = None
    instances: int = 1
    chunk_size: int = DEFAULT_CHUNK
    page_cache: bool = True
    write_policy: str = WRITEBACK
    cadence: float | None = None
    output: str | None = None

    def build(self, page_cache: bool | None = None, write_policy: str | None = None,
              cadence: float | None = None, check: bool = False) -> tuple[Simulation, Any]:
        """Fresh simulation and storage binding for one run."""
        # device objects hold file tables and engine resources; never share them across runs
        sim = Simulation(
            copy.deepcopy(self.hosts), copy.deepcopy(self.links), copy.deepcopy(self.mounts),
            page_cache=self.page_cache if page_cache is None else page_cache,
            write_policy=write_policy or self.write_policy,
            chunk_size=self.chunk_size,
            cadence=self.cadence if cadence is None else cadence,
            recorder=Recorder(check=check),
        )
        storage = sim.nfs(self.mount) if self.mount else sim.local(self.host, self.disk)
        return sim, storage

    def run(self, page_cache: bool | None = None, write_policy: str | None = None,
            instances: int | None = None, cadence: float | None = None,
            check: bool = False) -> "RunResult":
        sim, storage = self.build(page_cache, write_policy, cadence, check)
        n = instances or self.instances
        # the run allocates few cycles; collector pauses only add timing noise
        gc.collect()
        was_enabled = gc.isenabled()
        gc.disable()
        try:
            t0 = time.perf_counter()
            timings = sim.run_concurrent(self.pipeline, n, storage)
            wall = time.perf_counter() - t0
        finally:
            if was_enabled:
                gc.enable()
        for host in sim.hosts.values():
            sim.recorder.snapshot(host.mm)
            host.mm.check_invariants(deep=True)
        return RunResult(self, sim, timings, wall, n)


@dataclass
class RunResult:
    scenario: Scenario
    sim: Simulation
    timings: list
    wall_clock: float
    instances: int

    @property
    def makespan(self) -> float:
        return self.sim.now

    def summary(self) -> dict:
        sim = self.sim
        r6 = lambda x: round(x, 6)  # noqa: E731
        tasks = [
            {"instance": t.instance, "task": t.task, "start": r6(t.start), "end": r6(t.end),
             "read": r6(t.read), "compute": r6(t.compute), "write": r6(t.write)}
            for inst in self.timings for t in inst
        ]
        return {
            "scenario": self.scenario.name,
            "page_cache": sim.page_cache,
            "write_policy": sim.write_policy,
            "instances": self.instances,
            "chunk_size": sim.chunk_size,
            "makespan": r6(self.makespan),
            "tasks": tasks,
            "bytes_flushed": {h.name: h.mm.flushed_bytes for h in sim.hosts.values()},
            "events": sim.engine.events_processed,
            "wall_clock_s": self.wall_clock,
        }

    def export(self, directory) -> dict:
        return self.sim.recorder.export(directory, self.summary())


def _parse_device(r: _Reader) -> StorageDevice:
    bw = r.quantity("bandwidth", None) if r.has("bandwidth") else None
    read_bw = r.quantity("read_bw", bw if bw is not None else ...)
    write_bw = r.quantity("write_bw", bw if bw is not None else read_bw)
    return StorageDevice(r.string("name"), r.quantity("capacity", integer=True),
                         read_bw, write_bw, r.quantity("latency", 0.0, positive=False))


def _parse_files(r: _Reader, key: str) -> list[tuple[str, int]]:
    return [(f.string("file"), f.quantity("size", integer=True)) for f in r.items(key, required=False)]


def parse_scenario(data: Any, name: str = "scenario") -> Scenario:
    root = _Reader(data)
    version = root.raw("version")
    if version != SCHEMA_VERSION:
        raise root.error("version", f"unsupported schema version {version!r} (expected {SCHEMA_VERSION})")
    name = root.string("name", name)

    plat = root.sub("platform")
    hosts: list[HostSpec] = []
    for h in plat.items("hosts"):
        cache = h.sub("cache", {})
        ratio = cache.quantity("dirty_ratio", 0.2)
        if not 0 < ratio < 1:
            raise cache.error("dirty_ratio", f"must be in (0, 1), got {ratio}")
        mem_bw = h.quantity("memory_bw", 4812e6)
        disks = [_parse_device(d) for d in h.items("disks", required=False)]
        if len({d.name for d in disks}) != len(disks):
            raise h.error("disks", "duplicate disk names")
        hosts.append(HostSpec(
            h.string("name"), h.quantity("total_mem", integer=True), mem_bw, disks,
            dirty_ratio=ratio,
            expire_time=cache.quantity("expire_time", 30.0),
            flush_interval=cache.quantity("flush_interval", 5.0),
            memory_write_bw=h.quantity("memory_write_bw", mem_bw),
        ))
    host_map = {h.name: h for h in hosts}
    if len(host_map) != len(hosts):
        raise plat.error("hosts", "duplicate host names")

    links = [NetworkLink(l.string("name"), l.quantity("bandwidth"),
                         l.quantity("latency", 0.0, positive=False))
             for l in plat.items("links", required=False)]
    link_names = {l.name for l in links}
    mounts = []
    for m in plat.items("mounts", required=False):
        mount = NFSMount(m.string("name"), m.string("client"), m.string("server"),
                         m.string("disk"), m.string("link"))
        for key in ("client", "server"):
            if getattr(mount, key) not in host_map:
                raise m.error(key, f"unknown host {getattr(mount, key)!r}")
        if mount.disk not in {d.name for d in host_map[mount.server].disks}:
            raise m.error("disk", f"host {mount.server!r} has no disk {mount.disk!r}")
        if mount.link not in link_names:
            raise m.error("link", f"unknown link {mount.link!r}")
        if m.has("server_policy") and m.string("server_policy") != WRITETHROUGH:
            raise m.error("server_policy", "NFS servers are modelled as writethrough only")
        mounts.append(mount)
    mount_map = {m.name: m for m in mounts}

    wl = root.sub("workload")
    pl = wl.sub("pipeline")
    tasks = []
    for t in pl.items("tasks"):
        try:
            tasks.append(TaskSpec(t.string("name"), _parse_files(t, "inputs"),
                                  _parse_files(t, "outputs"),
                                  t.quantity("cpu_time", 0.0, positive=False)))
        except ValueError as e:
            if isinstance(e, ScenarioError):
                raise
            raise ScenarioError(str(e), t.path, t.line) from None
    if not tasks:
        raise pl.error("tasks", "pipeline has no tasks")
    pipeline = PipelineSpec(tasks, pl.boolean("release_anon_after_task", True))
    chunk = wl.quantity("chunk_size", DEFAULT_CHUNK, integer=True)
    instances = wl.quantity("instances", 1, integer=True)

    st = wl.sub("storage")
    mount_name = st.string("mount", None)
    host_name = disk_name = None
    if mount_name is not None:
        if mount_name not in mount_map:
            raise st.error("mount", f"unknown mount {mount_name!r}")
        host_name = mount_map[mount_name].client
        serving = host_map[mount_map[mount_name].server]
        capacity = next(d.capacity for d in serving.disks if d.name == mount_map[mount_name].disk)
    else:
        host_name = st.string("host")
        if host_name not in host_map:
            raise st.error("host", f"unknown host {host_name!r}")
        serving = host_map[host_name]
        if not serving.disks:
            raise st.error("host", f"host {host_name!r} has no disks")
        disk_name = st.string("disk", serving.disks[0].name)
        if disk_name not in {d.name for d in serving.disks}:
            raise st.error("disk", f"host {host_name!r} has no disk {disk_name!r}")
        capacity = next(d.capacity for d in serving.disks if d.name == disk_name)

    all_files = {f: s for t in tasks for f, s in t.inputs + t.outputs}
    for fname, size in all_files.items():
        if chunk > size:
            raise wl.error("chunk_size", f"chunk size {chunk} exceeds size of file {fname!r} ({size})")
        if size > serving.total_mem:
            raise wl.error("pipeline", f"file {fname!r} does not fit in memory of {serving.name!r}")
    if sum(all_files.values()) * instances > capacity:
        raise wl.error("instances", "files of all instances exceed storage capacity")

    sim = root.sub("simulation", {})
    policy = sim.string("write_policy", WRITEBACK)
    if policy not in (WRITEBACK, WRITETHROUGH):
        raise sim.error("write_policy", f"must be writeback or writethrough, got {policy!r}")
    cadence = sim.quantity("cadence", 0.0, positive=False) or None

    out = root.sub("output", {})
    return Scenario(
        name=name, hosts=hosts, links=links, mounts=mounts, pipeline=pipeline,
        host=host_name, disk=disk_name, mount=mount_name, instances=instances,
        chunk_size=chunk, page_cache=sim.boolean("page_cache", True),
        write_policy=policy, cadence=cadence, output=out.string("directory", None),
    )


def load_scenario_text(text: str, name: str = "scenario") -> Scenario:
    try:
        data = yaml.load(text, Loader=_Loader)
    except yaml.MarkedYAMLError as e:
        line = e.problem_mark.line + 1 if e.problem_mark else None
        raise ScenarioError(f"YAML syntax error: {e.problem}", line=line) from None
    except yaml.YAMLError as e:
        raise ScenarioError(f"YAML error: {e}") from None
    return parse_scenario(data, name)


def bundled_scenarios() -> list[str]:
    files = resources.files("pagecache_sim") / "scenarios"
    return sorted(p.name[:-5] for p in files.iterdir() if p.name.endswith(".yaml"))


def load_scenario(ref: str | Path) -> Scenario:
    """Load a scenario from a path, or by name from the bundled set."""
    path = Path(ref)
    if path.is_file():
        return load_scenario_text(path.read_text(), path.stem)
    name = path.name.removesuffix(".yaml").removesuffix(".scenario")
    if name in bundled_scenarios():
        text = (resources.files("pagecache_sim") / "scenarios" / f"{name}.yaml").read_text()
        return load_scenario_text(text, name)
    raise ScenarioError(f"no such scenario file or bundled scenario: {ref}")
