"""Storage devices and network links backed by fair-shared engine resources."""

from __future__ import annotations

from dataclasses import dataclass, field

from .engine import ContractError, Engine, Resource

MB = 10**6
GB = 10**9
GiB = 2**30


class ConfigurationError(ValueError):
    pass


class StorageFullError(RuntimeError):
    pass


@dataclass
class StorageDevice:
    """A disk or memory device.

    Reads and writes share one resource. With asymmetric bandwidths a write
    of ``D`` bytes is charged as ``D * read_bw / write_bw`` read-equivalent
    bytes, so both directions compete for the same device time.
    """

    name: str
    capacity: int
    read_bw: float
    write_bw: float
    latency: float = 0.0
    files: dict[str, int] = field(default_factory=dict)
    resource: Resource | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.read_bw <= 0 or self.write_bw <= 0:
            raise ConfigurationError(f"device {self.name!r}: bandwidths must be > 0")
        if self.capacity <= 0:
            raise ConfigurationError(f"device {self.name!r}: capacity must be > 0")
        if self.latency < 0:
            raise ConfigurationError(f"device {self.name!r}: latency must be >= 0")

    def attach(self, engine: Engine) -> "StorageDevice":
        self.resource = Resource(engine, self.name, self.read_bw)
        return self

    @property
    def used(self) -> int:
        return sum(self.files.values())

    def _check(self, amount):
        if amount < 0:
            raise ContractError(f"negative amount {amount} on {self.name}")
        if amount > self.capacity:
            raise ConfigurationError(
                f"{amount} bytes exceeds capacity {self.capacity} of {self.name!r}")

    def read(self, amount):
        """Timed read; ``elapsed = yield from dev.read(n)``."""
        self._check(amount)
        start = self.resource.engine.now
        yield self.resource.transfer(amount, self.latency)
        return self.resource.engine.now - start

    def write(self, amount):
        self._check(amount)
        scaled = amount if self.write_bw == self.read_bw else amount * self.read_bw / self.write_bw
        start = self.resource.engine.now
        yield self.resource.transfer(scaled, self.latency)
        return self.resource.engine.now - start

    def has_file(self, name: str) -> bool:
        return name in self.files

    def store(self, name: str, size: int) -> None:
        """Record (or grow) a file's footprint on this device."""
        old = self.files.get(name, 0)
        if self.used - old + size > self.capacity:
            raise StorageFullError(f"device {self.name!r} full writing {name!r}")
        self.files[name] = size


@dataclass
class NetworkLink:
    name: str
    bandwidth: float
    latency: float = 0.0
    resource: Resource | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.bandwidth <= 0:
            raise ConfigurationError(f"link {self.name!r}: bandwidth must be > 0")

    def attach(self, engine: Engine) -> "NetworkLink":
        self.resource = Resource(engine, self.name, self.bandwidth)
        return self

    def transfer(self, amount):
        if amount < 0:
            raise ContractError(f"negative amount {amount} on {self.name}")
        start = self.resource.engine.now
        yield self.resource.transfer(amount, self.latency)
        return self.resource.engine.now - start
