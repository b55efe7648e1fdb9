"""Discrete-event simulation of the Linux page cache for I/O time prediction."""

from .engine import Engine, Resource
from .io_controller import FileHandle, IOController
from .page_cache import DataBlock, MemoryManager
from .scenario import Scenario, load_scenario
from .storage import NetworkLink, StorageDevice
from .workload import HostSpec, NFSMount, PipelineSpec, Simulation, TaskSpec

__version__ = "0.1.0"

__all__ = [
    "DataBlock", "Engine", "FileHandle", "HostSpec", "IOController", "MemoryManager",
    "NFSMount", "NetworkLink", "PipelineSpec", "Resource", "Scenario", "Simulation",
    "StorageDevice", "TaskSpec", "load_scenario",
]
