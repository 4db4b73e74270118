"""Deterministic simulation harness: config, workloads, event loop, metrics."""

from .config import SimConfig, WorkloadSpec, load_config  # noqa: F401
from .harness import Simulation  # noqa: F401
