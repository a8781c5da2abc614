"""Simulator and checkers for a wait-free, reconfigurable atomic read/write register."""

from .checker import Verdict, verify
from .kernel import Simulation
from .scenario import Scenario
from .trace import RunTrace

__all__ = ["RunTrace", "Scenario", "Simulation", "Verdict", "verify"]
__version__ = "0.1.0"
