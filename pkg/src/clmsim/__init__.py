"""Composite load simulation: WECC CLM components on a Norton-injection network."""

from .cmld import CmldInitReport, CmldParams, CompositeLoad, grow_and_init
from .engine import PlayIn, SimConfig, TimeSeries, run_simulation
from .network import Branch, Bus, Fault, Network

__all__ = [
    "Branch", "Bus", "CmldInitReport", "CmldParams", "CompositeLoad", "Fault", "Network",
    "PlayIn", "SimConfig", "TimeSeries", "grow_and_init", "run_simulation",
]
__version__ = "0.1.0"
