"""Radial distribution network reconfiguration after line faults.

Builds mixed-integer second-order-cone models of fault isolation and
restoration, solves them exactly by enumerating radial switch configurations,
and heuristically with a hybrid mixed-binary ADMM whose binary block can run
on exhaustive search, simulated annealing, or a QAOA statevector simulator.
"""

from importlib import resources
from pathlib import Path

__version__ = "0.1.0"


def data_path(name: str) -> Path:
    """Path to a bundled data file (feeder fixture or example scenario)."""
    return Path(resources.files("gridreconf.data") / name)
