"""Lookup-table policies shared by the solver, baselines and simulators."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TablePolicy:
    """Deterministic policy stored as an int8 table.

    ``kind == "belief"``: indexed ``[row, col, r, delta-1]`` by the tracked
    belief index.  ``kind == "battery"``: indexed ``[b, 0, r, delta-1]`` by the
    true battery level (only the simulator knows it).
    """

    name: str
    table: np.ndarray
    kind: str = "belief"

    def __post_init__(self):
        if self.kind not in ("belief", "battery"):
            raise ValueError(f"unknown policy kind {self.kind!r}")
        if self.table.ndim != 4 or self.table.shape[2] != 2:
            raise ValueError("policy table must have shape (R, C, 2, delta_max)")

    @property
    def mode(self) -> int:
        return 0 if self.kind == "belief" else 1

    def __call__(self, key, r: int, delta: int) -> int:
        """``key`` is a ``(row, col)`` pair in belief mode, the battery level otherwise."""
        if self.kind == "belief":
            row, col = key
            return int(self.table[row, col, r, delta - 1])
        return int(self.table[key, 0, r, delta - 1])
