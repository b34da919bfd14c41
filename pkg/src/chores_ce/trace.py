"""Per-iteration solver records and their CSV form."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

TRACE_COLUMNS = ("k", "F", "F_delta", "step_norm", "measure_max", "inner_iters", "elapsed_ms")


@dataclass
class TraceRow:
    k: int
    F: float
    F_delta: float | None
    step_norm: float
    measure_max: float
    inner_iters: int
    elapsed_ms: float


@dataclass
class SolverTrace:
    rows: list = field(default_factory=list)
    iterates: list | None = None  # optional copies of mu^k, k = 0, 1, ...

    def append(self, row: TraceRow) -> None:
        if self.rows and row.k <= self.rows[-1].k:
            raise ValueError("trace iteration counter must increase")
        self.rows.append(row)

    def __len__(self):
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        return np.array([np.nan if getattr(r, name) is None else getattr(r, name) for r in self.rows])

    def write_csv(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r in self.rows:
            w.writerow(
                [
                    r.k,
                    repr(r.F),
                    "" if r.F_delta is None else repr(r.F_delta),
                    repr(r.step_norm),
                    repr(r.measure_max),
                    r.inner_iters,
                    f"{r.elapsed_ms:.3f}",
                ]
            )

    def to_csv(self) -> str:
        buf = io.StringIO()
        self.write_csv(buf)
        return buf.getvalue()
