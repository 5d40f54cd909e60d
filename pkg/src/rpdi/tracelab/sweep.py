"""(window, threshold, variant) grid sweeps over a trace corpus."""
from __future__ import annotations

import csv
import io
import itertools
import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from rpdi.policy import PolicyConfig, Variant
from rpdi.session import Outcome
from rpdi.tracelab.replay import replay_outcome
from rpdi.tracelab.schema import Trace

OUTCOME_KINDS = tuple(o.value for o in Outcome if o is not Outcome.PENDING)

CSV_COLUMNS = (
    "window",
    "threshold",
    "variant",
    "traces",
    "exit_rate",
    "mean_exit_step",
    "mean_thinking_length",
    *(f"n_{k.replace('-', '_')}" for k in OUTCOME_KINDS),
)


@dataclass
class SweepCell:
    window: int
    threshold: float
    variant: str
    traces: int
    exit_rate: float
    mean_exit_step: float | None
    mean_thinking_length: float
    histogram: dict[str, int] = field(default_factory=dict)
    exit_steps: list[int | None] = field(default_factory=list, repr=False)

    def row(self) -> list:
        return [
            self.window,
            self.threshold,
            self.variant,
            self.traces,
            self.exit_rate,
            "" if self.mean_exit_step is None else self.mean_exit_step,
            self.mean_thinking_length,
            *(self.histogram.get(k, 0) for k in OUTCOME_KINDS),
        ]


@dataclass
class SweepResult:
    cells: list[SweepCell]

    def cell(self, window: int, threshold: float, variant: str | Variant = Variant.STANDARD) -> SweepCell:
        variant = Variant(variant).value
        for c in self.cells:
            if c.window == window and c.threshold == threshold and c.variant == variant:
                return c
        raise KeyError((window, threshold, variant))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for c in self.cells:
            w.writerow(c.row())
        return buf.getvalue()


def _run_cell(args: tuple[Sequence[Trace], PolicyConfig]) -> SweepCell:
    traces, config = args
    outcomes = [replay_outcome(t, config) for t in traces]
    hist = Counter(o.kind.value for o in outcomes)
    exits = [o.step for o in outcomes if o.kind is Outcome.EXITED_EARLY]
    return SweepCell(
        window=config.window,
        threshold=config.threshold,
        variant=config.variant.value,
        traces=len(traces),
        exit_rate=len(exits) / len(traces),
        mean_exit_step=math.fsum(exits) / len(exits) if exits else None,
        mean_thinking_length=math.fsum(o.step or 0 for o in outcomes) / len(traces),
        histogram={k: hist.get(k, 0) for k in OUTCOME_KINDS},
        exit_steps=[o.step if o.kind is Outcome.EXITED_EARLY else None for o in outcomes],
    )


def sweep(
    traces: Sequence[Trace],
    windows: Iterable[int],
    thresholds: Iterable[float],
    variants: Iterable[Variant | str] = (Variant.STANDARD,),
    base: PolicyConfig | None = None,
    jobs: int = 1,
) -> SweepResult:
    """Replay every trace under every grid cell. Cell order is the grid order."""
    if not traces:
        raise ValueError("sweep needs at least one trace")
    base = base if base is not None else PolicyConfig()
    grid = list(itertools.product(list(windows), list(thresholds), [Variant(v) for v in variants]))
    if not grid:
        raise ValueError("empty sweep grid")
    configs = [base.with_(window=w, threshold=lam, variant=v) for w, lam, v in grid]
    tasks = [(list(traces), cfg) for cfg in configs]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            cells = list(pool.map(_run_cell, tasks))
    else:
        cells = [_run_cell(t) for t in tasks]
    return SweepResult(cells)
