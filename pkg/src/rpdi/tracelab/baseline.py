"""Fixed token-budget truncation, the non-adaptive comparison baseline."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Sequence

from rpdi.policy import PolicyConfig
from rpdi.tracelab.replay import replay_outcome
from rpdi.tracelab.schema import Trace


@dataclass
class BudgetRow:
    trace: str
    thinking_length: int
    truncated: bool
    stop_step: int


@dataclass
class BudgetTable:
    budget: int
    rows: list[BudgetRow]

    @property
    def truncation_rate(self) -> float:
        return sum(r.truncated for r in self.rows) / len(self.rows) if self.rows else 0.0

    def to_csv(self, rpdi_config: PolicyConfig | None = None, traces: Sequence[Trace] = ()) -> str:
        """CSV of the baseline, with RPDI outcomes side by side when a config is given."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = ["trace", "thinking_length", "budget", "truncated", "stop_step"]
        if rpdi_config is not None:
            header += ["rpdi_outcome", "rpdi_step"]
        w.writerow(header)
        for i, r in enumerate(self.rows):
            row = [r.trace, r.thinking_length, self.budget, int(r.truncated), r.stop_step]
            if rpdi_config is not None:
                o = replay_outcome(traces[i], rpdi_config)
                row += [o.kind.value, o.step]
            w.writerow(row)
        return buf.getvalue()


def fixed_budget_policy(traces: Sequence[Trace], budget: int) -> BudgetTable:
    """Cut thinking at ``budget`` tokens regardless of content."""
    if budget < 1:
        raise ValueError("budget must be >= 1")
    rows = []
    for t in traces:
        n = t.thinking_length
        rows.append(BudgetRow(t.name, n, n > budget, min(n, budget)))
    return BudgetTable(budget, rows)
