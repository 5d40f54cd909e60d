"""Corpus-level entropy statistics: contribution percentile bins and the
most frequent words among the highest-entropy tokens."""
from __future__ import annotations

import csv
import io
import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from rpdi.tracelab.schema import Trace


@dataclass
class BinReport:
    shares: list[float]
    counts: list[int]
    total_entropy: float
    n_tokens: int
    all_zero: bool = False

    def cumulative_share(self, n_bins: int) -> float:
        return math.fsum(self.shares[:n_bins])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bin", "tokens", "share"])
        for i, (c, s) in enumerate(zip(self.counts, self.shares)):
            w.writerow([i, c, repr(s)])
        return buf.getvalue()


def _collect(traces: Sequence[Trace], thinking_only: bool):
    entropies: list[float] = []
    texts: list[str] = []
    trace_idx: list[int] = []
    steps: list[int] = []
    for ti, trace in enumerate(traces):
        for rec, h in zip(trace.records, trace.entropies()):
            if thinking_only and rec.phase != "thinking":
                continue
            entropies.append(h)
            texts.append(rec.token_text)
            trace_idx.append(ti)
            steps.append(rec.step)
    h = np.asarray(entropies, dtype=np.float64)
    # ascending by (entropy, trace, step)
    order = np.lexsort((np.asarray(steps), np.asarray(trace_idx), h))
    return h, texts, order


def entropy_contribution_bins(
    traces: Sequence[Trace], n_bins: int = 100, *, thinking_only: bool = True
) -> BinReport:
    """Sort tokens by entropy, cut into ``n_bins`` equal-count bins, and report
    each bin's share of the corpus's total entropy."""
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    h, _, order = _collect(traces, thinking_only)
    if h.size == 0:
        raise ValueError("corpus has no tokens")
    sorted_h = h[order]
    parts = np.array_split(sorted_h, n_bins)
    counts = [len(p) for p in parts]
    total = math.fsum(sorted_h.tolist())
    if total <= 0.0:
        return BinReport([0.0] * n_bins, counts, 0.0, int(h.size), all_zero=True)
    shares = [math.fsum(p.tolist()) / total for p in parts]
    return BinReport(shares, counts, total, int(h.size))


def top_contributor_tokens(
    traces: Sequence[Trace], top_fraction: float = 0.20, *, thinking_only: bool = True
) -> list[tuple[str, int]]:
    """Word frequencies among the ``top_fraction`` highest-entropy tokens.

    Only tokens that are a single alphabetic ASCII word after trimming
    whitespace are counted. Sorted by count, then word.
    """
    if not 0 < top_fraction <= 1:
        raise ValueError("top_fraction must be in (0, 1]")
    h, texts, order = _collect(traces, thinking_only)
    if h.size == 0:
        raise ValueError("corpus has no tokens")
    n_top = min(h.size, math.ceil(top_fraction * h.size))
    counts: Counter[str] = Counter()
    for i in order[h.size - n_top:]:
        word = texts[i].strip()
        if word and word.isascii() and word.isalpha():
            counts[word] += 1
    return sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))


def frequency_csv(table: Sequence[tuple[str, int]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["token", "count"])
    w.writerows(table)
    return buf.getvalue()
