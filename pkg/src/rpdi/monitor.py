"""Streaming reasoning-path deviation monitor.

Keeps a global and a windowed entropy sum, updated in O(1) per token, and
evaluates the deviation index (local mean entropy over global mean entropy)
at boundary tokens once the window has filled.

Both sums are carried as an unevaluated pair ``hi + lo`` (Neumaier
compensation), and each mean is formed by dividing that pair by the token
count with an exact correction for the rounding of the quotient. The means
are therefore correctly rounded in practice: a window of ``W`` copies of
``x`` has mean exactly ``x``, so a constant-entropy trace scores exactly 1.0.

``Monitor`` is the compiled implementation from ``rpdi._fastmonitor`` when
the extension is built, else :class:`PyMonitor`. Both produce bit-identical
results.
"""
from __future__ import annotations

import math

from rpdi.entropy import TokenObservation
from rpdi.policy import (
    BOUNDARY_CACHE_LIMIT,
    DecisionKind,
    ExitDecision,
    MonitorError,
    Phase,
    PolicyConfig,
    Variant,
    is_boundary,
)


_SPLIT = 134217729.0  # 2**27 + 1, Dekker's splitting constant


def _quotient(hi: float, lo: float, k: float) -> float:
    """``(hi + lo) / k`` for a compensated pair and a positive integer ``k``."""
    q = hi / k
    p = q * k
    # e: exact rounding error of q * k (Dekker's two-product)
    t = _SPLIT * q
    qh = t - (t - q)
    ql = q - qh
    t = _SPLIT * k
    kh = t - (t - k)
    kl = k - kh
    e = ((qh * kh - p) + qh * kl + ql * kh) + ql * kl
    return q + (((hi - p) - e) + lo) / k


class PyMonitor:
    """Incremental LTF/GTF/RPDI tracker for one thinking trajectory.

    Not thread-safe; one instance belongs to one session.
    """

    __slots__ = (
        "config",
        "step",
        "phase",
        "_lsum",
        "_lcomp",
        "_gsum",
        "_gcomp",
        "_ring",
        "_pos",
        "_w",
        "_limit",
        "_lam",
        "_eps",
        "_every_token",
        "_no_gtf",
        "_rebuild",
        "_bset",
        "_bcache",
        "_exited",
    )

    def __init__(self, config: PolicyConfig | None = None) -> None:
        config = config if config is not None else PolicyConfig()
        config.validate()
        self.config = config
        self._w = config.effective_window
        self._limit = config.thinking_limit
        self._lam = config.threshold
        self._eps = config.gtf_epsilon
        self._every_token = config.variant is Variant.NO_BTM
        self._no_gtf = config.variant is Variant.NO_GTF
        self._rebuild = config.rebuild_interval
        self._bset = config.boundary_set
        self._bcache: dict[str, bool] = {}
        self.reset()

    def reset(self) -> None:
        self.step = 0
        self.phase = Phase.THINKING
        self._lsum = 0.0
        self._lcomp = 0.0
        self._gsum = 0.0
        self._gcomp = 0.0
        self._ring = [0.0] * self._w
        self._pos = 0
        self._exited = False

    @property
    def sum_global(self) -> float:
        return self._gsum + self._gcomp

    @property
    def sum_local(self) -> float:
        return self._lsum + self._lcomp

    @property
    def window_capacity(self) -> int:
        return self._w

    def window_entropies(self) -> list[float]:
        """Entropies currently in the window, oldest first."""
        n = min(self.step, self._w)
        if self.step < self._w:
            return self._ring[:n]
        return self._ring[self._pos:] + self._ring[: self._pos]

    def is_boundary(self, token_text: str) -> bool:
        hit = self._bcache.get(token_text)
        if hit is None:
            hit = is_boundary(token_text, self._bset)
            if len(self._bcache) >= BOUNDARY_CACHE_LIMIT:
                self._bcache.clear()
            self._bcache[token_text] = hit
        return hit

    def observe(self, obs: TokenObservation) -> ExitDecision:
        if self.phase is not Phase.THINKING:
            raise MonitorError(f"observation after thinking phase ended ({self.phase.value})")
        step = self.step + 1
        if obs.step != step:
            raise MonitorError(f"expected step {step}, got {obs.step}")
        h = obs.entropy_nats
        self.step = step

        # Neumaier-compensated global sum
        s = self._gsum
        t = s + h
        if s >= h:
            self._gcomp += (s - t) + h
        else:
            self._gcomp += (h - t) + s
        self._gsum = t

        # window sum: add h, then drop the entry it replaces
        s = self._lsum
        t = s + h
        if abs(s) >= h:
            self._lcomp += (s - t) + h
        else:
            self._lcomp += (h - t) + s
        pos = self._pos
        ring = self._ring
        w = self._w
        if step > w:
            x = -ring[pos]
            s = t
            t = s + x
            if abs(s) >= -x:
                self._lcomp += (s - t) + x
            else:
                self._lcomp += (x - t) + s
            if t + self._lcomp < 0.0:
                # entropies are non-negative, so a negative window sum is cancellation residue
                t = 0.0
                self._lcomp = 0.0
        self._lsum = t
        ring[pos] = h
        pos += 1
        self._pos = 0 if pos == w else pos

        if self._rebuild and step % self._rebuild == 0:
            self.rebuild_sums()

        if step >= self._limit:
            self.phase = Phase.ANSWERING
            return ExitDecision(DecisionKind.BUDGET_EXHAUSTED, step)

        if step >= w and (self._every_token or self.is_boundary(obs.token_text)):
            ltf = _quotient(self._lsum, self._lcomp, w)
            if self._no_gtf:
                r = ltf
            else:
                gtf = _quotient(self._gsum, self._gcomp, step)
                if gtf < self._eps:
                    return ExitDecision(DecisionKind.CONTINUE, step)
                r = ltf / gtf
            if r > self._lam:
                self.phase = Phase.ANSWERING
                self._exited = True
                return ExitDecision(DecisionKind.EARLY_EXIT, step, r)
        return ExitDecision(DecisionKind.CONTINUE, step)

    def ltf(self) -> float:
        if self.step < 1:
            raise MonitorError("ltf undefined before the first observation")
        return _quotient(self._lsum, self._lcomp, min(self.step, self._w))

    def gtf(self) -> float:
        if self.step < 1:
            raise MonitorError("gtf undefined before the first observation")
        if self._no_gtf:
            return 1.0
        return _quotient(self._gsum, self._gcomp, self.step)

    def rpdi(self) -> float | None:
        """LTF/GTF, or None when GTF is below the epsilon guard."""
        g = self.gtf()
        if g < self._eps:
            return None
        return self.ltf() / g

    def rebuild_sums(self) -> "PyMonitor":
        """Recompute the window sum exactly and renormalise the global sum."""
        window = self.window_entropies()
        hi = math.fsum(window)
        window.append(-hi)
        self._lsum = hi
        self._lcomp = math.fsum(window)
        total = self._gsum + self._gcomp
        self._gcomp = (self._gsum - total) + self._gcomp
        self._gsum = total
        return self

    def finish(self, phase: Phase = Phase.ANSWERING) -> None:
        """Stop monitoring (natural end of thinking, or session teardown)."""
        self.phase = phase

    @property
    def exited(self) -> bool:
        return self._exited


try:
    from rpdi._fastmonitor import FastMonitor as Monitor
except ImportError:  # extension not built
    Monitor = PyMonitor  # type: ignore[misc,assignment]


def monitor_new(config: PolicyConfig | None = None):
    return Monitor(config)
