# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twin of :class:`rpdi.monitor.PyMonitor`.

Same arithmetic in the same order, so results are bit-identical; keep the
two in lockstep.
"""
import math

from libc.math cimport fabs
from libc.stdlib cimport calloc, free

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

cdef object _tuple_new = tuple.__new__
cdef object _CONTINUE = DecisionKind.CONTINUE
cdef object _EXIT = DecisionKind.EARLY_EXIT
cdef object _BUDGET = DecisionKind.BUDGET_EXHAUSTED
cdef object _THINKING = Phase.THINKING
cdef object _ANSWERING = Phase.ANSWERING
cdef double _SPLIT = 134217729.0


cdef inline double _quotient(double hi, double lo, double k):
    cdef double q, p, t, qh, ql, kh, kl, e
    q = hi / k
    p = q * k
    t = _SPLIT * q
    qh = t - (t - q)
    ql = q - qh
    t = _SPLIT * k
    kh = t - (t - k)
    kl = k - kh
    e = ((qh * kh - p) + qh * kl + ql * kh) + ql * kl
    return q + (((hi - p) - e) + lo) / k


cdef class FastMonitor:
    """Incremental LTF/GTF/RPDI tracker for one thinking trajectory."""

    cdef readonly object config
    cdef public long step
    cdef public object phase
    cdef double _lsum
    cdef double _lcomp
    cdef double _gsum
    cdef double _gcomp
    cdef double* _ring
    cdef long _pos
    cdef long _w
    cdef long _limit
    cdef double _lam
    cdef double _eps
    cdef bint _every_token
    cdef bint _no_gtf
    cdef long _rebuild
    cdef object _bset
    cdef dict _bcache
    cdef bint _exited

    def __cinit__(self, config=None):
        self._ring = NULL

    def __init__(self, config=None):
        if config is None:
            config = PolicyConfig()
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
        self._bcache = {}
        self._ring = <double*> calloc(self._w, sizeof(double))
        if self._ring == NULL:
            raise MemoryError()
        self.reset()

    def __dealloc__(self):
        free(self._ring)

    def reset(self):
        cdef long k
        self.step = 0
        self.phase = _THINKING
        self._lsum = 0.0
        self._lcomp = 0.0
        self._gsum = 0.0
        self._gcomp = 0.0
        for k in range(self._w):
            self._ring[k] = 0.0
        self._pos = 0
        self._exited = False

    @property
    def sum_global(self):
        return self._gsum + self._gcomp

    @property
    def sum_local(self):
        return self._lsum + self._lcomp

    @property
    def window_capacity(self):
        return self._w

    @property
    def exited(self):
        return self._exited

    def window_entropies(self):
        cdef long k
        if self.step < self._w:
            return [self._ring[k] for k in range(self.step)]
        return [self._ring[k] for k in range(self._pos, self._w)] + [
            self._ring[k] for k in range(self._pos)
        ]

    cpdef bint is_boundary(self, str token_text):
        hit = self._bcache.get(token_text)
        if hit is None:
            hit = is_boundary(token_text, self._bset)
            if len(self._bcache) >= BOUNDARY_CACHE_LIMIT:
                self._bcache.clear()
            self._bcache[token_text] = hit
        return hit

    def observe(self, obs):
        cdef long step
        cdef double h, s, t, x, ltf, gtf, r
        if self.phase is not _THINKING:
            raise MonitorError(f"observation after thinking phase ended ({self.phase.value})")
        step = self.step + 1
        if obs.step != step:
            raise MonitorError(f"expected step {step}, got {obs.step}")
        h = obs.entropy_nats
        self.step = step

        s = self._gsum
        t = s + h
        if s >= h:
            self._gcomp += (s - t) + h
        else:
            self._gcomp += (h - t) + s
        self._gsum = t

        s = self._lsum
        t = s + h
        if fabs(s) >= h:
            self._lcomp += (s - t) + h
        else:
            self._lcomp += (h - t) + s
        if step > self._w:
            x = -self._ring[self._pos]
            s = t
            t = s + x
            if fabs(s) >= -x:
                self._lcomp += (s - t) + x
            else:
                self._lcomp += (x - t) + s
            if t + self._lcomp < 0.0:
                # entropies are non-negative, so a negative window sum is cancellation residue
                t = 0.0
                self._lcomp = 0.0
        self._lsum = t
        self._ring[self._pos] = h
        self._pos += 1
        if self._pos == self._w:
            self._pos = 0

        if self._rebuild and step % self._rebuild == 0:
            self.rebuild_sums()

        if step >= self._limit:
            self.phase = _ANSWERING
            return _tuple_new(ExitDecision, (_BUDGET, step, None))

        if step >= self._w and (self._every_token or self.is_boundary(obs.token_text)):
            ltf = _quotient(self._lsum, self._lcomp, <double> self._w)
            if self._no_gtf:
                r = ltf
            else:
                gtf = _quotient(self._gsum, self._gcomp, <double> step)
                if gtf < self._eps:
                    return _tuple_new(ExitDecision, (_CONTINUE, step, None))
                r = ltf / gtf
            if r > self._lam:
                self.phase = _ANSWERING
                self._exited = True
                return _tuple_new(ExitDecision, (_EXIT, step, r))
        return _tuple_new(ExitDecision, (_CONTINUE, step, None))

    def ltf(self):
        if self.step < 1:
            raise MonitorError("ltf undefined before the first observation")
        return _quotient(self._lsum, self._lcomp, <double> min(self.step, self._w))

    def gtf(self):
        if self.step < 1:
            raise MonitorError("gtf undefined before the first observation")
        if self._no_gtf:
            return 1.0
        return _quotient(self._gsum, self._gcomp, <double> self.step)

    def rpdi(self):
        g = self.gtf()
        if g < self._eps:
            return None
        return self.ltf() / g

    def rebuild_sums(self):
        cdef double total
        window = self.window_entropies()
        hi = math.fsum(window)
        window.append(-hi)
        self._lsum = hi
        self._lcomp = math.fsum(window)
        total = self._gsum + self._gcomp
        self._gcomp = (self._gsum - total) + self._gcomp
        self._gsum = total
        return self

    def finish(self, phase=_ANSWERING):
        self.phase = phase
