from __future__ import annotations

import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracle
from conftest import MONITOR_CLASSES
from rpdi.entropy import TokenObservation
from rpdi.monitor import Monitor, PyMonitor, monitor_new
from rpdi.policy import DecisionKind, MonitorError, Phase, PolicyConfig, Variant


def feed(mon, entropies, texts=None, start=1):
    """Observe until the sequence ends or a non-continue decision arrives."""
    out = []
    for i, h in enumerate(entropies, start=start):
        text = "." if texts is None else texts[i - start]
        out.append(mon.observe(TokenObservation(i, None, text, h)))
        if out[-1].kind is not DecisionKind.CONTINUE:
            break
    return out


def every_token(**kw) -> PolicyConfig:
    kw.setdefault("budget", 10**7)
    kw.setdefault("variant", Variant.NO_BTM)
    return PolicyConfig(**kw)


def test_default_monitor_is_compiled_when_available():
    assert Monitor in MONITOR_CLASSES


def test_new_state(monitor_cls):
    m = monitor_cls(PolicyConfig())
    assert m.step == 0 and m.sum_global == 0.0 and m.sum_local == 0.0
    assert m.phase is Phase.THINKING
    assert m.window_entropies() == []
    assert monitor_new().window_capacity == 512


def test_no_ltf_ring_capacity_one(monitor_cls):
    assert monitor_cls(PolicyConfig(window=8, variant="no-ltf")).window_capacity == 1


def test_tie_at_threshold_continues(monitor_cls):
    m = monitor_cls(PolicyConfig(window=4, threshold=2.0, budget=100, answer_reserve=0))
    texts = ["a"] * 7 + ["."]
    d = feed(m, [0, 0, 0, 0, 2, 2, 2, 2], texts)[-1]
    assert m.sum_local == 8.0 and m.ltf() == 2.0
    assert m.sum_global == 8.0 and m.gtf() == 1.0
    assert m.rpdi() == 2.0
    assert d.kind is DecisionKind.CONTINUE


def test_raised_final_entropy_still_ties(monitor_cls):
    # with four zeros first, LTF/GTF = (S/4)/(S/8) = 2 whatever the last four are
    for last in (2.5, 3.0):
        m = monitor_cls(PolicyConfig(window=4, threshold=2.0, budget=100, answer_reserve=0))
        d = feed(m, [0, 0, 0, 0, 2, 2, 2, last], ["a"] * 7 + ["."])[-1]
        assert m.ltf() == (6 + last) / 4 and m.gtf() == (6 + last) / 8
        assert m.rpdi() == 2.0
        assert d.kind is DecisionKind.CONTINUE


def test_exit_strictly_above_threshold(monitor_cls):
    # oracle: LTF = 9/4, GTF = 9/9, RPDI = 2.25 at step 9
    m = monitor_cls(PolicyConfig(window=4, threshold=2.0, budget=100, answer_reserve=0))
    ds = feed(m, [0, 0, 0, 0, 0, 2, 2, 2, 3], ["a"] * 8 + ["."])
    assert [d.kind for d in ds[:-1]] == [DecisionKind.CONTINUE] * 8
    assert ds[-1] == (DecisionKind.EARLY_EXIT, 9, 2.25)
    assert m.phase is Phase.ANSWERING and m.exited


def test_all_zero_is_guarded(monitor_cls):
    m = monitor_cls(every_token(window=4))
    ds = feed(m, [0.0] * 10)
    assert all(d.kind is DecisionKind.CONTINUE for d in ds)
    assert m.gtf() == 0.0 and m.rpdi() is None


def test_no_gtf_reports_ltf(monitor_cls):
    m = monitor_cls(every_token(window=2, variant="no-gtf", threshold=5.0))
    feed(m, [0.2, 1.7, 1.7])
    assert m.gtf() == 1.0
    assert m.rpdi() == pytest.approx(1.7, abs=1e-15)


def test_accessors_before_first_observation(monitor_cls):
    m = monitor_cls(PolicyConfig())
    with pytest.raises(MonitorError):
        m.ltf()
    with pytest.raises(MonitorError):
        m.gtf()


def test_out_of_order_rejected(monitor_cls):
    m = monitor_cls(PolicyConfig())
    m.observe(TokenObservation(1, None, "a", 0.1))
    with pytest.raises(MonitorError):
        m.observe(TokenObservation(3, None, "a", 0.1))
    with pytest.raises(MonitorError):
        m.observe(TokenObservation(1, None, "a", 0.1))


def test_one_shot_exit(monitor_cls):
    m = monitor_cls(every_token(window=2, threshold=1.5))
    ds = feed(m, [0.1, 0.1, 0.1, 5.0])
    assert ds[-1].kind is DecisionKind.EARLY_EXIT
    with pytest.raises(MonitorError):
        m.observe(TokenObservation(5, None, ".", 5.0))


@pytest.mark.parametrize("c", [0.1, 1 / 3, math.pi, 7.77, 1e-3, 11.999])
def test_constant_entropy_pins_rpdi_to_one(monitor_cls, c):
    for w in (1, 5, 64):
        m = monitor_cls(every_token(window=w))
        for i, d in enumerate(feed(m, [c] * 700), start=1):
            assert d.kind is DecisionKind.CONTINUE
        assert m.rpdi() == 1.0


def test_budget_exhausted_at_budget(monitor_cls):
    m = monitor_cls(PolicyConfig(window=4, budget=10, answer_reserve=0))
    ds = feed(m, [0.3] * 10, ["a"] * 10)
    assert ds[-1] == (DecisionKind.BUDGET_EXHAUSTED, 10, None)
    assert all(d.kind is DecisionKind.CONTINUE for d in ds[:-1])
    with pytest.raises(MonitorError):
        m.observe(TokenObservation(11, None, "a", 0.3))


def test_budget_wins_tie_with_exit(monitor_cls):
    m = monitor_cls(PolicyConfig(window=2, threshold=1.5, budget=6, answer_reserve=0))
    ds = feed(m, [0.1, 0.1, 0.1, 0.1, 0.1, 9.0])
    assert ds[-1].kind is DecisionKind.BUDGET_EXHAUSTED


def test_answer_reserve_moves_limit(monitor_cls):
    m = monitor_cls(PolicyConfig(window=4, budget=10, answer_reserve=3))
    ds = feed(m, [0.3] * 7, ["a"] * 7)
    assert ds[-1] == (DecisionKind.BUDGET_EXHAUSTED, 7, None)


def test_standard_never_exits_without_boundaries(monitor_cls):
    h = [0.1] * 50 + [8.0] * 50
    m = monitor_cls(PolicyConfig(window=8, budget=1000, answer_reserve=0))
    assert all(d.kind is DecisionKind.CONTINUE for d in feed(m, h, ["word"] * 100))
    m = monitor_cls(PolicyConfig(window=8, budget=1000, answer_reserve=0, variant="no-btm"))
    assert any(d.kind is DecisionKind.EARLY_EXIT for d in feed(m, h[:60], ["word"] * 60))


def test_warmup_blocks_early_evaluation(monitor_cls):
    m = monitor_cls(every_token(window=16, threshold=1.01))
    ds = feed(m, [0.0] * 5 + [9.0] * 10)
    assert all(d.kind is DecisionKind.CONTINUE for d in ds)


def test_matches_oracle_on_random_sequence(monitor_cls):
    rng = random.Random(11)
    h = [rng.uniform(0, 12) for _ in range(2000)]
    for w, variant in [(64, "standard"), (1, "standard"), (64, "no-gtf")]:
        cfg = PolicyConfig(window=w, threshold=1e300, budget=10**6, answer_reserve=0, variant=Variant.NO_BTM)
        m = monitor_cls(cfg)
        ref = oracle.series(h, w, no_gtf=variant == "no-gtf")
        for i, x in enumerate(h, start=1):
            m.observe(TokenObservation(i, None, ".", x))
            ltf, gtf, r = ref[i - 1]
            assert abs(m.ltf() - ltf) < 1e-9
            if variant == "standard":
                assert abs(m.gtf() - gtf) < 1e-9
                assert abs(m.rpdi() - r) < 1e-9


def test_rebuild_on_fresh_state_is_identity(monitor_cls):
    m = monitor_cls(PolicyConfig())
    m.rebuild_sums()
    assert m.step == 0 and m.sum_global == 0.0 and m.sum_local == 0.0


@pytest.mark.parametrize("pattern", ["random", "alternating"])
def test_rebuild_drift_bound(monitor_cls, pattern):
    rng = random.Random(5)
    n, w = 100_000, 512
    if pattern == "random":
        h = [rng.uniform(0, 12) for _ in range(n)]
    else:
        h = [12.0 if i % 2 else 1e-9 for i in range(n)]
    m = monitor_cls(PolicyConfig(window=w, budget=n + 1, answer_reserve=0, rebuild_interval=0))
    feed(m, h, ["a"] * n)
    inc_local, inc_global = m.sum_local, m.sum_global
    assert abs(inc_global - math.fsum(h)) < 1e-6
    assert abs(inc_local - math.fsum(h[-w:])) < 1e-6
    m.rebuild_sums()
    assert abs(m.sum_local - inc_local) < 1e-6
    assert abs(m.sum_global - inc_global) < 1e-6
    assert m.sum_local == math.fsum(h[-w:])


def test_rebuild_interval_does_not_change_decisions(monitor_cls):
    rng = random.Random(9)
    h = [rng.choice([0.2, 0.3, 0.4, 3.0]) for _ in range(20_000)]
    texts = [rng.choice(["a", ".", "b"]) for _ in h]
    runs = []
    for interval in (0, 7, 1000, 1 << 16):
        cfg = PolicyConfig(window=32, threshold=1.8, budget=10**6, answer_reserve=0, rebuild_interval=interval)
        m = monitor_cls(cfg)
        ds = []
        for i, (x, t) in enumerate(zip(h, texts), start=1):
            d = m.observe(TokenObservation(i, None, t, x))
            ds.append((d.kind, d.at_step))
            if d.kind is not DecisionKind.CONTINUE:
                break
        runs.append(ds)
    assert all(r == runs[0] for r in runs)


def test_window_entropies_oldest_first(monitor_cls):
    m = monitor_cls(every_token(window=3))
    feed(m, [1, 2, 3, 4, 5])
    assert m.window_entropies() == [3, 4, 5]


def test_reset(monitor_cls):
    m = monitor_cls(every_token(window=3))
    feed(m, [1, 2, 3, 4])
    m.reset()
    assert m.step == 0 and m.sum_local == 0.0 and m.window_entropies() == []
    feed(m, [1.0])


seq_st = st.lists(st.floats(min_value=0.0, max_value=12.0, allow_nan=False), min_size=1, max_size=300)
texts_st = st.lists(st.sampled_from(["a", ".", " b", "?\n", "\n\n"]), min_size=300, max_size=300)


@settings(max_examples=150, deadline=None)
@given(seq_st, texts_st, st.integers(1, 40), st.floats(1.01, 4.0), st.sampled_from(list(Variant)))
def test_implementations_bit_identical(h, texts, w, lam, variant):
    if len(MONITOR_CLASSES) < 2:
        pytest.skip("compiled monitor not built")
    cfg = PolicyConfig(window=w, threshold=lam, budget=max(w + 1, 250), answer_reserve=0, variant=variant, rebuild_interval=17)
    a, b = (cls(cfg) for cls in MONITOR_CLASSES)
    for i, x in enumerate(h, start=1):
        obs = TokenObservation(i, None, texts[i - 1], x)
        da, db = a.observe(obs), b.observe(obs)
        assert da == db
        assert (a.ltf(), a.gtf(), a.rpdi(), a.sum_local, a.sum_global) == (
            b.ltf(), b.gtf(), b.rpdi(), b.sum_local, b.sum_global)
        if da.kind is not DecisionKind.CONTINUE:
            break


@settings(max_examples=150, deadline=None)
@given(seq_st, st.integers(1, 40))
def test_bounds_and_sum_invariants(h, w):
    m = PyMonitor(every_token(window=w, threshold=1e300))
    hmax = max(h)
    for i, x in enumerate(h, start=1):
        m.observe(TokenObservation(i, None, ".", x))
        assert 0.0 <= m.sum_local <= m.sum_global + 1e-6
        assert len(m.window_entropies()) == min(i, w)
        r = m.rpdi()
        if r is not None:
            mean = m.gtf()
            assert 0.0 <= r <= i / min(i, w) * hmax / mean * (1 + 1e-12)


@settings(max_examples=100, deadline=None)
@given(seq_st, st.sampled_from([1e-3, 0.5, 7.0, 1e3]))
def test_scale_invariance(h, k):
    a = PyMonitor(every_token(window=8, threshold=1e300))
    b = PyMonitor(every_token(window=8, threshold=1e300))
    for i, x in enumerate(h, start=1):
        a.observe(TokenObservation(i, None, ".", x))
        b.observe(TokenObservation(i, None, ".", x * k))
        ra, rb = a.rpdi(), b.rpdi()
        if ra is not None and rb is not None:
            assert abs(ra - rb) < 1e-9


def test_determinism(monitor_cls):
    rng = random.Random(1)
    h = [rng.uniform(0, 3) for _ in range(3000)]
    t = [rng.choice(["a", "."]) for _ in h]
    runs = []
    for _ in range(2):
        m = monitor_cls(PolicyConfig(window=64, threshold=1.5, budget=5000, answer_reserve=0))
        ds = []
        for i, (x, tx) in enumerate(zip(h, t), start=1):
            ds.append(m.observe(TokenObservation(i, None, tx, x)))
            if ds[-1].kind is not DecisionKind.CONTINUE:
                break
        runs.append(ds)
    assert runs[0] == runs[1]


@pytest.mark.parametrize("cls", MONITOR_CLASSES)
def test_window_sum_never_negative_after_tiny_entry_leaves(cls):
    m = cls(every_token(window=1, threshold=1e300))
    for i, x in enumerate([1.0, 1.690660363486612, 1.1303025883724916e-209, 3.0, 0.0], start=1):
        m.observe(TokenObservation(i, None, ".", x))
        assert m.sum_local >= 0.0
    assert m.sum_local == 0.0 and m.ltf() == 0.0
