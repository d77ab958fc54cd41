import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from redeeg.postproc import (kcomplex_rules, merge_close, negative_peaks, postprocess,
                             spindle_rules)
from redeeg.sigio import EventList, Signal, lowpass
from redeeg.synthgen import kcomplex_template

FS = 200.0


def random_events(rng, n_max=12, horizon=60.0):
    n = int(rng.integers(0, n_max + 1))
    pts = np.sort(rng.uniform(0, horizon, 2 * n))
    ev = [(pts[2 * i], pts[2 * i + 1]) for i in range(n) if pts[2 * i + 1] > pts[2 * i]]
    return EventList(ev)


@st.composite
def event_lists(draw):
    n = draw(st.integers(0, 10))
    gaps = draw(st.lists(st.floats(0.0, 3.0), min_size=n, max_size=n))
    durs = draw(st.lists(st.floats(0.01, 7.0), min_size=n, max_size=n))
    t, out = 0.0, []
    for g, d in zip(gaps, durs):
        s = t + g
        out.append((s, s + d))
        t = s + d
    return EventList(out)


class TestSpindle:
    def test_merge(self):
        assert spindle_rules(EventList([(0.0, 0.5), (0.7, 1.2)])).to_list() == [(0.0, 1.2)]

    def test_drop_short(self):
        assert len(spindle_rules(EventList([(1.0, 1.2)]))) == 0

    def test_crop(self):
        assert spindle_rules(EventList([(0.0, 4.0)])).to_list() == [(0.5, 3.5)]

    def test_drop_long(self):
        assert len(spindle_rules(EventList([(0.0, 5.5)]))) == 0

    def test_wide_gap_not_merged(self):
        assert len(merge_close(EventList([(0.0, 0.5), (1.0, 1.5)]), 0.3)) == 2

    def test_merge_then_drop_order(self):
        # two short pieces merge into a keepable event
        out = spindle_rules(EventList([(0.0, 0.2), (0.3, 0.5)]))
        assert out.to_list() == [(0.0, 0.5)]

    def test_random_laws(self):
        rng = np.random.default_rng(0)
        for _ in range(500):
            ev = random_events(rng)
            once = spindle_rules(ev)
            d = once.durations
            assert np.all(d >= 0.3 - 1e-9) and np.all(d <= 3.0 + 1e-9)
            assert spindle_rules(once) == once

    @settings(max_examples=200, deadline=None)
    @given(event_lists())
    def test_idempotent_property(self, ev):
        once = spindle_rules(ev)
        assert spindle_rules(once) == once


def two_kc_signal(n=3000):
    """Two negative troughs at 10.5 s and 12.0 s with a positive bump between.

    A small positive baseline keeps low-pass ringing away from negative values.
    """
    t = np.arange(n) / FS
    g = lambda c, s: np.exp(-0.5 * ((t - c) / s) ** 2)
    return 0.05 - g(10.5, 0.1) - g(12.0, 0.1) + 0.6 * g(11.25, 0.15)


class TestKComplex:
    def test_drop_short(self):
        sig = Signal(np.zeros(2000), FS)
        assert len(kcomplex_rules(EventList([(1.0, 1.25)]), sig)) == 0

    def test_single_template_unchanged(self):
        x = np.zeros(4000)
        w = kcomplex_template(1.0, 100.0, FS)
        x[1000:1000 + w.size] += w
        ev = EventList([(5.0, 6.0)])
        assert kcomplex_rules(ev, Signal(x, FS)) == ev

    def test_two_troughs_split_at_midpoint(self):
        x = two_kc_signal()
        f = lowpass(x, 4.0, FS)
        i0, i1 = int(10.5 * FS), int(12.0 * FS)
        assert f[i0:i1].max() > 0 > f[i0] and f[i1] < 0  # zero crossings exist
        out = kcomplex_rules(EventList([(10.0, 12.6)]), Signal(x, FS))
        assert len(out) == 2
        assert out[0][0] == 10.0 and out[1][1] == 12.6
        assert abs(out[0][1] - 11.25) <= 1 / FS
        assert out[0][1] == out[1][0]

    def test_no_zero_crossing_merges(self):
        t = np.arange(3000) / FS
        g = lambda c, s: np.exp(-0.5 * ((t - c) / s) ** 2)
        x = -g(10.5, 0.1) - g(10.9, 0.1) - 0.5 * g(10.7, 0.4)
        f = lowpass(x, 4.0, FS)
        assert f[int(10.3 * FS):int(11.1 * FS)].max() < 0
        out = kcomplex_rules(EventList([(10.0, 11.8)]), Signal(x, FS))
        assert out.to_list() == [(10.0, 11.8)]

    def test_guard_ignores_late_peak(self):
        x = two_kc_signal()
        out = kcomplex_rules(EventList([(10.0, 12.1)]), Signal(x, FS))
        assert out.to_list() == [(10.0, 12.1)]

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_never_grows(self, seed):
        rng = np.random.default_rng(seed)
        x = np.cumsum(rng.standard_normal(4000)) * 0.1
        x -= x.mean()
        sig = Signal(x, FS)
        ev = random_events(rng, 6, horizon=19.0)
        out = kcomplex_rules(ev, sig)
        covered = lambda E, t: any(s <= t < e for s, e in E)
        for s, e in out:
            assert e > s
            assert covered(ev, s) and covered(ev, 0.5 * (s + e))
        assert out.array.size == 0 or np.all(np.diff(out.array.ravel()) >= 0)


def test_negative_peaks():
    assert negative_peaks(np.array([0, -1, 0, 1, -2, -3, -1])).tolist() == [1, 5]
    assert negative_peaks(np.array([0, 1, 0.5, 2])).tolist() == []


def test_postprocess_dispatch():
    with pytest.raises(ValueError):
        postprocess(EventList(), "alpha")
    with pytest.raises(ValueError):
        postprocess(EventList(), "kcomplex")
