import numpy as np
import pytest

from redeeg import trainer
from redeeg.redmodel import ModelConfig, REDNetwork
from redeeg.sigio import EventList, Recording, Signal, events_to_mask, tile_epochs
from redeeg.synthgen import SynthConfig, generate
from redeeg.trainer import (DegeneratePoolError, TrainConfig, build_pool, label_sequence,
                            sample_batch, train)


def brute_labels(events, start, n, fs, factor=8):
    out = []
    for c in range(n // factor):
        inside = 0
        for k in range(c * factor, (c + 1) * factor):
            t = start + k / fs
            inside += any(s <= t + 1e-12 and t < e - 1e-12 for s, e in events)
        out.append(int(2 * inside >= factor))
    return out


def counts_recording(durations, fs=10.0):
    """One epoch per duration, each holding a single event of that length."""
    ev = [(20.0 * i + 1.0, 20.0 * i + 1.0 + d) for i, d in enumerate(durations) if d > 0]
    n = int(20 * fs * len(durations))
    return Recording(Signal(np.zeros(n), fs), tile_epochs(20.0 * len(durations)),
                     {"spindle": EventList(ev)})


class TestLabels:
    def test_empty(self):
        assert label_sequence(EventList(), (0, 2.0), 200.0).tolist() == [0] * 50

    def test_full(self):
        assert label_sequence(EventList([(0, 2.0)]), (0, 2.0), 200.0).tolist() == [1] * 50

    def test_first_forty_samples(self):
        ev = EventList([(0.0, 40 / 200)])
        got = label_sequence(ev, (0.0, 2.0), 200.0).tolist()
        assert got == brute_labels(ev, 0.0, 400, 200.0)
        assert got[:5] == [1] * 5 and sum(got) == 5

    def test_random_against_loop(self):
        rng = np.random.default_rng(0)
        for _ in range(30):
            s = rng.uniform(0, 3)
            ev = EventList([(s, s + rng.uniform(0.01, 1.0))])
            w0 = float(rng.integers(0, 100)) / 200
            got = label_sequence(ev, (w0, w0 + 4.0), 200.0)
            assert got.tolist() == brute_labels(ev, w0, 800, 200.0)

    def test_indivisible(self):
        with pytest.raises(ValueError):
            label_sequence(EventList(), (0, 0.01), 200.0)


class TestPool:
    def test_median_split(self):
        rec = counts_recording([0, 1.0, 2.0, 3.0, 10.0])
        pool = build_pool([rec], "spindle")
        assert pool.counts.tolist() == [0, 10, 20, 30, 100]
        assert pool.median == 20
        assert pool.low.tolist() == [0, 1] and pool.high.tolist() == [2, 3, 4]

    def test_two_epochs(self):
        pool = build_pool([counts_recording([0, 0.4])], "spindle")
        assert pool.median == 2 and pool.low.tolist() == [0] and pool.high.tolist() == [1]

    def test_degenerate(self):
        rec = counts_recording([1.0, 1.0, 1.0])
        with pytest.raises(DegeneratePoolError, match="uniform"):
            build_pool([rec], "spindle")
        pool = build_pool([rec], "spindle", allow_uniform=True)
        assert pool.uniform and pool.low.size == 3

    def test_empty(self):
        with pytest.raises(ValueError):
            build_pool([], "spindle")

    def test_missing_annotations(self):
        with pytest.raises(ValueError, match="kcomplex"):
            build_pool([counts_recording([1.0])], "kcomplex")


@pytest.fixture(scope="module")
def small_corpus():
    cfg = dict(duration_sec=120.0)
    recs = [generate(SynthConfig(seed=s, **cfg), name=f"r{s}") for s in range(3)]
    for r in recs:
        r.signal.samples[:] = r.signal.samples / 20.0
    return recs


class TestBatch:
    def test_balanced_and_labeled(self, small_corpus):
        pool = build_pool(small_corpus, "spindle")
        rng = np.random.default_rng(0)
        X, Y, origins = sample_batch(pool, small_corpus, "spindle", 32, 800, rng)
        assert X.shape == (32, 800) and Y.shape == (32, 100)
        assert [o[0] for o in origins].count("low") == 16
        assert all(pool.entries[e][0] in range(3) for _, e in origins)
        assert set(e for n, e in origins if n == "low") <= set(pool.low.tolist())
        assert set(e for n, e in origins if n == "high") <= set(pool.high.tolist())

    def test_labels_match_windows(self, small_corpus):
        pool = build_pool(small_corpus, "spindle")
        X, Y, origins = sample_batch(pool, small_corpus, "spindle", 8, 800,
                                     np.random.default_rng(1))
        for x, y, (_, e) in zip(X, Y, origins):
            rec = small_corpus[pool.entries[e][0]]
            hits = [i for i in range(rec.signal.samples.size - 799)
                    if rec.signal.samples[i] == x[0] and np.array_equal(
                        rec.signal.samples[i:i + 800], x)]
            assert hits
            mask = events_to_mask(rec.annotations["spindle"], 800, 200.0, hits[0] / 200.0)
            assert y.tolist() == (mask.reshape(-1, 8).sum(1) >= 4).astype(int).tolist()

    def test_deterministic(self, small_corpus):
        pool = build_pool(small_corpus, "spindle")
        a = sample_batch(pool, small_corpus, "spindle", 8, 800, np.random.default_rng(5))
        b = sample_batch(pool, small_corpus, "spindle", 8, 800, np.random.default_rng(5))
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])

    def test_context_padding(self):
        x = np.arange(10.0)
        np.testing.assert_array_equal(trainer.extract_segment(x, 0, 4, 2), [0, 0, 0, 1, 2, 3, 4, 5])


def tiny_net(T=800, seed=0):
    return REDNetwork(ModelConfig(T=T, n_filters=2, lstm_units=4, hidden_units=4), seed=seed)


class TestTrain:
    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(batch_size=7)
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=0)
        with pytest.raises(ValueError):
            TrainConfig.from_dict({"bogus": 1})

    def test_halvings_and_stop(self, small_corpus):
        cfg = TrainConfig(batch_size=4, learning_rate=1e-3, patience=1, val_check_every=1,
                          min_improvement=1e9)
        res = train(tiny_net(), small_corpus[:2], small_corpus[2:], "spindle", cfg)
        assert res.stop_reason == "lr_halvings" and res.iterations == 4
        assert res.lr_trace == [1e-3, 5e-4, 2.5e-4, 1.25e-4]
        assert np.all(np.diff(res.lr_trace) <= 0) and len(set(res.lr_trace)) <= 5

    def test_patience_schedule(self, small_corpus):
        cfg = TrainConfig(batch_size=4, learning_rate=1e-3, patience=4, val_check_every=2,
                          min_improvement=1e9, n_halvings=2)
        res = train(tiny_net(), small_corpus[:2], small_corpus[2:], "spindle", cfg)
        assert res.iterations == 8
        assert res.lr_trace[:4] == [1e-3] * 4 and res.lr_trace[4:] == [5e-4] * 4

    def test_reproducible_and_log(self, small_corpus, tmp_path):
        cfg = TrainConfig(batch_size=4, learning_rate=1e-3, max_iters=6, val_check_every=3)
        a = train(tiny_net(), small_corpus[:2], small_corpus[2:], "spindle", cfg,
                  log_path=tmp_path / "a.csv")
        b = train(tiny_net(), small_corpus[:2], small_corpus[2:], "spindle", cfg,
                  log_path=tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        assert a.log == b.log
        lines = (tmp_path / "a.csv").read_text().splitlines()
        assert lines[0] == "iteration,train_loss,val_loss,lr" and len(lines) == 8

    def test_validation_improves(self, small_corpus):
        cfg = TrainConfig(batch_size=8, learning_rate=5e-3, max_iters=60, val_check_every=10)
        res = train(tiny_net(seed=1), small_corpus[:2], small_corpus[2:], "spindle", cfg)
        assert res.best_val_loss < res.initial_val_loss

    def test_keeps_best_state(self, small_corpus):
        cfg = TrainConfig(batch_size=4, learning_rate=1e-3, max_iters=4, val_check_every=2)
        net = tiny_net()
        res = train(net, small_corpus[:2], small_corpus[2:], "spindle", cfg)
        Xv, Yv = trainer.validation_segments(small_corpus[2:], "spindle", 800)
        assert trainer._dataset_loss(net, Xv, Yv, 4) == pytest.approx(res.best_val_loss,
                                                                      rel=1e-12)

    def test_nan_aborts(self, small_corpus):
        net = tiny_net()
        net.params["fc2/b"].data[:] = np.nan
        with pytest.raises(FloatingPointError):
            train(net, small_corpus[:2], small_corpus[2:], "spindle",
                  TrainConfig(batch_size=4, max_iters=3))

    def test_empty_validation(self, small_corpus):
        with pytest.raises(ValueError):
            train(tiny_net(), small_corpus, [], "spindle", TrainConfig(max_iters=1))
