import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pull_logs.evaluation import GridResult, Metrics, best_threshold, compute_metrics, trend


def brute_force(pred, y):
    tp = fp = fn = tn = 0
    for p, t in zip(pred, y):
        if p and t:
            tp += 1
        elif p:
            fp += 1
        elif t:
            fn += 1
        else:
            tn += 1
    return tp, fp, fn, tn


def test_perfect():
    m = compute_metrics([0, 1, 1, 0], [0, 1, 1, 0])
    assert (m.precision, m.recall, m.f1) == (1.0, 1.0, 1.0)


def test_half_precision():
    m = compute_metrics([1, 1, 0], [1, 0, 0])
    assert m.precision == 0.5 and m.recall == 1.0
    assert m.f1 == pytest.approx(2 / 3)


def test_zero_denominators():
    m = compute_metrics([0, 0, 0], [0, 1, 1])
    assert (m.precision, m.recall, m.f1) == (0.0, 0.0, 0.0)


def test_length_mismatch():
    with pytest.raises(ValueError):
        compute_metrics([0, 1], [0])


def test_matches_brute_force_on_random_vectors():
    rng = np.random.default_rng(1)
    for _ in range(50):
        n = int(rng.integers(1, 1000))
        p, y = rng.integers(0, 2, n), rng.integers(0, 2, n)
        m = compute_metrics(p, y)
        assert (m.tp, m.fp, m.fn, m.tn) == brute_force(p, y)
        assert m.tp + m.fp + m.fn + m.tn == n
        perm = rng.permutation(n)
        assert compute_metrics(p[perm], y[perm]) == m


@given(st.lists(st.tuples(st.sampled_from([0.0, 0.1, 0.2, 0.5, 0.7, 1.0]), st.booleans()), min_size=1, max_size=40))
def test_best_threshold_is_optimal(rows):
    s = np.array([r[0] for r in rows])
    y = np.array([r[1] for r in rows])
    thr, m = best_threshold(s, y)
    assert compute_metrics(s >= thr, y) == m
    best = max(compute_metrics(s >= t, y).f1 for t in np.unique(s))
    assert m.f1 == pytest.approx(best)


@pytest.mark.parametrize(
    "series, verdict",
    [([0.90, 0.95, 0.99], "improving"), ([0.9, 0.9, 0.9], "flat"), ([0.9, 0.85, 0.8], "degrading"),
     ([0.9, 0.95, 0.93], "flat"), ([0.9, 0.90005], "flat")],
)
def test_trend(series, verdict):
    assert trend(series) == (series, verdict)


def test_trend_needs_metrics():
    class R:
        iteration = 1
        metrics = None

    with pytest.raises(ValueError):
        trend([R(), R()])
    with pytest.raises(ValueError):
        trend([0.5])


def test_grid_csv(tmp_path):
    g = GridResult()
    g.add("synth", 1000, "pull", 1, Metrics.from_counts(1, 1, 0, 2))
    g.add("synth", 1000, "pull", 2, Metrics.from_counts(2, 0, 0, 2))
    with pytest.raises(KeyError):
        g.add("synth", 1000, "pull", 1, Metrics.from_counts(0, 0, 0, 1))
    g.to_csv(tmp_path / "grid.csv")
    lines = (tmp_path / "grid.csv").read_text().splitlines()
    assert lines[0] == "dataset,delta_ms,method,iteration,threshold_mode,precision,recall,f1"
    assert len(lines) == 3
