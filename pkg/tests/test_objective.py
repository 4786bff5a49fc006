import math

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from pull_logs.errors import DegenerateDatasetError, NumericError
from pull_logs.objective import (
    balance,
    loss_minimizer_norm,
    per_sample_loss,
    pu_loss,
    pu_loss_from_outputs,
)


def golden_section_min(f, lo, hi, tol=1e-12):
    g = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c, d = b - g * (b - a), a + g * (b - a)
    while b - a > tol:
        if f(c) < f(d):
            b, d = d, c
            c = b - g * (b - a)
        else:
            a, c = c, d
            d = a + g * (b - a)
    return (a + b) / 2


def test_balance_examples():
    assert balance([0, 1]).q == 0.5
    assert balance([0, 0, 0, 1]).q == 0.75


def test_balance_table_counts():
    total, u = 4_747_963, 392_485
    labels = np.zeros(total, dtype=np.float32)
    labels[:u] = 1
    assert balance(labels).q == pytest.approx(0.91734, abs=5e-6)


def test_balance_soft_masses():
    b = balance([0.0, 0.5, 0.25, 0.25])
    assert (b.p_mass, b.u_mass) == (3.0, 1.0)


@pytest.mark.parametrize("labels", [[0, 0], [1, 1], []])
def test_balance_degenerate(labels):
    with pytest.raises((DegenerateDatasetError, ValueError)):
        balance(labels)


def test_loss_examples():
    assert pu_loss([0.0], [0], 0.5).value == 0.0
    assert pu_loss([1.0], [1], 0.5).value == pytest.approx(0.25, abs=1e-9)
    batch = pu_loss([2.0, 0.5], [0, 1], 0.5)
    assert batch.value == pytest.approx(2.25, abs=1e-9)
    assert batch.per_sample == pytest.approx([4.0, 0.5], abs=1e-9)
    assert batch.batch_size == 2


def test_loss_rejects_non_finite():
    with pytest.raises(NumericError, match="sample 1"):
        pu_loss([1.0, float("nan")], [0, 1], 0.5)


def test_epsilon_floor_keeps_loss_finite():
    assert math.isfinite(pu_loss([0.0], [1], 0.5).value)


def test_vector_form_matches_scalar_form():
    z = torch.tensor([[3.0, 4.0], [0.3, 0.4], [0.0, 0.0]], dtype=torch.float64)
    y = torch.tensor([0.0, 1.0, 0.5], dtype=torch.float64)
    per = pu_loss_from_outputs(z, y, 0.8)
    expected = [per_sample_loss(5.0, 0, 0.8), per_sample_loss(0.5, 1, 0.8), per_sample_loss(0.0, 0.5, 0.8)]
    assert per.tolist() == pytest.approx(expected, rel=1e-12)


@given(st.floats(0, 50), st.floats(0, 1), st.floats(0.01, 0.99))
def test_non_negative(r, y, q):
    assert per_sample_loss(r, y, q) >= 0


@given(st.floats(1e-3, 50), st.floats(0.01, 0.99))
def test_term_gating_and_pressure(r, q):
    assert per_sample_loss(r, 0, q) == r * r
    assert per_sample_loss(r, 1, q) == pytest.approx(q * q / r)
    assert per_sample_loss(r * 1.5, 1, q) < per_sample_loss(r, 1, q)
    assert per_sample_loss(r * 1.5, 0, q) > per_sample_loss(r, 0, q)


@given(st.lists(st.floats(0, 1), min_size=2, max_size=50))
def test_q_bounds(labels):
    if sum(labels) < 1e-9 or sum(1 - y for y in labels) < 1e-9:
        return
    assert 0 < balance(labels).q < 1


def test_more_unlabeled_mass_lowers_q():
    assert balance([0] * 10 + [1] * 4).q < balance([0] * 10 + [1] * 2).q


def test_interior_optimum():
    assert loss_minimizer_norm(0.5, 0.5) == pytest.approx(0.5, abs=1e-12)
    assert loss_minimizer_norm(0.5, 1e-9) < 1e-2
    for q, y in [(0.5, 0.5), (0.9, 0.1), (0.2, 0.9), (0.75, 0.3)]:
        numeric = golden_section_min(lambda r: per_sample_loss(r, y, q), 1e-4, 10.0)
        assert numeric == pytest.approx(loss_minimizer_norm(q, y), abs=1e-6)


@pytest.mark.parametrize("y", [0.0, 1.0])
def test_no_interior_optimum_for_hard_labels(y):
    with pytest.raises(ValueError):
        loss_minimizer_norm(0.5, y)
