import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ecalab import diffcore as dc
from ecalab import evidential as ev
from ecalab.diffcore import Tensor
from ecalab.errors import ContractError


def belief_of(logits):
    return ev.belief_from_logits(Tensor(np.atleast_2d(np.asarray(logits, dtype=float))))


def mask_of(c, u, selected):
    return ev.SelectionMask(float(np.mean(c)), float(np.mean(u)), np.asarray(selected, bool))


class _Fixed:
    """Belief stand-in with prescribed confidence and uncertainty."""

    def __init__(self, c, u):
        self.confidence = Tensor(c)
        self.uncertainty = Tensor(u)


def test_zero_logits_four_classes():
    b = belief_of([0.0, 0.0, 0.0, 0.0])
    s = 4 + 4 * math.log(2)
    assert b.strength.item() == pytest.approx(s, abs=1e-12)
    assert s == pytest.approx(6.773, abs=1e-3)
    assert b.uncertainty.item() == pytest.approx(4 / s, abs=1e-12)
    assert 4 / s == pytest.approx(0.5906, abs=1e-4)
    np.testing.assert_allclose(b.probs.values, 0.25, atol=1e-15)


def test_vacuous_evidence_limit():
    b = belief_of([-60.0, -60.0, -60.0])
    assert b.uncertainty.item() == pytest.approx(1.0, abs=1e-12)
    assert b.confidence.item() == pytest.approx(1 / 3, abs=1e-12)


def test_worked_three_class_example():
    # independent arithmetic: e = log(1 + exp(l)), alpha = e + 1
    e = [math.log1p(math.exp(3.0)), math.log(2), math.log(2)]
    s = sum(v + 1 for v in e)
    b = belief_of([3.0, 0.0, 0.0])
    np.testing.assert_allclose(b.evidence.values[0], [3.0486, 0.6931, 0.6931], atol=1e-4)
    assert b.strength.item() == pytest.approx(s, rel=1e-14)
    assert b.strength.item() == pytest.approx(7.4348, abs=1e-4)
    assert b.uncertainty.item() == pytest.approx(0.4035, abs=1e-4)
    assert b.confidence.item() == pytest.approx(0.5446, abs=1e-4)
    assert b.pseudo_label.tolist() == [0]


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 8), st.integers(2, 10)),
              elements=st.floats(-15, 15)))
def test_belief_invariants(logits):
    b = ev.belief_from_logits(Tensor(logits))
    m = logits.shape[1]
    u = b.uncertainty.values
    assert np.all((u > 0) & (u <= 1))
    np.testing.assert_allclose(b.probs.values.sum(axis=1), 1.0, atol=1e-9)
    assert np.all(b.confidence.values >= 1 / m - 1e-15)
    assert np.all(b.alpha.values >= 1)
    np.testing.assert_array_equal(u, m / b.strength.values)


def test_more_evidence_less_uncertainty():
    rng = np.random.default_rng(0)
    logits = rng.normal(scale=3, size=(200, 5))
    u0 = belief_of(logits).uncertainty.values
    for m in range(5):
        bumped = logits.copy()
        bumped[:, m] += 0.1
        assert np.all(belief_of(bumped).uncertainty.values < u0)


def test_selection_threshold_is_mean():
    b = _Fixed([0.9, 0.5, 0.7], [0.1, 0.2, 0.3])
    mask = ev.select_high_quality(b)
    assert mask.eta_c == pytest.approx(0.7, abs=1e-15)


def test_selection_identical_samples_selects_nothing():
    b = belief_of(np.tile([1.0, -0.5, 0.2], (5, 1)))
    assert not ev.select_high_quality(b).selected.any()


def test_selection_worked_example():
    mask = ev.select_high_quality(_Fixed([0.9, 0.3], [0.2, 0.8]))
    assert mask.eta_c == pytest.approx(0.6)
    assert mask.eta_u == pytest.approx(0.5)
    assert mask.selected.tolist() == [True, False]
    assert (mask.selected | mask.rejected).all() and not (mask.selected & mask.rejected).any()


def test_selection_literal_direction():
    mask = ev.select_high_quality(_Fixed([0.9, 0.3, 0.6], [0.8, 0.2, 0.5]), u_direction="high")
    assert mask.selected.tolist() == [True, False, False]
    with pytest.raises(ContractError):
        ev.select_high_quality(_Fixed([0.9], [0.1]), u_direction="sideways")


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.integers(2, 30), elements=st.floats(0.0, 0.5)),
       arrays(np.float64, st.integers(2, 30), elements=st.floats(0.01, 1.0)),
       st.floats(-0.2, 0.4))
def test_selection_shift_keeps_comparisons(c, u, shift):
    n = min(len(c), len(u))
    c, u = c[:n] + 0.3, u[:n]
    a = ev.select_high_quality(_Fixed(c, u))
    b = ev.select_high_quality(_Fixed(c + shift, u))
    expected = (c + shift > np.mean(c + shift)) & (u < np.mean(u))
    np.testing.assert_array_equal(b.selected, expected)
    np.testing.assert_array_equal(a.selected, (c > np.mean(c)) & (u < np.mean(u)))


def test_cel_worked_example():
    b = _Fixed([0.8, 0.4], [0.3, 0.6])
    mask = mask_of([0.8, 0.4], [0.3, 0.6], [True, False])
    expected = -0.5 * 0.8 * math.log(0.7) - 0.5 * 0.6 * math.log(0.6)
    assert expected == pytest.approx(0.2959, abs=1e-4)
    assert ev.cel_loss(b, mask, 0.5).item() == pytest.approx(expected, abs=1e-12)


def test_cel_limits_vanish():
    sel = ev.cel_loss(_Fixed([0.99], [1e-9]), mask_of([0.99], [1e-9], [True]), 0.5)
    rej = ev.cel_loss(_Fixed([0.2], [1.0 - 1e-12]), mask_of([0.2], [1.0], [False]), 0.5)
    assert sel.item() == pytest.approx(0.0, abs=1e-9)
    assert rej.item() == pytest.approx(0.0, abs=1e-9)


def test_cel_selected_certainty_floor():
    out = ev.cel_loss(_Fixed([0.5], [1.0]), mask_of([0.5], [1.0], [True]), 0.7)
    assert math.isfinite(out.item())


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(2, 12), st.just(4)), elements=st.floats(-8, 8)),
       st.floats(0.01, 1.0))
def test_cel_nonnegative(logits, lam):
    b = ev.belief_from_logits(Tensor(logits))
    mask = ev.select_high_quality(b)
    assert ev.cel_loss(b, mask, lam).item() >= 0.0


def _cel_of(mask, lam):
    return lambda t: ev.cel_loss(ev.belief_from_logits(t), mask, lam)


def test_cel_grad_check_two_samples():
    logits = np.array([[2.0, -0.5, 0.3], [0.1, 0.4, -0.2]])
    mask = ev.select_high_quality(belief_of(logits))
    mask = ev.SelectionMask(mask.eta_c, mask.eta_u, np.array([True, False]))
    assert dc.grad_check(_cel_of(mask, 0.3), logits, 1e-4) < 1e-4


def test_fit_loss_empty_selection_is_zero():
    b = belief_of([[1.0, 2.0, 0.0]])
    assert ev.pseudo_label_fit_loss(b, ev.SelectionMask(0, 0, np.array([False]))).item() == 0.0


def test_fit_loss_uniform_belief_is_harmonic():
    b = ev.DirichletBelief(*[None] * 6)
    alpha = Tensor([[1.0, 1.0, 1.0]])
    b.alpha = alpha
    b.strength = dc.sum(alpha, axis=1)
    loss = ev.edl_fit_loss(b, [2])
    assert loss.item() == pytest.approx(1.0 + 0.5, abs=1e-12)


def test_fit_loss_digamma_recurrence():
    alpha = Tensor([[4.0, 1.0, 1.0]])
    b = ev.DirichletBelief(None, alpha, dc.sum(alpha, axis=1), None, None, None)
    assert ev.edl_fit_loss(b, [0]).item() == pytest.approx(1 / 4 + 1 / 5, abs=1e-12)


def test_fit_loss_grad_check():
    rng = np.random.default_rng(4)
    logits = rng.normal(size=(5, 3))
    sel = np.array([True, False, True, True, False])

    def f(t):
        b = ev.belief_from_logits(t)
        return ev.pseudo_label_fit_loss(b, ev.SelectionMask(0.0, 0.0, sel))

    assert dc.grad_check(f, logits, 1e-4) < 1e-4


def test_anneal_endpoints_and_midpoint():
    sch = ev.AnnealSchedule(0.01, 10)
    assert ev.anneal(sch, 0) == pytest.approx(0.01)
    assert ev.anneal(sch, 10) == 1.0
    assert ev.anneal(sch, 5) == pytest.approx(0.1, abs=1e-12)
    vals = [ev.anneal(sch, t) for t in range(11)]
    assert all(a < b for a, b in zip(vals, vals[1:]))
    with pytest.raises(ContractError):
        ev.anneal(sch, 11)
    with pytest.raises(ContractError):
        ev.AnnealSchedule(1.0, 10)
