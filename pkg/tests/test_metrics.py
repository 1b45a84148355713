import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pnbench.exceptions import ContractError
from pnbench.metrics import (
    auc_pairs,
    eer_operating_point,
    joint_success_rate,
    roc,
    success_rate,
    two_variable_indicator,
)


def dense_eer(nat, att, success, n_grid=100_000):
    """EER JSR by brute force over a dense threshold grid.

    tp and jsr are evaluated on the merged score grid and joined linearly in
    threshold; the crossing is located on ``n_grid`` thresholds and refined
    inside the bracketing cell.
    """
    grid = np.unique(np.concatenate([nat, att]))
    tp = np.array([np.mean(nat < t) for t in grid])
    jsr = np.array([np.sum(success & (att < t)) / len(att) for t in grid])
    dense = np.linspace(grid[0], grid[-1], n_grid)
    dense = np.unique(np.concatenate([dense, grid]))
    gap = np.interp(dense, grid, jsr) - (1.0 - np.interp(dense, grid, tp))
    i = int(np.argmax(gap >= 0))
    assert i > 0, "crossing outside the finite grid"
    lo, hi = dense[i - 1], dense[i]
    frac = -gap[i - 1] / (gap[i] - gap[i - 1])
    t = lo + frac * (hi - lo)
    return t, float(np.interp(t, grid, jsr))


def test_auc_examples():
    assert roc([0.1, 0.2], [0.8, 0.9]).auc == 1.0
    assert roc([0.3, 0.1, 0.7], [0.7, 0.3, 0.1]).auc == 0.5
    assert roc([0.1, 0.3], [0.2, 0.4]).auc == 0.75
    assert auc_pairs([0.1, 0.3], [0.2, 0.4]) == 0.75


def test_trapezoid_equals_mann_whitney():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n, m = rng.integers(1, 60, size=2)
        nat = np.round(rng.normal(0, 1, n), int(rng.integers(0, 3)))
        att = np.round(rng.normal(rng.uniform(-1, 2), 1, m), int(rng.integers(0, 3)))
        assert abs(roc(nat, att).auc - auc_pairs(nat, att)) < 1e-9


def test_eer_matches_dense_grid():
    rng = np.random.default_rng(1)
    checked = 0
    for _ in range(20):
        nat = rng.gamma(2.0, 0.2, 50)
        att = rng.gamma(2.0, 0.2, 50) + rng.uniform(0.0, 0.4)
        success = rng.random(50) < rng.uniform(0.5, 1.0)
        _, jsr = eer_operating_point(nat, att, success)
        _, oracle = dense_eer(nat, att, success)
        assert abs(jsr - oracle) < 1e-6
        checked += 1
    assert checked == 20


def test_jsr_hand_enumeration():
    scores = np.array([0.1, 0.5, 0.9, 0.3])
    success = np.array([True, True, True, False])
    assert joint_success_rate(scores, success, 0.6) == 0.5
    assert joint_success_rate(scores, success, 0.1) == 0.0
    assert joint_success_rate(scores, success, 0.11) == 0.25
    assert joint_success_rate(scores, success, 10.0) == 0.75


def test_jsr_all_failed_or_all_successful():
    scores = np.array([0.2, 0.4, 0.6])
    t = np.linspace(-1, 2, 13)
    np.testing.assert_array_equal(joint_success_rate(scores, np.zeros(3, bool), t), 0.0)
    assert joint_success_rate(scores, np.ones(3, bool), 0.61) == 1.0


def test_eer_degenerate_cases():
    nat = np.array([0.1, 0.2, 0.3, 0.4])
    t, jsr = eer_operating_point(nat, [0.5, 0.6], [False, False])
    assert jsr == 0.0
    r = roc(nat, [0.5, 0.6], [False, False])
    assert np.all(r.jsr == 0)
    assert np.mean(nat < t) == 1.0
    _, jsr = eer_operating_point(nat, nat.copy())
    assert jsr == pytest.approx(0.5, abs=1e-12)


def test_roc_requires_both_sides():
    with pytest.raises(ContractError):
        roc([], [0.1])
    with pytest.raises(ContractError):
        roc([0.1], [])
    with pytest.raises(ContractError):
        roc([0.1], [0.2, 0.3], [True])


def test_success_rate_examples():
    assert success_rate([None, None]) == 0.0
    assert success_rate([np.zeros(2), np.ones(2)]) == 1.0
    assert success_rate([np.zeros(2), None, np.ones(2), np.ones(2)]) == 0.75
    with pytest.raises(ContractError):
        success_rate([])


def test_two_variable_indicator():
    assert two_variable_indicator(0.5, 0.5, 0.1) == 1
    assert two_variable_indicator(0.75, 0.5, 0.25) == 0
    assert two_variable_indicator(0.5, 0.5, 0.1, success=False) == 0
    h = np.linspace(0, 1, 101)
    flags = two_variable_indicator(h, 0.5, 0.2)
    inside = np.abs(h - 0.5) < 0.2
    np.testing.assert_array_equal(flags, inside.astype(int))
    assert flags[0] == 0 and flags[50] == 1 and flags[-1] == 0
    with pytest.raises(ContractError):
        two_variable_indicator(0.5, 0.5, -0.1)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_report_invariants(seed):
    rng = np.random.default_rng(seed)
    nat = rng.exponential(1.0, rng.integers(1, 40))
    att = rng.exponential(rng.uniform(0.5, 2.0), rng.integers(1, 40))
    success = rng.random(len(att)) < rng.random()
    r = roc(nat, att, success)
    for arr in (r.tp, r.fp, r.jsr):
        assert np.all((arr >= 0) & (arr <= 1))
        assert np.all(np.diff(arr) >= 0)
    assert np.all(r.jsr <= r.fp + 1e-15)
    if success.any():
        fp_successful = np.array([np.mean(att[success] < t) for t in r.thresholds])
        assert np.all(r.jsr <= fp_successful * success.mean() + 1e-12)
    assert 0 <= r.auc <= 1
    assert r.success_rate == success.mean()
    assert r.auc_below_half == (r.auc < 0.5)


def test_report_serialisation(tmp_path):
    r = roc([0.1, 0.3], [0.2, 0.4], [True, False])
    r.to_json(tmp_path / "r.json")
    r.to_csv(tmp_path / "r.csv")
    data = json.loads((tmp_path / "r.json").read_text())
    assert data["auc"] == 0.75 and data["success_rate"] == 0.5 and data["auc_below_half"] is False
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "threshold,tp,fp,jsr"
    assert len(lines) == 1 + len(r.thresholds)
