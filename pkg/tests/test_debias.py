"""Moment-shift debiasing loop."""

import csv

import numpy as np
import pytest

import tfrlatent.debias as debias
from tfrlatent.bias import FitSummary, eddington_correct_w
from tfrlatent.core import ModelParams
from tfrlatent.debias import DebiasStatus, MomentShiftState, moment_shift_fit
from tfrlatent.fitting import FitConfig, FitResult
from tfrlatent.likelihood import ModelKind
from tfrlatent.sampler import Chain
from tfrlatent.simulate import SimConfig, simulate

TRUTH = ModelParams(3.33, 10.5, 0.15, 0.045, 0.3, -1.27)
FORWARD_POINT = {"beta": 3.17, "gamma": 10.45, "sigma_m": 0.15, "v_star": 0.3, "alpha": -1.27}
INV_CONFIG = FitConfig(ModelKind.INVERSE, seed=0)


@pytest.fixture(scope="module")
def catalog():
    return simulate(SimConfig(TRUTH, seed=2, cz_max=6000.0)).catalog


def _result(beta, gamma, converged=True):
    """A FitResult whose posterior medians are exactly ``(beta, gamma, 0.05)``."""
    spread = np.linspace(-0.01, 0.01, 11)
    center = np.array([beta, gamma, 0.05])
    samples = np.broadcast_to(center, (6, 11, 3)) + spread[None, :, None]
    chain = Chain(("beta", "gamma", "sigma_w"), samples.copy(), np.zeros((6, 11)),
                  np.ones((6, 11), dtype=bool), np.ones(3), 0, 1, 0, converged)
    return FitResult(ModelKind.INVERSE, chain, INV_CONFIG, 0.0)


class ScriptedFit:
    """Stands in for the inverse fit: returns scripted iterates and records its inputs."""

    def __init__(self, iterates, converged=None):
        self.iterates = list(iterates)
        self.converged = converged or [True] * len(self.iterates)
        self.widths = []
        self.inits = []

    def __call__(self, catalog, config, selection=None, init=None, progress=None):
        k = len(self.widths)
        self.widths.append(catalog.w_tilde.copy())
        self.inits.append(None if init is None else np.array(init))
        beta, gamma = self.iterates[k]
        return _result(beta, gamma, self.converged[k])


# --------------------------------------------------------------------------
# State
# --------------------------------------------------------------------------


def _state(history):
    b, g = history[-1]
    return MomentShiftState(len(history) - 1, b, g, 0.3, -1.27, 0.15, np.zeros(3),
                            history=list(history))


def test_state_history_invariant_and_step():
    s = MomentShiftState(0, 3.5, 10.55, 0.3, -1.27, 0.15, np.zeros(3))
    assert s.history == [(3.5, 10.55)]
    delta = s.step(3.45, 10.54)
    assert delta == pytest.approx(max(0.05, 3.45 * 0.01))
    assert s.iteration == 1 and len(s.history) == 2
    with pytest.raises(ValueError):
        MomentShiftState(2, 3.5, 10.55, 0.3, -1.27, 0.15, np.zeros(3), history=[(3.5, 10.5)])
    with pytest.raises(ValueError):
        MomentShiftState(0, 3.5, 10.55, 0.3, -1.27, -0.1, np.zeros(3))


def test_oscillation_needs_three_alternating_non_shrinking_steps():
    assert _state([(3.5, 10.5), (3.4, 10.5), (3.5, 10.5), (3.38, 10.5)]).is_oscillating()
    # shrinking alternation is ordinary convergence
    assert not _state([(3.5, 10.5), (3.4, 10.5), (3.45, 10.5), (3.43, 10.5)]).is_oscillating()
    # monotone
    assert not _state([(3.5, 10.5), (3.4, 10.5), (3.3, 10.5), (3.2, 10.5)]).is_oscillating()
    assert not _state([(3.5, 10.5), (3.4, 10.5), (3.5, 10.5)]).is_oscillating()


def test_history_csv(tmp_path):
    s = _state([(3.5, 10.55), (3.42, 10.53), (3.41, 10.52)])
    s.write_history(tmp_path / "h.csv")
    rows = list(csv.reader(open(tmp_path / "h.csv")))
    assert rows[0] == ["iteration", "beta", "gamma"]
    assert [int(r[0]) for r in rows[1:]] == [0, 1, 2]
    assert float(rows[2][1]) == 3.42
    d = s.to_dict()
    assert d["history"][-1] == [3.41, 10.52] and d["status"] == "running"


# --------------------------------------------------------------------------
# Loop behaviour
# --------------------------------------------------------------------------


def test_zero_scatter_reproduces_the_inverse_fit_without_refitting(catalog, monkeypatch):
    def no_fit(*a, **k):
        raise AssertionError("the unchanged widths must not be refitted")

    monkeypatch.setattr(debias, "fit", no_fit)
    inv = _result(3.59, 10.55)
    summary, state = moment_shift_fit(catalog, 0.0, FORWARD_POINT, inv, INV_CONFIG)
    assert state.converged and state.status == DebiasStatus.CONVERGED
    assert state.iteration == 1
    assert summary.beta_hat == inv.fit_summary().beta_hat
    assert summary.gamma_hat == inv.fit_summary().gamma_hat
    assert np.array_equal(state.corrected_widths, catalog.w_tilde)


def test_corrections_always_start_from_the_observed_widths(catalog, monkeypatch):
    stub = ScriptedFit([(3.45, 10.52), (3.40, 10.51), (3.398, 10.5095)])
    monkeypatch.setattr(debias, "fit", stub)
    inv = _result(3.59, 10.55)
    summary, state = moment_shift_fit(catalog, 0.15, FORWARD_POINT, inv, INV_CONFIG)
    assert state.status == DebiasStatus.CONVERGED and state.iteration == 3
    assert summary.beta_hat == pytest.approx(3.398)
    expected_inputs = [(3.59, 10.55), (3.45, 10.52), (3.40, 10.51)]
    for widths, (b, g) in zip(stub.widths, expected_inputs):
        want = eddington_correct_w(catalog.w_tilde, catalog.m_tilde, catalog.d, 0.15, b,
                                   0.3 + g, -1.27)
        assert np.allclose(widths, want, rtol=0, atol=1e-9)
    # warm starts: the first refit begins where the inverse fit ended
    assert np.array_equal(stub.inits[0], inv.chain.final_positions())


def test_iteration_cap(catalog, monkeypatch):
    betas = 3.6 - 0.02 * np.arange(1, 11)
    monkeypatch.setattr(debias, "fit", ScriptedFit([(b, 10.5) for b in betas]))
    _, state = moment_shift_fit(catalog, 0.15, FORWARD_POINT, _result(3.6, 10.5), INV_CONFIG)
    assert state.status == DebiasStatus.ITERATION_CAP
    assert not state.converged and state.iteration == 10


def test_oscillation_stops_the_loop(catalog, monkeypatch):
    seq = [(3.4, 10.5), (3.5, 10.5), (3.38, 10.5), (3.52, 10.5), (3.36, 10.5)]
    monkeypatch.setattr(debias, "fit", ScriptedFit(seq))
    _, state = moment_shift_fit(catalog, 0.15, FORWARD_POINT, _result(3.5, 10.5), INV_CONFIG)
    assert state.status == DebiasStatus.OSCILLATING and not state.converged
    assert state.iteration == 3


def test_unconverged_inner_fit_is_reported(catalog, monkeypatch):
    monkeypatch.setattr(debias, "fit", ScriptedFit([(3.45, 10.52)], converged=[False]))
    _, state = moment_shift_fit(catalog, 0.15, FORWARD_POINT, _result(3.6, 10.55), INV_CONFIG)
    assert state.status == DebiasStatus.NOT_CONVERGED_FIT and not state.converged


def test_summary_start_uses_a_ball_inside_the_bounds(catalog, monkeypatch):
    stub = ScriptedFit([(3.45, 10.52), (3.449, 10.5199)])
    monkeypatch.setattr(debias, "fit", stub)
    start = FitSummary(3.59, 10.55, 0.02, 0.005, "inverse")
    _, state = moment_shift_fit(catalog, 0.15, FORWARD_POINT, start, INV_CONFIG)
    assert state.converged
    init = stub.inits[0]
    bounds = INV_CONFIG.prior_bounds()
    assert init.shape == (8, 3) and np.all(bounds.contains(init))
    assert np.allclose(init[:, 0], 3.59, atol=0.02)


def test_argument_checks(catalog):
    inv = _result(3.59, 10.55)
    with pytest.raises(ValueError):
        moment_shift_fit(catalog, -0.1, FORWARD_POINT, inv)
    with pytest.raises(ValueError):
        moment_shift_fit(catalog, 0.1, FORWARD_POINT, inv, FitConfig(ModelKind.FORWARD))
    with pytest.raises(ValueError):
        moment_shift_fit(catalog, 0.1, FORWARD_POINT, inv, max_iterations=0)


def test_over_correction_warning(catalog, monkeypatch, caplog):
    monkeypatch.setattr(debias, "fit", ScriptedFit([(3.45, 10.52), (3.45, 10.52)]))
    with caplog.at_level("WARNING"):
        moment_shift_fit(catalog, 0.3, FORWARD_POINT, _result(3.59, 10.55), INV_CONFIG)
    assert "exceeds the forward estimate" in caplog.text
