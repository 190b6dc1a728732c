"""End-to-end acceptance checks on simulated samples A, B and C.

Each criterion prints one ``CRITERION n: PASS/FAIL`` line (also repeated in
the terminal summary) and then asserts it. Fits share session-scoped
fixtures; their summaries are written to ``runs/acceptance`` for inspection.
The fits take tens of minutes on one core; select ``-m "not slow"`` to skip.

"Combined sigma" is the quadrature sum of the reference statistical error and
the run's own half-width ``(p84 - p16) / 2``.
"""

import json
import math
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from tfrlatent.bias import unbiased_anchor
from tfrlatent.config import load_config
from tfrlatent.debias import moment_shift_fit
from tfrlatent.fitting import fit
from tfrlatent.likelihood import conditional_pdf_dual
from tfrlatent.simulate import simulate

ROOT = Path(__file__).resolve().parents[1]
OUT = ROOT / "runs" / "acceptance"
TRUE_BETA, TRUE_GAMMA = 3.33, 10.5

# Reference estimates and their symmetric statistical errors (mean of the
# quoted upper and lower errors) for the matched-model validation fits.
REF_FORWARD_A = {"gamma": (10.502, 0.004), "beta": (3.355, 0.031)}
REF_INVERSE_B = {"gamma": (10.500, 0.003), "beta": (3.337, 0.0235)}
# Statistical error of the inverse model on sample C, used for the
# moment-shifted fit (no separate figure is quoted for it).
REF_INVERSE_C_ERR = {"gamma": 0.0045, "beta": 0.029}
# Reference bias windows on sample C.
FORWARD_C_GAMMA_BIAS = (-0.07, -0.03)
INVERSE_C_GAMMA_BIAS = (0.03, 0.07)
FORWARD_C_BETA_BIAS, INVERSE_C_BETA_BIAS, BETA_BIAS_TOL = -0.17, 0.26, 0.08

pytestmark = pytest.mark.slow


def _combined(err_ref: float, half_width: float) -> float:
    return math.hypot(err_ref, half_width)


def _save(name: str, data) -> None:
    OUT.mkdir(parents=True, exist_ok=True)
    (OUT / f"{name}.json").write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


class _Runs:
    """Lazily simulated samples and fits, shared across the session."""

    def __init__(self):
        self.cfg = {s: load_config(ROOT / "configs" / f"sample_{s}.toml") for s in "ABC"}
        self._catalogs = {}
        self._fits = {}
        self._debias = {}

    def catalog(self, sample):
        if sample not in self._catalogs:
            cfg = self.cfg[sample]
            self._catalogs[sample] = simulate(cfg.simulate.sim_config(cfg.seed)).catalog
        return self._catalogs[sample]

    def fit(self, sample, kind):
        key = (sample, kind)
        if key not in self._fits:
            cfg = self.cfg[sample]
            fcfg = cfg.fit.fit_config(kind, cfg.seed, cfg.threads)
            res = fit(self.catalog(sample), fcfg, cfg.simulate.selection_spec())
            _save(f"fit_{kind}_{sample}", res.summary_dict() | {"n_records": len(self.catalog(sample))})
            self._fits[key] = res
        return self._fits[key]

    def debias(self, sigma_m):
        if sigma_m not in self._debias:
            cfg = self.cfg["C"]
            fcfg = cfg.fit.fit_config("inverse", cfg.seed, cfg.threads)
            t0 = time.perf_counter()
            summary, state = moment_shift_fit(self.catalog("C"), sigma_m, self.fit("C", "forward"),
                                              self.fit("C", "inverse"), fcfg,
                                              cfg.simulate.selection_spec())
            _save(f"debias_C_sigma{sigma_m:g}",
                  {"fit_summary": summary.to_dict(), "state": state.to_dict(),
                   "wall_time_s": time.perf_counter() - t0})
            self._debias[sigma_m] = (summary, state)
        return self._debias[sigma_m]


@pytest.fixture(scope="session")
def runs():
    return _Runs()


def _within(fitres, name, ref, err_ref, n_sigma):
    lo, mid, hi = fitres.percentiles()[name]
    comb = _combined(err_ref, 0.5 * (hi - lo))
    dev = abs(mid - ref) / comb
    return dev <= n_sigma, f"{name}={mid:.4f} (ref {ref}, {dev:.2f} combined sigma)"


# --------------------------------------------------------------------------
# 1. Matched models recover the truth
# --------------------------------------------------------------------------


def test_criterion_1_matched_models(runs, verdict):
    checks = []
    fa = runs.fit("A", "forward")
    ib = runs.fit("B", "inverse")
    for res, refs, tag in ((fa, REF_FORWARD_A, "forward A"), (ib, REF_INVERSE_B, "inverse B")):
        for name, (ref, err) in refs.items():
            ok, msg = _within(res, name, ref, err, 3.0)
            checks.append((ok and res.converged, f"{tag} {msg}"))
    ok = all(c for c, _ in checks)
    verdict("CRITERION 1", ok, "; ".join(m for _, m in checks)
            + f"; converged={fa.converged and ib.converged}")
    assert ok


# --------------------------------------------------------------------------
# 2. Mismatched models show the expected Eddington biases
# --------------------------------------------------------------------------


def test_criterion_2_eddington_bias_on_sample_c(runs, verdict):
    fc = runs.fit("C", "forward").point()
    ic = runs.fit("C", "inverse").point()
    bg_f, bg_i = fc["gamma"] - TRUE_GAMMA, ic["gamma"] - TRUE_GAMMA
    bb_f, bb_i = fc["beta"] - TRUE_BETA, ic["beta"] - TRUE_BETA
    checks = {
        "forward gamma bias": FORWARD_C_GAMMA_BIAS[0] <= bg_f <= FORWARD_C_GAMMA_BIAS[1],
        "inverse gamma bias": INVERSE_C_GAMMA_BIAS[0] <= bg_i <= INVERSE_C_GAMMA_BIAS[1],
        "forward beta bias": abs(bb_f - FORWARD_C_BETA_BIAS) <= BETA_BIAS_TOL,
        "inverse beta bias": abs(bb_i - INVERSE_C_BETA_BIAS) <= BETA_BIAS_TOL,
    }
    ok = all(checks.values())
    failed = [k for k, v in checks.items() if not v]
    verdict("CRITERION 2", ok,
            f"forward dgamma={bg_f:+.4f} dbeta={bb_f:+.4f}; inverse dgamma={bg_i:+.4f} "
            f"dbeta={bb_i:+.4f}" + (f"; outside window: {', '.join(failed)}" if failed else ""))
    assert ok


# --------------------------------------------------------------------------
# 3. The dual-scatter model is unbiased on sample C
# --------------------------------------------------------------------------


def test_criterion_3_dual_scatter_on_sample_c(runs, verdict):
    dual = runs.fit("C", "dual")
    truth = runs.cfg["C"].simulate.truth().as_dict()
    q = dual.percentiles()
    devs = {}
    for name, (lo, mid, hi) in q.items():
        devs[name] = abs(mid - truth[name]) / (0.5 * (hi - lo))
    ratios = {}
    for name in ("beta", "gamma"):
        uni = 0.5 * (runs.fit("C", "forward").half_width(name)
                     + runs.fit("C", "inverse").half_width(name))
        ratios[name] = dual.half_width(name) / uni
    ok = (dual.converged and all(d <= 2.0 for d in devs.values())
          and all(1.5 <= r <= 4.0 for r in ratios.values()))
    verdict("CRITERION 3", ok,
            ", ".join(f"{k} {q[k][1]:.4f} ({devs[k]:.2f} sigma)" for k in q)
            + "; width ratios " + ", ".join(f"{k} {v:.2f}" for k, v in ratios.items()))
    assert ok


# --------------------------------------------------------------------------
# 4. Moment shifting converges to the truth
# --------------------------------------------------------------------------


def test_criterion_4_moment_shifting(runs, verdict):
    inv = runs.fit("C", "inverse")
    summary, state = runs.debias(0.15)
    b_comb = _combined(REF_INVERSE_C_ERR["beta"], summary.beta_err)
    g_comb = _combined(REF_INVERSE_C_ERR["gamma"], summary.gamma_err)
    b_dev = abs(summary.beta_hat - TRUE_BETA) / b_comb
    g_dev = abs(summary.gamma_hat - TRUE_GAMMA) / g_comb
    zero, zstate = runs.debias(0.0)
    ref = inv.fit_summary()
    reproduces = (zstate.converged and zero.beta_hat == ref.beta_hat
                  and zero.gamma_hat == ref.gamma_hat)
    ok = (state.converged and state.iteration <= 10 and b_dev <= 2.0 and g_dev <= 2.0
          and reproduces)
    verdict("CRITERION 4", ok,
            f"status={state.status} after {state.iteration} iterations; "
            f"beta={summary.beta_hat:.4f} ({b_dev:.2f} combined sigma), "
            f"gamma={summary.gamma_hat:.4f} ({g_dev:.2f} combined sigma); "
            f"sigma_m=0 reproduces inverse fit: {reproduces}")
    assert ok


def test_moment_shift_brackets_and_over_corrects(runs):
    # Not a numbered criterion: the corrected intercept lies between the
    # forward and uncorrected inverse values, and an overestimated scatter
    # pushes it further toward the forward value.
    g_fwd = runs.fit("C", "forward").point()["gamma"]
    g_inv = runs.fit("C", "inverse").point()["gamma"]
    g_ok = runs.debias(0.15)[0].gamma_hat
    over, state = runs.debias(0.25)
    print(f"gamma: forward {g_fwd:.4f}, sigma_m=0.15 {g_ok:.4f}, sigma_m=0.25 "
          f"{over.gamma_hat:.4f} ({state.status}), inverse {g_inv:.4f}")
    assert g_fwd < g_ok < g_inv
    assert over.gamma_hat < g_ok


# --------------------------------------------------------------------------
# 5. Unbiased anchor
# --------------------------------------------------------------------------


def test_criterion_5_unbiased_anchor(runs, verdict):
    fwd = runs.fit("C", "forward").fit_summary()
    inv = runs.fit("C", "inverse").fit_summary()
    res = unbiased_anchor(fwd, inv, truth=(TRUE_BETA, TRUE_GAMMA))
    _save("anchor_C", res.to_dict())
    ok = abs(res.logV0 - 2.26) <= 0.05 and abs(res.gamma0 - res.gamma0_true) <= 0.03
    verdict("CRITERION 5", ok,
            f"logV0={res.logV0:.4f} (2.26 +/- 0.05), gamma0={res.gamma0:.4f} vs true "
            f"{res.gamma0_true:.4f} (|diff| {abs(res.gamma0 - res.gamma0_true):.4f} <= 0.03)")
    assert ok


# --------------------------------------------------------------------------
# 6. FFT path: agreement and speed
# --------------------------------------------------------------------------


def test_criterion_6_fft_agreement_and_speed(runs, verdict):
    cat = runs.catalog("C")
    truth = runs.cfg["C"].simulate.truth()
    small = cat.take(np.linspace(0, len(cat) - 1, 50).astype(int))
    args = (small.m_tilde, small.w_tilde, small.d, truth)
    fft = conditional_pdf_dual(*args, method="fft")
    direct = conditional_pdf_dual(*args, method="direct")
    rel = float(np.max(np.abs(fft / direct - 1)))

    big = cat.take(np.arange(1000))
    args = (big.m_tilde, big.w_tilde, big.d, truth)
    conditional_pdf_dual(*(a[:4] for a in args[:3]), truth, n_nodes=1024, method="fft")
    t0 = time.perf_counter()
    conditional_pdf_dual(*args, n_nodes=1024, method="fft")
    t_fft = time.perf_counter() - t0
    t0 = time.perf_counter()
    conditional_pdf_dual(*args, n_nodes=1024, method="direct")
    t_direct = time.perf_counter() - t0
    speedup = t_direct / t_fft
    ok = rel <= 1e-6 and speedup >= 50.0
    verdict("CRITERION 6", ok,
            f"max relative FFT-direct difference {rel:.2e} on 50 records (<= 1e-6); "
            f"speedup {speedup:.0f}x at 1024 nodes on 1000 records "
            f"({t_direct:.1f} s vs {t_fft:.2f} s, >= 50x)")
    assert ok


# --------------------------------------------------------------------------
# 7. Property suites
# --------------------------------------------------------------------------

PROPERTY_TESTS = [
    "tests/test_likelihood.py::test_forward_self_normalization_random_tuples",
    "tests/test_likelihood.py::test_inverse_self_normalization_random_tuples",
    "tests/test_likelihood.py::test_dual_self_normalization",
    "tests/test_likelihood.py::test_dual_bidirectional_factorizations_agree_on_spot_grid",
    "tests/test_core.py::test_inclination_prior_unit_mass",
    "tests/test_numerics.py::test_truncated_prior_mass",
    "tests/test_sampler.py::test_gaussian_target_moments",
    "tests/test_sampler.py::test_gaussian_credible_interval_coverage",
    "tests/test_simulate.py::test_inclination_ks_against_sine_law",
    "tests/test_simulate.py::test_velocities_inside_support_and_ks",
    "tests/test_simulate.py::test_no_selection_keeps_everything_and_mass_function_ks",
    "tests/test_bias.py::test_eddington_correct_w_examples",
    "tests/test_debias.py::test_zero_scatter_reproduces_the_inverse_fit_without_refitting",
    "tests/test_bias.py::test_bias_scaling_examples",
    "tests/test_bias.py::test_h0_bias_examples",
]


def test_criterion_7_property_suites(verdict):
    t0 = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider",
                           *PROPERTY_TESTS], cwd=ROOT, capture_output=True, text=True)
    elapsed = time.perf_counter() - t0
    tail = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    ok = proc.returncode == 0 and elapsed < 60.0
    verdict("CRITERION 7", ok, f"{len(PROPERTY_TESTS)} property tests: {tail} "
            f"({elapsed:.0f} s, < 60 s)")
    assert ok
