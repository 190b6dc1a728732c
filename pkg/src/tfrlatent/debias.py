"""Iterative moment shifting of projected widths.

The inverse model is unbiased when widths carry no Eddington shift, and the
shift of each width depends only on the scatter in mass and on the mass
Schechter function. Starting from an inverse fit ``(beta_0, gamma_0)``, each
iteration

1. corrects every projected width with :func:`~tfrlatent.bias.eddington_correct_w`
   using ``(sigma_m_user, beta_j, M_star = v_star + gamma_j, alpha)``,
2. re-fits the inverse model on the corrected widths,

and stops once ``max(|d beta|, beta |d gamma|)`` drops below the tolerance.
``v_star`` and ``alpha`` come from a forward fit and stay fixed; ``sigma_m``
cannot be learned by this procedure and must be supplied.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from tfrlatent.bias import FitSummary, ModelTag, eddington_correct_w
from tfrlatent.catalog import Catalog
from tfrlatent.core import SelectionSpec
from tfrlatent.fitting import FitConfig, FitResult, fit
from tfrlatent.likelihood import ModelKind
from tfrlatent.sampler import default_walkers

log = logging.getLogger(__name__)

STOP_TOLERANCE = 0.005
MAX_ITERATIONS = 10


class DebiasStatus:
    CONVERGED = "converged"
    ITERATION_CAP = "iteration-cap"
    OSCILLATING = "oscillating"
    NOT_CONVERGED_FIT = "inner-fit-not-converged"


@dataclass
class MomentShiftState:
    """State of the moment-shifting iteration.

    Attributes
    ----------
    iteration : int
        Number of completed corrections; ``history`` holds ``iteration + 1`` entries.
    beta_j, gamma_j : float
        Current estimates.
    v_star, alpha : float
        Held fixed at the forward-fit values.
    sigma_m_user : float
    corrected_widths : ndarray
        ``w_tilde`` after the latest correction.
    history : list of (beta, gamma)
    converged : bool
    status : str
        One of the :class:`DebiasStatus` values, or ``"running"``.
    """

    iteration: int
    beta_j: float
    gamma_j: float
    v_star: float
    alpha: float
    sigma_m_user: float
    corrected_widths: np.ndarray
    history: list[tuple[float, float]] = field(default_factory=list)
    converged: bool = False
    status: str = "running"

    def __post_init__(self) -> None:
        if self.sigma_m_user < 0:
            raise ValueError("sigma_m_user must be >= 0")
        if not self.history:
            self.history = [(self.beta_j, self.gamma_j)]
        if len(self.history) != self.iteration + 1:
            raise ValueError("history must hold iteration + 1 entries")

    def step(self, beta: float, gamma: float) -> float:
        """Record a new iterate and return ``max(|d beta|, beta |d gamma|)``."""
        delta = max(abs(beta - self.beta_j), beta * abs(gamma - self.gamma_j))
        self.beta_j, self.gamma_j = float(beta), float(gamma)
        self.history.append((self.beta_j, self.gamma_j))
        self.iteration += 1
        return delta

    def is_oscillating(self) -> bool:
        """Whether the last three slope steps alternate in sign without shrinking."""
        if len(self.history) < 4:
            return False
        b = np.array([h[0] for h in self.history[-4:]])
        db = np.diff(b)
        alternating = bool(np.all(db[1:] * db[:-1] < 0))
        growing = bool(np.all(np.abs(db[1:]) >= np.abs(db[:-1])))
        return alternating and growing

    def write_history(self, path) -> None:
        """Write ``iteration,beta,gamma`` rows."""
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(["iteration", "beta", "gamma"])
            for k, (b, g) in enumerate(self.history):
                out.writerow([k, repr(b), repr(g)])

    def to_dict(self) -> dict:
        return {"iteration": self.iteration, "beta": self.beta_j, "gamma": self.gamma_j,
                "v_star": self.v_star, "alpha": self.alpha,
                "sigma_m_user": self.sigma_m_user, "converged": self.converged,
                "status": self.status, "history": [list(h) for h in self.history]}


def _as_point(fit_like) -> dict[str, float]:
    if isinstance(fit_like, FitResult):
        return fit_like.point()
    if isinstance(fit_like, FitSummary):
        return {"beta": fit_like.beta_hat, "gamma": fit_like.gamma_hat}
    return {k: float(v) for k, v in dict(fit_like).items()}


def _ball_init(center: Mapping[str, float], config: FitConfig, n_walkers: int,
               rng: np.random.Generator) -> np.ndarray:
    """Walkers in a small ball around ``center``, clipped inside the prior bounds."""
    bounds = config.prior_bounds()
    mid = np.array([center.get(n, 0.5 * (lo + hi))
                    for n, lo, hi in zip(bounds.names, bounds.low, bounds.high)])
    width = 1e-3 * (bounds.high - bounds.low)
    pos = mid + width * rng.standard_normal((n_walkers, bounds.ndim))
    span = bounds.high - bounds.low
    return np.clip(pos, bounds.low + 1e-6 * span, bounds.high - 1e-6 * span)


def moment_shift_fit(catalog: Catalog, sigma_m_user: float, forward_fit, inverse_fit,
                     config: FitConfig | None = None,
                     selection: SelectionSpec | None = None, *,
                     tolerance: float = STOP_TOLERANCE,
                     max_iterations: int = MAX_ITERATIONS,
                     progress=None) -> tuple[FitSummary, MomentShiftState]:
    """Debias an inverse fit by iteratively correcting the projected widths.

    Parameters
    ----------
    catalog : Catalog
        The catalog the inverse fit was run on.
    sigma_m_user : float
        Assumed scatter in log mass; ``0 <= sigma_m_user`` and at most the
        forward estimate of ``sigma_m`` (a warning is logged otherwise).
    forward_fit : FitResult or mapping
        Supplies ``v_star``, ``alpha`` and ``sigma_m``.
    inverse_fit : FitResult, FitSummary or mapping
        Supplies the starting ``(beta, gamma)``. When it is a
        :class:`FitResult` its final walker positions seed the first refit.
    config : FitConfig, optional
        Sampler settings for the inner inverse fits.
    tolerance, max_iterations : float, int
        Stop rule ``max(|d beta|, beta |d gamma|) < tolerance``.

    Returns
    -------
    (FitSummary, MomentShiftState)
        The last inner fit and the iteration state. A state that hit the
        cap or oscillated has ``converged = False``.
    """
    if not sigma_m_user >= 0:
        raise ValueError("sigma_m_user must be >= 0")
    if max_iterations < 1:
        raise ValueError("max_iterations must be >= 1")
    config = config or FitConfig(ModelKind.INVERSE)
    if config.kind is not ModelKind.INVERSE:
        raise ValueError("inner fits must use the inverse model")
    fwd = _as_point(forward_fit)
    inv = _as_point(inverse_fit)
    if "sigma_m" in fwd and sigma_m_user > fwd["sigma_m"]:
        log.warning("sigma_m_user=%.3f exceeds the forward estimate %.3f; "
                    "expect over-correction", sigma_m_user, fwd["sigma_m"])

    state = MomentShiftState(0, inv["beta"], inv["gamma"], fwd["v_star"], fwd["alpha"],
                             float(sigma_m_user), catalog.w_tilde.copy())
    if isinstance(inverse_fit, FitResult):
        last: FitResult | None = inverse_fit
        summary = inverse_fit.fit_summary()
        init = inverse_fit.chain.final_positions()
    else:
        last = None
        summary = inverse_fit if isinstance(inverse_fit, FitSummary) else None
        init = None
    last_widths = catalog.w_tilde

    while state.iteration < max_iterations:
        widths = eddington_correct_w(catalog.w_tilde, catalog.m_tilde, catalog.d,
                                     state.sigma_m_user, state.beta_j,
                                     state.v_star + state.gamma_j, state.alpha)
        state.corrected_widths = np.asarray(widths, dtype=float)
        if last is not None and np.array_equal(widths, last_widths):
            # Same data as the previous fit: its posterior is reused as is.
            result = last
        else:
            if init is None:
                rng = np.random.default_rng(config.seed)
                center = dict(inv, sigma_w=inv.get("sigma_w", 0.05))
                n_w = config.n_walkers or default_walkers(len(config.kind.free_params))
                init = _ball_init(center, config, n_w, rng)
            result = fit(catalog.with_widths(state.corrected_widths), config, selection,
                         init=init, progress=progress)
        last, last_widths = result, state.corrected_widths
        init = result.chain.final_positions()
        summary = result.fit_summary()
        delta = state.step(summary.beta_hat, summary.gamma_hat)
        log.info("moment shift %d: beta=%.4f gamma=%.4f change=%.4g", state.iteration,
                 state.beta_j, state.gamma_j, delta)
        if not result.converged:
            state.status = DebiasStatus.NOT_CONVERGED_FIT
            break
        if delta < tolerance:
            state.converged = True
            state.status = DebiasStatus.CONVERGED
            break
        if state.is_oscillating():
            state.status = DebiasStatus.OSCILLATING
            log.warning("moment shifting oscillates: slope history %s",
                        [round(h[0], 4) for h in state.history])
            break
    else:
        state.status = DebiasStatus.ITERATION_CAP

    if summary is None:  # pragma: no cover - loop always runs at least once
        raise RuntimeError("no inverse fit available")
    return FitSummary(summary.beta_hat, summary.gamma_hat, summary.beta_err,
                      summary.gamma_err, ModelTag.INVERSE), state

