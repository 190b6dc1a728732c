"""Closed-form bias calculators.

* :func:`malmquist_shift` -- mean offset of a Gaussian-scattered variable
  truncated at a hard limit (distance-dependent Malmquist bias).
* :func:`eddington_shift_y` and :func:`eddington_correct_w` -- first-moment
  shift of the dependent variable caused by scatter in the independent one
  (general Eddington bias) and its correction for projected widths.
* :func:`h0_bias` -- propagation of an intercept bias into the Hubble constant.
* :func:`bias_scaling_predict` -- empirical power laws for the intercept and
  slope biases of the unidirectional models.
* :func:`unbiased_anchor` -- the abscissa where forward and inverse fits
  cross, at which both intercepts are nearly unbiased.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from enum import Enum

import numpy as np
from scipy import special

from tfrlatent.core import LN10

ANCHOR_LOGV = 2.5


class ModelTag(str, Enum):
    FORWARD = "forward"
    INVERSE = "inverse"
    DUAL = "dual"


@dataclass(frozen=True)
class FitSummary:
    """Point estimates and 1-sigma half-widths of a slope/intercept fit."""

    beta_hat: float
    gamma_hat: float
    beta_err: float
    gamma_err: float
    model_tag: ModelTag

    def __post_init__(self) -> None:
        object.__setattr__(self, "model_tag", ModelTag(self.model_tag))
        if not (self.beta_err > 0 and self.gamma_err > 0):
            raise ValueError("errors must be positive")

    def bias(self, beta_true: float, gamma_true: float) -> tuple[float, float]:
        """``(B_beta, B_gamma)``, estimate minus truth."""
        return self.beta_hat - beta_true, self.gamma_hat - gamma_true

    def to_dict(self) -> dict:
        out = asdict(self)
        out["model_tag"] = self.model_tag.value
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "FitSummary":
        return cls(float(d["beta_hat"]), float(d["gamma_hat"]), float(d["beta_err"]),
                   float(d["gamma_err"]), ModelTag(d["model_tag"]))


@dataclass(frozen=True)
class AnchorResult:
    """Crossing point of two fitted relations.

    ``gamma0_forward`` and ``gamma0_inverse`` are each line evaluated at
    ``logV0``; they coincide up to rounding. ``gamma0_true`` is filled when a
    reference relation is supplied.
    """

    logV0: float
    gamma0: float
    gamma0_forward: float
    gamma0_inverse: float
    gamma0_true: float | None = None

    def __post_init__(self) -> None:
        if not (math.isfinite(self.logV0) and math.isfinite(self.gamma0)):
            raise ValueError("anchor must be finite")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AnchorResult":
        return cls(**d)


class DegenerateAnchor(ValueError):
    """The two fitted slopes are equal, so the lines do not cross."""


def malmquist_shift(delta, sigma_y):
    """Mean offset ``y(x) - <y_obs>`` of a Gaussian variable truncated below a limit.

    Parameters
    ----------
    delta : float or array_like
        Distance of the limit from the prediction, ``y_l - y(x)``, in dex.
    sigma_y : float
        Gaussian dispersion, ``> 0``.

    Returns
    -------
    float or ndarray
        ``-sigma sqrt(2/pi) exp(-delta^2 / 2 sigma^2) / erfc(delta / (sqrt 2 sigma))``,
        always negative. Evaluated as ``-sigma sqrt(2/pi) / erfcx(.)``, which
        stays finite deep in the censored tail.
    """
    if not np.all(np.asarray(sigma_y) > 0):
        raise ValueError("sigma_y must be positive")
    x = np.asarray(delta, dtype=float) / (math.sqrt(2.0) * sigma_y)
    out = -np.asarray(sigma_y, dtype=float) * math.sqrt(2.0 / math.pi) / special.erfcx(x)
    return float(out) if np.ndim(out) == 0 else out


def eddington_shift_y(beta, sigma_x, dlnp_dx):
    """General Eddington shift of ``<y | x_obs>``: ``-beta sigma_x^2 d ln p / d x_obs``.

    With ``beta = 1`` this is the classic Eddington bias of a measured
    quantity with a distribution ``p``.
    """
    if np.any(np.asarray(sigma_x) < 0):
        raise ValueError("sigma_x must be >= 0")
    out = -np.asarray(beta, dtype=float) * np.asarray(sigma_x, dtype=float) ** 2 * np.asarray(
        dlnp_dx, dtype=float)
    return float(out) if np.ndim(out) == 0 else out


def schechter_dlnp_dw(w, beta: float, v_star: float, alpha: float):
    """Logarithmic derivative of the velocity Schechter function, ``ln10 beta [(alpha+1) - 10^(beta w - v_star)]``."""
    w = np.asarray(w, dtype=float)
    out = LN10 * beta * ((alpha + 1.0) - np.power(10.0, beta * w - v_star))
    return float(out) if out.ndim == 0 else out


def eddington_correct_w(w_tilde, m_tilde, d, sigma_m, beta, M_star, alpha):
    """Remove the expected Eddington shift from projected widths.

    ``w_c = w_tilde - (ln10 / beta) sigma_m^2 [(alpha + 1) - 10^(m_tilde + d - M_star)]``
    """
    if not beta > 0:
        raise ValueError("beta must be positive")
    w_tilde = np.asarray(w_tilde, dtype=float)
    if sigma_m == 0:
        return w_tilde.copy() if w_tilde.ndim else float(w_tilde)
    y = np.asarray(m_tilde, dtype=float) + np.asarray(d, dtype=float)
    corr = (LN10 / beta) * sigma_m**2 * ((alpha + 1.0) - np.power(10.0, y - M_star))
    out = w_tilde - corr
    return float(out) if np.ndim(out) == 0 else out


def h0_bias(B_gamma):
    """Hubble-constant bias (km/s/Mpc) implied by an intercept bias ``B_gamma`` (dex) at H0 ~ 70."""
    out = 35.0 * LN10 * np.asarray(B_gamma, dtype=float)
    return float(out) if out.ndim == 0 else out


_SCALING = {
    ModelTag.FORWARD: (0.05, -0.058, -0.246),
    ModelTag.INVERSE: (0.15, +0.060, +0.237),
}
SCALING_EXPONENT = 1.8


def bias_scaling_predict(sigma: float, model_tag) -> tuple[float, float]:
    """Empirical ``(B_gamma, B_beta)`` for a unidirectional fit.

    Advisory only: the power laws were calibrated on simulations of the
    fiducial configuration (``beta = 3.33``, ``gamma = 10.5``, step
    selection at ``m_l = 5.736``) and need not hold elsewhere.

    Parameters
    ----------
    sigma : float
        Scatter of the independent variable: ``sigma_w`` for the forward
        model, ``sigma_m`` for the inverse model.
    model_tag : {"forward", "inverse"}
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    tag = ModelTag(model_tag)
    if tag not in _SCALING:
        raise ValueError("bias scaling is defined for the forward and inverse models only")
    ref, bg, bb = _SCALING[tag]
    f = (sigma / ref) ** SCALING_EXPONENT
    return bg * f, bb * f


def unbiased_anchor(fwd: FitSummary, inv: FitSummary,
                    truth: tuple[float, float] | None = None) -> AnchorResult:
    """Abscissa ``log V0`` where the forward and inverse relations cross.

    ``log V0 = 2.5 - (gamma_inv - gamma_fwd) / (beta_inv - beta_fwd)`` and the
    intercept there is ``gamma0 = gamma_hat + beta_hat (log V0 - 2.5)``.

    Parameters
    ----------
    fwd, inv : FitSummary
    truth : (beta, gamma), optional
        Reference relation evaluated at the anchor for comparison.

    Raises
    ------
    DegenerateAnchor
        If the two slopes are equal.
    """
    d_beta = inv.beta_hat - fwd.beta_hat
    d_gamma = inv.gamma_hat - fwd.gamma_hat
    if d_beta == 0 or not math.isfinite(d_gamma / d_beta):
        raise DegenerateAnchor("equal slopes: the fitted relations do not cross")
    dx = -d_gamma / d_beta
    g_fwd = fwd.gamma_hat + fwd.beta_hat * dx
    g_inv = inv.gamma_hat + inv.beta_hat * dx
    g_true = None if truth is None else truth[1] + truth[0] * dx
    return AnchorResult(ANCHOR_LOGV + dx, 0.5 * (g_fwd + g_inv), g_fwd, g_inv, g_true)
