"""Domain types, shorthand transforms and probability density building blocks.

Conventions used throughout the package
---------------------------------------
``m``  log10 apparent baryonic mass (the observed value is ``m_tilde``).
``d``  distance parameter ``2 log10(D_L / Mpc)``.
``w``  ``log10(W) - 2.5`` for a velocity width ``W`` in km/s.
``i``  ``log10 sin(inc)``, always ``<= 0``.

The Tully-Fisher relation is linear in these variables::

    m + d = beta * (w - i) + gamma
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, fields, replace
from enum import Enum
from functools import lru_cache
from typing import Iterator

import numpy as np
from scipy import integrate

LN10 = math.log(10.0)
C_KMS = 299792.458  #: speed of light, km/s

#: Support of the Schechter functions in the reduced variable ``beta*(w-i) - v_star``
#: (equivalently ``m + d - M_star``). Used by the simulator, the normalization
#: and every likelihood grid.
SCHECHTER_SUPPORT = (-3.5, 1.5)


# --------------------------------------------------------------------------
# Domain types
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Cosmology:
    """Kinematic cosmology used by the Taylor-expanded luminosity distance.

    Parameters
    ----------
    H0 : float
        Hubble constant in km/s/Mpc.
    q0 : float
        Deceleration parameter.
    j0 : float
        Jerk parameter.
    """

    H0: float = 70.0
    q0: float = -0.53
    j0: float = 1.0

    def __post_init__(self) -> None:
        if not (self.H0 > 0 and math.isfinite(self.H0)):
            raise ValueError(f"H0 must be positive and finite, got {self.H0!r}")
        if not (math.isfinite(self.q0) and math.isfinite(self.j0)):
            raise ValueError("q0 and j0 must be finite")


@dataclass(frozen=True)
class GalaxyRecord:
    """One observed galaxy.

    ``d`` is derived from ``cz`` by :func:`luminosity_distance`; use
    :meth:`from_observables` to keep the two consistent.
    """

    cz: float
    m_tilde: float
    w_tilde: float
    d: float
    sigma_em: float | None = None
    sigma_ew: float | None = None

    def __post_init__(self) -> None:
        if not self.cz > 0:
            raise ValueError(f"cz must be positive, got {self.cz!r}")
        for name in ("sigma_em", "sigma_ew"):
            val = getattr(self, name)
            if val is not None and not val >= 0:
                raise ValueError(f"{name} must be >= 0, got {val!r}")

    @classmethod
    def from_observables(
        cls,
        cz: float,
        m_tilde: float,
        w_tilde: float,
        cosmo: Cosmology | None = None,
        sigma_em: float | None = None,
        sigma_ew: float | None = None,
    ) -> "GalaxyRecord":
        d = distance_parameter(cz, cosmo or Cosmology())
        return cls(float(cz), float(m_tilde), float(w_tilde), float(d), sigma_em, sigma_ew)


class ParamName(str, Enum):
    BETA = "beta"
    GAMMA = "gamma"
    SIGMA_M = "sigma_m"
    SIGMA_W = "sigma_w"
    V_STAR = "v_star"
    ALPHA = "alpha"


@dataclass(frozen=True)
class ModelParams:
    """Parameter vector of the Tully-Fisher population model.

    Parameters
    ----------
    beta, gamma : float
        Slope and intercept of the relation (intercept at ``w - i = 0``).
    sigma_m, sigma_w : float
        Gaussian dispersions of the mass and of the width, in dex. When a
        catalog carries per-source errors these are the intrinsic parts and
        are combined with the errors in quadrature at likelihood time.
    v_star, alpha : float
        Characteristic velocity parameter and faint-end slope of the
        velocity Schechter function. The mass function uses
        ``M_star = v_star + gamma``.
    """

    beta: float
    gamma: float
    sigma_m: float = 0.0
    sigma_w: float = 0.0
    v_star: float = 0.3
    alpha: float = -1.27

    def __post_init__(self) -> None:
        for f in fields(self):
            if not math.isfinite(getattr(self, f.name)):
                raise ValueError(f"{f.name} must be finite")
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta!r}")
        if self.sigma_m < 0 or self.sigma_w < 0:
            raise ValueError("dispersions must be non-negative")

    @property
    def M_star(self) -> float:
        return self.v_star + self.gamma

    def as_dict(self) -> dict[str, float]:
        return asdict(self)

    def replace(self, **changes: float) -> "ModelParams":
        return replace(self, **changes)

    def __iter__(self) -> Iterator[float]:
        return iter(asdict(self).values())


class SelectionKind(str, Enum):
    STEP = "step"
    NONE = "none"


@dataclass(frozen=True)
class SelectionSpec:
    """Observational selection: a step at the apparent log-mass ``m_l`` or nothing.

    Records with ``m_tilde == m_l`` are inside the sample (closed set).
    """

    kind: SelectionKind = SelectionKind.STEP
    m_l: float = 5.736

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", SelectionKind(self.kind))
        if self.kind is SelectionKind.STEP and not math.isfinite(self.m_l):
            raise ValueError("step selection needs a finite m_l")

    @classmethod
    def none(cls) -> "SelectionSpec":
        return cls(SelectionKind.NONE, -math.inf)

    @property
    def is_step(self) -> bool:
        return self.kind is SelectionKind.STEP

    def passes(self, m_tilde):
        m_tilde = np.asarray(m_tilde)
        if not self.is_step:
            return np.ones(m_tilde.shape, dtype=bool)
        return m_tilde >= self.m_l


@dataclass(frozen=True)
class RawPhotometry:
    """Raw observables entering the apparent baryonic mass.

    Parameters
    ----------
    S21 : float
        Integrated 21-cm flux in Jy km/s.
    m_lambda : float
        Apparent magnitude of the stellar light.
    M_sun_lambda : float
        Absolute magnitude of the Sun in the same band.
    ML : float
        Stellar mass-to-light ratio in solar units.
    Kg : float
        Multiplier converting HI mass to total gas mass.
    """

    S21: float
    m_lambda: float
    M_sun_lambda: float
    ML: float
    Kg: float = 1.33

    def __post_init__(self) -> None:
        if not self.S21 >= 0:
            raise ValueError("S21 must be >= 0")
        if not self.ML > 0:
            raise ValueError("ML must be > 0")
        if not self.Kg >= 1:
            raise ValueError("Kg must be >= 1")


# --------------------------------------------------------------------------
# Transforms
# --------------------------------------------------------------------------


def luminosity_distance(cz, cosmo: Cosmology | None = None):
    """Luminosity distance from a second-order expansion in redshift.

    ``D_L = (cz/H0) [1 + (1-q0) z/2 - (1 - q0 - 3 q0^2 + j0) z^2 / 6]``

    Parameters
    ----------
    cz : float or array_like
        Redshift times the speed of light, km/s. Must be positive.
    cosmo : Cosmology, optional
        Defaults to ``Cosmology()``.

    Returns
    -------
    float or ndarray
        Distance in Mpc.

    Warns
    -----
    UserWarning
        When ``z >= 0.1``, where the expansion loses accuracy.
    """
    cosmo = cosmo or Cosmology()
    cz_arr = np.asarray(cz, dtype=float)
    if np.any(~(cz_arr > 0)):
        raise ValueError("cz must be positive")
    z = cz_arr / C_KMS
    if np.any(z >= 0.1):
        warnings.warn("redshift z >= 0.1: distance expansion is outside its validity domain",
                      stacklevel=2)
    q0, j0 = cosmo.q0, cosmo.j0
    c1 = 0.5 * (1.0 - q0)
    c2 = (1.0 - q0 - 3.0 * q0 * q0 + j0) / 6.0
    out = (cz_arr / cosmo.H0) * (1.0 + z * (c1 - c2 * z))
    return float(out) if np.ndim(out) == 0 else out


def distance_parameter(cz, cosmo: Cosmology | None = None):
    """``d = 2 log10 D_L`` for redshift(s) ``cz``."""
    return 2.0 * np.log10(luminosity_distance(cz, cosmo))


def to_shorthands(D_L, W, inc_deg):
    """Convert distance, width and inclination to ``(d, w, i)``.

    Parameters
    ----------
    D_L : float or array_like
        Luminosity distance in Mpc.
    W : float or array_like
        Velocity width in km/s.
    inc_deg : float or array_like
        Inclination in degrees, ``0 < inc <= 90``.
    """
    D_L = np.asarray(D_L, dtype=float)
    W = np.asarray(W, dtype=float)
    inc = np.asarray(inc_deg, dtype=float)
    if np.any(~(D_L > 0)) or np.any(~(W > 0)):
        raise ValueError("D_L and W must be positive")
    if np.any(~((inc > 0) & (inc <= 90))):
        raise ValueError("inclination must lie in (0, 90] degrees")
    d = 2.0 * np.log10(D_L)
    w = np.log10(W) - 2.5
    i = np.minimum(np.log10(np.sin(np.deg2rad(inc))), 0.0)
    if d.ndim == w.ndim == i.ndim == 0:
        return float(d), float(w), float(i)
    return d, w, i


def apparent_baryonic_mass(phot: RawPhotometry) -> float:
    """Apparent baryonic mass (gas plus stars) in linear units.

    The gas term is ``2.356e5 Kg S21``. The stellar term converts the apparent
    magnitude to a solar-luminosity flux at 10 pc and scales by ``ML``.
    Multiply by ``D_L^2`` (Mpc) to obtain the physical mass.
    """
    gas = 2.356e5 * phot.Kg * phot.S21
    stars = 10.0 ** (-0.4 * (phot.m_lambda - phot.M_sun_lambda - 25.0)) * phot.ML
    return gas + stars


def tfr_predict(w_minus_i, params: ModelParams):
    """Mass side of the relation, ``m + d = beta (w - i) + gamma``."""
    return params.beta * np.asarray(w_minus_i, dtype=float) + params.gamma


def tfr_invert(m_plus_d, params: ModelParams):
    """Width side of the relation, ``w - i = (m + d - gamma) / beta``."""
    if params.beta == 0:
        raise ZeroDivisionError("beta must be non-zero to invert the relation")
    return (np.asarray(m_plus_d, dtype=float) - params.gamma) / params.beta


# --------------------------------------------------------------------------
# Densities
# --------------------------------------------------------------------------


def inclination_prior_pdf(i):
    """Density of ``i = log10 sin(inc)`` for isotropically oriented disks.

    ``p(i) = ln10 10^{2i} / sqrt(1 - 10^{2i})`` for ``i <= 0``. The density
    diverges (integrably) at ``i = 0``, where ``inf`` is returned.
    """
    i = np.asarray(i, dtype=float)
    if np.any(i > 0):
        raise ValueError("i = log10 sin(inc) must be <= 0")
    with np.errstate(divide="ignore"):
        s2 = np.exp(2.0 * LN10 * i)
        out = LN10 * s2 / np.sqrt(0.0 - np.expm1(2.0 * LN10 * i))
    return float(out) if out.ndim == 0 else out


def inclination_prior_cdf(i):
    """``P(log10 sin(inc) <= i) = 1 - sqrt(1 - 10^{2i})``."""
    i = np.asarray(i, dtype=float)
    if np.any(i > 0):
        raise ValueError("i must be <= 0")
    out = 1.0 - np.sqrt(-np.expm1(2.0 * LN10 * i))
    return float(out) if out.ndim == 0 else out


def schechter_shape(u, alpha: float):
    """Unnormalized Schechter shape ``10^{(alpha+1) u} exp(-10^u)`` in ``u = x - x_star``."""
    u = np.asarray(u, dtype=float)
    return np.exp((alpha + 1.0) * LN10 * u - np.power(10.0, u))


def _check_support(support) -> tuple[float, float]:
    lo, hi = float(support[0]), float(support[1])
    if not hi > lo:
        raise ValueError(f"empty or inverted Schechter support {support!r}")
    return lo, hi


@lru_cache(maxsize=4096)
def _schechter_norm_cached(alpha: float, lo: float, hi: float) -> float:
    val, _ = integrate.quad(lambda u: float(schechter_shape(u, alpha)), lo, hi,
                            epsabs=0.0, epsrel=1e-13, limit=200)
    return 1.0 / val


def schechter_norm(alpha: float, support=SCHECHTER_SUPPORT) -> float:
    """Normalization ``phi_star`` making the shape integrate to one over ``support``."""
    lo, hi = _check_support(support)
    return _schechter_norm_cached(float(alpha), lo, hi)


def schechter_mass_pdf(m_plus_d, M_star: float, alpha: float, support=SCHECHTER_SUPPORT):
    """Mass function of ``m + d`` normalized over the truncated support."""
    lo, hi = _check_support(support)
    u = np.asarray(m_plus_d, dtype=float) - M_star
    inside = (u > lo) & (u < hi)
    out = np.where(inside, schechter_norm(alpha, (lo, hi)) * schechter_shape(u, alpha), 0.0)
    return float(out) if out.ndim == 0 else out


def schechter_velocity_pdf(w_minus_i, v_star: float, alpha: float, beta: float,
                           support=SCHECHTER_SUPPORT):
    """Velocity function of ``w - i``; carries the Jacobian ``beta`` of ``m + d = beta (w - i) + gamma``."""
    lo, hi = _check_support(support)
    u = beta * np.asarray(w_minus_i, dtype=float) - v_star
    inside = (u > lo) & (u < hi)
    out = np.where(inside, beta * schechter_norm(alpha, (lo, hi)) * schechter_shape(u, alpha), 0.0)
    return float(out) if out.ndim == 0 else out
