"""Conditional densities and log-likelihoods of the latent-inclination models.

Three models are supported:

forward
    ``p(m_tilde | w, d)``: the width is error-free, the mass scatters with
    ``sigma_m`` and the sample is cut at ``m_tilde >= m_l``.
inverse
    ``p(w_tilde | m, d)``: the mass is error-free, the width scatters with
    ``sigma_w``. A selection on mass does not enter.
dual
    ``p(m_tilde | w_tilde, d)`` with scatter in both variables; the latent
    edge-on width is integrated against the velocity function.

Every density integrates the inclination ``i`` against its prior, truncated at
``inc_min`` (1 degree by default) and renormalized. All models share a uniform
lattice in ``t = -i``; the dual model folds the width Gaussian into the
lattice weights with one FFT convolution per parameter vector, after which it
costs the same as the forward model.

Besides the production kernels, three reference evaluations are provided for
the dual model: the per-record FFT convolution, the direct double sum, and the
factorization that integrates the mass Gaussian against the mass function
(starting from the inverse model). All four evaluate the same discrete sum.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import special

from tfrlatent import _kernels
from tfrlatent.catalog import Catalog
from tfrlatent.core import (
    SCHECHTER_SUPPORT,
    ModelParams,
    SelectionSpec,
    schechter_norm,
    schechter_shape,
    schechter_velocity_pdf,
)
from tfrlatent.numerics import (
    DEFAULT_INC_MIN_DEG,
    DEFAULT_N_NODES,
    GridSpec,
    InclinationRule,
    build_grids,
    fft_convolve,
    gaussian_offsets,
    inclination_rule,
)

log = logging.getLogger(__name__)

#: Gaussians are truncated at this many standard deviations.
NSIG = 9.0
#: Densities below this floor are treated as zero.
DENSITY_FLOOR = 1e-300
#: Log-density assigned to a zero-density record.
LOG_FLOOR = -690.0


class ModelKind(str, Enum):
    FORWARD = "forward"
    INVERSE = "inverse"
    DUAL = "dual"

    @property
    def free_params(self) -> tuple[str, ...]:
        return _FREE[self]

    @classmethod
    def parse(cls, name: "str | ModelKind") -> "ModelKind":
        if isinstance(name, ModelKind):
            return name
        key = str(name).strip().lower().replace("_", "-")
        aliases = {"dual-scatter": "dual", "dualscatter": "dual", "bidirectional": "dual"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            valid = ", ".join(k.value for k in cls)
            raise ValueError(f"unknown model kind {name!r}; valid kinds: {valid}") from None


_FREE = {
    ModelKind.FORWARD: ("beta", "gamma", "sigma_m", "v_star", "alpha"),
    ModelKind.INVERSE: ("beta", "gamma", "sigma_w"),
    ModelKind.DUAL: ("beta", "gamma", "sigma_m", "sigma_w", "v_star", "alpha"),
}


def params_from_vector(kind: ModelKind, vec, base: ModelParams | None = None) -> ModelParams:
    """Map a free-parameter vector onto :class:`ModelParams` (other fields from ``base``)."""
    kind = ModelKind.parse(kind)
    base = base or ModelParams(beta=3.33, gamma=10.5)
    return base.replace(**{k: float(v) for k, v in zip(kind.free_params, vec)})


def params_to_vector(kind: ModelKind, params: ModelParams) -> np.ndarray:
    kind = ModelKind.parse(kind)
    return np.array([getattr(params, k) for k in kind.free_params])


# --------------------------------------------------------------------------
# Helpers
# --------------------------------------------------------------------------


def _as1d(*arrays):
    out = np.broadcast_arrays(*[np.atleast_1d(np.asarray(a, dtype=float)) for a in arrays])
    return [np.ascontiguousarray(a) for a in out]


def _total_sigma(sigma: float, extra) -> np.ndarray | float:
    if extra is None:
        return sigma
    return np.sqrt(sigma * sigma + np.asarray(extra, dtype=float) ** 2)


def _schechter_table(params: ModelParams, h: float):
    dz = params.beta * h / _kernels.SCHECHTER_SUBSTEPS
    return _kernels.schechter_table(params.alpha, dz), dz


def _forward_kernel(w, y, d, sig, K, m0, h, params: ModelParams, selection: SelectionSpec):
    stab, dz = _schechter_table(params, h)
    num = np.empty_like(w)
    den = np.empty_like(w)
    _kernels.forward_ratio(
        w, y, d, sig, np.ascontiguousarray(K, dtype=float), int(m0), h,
        params.beta, params.gamma, params.v_star,
        selection.m_l if selection.is_step else 0.0, selection.is_step,
        stab, SCHECHTER_SUPPORT[0], dz, SCHECHTER_SUPPORT[1],
        _kernels.PHI_TABLE, _kernels.PHI_LIM, float(_kernels.PHI_STEPS_PER_UNIT), NSIG,
        num, den)
    return num, den


def _ratio(num, den):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)


def _check_sigma(name: str, sig) -> None:
    if np.any(~(np.asarray(sig) > 0)):
        raise ValueError(f"{name} must be positive for this model")


def _gauss(r, s):
    return np.exp(-0.5 * (r / s) ** 2) / (math.sqrt(2.0 * math.pi) * s)


def cell_fraction(z, dz: float, support=SCHECHTER_SUPPORT):
    """Fraction of the cell ``[z - dz/2, z + dz/2]`` inside the Schechter support."""
    lo, hi = support
    a = np.maximum(z - 0.5 * dz, lo)
    b = np.minimum(z + 0.5 * dz, hi)
    return np.clip((b - a) / dz, 0.0, 1.0)


def _lattice_shape(z, dz: float, alpha: float):
    """Normalized Schechter density in ``z`` with boundary cells weighted by their inside fraction."""
    lo, hi = SCHECHTER_SUPPORT
    zc = np.clip(z, lo, hi)
    return cell_fraction(z, dz) * schechter_norm(alpha) * schechter_shape(zc, alpha)


def _scalar_or_array(x, like):
    return float(x[0]) if np.ndim(like) == 0 and x.shape == (1,) else x


# --------------------------------------------------------------------------
# Forward model
# --------------------------------------------------------------------------


def conditional_pdf_forward(m_tilde, w, d, params: ModelParams,
                            selection: SelectionSpec | None = None, *,
                            n_nodes: int = DEFAULT_N_NODES,
                            inc_min_deg: float = DEFAULT_INC_MIN_DEG,
                            sigma_em=None, inclination=None, method: str = "kernel"):
    """Density of the observed mass given an error-free width.

    Parameters
    ----------
    m_tilde, w, d : float or array_like
        Observed log-mass, width (``log10 W - 2.5``) and distance parameter.
    params : ModelParams
        Uses ``beta, gamma, sigma_m, v_star, alpha``.
    selection : SelectionSpec, optional
        Defaults to a step at ``m_l = 5.736``.
    n_nodes, inc_min_deg : int, float
        Inclination lattice.
    sigma_em : array_like, optional
        Per-record mass errors, added to ``sigma_m`` in quadrature.
    inclination : (array_like, array_like), optional
        Explicit ``(i_nodes, weights)`` replacing the lattice rule (evaluated
        with exact special functions).
    method : {"kernel", "exact"}
        ``"exact"`` evaluates the same lattice sum with exact special
        functions instead of interpolation tables.

    Returns
    -------
    float or ndarray
        Density per unit ``m_tilde``; zero below the selection limit.
    """
    selection = selection or SelectionSpec()
    m_arr, w_arr, d_arr = _as1d(m_tilde, w, d)
    sig = np.broadcast_to(_total_sigma(params.sigma_m, sigma_em), m_arr.shape).astype(float)
    _check_sigma("sigma_m", sig)
    y = m_arr + d_arr
    if inclination is not None or method == "exact":
        if inclination is None:
            rule = inclination_rule(n_nodes, inc_min_deg)
            i_nodes, weights, h = rule.i, rule.weights, rule.spacing
        else:
            i_nodes, weights = (np.atleast_1d(np.asarray(a, dtype=float)) for a in inclination)
            h = None
        num, den = _forward_exact(y, w_arr, d_arr, sig, i_nodes, weights, h, params, selection)
    elif method == "kernel":
        rule = inclination_rule(n_nodes, inc_min_deg)
        num, den = _forward_kernel(w_arr, y, d_arr, np.ascontiguousarray(sig), rule.weights, 0,
                                   rule.spacing, params, selection)
    else:
        raise ValueError(f"unknown method {method!r}")
    out = _ratio(num, den)
    out = np.where(selection.passes(m_arr), out, 0.0)
    return _scalar_or_array(out, m_tilde)


def _forward_exact(y, w, d, sig, i_nodes, weights, h, params, selection):
    x = w[:, None] - i_nodes[None, :]
    if h is None:
        S = schechter_velocity_pdf(x, params.v_star, params.alpha, params.beta)
    else:
        S = params.beta * _lattice_shape(params.beta * x - params.v_star, params.beta * h,
                                         params.alpha)
    s = sig[:, None]
    num = np.sum(weights * S * _gauss(y[:, None] - params.gamma - params.beta * x, s), axis=1)
    if selection.is_step:
        E = special.ndtr((params.gamma + params.beta * x - selection.m_l - d[:, None]) / s)
        den = np.sum(weights * S * E, axis=1)
    else:
        den = np.sum(weights * S, axis=1)
    return num, den


# --------------------------------------------------------------------------
# Inverse model
# --------------------------------------------------------------------------


def conditional_pdf_inverse(w_tilde, m, d, params: ModelParams, *,
                            n_nodes: int = DEFAULT_N_NODES,
                            inc_min_deg: float = DEFAULT_INC_MIN_DEG,
                            sigma_ew=None, inclination=None):
    """Density of the observed width given an error-free mass.

    ``p(w_tilde | m, d) = int p(i) N(w_tilde - i - (m + d - gamma)/beta; sigma_w) di``,
    with the truncated prior renormalized to unit mass.
    """
    w_arr, m_arr, d_arr = _as1d(w_tilde, m, d)
    sig = np.ascontiguousarray(
        np.broadcast_to(_total_sigma(params.sigma_w, sigma_ew), w_arr.shape), dtype=float)
    _check_sigma("sigma_w", sig)
    x0 = (m_arr + d_arr - params.gamma) / params.beta
    if inclination is not None:
        i_nodes, weights = (np.atleast_1d(np.asarray(a, dtype=float)) for a in inclination)
        weights = weights / math.fsum(weights)
        out = np.sum(weights * _gauss(w_arr[:, None] - i_nodes[None, :] - x0[:, None],
                                      sig[:, None]), axis=1)
    else:
        rule = inclination_rule(n_nodes, inc_min_deg)
        out = np.empty_like(w_arr)
        _kernels.inverse_density(w_arr, x0, sig, rule.normalized_weights, rule.spacing, NSIG, out)
    return _scalar_or_array(out, w_tilde)


# --------------------------------------------------------------------------
# Dual-scatter model
# --------------------------------------------------------------------------


def _dual_weights(rule: InclinationRule, sigma_w: float) -> tuple[np.ndarray, int]:
    """Lattice weights of ``t + (w - w_tilde)``: inclination weights convolved with the width Gaussian."""
    c = gaussian_offsets(sigma_w, rule.spacing, NSIG)
    J = (c.shape[0] - 1) // 2
    # A direct sum keeps the far tails of K accurate to relative precision;
    # FFT roundoff there is absolute and dominates records that sit in them.
    K = np.convolve(rule.weights, c)
    return K, J


def conditional_pdf_dual(m_tilde, w_tilde, d, params: ModelParams,
                         selection: SelectionSpec | None = None, *,
                         n_nodes: int = DEFAULT_N_NODES,
                         inc_min_deg: float = DEFAULT_INC_MIN_DEG,
                         sigma_em=None, sigma_ew=None, method: str = "kernel"):
    """Density of the observed mass given the observed width, both scattered.

    Parameters
    ----------
    method : {"kernel", "fft", "direct", "mass-side"}
        ``kernel`` folds the width Gaussian into the lattice weights once and
        runs the compiled forward kernel. ``fft`` convolves, per record, the
        inclination weights with the sampled integrand over the latent width
        and integrates the result against the width Gaussian. ``direct`` is
        the plain double sum. ``mass-side`` integrates the mass Gaussian
        against the mass function, using the inverse-model density for the
        width. All four evaluate the same discrete sum.
    """
    selection = selection or SelectionSpec()
    m_arr, w_arr, d_arr = _as1d(m_tilde, w_tilde, d)
    sig_m = np.ascontiguousarray(
        np.broadcast_to(_total_sigma(params.sigma_m, sigma_em), m_arr.shape), dtype=float)
    sig_w = np.ascontiguousarray(
        np.broadcast_to(_total_sigma(params.sigma_w, sigma_ew), m_arr.shape), dtype=float)
    _check_sigma("sigma_m", sig_m)
    rule = inclination_rule(n_nodes, inc_min_deg)
    num = np.empty_like(m_arr)
    den = np.empty_like(m_arr)
    evaluator = {"kernel": _dual_kernel, "fft": _dual_fft, "direct": _dual_direct,
                 "mass-side": _dual_mass_side}.get(method)
    if evaluator is None:
        raise ValueError(f"unknown method {method!r}")
    for s_w in np.unique(sig_w):
        idx = np.flatnonzero(sig_w == s_w)
        n_, d_ = evaluator(m_arr[idx], w_arr[idx], d_arr[idx], sig_m[idx], float(s_w), rule,
                           params, selection)
        num[idx] = n_
        den[idx] = d_
    out = _ratio(num, den)
    out = np.where(selection.passes(m_arr), out, 0.0)
    return _scalar_or_array(out, m_tilde)


def _dual_kernel(m, w, d, sig_m, sig_w, rule, params, selection):
    K, J = _dual_weights(rule, sig_w)
    return _forward_kernel(w, m + d, d, sig_m, K, J, rule.spacing, params, selection)


def _integrand_on_lattice(x, y, d, s, h, params, selection):
    """Exact numerator/denominator integrands at latent edge-on widths ``x`` (lattice step ``h``)."""
    S = params.beta * _lattice_shape(params.beta * x - params.v_star, params.beta * h,
                                     params.alpha)
    g_num = S * _gauss(y - params.gamma - params.beta * x, s)
    if selection.is_step:
        g_den = S * special.ndtr((params.gamma + params.beta * x - selection.m_l - d) / s)
    else:
        g_den = S
    return g_num, g_den


def _dual_fft(m, w, d, sig_m, sig_w, rule, params, selection, batch: int = 256):
    h = rule.spacing
    n = rule.t.shape[0]
    c = gaussian_offsets(sig_w, h, NSIG)
    J = (c.shape[0] - 1) // 2
    f = (rule.weights / h)[::-1]  # ascending i: i_a = i_min + (a + 1/2) h
    b = np.arange(n + 2 * J)
    num = np.empty_like(m)
    den = np.empty_like(m)
    for lo in range(0, m.shape[0], batch):
        sl = slice(lo, lo + batch)
        x = w[sl, None] + (b[None, :] - J + 0.5) * h
        g_num, g_den = _integrand_on_lattice(x, (m + d)[sl, None], d[sl, None],
                                             sig_m[sl, None], h, params, selection)
        both = fft_convolve(f, np.concatenate([g_num, g_den], axis=0), h)
        # outputs at w_tilde + j h, j = -J..J, sit at indices n-1 .. n-1+2J
        valid = both[:, n - 1:n + 2 * J]
        res = valid @ c
        k = g_num.shape[0]
        num[sl] = res[:k]
        den[sl] = res[k:]
    return num, den


def _dual_direct(m, w, d, sig_m, sig_w, rule, params, selection):
    h = rule.spacing
    c = gaussian_offsets(sig_w, h, NSIG)
    J = (c.shape[0] - 1) // 2
    offs = np.arange(-J, J + 1) * h
    num = np.empty_like(m)
    den = np.empty_like(m)
    for r in range(m.shape[0]):
        x = w[r] + offs[:, None] + rule.t[None, :]
        g_num, g_den = _integrand_on_lattice(x, m[r] + d[r], d[r], sig_m[r], h, params,
                                             selection)
        num[r] = c @ (g_num @ rule.weights)
        den[r] = c @ (g_den @ rule.weights)
    return num, den


def _dual_mass_side(m, w, d, sig_m, sig_w, rule, params, selection):
    """Integrate over the true mass: mass function x mass Gaussian x inverse-model width density."""
    h = rule.spacing
    n = rule.t.shape[0]
    c = gaussian_offsets(sig_w, h, NSIG)
    J = (c.shape[0] - 1) // 2
    b = np.arange(n + 2 * J)
    beta, gamma = params.beta, params.gamma
    W = rule.weights
    num = np.empty_like(m)
    den = np.empty_like(m)
    for r in range(m.shape[0]):
        x = w[r] + (b - J + 0.5) * h
        m_true = gamma - d[r] + beta * x           # true apparent mass on an aligned lattice
        q = np.empty_like(x)
        sig = np.full_like(x, sig_w)
        if J > 0:
            # width density given the true mass, integrated over the width lattice cell
            _kernels.inverse_density(np.full_like(x, w[r]), x, sig, W, h, NSIG, q)
            q *= h
        else:
            q = W.copy()
        # mass function on mass cells of width beta h, per unit latent width (dm = beta dx)
        pm = _lattice_shape(m_true + d[r] - params.M_star, beta * h, params.alpha) * beta
        num[r] = np.sum(pm * q * _gauss(m[r] - m_true, sig_m[r]))
        if selection.is_step:
            den[r] = np.sum(pm * q * special.ndtr((m_true - selection.m_l) / sig_m[r]))
        else:
            den[r] = np.sum(pm * q)
    return num, den


# --------------------------------------------------------------------------
# Log-likelihood
# --------------------------------------------------------------------------


def log_terms(density) -> tuple[np.ndarray, int]:
    """Per-record log-densities with the zero-density floor; returns the number of floored records."""
    density = np.asarray(density, dtype=float)
    if np.any(np.isnan(density)):
        raise FloatingPointError("NaN density: likelihood grid misconfigured")
    bad = ~(density >= DENSITY_FLOOR)
    with np.errstate(divide="ignore"):
        terms = np.where(bad, LOG_FLOOR, np.log(np.where(bad, 1.0, density)))
    return terms, int(bad.sum())


@dataclass
class LikelihoodContext:
    """Catalog, selection and lattice for repeated likelihood evaluations.

    Parameters
    ----------
    catalog : Catalog
    kind : ModelKind or str
    selection : SelectionSpec, optional
    n_nodes : int
        Inclination lattice size (power of two).
    inc_min_deg : float
    method : str
        Dual-model evaluation path, see :func:`conditional_pdf_dual`.
    """

    catalog: Catalog
    kind: ModelKind
    selection: SelectionSpec = field(default_factory=SelectionSpec)
    n_nodes: int = DEFAULT_N_NODES
    inc_min_deg: float = DEFAULT_INC_MIN_DEG
    method: str = "kernel"
    grids: GridSpec = field(init=False)
    floored: int = field(init=False, default=0)

    def __post_init__(self) -> None:
        self.kind = ModelKind.parse(self.kind)
        if len(self.catalog) == 0:
            raise ValueError("catalog is empty")
        if self.kind is not ModelKind.INVERSE and not np.all(
                self.selection.passes(self.catalog.m_tilde)):
            raise ValueError("catalog contains records outside the selection")
        self.grids = build_grids(self.catalog.w_tilde, 0.1, self.n_nodes, self.inc_min_deg)
        self._w = np.ascontiguousarray(self.catalog.w_tilde)
        self._m = np.ascontiguousarray(self.catalog.m_tilde)
        self._d = np.ascontiguousarray(self.catalog.d)

    def densities(self, params: ModelParams) -> np.ndarray:
        cat = self.catalog
        kw = dict(n_nodes=self.n_nodes, inc_min_deg=self.inc_min_deg)
        if self.kind is ModelKind.FORWARD:
            return np.atleast_1d(conditional_pdf_forward(
                self._m, self._w, self._d, params, self.selection, sigma_em=cat.sigma_em, **kw))
        if self.kind is ModelKind.INVERSE:
            return np.atleast_1d(conditional_pdf_inverse(
                self._w, self._m, self._d, params, sigma_ew=cat.sigma_ew, **kw))
        return np.atleast_1d(conditional_pdf_dual(
            self._m, self._w, self._d, params, self.selection, sigma_em=cat.sigma_em,
            sigma_ew=cat.sigma_ew, method=self.method, **kw))

    def log_likelihood(self, params: ModelParams) -> float:
        terms, self.floored = log_terms(self.densities(params))
        if self.floored:
            log.debug("%d records at the zero-density floor", self.floored)
        return math.fsum(terms)

    __call__ = log_likelihood


def log_likelihood(ctx: LikelihoodContext, params: ModelParams) -> float:
    """Sum of per-record log conditional densities (compensated, order independent)."""
    return ctx.log_likelihood(params)
