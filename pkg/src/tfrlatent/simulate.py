"""Mock flux-limited catalogs with known ground truth.

The redshift range is cut into cells of width ``delta_cz``. A cell centred on
``cz0`` receives ``N0 = a cz0^(2+n) delta_cz`` galaxies, rounded
stochastically. Each galaxy gets

* an edge-on width ``v`` drawn from the velocity Schechter function,
* a mass ``M = beta v + gamma`` and an apparent mass
  ``m_tilde = M - d(cz0) + N(0, sigma_m^2)``,
* an isotropic inclination (``cos inc`` uniform) and a projected width
  ``w_tilde = v + log10 sin(inc) + N(0, sigma_w^2)``,

and the selection is applied last. Every cell draws from its own Philox
stream keyed by ``(seed, cell index)``, so catalogs do not depend on how the
cells are scheduled.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy import integrate

from tfrlatent.catalog import LOGW_ANCHOR, Catalog
from tfrlatent.core import (
    LN10,
    SCHECHTER_SUPPORT,
    Cosmology,
    GalaxyRecord,
    ModelParams,
    SelectionSpec,
    distance_parameter,
    schechter_shape,
)

log = logging.getLogger(__name__)

_CDF_POINTS = 200_001


@dataclass(frozen=True)
class SimConfig:
    """Recipe for one mock catalog.

    Parameters
    ----------
    params : ModelParams
        Ground truth.
    cz_min, cz_max, delta_cz : float
        Redshift range and cell width, km/s.
    scale_a : float
        Sampling scale factor ``a``; see :func:`tune_scale_a`.
    density_n : float
        Power-law index of the integrated volume density (``N0 ~ cz^(2+n)``).
    selection : SelectionSpec
    seed : int
    sigma_cz : float
        Redshift noise, km/s. Only ``0`` is supported.
    cosmo : Cosmology
    error_columns : (float, float) or None
        Constant ``(sigma_em, sigma_ew)`` columns written to the catalog.
    edge_on : bool
        Test hook: force every inclination to 90 degrees.
    """

    params: ModelParams
    cz_min: float = 4000.0
    cz_max: float = 18000.0
    delta_cz: float = 100.0
    scale_a: float = 1.3546e-3
    density_n: float = -1.0
    selection: SelectionSpec = field(default_factory=SelectionSpec)
    seed: int = 0
    sigma_cz: float = 0.0
    cosmo: Cosmology = field(default_factory=Cosmology)
    error_columns: tuple[float, float] | None = None
    edge_on: bool = False

    def __post_init__(self) -> None:
        if not self.cz_min < self.cz_max:
            raise ValueError("cz_min must be below cz_max")
        if not self.cz_min > 0:
            raise ValueError("cz_min must be positive")
        if not self.delta_cz > 0:
            raise ValueError("delta_cz must be positive")
        if not self.scale_a > 0:
            raise ValueError("scale_a must be positive")
        if self.sigma_cz != 0:
            raise ValueError("redshift noise (sigma_cz != 0) is not supported")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.error_columns is not None and min(self.error_columns) < 0:
            raise ValueError("error columns must be >= 0")

    @property
    def n_cells(self) -> int:
        return int(math.ceil((self.cz_max - self.cz_min) / self.delta_cz - 1e-9))

    def cell_centers(self) -> np.ndarray:
        return self.cz_min + (np.arange(self.n_cells) + 0.5) * self.delta_cz

    def expected_counts(self) -> np.ndarray:
        cz0 = self.cell_centers()
        return self.scale_a * cz0 ** (2.0 + self.density_n) * self.delta_cz

    def replace(self, **changes) -> "SimConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["selection"] = {"kind": self.selection.kind.value, "m_l": self.selection.m_l}
        return out


@dataclass
class MockCatalog:
    """Simulated catalog plus its ground truth and recipe."""

    catalog: Catalog
    truth: ModelParams
    provenance: SimConfig
    pre_selection_count: int

    @property
    def records(self) -> list[GalaxyRecord]:
        return self.catalog.records()

    @property
    def status(self) -> str:
        return "ok" if len(self.catalog) else "empty"

    def __len__(self) -> int:
        return len(self.catalog)


# --------------------------------------------------------------------------
# Samplers
# --------------------------------------------------------------------------


def sample_inclinations(n: int, rng: np.random.Generator) -> np.ndarray:
    """``i = log10 sin(inc)`` for ``n`` isotropically oriented disks (``cos inc`` uniform)."""
    if n < 0:
        raise ValueError("n must be >= 0")
    c = rng.random(n)
    return np.log1p(-c * c) / (2.0 * LN10)


@lru_cache(maxsize=64)
def _schechter_cdf_table(alpha: float) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = SCHECHTER_SUPPORT
    u = np.linspace(lo, hi, _CDF_POINTS)
    cdf = integrate.cumulative_simpson(schechter_shape(u, alpha), x=u, initial=0.0)
    cdf /= cdf[-1]
    cdf = np.maximum.accumulate(cdf)
    u.flags.writeable = False
    cdf.flags.writeable = False
    return u, cdf


def schechter_reduced_cdf(u, alpha: float) -> np.ndarray:
    """Tabulated CDF of ``u = beta v - v_star`` under the truncated Schechter function."""
    grid, cdf = _schechter_cdf_table(float(alpha))
    return np.interp(u, grid, cdf)


def sample_schechter_velocities(n: int, v_star: float, alpha: float, beta: float,
                                rng: np.random.Generator) -> np.ndarray:
    """Edge-on widths ``v`` from the truncated velocity Schechter function.

    Inverse-transform sampling: uniforms are mapped through the inverse of a
    tabulated CDF of ``u = beta v - v_star`` (piecewise linear, so monotone).
    """
    grid, cdf = _schechter_cdf_table(float(alpha))
    u = np.interp(rng.random(n), cdf, grid)
    return (u + v_star) / beta


# --------------------------------------------------------------------------
# Catalog generation
# --------------------------------------------------------------------------


def _cell_rng(seed: int, cell: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(cell)])))


def _simulate_cell(config: SimConfig, cell: int, cz0: float, n_expected: float):
    rng = _cell_rng(config.seed, cell)
    n = int(math.floor(n_expected))
    n += int(rng.random() < n_expected - n)
    p = config.params
    v = sample_schechter_velocities(n, p.v_star, p.alpha, p.beta, rng)
    M = p.beta * v + p.gamma
    d = distance_parameter(cz0, config.cosmo)
    m_tilde = M - d + (rng.normal(0.0, p.sigma_m, n) if p.sigma_m > 0 else 0.0)
    i = np.zeros(n) if config.edge_on else sample_inclinations(n, rng)
    w_tilde = v + i + (rng.normal(0.0, p.sigma_w, n) if p.sigma_w > 0 else 0.0)
    keep = config.selection.passes(m_tilde)
    return n, m_tilde[keep], w_tilde[keep] + LOGW_ANCHOR


def simulate(config: SimConfig, threads: int = 1) -> MockCatalog:
    """Generate a mock catalog following ``config``.

    Parameters
    ----------
    config : SimConfig
    threads : int
        Worker threads; the result does not depend on this value.
    """
    centers = config.cell_centers()
    expected = config.expected_counts()
    jobs = [(config, k, float(centers[k]), float(expected[k])) for k in range(len(centers))]
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(lambda a: _simulate_cell(*a), jobs))
    else:
        results = [_simulate_cell(*a) for a in jobs]
    pre = sum(r[0] for r in results)
    cz = np.concatenate([np.full(r[1].shape[0], centers[k]) for k, r in enumerate(results)])
    m_tilde = np.concatenate([r[1] for r in results])
    log_w = np.concatenate([r[2] for r in results])
    n = cz.shape[0]
    errs = config.error_columns
    catalog = Catalog(cz, log_w, m_tilde,
                      sigma_em=None if errs is None else np.full(n, float(errs[0])),
                      sigma_ew=None if errs is None else np.full(n, float(errs[1])),
                      cosmo=config.cosmo)
    if n == 0:
        log.warning("all %d simulated galaxies were censored", pre)
    return MockCatalog(catalog, config.params, config, pre)


def tune_scale_a(config: SimConfig, target: int, iterations: int = 2) -> float:
    """Rescale ``scale_a`` so that the selected catalog has about ``target`` records.

    Each iteration runs a pilot simulation and rescales ``a`` by
    ``target / survivors``; the expected count is linear in ``a``.
    """
    if target <= 0:
        raise ValueError("target must be positive")
    a = config.scale_a
    for _ in range(iterations):
        n = len(simulate(config.replace(scale_a=a)))
        if n == 0:
            raise RuntimeError("pilot simulation produced no survivors; raise scale_a")
        a *= target / n
    return a
