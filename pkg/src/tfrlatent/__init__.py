"""Latent-inclination Bayesian inference of the baryonic Tully-Fisher relation.

The package evaluates forward, inverse and dual-scatter likelihoods in which
the disk inclination of every galaxy is an unobserved variable marginalized
against its geometric prior, simulates flux-limited mock catalogs, samples
posteriors with an affine-invariant ensemble sampler and provides the
closed-form bias calculators and debiasing procedures built around them.
"""

from tfrlatent.core import (
    C_KMS,
    Cosmology,
    GalaxyRecord,
    ModelParams,
    RawPhotometry,
    SelectionSpec,
    apparent_baryonic_mass,
    inclination_prior_cdf,
    inclination_prior_pdf,
    luminosity_distance,
    schechter_mass_pdf,
    schechter_norm,
    schechter_velocity_pdf,
    tfr_invert,
    tfr_predict,
    to_shorthands,
)
from tfrlatent.catalog import Catalog

__version__ = "0.1.0"

__all__ = [
    "C_KMS",
    "Catalog",
    "Cosmology",
    "GalaxyRecord",
    "ModelParams",
    "RawPhotometry",
    "SelectionSpec",
    "apparent_baryonic_mass",
    "inclination_prior_cdf",
    "inclination_prior_pdf",
    "luminosity_distance",
    "schechter_mass_pdf",
    "schechter_norm",
    "schechter_velocity_pdf",
    "tfr_invert",
    "tfr_predict",
    "to_shorthands",
    "__version__",
]
