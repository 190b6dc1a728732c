"""Array-backed galaxy catalogs and their CSV encoding.

The CSV stores raw observables only::

    id,cz,logW,m_app[,sigma_em,sigma_ew]

with 17 significant digits. ``w_tilde = logW - 2.5`` and ``d`` are derived at
load time, so writing and reading a catalog reproduces it exactly.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from tfrlatent.core import Cosmology, GalaxyRecord, distance_parameter

LOGW_ANCHOR = 2.5
_BASE_COLUMNS = ("id", "cz", "logW", "m_app")
_ERROR_COLUMNS = ("sigma_em", "sigma_ew")


class CatalogFormatError(ValueError):
    """Raised for malformed catalog files."""


def _fmt(x: float) -> str:
    return "%.17g" % x


@dataclass(eq=False)
class Catalog:
    """A set of galaxies stored column-wise.

    Parameters
    ----------
    cz : ndarray
        Redshift times c, km/s.
    log_w : ndarray
        log10 of the observed (projected) width in km/s.
    m_tilde : ndarray
        Observed log10 apparent baryonic mass.
    ids : ndarray of int, optional
    sigma_em, sigma_ew : ndarray, optional
        Per-source measurement errors in dex.
    cosmo : Cosmology
        Used to derive the distance parameter ``d``.
    """

    cz: np.ndarray
    log_w: np.ndarray
    m_tilde: np.ndarray
    ids: np.ndarray | None = None
    sigma_em: np.ndarray | None = None
    sigma_ew: np.ndarray | None = None
    cosmo: Cosmology = field(default_factory=Cosmology)

    def __post_init__(self) -> None:
        self.cz = np.ascontiguousarray(self.cz, dtype=float)
        self.log_w = np.ascontiguousarray(self.log_w, dtype=float)
        self.m_tilde = np.ascontiguousarray(self.m_tilde, dtype=float)
        n = self.cz.shape[0]
        if self.cz.ndim != 1 or self.log_w.shape != (n,) or self.m_tilde.shape != (n,):
            raise ValueError("cz, log_w and m_tilde must be 1-D arrays of equal length")
        if np.any(~(self.cz > 0)):
            raise ValueError("cz must be positive")
        self.ids = (np.arange(n, dtype=np.int64) if self.ids is None
                    else np.ascontiguousarray(self.ids, dtype=np.int64))
        if (self.sigma_em is None) != (self.sigma_ew is None):
            raise ValueError("provide both error columns or neither")
        if self.sigma_em is not None:
            self.sigma_em = np.ascontiguousarray(self.sigma_em, dtype=float)
            self.sigma_ew = np.ascontiguousarray(self.sigma_ew, dtype=float)
            if np.any(~(self.sigma_em >= 0)) or np.any(~(self.sigma_ew >= 0)):
                raise ValueError("measurement errors must be >= 0")
        self.d = distance_parameter(self.cz, self.cosmo) if n else np.empty(0)
        self.d = np.atleast_1d(np.asarray(self.d, dtype=float))

    # ------------------------------------------------------------------
    @property
    def w_tilde(self) -> np.ndarray:
        return self.log_w - LOGW_ANCHOR

    @property
    def has_errors(self) -> bool:
        return self.sigma_em is not None

    def __len__(self) -> int:
        return int(self.cz.shape[0])

    def records(self) -> list[GalaxyRecord]:
        w = self.w_tilde
        out = []
        for k in range(len(self)):
            em = float(self.sigma_em[k]) if self.has_errors else None
            ew = float(self.sigma_ew[k]) if self.has_errors else None
            out.append(GalaxyRecord(float(self.cz[k]), float(self.m_tilde[k]), float(w[k]),
                                    float(self.d[k]), em, ew))
        return out

    @classmethod
    def from_records(cls, records, cosmo: Cosmology | None = None) -> "Catalog":
        records = list(records)
        has_err = bool(records) and records[0].sigma_em is not None
        return cls(
            cz=np.array([r.cz for r in records], dtype=float),
            log_w=np.array([r.w_tilde + LOGW_ANCHOR for r in records], dtype=float),
            m_tilde=np.array([r.m_tilde for r in records], dtype=float),
            sigma_em=np.array([r.sigma_em for r in records], dtype=float) if has_err else None,
            sigma_ew=np.array([r.sigma_ew for r in records], dtype=float) if has_err else None,
            cosmo=cosmo or Cosmology(),
        )

    def take(self, index) -> "Catalog":
        index = np.asarray(index)
        return Catalog(
            self.cz[index], self.log_w[index], self.m_tilde[index], self.ids[index],
            None if self.sigma_em is None else self.sigma_em[index],
            None if self.sigma_ew is None else self.sigma_ew[index],
            self.cosmo,
        )

    def with_widths(self, w_tilde) -> "Catalog":
        """Copy with the projected widths replaced (used by the debias loop)."""
        return Catalog(self.cz, np.asarray(w_tilde, dtype=float) + LOGW_ANCHOR, self.m_tilde,
                       self.ids, self.sigma_em, self.sigma_ew, self.cosmo)

    def equals(self, other: "Catalog") -> bool:
        """Exact (bitwise) equality of every stored and derived column."""
        def same(a, b):
            if a is None or b is None:
                return a is None and b is None
            return a.shape == b.shape and bool(np.all(a.view(np.uint64) == b.view(np.uint64))
                                               if a.dtype == float else np.array_equal(a, b))
        return (same(self.cz, other.cz) and same(self.log_w, other.log_w)
                and same(self.m_tilde, other.m_tilde) and np.array_equal(self.ids, other.ids)
                and same(self.sigma_em, other.sigma_em) and same(self.sigma_ew, other.sigma_ew)
                and same(self.d, other.d) and self.cosmo == other.cosmo)

    # ------------------------------------------------------------------
    def to_csv_text(self) -> str:
        buf = io.StringIO()
        header = list(_BASE_COLUMNS) + (list(_ERROR_COLUMNS) if self.has_errors else [])
        buf.write(",".join(header) + "\n")
        for k in range(len(self)):
            row = [str(int(self.ids[k])), _fmt(self.cz[k]), _fmt(self.log_w[k]),
                   _fmt(self.m_tilde[k])]
            if self.has_errors:
                row += [_fmt(self.sigma_em[k]), _fmt(self.sigma_ew[k])]
            buf.write(",".join(row) + "\n")
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv_text())

    @classmethod
    def read_csv(cls, path, cosmo: Cosmology | None = None) -> "Catalog":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"catalog not found: {path}")
        with path.open(newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise CatalogFormatError(f"{path}: empty file") from None
            header = [h.strip() for h in header]
            if tuple(header) not in (_BASE_COLUMNS, _BASE_COLUMNS + _ERROR_COLUMNS):
                raise CatalogFormatError(
                    f"{path}: header must be {','.join(_BASE_COLUMNS)}[,sigma_em,sigma_ew], "
                    f"got {','.join(header)}")
            rows = [r for r in reader if r]
        ncol = len(header)
        if any(len(r) != ncol for r in rows):
            raise CatalogFormatError(f"{path}: ragged rows")
        try:
            ids = np.array([int(r[0]) for r in rows], dtype=np.int64)
            vals = np.array([[float(x) for x in r[1:]] for r in rows], dtype=float)
        except ValueError as exc:
            raise CatalogFormatError(f"{path}: {exc}") from None
        vals = vals.reshape(len(rows), ncol - 1)
        err = ncol == 6
        return cls(vals[:, 0], vals[:, 1], vals[:, 2], ids,
                   vals[:, 3] if err else None, vals[:, 4] if err else None,
                   cosmo or Cosmology())
