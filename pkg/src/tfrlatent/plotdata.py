"""Tabular data behind corner, trace and relation-overlay plots.

Nothing here renders images. Each function returns plain arrays or rows and
the ``write_*`` helpers store them as CSV files.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from tfrlatent.catalog import Catalog

CREDIBLE_LEVELS = (0.68, 0.95)


@dataclass
class ChainTable:
    """Retained samples read back from a chain CSV (step-major, walkers fastest)."""

    names: tuple[str, ...]
    samples: np.ndarray
    log_post: np.ndarray
    n_walkers: int | None = None

    @classmethod
    def read(cls, csv_path, json_path=None) -> "ChainTable":
        csv_path = Path(csv_path)
        with csv_path.open(newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0][-1] != "log_post":
            raise ValueError(f"{csv_path}: not a chain CSV")
        data = np.array(rows[1:], dtype=float).reshape(-1, len(rows[0]))
        if json_path is None:
            guess = csv_path.with_suffix(".json")
            json_path = guess if guess.exists() else None
        n_walkers = None
        if json_path is not None:
            n_walkers = int(json.loads(Path(json_path).read_text())["n_walkers"])
        return cls(tuple(rows[0][:-1]), data[:, :-1], data[:, -1], n_walkers)


def credible_threshold(counts: np.ndarray, level: float) -> tuple[float, float]:
    """Smallest bin count ``t`` such that bins with ``count >= t`` hold at least ``level``.

    Returns ``(t, enclosed_fraction)``.
    """
    flat = np.sort(np.asarray(counts, dtype=float).ravel())[::-1]
    total = flat.sum()
    if total == 0:
        raise ValueError("empty histogram")
    cum = np.cumsum(flat) / total
    k = int(np.searchsorted(cum, level - 1e-12))
    t = flat[min(k, flat.size - 1)]
    enclosed = flat[flat >= t].sum() / total
    return float(t), float(enclosed)


def corner_data(table: ChainTable, bins: int = 40) -> dict:
    """Marginal and pairwise histograms plus 68/95 % highest-count levels."""
    x = table.samples
    edges = []
    marginals = []
    for j, name in enumerate(table.names):
        lo, hi = float(x[:, j].min()), float(x[:, j].max())
        if hi == lo:
            lo, hi = lo - 0.5, hi + 0.5
        e = np.linspace(lo, hi, bins + 1)
        counts, _ = np.histogram(x[:, j], bins=e)
        edges.append(e)
        marginals.append((name, e, counts))
    pairs = []
    levels = []
    for a in range(len(table.names)):
        for b in range(a + 1, len(table.names)):
            h, _, _ = np.histogram2d(x[:, a], x[:, b], bins=[edges[a], edges[b]])
            pairs.append((table.names[a], table.names[b], edges[a], edges[b], h))
            for lev in CREDIBLE_LEVELS:
                t, frac = credible_threshold(h, lev)
                levels.append((table.names[a], table.names[b], lev, t, frac))
    return {"marginals": marginals, "pairs": pairs, "levels": levels}


def trace_rows(table: ChainTable) -> list[tuple]:
    """``(step, walker, *params, log_post)`` for every retained sample."""
    nw = table.n_walkers or 1
    rows = []
    for k, (theta, lp) in enumerate(zip(table.samples, table.log_post)):
        rows.append((k // nw, k % nw, *theta, lp))
    return rows


def tfr_overlay(table: ChainTable, catalog: Catalog, n_grid: int = 101,
                max_draws: int = 2000) -> tuple[np.ndarray, np.ndarray]:
    """Data points and the posterior band of ``m + d = beta (w - i) + gamma``.

    Returns
    -------
    points : ndarray, shape (N, 2)
        ``(w_tilde, m_tilde + d)`` per record.
    band : ndarray, shape (n_grid, 4)
        ``(x, p16, p50, p84)`` of the predicted ``m + d`` at abscissa ``x``.
    """
    names = list(table.names)
    beta = table.samples[:, names.index("beta")]
    gamma = table.samples[:, names.index("gamma")]
    if beta.size > max_draws:
        idx = np.linspace(0, beta.size - 1, max_draws).round().astype(int)
        beta, gamma = beta[idx], gamma[idx]
    w = catalog.w_tilde
    xs = np.linspace(float(w.min()), float(w.max()), n_grid)
    pred = beta[:, None] * xs[None, :] + gamma[:, None]
    q = np.percentile(pred, [16.0, 50.0, 84.0], axis=0, method="linear")
    points = np.column_stack([w, catalog.m_tilde + catalog.d])
    return points, np.column_stack([xs, q.T])


def _write(path: Path, header, rows) -> Path:
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for r in rows:
            wr.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return path


def write_corner(table: ChainTable, out_dir, bins: int = 40) -> list[Path]:
    out_dir = Path(out_dir)
    data = corner_data(table, bins)
    marg = []
    for name, e, c in data["marginals"]:
        marg += [(name, e[k], e[k + 1], int(c[k])) for k in range(c.size)]
    pair = []
    for na, nb, ea, eb, h in data["pairs"]:
        for i in range(h.shape[0]):
            for j in range(h.shape[1]):
                pair.append((na, nb, ea[i], ea[i + 1], eb[j], eb[j + 1], int(h[i, j])))
    lev = [(a, b, lv, int(t), f) for a, b, lv, t, f in data["levels"]]
    return [
        _write(out_dir / "corner_marginals.csv", ["param", "lo", "hi", "count"], marg),
        _write(out_dir / "corner_2d.csv",
               ["param_x", "param_y", "x_lo", "x_hi", "y_lo", "y_hi", "count"], pair),
        _write(out_dir / "corner_levels.csv",
               ["param_x", "param_y", "level", "count_threshold", "enclosed_fraction"], lev),
    ]


def write_trace(table: ChainTable, out_dir) -> list[Path]:
    header = ["step", "walker", *table.names, "log_post"]
    return [_write(Path(out_dir) / "trace.csv", header, trace_rows(table))]


def write_tfr_overlay(table: ChainTable, catalog: Catalog, out_dir) -> list[Path]:
    points, band = tfr_overlay(table, catalog)
    out_dir = Path(out_dir)
    return [
        _write(out_dir / "overlay_points.csv", ["w_tilde", "m_plus_d"], points.tolist()),
        _write(out_dir / "overlay_band.csv", ["w", "p16", "p50", "p84"], band.tolist()),
    ]
