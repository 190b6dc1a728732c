"""Catalog CSV encoding and plot-data helpers."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tfrlatent.catalog import Catalog, CatalogFormatError
from tfrlatent.core import ModelParams
from tfrlatent.plotdata import ChainTable, corner_data, credible_threshold, tfr_overlay, trace_rows
from tfrlatent.simulate import SimConfig, simulate

TRUTH = ModelParams(3.33, 10.5, 0.15, 0.045, 0.3, -1.27)


# --------------------------------------------------------------------------
# Catalog CSV
# --------------------------------------------------------------------------


def test_catalog_csv_roundtrip_is_exact(tmp_path):
    cat = simulate(SimConfig(TRUTH, seed=3, cz_max=7000.0)).catalog
    cat.write_csv(tmp_path / "c.csv")
    back = Catalog.read_csv(tmp_path / "c.csv")
    assert back.equals(cat)
    assert np.array_equal(back.d, cat.d)


def test_catalog_csv_with_errors_roundtrip(tmp_path):
    cat = Catalog([5000.0, 6000.0], [2.4, 2.6], [9.0, 9.5], sigma_em=[0.01, 0.02],
                  sigma_ew=[0.005, 0.0])
    cat.write_csv(tmp_path / "c.csv")
    back = Catalog.read_csv(tmp_path / "c.csv")
    assert back.equals(cat) and back.has_errors


@pytest.mark.parametrize("text, match", [
    ("", "empty"),
    ("id,cz,logW\n1,2,3\n", "header"),
    ("id,cz,logW,m_app\n1,5000,2.4\n", "ragged"),
    ("id,cz,logW,m_app\n1,5000,abc,9\n", "abc"),
])
def test_catalog_format_errors(tmp_path, text, match):
    p = tmp_path / "bad.csv"
    p.write_text(text)
    with pytest.raises(CatalogFormatError, match=match):
        Catalog.read_csv(p)


def test_catalog_invariants():
    with pytest.raises(ValueError):
        Catalog([0.0], [2.5], [9.0])
    with pytest.raises(ValueError):
        Catalog([100.0], [2.5, 2.6], [9.0])
    with pytest.raises(ValueError):
        Catalog([100.0], [2.5], [9.0], sigma_em=[0.1])
    with pytest.raises(FileNotFoundError):
        Catalog.read_csv("/nonexistent/catalog.csv")


def test_with_widths_and_take():
    cat = Catalog([5000.0, 6000.0, 7000.0], [2.4, 2.6, 2.5], [9.0, 9.5, 9.2])
    sub = cat.take([2, 0])
    assert sub.ids.tolist() == [2, 0] and sub.cz.tolist() == [7000.0, 5000.0]
    moved = cat.with_widths(cat.w_tilde + 0.01)
    assert np.allclose(moved.w_tilde, cat.w_tilde + 0.01, atol=1e-15)
    assert np.array_equal(moved.m_tilde, cat.m_tilde)


# --------------------------------------------------------------------------
# Plot data
# --------------------------------------------------------------------------


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 50), min_size=1, max_size=60).filter(lambda c: sum(c) > 0),
       st.sampled_from([0.68, 0.95]))
def test_credible_threshold_is_the_highest_count_region(counts, level):
    c = np.array(counts, dtype=float)
    t, frac = credible_threshold(c, level)
    assert frac >= level - 1e-12
    assert frac == pytest.approx(c[c >= t].sum() / c.sum())
    # any strictly higher threshold encloses less than the level
    higher = c[c > t]
    if higher.size:
        assert higher.sum() / c.sum() < level


def test_credible_threshold_rejects_empty():
    with pytest.raises(ValueError):
        credible_threshold(np.zeros(4), 0.68)


def _table(n_walkers=4, steps=500, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.multivariate_normal([3.3, 10.5], [[0.01, 0.002], [0.002, 0.0009]],
                                size=n_walkers * steps)
    return ChainTable(("beta", "gamma"), x, -0.5 * np.ones(len(x)), n_walkers)


def test_corner_counts_sum_to_samples_and_levels_enclose():
    table = _table()
    data = corner_data(table, bins=25)
    for _, edges, counts in data["marginals"]:
        assert counts.sum() == len(table.samples) and edges.size == 26
    (_, _, _, _, h), = data["pairs"]
    assert h.sum() == len(table.samples)
    for *_, level, t, frac in data["levels"]:
        assert frac >= level


def test_trace_rows_index_steps_and_walkers():
    rows = trace_rows(_table(n_walkers=4, steps=3))
    assert [(r[0], r[1]) for r in rows[:6]] == [(0, 0), (0, 1), (0, 2), (0, 3), (1, 0), (1, 1)]
    assert len(rows) == 12


def test_tfr_overlay_band_brackets_the_median_line():
    table = _table()
    cat = simulate(SimConfig(TRUTH, seed=1, cz_max=6000.0)).catalog
    points, band = tfr_overlay(table, cat, n_grid=11)
    assert points.shape == (len(cat), 2)
    assert np.all(band[:, 1] <= band[:, 2]) and np.all(band[:, 2] <= band[:, 3])
    mid = np.median(table.samples[:, 0]) * band[:, 0] + np.median(table.samples[:, 1])
    assert np.allclose(band[:, 2], mid, atol=0.02)


def test_contour_levels_enclose_the_stated_sample_fractions():
    # Recount the samples that fall in bins at or above each threshold.
    table = _table(n_walkers=8, steps=25_000, seed=4)
    data = corner_data(table, bins=40)
    (_, _, ex, ey, h), = data["pairs"]
    ix = np.clip(np.searchsorted(ex, table.samples[:, 0], side="right") - 1, 0, h.shape[0] - 1)
    iy = np.clip(np.searchsorted(ey, table.samples[:, 1], side="right") - 1, 0, h.shape[1] - 1)
    per_sample = h[ix, iy]
    for *_, level, t, _ in data["levels"]:
        frac = float(np.mean(per_sample >= t))
        assert abs(frac - level) <= (0.02 if level == 0.68 else 0.01)
