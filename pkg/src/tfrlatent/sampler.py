"""Affine-invariant ensemble sampling with autocorrelation-based stopping.

The sampler implements the stretch move: the ensemble is split into two
halves and every walker ``X_k`` of one half proposes
``Y = X_j + z (X_k - X_j)`` with ``X_j`` drawn from the other half and
``z`` from ``g(z) ~ 1/sqrt(z)`` on ``[1/a, a]``. The proposal is accepted with
probability ``min(1, z^(D-1) exp(log p(Y) - log p(X_k)))``.

Runs stop once the chain is at least 50 integrated autocorrelation times
long after discarding ``ceil(2 tau)`` burn-in steps, or at a step cap.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

log = logging.getLogger(__name__)

STRETCH_A = 2.0
TAU_WINDOW_C = 5.0
TAU_MULTIPLE = 50.0

#: Flat prior bounds of the fiducial analysis.
DEFAULT_BOUNDS: dict[str, tuple[float, float]] = {
    "beta": (2.5, 4.5),
    "gamma": (10.0, 11.0),
    "sigma_m": (0.001, 0.3),
    "sigma_w": (0.001, 0.1),
    "v_star": (-1.0, 1.0),
    "alpha": (-2.0, 0.0),
}


class SamplerError(RuntimeError):
    """The log-posterior misbehaved inside the prior bounds."""


@dataclass(frozen=True)
class PriorBounds:
    """Ordered flat-prior box ``{name: (low, high)}``."""

    names: tuple[str, ...]
    low: np.ndarray
    high: np.ndarray

    def __post_init__(self) -> None:
        low = np.asarray(self.low, dtype=float)
        high = np.asarray(self.high, dtype=float)
        if low.shape != (len(self.names),) or high.shape != low.shape:
            raise ValueError("bounds must match the parameter names")
        if np.any(~(low < high)):
            raise ValueError("every bound needs low < high")
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "low", low)
        object.__setattr__(self, "high", high)

    @classmethod
    def from_dict(cls, bounds: dict[str, Sequence[float]]) -> "PriorBounds":
        names = tuple(bounds)
        return cls(names, np.array([bounds[k][0] for k in names]),
                   np.array([bounds[k][1] for k in names]))

    @classmethod
    def default(cls, names: Sequence[str],
                overrides: dict[str, Sequence[float]] | None = None) -> "PriorBounds":
        table = dict(DEFAULT_BOUNDS)
        table.update(overrides or {})
        return cls.from_dict({k: tuple(table[k]) for k in names})

    @property
    def ndim(self) -> int:
        return len(self.names)

    def contains(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        return np.all((theta > self.low) & (theta < self.high), axis=-1)

    def to_dict(self) -> dict[str, list[float]]:
        return {k: [float(lo), float(hi)] for k, lo, hi in zip(self.names, self.low, self.high)}


# --------------------------------------------------------------------------
# Autocorrelation
# --------------------------------------------------------------------------


def _autocorr_function(x: np.ndarray) -> np.ndarray:
    """Normalized autocorrelation of the last axis via zero-padded FFT."""
    n = x.shape[-1]
    L = 1 << int(2 * n - 1).bit_length()
    xc = x - x.mean(axis=-1, keepdims=True)
    f = np.fft.rfft(xc, L, axis=-1)
    acov = np.fft.irfft(f * np.conj(f), L, axis=-1)[..., :n]
    with np.errstate(invalid="ignore", divide="ignore"):
        acf = acov / acov[..., :1]
    return np.nan_to_num(acf, nan=0.0)


def autocorr_time(samples, c: float = TAU_WINDOW_C, with_flag: bool = False):
    """Integrated autocorrelation time per parameter.

    Parameters
    ----------
    samples : array_like
        ``(steps,)`` for one sequence, ``(walkers, steps)`` for one parameter
        of an ensemble, or ``(walkers, steps, params)``.
    c : float
        Self-consistent window: the sum is truncated at the smallest lag
        ``M >= c tau(M)``.
    with_flag : bool
        Also return whether the chain is long enough (``steps >= 50 tau``)
        for the estimate to be trusted; shorter chains give lower bounds.

    Returns
    -------
    ndarray or (ndarray, bool)
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[None, :, None]
    elif x.ndim == 2:
        x = x[:, :, None]
    elif x.ndim != 3:
        raise ValueError("samples must have 1, 2 or 3 dimensions")
    n_steps = x.shape[1]
    if n_steps < 2:
        raise ValueError("need at least two steps")
    acf = _autocorr_function(np.moveaxis(x, 1, -1)).mean(axis=0)  # (params, steps)
    taus = 2.0 * np.cumsum(acf, axis=-1) - 1.0
    lags = np.arange(n_steps)
    tau = np.empty(acf.shape[0])
    for p in range(acf.shape[0]):
        ok = lags >= c * taus[p]
        m = int(np.argmax(ok)) if ok.any() else n_steps - 1
        tau[p] = 1.0 if acf[p, 0] == 0 else taus[p, m]  # constant sequence: no correlation
    reliable = bool(n_steps >= 50 and np.all(n_steps >= TAU_MULTIPLE * tau))
    if with_flag:
        return tau, reliable
    return tau


# --------------------------------------------------------------------------
# Chain container
# --------------------------------------------------------------------------


@dataclass
class Chain:
    """Walker trajectories and run metadata.

    Attributes
    ----------
    samples : ndarray, shape (walkers, steps, params)
    log_post : ndarray, shape (walkers, steps)
    accepted : ndarray of bool, shape (walkers, steps)
    tau : ndarray
        Per-parameter integrated autocorrelation times.
    burn, thin : int
    """

    names: tuple[str, ...]
    samples: np.ndarray
    log_post: np.ndarray
    accepted: np.ndarray
    tau: np.ndarray
    burn: int
    thin: int
    seed: int
    converged: bool
    bounds: PriorBounds | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_walkers(self) -> int:
        return int(self.samples.shape[0])

    @property
    def n_steps(self) -> int:
        return int(self.samples.shape[1])

    @property
    def acceptance_fraction(self) -> np.ndarray:
        acc = self.accepted[:, self.burn:]
        if acc.shape[1] == 0:
            acc = self.accepted
        return acc.mean(axis=1)

    def retained(self) -> tuple[np.ndarray, np.ndarray]:
        """Burned and thinned samples flattened over walkers (step-major order)."""
        s = self.samples[:, self.burn::self.thin, :]
        lp = self.log_post[:, self.burn::self.thin]
        return (np.swapaxes(s, 0, 1).reshape(-1, s.shape[-1]),
                np.swapaxes(lp, 0, 1).reshape(-1))

    def final_positions(self) -> np.ndarray:
        return self.samples[:, -1, :].copy()

    def sidecar(self) -> dict:
        return {
            "names": list(self.names),
            "tau": [float(t) for t in self.tau],
            "burn": int(self.burn),
            "thin": int(self.thin),
            "n_walkers": self.n_walkers,
            "n_steps": self.n_steps,
            "acceptance_fraction": [float(a) for a in self.acceptance_fraction],
            "seed": int(self.seed),
            "converged": bool(self.converged),
            "bounds": None if self.bounds is None else self.bounds.to_dict(),
            **self.meta,
        }

    def write(self, csv_path, json_path=None) -> None:
        """Retained samples as CSV (parameters plus log_post) and a JSON sidecar."""
        flat, lp = self.retained()
        with Path(csv_path).open("w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(list(self.names) + ["log_post"])
            for row, v in zip(flat, lp):
                wr.writerow(["%.17g" % x for x in row] + ["%.17g" % v])
        if json_path is not None:
            Path(json_path).write_text(json.dumps(self.sidecar(), indent=2, sort_keys=True))

    def save_npz(self, path) -> None:
        np.savez_compressed(path, samples=self.samples, log_post=self.log_post,
                            accepted=self.accepted, sidecar=json.dumps(self.sidecar()))

    @classmethod
    def load_npz(cls, path) -> "Chain":
        z = np.load(path, allow_pickle=False)
        side = json.loads(str(z["sidecar"]))
        bounds = side.pop("bounds", None)
        names = tuple(side.pop("names"))
        known = {"tau", "burn", "thin", "n_walkers", "n_steps", "acceptance_fraction", "seed",
                 "converged"}
        meta = {k: v for k, v in side.items() if k not in known}
        return cls(names, z["samples"], z["log_post"], z["accepted"], np.array(side["tau"]),
                   side["burn"], side["thin"], side["seed"], side["converged"],
                   None if bounds is None else PriorBounds.from_dict(bounds), meta)


def burn_thin(tau) -> tuple[int, int]:
    """``burn = ceil(2 max tau)``, ``thin = ceil(max tau / 2)``."""
    t = float(np.max(tau))
    return int(math.ceil(2.0 * t)), max(1, int(math.ceil(0.5 * t)))


# --------------------------------------------------------------------------
# Ensemble run
# --------------------------------------------------------------------------


def valid_walker_counts(ndim: int) -> list[int]:
    return [n for n in range(2 * ndim, 3 * ndim + 1) if n % 2 == 0]


def default_walkers(ndim: int) -> int:
    """Smallest even walker count of at least 2.5 times the dimension, within [2D, 3D]."""
    counts = valid_walker_counts(ndim)
    for n in counts:
        if n >= 2.5 * ndim:
            return n
    return counts[-1]


def stretch_factors(rng: np.random.Generator, n: int, a: float = STRETCH_A) -> np.ndarray:
    """Draw ``n`` stretch factors with density proportional to ``1/sqrt(z)`` on ``[1/a, a]``.

    Inverse-CDF sampling: ``sqrt(z)`` is uniform on ``[1/sqrt(a), sqrt(a)]``.
    """
    if not a > 1.0:
        raise ValueError("the stretch scale must exceed 1")
    return ((a - 1.0) * rng.random(n) + 1.0) ** 2 / a


def ensemble_run(logpost: Callable[[np.ndarray], float], bounds: PriorBounds,
                 n_walkers: int | None = None, seed: int = 0, *,
                 max_steps: int = 50_000, check_every: int = 200, min_steps: int = 0,
                 init: np.ndarray | None = None, threads: int = 1,
                 progress: Callable[[int, np.ndarray], None] | None = None) -> Chain:
    """Sample ``logpost`` with the stretch-move ensemble sampler.

    Parameters
    ----------
    logpost : callable
        Maps a parameter vector to the log-posterior. Only called strictly
        inside ``bounds``; outside the sampler uses ``-inf`` itself.
    bounds : PriorBounds
    n_walkers : int, optional
        Even and between 2 and 3 times the dimension.
    seed : int
    max_steps : int
        Step cap. Hitting it returns a chain flagged ``converged=False``.
    check_every : int
        Steps between autocorrelation checks.
    min_steps : int
        Do not stop before this many steps.
    init : ndarray, optional
        Starting positions ``(walkers, params)``; default uniform in bounds.
    threads : int
        Concurrent log-posterior evaluations within a half-ensemble. The
        result does not depend on this value.
    progress : callable, optional
        Called as ``progress(step, tau)`` after each check.

    Returns
    -------
    Chain
    """
    D = bounds.ndim
    n_walkers = default_walkers(D) if n_walkers is None else int(n_walkers)
    if n_walkers % 2 or not 2 * D <= n_walkers <= 3 * D:
        raise ValueError(f"n_walkers must be even and within [{2 * D}, {3 * D}], "
                         f"got {n_walkers}")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))
    if init is None:
        pos = rng.uniform(bounds.low, bounds.high, size=(n_walkers, D))
    else:
        pos = np.array(init, dtype=float, copy=True)
        if pos.shape != (n_walkers, D):
            raise ValueError("init must have shape (walkers, params)")
        if not np.all(bounds.contains(pos)):
            raise ValueError("initial positions must lie strictly inside the bounds")

    pool = ThreadPoolExecutor(threads) if threads > 1 else None

    def evaluate(thetas: np.ndarray) -> np.ndarray:
        inside = bounds.contains(thetas)
        out = np.full(thetas.shape[0], -np.inf)
        idx = np.flatnonzero(inside)
        vals = (list(pool.map(logpost, thetas[idx])) if pool is not None
                else [logpost(t) for t in thetas[idx]])
        for k, v in zip(idx, vals):
            v = float(v)
            if not math.isfinite(v):
                raise SamplerError(f"non-finite log-posterior {v!r} at theta={thetas[k]!r}")
            out[k] = v
        return out

    lp = evaluate(pos)
    half = n_walkers // 2
    groups = (np.arange(half), np.arange(half, n_walkers))
    cap = int(max_steps)
    chunk = max(check_every, 1)
    store_s = np.empty((n_walkers, min(cap, 4 * chunk), D))
    store_lp = np.empty((n_walkers, store_s.shape[1]))
    store_acc = np.zeros((n_walkers, store_s.shape[1]), dtype=bool)
    a = STRETCH_A
    step = 0
    converged = False
    tau = np.full(D, np.inf)
    try:
        while step < cap:
            if step == store_s.shape[1]:
                grow = min(cap, 2 * store_s.shape[1])
                store_s = np.concatenate([store_s, np.empty((n_walkers, grow - step, D))], 1)
                store_lp = np.concatenate([store_lp, np.empty((n_walkers, grow - step))], 1)
                store_acc = np.concatenate(
                    [store_acc, np.zeros((n_walkers, grow - step), dtype=bool)], 1)
            acc_step = np.zeros(n_walkers, dtype=bool)
            for g in (0, 1):
                active, other = groups[g], groups[1 - g]
                z = stretch_factors(rng, half, a)
                partner = other[rng.integers(0, half, size=half)]
                u = rng.random(half)
                prop = pos[partner] + z[:, None] * (pos[active] - pos[partner])
                lp_new = evaluate(prop)
                with np.errstate(invalid="ignore"):
                    log_ratio = (D - 1) * np.log(z) + lp_new - lp[active]
                accept = np.log(u) < log_ratio
                sel = active[accept]
                pos[sel] = prop[accept]
                lp[sel] = lp_new[accept]
                acc_step[sel] = True
            store_s[:, step] = pos
            store_lp[:, step] = lp
            store_acc[:, step] = acc_step
            step += 1
            if step % chunk == 0 and step >= max(50, min_steps):
                tau = autocorr_time(store_s[:, :step])
                burn, _ = burn_thin(tau)
                if progress is not None:
                    progress(step, tau)
                log.info("step %d: max tau %.1f", step, float(np.max(tau)))
                if step - burn >= TAU_MULTIPLE * float(np.max(tau)):
                    converged = True
                    break
    finally:
        if pool is not None:
            pool.shutdown()
    samples = store_s[:, :step].copy()
    if not converged:
        tau = autocorr_time(samples) if step >= 2 else np.full(D, np.nan)
        log.warning("no convergence within %d steps (max tau %.1f)", step, float(np.max(tau)))
    burn, thin = burn_thin(tau)
    burn = min(burn, step - 1)
    return Chain(bounds.names, samples, store_lp[:, :step].copy(),
                 store_acc[:, :step].copy(), tau, burn, thin, int(seed), converged, bounds)


# --------------------------------------------------------------------------
# Summaries
# --------------------------------------------------------------------------


class NotConvergedError(RuntimeError):
    pass


def summarize(chain: Chain, allow_unconverged: bool = False) -> dict[str, tuple[float, float, float]]:
    """16th, 50th and 84th percentiles (linear interpolation) of the retained samples."""
    if not chain.converged and not allow_unconverged:
        raise NotConvergedError("chain did not converge; pass allow_unconverged=True to override")
    flat, _ = chain.retained()
    q = np.percentile(flat, [16.0, 50.0, 84.0], axis=0, method="linear")
    return {k: (float(q[0, j]), float(q[1, j]), float(q[2, j])) for j, k in enumerate(chain.names)}


def percentiles(values, qs=(16.0, 50.0, 84.0)) -> tuple[float, ...]:
    """Percentiles under the linear-interpolation convention."""
    return tuple(float(v) for v in np.percentile(np.asarray(values, dtype=float), qs,
                                                 method="linear"))
