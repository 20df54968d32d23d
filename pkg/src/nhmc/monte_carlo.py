"""Seeded path simulation and the empirical CLT / moderate-deviation checks.

Every uniform is ``philox(key=seed, counter=(step, path))``, so path ``r`` of
a batch is the same as ``sample_path(spec, n, seed, index=r)`` and results do
not depend on how many threads ran the batch. Per-path quantities are
written to disjoint slots; all cross-path reductions happen afterwards in
numpy with a fixed order.
"""

from __future__ import annotations

import logging
import math
import os
import struct
from dataclasses import dataclass, field

import numpy as np
from numba import njit, prange
from scipy.special import erfc

from ._philox import uniform01
from .chain_model import ChainSpec, Observable, Path, expected_sum
from .errors import EmptyInput, InvalidAlpha, InvalidN
from .limit_quantities import require_theta

log = logging.getLogger(__name__)

MIN_PATHS = 100
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class SimulationSummary:
    n: int
    N: int
    seed: int
    standardized_samples: np.ndarray
    occupation: np.ndarray
    v_over_n_mean: float
    ks_distance: float
    theta_used: float
    e_sn_used: float
    sums: np.ndarray = field(repr=False, default=None)
    w_final: np.ndarray = field(repr=False, default=None)

    @property
    def var_s_over_n(self) -> float:
        """Empirical ``Var(S_n)/n``; compare with ``theta_used``."""
        return float(np.var(self.sums) / self.n)

    @property
    def var_w_over_n(self) -> float:
        return float(np.var(self.w_final) / self.n)


@dataclass(frozen=True)
class MdpCell:
    n: int
    x: float
    p_hat: float
    normalized_log: float | None
    reference: float
    flagged: bool = False


@dataclass(frozen=True)
class MdpEstimate:
    a_exponent: float
    grid: tuple
    N_per_cell: int
    theta_used: float
    warnings: tuple = ()

    def cell(self, n: int, x: float) -> MdpCell:
        for c in self.grid:
            if c.n == n and c.x == x:
                return c
        raise KeyError((n, x))


def _cdf_rows(m: np.ndarray) -> np.ndarray:
    c = np.cumsum(m, axis=-1)
    c[..., -1] = 1.0
    return np.ascontiguousarray(c)


@njit(cache=True, inline="always")
def _pick(cdf, u):
    K = cdf.shape[0]
    if K <= 16:
        for j in range(K - 1):
            if u < cdf[j]:
                return j
        return K - 1
    j = np.searchsorted(cdf, u, side="right")
    return min(j, K - 1)


@njit(cache=True, inline="always")
def _pick_row(cdfs, m, x, u):
    K = cdfs.shape[2]
    if K <= 16:
        # Branch-free count of cdf entries <= u; rows are non-decreasing.
        j = 0
        for t in range(K - 1):
            j += u >= cdfs[m, x, t]
        return j
    return _pick(cdfs[m, x], u)


@njit(cache=True)
def _sample_states(init_cdf, cdfs, idx, n, key, path):
    out = np.empty(n + 1, dtype=np.int64)
    x = _pick(init_cdf, uniform01(key, path, np.uint64(0)))
    out[0] = x
    for k in range(1, n + 1):
        x = _pick_row(cdfs, idx[k - 1], x, uniform01(key, path, np.uint64(k)))
        out[k] = x
    return out


@njit(cache=True, parallel=True)
def _run_batch(init_cdf, cdfs, idx, fv, g, cv, n, first, count, key, sums, wfin, vfin, occ):
    for r in prange(count):
        path = np.uint64(first + r)
        x = _pick(init_cdf, uniform01(key, path, np.uint64(0)))
        s = 0.0
        w = 0.0
        v = 0.0
        for k in range(1, n + 1):
            occ[r, x] += 1
            m = idx[k - 1]
            y = _pick_row(cdfs, m, x, uniform01(key, path, np.uint64(k)))
            s += fv[y]
            w += fv[y] - g[m, x]
            v += cv[m, x]
            x = y
        sums[r] = s
        wfin[r] = w
        vfin[r] = v


def _kernel_inputs(spec: ChainSpec, f: Observable | None, n: int):
    mats, idx = spec.schedule.unique_matrices(max(n, 1))
    init_cdf = _cdf_rows(spec.initial)
    cdfs = _cdf_rows(mats)
    if f is None:
        return init_cdf, cdfs, idx, None, None, None
    fv = np.ascontiguousarray(f.values)
    g = mats @ fv
    cv = np.maximum(mats @ (fv * fv) - g * g, 0.0)
    return init_cdf, cdfs, idx, fv, np.ascontiguousarray(g), np.ascontiguousarray(cv)


def _key(seed: int) -> np.uint64:
    return np.uint64(int(seed) & _MASK64)


def configure_threads(threads: int | None = None) -> int:
    """Cap numba's worker count (``NHMC_THREADS`` when not given). Results do not depend on it."""
    import numba

    if threads is None:
        env = os.environ.get("NHMC_THREADS")
        if not env:
            return numba.get_num_threads()
        threads = int(env)
    threads = max(1, min(int(threads), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(threads)
    return threads


def sample_path(spec: ChainSpec, n: int, seed: int, index: int = 0) -> Path:
    """Path ``X_0..X_n`` drawn by inverse CDF on cumulative row sums."""
    if n < 0:
        raise InvalidN("n must be >= 0")
    init_cdf, cdfs, idx, *_ = _kernel_inputs(spec, None, n)
    states = _sample_states(init_cdf, cdfs, idx, n, _key(seed), np.uint64(index))
    return Path(states + 1, seed=seed, index=index)


def _simulate(spec: ChainSpec, f: Observable, n: int, N: int, seed: int):
    init_cdf, cdfs, idx, fv, g, cv = _kernel_inputs(spec, f, n)
    sums = np.empty(N)
    wfin = np.empty(N)
    vfin = np.empty(N)
    occ = np.zeros((N, spec.K), dtype=np.int64)
    _run_batch(init_cdf, cdfs, idx, fv, g, cv, n, 0, N, _key(seed), sums, wfin, vfin, occ)
    return sums, wfin, vfin, occ


def normal_cdf(z):
    return 0.5 * erfc(-np.asarray(z, dtype=np.float64) / math.sqrt(2.0))


def ks_statistic(samples) -> float:
    """Kolmogorov distance between the empirical law of ``samples`` and N(0,1)."""
    z = np.sort(np.asarray(samples, dtype=np.float64).ravel())
    N = len(z)
    if N == 0:
        raise EmptyInput("no samples")
    phi = normal_cdf(z)
    i = np.arange(1, N + 1)
    return float(min(1.0, max(np.max(i / N - phi), np.max(phi - (i - 1) / N))))


def simulate_batch(spec: ChainSpec, f: Observable, n: int, N: int, seed: int, theta_ref: float) -> SimulationSummary:
    """Simulate ``N`` paths and standardize ``S_n`` by the exact mean and ``sqrt(n theta_ref)``."""
    theta_ref = require_theta(theta_ref)
    if N < MIN_PATHS:
        raise InvalidN(f"N must be >= {MIN_PATHS}, got {N}")
    if n < 1:
        raise InvalidN("n must be >= 1")
    spec.check_observable(f)
    sums, wfin, vfin, occ = _simulate(spec, f, n, N, seed)
    e_sn = expected_sum(spec, f, n)
    z = (sums - e_sn) / math.sqrt(n * theta_ref)
    occupation = (occ / n).mean(axis=0)
    return SimulationSummary(
        n=n,
        N=N,
        seed=seed,
        standardized_samples=z,
        occupation=occupation,
        v_over_n_mean=float(np.mean(vfin) / n),
        ks_distance=ks_statistic(z),
        theta_used=theta_ref,
        e_sn_used=e_sn,
        sums=sums,
        w_final=wfin,
    )


def occupation_frequencies(path: Path, K: int | None = None) -> np.ndarray:
    """``L_n(i)/n``: visit frequencies of ``X_0..X_{n-1}``."""
    if path.n < 1:
        raise InvalidN("path needs at least one transition")
    K = int(path.states.max()) if K is None else K
    counts = np.bincount(path.states[:-1] - 1, minlength=K)
    return counts / path.n


def mdp_estimate(
    spec: ChainSpec,
    f: Observable,
    n_grid,
    alpha: float,
    x_grid,
    N: int,
    seed: int,
    theta_ref: float,
) -> MdpEstimate:
    """Empirical ``(n / a(n)^2) log P(|S_n - E S_n| >= x a(n))`` with ``a(n) = n^alpha``.

    Cells where no path reaches the threshold are flagged and carry
    ``normalized_log = None``.
    """
    if not 0.5 < alpha < 1.0:
        raise InvalidAlpha(f"alpha must lie in (0.5, 1), got {alpha}")
    theta_ref = require_theta(theta_ref)
    if N < MIN_PATHS:
        raise InvalidN(f"N must be >= {MIN_PATHS}, got {N}")
    spec.check_observable(f)
    cells = []
    warnings = []
    for n in sorted(int(v) for v in n_grid):
        a = float(n) ** alpha
        sums, *_ = _simulate(spec, f, n, N, seed)
        dev = np.abs(sums - expected_sum(spec, f, n))
        scale = n / (a * a)
        for x in sorted(float(v) for v in x_grid):
            p_hat = float(np.mean(dev >= x * a))
            ref = -x * x / (2.0 * theta_ref)
            gauss = float(2.0 * normal_cdf(-x * a / math.sqrt(n * theta_ref)))
            if gauss < 10.0 / N:
                warnings.append(f"cell n={n} x={x}: Gaussian tail {gauss:.3g} below 10/N")
            if p_hat == 0.0:
                cells.append(MdpCell(n, x, 0.0, None, ref, flagged=True))
            else:
                cells.append(MdpCell(n, x, p_hat, scale * math.log(p_hat), ref))
    for w in warnings:
        log.warning(w)
    return MdpEstimate(alpha, tuple(cells), N, theta_ref, tuple(warnings))


def write_samples(path, samples) -> None:
    """Spill samples as a little-endian uint64 count followed by float64 values."""
    arr = np.asarray(samples, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(arr)))
        fh.write(arr.tobytes())


def read_samples(path) -> np.ndarray:
    with open(path, "rb") as fh:
        (count,) = struct.unpack("<Q", fh.read(8))
        return np.frombuffer(fh.read(8 * count), dtype="<f8").copy()
