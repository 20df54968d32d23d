"""Limit-theorem quantities: CLT variance, rate function, martingale decomposition,
Lindeberg and drift diagnostics, and an exact small-instance oracle."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable

import numpy as np

from .chain_model import ChainSpec, Observable, Path, marginals
from .ergodic_analysis import DiagnosticCurve, delta_sequence, log_grid
from .errors import EmptyInput, InstanceTooLarge, LengthMismatch, NonpositiveTheta, NumericError

THETA_MIN = 1e-12
ENUM_LIMIT = 10**8


@dataclass(frozen=True)
class MartingaleTrace:
    d_values: np.ndarray
    w_values: np.ndarray
    v_values: np.ndarray

    @property
    def n(self) -> int:
        return len(self.d_values)


@dataclass(frozen=True)
class ExactDistribution:
    support: np.ndarray
    probabilities: np.ndarray
    mean: float
    variance: float

    def as_dict(self) -> dict:
        return dict(zip(self.support.tolist(), self.probabilities.tolist()))


class DriftBoundViolation(NumericError):
    pass


def theta(p, pi, f: Observable) -> float:
    """``sum_i pi(i) [f(i)^2 - (sum_j f(j) p(i,j))^2]``.

    The inner sum uses the entries of ``p`` itself. No sign check here; the
    simulation drivers reject values at or below 1e-12.
    """
    p = np.asarray(p, dtype=np.float64)
    pi = np.asarray(pi, dtype=np.float64)
    fv = f.values if isinstance(f, Observable) else np.asarray(f, dtype=np.float64)
    g = p @ fv
    return float(np.sum(pi * (fv**2 - g**2)))


def rate_function(x, theta_value: float):
    """Moderate deviation rate ``x^2 / (2 theta)``."""
    if not theta_value > 0:
        raise NonpositiveTheta(theta_value)
    out = np.asarray(x, dtype=np.float64) ** 2 / (2.0 * theta_value)
    return float(out) if out.ndim == 0 else out


def require_theta(theta_value: float) -> float:
    if not theta_value > THETA_MIN:
        raise NonpositiveTheta(theta_value)
    return float(theta_value)


def martingale_decompose(path: Path, spec: ChainSpec, f: Observable) -> MartingaleTrace:
    """Differences ``D_k = f(X_k) - E[f(X_k) | X_{k-1}]``, their partial sums
    ``W_k``, and the predictable variation ``V(W_k)``."""
    if len(f) != spec.K:
        raise LengthMismatch(f"observable has {len(f)} values for K={spec.K}")
    x = path.states - 1
    if x.max() >= spec.K:
        raise LengthMismatch(f"path visits state {x.max() + 1} outside 1..{spec.K}")
    n = path.n
    fv = f.values
    if n == 0:
        empty = np.empty(0)
        return MartingaleTrace(empty, empty, empty)
    mats = spec.schedule.stack(1, n)
    rows = mats[np.arange(n), x[:-1]]
    g = rows @ fv
    h = rows @ (fv * fv)
    d = fv[x[1:]] - g
    cond_var = np.maximum(h - g * g, 0.0)
    return MartingaleTrace(d, np.cumsum(d), np.cumsum(cond_var))


def lindeberg_diagnostic(traces: Iterable[MartingaleTrace], epsilon: float, v_n: float) -> float:
    """Monte Carlo estimate of ``sum_j E[D_j^2 1{|D_j| >= eps sqrt(v_n)}] / v_n``.

    ``traces`` may be a generator; each trace is consumed once.
    """
    if not v_n > 0:
        raise ValueError("v_n must be positive")
    cut = epsilon * math.sqrt(v_n)
    per_trace = []
    for tr in traces:
        d = tr.d_values
        per_trace.append(float(np.sum(np.where(np.abs(d) >= cut, d * d, 0.0))))
    if not per_trace:
        raise EmptyInput("no traces")
    return float(np.mean(per_trace)) / v_n


def drift_terms(spec: ChainSpec, f: Observable, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-step bound ``2 M delta(P_k)`` and worst-case realized drift
    ``max_i |E[f(X_k) | X_{k-1}=i] - E f(X_k)|`` for ``k = 1..n``."""
    spec.check_observable(f)
    mu = marginals(spec, n)
    mats = spec.schedule.stack(1, n)
    g = mats @ f.values  # (n, K): conditional means per start state
    uncond = mu[1:] @ f.values
    realized = np.abs(g - uncond[:, None]).max(axis=1)
    bounds = 2.0 * f.bound * delta_sequence(spec.schedule, n)
    return bounds, realized


def drift_bound_check(spec: ChainSpec, f: Observable, n: int, grid=None) -> DiagnosticCurve:
    """Verify the drift bound at every step and return ``sum_{k<=n'} b_k / sqrt(n')``.

    Raises :class:`DriftBoundViolation` if any step exceeds its bound by more
    than 1e-12.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    bounds, realized = drift_terms(spec, f, n)
    excess = realized - bounds
    bad = np.flatnonzero(excess > 1e-12)
    if len(bad):
        raise DriftBoundViolation(f"{len(bad)} steps exceed 2M*delta(P_k); first at k={bad[0] + 1}")
    grid = log_grid(n) if grid is None else np.asarray(grid, dtype=np.int64)
    csum = np.cumsum(bounds)
    pts = [(int(k), float(csum[k - 1] / math.sqrt(k))) for k in grid]
    return DiagnosticCurve("drift_bound", pts, {"violations": 0, "max_excess": float(excess.max())})


def _lattice(values: np.ndarray, max_den: int = 64, tol: float = 1e-9):
    """Integer labels and quantum with ``values ~= labels * quantum``, or ``None``."""
    nz = np.abs(values[np.abs(values) > tol])
    if len(nz) == 0:
        return np.zeros(len(values), dtype=np.int64), 1.0
    q0 = float(nz.min())
    den = 1
    for v in values:
        r = v / q0
        fr = Fraction(r).limit_denominator(max_den)
        if abs(r - float(fr)) > tol * max(1.0, abs(r)):
            return None
        den = den * fr.denominator // math.gcd(den, fr.denominator)
    quantum = q0 / den
    labels = np.round(values / quantum).astype(np.int64)
    if np.max(np.abs(labels * quantum - values)) > tol * max(1.0, float(np.max(np.abs(values)))):
        return None
    return labels, quantum


def _guard(K: int, n: int) -> None:
    if (n + 1) * math.log10(K) > math.log10(ENUM_LIMIT) + 1e-12:
        raise InstanceTooLarge(f"K^(n+1) = {K}^{n + 1} exceeds {ENUM_LIMIT:.0e}")


def _summarize(support: np.ndarray, probs: np.ndarray) -> ExactDistribution:
    order = np.argsort(support)
    support, probs = support[order], probs[order]
    mean = float(np.sum(support * probs))
    var = float(np.sum(probs * (support - mean) ** 2))
    return ExactDistribution(support, probs, mean, var)


def enumerate_exact(spec: ChainSpec, f: Observable, n: int) -> ExactDistribution:
    """Exact law of ``S_n = f(X_1) + ... + f(X_n)``.

    Dynamic program over (state, accumulated sum). When ``f`` sits on a
    lattice the sum is tracked as an integer label; otherwise sums are keyed
    by their exact floating-point value, which reproduces full path
    enumeration with left-to-right summation.
    """
    spec.check_observable(f)
    K = spec.K
    if n < 1:
        raise ValueError("n must be >= 1")
    _guard(K, n)
    lat = _lattice(f.values)
    mats = spec.schedule.stack(1, n)
    if lat is not None:
        labels, quantum = lat
        lo = int(labels.min())
        shift = labels - lo
        width = n * int(shift.max()) + 1
        dist = np.zeros((K, width))
        dist[:, 0] = spec.initial
        for k in range(n):
            moved = mats[k].T @ dist  # (K, width): mass arriving at each state
            nxt = np.zeros_like(dist)
            for j in range(K):
                s = shift[j]
                nxt[j, s:] = moved[j, : width - s]
            dist = nxt
        probs = dist.sum(axis=0)
        keep = np.flatnonzero(probs > 0.0)
        support = (np.arange(width)[keep] + n * lo) * quantum
        return _summarize(support.astype(np.float64), probs[keep])

    layer = {(i, 0.0): float(spec.initial[i]) for i in range(K) if spec.initial[i] > 0}
    for k in range(n):
        nxt: dict = {}
        for (i, s), w in layer.items():
            row = mats[k][i]
            for j in np.flatnonzero(row > 0.0):
                key = (int(j), s + float(f.values[j]))
                nxt[key] = nxt.get(key, 0.0) + w * row[j]
        layer = nxt
    acc: dict = {}
    for (_, s), w in layer.items():
        acc[s] = acc.get(s, 0.0) + w
    support = np.array(list(acc.keys()))
    return _summarize(support, np.array(list(acc.values())))


def enumerate_paths(spec: ChainSpec, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Every path ``X_0..X_n`` (1-based labels, one per row) with its probability."""
    K = spec.K
    _guard(K, n)
    paths = np.array(list(itertools.product(range(K), repeat=n + 1)), dtype=np.int64)
    probs = spec.initial[paths[:, 0]].copy()
    mats = spec.schedule.stack(1, n)
    for k in range(1, n + 1):
        probs *= mats[k - 1][paths[:, k - 1], paths[:, k]]
    return paths + 1, probs
