"""Ergodic structure of stochastic matrices and convergence diagnostics for schedules."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import connected_components

from .chain_model import TransitionSchedule, matrix_norm
from .errors import HorizonExceeded, NoConvergence, NotIrreducible

DEFAULT_M_MAX = 64


@dataclass(frozen=True)
class DiagnosticCurve:
    label: str
    points: tuple  # of (n, value)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        pts = tuple((int(n), float(v)) for n, v in self.points)
        ns = [n for n, _ in pts]
        if any(b <= a for a, b in zip(ns, ns[1:])):
            raise ValueError("curve abscissae must be strictly increasing")
        if any(not v >= 0.0 for _, v in pts):
            raise ValueError("curve values must be >= 0")
        object.__setattr__(self, "points", pts)

    @property
    def ns(self) -> np.ndarray:
        return np.array([n for n, _ in self.points], dtype=np.int64)

    @property
    def values(self) -> np.ndarray:
        return np.array([v for _, v in self.points])


@dataclass(frozen=True)
class ErgodicReport:
    period: int
    classes: tuple  # of tuples of 1-based labels
    pi: np.ndarray
    strong_ergodicity_residuals: tuple  # one DiagnosticCurve per class
    constant_matrix_R: np.ndarray
    horizon: int
    tol: float
    certified: bool = True


def dobrushin_delta(p) -> float:
    """``max_{i,k} sum_j [p(i,j) - p(k,j)]^+``."""
    p = np.asarray(p, dtype=np.float64)
    diff = p[:, None, :] - p[None, :, :]
    val = float(np.maximum(diff, 0.0).sum(axis=2).max())
    return min(max(val, 0.0), 1.0)


def _check_irreducible(p: np.ndarray) -> None:
    n_comp, _ = connected_components(p > 0.0, directed=True, connection="strong")
    if n_comp != 1:
        raise NotIrreducible(f"positive-entry digraph has {n_comp} strongly connected components")


def _power_stationary(p: np.ndarray, tol: float, max_iter: int) -> np.ndarray:
    # Lazy chain (I+P)/2 has the same stationary law and is aperiodic.
    lazy = 0.5 * (np.eye(len(p)) + p)
    pi = np.full(len(p), 1.0 / len(p))
    for it in range(max_iter):
        nxt = pi @ lazy
        if np.abs(nxt - pi).sum() <= tol * 1e-2:
            return nxt / nxt.sum()
        pi = nxt
    raise NoConvergence(max_iter)


def stationary_distribution(p, tol: float = 1e-10, max_iter: int = 1_000_000) -> np.ndarray:
    """Solve ``pi P = pi``, ``sum(pi) = 1`` for irreducible ``P``.

    A direct solve of ``P^T - I`` with the last equation replaced by the
    normalization row; falls back to power iteration on the lazy chain if the
    factorization is singular or the residual misses ``tol``.
    """
    p = np.asarray(p, dtype=np.float64)
    _check_irreducible(p)
    K = len(p)
    a = p.T - np.eye(K)
    a[-1, :] = 1.0
    b = np.zeros(K)
    b[-1] = 1.0
    try:
        pi = np.linalg.solve(a, b)
    except np.linalg.LinAlgError:
        pi = _power_stationary(p, tol, max_iter)
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    if np.abs(pi @ p - pi).sum() > tol:
        pi = _power_stationary(p, tol, max_iter)
        if np.abs(pi @ p - pi).sum() > tol:
            raise NoConvergence(max_iter)
    return pi


def period_and_classes(p) -> tuple[int, tuple]:
    """Period ``d`` and cyclic classes ``C_0..C_{d-1}`` (1-based labels).

    BFS levels from state 1; ``d`` is the gcd of ``level(u) + 1 - level(v)``
    over all positive entries ``(u, v)``. ``C_l`` collects states with
    ``level mod d == l``, so state 1 is always in ``C_0``.
    """
    p = np.asarray(p, dtype=np.float64)
    _check_irreducible(p)
    K = len(p)
    adj = [np.flatnonzero(p[u] > 0.0) for u in range(K)]
    level = [-1] * K
    level[0] = 0
    queue = deque([0])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if level[v] < 0:
                level[v] = level[u] + 1
                queue.append(v)
    d = 0
    for u in range(K):
        for v in adj[u]:
            d = math.gcd(d, abs(level[u] + 1 - level[v]))
    d = max(d, 1)
    classes = tuple(tuple(i + 1 for i in range(K) if level[i] % d == l) for l in range(d))
    return d, classes


def constant_matrix(pi) -> np.ndarray:
    pi = np.asarray(pi, dtype=np.float64)
    return np.tile(pi, (len(pi), 1))


def check_periodic_strong_ergodicity(p, horizon: int = 4096, tol: float = 1e-10) -> ErgodicReport:
    """Numerically certify that every cyclic-class block ``T_l`` of ``P^d`` is strongly ergodic.

    Powers of each ``T_l`` are tracked until ``||T_l^n - R_l||`` drops to
    ``tol`` (the curve stops there). Raises :class:`HorizonExceeded` if some
    class is still above ``tol`` after ``horizon`` powers.
    """
    p = np.asarray(p, dtype=np.float64)
    d, classes = period_and_classes(p)
    pd = np.linalg.matrix_power(p, d)
    curves = []
    for l, cls in enumerate(classes):
        idx = np.array(cls) - 1
        t = pd[np.ix_(idx, idx)]
        r = constant_matrix(stationary_distribution(t) if len(idx) > 1 else [1.0])
        cur = np.eye(len(idx))
        pts = []
        res = math.inf
        for n in range(1, horizon + 1):
            cur = cur @ t
            res = matrix_norm(cur - r)
            pts.append((n, res))
            if res <= tol:
                break
        curves.append(DiagnosticCurve(f"strong_ergodicity_C{l}", pts, {"class": l}))
        if res > tol:
            raise HorizonExceeded(l, res)
    pi = stationary_distribution(p)
    return ErgodicReport(
        period=d,
        classes=classes,
        pi=pi,
        strong_ergodicity_residuals=tuple(curves),
        constant_matrix_R=constant_matrix(pi),
        horizon=horizon,
        tol=tol,
    )


def log_grid(n_max: int, per_decade: int = 10) -> np.ndarray:
    """Integers 1..n_max roughly evenly spaced in log scale, always including n_max."""
    if n_max < 1:
        return np.empty(0, dtype=np.int64)
    pts = np.unique(np.round(np.logspace(0, math.log10(n_max), per_decade * max(1, math.ceil(math.log10(n_max + 1))) + 1)))
    pts = pts[(pts >= 1) & (pts <= n_max)].astype(np.int64)
    return np.unique(np.append(pts, n_max))


def strong_ergodicity_curve(schedule: TransitionSchedule, r, m: int, n_max: int) -> DiagnosticCurve:
    """``(n, ||P^(m,m+n) - R||)`` for ``n = 1..n_max``."""
    r = np.asarray(r, dtype=np.float64)
    mats = schedule.stack(m + 1, m + n_max)
    cur = np.eye(schedule.dim)
    pts = []
    for n in range(1, n_max + 1):
        cur = cur @ mats[n - 1]
        pts.append((n, matrix_norm(cur - r)))
    return DiagnosticCurve("strong_ergodicity", pts, {"m": m})


def cesaro_uniform_diagnostic(
    schedule: TransitionSchedule, r, n_max: int, m_max: int = DEFAULT_M_MAX, grid=None
) -> DiagnosticCurve:
    """``max_{0<=m<=m_max} ||(1/n) sum_{t=1..n} P^(m,m+t) - R||`` on a log grid.

    All starting epochs advance together: one batched product per step.
    """
    r = np.asarray(r, dtype=np.float64)
    grid = log_grid(n_max) if grid is None else np.asarray(grid, dtype=np.int64)
    want = set(int(g) for g in grid)
    K = schedule.dim
    mats = schedule.stack(1, m_max + n_max)
    prod = np.broadcast_to(np.eye(K), (m_max + 1, K, K)).copy()
    acc = np.zeros_like(prod)
    ms = np.arange(m_max + 1)
    pts = []
    for t in range(1, n_max + 1):
        prod = prod @ mats[ms + t - 1]
        acc += prod
        if t in want:
            dev = np.abs(acc / t - r).sum(axis=2).max(axis=1)
            pts.append((t, float(dev.max())))
    return DiagnosticCurve("cesaro_eq3", pts, {"m_max": m_max, "sup_truncated": True})


def condition4_diagnostic(schedule: TransitionSchedule, p, n_max: int, m_max: int = DEFAULT_M_MAX, grid=None) -> DiagnosticCurve:
    """``max_{0<=m<=m_max} (1/n) sum_{k=1..n} ||P_{k+m} - P||`` on a log grid."""
    p = np.asarray(p, dtype=np.float64)
    grid = log_grid(n_max) if grid is None else np.asarray(grid, dtype=np.int64)
    mats = schedule.stack(1, n_max + m_max)
    dist = np.abs(mats - p).sum(axis=2).max(axis=1)
    csum = np.concatenate([[0.0], np.cumsum(dist)])
    pts = []
    for n in grid:
        m = np.arange(m_max + 1)
        vals = (csum[m + n] - csum[m]) / n
        pts.append((int(n), float(vals.max())))
    return DiagnosticCurve("cond4", pts, {"m_max": m_max, "sup_truncated": True})


def delta_sequence(schedule: TransitionSchedule, n: int) -> np.ndarray:
    """``[delta(P_1), ..., delta(P_n)]``."""
    if schedule.kind == "homogeneous":
        return np.full(n, dobrushin_delta(schedule.base))
    mats = schedule.stack(1, n)
    out = np.empty(n)
    step = max(1, 4096 // schedule.dim**3)
    for lo in range(0, n, step):
        blk = mats[lo : lo + step]
        diff = blk[:, :, None, :] - blk[:, None, :, :]
        out[lo : lo + step] = np.maximum(diff, 0.0).sum(axis=3).max(axis=(1, 2))
    return np.clip(out, 0.0, 1.0)


def condition6_diagnostic(schedule: TransitionSchedule, n_max: int, grid=None) -> DiagnosticCurve:
    """``(n, sum_{k<=n} delta(P_k) / sqrt(n))`` on a log grid."""
    grid = log_grid(n_max) if grid is None else np.asarray(grid, dtype=np.int64)
    csum = np.cumsum(delta_sequence(schedule, n_max))
    return DiagnosticCurve("cond6", [(int(n), float(csum[n - 1] / math.sqrt(n))) for n in grid])
