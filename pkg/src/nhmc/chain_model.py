"""Finite truncations of countable nonhomogeneous Markov chains.

States are labelled ``1..K`` in the public surface and ``0..K-1`` in arrays.
A stochastic matrix is a read-only float64 ``ndarray`` that has been through
:func:`validate_matrix`; there is no wrapper class.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, NegativeEntry, RowSumOutOfTolerance, ConfigError

ROW_TOL = 1e-12


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


def _fix_row_sums(m: np.ndarray) -> None:
    # Division alone can leave a row one ulp off 1; push the residue into the largest
    # entry, summing exactly as matrix_norm does so that ||P|| == 1.0 afterwards.
    m /= m.sum(axis=1, keepdims=True)
    big = np.argmax(m, axis=1)
    rows = np.arange(m.shape[0])
    for _ in range(4):
        r = 1.0 - m.sum(axis=1)
        if not r.any():
            return
        m[rows, big] += r
    for i in np.flatnonzero(m.sum(axis=1) != 1.0):
        _nudge_row(m, i)


def _nudge_row(m: np.ndarray, i: int) -> None:
    # Smaller entries have finer ulps; walk them a few ulps until the row sums to 1.0.
    row = m[i : i + 1]
    for j in np.argsort(row[0])[::-1]:
        if row[0, j] == 0.0:
            continue
        orig = row[0, j]
        toward = 2.0 if row.sum() < 1.0 else 0.0
        for _ in range(8):
            row[0, j] = np.nextafter(row[0, j], toward)
            if row.sum(axis=1)[0] == 1.0:
                return
        row[0, j] = orig


def validate_matrix(m, tol: float = ROW_TOL) -> np.ndarray:
    """Check that ``m`` is row-stochastic and return a renormalized read-only copy.

    Raises :class:`NegativeEntry` for any entry below zero and
    :class:`RowSumOutOfTolerance` (with a 1-based row index) when a row sum is
    farther than ``tol`` from 1.
    """
    a = np.array(m, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ConfigError("matrix has non-finite entries")
    neg = np.argwhere(a < 0.0)
    if len(neg):
        i, j = neg[0]
        raise NegativeEntry(int(i) + 1, int(j) + 1, float(a[i, j]))
    sums = a.sum(axis=1)
    for i, s in enumerate(sums):
        if abs(s - 1.0) > tol:
            raise RowSumOutOfTolerance(i + 1, float(s))
    _fix_row_sums(a)
    a.setflags(write=False)
    return a


def matrix_norm(a) -> float:
    """Maximum absolute row sum, ``sup_i sum_j |a_ij|``."""
    a = np.asarray(a, dtype=np.float64)
    if a.size == 0:
        return 0.0
    return float(np.abs(a).sum(axis=1).max())


@dataclass(frozen=True)
class StateSpace:
    size: int

    def __post_init__(self):
        if int(self.size) != self.size or self.size < 2:
            raise ConfigError(f"state space needs K >= 2, got {self.size!r}")


def validate_distribution(weights, tol: float = ROW_TOL) -> np.ndarray:
    w = np.array(weights, dtype=np.float64)
    if w.ndim != 1:
        raise DimensionMismatch("initial distribution must be a vector")
    if np.any(w < 0.0):
        i = int(np.argmax(w < 0.0))
        raise NegativeEntry(1, i + 1, float(w[i]))
    s = w.sum()
    if abs(s - 1.0) > tol:
        raise RowSumOutOfTolerance(1, float(s))
    w = w / s
    w.setflags(write=False)
    return w


@dataclass(frozen=True)
class EpsilonSchedule:
    """Perturbation sizes ``eps_k`` for ``k >= 1``.

    ``power``: ``c * k**-p``; ``geometric``: ``c * r**k``; ``explicit``:
    ``values[k-1]``, holding the last value once the list runs out.
    """

    form: str
    c: float = 1.0
    p: float = 1.0
    r: float = 0.5
    values: tuple = ()

    def __post_init__(self):
        if self.form == "power":
            if not self.c > 0 or not self.p > 0:
                raise ConfigError("power form needs c > 0 and p > 0")
            if self.c > 1:
                raise ConfigError("power form needs c <= 1 so that eps_1 <= 1")
        elif self.form == "geometric":
            if not self.c > 0 or not 0 < self.r < 1:
                raise ConfigError("geometric form needs c > 0 and r in (0,1)")
            if self.c * self.r > 1:
                raise ConfigError("geometric form needs c*r <= 1 so that eps_1 <= 1")
        elif self.form == "explicit":
            vals = tuple(float(v) for v in self.values)
            if not vals:
                raise ConfigError("explicit epsilon schedule needs at least one value")
            if any(not 0.0 <= v <= 1.0 for v in vals):
                raise ConfigError("explicit epsilon values must lie in [0,1]")
            object.__setattr__(self, "values", vals)
        else:
            raise ConfigError(f"unknown epsilon form {self.form!r}")

    def upto(self, n: int) -> np.ndarray:
        """Array ``[eps_1, ..., eps_n]``."""
        k = np.arange(1, n + 1, dtype=np.float64)
        if self.form == "power":
            return self.c * k ** (-self.p)
        if self.form == "geometric":
            return self.c * self.r**k
        vals = np.asarray(self.values)
        idx = np.minimum(np.arange(n), len(vals) - 1)
        return vals[idx]

    def __call__(self, k: int) -> float:
        return float(self.upto(k)[k - 1])


@dataclass(frozen=True)
class TransitionSchedule:
    """The sequence ``P_1, P_2, ...``.

    Build with :meth:`explicit`, :meth:`homogeneous` or
    :func:`make_perturbed_schedule`. An explicit list holds its last matrix
    for every ``k`` past its end.
    """

    kind: str
    matrices: tuple = ()
    base: np.ndarray | None = None
    alt: np.ndarray | None = None
    eps: EpsilonSchedule | None = None

    @classmethod
    def explicit(cls, matrices: Sequence) -> "TransitionSchedule":
        if not matrices:
            raise ConfigError("explicit schedule needs at least one matrix")
        mats = tuple(validate_matrix(m) for m in matrices)
        if len({m.shape for m in mats}) != 1:
            raise DimensionMismatch("explicit schedule matrices differ in size")
        return cls("explicit", matrices=mats)

    @classmethod
    def homogeneous(cls, p) -> "TransitionSchedule":
        return cls("homogeneous", base=validate_matrix(p))

    @property
    def dim(self) -> int:
        if self.kind == "explicit":
            return self.matrices[0].shape[0]
        return self.base.shape[0]

    def limit_matrix(self) -> np.ndarray:
        """The matrix the schedule is built to approach: base, or the held last matrix."""
        if self.kind == "explicit":
            return self.matrices[-1]
        return self.base

    def __call__(self, k: int) -> np.ndarray:
        """``P_k`` for ``k >= 1``."""
        if k < 1:
            raise ValueError("schedule is indexed from k = 1")
        if self.kind == "homogeneous":
            return self.base
        if self.kind == "explicit":
            return self.matrices[min(k, len(self.matrices)) - 1]
        e = self.eps(k)
        return (1.0 - e) * self.base + e * self.alt

    def stack(self, start: int, stop: int) -> np.ndarray:
        """``P_start, ..., P_stop`` as a ``(stop-start+1, K, K)`` array."""
        count = stop - start + 1
        if count <= 0:
            return np.empty((0, self.dim, self.dim))
        if self.kind == "homogeneous":
            return np.broadcast_to(self.base, (count,) + self.base.shape)
        if self.kind == "explicit":
            idx = np.minimum(np.arange(start, stop + 1), len(self.matrices)) - 1
            return np.stack(self.matrices)[idx]
        e = self.eps.upto(stop)[start - 1 :][:, None, None]
        return (1.0 - e) * self.base + e * self.alt

    def unique_matrices(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        """Distinct matrices among ``P_1..P_n`` and the index of each step into them.

        Keeps homogeneous schedules O(K^2) in memory however long the path.
        """
        if self.kind == "homogeneous":
            return self.base[None].copy(), np.zeros(n, dtype=np.int64)
        if self.kind == "explicit":
            mats = np.stack(self.matrices)
            idx = np.minimum(np.arange(n), len(self.matrices) - 1).astype(np.int64)
            return mats, idx
        return np.ascontiguousarray(self.stack(1, n)), np.arange(n, dtype=np.int64)


def make_perturbed_schedule(base, alt, eps: EpsilonSchedule) -> TransitionSchedule:
    """Schedule with ``P_k = (1 - eps_k) * base + eps_k * alt``."""
    b = validate_matrix(base)
    a = validate_matrix(alt)
    if a.shape != b.shape:
        raise DimensionMismatch(f"base is {b.shape}, alt is {a.shape}")
    return TransitionSchedule("perturbed", base=b, alt=a, eps=eps)


@dataclass(frozen=True)
class Observable:
    """Bounded function on states; ``bound`` defaults to ``max |f|``."""

    values: np.ndarray
    bound: float | None = None

    def __post_init__(self):
        v = _frozen(np.asarray(self.values, dtype=np.float64).ravel())
        object.__setattr__(self, "values", v)
        m = float(np.max(np.abs(v))) if self.bound is None else float(self.bound)
        if np.max(np.abs(v)) > m:
            raise ConfigError(f"observable exceeds its bound M={m}")
        object.__setattr__(self, "bound", m)

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class ChainSpec:
    initial: np.ndarray
    schedule: TransitionSchedule
    space: StateSpace = field(default=None)

    def __post_init__(self):
        init = validate_distribution(self.initial)
        object.__setattr__(self, "initial", init)
        if self.space is None:
            object.__setattr__(self, "space", StateSpace(len(init)))
        K = self.space.size
        if len(init) != K or self.schedule.dim != K:
            raise DimensionMismatch(
                f"K={K}, initial has {len(init)} entries, schedule is {self.schedule.dim}x{self.schedule.dim}"
            )

    @property
    def K(self) -> int:
        return self.space.size

    def check_observable(self, f: Observable) -> None:
        if len(f) != self.K:
            raise DimensionMismatch(f"observable has {len(f)} values for K={self.K}")


@dataclass(frozen=True)
class Path:
    """Realized states ``X_0..X_n`` (1-based labels)."""

    states: np.ndarray
    seed: int = 0
    index: int = 0

    def __post_init__(self):
        s = np.asarray(self.states, dtype=np.int64)
        if s.ndim != 1 or len(s) == 0 or s.min() < 1:
            raise ConfigError("path states must be a non-empty vector of labels >= 1")
        s = s.copy()
        s.setflags(write=False)
        object.__setattr__(self, "states", s)

    @property
    def n(self) -> int:
        return len(self.states) - 1


def transition_block(schedule: TransitionSchedule, m: int, n: int) -> np.ndarray:
    """``P^(m,n) = P_{m+1} ... P_n``; the identity when ``n == m``."""
    if n < m or m < 0:
        raise ValueError(f"need 0 <= m <= n, got m={m}, n={n}")
    out = np.eye(schedule.dim)
    for k in range(m + 1, n + 1):
        out = out @ schedule(k)
    return out


def marginals(spec: ChainSpec, n: int) -> np.ndarray:
    """Rows ``mu^(0), ..., mu^(n)`` stacked into an ``(n+1, K)`` array."""
    out = np.empty((n + 1, spec.K))
    out[0] = spec.initial
    mats = spec.schedule.stack(1, n)
    for k in range(1, n + 1):
        out[k] = out[k - 1] @ mats[k - 1]
    return out


def marginal(spec: ChainSpec, k: int) -> np.ndarray:
    """Law of ``X_k``: ``mu^(0) P_1 ... P_k``."""
    if k < 0:
        raise ValueError("k must be >= 0")
    return marginals(spec, k)[k]


def expected_sum(spec: ChainSpec, f: Observable, n: int) -> float:
    """``E[S_n] = sum_{k=1..n} E f(X_k)`` by a single marginal recursion."""
    if n < 1:
        raise ValueError("n must be >= 1")
    spec.check_observable(f)
    mu = marginals(spec, n)
    return float(np.sum(mu[1:] @ f.values))
