"""Block activation schedules and their covering diagnostics.

A schedule is the deterministic sequence (I_n) of nonempty subsets of
{1, ..., m} driving which operators get re-evaluated at iteration n. Every
schedule here satisfies the K-window covering condition: the union of any K
consecutive blocks is the full index set. The module also builds the
triangular weight rows mu_{n,j} induced by a schedule, together with the
three structural checks (row sums, band width, diagonal mass) that make the
array concentrating, and the lag identity tying the rows to last-activation
indices.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .operators import check_weights


class CoveringError(ValueError):
    """The K-window covering condition failed, or a schedule is corrupt."""


class BlockSchedule:
    """Deterministic generator n -> I_n over {1, ..., m} with covering constant K."""

    def __init__(self, m, K, block_fn, name=""):
        if m < 1 or K < 1:
            raise ValueError("m and K must be >= 1")
        self.m = int(m)
        self.K = int(K)
        self.name = name
        self._block_fn = block_fn
        self._full = frozenset(range(1, self.m + 1))

    def block(self, n):
        """The activated index set I_n (1-based indices)."""
        if n < 0:
            raise ValueError("block index must be >= 0")
        blk = frozenset(self._block_fn(n))
        if not blk:
            raise CoveringError(f"schedule {self.name!r}: empty block at n={n}")
        if not blk <= self._full:
            raise CoveringError(
                f"schedule {self.name!r}: block {sorted(blk)} at n={n} "
                f"not within 1..{self.m}"
            )
        return blk

    def __repr__(self):
        return f"BlockSchedule(m={self.m}, K={self.K}, name={self.name!r})"


def make_cyclic(m, block_size):
    """Consecutive wrapped index windows of the given size; K = ceil(m / size)."""
    if not 1 <= block_size <= m:
        raise ValueError("block_size must lie in 1..m")
    K = -(-m // block_size)

    def block_fn(n):
        start = (n * block_size) % m
        return frozenset((start + j) % m + 1 for j in range(block_size))

    return BlockSchedule(m, K, block_fn, name=f"cyclic({m},{block_size})")


def make_full(m):
    """Full activation I_n = {1, ..., m}, K = 1."""
    return make_cyclic(m, m)


def make_quasicyclic_random(m, K, seed):
    """Seeded random nonempty blocks with forced sweep completion.

    At every n >= K-1, any index that was not activated during the previous
    K-1 steps is inserted into I_n, so the covering condition holds by
    construction rather than by rejection sampling.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    rng = np.random.default_rng(seed)
    cache = []
    everything = frozenset(range(1, m + 1))

    def extend():
        n = len(cache)
        size = int(rng.integers(1, m + 1))
        picks = set(rng.choice(m, size=size, replace=False) + 1)
        if n >= K - 1:
            recent = set()
            for blk in cache[n - K + 1:n]:
                recent |= blk
            picks |= everything - recent
        cache.append(frozenset(picks))

    def block_fn(n):
        while len(cache) <= n:
            extend()
        return cache[n]

    return BlockSchedule(m, K, block_fn, name=f"quasicyclic({m},{K},seed={seed})")


def make_explicit(m, K, blocks):
    """Schedule repeating the given list of 1-based index lists."""
    fixed = [frozenset(int(i) for i in blk) for blk in blocks]
    if not fixed:
        raise ValueError("need at least one block")
    for blk in fixed:
        if not blk or not blk <= set(range(1, m + 1)):
            raise ValueError(f"block {sorted(blk)} invalid for m={m}")

    def block_fn(n):
        return fixed[n % len(fixed)]

    return BlockSchedule(m, K, block_fn, name="explicit")


def schedule_from_spec(spec):
    """Build a schedule from a config mapping.

    Recognized forms:
      {"type": "cyclic", "m": ..., "block_size": ...}
      {"type": "quasicyclic", "m": ..., "K": ..., "seed": ...}
      {"type": "explicit", "m": ..., "K": ..., "blocks": [[...], ...]}
    """
    kind = spec.get("type")
    m = int(spec["m"])
    if kind == "cyclic":
        return make_cyclic(m, int(spec.get("block_size", 1)))
    if kind == "quasicyclic":
        return make_quasicyclic_random(m, int(spec["K"]), int(spec.get("seed", 0)))
    if kind == "explicit":
        return make_explicit(m, int(spec["K"]), spec["blocks"])
    raise ValueError(f"unknown schedule type {kind!r}")


def validate_covering(schedule, horizon):
    """Check the K-window covering condition on all windows inside ``horizon``.

    Returns None when every window {n, ..., n+K-1} with n + K <= horizon
    covers {1, ..., m}; otherwise returns (n, missing) for the first window
    start n that fails, with the sorted missing indices.
    """
    K = schedule.K
    if horizon < K:
        raise ValueError("horizon must be at least K")
    everything = set(range(1, schedule.m + 1))
    window = [schedule.block(k) for k in range(K)]
    for n in range(horizon - K + 1):
        union = set().union(*window)
        if union != everything:
            return n, sorted(everything - union)
        if n + K < horizon:
            window.pop(0)
            window.append(schedule.block(n + K))
    return None


def require_covering(schedule, horizon):
    violation = validate_covering(schedule, horizon)
    if violation is not None:
        n, missing = violation
        raise CoveringError(
            f"covering violated: indices {missing} absent from window starting "
            f"at n={n} (K={schedule.K})"
        )


def last_activation(schedule, i, n):
    """The last-activation index c(i, n) = max{k in {n-K+1, ..., n} : i in I_k}."""
    K = schedule.K
    if n < K - 1:
        raise ValueError(f"last activation needs n >= K-1 = {K - 1}")
    if not 1 <= i <= schedule.m:
        raise ValueError(f"operator index {i} out of range 1..{schedule.m}")
    for k in range(n, n - K, -1):
        if i in schedule.block(k):
            return k
    raise CoveringError(
        f"index {i} never activated in window {n - K + 1}..{n}; schedule corrupt"
    )


@dataclass
class ConcentratingRow:
    """Sparse row of the schedule-induced triangular array (at most K nonzeros)."""

    n: int
    entries: dict = field(default_factory=dict)

    def total(self):
        return float(sum(self.entries.values()))

    def diagonal(self):
        return float(self.entries.get(self.n, 0.0))

    def dot(self, xs):
        return float(sum(mu * xs[j] for j, mu in self.entries.items()))


def mu_row(schedule, weights, n):
    """Row n of the concentrating array induced by the schedule and weights.

    For n <= K-2 the row is the unit mass at j = n. From n = K-1 on, entry j
    carries the total weight of the indices whose last activation in the
    trailing window happened at step j:

        mu_{n,j} = sum of w_i over i in I_j minus union of I_{j+1}, ..., I_n,

    for j in {n-K+1, ..., n}, and 0 elsewhere. Rows are row-stochastic, the
    diagonal mass is at least min_i w_i, and entries vanish once n - j >= K.
    """
    w = check_weights(weights)
    if w.size != schedule.m:
        raise ValueError("one weight per operator index required")
    if n < 0:
        raise ValueError("row index must be >= 0")
    K = schedule.K
    if n <= K - 2:
        return ConcentratingRow(n=n, entries={n: 1.0})
    entries = {}
    seen = set()
    for j in range(n, n - K, -1):
        fresh = schedule.block(j) - seen
        if fresh:
            entries[j] = float(sum(w[i - 1] for i in sorted(fresh)))
        seen |= schedule.block(j)
    return ConcentratingRow(n=n, entries=entries)


@dataclass
class ConcentratingReport:
    passed: bool
    sum_ok: bool
    band_ok: bool
    diagonal_infimum: float
    failures: list

    def __bool__(self):
        return self.passed


def check_concentrating(rows, K, sum_tol=1e-12):
    """Verify the three concentrating-array conditions on the given rows.

    (i) each row sums to 1 within ``sum_tol``; (ii) no mass at depth
    n - j >= K; (iii) the diagonal masses are bounded away from 0. The report
    carries the observed diagonal infimum and the first few failures.
    """
    failures = []
    sum_ok = band_ok = True
    diag_inf = np.inf
    for row in rows:
        if abs(row.total() - 1.0) > sum_tol:
            sum_ok = False
            failures.append((row.n, "row-sum", row.total()))
        for j, mu in row.entries.items():
            if mu != 0.0 and (row.n - j >= K or j > row.n or j < 0):
                band_ok = False
                failures.append((row.n, "band", j))
        diag_inf = min(diag_inf, row.diagonal())
    diag_ok = diag_inf > 0.0
    if not diag_ok:
        failures.append((None, "diagonal", diag_inf))
    return ConcentratingReport(
        passed=sum_ok and band_ok and diag_ok,
        sum_ok=sum_ok,
        band_ok=band_ok,
        diagonal_infimum=float(diag_inf),
        failures=failures,
    )


def lag_identity_check(schedule, weights, n, xs, tol=1e-12):
    """Check sum_j mu_{n,j} xs_j == sum_i w_i xs_{c(i,n)} at index n >= K-1.

    Both sides are computed independently (row dot product versus weighted
    last-activation gather); returns True when they agree within ``tol``.
    """
    w = check_weights(weights)
    xs = np.asarray(xs, dtype=float)
    if xs.ndim != 1 or xs.size != n + 1:
        raise ValueError(f"xs must have length n+1 = {n + 1}")
    if np.any(xs < 0):
        raise ValueError("xs entries must be nonnegative")
    lhs = mu_row(schedule, w, n).dot(xs)
    rhs = float(
        sum(w[i - 1] * xs[last_activation(schedule, i, n)]
            for i in range(1, schedule.m + 1))
    )
    return abs(lhs - rhs) <= tol
