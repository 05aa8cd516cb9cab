"""Averaged operators on R^d and the algebra used to assemble composite
fixed point problems: convex combinations, compositions, relaxations, and
a sampling-based certificate for declared averagedness constants.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NonFiniteError(ValueError):
    """An operator produced, or was handed, a NaN/Inf coordinate."""


def as_point(x, dim=None):
    """Coerce ``x`` to a finite 1-D float64 vector, optionally of length ``dim``."""
    p = np.asarray(x, dtype=float)
    if p.ndim != 1:
        p = np.atleast_1d(p.squeeze())
    if p.ndim != 1:
        raise ValueError(f"point must be one-dimensional, got shape {p.shape}")
    if dim is not None and p.shape[0] != dim:
        raise ValueError(f"dimension mismatch: expected {dim}, got {p.shape[0]}")
    if not np.all(np.isfinite(p)):
        raise NonFiniteError("point has non-finite coordinates")
    return p


def inner(x, y):
    return float(np.dot(x, y))


def norm(x):
    return float(np.linalg.norm(x))


def kahan_weighted_sum(vectors, weights):
    """Compensated weighted sum of equal-length vectors, in the given order.

    Fixing the order and compensating rounding keeps the result reproducible
    and permutation differences at the last-ulp level.
    """
    s = np.zeros_like(np.asarray(vectors[0], dtype=float))
    c = np.zeros_like(s)
    for w, v in zip(weights, vectors):
        term = w * np.asarray(v, dtype=float) - c
        t = s + term
        c = (t - s) - term
        s = t
    return s


def check_weights(weights, tol=1e-12):
    """Validate strictly positive weights summing to one, return as array."""
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise ValueError("weights must be a nonempty 1-D sequence")
    if np.any(w <= 0):
        raise ValueError("weights must be strictly positive")
    if abs(float(w.sum()) - 1.0) > tol:
        raise ValueError(f"weights must sum to 1 within {tol}, got {w.sum()!r}")
    return w


@dataclass(frozen=True)
class AveragedOp:
    """An evaluable operator T: R^dim -> R^dim with declared constants.

    ``alpha`` is the declared averagedness constant in (0, 1]; 1 means the
    operator is only declared nonexpansive. ``lipschitz`` is an optional
    declared Lipschitz constant in (0, 1]. Declared constants are trusted at
    run time; ``certify_averaged`` is the only place they are checked.
    """

    fn: callable = field(repr=False)
    dim: int
    alpha: float
    lipschitz: float | None = None
    name: str = ""

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("operator dimension must be >= 1")
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.lipschitz is not None and not (0.0 < self.lipschitz <= 1.0):
            raise ValueError(f"lipschitz must lie in (0, 1], got {self.lipschitz}")

    def __call__(self, x):
        return apply(self, x)


def apply(op, x):
    """Evaluate ``op`` at ``x`` with dimension and finiteness checks."""
    p = as_point(x, dim=op.dim)
    out = np.asarray(op.fn(p), dtype=float)
    if out.shape != p.shape:
        raise ValueError(
            f"operator {op.name or op!r} is not dimension-preserving: "
            f"{p.shape} -> {out.shape}"
        )
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(f"operator {op.name or op!r} produced non-finite output")
    return out


def identity_op(dim, alpha=0.5):
    return AveragedOp(lambda x: x, dim=dim, alpha=alpha, lipschitz=1.0, name="id")


def scaling_op(dim, c):
    """The map x -> c*x for c in [0, 1]; (1-c)/2-averaged with constant c."""
    if not 0.0 <= c <= 1.0:
        raise ValueError("scaling factor must lie in [0, 1]")
    alpha = (1.0 - c) / 2.0 if c < 1.0 else 0.5
    lip = c if c > 0.0 else None
    return AveragedOp(lambda x: c * x, dim=dim, alpha=alpha, lipschitz=lip,
                      name=f"{c}*id")


def translation_op(dim, shift, alpha=0.5):
    shift = as_point(shift, dim=dim)
    return AveragedOp(lambda x: x + shift, dim=dim, alpha=alpha, lipschitz=1.0,
                      name="translate")


def convex_combination(ops, weights):
    """The operator x -> sum_i w_i T_i x.

    A convex combination of alpha_i-averaged operators is (max alpha_i)-averaged,
    and its Lipschitz constant is the weighted mean of the pieces' constants
    when all of them are declared. Summation runs in ascending index order
    with compensated accumulation.
    """
    ops = list(ops)
    if not ops:
        raise ValueError("need at least one operator")
    w = check_weights(weights)
    if w.size != len(ops):
        raise ValueError("one weight per operator required")
    dim = ops[0].dim
    for op in ops:
        if op.dim != dim:
            raise ValueError("all operators must share one dimension")

    def fn(x):
        return kahan_weighted_sum([apply(op, x) for op in ops], w)

    alpha = max(op.alpha for op in ops)
    lips = [op.lipschitz for op in ops]
    lipschitz = float(np.dot(w, lips)) if all(l is not None for l in lips) else None
    return AveragedOp(fn, dim=dim, alpha=alpha, lipschitz=lipschitz, name="combine")


def compose(outer, inner_op):
    """The operator x -> outer(inner(x)).

    Only nonexpansiveness (alpha = 1) is recorded for the composition; the
    solver needs averagedness constants of the factors, never of the product.
    """
    if outer.dim != inner_op.dim:
        raise ValueError("composition requires equal dimensions")
    lipschitz = None
    if outer.lipschitz is not None and inner_op.lipschitz is not None:
        lipschitz = outer.lipschitz * inner_op.lipschitz

    def fn(x):
        return apply(outer, apply(inner_op, x))

    return AveragedOp(fn, dim=outer.dim, alpha=1.0, lipschitz=lipschitz,
                      name="compose")


def relax(op, lam):
    """The relaxation x -> x + lam*(T x - x), (lam*alpha)-averaged."""
    if lam <= 0.0:
        raise ValueError("relaxation parameter must be positive")
    alpha = lam * op.alpha
    if alpha > 1.0 + 1e-15:
        raise ValueError(
            f"relaxation {lam} out of range for declared alpha {op.alpha} "
            f"(lam*alpha = {alpha} > 1)"
        )

    def fn(x):
        return x + lam * (apply(op, x) - x)

    return AveragedOp(fn, dim=op.dim, alpha=min(alpha, 1.0), name="relax")


@dataclass
class Certificate:
    """Result of sampling the averagedness inequality on random pairs."""

    passed: bool
    max_violation: float        # max normalized defect of the averagedness bound
    lipschitz_checked: bool
    max_lipschitz_violation: float
    sample_count: int
    alpha: float
    tol: float

    def __bool__(self):
        return self.passed


def certify_averaged(op, sample_count=10_000, seed=0, tol=1e-10, spread=2.0):
    """Check the declared alpha of ``op`` on seeded random pairs.

    For an alpha-averaged T and any x, y,

        ||Tx - Ty||^2 <= ||x - y||^2
                         - ((1 - alpha)/alpha) ||(x - Tx) - (y - Ty)||^2,

    so the sampled defect, normalized by 1 + ||x - y||^2, must stay below
    ``tol``. When a Lipschitz constant rho is declared, ||Tx - Ty|| is also
    checked against rho ||x - y|| with the analogous normalization.
    """
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    rng = np.random.default_rng(seed)
    ratio = (1.0 - op.alpha) / op.alpha
    max_violation = -np.inf
    max_lip = -np.inf
    check_lip = op.lipschitz is not None
    for _ in range(sample_count):
        x = spread * rng.standard_normal(op.dim)
        y = spread * rng.standard_normal(op.dim)
        tx = apply(op, x)
        ty = apply(op, y)
        dxy2 = float(np.dot(x - y, x - y))
        dtt2 = float(np.dot(tx - ty, tx - ty))
        res = (x - tx) - (y - ty)
        defect = dtt2 + ratio * float(np.dot(res, res)) - dxy2
        max_violation = max(max_violation, defect / (1.0 + dxy2))
        if check_lip:
            lip_defect = np.sqrt(dtt2) - op.lipschitz * np.sqrt(dxy2)
            max_lip = max(max_lip, lip_defect / (1.0 + np.sqrt(dxy2)))
    passed = max_violation <= tol and (not check_lip or max_lip <= tol)
    return Certificate(
        passed=passed,
        max_violation=float(max_violation),
        lipschitz_checked=check_lip,
        max_lipschitz_violation=float(max_lip) if check_lip else 0.0,
        sample_count=sample_count,
        alpha=op.alpha,
        tol=tol,
    )
