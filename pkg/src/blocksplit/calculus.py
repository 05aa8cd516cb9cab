"""Concrete averaged operators: projectors onto standard convex sets,
proximity operators, resolvents of monotone linear maps, Yosida steps, and
the gradient of smooth distance penalties phi(d_D(Lx)).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, lu_factor, lu_solve

from .operators import AveragedOp, as_point

MEMBERSHIP_TOL = 1e-14


# ---------------------------------------------------------------------------
# convex sets

class ConvexSet:
    """A nonempty closed convex set with an exact projector."""

    dim = None

    def project(self, x):
        raise NotImplementedError

    def distance(self, x):
        x = as_point(x, dim=self.dim)
        return float(np.linalg.norm(x - self.project(x)))

    def contains(self, x, tol=MEMBERSHIP_TOL):
        return self.distance(x) <= tol


class Box(ConvexSet):
    def __init__(self, lower, upper):
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        if self.lower.shape != self.upper.shape or self.lower.ndim != 1:
            raise ValueError("box bounds must be 1-D and equally shaped")
        if np.any(self.lower > self.upper):
            raise ValueError("empty box: lower > upper somewhere")
        self.dim = self.lower.size

    def project(self, x):
        return np.clip(as_point(x, dim=self.dim), self.lower, self.upper)


class Halfspace(ConvexSet):
    """{x : <a, x> <= b} with a != 0."""

    def __init__(self, a, b):
        self.a = as_point(a)
        self.b = float(b)
        self.dim = self.a.size
        self._aa = float(np.dot(self.a, self.a))
        if self._aa == 0.0:
            raise ValueError("halfspace normal must be nonzero")

    def project(self, x):
        x = as_point(x, dim=self.dim)
        excess = np.dot(self.a, x) - self.b
        if excess <= 0.0:
            return x
        return x - (excess / self._aa) * self.a


class Hyperplane(ConvexSet):
    """{x : <a, x> = b} with a != 0."""

    def __init__(self, a, b):
        self.a = as_point(a)
        self.b = float(b)
        self.dim = self.a.size
        self._aa = float(np.dot(self.a, self.a))
        if self._aa == 0.0:
            raise ValueError("hyperplane normal must be nonzero")

    def project(self, x):
        x = as_point(x, dim=self.dim)
        return x - ((np.dot(self.a, x) - self.b) / self._aa) * self.a


class Ball(ConvexSet):
    def __init__(self, center, radius):
        self.center = as_point(center)
        self.radius = float(radius)
        if self.radius <= 0.0:
            raise ValueError("ball radius must be positive")
        self.dim = self.center.size

    def project(self, x):
        x = as_point(x, dim=self.dim)
        r = x - self.center
        nr = np.linalg.norm(r)
        if nr <= self.radius:
            return x
        return self.center + (self.radius / nr) * r


class AffineSubspace(ConvexSet):
    """{x : Ax = b} for a full-row-rank A; the projector factorization is
    computed once at construction and rank deficiency is rejected there."""

    def __init__(self, A, b):
        self.A = np.asarray(A, dtype=float)
        self.b = np.asarray(b, dtype=float)
        if self.A.ndim != 2 or self.b.shape != (self.A.shape[0],):
            raise ValueError("need a k x d matrix and a length-k right-hand side")
        self.dim = self.A.shape[1]
        gram = self.A @ self.A.T
        try:
            self._factor = cho_factor(gram)
        except np.linalg.LinAlgError as exc:
            raise ValueError("affine system is rank deficient") from exc

    def project(self, x):
        x = as_point(x, dim=self.dim)
        resid = self.A @ x - self.b
        return x - self.A.T @ cho_solve(self._factor, resid)


class Singleton(ConvexSet):
    def __init__(self, point):
        self.point = as_point(point)
        self.dim = self.point.size

    def project(self, x):
        as_point(x, dim=self.dim)
        return self.point.copy()


class FullSpace(ConvexSet):
    """All of R^d; projecting is the identity (an unconstrained 'hard' set)."""

    def __init__(self, dim):
        self.dim = int(dim)

    def project(self, x):
        return as_point(x, dim=self.dim)


def project(convex_set, x):
    """Nearest point of ``convex_set`` to ``x``."""
    return convex_set.project(x)


def set_from_spec(spec):
    """Build a set from a config mapping, e.g. {"set": "ball", "center": [0, 0],
    "radius": 1}."""
    kind = spec.get("set")
    if kind == "box":
        return Box(spec["lower"], spec["upper"])
    if kind == "halfspace":
        return Halfspace(spec["a"], spec["b"])
    if kind == "hyperplane":
        return Hyperplane(spec["a"], spec["b"])
    if kind == "ball":
        return Ball(spec["center"], spec["radius"])
    if kind == "affine":
        return AffineSubspace(spec["A"], spec["b"])
    if kind == "singleton":
        return Singleton(spec["point"])
    if kind == "full":
        return FullSpace(int(spec["dim"]))
    raise ValueError(f"unknown set kind {kind!r}")


def projector_op(convex_set, name=None):
    """Projectors are firmly nonexpansive, hence 1/2-averaged."""
    return AveragedOp(
        convex_set.project,
        dim=convex_set.dim,
        alpha=0.5,
        lipschitz=1.0,
        name=name or f"proj[{type(convex_set).__name__}]",
    )


# ---------------------------------------------------------------------------
# proximity operators

def prox_l1(x, t):
    """Componentwise soft threshold, the proximity operator of t * l1-norm."""
    if t < 0:
        raise ValueError("threshold must be nonnegative")
    x = as_point(x)
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def prox_l1_op(dim, t):
    return AveragedOp(lambda x: prox_l1(x, t), dim=dim, alpha=0.5, lipschitz=1.0,
                      name=f"prox_l1[{t}]")


def prox_separable(x, scalar_prox_list):
    """Apply one scalar proximity map per coordinate of ``x``."""
    x = as_point(x)
    if len(scalar_prox_list) != x.size:
        raise ValueError("need exactly one scalar prox per coordinate")
    return np.array([float(p(xi)) for p, xi in zip(scalar_prox_list, x)])


# ---------------------------------------------------------------------------
# resolvents

def _check_monotone_linear(A, tol=1e-10):
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("need a square matrix")
    sym = 0.5 * (A + A.T)
    lo = float(np.linalg.eigvalsh(sym).min())
    if lo < -tol:
        raise ValueError(f"matrix is not monotone: min eigenvalue {lo} of symmetric part")
    return A


def linear_resolvent_op(A, gamma, lipschitz=1.0):
    """The resolvent (I + gamma*A)^{-1} of a monotone linear A, prefactored.

    Monotonicity of A (positive semidefinite symmetric part, eigenvalue
    tolerance 1e-10) is checked here once; the induced operator is firmly
    nonexpansive.
    """
    A = _check_monotone_linear(A)
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    d = A.shape[0]
    try:
        factor = lu_factor(np.eye(d) + gamma * A)
    except np.linalg.LinAlgError as exc:
        raise ValueError("resolvent solve broke down numerically") from exc
    return AveragedOp(lambda x: lu_solve(factor, x), dim=d, alpha=0.5,
                      lipschitz=lipschitz, name=f"J[{gamma}A]")


def resolvent_linear(A, gamma, x):
    """Solve (I + gamma*A) v = x for a monotone linear A."""
    op = linear_resolvent_op(A, gamma)
    return op(as_point(x, dim=op.dim))


def yosida(resolvent, rho, x):
    """The Yosida step (x - J_{rho A} x) / rho given the resolvent at index rho."""
    if rho <= 0:
        raise ValueError("rho must be positive")
    x = as_point(x)
    return (x - np.asarray(resolvent(x), dtype=float)) / rho


# ---------------------------------------------------------------------------
# smooth scalar penalties and linear maps

@dataclass(frozen=True)
class SmoothScalar:
    """A differentiable scalar function with a Lipschitz derivative.

    ``even_vanishing_at_zero`` flags the shape required by the distance
    penalties: even, nonnegative, and zero only at the origin.
    """

    value: callable
    derivative: callable
    lipschitz_of_derivative: float
    even_vanishing_at_zero: bool = False
    name: str = ""

    def __post_init__(self):
        if self.lipschitz_of_derivative <= 0:
            raise ValueError("derivative Lipschitz constant must be positive")


def square():
    return SmoothScalar(lambda t: t * t, lambda t: 2.0 * t, 2.0,
                        even_vanishing_at_zero=True, name="square")


def half_square():
    return SmoothScalar(lambda t: 0.5 * t * t, lambda t: t, 1.0,
                        even_vanishing_at_zero=True, name="half_square")


def huber(delta=1.0):
    if delta <= 0:
        raise ValueError("delta must be positive")

    def value(t):
        a = abs(t)
        return 0.5 * t * t if a <= delta else delta * a - 0.5 * delta * delta

    return SmoothScalar(value, lambda t: float(np.clip(t, -delta, delta)), 1.0,
                        even_vanishing_at_zero=True, name=f"huber[{delta}]")


def check_derivative(phi, n_samples=200, seed=0, tol=1e-6, spread=3.0):
    """Compare phi.derivative against central differences of phi.value."""
    rng = np.random.default_rng(seed)
    h = 1e-6
    worst = 0.0
    for _ in range(n_samples):
        t = spread * rng.standard_normal()
        fd = (phi.value(t + h) - phi.value(t - h)) / (2.0 * h)
        err = abs(fd - phi.derivative(t)) / (1.0 + abs(phi.derivative(t)))
        worst = max(worst, err)
    return worst <= tol, worst


class LinearMap:
    """A dense linear map with its adjoint and power-iteration operator norm."""

    def __init__(self, matrix, norm_seed=0):
        self.matrix = np.asarray(matrix, dtype=float)
        if self.matrix.ndim != 2:
            raise ValueError("need a 2-D matrix")
        self.codomain_dim, self.domain_dim = self.matrix.shape
        self.norm = self._power_norm(norm_seed)

    def __call__(self, x):
        return self.matrix @ as_point(x, dim=self.domain_dim)

    def adjoint(self, y):
        return self.matrix.T @ as_point(y, dim=self.codomain_dim)

    def _power_norm(self, seed, rel_tol=1e-10, max_iters=10_000):
        gram = self.matrix.T @ self.matrix
        v = np.random.default_rng(seed).standard_normal(self.domain_dim)
        v /= np.linalg.norm(v)
        sigma2 = 0.0
        for _ in range(max_iters):
            gv = gram @ v
            new = float(np.dot(v, gv))
            ngv = np.linalg.norm(gv)
            if ngv == 0.0:
                return 0.0
            v = gv / ngv
            if abs(new - sigma2) <= rel_tol * max(new, 1e-300):
                sigma2 = new
                break
            sigma2 = new
        return float(np.sqrt(max(sigma2, 0.0)))


def identity_map(dim):
    return LinearMap(np.eye(dim))


def row_map(a):
    """The functional x -> <x, a> as a 1 x d linear map."""
    return LinearMap(np.asarray(a, dtype=float).reshape(1, -1))


# ---------------------------------------------------------------------------
# distance penalty gradient

def distance_penalty_value(phi, L, D, x):
    """phi(d_D(L x))."""
    return float(phi.value(D.distance(L(x))))


def grad_distance_penalty(phi, L, D, x):
    """Gradient of x -> phi(d_D(Lx)) for an even phi vanishing only at 0.

    Returns 0 whenever Lx lies in D (projection residual below 1e-14), and

        (phi'(d) / d) * L^T (Lx - proj_D(Lx)),   d = d_D(Lx),

    otherwise. The Lipschitz constant of this gradient is mu * ||L||^2 where
    mu is the Lipschitz constant of phi'.
    """
    if not phi.even_vanishing_at_zero:
        raise ValueError("phi must be flagged even and vanishing only at 0")
    x = as_point(x, dim=L.domain_dim)
    y = L(x)
    resid = y - D.project(y)
    d = float(np.linalg.norm(resid))
    if d <= MEMBERSHIP_TOL:
        return np.zeros(L.domain_dim)
    return (phi.derivative(d) / d) * L.adjoint(resid)


def gradient_step_op(grad, beta, gamma, dim, lipschitz=None, name=""):
    """The forward step Id - gamma*A for a beta-cocoercive A.

    Cocoercivity makes the step gamma/(2*beta)-averaged for gamma in (0, 2*beta).
    """
    if beta <= 0:
        raise ValueError("cocoercivity constant must be positive")
    if not 0.0 < gamma < 2.0 * beta:
        raise ValueError(f"step {gamma} outside (0, {2.0 * beta})")
    alpha = gamma / (2.0 * beta)
    return AveragedOp(lambda x: x - gamma * np.asarray(grad(x), dtype=float),
                      dim=dim, alpha=alpha, lipschitz=lipschitz,
                      name=name or "forward-step")
