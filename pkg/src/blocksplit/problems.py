"""Builders translating concrete problem classes into solver inputs.

Each builder emits the outer operator, the inner operator family, and the
weights, with the fixed-point inclusion required by the solver holding by
construction. All builders are autonomous except the cohypomonotone one,
whose resolvent indices may vary per iteration.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .calculus import (ConvexSet, LinearMap, SmoothScalar, grad_distance_penalty,
                       gradient_step_op, distance_penalty_value, projector_op,
                       prox_l1, row_map)
from .operators import (AveragedOp, as_point, certify_averaged, check_weights,
                        identity_op)
from .solver import SolverConfig, run, run_economical


@dataclass
class BuiltProblem:
    """Solver inputs produced by a builder, plus instance metadata."""

    t0: object
    ts: object
    weights: np.ndarray
    dim: int
    m: int
    gamma: float | None = None
    objective: callable = None
    name: str = ""
    meta: dict = field(default_factory=dict)

    def solve(self, schedule, x0, economical=False, x_ref=None, **cfg_kwargs):
        cfg = SolverConfig(weights=self.weights, schedule=schedule, **cfg_kwargs)
        runner = run_economical if economical else run
        return runner(self.t0, self.ts, cfg, x0, x_ref=x_ref)

    def op(self, i, n=0):
        """Operator i at iteration n (i = 0 is the outer operator)."""
        if i == 0:
            return self.t0 if isinstance(self.t0, AveragedOp) else self.t0(n)
        if isinstance(self.ts, (list, tuple)):
            return self.ts[i - 1]
        return self.ts(i, n)


def _uniform(m):
    return np.full(m, 1.0 / m)


def _resolve_weights(weights, m):
    w = _uniform(m) if weights is None else check_weights(weights)
    if w.size != m:
        raise ValueError(f"expected {m} weights")
    return np.asarray(w, dtype=float)


def _certify(ops, sample_count, seed, what):
    for k, op in enumerate(ops):
        cert = certify_averaged(op, sample_count=sample_count, seed=seed + k)
        if not cert.passed:
            raise ValueError(
                f"{what}: operator {op.name!r} failed its averagedness "
                f"certificate (max violation {cert.max_violation:.3e})"
            )


# ---------------------------------------------------------------------------
# common fixed points and residual systems

def build_common_fixed_point(Ts, weights=None, certify_samples=128, seed=0):
    """Seek a common fixed point of firmly nonexpansive operators.

    The outer operator is the identity; solving drives the iterates into the
    intersection of the fixed point sets when it is nonempty.
    """
    ops = list(Ts)
    if not ops:
        raise ValueError("need at least one operator")
    dim = ops[0].dim
    for op in ops:
        if op.alpha > 0.5:
            raise ValueError(
                f"operator {op.name!r} declares alpha={op.alpha} > 1/2; "
                "firm nonexpansiveness required"
            )
    if certify_samples:
        _certify(ops, certify_samples, seed, "common fixed point")
    w = _resolve_weights(weights, len(ops))
    return BuiltProblem(t0=identity_op(dim), ts=ops, weights=w, dim=dim,
                        m=len(ops), name="common_fixed_point")


def build_residual_system(Rs, rs, weights=None, certify_samples=128, seed=0):
    """Solve r_i = R_i x for firmly nonexpansive R_i via T_i = r_i + Id - R_i.

    When the system is inconsistent the iteration still settles on a fixed
    point of Id + sum_i w_i (r_i - R_i), the natural relaxation.
    """
    Rs = list(Rs)
    if len(Rs) != len(rs):
        raise ValueError("one target per operator required")
    dim = Rs[0].dim
    if certify_samples:
        _certify(Rs, certify_samples, seed, "residual system")
    targets = [as_point(r, dim=dim) for r in rs]
    ops = []
    for k, (R, r) in enumerate(zip(Rs, targets)):
        if R.alpha > 0.5:
            raise ValueError(f"operator {R.name!r} is not firmly nonexpansive")

        def fn(x, R=R, r=r):
            return r + x - R(x)

        ops.append(AveragedOp(fn, dim=dim, alpha=0.5, name=f"residual[{k + 1}]"))
    w = _resolve_weights(weights, len(ops))

    def gap(x):
        return max(float(np.linalg.norm(R(x) - r)) for R, r in zip(Rs, targets))

    return BuiltProblem(t0=identity_op(dim), ts=ops, weights=w, dim=dim,
                        m=len(ops), name="residual_system",
                        meta={"system_gap": gap})


# ---------------------------------------------------------------------------
# cohypomonotone inclusions

def build_cohypomonotone(resolvents, rhos, gammas, dim, weights=None,
                         margin=1e-3, certify_samples=128, seed=0):
    """Common zeros of cohypomonotone operators via relaxed resolvents.

    ``resolvents[i]`` must evaluate (gamma, x) -> J_{gamma A_i} x, and
    ``gammas`` is either a list of per-operator constants or a callable
    (i, n) -> gamma with gamma >= rho_i + margin. Each emitted operator

        T_{i,n} = Id + (1 - rho_i/gamma) (J_{gamma A_i} - Id)

    is firmly nonexpansive with Fix T_{i,n} = zer A_i, so the fixed-point
    inclusion holds at every iteration even though gamma may vary. With every
    rho_i = 0 and full activation this is the barycentric proximal method.

    The structural hypothesis on each A_i (maximal rho_i-cohypomonotonicity)
    cannot be verified from an evaluable resolvent and is trusted; the
    certificate below only samples firm nonexpansiveness of the emitted
    operators.
    """
    m = len(resolvents)
    rhos = np.asarray(rhos, dtype=float)
    if rhos.shape != (m,) or np.any(rhos < 0):
        raise ValueError("need one rho >= 0 per operator")
    if callable(gammas):
        gamma_at = gammas
    else:
        consts = [float(g) for g in gammas]
        if len(consts) != m:
            raise ValueError("need one gamma per operator")
        gamma_at = lambda i, n: consts[i - 1]

    def make_op(i, n):
        g = float(gamma_at(i, n))
        rho = rhos[i - 1]
        if g < rho + margin:
            raise ValueError(
                f"gamma[{i},{n}] = {g} below admissible rho + margin = {rho + margin}"
            )
        lam = 1.0 - rho / g
        J = resolvents[i - 1]

        def fn(x):
            jx = np.asarray(J(g, x), dtype=float)
            return x + lam * (jx - x)

        return AveragedOp(fn, dim=dim, alpha=0.5, name=f"relaxed-J[{i},{n}]")

    if certify_samples:
        _certify([make_op(i, 0) for i in range(1, m + 1)], certify_samples,
                 seed, "cohypomonotone")
    w = _resolve_weights(weights, m)
    return BuiltProblem(t0=identity_op(dim), ts=make_op, weights=w, dim=dim,
                        m=m, name="cohypomonotone",
                        meta={"gamma_at": gamma_at, "rhos": rhos})


def quadratic_resolvent(Q, minimizer):
    """Resolvent provider (gamma, x) -> J for the gradient map Q (x - z)."""
    Q = np.asarray(Q, dtype=float)
    z = as_point(minimizer)
    d = z.size
    if Q.shape != (d, d):
        raise ValueError("Q must be square and match the minimizer dimension")
    if float(np.linalg.eigvalsh(0.5 * (Q + Q.T)).min()) < -1e-10:
        raise ValueError("Q must be positive semidefinite")

    def J(gamma, x):
        return np.linalg.solve(np.eye(d) + gamma * Q, x + gamma * (Q @ z))

    return J


# ---------------------------------------------------------------------------
# forward-backward splitting and proximal gradients

def build_forward_backward(a0_resolvent, As, betas, dim, gamma=None,
                           weights=None, lipschitz0=None, lipschitzs=None):
    """Solve 0 in A_0 x + sum_i w_i A_i x with cocoercive A_i.

    ``a0_resolvent`` evaluates (gamma, x) -> J_{gamma A_0} x; each A_i must be
    beta_i-cocoercive so that Id - gamma A_i is averaged for
    gamma < 2 min beta_i. With A_0 a normal cone this solves the associated
    variational inequality.
    """
    m = len(As)
    betas = np.asarray(betas, dtype=float)
    if betas.shape != (m,) or np.any(betas <= 0):
        raise ValueError("need one positive cocoercivity constant per operator")
    bound = 2.0 * float(betas.min())
    if gamma is None:
        gamma = 0.9 * bound
    if not 0.0 < gamma < bound:
        raise ValueError(f"gamma must lie in (0, {bound}), got {gamma}")
    lipschitzs = lipschitzs or [None] * m
    ops = [gradient_step_op(A, float(b), gamma, dim, lipschitz=l,
                            name=f"forward[{k + 1}]")
           for k, (A, b, l) in enumerate(zip(As, betas, lipschitzs))]
    t0 = AveragedOp(lambda x: np.asarray(a0_resolvent(gamma, x), dtype=float),
                    dim=dim, alpha=0.5, lipschitz=lipschitz0, name="J[gamma A0]")
    w = _resolve_weights(weights, m)
    return BuiltProblem(t0=t0, ts=ops, weights=w, dim=dim, m=m, gamma=gamma,
                        name="forward_backward")


def normal_cone_resolvent(C):
    """Resolvent of the normal cone of C, i.e. the projector for any gamma."""
    return lambda gamma, x: C.project(x)


def build_prox_grad(f0_prox, grads, betas, dim, gamma=None, weights=None,
                    objective=None, meta=None):
    """Minimize f_0 + sum_i w_i f_i with smooth f_i and proximable f_0.

    ``f0_prox`` evaluates (gamma, x) -> prox_{gamma f_0} x; ``grads[i]`` is
    the gradient of f_i with a 1/beta_i Lipschitz constant.
    """
    m = len(grads)
    betas = np.asarray(betas, dtype=float)
    if betas.shape != (m,) or np.any(betas <= 0):
        raise ValueError("need one positive beta per gradient")
    bound = 2.0 * float(betas.min())
    if gamma is None:
        gamma = 0.9 * bound
    if not 0.0 < gamma < bound:
        raise ValueError(f"gamma must lie in (0, {bound}), got {gamma}")
    ops = [gradient_step_op(g, float(b), gamma, dim, name=f"grad-step[{k + 1}]")
           for k, (g, b) in enumerate(zip(grads, betas))]
    t0 = AveragedOp(lambda x: np.asarray(f0_prox(gamma, x), dtype=float),
                    dim=dim, alpha=0.5, lipschitz=1.0, name="prox[gamma f0]")
    w = _resolve_weights(weights, m)
    meta = dict(meta or {})
    meta.setdefault("f0_prox", f0_prox)
    meta.setdefault("smooth_grad",
                    lambda x: sum(wi * np.asarray(g(x), dtype=float)
                                  for wi, g in zip(w, grads)))
    return BuiltProblem(t0=t0, ts=ops, weights=w, dim=dim, m=m, gamma=gamma,
                        objective=objective, name="prox_grad", meta=meta)


def lasso_problem(rows, targets, reg, gamma=None, weights=None):
    """l1-regularized least squares: alpha ||x||_1 + sum_i w_i (<x, a_i> - eta_i)^2."""
    A = np.asarray(rows, dtype=float)
    eta = np.asarray(targets, dtype=float)
    if A.ndim != 2 or eta.shape != (A.shape[0],):
        raise ValueError("rows must be (m, d) with one target per row")
    if reg <= 0:
        raise ValueError("l1 weight must be positive")
    m, dim = A.shape
    sq_norms = (A * A).sum(axis=1)
    if np.any(sq_norms == 0.0):
        raise ValueError("zero rows are not allowed")
    betas = 1.0 / (2.0 * sq_norms)
    w = _resolve_weights(weights, m)

    grads = [(lambda x, a=A[k], e=eta[k]: 2.0 * (float(np.dot(a, x)) - e) * a)
             for k in range(m)]

    def smooth_grad(x):
        r = A @ x - eta
        return A.T @ (2.0 * w * r)

    def objective(x):
        r = A @ x - eta
        return reg * float(np.abs(x).sum()) + float(np.dot(w, r * r))

    prob = build_prox_grad(
        f0_prox=lambda g, x: prox_l1(x, g * reg),
        grads=grads,
        betas=betas,
        dim=dim,
        gamma=gamma,
        weights=w,
        objective=objective,
        meta={"l1_weight": reg, "smooth_grad": smooth_grad,
              "rows": A, "targets": eta},
    )
    prob.name = "lasso"
    return prob


def _sigmoid(t):
    # tanh form is overflow-safe for any float t
    return 0.5 * (1.0 + np.tanh(0.5 * t))


def logistic_problem(rows, labels, reg, gamma=None, weights=None):
    """l1-penalized logistic regression with labels in {0, 1}."""
    A = np.asarray(rows, dtype=float)
    eta = np.asarray(labels, dtype=float)
    if A.ndim != 2 or eta.shape != (A.shape[0],):
        raise ValueError("rows must be (m, d) with one label per row")
    if not set(np.unique(eta)) <= {0.0, 1.0}:
        raise ValueError("labels must be 0 or 1")
    if reg <= 0:
        raise ValueError("l1 weight must be positive")
    m, dim = A.shape
    sq_norms = (A * A).sum(axis=1)
    if np.any(sq_norms == 0.0):
        raise ValueError("zero rows are not allowed")
    betas = 4.0 / sq_norms
    w = _resolve_weights(weights, m)

    grads = [(lambda x, a=A[k], e=eta[k]:
              (_sigmoid(float(np.dot(a, x))) - e) * a) for k in range(m)]

    def smooth_grad(x):
        s = _sigmoid(A @ x) - eta
        return A.T @ (w * s)

    def objective(x):
        t = A @ x
        vals = np.logaddexp(0.0, t) - eta * t
        return reg * float(np.abs(x).sum()) + float(np.dot(w, vals))

    prob = build_prox_grad(
        f0_prox=lambda g, x: prox_l1(x, g * reg),
        grads=grads,
        betas=betas,
        dim=dim,
        gamma=gamma,
        weights=w,
        objective=objective,
        meta={"l1_weight": reg, "smooth_grad": smooth_grad,
              "rows": A, "targets": eta},
    )
    prob.name = "logistic"
    return prob


# ---------------------------------------------------------------------------
# relaxed feasibility

def build_feasibility_relaxation(C0, terms, gamma=None, weights=None):
    """Minimize sum_i w_i phi_i(d_{D_i}(L_i x)) over the hard constraint C0.

    ``terms`` is a list of (L, D, phi) with L a LinearMap, D a ConvexSet and
    phi an even smooth penalty vanishing only at 0. When the underlying
    feasibility problem is consistent, minimizers are exactly its solutions.
    Existence of a minimizer is the caller's responsibility (e.g. via
    coercivity or a bounded C0); unbounded iterates are the observable
    failure mode when none exists.
    """
    if not isinstance(C0, ConvexSet):
        raise ValueError("C0 must be a ConvexSet")
    terms = list(terms)
    if not terms:
        raise ValueError("need at least one (L, D, phi) term")
    dim = C0.dim
    mus = []
    for L, D, phi in terms:
        if not isinstance(L, LinearMap) or not isinstance(D, ConvexSet):
            raise ValueError("each term must be (LinearMap, ConvexSet, SmoothScalar)")
        if not isinstance(phi, SmoothScalar) or not phi.even_vanishing_at_zero:
            raise ValueError("phi must be flagged even and vanishing only at 0")
        if L.domain_dim != dim or L.codomain_dim != D.dim:
            raise ValueError("dimension mismatch in (L, D) term")
        if L.norm <= 0.0:
            raise ValueError("linear maps must be nonzero")
        mus.append(phi.lipschitz_of_derivative * L.norm ** 2)
    beta = 1.0 / max(mus)
    if gamma is None:
        gamma = 0.9 * 2.0 * beta
    if not 0.0 < gamma < 2.0 * beta:
        raise ValueError(f"gamma must lie in (0, {2.0 * beta}), got {gamma}")

    m = len(terms)
    ops = []
    for k, ((L, D, phi), mu) in enumerate(zip(terms, mus)):
        grad = (lambda x, phi=phi, L=L, D=D: grad_distance_penalty(phi, L, D, x))
        ops.append(gradient_step_op(grad, 1.0 / mu, gamma, dim,
                                    name=f"penalty-step[{k + 1}]"))
    w = _resolve_weights(weights, m)

    def objective(x):
        return float(sum(wi * distance_penalty_value(phi, L, D, x)
                         for wi, (L, D, phi) in zip(w, terms)))

    def feasibility_gap(x):
        return max(float(D.distance(L(x))) for L, D, _ in terms)

    return BuiltProblem(t0=projector_op(C0, name="proj[C0]"), ts=ops, weights=w,
                        dim=dim, m=m, gamma=gamma, objective=objective,
                        name="feasibility_relaxation",
                        meta={"feasibility_gap": feasibility_gap, "beta": beta})


def least_squares_feasibility(rows, targets, gamma=None, weights=None):
    """The classical inconsistent-linear-system relaxation: rows as functionals,
    singleton targets, squared distance penalties, no hard constraint."""
    from .calculus import FullSpace, Singleton, square

    A = np.asarray(rows, dtype=float)
    eta = np.asarray(targets, dtype=float)
    if A.ndim != 2 or eta.shape != (A.shape[0],):
        raise ValueError("rows must be (m, d) with one target per row")
    terms = [(row_map(A[k]), Singleton([eta[k]]), square())
             for k in range(A.shape[0])]
    prob = build_feasibility_relaxation(FullSpace(A.shape[1]), terms,
                                        gamma=gamma, weights=weights)
    prob.name = "least_squares_feasibility"
    prob.meta.update({"rows": A, "targets": eta})
    return prob


def alternating_projections(C, D):
    """Best approximation pair iteration proj_C(proj_D x).

    This is the m = 1 relaxed feasibility instance with L the identity,
    penalty |.|^2 / 2 and unit step, for which the forward step is exactly
    the projector onto D.
    """
    if C.dim != D.dim:
        raise ValueError("sets must live in the same space")

    def objective(x):
        d = D.distance(x)
        return 0.5 * d * d

    def feasibility_gap(x):
        return float(D.distance(x))

    return BuiltProblem(t0=projector_op(C, name="proj[C]"),
                        ts=[projector_op(D, name="proj[D]")],
                        weights=np.array([1.0]), dim=C.dim, m=1, gamma=1.0,
                        objective=objective, name="alternating_projections",
                        meta={"feasibility_gap": feasibility_gap})
