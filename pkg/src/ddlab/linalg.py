"""Dense/sparse kernels shared by the dual and primal solvers.

The centerpiece is a generalized inverse for floating (singular) stiffness
blocks: given the kernel basis R, a set of dofs is fixed so that the reduced
matrix is definite, and solves return zeros at the fixed dofs. The fixed set
comes from the pivot columns of a column-pivoted QR of R^T, which guarantees
the kernel restricted to the fixed dofs is nonsingular, hence K K^+ K = K.

Also here: dense Schur complements, force condensation, a truncated symmetric
pseudo-inverse, and a preconditioned conjugate gradient with optional range
projection and full reorthogonalization of search directions.
"""

from __future__ import annotations

from collections import namedtuple
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class FactorizationError(RuntimeError):
    """Raised when a matrix fails its definiteness or kernel contract."""


def factorize_spd(A):
    """Return a solve callable for a symmetric positive definite matrix."""
    if A.shape[0] == 0:
        return lambda b: np.zeros_like(b)
    if sp.issparse(A):
        try:
            lu = spla.splu(A.tocsc())
        except RuntimeError as exc:
            raise FactorizationError(f"sparse factorization failed: {exc}") from exc
        return lu.solve
    try:
        cho = sla.cho_factor(np.asarray(A))
    except np.linalg.LinAlgError as exc:
        raise FactorizationError(f"dense Cholesky failed: {exc}") from exc
    return lambda b: sla.cho_solve(cho, b)


@dataclass
class GeneralizedInverse:
    """Solve operator for a symmetric PSD matrix with known kernel.

    ``apply(b)`` returns the particular solution with zeros at the fixed dofs;
    for b in range(K) it satisfies K apply(b) = b, and the operator is a true
    symmetric generalized inverse (K K^+ K = K, K^+ K K^+ = K^+).
    """

    n: int
    fixed: np.ndarray
    kept: np.ndarray
    kernel: np.ndarray
    _solve: callable

    def apply(self, b):
        b = np.asarray(b, dtype=float)
        if b.ndim == 1:
            x = np.zeros(self.n)
            if self.kept.size:
                x[self.kept] = self._solve(b[self.kept])
            return x
        X = np.zeros((self.n, b.shape[1]))
        if self.kept.size:
            X[self.kept] = self._solve(b[self.kept])
        return X

    @property
    def n_modes(self):
        return self.kernel.shape[1]


def factorize_semidefinite(K, R=None, check=True, rng_seed=1234) -> GeneralizedInverse:
    """Build the fixed-dof generalized inverse of a symmetric PSD matrix.

    R is the (orthonormal or at least full-rank) kernel basis; None or empty
    means definite. The fixed dofs are the first rank(R) pivots of a
    column-pivoted QR of R^T. A probe check verifies K K^+ K x = K x for
    random x to 1e-8 relative; failure means the kernel basis misses a
    null-space direction (or the matrix is not PSD).
    """
    n = K.shape[0]
    if R is None:
        R = np.zeros((n, 0))
    R = np.asarray(R, dtype=float)
    m = R.shape[1]
    if m == 0:
        fixed = np.zeros(0, dtype=np.int64)
        kept = np.arange(n)
        solve = factorize_spd(K)
    else:
        _, _, piv = sla.qr(R.T, pivoting=True, mode="economic")
        fixed = np.sort(piv[:m])
        # the kernel restricted to the fixed dofs must be invertible
        sub = R[fixed, :]
        if np.linalg.matrix_rank(sub, tol=1e-10) < m:
            raise FactorizationError("kernel basis is rank deficient on the pivot dofs")
        kept = np.setdiff1d(np.arange(n), fixed)
        K_red = (K[kept][:, kept] if sp.issparse(K) else np.asarray(K)[np.ix_(kept, kept)])
        solve = factorize_spd(K_red)

    gi = GeneralizedInverse(n, fixed, kept, R, solve)
    if check and n:
        rng = np.random.default_rng(rng_seed)
        Kop = K if sp.issparse(K) else np.asarray(K)
        scale = spla.norm(Kop, ord=1) if sp.issparse(Kop) else np.linalg.norm(Kop, 1)
        for _ in range(3):
            x = rng.standard_normal(n)
            Kx = Kop @ x
            err = np.linalg.norm(Kop @ gi.apply(Kx) - Kx)
            if err > 1e-8 * max(scale * np.linalg.norm(x), 1e-300):
                raise FactorizationError(
                    "generalized inverse check failed: the stiffness has a "
                    "null-space direction not spanned by the supplied modes"
                )
    return gi


def schur_complement(K, boundary, internal=None):
    """Dense Schur complement of the internal block: K_bb - K_bi K_ii^-1 K_ib.

    Raises FactorizationError if the internal block is singular (it must be
    definite whenever the subdomain's kernel has independent boundary traces).
    """
    boundary = np.asarray(boundary, dtype=np.int64)
    if internal is None:
        internal = np.setdiff1d(np.arange(K.shape[0]), boundary)
    internal = np.asarray(internal, dtype=np.int64)
    Kd = K.tocsr() if sp.issparse(K) else np.asarray(K)
    K_bb = np.asarray(
        (Kd[boundary][:, boundary]).todense() if sp.issparse(Kd) else Kd[np.ix_(boundary, boundary)]
    ).reshape(boundary.size, boundary.size)
    if internal.size == 0:
        return K_bb
    K_ib = np.asarray(
        (Kd[internal][:, boundary]).todense() if sp.issparse(Kd) else Kd[np.ix_(internal, boundary)]
    ).reshape(internal.size, boundary.size)
    K_ii = Kd[internal][:, internal] if sp.issparse(Kd) else Kd[np.ix_(internal, internal)]
    try:
        solve = factorize_spd(K_ii)
    except FactorizationError as exc:
        raise FactorizationError(f"internal block is singular: {exc}") from exc
    S = K_bb - K_ib.T @ solve(K_ib)
    return 0.5 * (S + S.T)


def condense_force(K, f, boundary, internal=None, internal_solve=None):
    """Condensed boundary force f_b - K_bi K_ii^-1 f_i."""
    boundary = np.asarray(boundary, dtype=np.int64)
    f = np.asarray(f, dtype=float)
    if internal is None:
        internal = np.setdiff1d(np.arange(K.shape[0]), boundary)
    if internal.size == 0:
        return f[boundary].copy()
    Kd = K.tocsr() if sp.issparse(K) else np.asarray(K)
    K_ib = np.asarray(
        (Kd[internal][:, boundary]).todense() if sp.issparse(Kd) else Kd[np.ix_(internal, boundary)]
    ).reshape(internal.size, boundary.size)
    if internal_solve is None:
        internal_solve = factorize_spd(Kd[internal][:, internal] if sp.issparse(Kd)
                                       else Kd[np.ix_(internal, internal)])
    return f[boundary] - K_ib.T @ internal_solve(f[internal])


def small_pinv(M, rtol=1e-12):
    """Symmetric eigendecomposition pseudo-inverse with relative truncation.

    Eigenvalues below rtol times the largest magnitude are treated as zero.
    Rejects visibly asymmetric input.
    """
    M = np.asarray(M, dtype=float)
    if M.size and np.max(np.abs(M - M.T)) > 1e-10 * max(np.max(np.abs(M)), 1e-300):
        raise ValueError("small_pinv expects a symmetric matrix")
    if M.shape[0] == 0:
        return M.copy()
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    cut = rtol * max(np.max(np.abs(w)), 1e-300)
    inv = np.where(np.abs(w) > cut, 1.0 / np.where(np.abs(w) > cut, w, 1.0), 0.0)
    return (V * inv) @ V.T


class CondensedSubdomain:
    """Lazy per-subdomain operator bundle shared by both solvers.

    Wraps one SubdomainSystem and caches: the internal-block factorization,
    the dense boundary Schur complement, condensed forces, the fixed-dof
    generalized inverse of K, and the generalized inverse of the Schur
    complement with boundary-restricted kernel modes.
    """

    def __init__(self, system):
        self.system = system

    @cached_property
    def internal_solve(self):
        s = self.system
        K_ii = s.K[s.internal][:, s.internal]
        return factorize_spd(K_ii)

    @cached_property
    def K_ib(self):
        s = self.system
        return s.K[s.internal][:, s.boundary].tocsr()

    @cached_property
    def K_bb(self):
        s = self.system
        return s.K[s.boundary][:, s.boundary].tocsr()

    @cached_property
    def schur(self):
        s = self.system
        Kbb = np.asarray(self.K_bb.todense())
        if s.internal.size == 0:
            return Kbb
        Kib = np.asarray(self.K_ib.todense())
        S = Kbb - Kib.T @ self.internal_solve(Kib)
        return 0.5 * (S + S.T)

    @cached_property
    def f_cond(self):
        return self.condense(self.system.f)

    def condense(self, f):
        """Condensed boundary force for an arbitrary local load."""
        s = self.system
        if s.internal.size == 0:
            return np.asarray(f)[s.boundary].copy()
        return np.asarray(f)[s.boundary] - self.K_ib.T @ self.internal_solve(
            np.asarray(f)[s.internal])

    @cached_property
    def solve_full(self) -> GeneralizedInverse:
        return factorize_semidefinite(self.system.K, self.system.R)

    @cached_property
    def boundary_modes(self):
        """Orthonormalized boundary traces of the kernel modes."""
        s = self.system
        if s.n_modes == 0:
            return np.zeros((s.boundary.size, 0))
        Rb = s.R[s.boundary, :]
        u, sv, _ = np.linalg.svd(Rb, full_matrices=False)
        keep = sv > 1e-12 * (sv[0] if sv.size else 1.0)
        return u[:, keep]

    @cached_property
    def schur_solve(self) -> GeneralizedInverse:
        return factorize_semidefinite(self.schur, self.boundary_modes)

    def interior(self, u_b, f=None):
        """Internal dofs from boundary values: K_ii^-1 (f_i - K_ib u_b)."""
        s = self.system
        if s.internal.size == 0:
            return np.zeros(0)
        rhs = -(self.K_ib @ u_b)
        if f is not None:
            rhs = rhs + np.asarray(f)[s.internal]
        return self.internal_solve(rhs)

    def expand(self, u_b, f=None):
        """Full local vector from boundary values plus interior recovery."""
        s = self.system
        u = np.zeros(s.n_dofs)
        u[s.boundary] = u_b
        u[s.internal] = self.interior(u_b, f)
        return u


@dataclass
class KrylovReport:
    """Per-iteration record of one conjugate gradient run.

    ``values`` holds the monitored convergence functional (index = iteration,
    so values[0] is the initial state), ``residual_norms`` the projected
    residual 2-norms, ``precond_norms`` sqrt(r^T z). ``iterations`` counts CG
    steps actually taken. Directions are kept for orthogonality diagnostics.
    """

    iterations: int = 0
    termination: str = ""
    values: list = field(default_factory=list)
    residual_norms: list = field(default_factory=list)
    precond_norms: list = field(default_factory=list)
    negative_curvature: int = 0
    directions: list = field(default_factory=list)
    conjugated: list = field(default_factory=list)
    curvatures: list = field(default_factory=list)

    def orthogonality_defect(self):
        """max |p_i^T A p_j| / (|p_i|_A |p_j|_A) over i != j."""
        k = len(self.directions)
        worst = 0.0
        for i in range(k):
            for j in range(i + 1, k):
                denom = np.sqrt(abs(self.curvatures[i]) * abs(self.curvatures[j]))
                if denom > 0:
                    worst = max(worst, abs(self.directions[i] @ self.conjugated[j]) / denom)
        return worst


def pcg(apply_A, apply_M=None, projector=None, rhs=None, x0=None,
        tol=1e-6, maxit=500, reorthogonalize=True, convergence=None):
    """Projected, preconditioned conjugate gradient.

    Iterates x so that r = P^T (rhs - A x) is driven to zero over directions
    in range(P); preconditioning applies P M to the projected residual (the
    full composition is P M P^T against the unprojected residual). With
    ``reorthogonalize`` each new direction is modified-Gram-Schmidt projected
    against every previous direction in the A-inner product, which makes the
    method a conjugate-direction method robust to loss of orthogonality.

    ``convergence`` maps (x, r, z, k) to the monitored scalar; default is
    sqrt(r^T z) relative to its initial value. Stops when it drops to
    ``tol`` ('converged'), ``maxit`` is reached, or the preconditioned
    residual norm falls 13 orders below its start ('floor': the monitored
    functional is unreachable). Non-finite scalars terminate with
    'breakdown'; negative curvature is counted and iteration continues.
    """
    rhs = np.asarray(rhs, dtype=float)
    n = rhs.shape[0]
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()

    def project(v):
        return v if projector is None else projector.apply(v)

    def project_t(v):
        return v if projector is None else projector.apply_t(v)

    def precondition(r):
        z = r if apply_M is None else apply_M(r)
        return project(z)

    report = KrylovReport()
    if n == 0:
        report.termination = "converged"
        report.values.append(0.0)
        report.residual_norms.append(0.0)
        report.precond_norms.append(0.0)
        return x, report

    r = project_t(rhs - apply_A(x))
    sigma0 = None
    for k in range(maxit + 1):
        z = precondition(r)
        sigma = float(r @ z)
        if not np.isfinite(sigma):
            report.termination = "breakdown"
            break
        if sigma0 is None:
            sigma0 = sigma
        if convergence is not None:
            value = float(convergence(x, r, z, k))
        else:
            value = np.sqrt(max(sigma, 0.0) / sigma0) if sigma0 > 0 else 0.0
        report.values.append(value)
        report.residual_norms.append(float(np.linalg.norm(r)))
        report.precond_norms.append(float(np.sqrt(max(sigma, 0.0))))
        if not np.isfinite(value):
            report.termination = "breakdown"
            break
        if value <= tol:
            report.termination = "converged"
            break
        if k == maxit:
            report.termination = "maxit"
            break
        # own residual at machine floor (sign noise included): no further
        # progress is possible, whatever the monitored functional still wants
        if sigma0 > 0 and abs(sigma) <= 1e-26 * sigma0:
            report.termination = "floor"
            break
        if sigma < 0:
            report.termination = "breakdown"
            break

        p = z.copy()
        if reorthogonalize:
            for pj, Apj, cj in zip(report.directions, report.conjugated, report.curvatures):
                p -= ((p @ Apj) / cj) * pj
        Ap = apply_A(p)
        pAp = float(p @ Ap)
        if not np.isfinite(pAp) or pAp == 0.0:
            report.termination = "breakdown"
            break
        if pAp < 0:
            report.negative_curvature += 1
        alpha = float(r @ p) / pAp
        if not np.isfinite(alpha):
            report.termination = "breakdown"
            break
        x += alpha * p
        r -= alpha * project_t(Ap)
        report.directions.append(p)
        report.conjugated.append(Ap)
        report.curvatures.append(pAp)
        report.iterations += 1

    if not report.termination:
        report.termination = "maxit"
    return x, report


HistoryRow = namedtuple(
    "HistoryRow", "iteration interface_residual global_residual seconds")


@dataclass
class ResidualHistory:
    """Iteration trace shared by both solvers and the experiment harness.

    One row per monitored iterate, including iteration 0 (the initial state):
    (iteration, interface_residual, global_residual, seconds). Seconds are
    wall-clock since the solve started and carry no determinism guarantee.
    """

    rows: list = field(default_factory=list)

    def add(self, iteration, interface_residual, global_residual, seconds):
        self.rows.append(HistoryRow(int(iteration), float(interface_residual),
                                    float(global_residual), float(seconds)))

    @property
    def iterations(self):
        return self.rows[-1][0] if self.rows else 0

    @property
    def interface_residuals(self):
        return [r[1] for r in self.rows]

    @property
    def global_residuals(self):
        return [r[2] for r in self.rows]
