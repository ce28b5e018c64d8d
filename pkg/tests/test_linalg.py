"""Factorizations, Schur condensation, and the projected CG kernel."""

import numpy as np
import pytest
import scipy.sparse as sp

from ddlab import (
    CondensedSubdomain, FactorizationError, KrylovReport, ResidualHistory,
    factorize_semidefinite, factorize_spd, pcg, schur_complement, small_pinv,
    spring2,
)
from ddlab.linalg import condense_force

# 3-node unit spring chain, middle node internal
CHAIN = np.array([[1.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 1.0]])
SPRING = np.array([[1.0, -1.0], [-1.0, 1.0]])


def _random_spd(n, seed, cond=None):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, n))
    A = X @ X.T + n * np.eye(n)
    if cond is not None:
        w, V = np.linalg.eigh(A)
        w = np.logspace(0.0, np.log10(cond), n)
        A = (V * w) @ V.T
    return 0.5 * (A + A.T)


def test_factorize_spd_dense_and_sparse():
    A = _random_spd(8, 0)
    b = np.random.default_rng(1).standard_normal(8)
    x_ref = np.linalg.solve(A, b)
    np.testing.assert_allclose(factorize_spd(A)(b), x_ref, rtol=1e-10)
    np.testing.assert_allclose(factorize_spd(sp.csr_matrix(A))(b), x_ref, rtol=1e-10)
    assert factorize_spd(np.zeros((0, 0)))(np.zeros(0)).shape == (0,)


def test_factorize_spd_rejects_indefinite():
    with pytest.raises(FactorizationError):
        factorize_spd(np.array([[0.0, 1.0], [1.0, 0.0]]))
    with pytest.raises(FactorizationError):
        factorize_spd(sp.csr_matrix(np.zeros((2, 2))))


def test_generalized_inverse_spring_pair():
    R = np.full((2, 1), 1.0 / np.sqrt(2.0))
    gi = factorize_semidefinite(SPRING, R)
    assert gi.n_modes == 1
    assert gi.fixed.size == 1
    # particular solution keeps the fixed dof at zero
    np.testing.assert_allclose(gi.apply(np.array([-1.0, 1.0])), [0.0, 1.0], atol=1e-14)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("n_kernel", [1, 2])
def test_generalized_inverse_is_symmetric_inner_inverse(seed, n_kernel):
    n = 10
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n - n_kernel, n))
    K = X.T @ X
    K = 0.5 * (K + K.T)
    _, _, Vt = np.linalg.svd(K)
    R = Vt[n - n_kernel:].T
    gi = factorize_semidefinite(K, R, rng_seed=seed)
    Kp = gi.apply(np.eye(n))
    np.testing.assert_allclose(Kp, Kp.T, atol=1e-10)
    scale = np.abs(K).max()
    np.testing.assert_allclose(K @ Kp @ K, K, atol=1e-9 * scale)
    np.testing.assert_allclose(Kp @ K @ Kp, Kp, atol=1e-9 * np.abs(Kp).max())


def test_generalized_inverse_rejects_bad_kernel():
    # claiming a kernel on a definite matrix fails the probe check
    with pytest.raises(FactorizationError):
        factorize_semidefinite(np.diag([1.0, 2.0, 3.0]), np.eye(3)[:, :1])
    # missing kernel direction: flexibility probe cannot reproduce K x
    K = np.diag([0.0, 0.0, 1.0])
    with pytest.raises(FactorizationError):
        factorize_semidefinite(K, np.eye(3)[:, :1])
    # basis collapses on its own pivot rows
    R = np.array([[1.0, 1.0], [1.0, 1.0], [0.0, 0.0]])
    with pytest.raises(FactorizationError):
        factorize_semidefinite(K, R)


def test_schur_complement_chain():
    S = schur_complement(CHAIN, boundary=[0, 2])
    np.testing.assert_allclose(S, [[0.5, -0.5], [-0.5, 0.5]], atol=1e-14)
    # boundary order permutes the result consistently
    S_rev = schur_complement(CHAIN, boundary=[2, 0])
    np.testing.assert_allclose(S_rev, S[np.ix_([1, 0], [1, 0])], atol=1e-14)
    np.testing.assert_allclose(schur_complement(sp.csr_matrix(CHAIN), [0, 2]), S)
    # no internal dofs: plain boundary block
    np.testing.assert_allclose(schur_complement(SPRING, [0, 1]), SPRING)


def test_schur_complement_singular_internal_block():
    K = np.array([[1.0, 0.0], [0.0, 0.0]])
    with pytest.raises(FactorizationError):
        schur_complement(K, boundary=[0])


def test_condense_force_chain():
    f = np.array([0.0, 1.0, 0.0])
    np.testing.assert_allclose(condense_force(CHAIN, f, [0, 2]), [0.5, 0.5])
    np.testing.assert_allclose(condense_force(SPRING, [0.0, 1.0], [0]), [1.0])
    np.testing.assert_allclose(condense_force(SPRING, [3.0, 4.0], [0, 1]), [3.0, 4.0])


def test_small_pinv_spring():
    P = small_pinv(SPRING)
    np.testing.assert_allclose(P, 0.25 * SPRING, atol=1e-14)


@pytest.mark.parametrize("seed", range(4))
def test_small_pinv_penrose(seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((2, 4))
    M = A.T @ A
    M = 0.5 * (M + M.T)
    P = small_pinv(M)
    s = np.abs(M).max()
    np.testing.assert_allclose(M @ P @ M, M, atol=1e-11 * s)
    np.testing.assert_allclose(P @ M @ P, P, atol=1e-11 * np.abs(P).max())
    np.testing.assert_allclose(M @ P, (M @ P).T, atol=1e-11)


def test_small_pinv_rejects_asymmetric():
    with pytest.raises(ValueError):
        small_pinv(np.array([[1.0, 2.0], [0.0, 1.0]]))
    assert small_pinv(np.zeros((0, 0))).shape == (0, 0)


def test_condensed_subdomain_spring_pair():
    prob = spring2()
    cond = CondensedSubdomain(prob.systems[1])
    np.testing.assert_allclose(cond.schur, [[0.0]], atol=1e-14)
    np.testing.assert_allclose(cond.f_cond, [1.0])
    np.testing.assert_allclose(cond.boundary_modes, [[1.0]])
    assert cond.schur_solve.n_modes == 1
    # boundary value 1 plus the condensed interior gives the exact local field
    u = cond.expand(np.array([1.0]), f=prob.systems[1].f)
    np.testing.assert_allclose(u, [1.0, 2.0], atol=1e-14)
    # the grounded side has no kernel and a definite Schur complement
    other = CondensedSubdomain(prob.systems[0])
    assert other.boundary_modes.shape == (1, 0)
    assert other.schur_solve.n_modes == 0


def test_pcg_identity_converges_immediately():
    rhs = np.random.default_rng(3).standard_normal(6)
    x, rep = pcg(lambda v: v, rhs=rhs, tol=1e-12)
    assert rep.termination == "converged"
    assert rep.iterations == 1
    np.testing.assert_allclose(x, rhs, atol=1e-13)


def test_pcg_exact_in_dimension_steps():
    A = _random_spd(5, 7)
    b = np.arange(1.0, 6.0)
    x, rep = pcg(lambda v: A @ v, rhs=b, tol=1e-12, maxit=50)
    assert rep.termination == "converged"
    assert rep.iterations <= 5
    np.testing.assert_allclose(x, np.linalg.solve(A, b), rtol=1e-8)
    # residual norms are recorded per iterate, initial state included
    assert len(rep.residual_norms) == rep.iterations + 1
    assert rep.values[0] == 1.0


def test_pcg_reorthogonalization_controls_defect():
    # at condition 1e6 plain CG loses direction orthogonality to rounding and
    # blows past the finite-termination bound; the reorthogonalized run keeps
    # the defect at machine level and stops within n steps
    A = _random_spd(40, 11, cond=1e6)
    b = np.ones(40)
    x, rep = pcg(lambda v: A @ v, rhs=b, tol=1e-8, maxit=200)
    assert rep.termination == "converged"
    assert rep.iterations <= 40
    assert rep.orthogonality_defect() <= 1e-10
    np.testing.assert_allclose(A @ x, b, atol=1e-8 * np.linalg.norm(b))
    _, rep_plain = pcg(lambda v: A @ v, rhs=b, tol=1e-8, maxit=200,
                       reorthogonalize=False)
    assert rep_plain.iterations > rep.iterations
    assert rep_plain.orthogonality_defect() > 1e-2


def test_pcg_custom_convergence_energy_error_is_monotone():
    A = _random_spd(12, 5)
    b = np.random.default_rng(6).standard_normal(12)
    x_star = np.linalg.solve(A, b)

    def energy_error(x, r, z, k):
        e = x - x_star
        return np.sqrt(e @ A @ e)

    e0 = energy_error(np.zeros(12), None, None, 0)
    x, rep = pcg(lambda v: A @ v, rhs=b,
                 convergence=lambda x, r, z, k: energy_error(x, r, z, k) / e0,
                 tol=1e-9, maxit=100)
    assert rep.termination == "converged"
    values = np.asarray(rep.values)
    assert np.all(np.diff(values) <= 1e-12)


def test_pcg_maxit_and_floor():
    A = _random_spd(6, 9)
    b = np.ones(6)
    _, rep = pcg(lambda v: A @ v, rhs=b, tol=1e-30, maxit=2)
    assert rep.termination == "maxit"
    assert rep.iterations == 2
    # an unreachable monitored target stops at the residual floor instead
    _, rep = pcg(lambda v: A @ v, rhs=b, tol=-1.0, maxit=500)
    assert rep.termination == "floor"


def test_pcg_projected_iterates_stay_admissible():
    rng = np.random.default_rng(21)
    A = _random_spd(10, 13)
    Q, _ = np.linalg.qr(rng.standard_normal((10, 2)))

    class Orth:
        def apply(self, v):
            return v - Q @ (Q.T @ v)

        apply_t = apply

    x0 = rng.standard_normal(10)
    b = rng.standard_normal(10)
    x, rep = pcg(lambda v: A @ v, projector=Orth(), rhs=b, x0=x0, tol=1e-10)
    assert rep.termination == "converged"
    # every update lives in range(P), so the constraint value never moves
    np.testing.assert_allclose(Q.T @ (x - x0), 0.0, atol=1e-10)


def test_pcg_empty_problem():
    x, rep = pcg(lambda v: v, rhs=np.zeros(0))
    assert x.shape == (0,)
    assert rep.termination == "converged"
    assert rep.values == [0.0]


def test_krylov_report_defect_empty():
    assert KrylovReport().orthogonality_defect() == 0.0


def test_residual_history_rows():
    h = ResidualHistory()
    h.add(0, 1.0, 1.0, 0.0)
    h.add(1, 0.5, 0.25, 0.01)
    assert h.iterations == 1
    assert h.interface_residuals == [1.0, 0.5]
    assert h.global_residuals == [1.0, 0.25]
    assert h.rows[1].interface_residual == 0.5
    assert ResidualHistory().iterations == 0
