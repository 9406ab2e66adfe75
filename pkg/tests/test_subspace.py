import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings, strategies as st

from gridsentry import subspace as ss
from gridsentry.errors import DesignError, ValidationError

from conftest import dual_conditioned_invariant, orth


def test_image_of_zero_is_trivial():
    S = ss.image(np.zeros((3, 2)))
    assert S.dim == 0 and S.ambient_dim == 3


def test_intersection_of_coordinate_planes():
    e = np.eye(3)
    S = ss.intersect(ss.image(e[:, :2]), ss.image(e[:, 1:]))
    assert S.dim == 1
    assert np.allclose(np.abs(S.basis[:, 0]), e[:, 1])


def test_sum_is_idempotent():
    rng = np.random.default_rng(3)
    S = ss.image(rng.standard_normal((6, 3)))
    T = ss.subspace_sum(S, S)
    assert T.dim == 3 and T.equals(S)


def test_dimension_mismatch():
    with pytest.raises(ValidationError):
        ss.intersect(ss.Subspace.zero(3), ss.Subspace.full(4))


def test_kernel_and_complement():
    M = np.array([[1.0, 1.0, 0.0]])
    K = ss.kernel(M)
    assert K.dim == 2
    assert np.allclose(M @ K.basis, 0)
    P = ss.complement_projector(K)
    assert np.allclose(P @ K.basis, 0)
    assert np.allclose(P @ P, P)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 7), st.integers(0, 7), st.integers(0, 2**31 - 1))
def test_image_invariant_under_basis_rotation(n, k, seed):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((n, min(k, n)))
    Q, _ = np.linalg.qr(rng.standard_normal((M.shape[1], M.shape[1]))) if M.shape[1] else (np.zeros((0, 0)), None)
    assert ss.image(M).equals(ss.image(M @ Q)) if M.shape[1] else ss.image(M).dim == 0


def test_conditioned_invariant_trivial_generator():
    A = np.random.default_rng(0).standard_normal((4, 4))
    S = ss.conditioned_invariant(A, ss.Subspace.full(4), ss.Subspace.zero(4))
    assert S.dim == 0


def test_conditioned_invariant_full_kernel_is_reachability():
    A = np.diag([1.0, 2.0, 3.0])
    A[0, 1] = 1.0
    b = np.array([[0.0], [1.0], [0.0]])
    S = ss.conditioned_invariant(A, ss.Subspace.full(3), ss.image(b))
    krylov = orth(np.hstack([b, A @ b, A @ A @ b]))
    assert S.dim == krylov.shape[1] == 2
    assert ss.image(krylov).equals(S)


def _random_instance(rng):
    n = int(rng.integers(2, 9))
    A = rng.standard_normal((n, n))
    kc, kb = int(rng.integers(0, n + 1)), int(rng.integers(1, n))
    if rng.random() < 0.5:
        A = np.triu(A)
        Ck, Bi = np.eye(n)[:, :kc], np.eye(n)[:, :kb]
    else:
        Ck, Bi = rng.standard_normal((n, kc)), rng.standard_normal((n, kb))
    return A, Ck, Bi


def test_conditioned_invariant_matches_dual_oracle():
    rng = np.random.default_rng(11)
    for _ in range(40):
        A, Ck, Bi = _random_instance(rng)
        S = ss.conditioned_invariant(A, ss.image(Ck), ss.image(Bi))
        O = dual_conditioned_invariant(A, orth(Ck), orth(Bi))
        assert S.dim == O.shape[1]
        assert S.contains(O)
        # fixed point: A (S cap ker) in S, and S contains the generator
        inner = ss.intersect(S, ss.image(Ck))
        assert S.contains(A @ inner.basis)
        assert S.contains(Bi)


def test_output_injection_containment():
    rng = np.random.default_rng(5)
    for _ in range(20):
        n, p = 6, 3
        A = rng.standard_normal((n, n))
        QC = rng.standard_normal((p, n))
        S = ss.conditioned_invariant(A, ss.kernel(QC), ss.image(rng.standard_normal((n, 2))))
        J = ss.solve_output_injection(A, QC, S)
        leak = (np.eye(n) - S.projector()) @ (A + J @ QC) @ S.basis
        assert np.abs(leak).max(initial=0.0) <= 1e-8


def test_output_injection_zero_cases():
    A = np.diag([1.0, -2.0, 3.0])
    QC = np.array([[1.0, 0.0, 0.0]])
    S = ss.image(np.eye(3)[:, 1:2])
    assert np.allclose(ss.solve_output_injection(A, QC, S), 0)
    assert np.allclose(ss.solve_output_injection(A, QC, ss.Subspace.zero(3)), 0)


def test_output_injection_infeasible():
    A = np.array([[0.0, 0.0], [1.0, 0.0]])
    QC = np.array([[0.0, 1.0]])
    S = ss.image(np.array([[1.0], [0.0]]))
    with pytest.raises(ss.GeometricError):
        ss.solve_output_injection(A, QC, S)


def test_scalar_zero():
    # s x - g = 0 and x + g = 0 give s = -1, g = -x
    rep = ss.invariant_zeros(np.zeros((1, 1)), np.ones((1, 1)), np.ones((1, 1)), np.ones((1, 1)))
    assert not rep.degenerate and len(rep) == 1
    z = rep.zeros[0]
    assert abs(z.s + 1) < 1e-10
    assert np.allclose(z.g, -z.x)
    assert z.verify(np.zeros((1, 1)), np.ones((1, 1)), np.ones((1, 1)), np.ones((1, 1)))


def test_full_state_measurement_has_no_zeros():
    rng = np.random.default_rng(2)
    A = rng.standard_normal((4, 4))
    rep = ss.invariant_zeros(A, rng.standard_normal((4, 2)), np.eye(4), np.zeros((4, 2)))
    assert rep.empty and not rep.degenerate


def test_replay_shape_is_degenerate():
    rng = np.random.default_rng(4)
    A = rng.standard_normal((3, 3))
    C = rng.standard_normal((2, 3))
    B = rng.standard_normal((3, 1))
    rep = ss.invariant_zeros(A, np.hstack([B, np.zeros((3, 2))]), C,
                             np.hstack([np.zeros((2, 1)), np.eye(2)]))
    assert rep.degenerate
    M = lambda s: np.block([[s * np.eye(3) - A, -np.hstack([B, np.zeros((3, 2))])],
                            [C, np.hstack([np.zeros((2, 1)), np.eye(2)])]])
    for s in (0.3 + 1j, -2.0, 5.1j):
        assert np.linalg.matrix_rank(M(s)) < 6


def test_square_zeros_match_generalized_eigenvalues():
    rng = np.random.default_rng(9)
    for _ in range(10):
        n, k = 5, 2
        A, B = rng.standard_normal((n, n)), rng.standard_normal((n, k))
        C, D = rng.standard_normal((k, n)), np.zeros((k, k))
        rep = ss.invariant_zeros(A, B, C, D)
        Mp = np.block([[A, B], [C, D]])
        Np = sla.block_diag(np.eye(n), np.zeros((k, k)))
        ev = sla.eigvals(Mp, Np)
        ev = np.sort_complex(ev[np.isfinite(ev)])
        got = np.sort_complex(np.array([z.s for z in rep.zeros]))
        assert len(got) == len(ev)
        assert np.allclose(got, ev, atol=1e-6)
        for z in rep.zeros:
            assert z.verify(A, B, C, D)


def test_nonsquare_zeros_drop_rank():
    rng = np.random.default_rng(13)
    A = rng.standard_normal((4, 4))
    B = rng.standard_normal((4, 1))
    c = rng.standard_normal((1, 4))
    C = np.vstack([c, c])              # duplicated row: tall pencil
    D = np.zeros((2, 1))
    rep = ss.invariant_zeros(A, B, C, D)
    assert len(rep) == 3               # relative degree one, SISO zeros
    for z in rep.zeros:
        M = np.block([[z.s * np.eye(4) - A, -B], [C, D]])
        assert np.linalg.svd(M, compute_uv=False)[-1] < 1e-8


def test_zeros_of_unobservable_modes():
    A = np.diag([-1.0, -2.0, -3.0])
    C = np.array([[1.0, 0.0, 0.0]])
    rep = ss.invariant_zeros(A, np.zeros((3, 0)), C, np.zeros((1, 0)))
    assert np.allclose(sorted(z.s.real for z in rep.zeros), [-3.0, -2.0])


def test_zero_ordering():
    rng = np.random.default_rng(21)
    A, B = rng.standard_normal((6, 6)), rng.standard_normal((6, 1))
    rep = ss.invariant_zeros(A, B, rng.standard_normal((1, 6)), np.zeros((1, 1)))
    keys = [(z.s.real, z.s.imag) for z in rep.zeros]
    assert keys == sorted(keys)


def test_gain_hurwitz_gets_zero():
    A = np.array([[-3.0, 1.0], [0.0, -2.0]])
    G = ss.stabilizing_gain(A, np.array([[1.0, 0.0]]))
    assert np.allclose(G, 0)


def test_gain_double_integrator():
    A = np.array([[0.0, 1.0], [0.0, 0.0]])
    C = np.array([[1.0, 0.0]])
    G = ss.stabilizing_gain(A, C)
    ev = np.linalg.eigvals(A + G @ C)
    assert ev.real.max() <= -0.5 + 1e-9


def test_gain_undetectable():
    A = np.array([[1.0, 0.0], [0.0, -1.0]])
    with pytest.raises(DesignError, match="1"):
        ss.stabilizing_gain(A, np.zeros((1, 2)))


def test_gain_random_margin():
    rng = np.random.default_rng(8)
    for _ in range(20):
        n, p = int(rng.integers(2, 7)), int(rng.integers(1, 4))
        A, C = rng.standard_normal((n, n)), rng.standard_normal((p, n))
        beta = float(rng.uniform(0.1, 2.0))
        G = ss.stabilizing_gain(A, C, beta)
        assert np.linalg.eigvals(A + G @ C).real.max() <= -beta + 1e-6
