import numpy as np
import pytest

from gridsentry import bundled, build_descriptor, kron_reduce, load_measurements, load_network
from gridsentry.netmodel import NetworkSpec, measurements_from_list

ACCEPTANCE_FILE = "test_acceptance.py"


@pytest.fixture(scope="session")
def g2l1():
    return load_network(bundled("g2l1.json"))


@pytest.fixture(scope="session")
def g2l1_id(g2l1):
    """G2L1 with eight sensors; every sensor attack is identifiable among sensors."""
    d = build_descriptor(g2l1, load_measurements(bundled("g2l1_meas.json")))
    return d, kron_reduce(d)


@pytest.fixture(scope="session")
def g2l1_dup(g2l1):
    """G2L1 whose first two sensors both read the rotor angle of g1."""
    d = build_descriptor(g2l1, load_measurements(bundled("g2l1_dup_meas.json")))
    return d, kron_reduce(d)


@pytest.fixture(scope="session")
def ieee14():
    net = load_network(bundled("ieee14.json"))
    d = build_descriptor(net, load_measurements(bundled("ieee14_meas.json")))
    return d, kron_reduce(d)


def random_network(rng, n_gen=None, n_bus=None):
    """Random connected network: spanning tree on the buses plus extra lines."""
    n = int(rng.integers(2, 5)) if n_gen is None else n_gen
    m = int(rng.integers(max(n, 3), 9)) if n_bus is None else n_bus
    lines = {}
    order = rng.permutation(m)
    for k in range(1, m):
        a, b = int(order[k]), int(order[rng.integers(0, k)])
        lines[frozenset((a, b))] = (a, b, float(rng.uniform(0.5, 3.0)))
    for _ in range(int(rng.integers(0, m))):
        a, b = (int(v) for v in rng.choice(m, 2, replace=False))
        lines.setdefault(frozenset((a, b)), (a, b, float(rng.uniform(0.5, 3.0))))
    return NetworkSpec(rng.uniform(0.5, 3.0, n), rng.uniform(0.3, 2.0, n), m,
                       rng.uniform(1.0, 5.0, n), tuple(lines.values()))


def random_descriptor(rng, p=None):
    net = random_network(rng)
    p = int(rng.integers(2, 6)) if p is None else p
    C = rng.standard_normal((p, net.n_state))
    return build_descriptor(net, C=C)


def dae_rk4(d, u_fun, x0, horizon, h):
    """Reference integrator working on the raw descriptor matrices.

    At every stage the algebraic rows of ``E x' = A x + B u`` are solved
    for the algebraic coordinates before the differential rows are
    evaluated; no reduced matrices are involved.
    """
    E, A, B, C, D = (np.asarray(M) for M in (d.E, d.A, d.B, d.C, d.D))
    diag = np.abs(np.diag(E)) > 0
    dif, alg = np.flatnonzero(diag), np.flatnonzero(~diag)
    Edd = E[np.ix_(dif, dif)]

    def full_state(xd, u):
        rhs = -(A[np.ix_(alg, dif)] @ xd + B[alg] @ u)
        xa = np.linalg.solve(A[np.ix_(alg, alg)], rhs)
        x = np.empty(len(diag))
        x[dif], x[alg] = xd, xa
        return x

    def deriv(xd, u):
        x = full_state(xd, u)
        return np.linalg.solve(Edd, A[dif] @ x + B[dif] @ u)

    n_steps = int(round(horizon / h))
    xd = np.asarray(x0, dtype=float)[dif]
    ys = []
    for k in range(n_steps + 1):
        t = k * h
        u = u_fun(t)
        ys.append(C @ full_state(xd, u) + D @ u)
        if k == n_steps:
            break
        k1 = deriv(xd, u)
        k2 = deriv(xd + 0.5 * h * k1, u_fun(t + 0.5 * h))
        k3 = deriv(xd + 0.5 * h * k2, u_fun(t + 0.5 * h))
        k4 = deriv(xd + h * k3, u_fun(t + h))
        xd = xd + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return np.array(ys)


def orth(M, tol=1e-10):
    """Orthonormal basis of the column space (plain SVD; oracle helper)."""
    M = np.atleast_2d(M)
    if M.size == 0:
        return np.zeros((M.shape[0], 0))
    U, s, _ = np.linalg.svd(M, full_matrices=False)
    r = int(np.sum(s > tol * max(1.0, s[0] if s.size else 0.0)))
    return U[:, :r]


def null(M, tol=1e-10):
    M = np.atleast_2d(M)
    n = M.shape[1]
    if M.shape[0] == 0:
        return np.eye(n)
    _, s, Vt = np.linalg.svd(M)
    r = int(np.sum(s > tol * max(1.0, s[0] if s.size else 0.0)))
    return Vt[r:].T


def dual_conditioned_invariant(A, C_ker, B_img):
    """Oracle: S* via the largest controlled invariant of the dual pair.

    ``S*^perp`` is the largest subspace ``V`` of ``B_img^perp`` with
    ``A^T V`` contained in ``V + C_ker^perp``; it is the limit of
    ``V_{k+1} = V_0 cap (A^T)^{-1}(V_k + C_ker^perp)``.
    """
    n = A.shape[0]
    Bperp = null(B_img.T) if B_img.shape[1] else np.eye(n)
    Cperp = null(C_ker.T) if C_ker.shape[1] else np.eye(n)
    V = Bperp
    for _ in range(n + 1):
        W = orth(np.hstack([V, Cperp]))
        # preimage of span(W) under A^T: x with A^T x in span(W)
        comp = null(W.T) if W.shape[1] else np.eye(n)
        pre = null(comp.T @ A.T) if comp.shape[1] else np.eye(n)
        # intersection with V_0
        Vn = _intersect(Bperp, pre)
        if Vn.shape[1] == V.shape[1]:
            V = Vn
            break
        V = Vn
    return null(V.T) if V.shape[1] else np.eye(n)


def _intersect(S, T):
    n = S.shape[0]
    if S.shape[1] == 0 or T.shape[1] == 0:
        return np.zeros((n, 0))
    Z = null(np.hstack([S, -T]))
    return orth(S @ Z[:S.shape[1]])


def pytest_terminal_summary(terminalreporter):
    lines = []
    for rep in terminalreporter.stats.get("passed", []) + terminalreporter.stats.get("failed", []):
        if rep.when != "call" or ACCEPTANCE_FILE not in rep.nodeid:
            continue
        props = dict(rep.user_properties)
        if "criterion" not in props:
            continue
        lines.append((str(props["criterion"]), rep.outcome.upper(), props.get("detail", "")))
    if lines:
        terminalreporter.section("acceptance criteria")
        for cid, outcome, detail in sorted(lines, key=lambda r: r[0]):
            status = "PASS" if outcome == "PASSED" else "FAIL"
            terminalreporter.write_line(f"{status}  {cid}  {detail}")
