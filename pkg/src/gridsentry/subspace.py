"""Subspace algebra and the geometric/spectral primitives.

Every subspace is carried as an orthonormal basis together with the
relative tolerance used for the rank decision that produced it.  Rank
decisions compare singular values against ``tol * max(1, sigma_max)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import logging
import warnings

import numpy as np
import scipy.linalg as sla
from scipy.signal import place_poles

from .errors import DesignError, GeometricError, ValidationError

logger = logging.getLogger(__name__)

RANK_TOL = 1e-10
RESIDUAL_TOL = 1e-8


def _threshold(s, tol):
    smax = s[0] if s.size else 0.0
    return tol * max(1.0, smax)


def _as_matrix(M, rows=None):
    M = np.asarray(M, dtype=float)
    if M.ndim == 1:
        M = M.reshape(-1, 1) if rows is None else M.reshape(rows, -1)
    if M.ndim != 2:
        raise ValidationError(f"expected a 2-D matrix, got shape {M.shape}")
    return M


def _frozen(a):
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Subspace:
    """A linear subspace of R^n given by an orthonormal basis.

    Parameters
    ----------
    basis : (n, d) array
        Orthonormal columns.  ``d == 0`` encodes the trivial subspace.
    tol : float
        Relative tolerance used for rank decisions involving this space.
    """

    basis: np.ndarray
    tol: float = RANK_TOL

    def __post_init__(self):
        B = np.asarray(self.basis, dtype=float)
        if B.ndim != 2:
            raise ValidationError("subspace basis must be 2-D")
        object.__setattr__(self, "basis", _frozen(B))

    @property
    def ambient_dim(self):
        return self.basis.shape[0]

    @property
    def dim(self):
        return self.basis.shape[1]

    def __len__(self):
        return self.dim

    def __repr__(self):
        return f"Subspace(dim={self.dim}, ambient_dim={self.ambient_dim})"

    @classmethod
    def zero(cls, n, tol=RANK_TOL):
        return cls(np.zeros((n, 0)), tol)

    @classmethod
    def full(cls, n, tol=RANK_TOL):
        return cls(np.eye(n), tol)

    def projector(self):
        """Orthogonal projector onto the subspace."""
        return self.basis @ self.basis.T

    def complement(self):
        """Orthogonal complement in the ambient space."""
        return kernel(self.basis.T, self.tol) if self.dim else Subspace.full(self.ambient_dim, self.tol)

    def contains(self, vectors, tol=None):
        """True if every column of ``vectors`` lies in the subspace."""
        V = _as_matrix(vectors, rows=self.ambient_dim)
        if V.size == 0:
            return True
        tol = RESIDUAL_TOL if tol is None else tol
        res = V - self.basis @ (self.basis.T @ V)
        scale = max(1.0, np.linalg.norm(V))
        return bool(np.linalg.norm(res) <= tol * scale)

    def includes(self, other, tol=None):
        """True if ``other`` is a subspace of this one."""
        return self.contains(other.basis, tol)

    def equals(self, other, tol=None):
        return self.dim == other.dim and self.includes(other, tol)


def image(M, tol=RANK_TOL):
    """Column space of ``M``."""
    M = _as_matrix(M)
    n = M.shape[0]
    if M.size == 0:
        return Subspace.zero(n, tol)
    U, s, _ = np.linalg.svd(M, full_matrices=False)
    r = int(np.sum(s > _threshold(s, tol)))
    return Subspace(U[:, :r], tol)


def kernel(M, tol=RANK_TOL):
    """Null space of ``M``."""
    M = _as_matrix(M)
    n = M.shape[1]
    if M.shape[0] == 0:
        return Subspace.full(n, tol)
    _, s, Vt = np.linalg.svd(M, full_matrices=True)
    r = int(np.sum(s > _threshold(s, tol)))
    return Subspace(Vt[r:].T.copy(), tol)


def _check_same(S, T):
    if S.ambient_dim != T.ambient_dim:
        raise ValidationError(
            f"ambient dimension mismatch: {S.ambient_dim} vs {T.ambient_dim}")


def subspace_sum(S, T):
    """S + T."""
    _check_same(S, T)
    return image(np.hstack([S.basis, T.basis]), min(S.tol, T.tol))


def intersect(S, T):
    """S ∩ T, computed as the kernel of the stacked complement bases."""
    _check_same(S, T)
    tol = min(S.tol, T.tol)
    if S.dim == 0 or T.dim == 0:
        return Subspace.zero(S.ambient_dim, tol)
    stacked = np.vstack([S.complement().basis.T, T.complement().basis.T])
    return kernel(stacked, tol)


def complement_projector(S):
    """Orthogonal projector onto the complement of ``S``."""
    return np.eye(S.ambient_dim) - S.projector()


def apply(M, S):
    """Image of the subspace ``S`` under the linear map ``M``."""
    M = _as_matrix(M)
    if M.shape[1] != S.ambient_dim:
        raise ValidationError("map and subspace dimensions disagree")
    return image(M @ S.basis, S.tol)


def preimage(M, S):
    """{x : M x ∈ S}."""
    M = _as_matrix(M)
    if M.shape[0] != S.ambient_dim:
        raise ValidationError("map and subspace dimensions disagree")
    if S.dim == S.ambient_dim:
        return Subspace.full(M.shape[1], S.tol)
    U = S.complement().basis
    return kernel(U.T @ M, S.tol)


# ---------------------------------------------------------------------------
# geometric control
# ---------------------------------------------------------------------------

def conditioned_invariant(A_mod, C_ker, B_img, max_iter=None):
    """Smallest (A_mod, C_ker)-conditioned invariant subspace containing B_img.

    Runs S_0 = B_img, S_{i+1} = B_img + A_mod (S_i ∩ C_ker) until the
    dimension stops growing (at most ``n`` steps).
    """
    A_mod = _as_matrix(A_mod)
    n = A_mod.shape[0]
    if A_mod.shape != (n, n):
        raise ValidationError("A_mod must be square")
    _check_same(C_ker, B_img)
    if C_ker.ambient_dim != n:
        raise ValidationError("subspaces must live in the state space of A_mod")
    S = B_img
    for _ in range(max_iter or n + 1):
        nxt = subspace_sum(B_img, apply(A_mod, intersect(S, C_ker)))
        if nxt.dim == S.dim:
            return nxt
        S = nxt
    return S


def solve_output_injection(A_mod, QC, S, tol=RESIDUAL_TOL):
    """Output injection ``J`` with (A_mod + J QC) S ⊆ S.

    For a basis W of S and a basis U of its complement, the containment
    reads U^T J (QC W) = -U^T A_mod W.  The minimum-norm solution with
    range in S^⊥ is used.
    """
    A_mod = _as_matrix(A_mod)
    QC = _as_matrix(QC)
    n = A_mod.shape[0]
    r = QC.shape[0]
    if QC.shape[1] != n or S.ambient_dim != n:
        raise ValidationError("dimension mismatch in output-injection solve")
    J = np.zeros((n, r))
    if S.dim == 0 or S.dim == n:
        return J
    W = S.basis
    U = S.complement().basis
    lhs = QC @ W
    rhs = -U.T @ A_mod @ W
    X = rhs @ np.linalg.pinv(lhs, rcond=S.tol) if r else np.zeros((U.shape[1], 0))
    J = U @ X
    res = U.T @ (A_mod + J @ QC) @ W
    scale = max(1.0, np.linalg.norm(A_mod))
    if np.linalg.norm(res) > tol * scale:
        raise GeometricError(
            "subspace is not conditioned invariant: containment residual "
            f"{np.linalg.norm(res):.3e}")
    return J


# ---------------------------------------------------------------------------
# invariant zeros
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InvariantZero:
    """A point ``s`` with directions satisfying (sI - A)x = B g, Cx + Dg = 0."""

    s: complex
    x: np.ndarray
    g: np.ndarray

    def residuals(self, A, B, C, D):
        A, B, C, D = (np.asarray(M, dtype=complex) for M in (A, B, C, D))
        n = A.shape[0]
        r1 = (self.s * np.eye(n) - A) @ self.x - B @ self.g
        r2 = C @ self.x + D @ self.g
        return float(np.linalg.norm(r1)), float(np.linalg.norm(r2))

    def verify(self, A, B, C, D, tol=RESIDUAL_TOL):
        r1, r2 = self.residuals(A, B, C, D)
        bound = tol * (np.linalg.norm(self.x) + np.linalg.norm(self.g))
        return r1 <= bound and r2 <= bound

    def to_dict(self):
        return {
            "s": [float(np.real(self.s)), float(np.imag(self.s))],
            "x_real": np.real(self.x).tolist(),
            "x_imag": np.imag(self.x).tolist(),
            "g_real": np.real(self.g).tolist(),
            "g_imag": np.imag(self.g).tolist(),
        }


@dataclass(frozen=True)
class ZeroReport:
    """Outcome of a zero computation.

    ``degenerate`` marks a pencil that is rank deficient for every ``s``;
    ``zeros`` is then empty and ``witness`` holds a null pair at one sample
    frequency.
    """

    zeros: tuple = ()
    degenerate: bool = False
    witness: InvariantZero | None = None
    normal_rank: int = 0
    info: dict = field(default_factory=dict)

    @property
    def empty(self):
        return not self.zeros and not self.degenerate

    def __iter__(self):
        return iter(self.zeros)

    def __len__(self):
        return len(self.zeros)

    def to_dict(self):
        return {
            "degenerate": self.degenerate,
            "normal_rank": self.normal_rank,
            "zeros": [z.to_dict() for z in self.zeros],
            "witness": None if self.witness is None else self.witness.to_dict(),
        }


def _system_pencil(A, B, C, D):
    n = A.shape[0]
    k = B.shape[1]
    p = C.shape[0]
    M = np.block([[A, B], [C, D]])
    N = np.zeros((n + p, n + k))
    N[:n, :n] = np.eye(n)
    return M, N


def _null_pair(M, N, s, n):
    P = M - s * N
    _, sv, Vh = np.linalg.svd(P)
    v = Vh.conj()[-1]
    smin = sv[-1] if P.shape[0] >= P.shape[1] else 0.0
    return v[:n], v[n:], smin


def invariant_zeros(A, B, C, D, tol=RANK_TOL, accept_tol=1e-9, seed=0,
                    match_tol=1e-6):
    """Invariant zeros of the system (A, B, C, D).

    Solves [[sI - A, -B], [C, D]] [x; g] = 0 with x != 0.  Tall pencils are
    squared up by two independent random row compressions of the output
    block; only eigenvalues found by both draws and confirmed as rank drops
    of the original pencil are kept.

    Returns
    -------
    ZeroReport
        Sorted by real part, then imaginary part.
    """
    A = _as_matrix(A)
    n = A.shape[0]
    B = _as_matrix(B, rows=n)
    C = _as_matrix(C)
    if C.shape[1] != n:
        C = C.reshape(-1, n)
    p, k = C.shape[0], B.shape[1]
    D = np.asarray(D, dtype=float).reshape(p, k)
    M, N = _system_pencil(A, B, C, D)
    scale = max(1.0, np.linalg.norm(M, 2))
    rng = np.random.default_rng(seed)

    # normal rank from three random complex frequencies
    ranks = []
    for _ in range(3):
        s = complex(*rng.normal(size=2)) * scale
        sv = np.linalg.svd(M - s * N, compute_uv=False)
        ranks.append(int(np.sum(sv > tol * max(1.0, sv[0]))) if sv.size else 0)
    normal_rank = max(ranks)
    if normal_rank < n + k:
        s0 = -1.0
        x, g, _ = _null_pair(M, N, s0, n)
        x, g = _realify_pair(x, g)
        w = InvariantZero(complex(s0), x, g)
        return ZeroReport((), True, w, normal_rank, {"reason": "pencil rank deficient for all s"})

    def candidates(draw):
        if p == k:
            Mc, Nc = M, N
        else:
            G = draw.normal(size=(p, k))
            R, _ = np.linalg.qr(G)
            Z = sla.block_diag(np.eye(n), R.T)
            Mc, Nc = Z @ M, Z @ N
        if Mc.shape[0] == 0:
            return np.array([], dtype=complex)
        alpha, beta = sla.eig(Mc, Nc, right=False, homogeneous_eigvals=True)
        finite = np.abs(beta) > 1e-8 * np.maximum(np.abs(alpha), 1.0)
        return alpha[finite] / beta[finite]

    c1 = candidates(rng)
    c2 = candidates(rng) if p != k else c1
    zeros = []
    for s in c1:
        if c2.size == 0 or np.min(np.abs(c2 - s)) > match_tol * (1.0 + abs(s)):
            continue
        x, g, smin = _null_pair(M, N, s, n)
        # ||P(s) v|| = smin for the unit singular vector v = [x; g]
        if smin > accept_tol * (scale + abs(s)):
            continue
        if np.linalg.norm(x) <= tol:
            continue
        if any(abs(s - w.s) <= match_tol * (1.0 + abs(s)) for w in zeros):
            continue
        zeros.append(InvariantZero(complex(s), x, g))
    zeros.sort(key=lambda z: (round(z.s.real, 10), round(z.s.imag, 10)))
    return ZeroReport(tuple(zeros), False, None, normal_rank)


def _realify_pair(x, g):
    """Rotate a complex null pair so its real part carries the most weight."""
    v = np.concatenate([x, g])
    if np.allclose(v.imag, 0.0):
        v = v.real.astype(complex)
    else:
        # phase maximizing ||Re(e^{i phi} v)||
        a = np.vdot(v.conj(), v)  # sum v_i^2
        phi = -0.5 * np.angle(a)
        v = v * np.exp(1j * phi)
    nv = np.linalg.norm(v)
    if nv > 0:
        v = v / nv
    return v[:x.size], v[x.size:]


# ---------------------------------------------------------------------------
# stabilizing gains
# ---------------------------------------------------------------------------

def observable_subspace(A, C, tol=RANK_TOL):
    """Smallest A^T-invariant subspace containing Im(C^T)."""
    A = _as_matrix(A)
    n = A.shape[0]
    C = _as_matrix(C).reshape(-1, n)
    return conditioned_invariant(A.T, Subspace.full(n, tol), image(C.T, tol))


def pole_targets(count, beta):
    """Distinct real targets spread over [-beta-2, -beta-1]."""
    if count == 0:
        return np.zeros(0)
    if count == 1:
        return np.array([-beta - 1.0])
    return np.linspace(-beta - 1.0, -beta - 2.0, count)


def stabilizing_gain(A, C, beta=0.5, tol=RANK_TOL):
    """Gain ``G`` such that every eigenvalue of A + G C has Re <= -beta.

    Poles of the observable part are placed at distinct real targets; the
    unobservable part keeps its spectrum and receives zero gain.

    Raises
    ------
    DesignError
        If an unobservable eigenvalue is not in the open left half plane.
    """
    A = _as_matrix(A)
    n = A.shape[0]
    C = _as_matrix(C).reshape(-1, n)
    p = C.shape[0]
    G = np.zeros((n, p))
    if n == 0:
        return G
    if np.max(np.linalg.eigvals(A).real) <= -beta:
        return G
    obs = observable_subspace(A, C, tol)
    To = obs.basis
    Tu = obs.complement().basis
    if Tu.shape[1]:
        Auu = Tu.T @ A @ Tu
        eu = np.linalg.eigvals(Auu)
        bad = eu[eu.real >= -1e-9]
        if bad.size:
            raise DesignError(
                f"(A, C) is not detectable: unobservable eigenvalue {bad[0]:.6g} "
                "is not in the open left half plane")
        if np.max(eu.real) > -beta:
            logger.warning("unobservable eigenvalue %.4g limits the margin to %.4g",
                           eu[np.argmax(eu.real)], -np.max(eu.real))
    no = To.shape[1]
    if no:
        Aoo = To.T @ A @ To
        Co = C @ To
        targets = pole_targets(no, beta)
        K = _place(Aoo.T, Co.T, targets)
        G = -To @ K.T
    achieved = np.max(np.linalg.eigvals(A + G @ C).real)
    limit = -beta
    if Tu.shape[1]:
        limit = max(limit, np.max(np.linalg.eigvals(Tu.T @ A @ Tu).real))
    if achieved > limit + 1e-6 * max(1.0, abs(limit)):
        raise DesignError(f"pole placement missed: max Re = {achieved:.6g}")
    return G


def _place(A, B, poles):
    # place_poles rejects a rank-deficient input matrix; compress it first
    Bs = image(B)
    if Bs.dim == 0:
        raise DesignError("no output available for gain design")
    T = Bs.basis.T @ B  # B = Bs.basis @ T
    last = None
    for method in ("YT", "KNV0"):
        try:
            # the robustness iteration may stop early; the poles are still placed
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", UserWarning)
                res = place_poles(A, Bs.basis, poles, method=method, maxiter=200)
            Kc = res.gain_matrix
            return np.linalg.pinv(T) @ Kc
        except (ValueError, np.linalg.LinAlgError) as exc:
            last = exc
    raise DesignError(f"pole placement failed: {last}")
