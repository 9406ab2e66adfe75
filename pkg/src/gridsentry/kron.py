"""Kron reduction of the descriptor model onto generator coordinates.

The algebraic rows ``0 = -L_lg delta - L_ll theta + f_theta`` are solved
for the bus angles,

    theta = -L_ll^{-1} L_lg delta + L_ll^{-1} f_theta,

and substituted into the swing rows and the outputs.  The reduced state is
``x = [delta; omega]`` and the input is the same ``u = [f; l]`` as for the
descriptor model, so attack channel indices carry over unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as sla

from .errors import ModelError, ValidationError
from .netmodel import DescriptorSystem

COND_TOL = 1e-10


def _frozen(a):
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ReducedSignature:
    """Columns of the reduced input/feedthrough matrices picked by ``K``."""

    K: tuple
    B_K: np.ndarray
    D_K: np.ndarray

    @property
    def k(self):
        return len(self.K)

    @property
    def stacked(self):
        return np.vstack([self.B_K, self.D_K])


@dataclass(frozen=True, eq=False)
class KronReducedSystem:
    """x' = A x + B u, y = C x + D u on x = [delta; omega].

    ``theta_from_delta`` and ``theta_from_input`` form the recovery map
    ``theta = theta_from_delta @ delta + theta_from_input @ u``.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    theta_from_delta: np.ndarray
    theta_from_input: np.ndarray
    L_red: np.ndarray
    descriptor: DescriptorSystem = field(repr=False)
    _chol: tuple = field(repr=False, default=None)

    def __post_init__(self):
        for name in ("A", "B", "C", "D", "theta_from_delta", "theta_from_input", "L_red"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))

    @property
    def n_gen(self):
        return self.A.shape[0] // 2

    @property
    def n_state(self):
        return self.A.shape[0]

    @property
    def n_out(self):
        return self.C.shape[0]

    @property
    def n_inputs(self):
        return self.B.shape[1]

    @property
    def n_state_channels(self):
        """Number of state attack channels (``N``); outputs follow."""
        return self.descriptor.n_state

    @property
    def channel_labels(self):
        return self.descriptor.channel_labels

    def output_channel(self, j):
        """Channel index of measurement ``j`` (0-based)."""
        if not 0 <= j < self.n_out:
            raise ValidationError(f"measurement index {j} out of range")
        return self.n_state_channels + j

    def solve_ll(self, rhs):
        """Apply L_ll^{-1} using the cached Cholesky factor."""
        return sla.cho_solve(self._chol, rhs)

    @cached_property
    def L_ll_inv(self):
        return _frozen(self.solve_ll(np.eye(self.descriptor.n_bus)))

    def signature(self, K):
        return map_signature(self, K)

    def recover(self, delta, u=None):
        return recover_algebraic(self, delta, u)


def _check_channels(K, q):
    try:
        K = tuple(int(k) for k in K)
    except TypeError:
        raise ValidationError("attack set must be an iterable of channel indices") from None
    if not K:
        raise ValidationError("attack set must be nonempty")
    if len(set(K)) != len(K):
        raise ValidationError(f"attack set {K} has duplicate channels")
    bad = [k for k in K if not 0 <= k < q]
    if bad:
        raise ValidationError(f"channel indices {bad} out of range 0..{q - 1}")
    return tuple(sorted(K))


def kron_reduce(d: DescriptorSystem) -> KronReducedSystem:
    """Eliminate the bus angles from a descriptor model."""
    lap = d.laplacian
    n, m = d.n_gen, d.n_bus
    N, p, q = d.n_state, d.n_out, d.n_inputs
    L_ll = np.asarray(lap.L_ll)
    ev = np.linalg.eigvalsh(L_ll)
    if ev[0] <= COND_TOL * max(1.0, ev[-1]):
        raise ModelError(
            f"L_ll is numerically singular (eigenvalue ratio {ev[0] / ev[-1]:.3e})")
    chol = sla.cho_factor(L_ll)
    part = d.partitions
    sd, sw, st = part["delta"], part["omega"], part["theta"]
    F = d.B[:, :N]
    L = d.D[:, N:]
    F_d, F_w, F_t = F[sd], F[sw], F[st]
    C_d, C_w, C_t = d.C[:, sd], d.C[:, sw], d.C[:, st]
    Minv = np.diag(1.0 / np.asarray(d.network.inertia))
    X = sla.cho_solve(chol, lap.L_lg)        # L_ll^{-1} L_lg
    Y = sla.cho_solve(chol, F_t)             # L_ll^{-1} F_theta
    L_red = lap.L_gg - lap.L_gl @ X
    L_red = 0.5 * (L_red + L_red.T)
    A = np.block([
        [np.zeros((n, n)), np.eye(n)],
        [-Minv @ L_red, -Minv @ d.D_g],
    ])
    B = np.zeros((2 * n, q))
    B[:n, :N] = F_d
    B[n:, :N] = Minv @ F_w - Minv @ lap.L_gl @ Y
    C = np.hstack([C_d - C_t @ X, C_w])
    D = np.zeros((p, q))
    D[:, :N] = C_t @ Y
    D[:, N:] = L
    theta_in = np.zeros((m, q))
    theta_in[:, :N] = Y
    return KronReducedSystem(A, B, C, D, -X, theta_in, L_red, d, chol)


def map_signature(kr: KronReducedSystem, K) -> ReducedSignature:
    """Reduced signature ``(B_K, D_K)`` of the channel set ``K`` (0-based)."""
    K = _check_channels(K, kr.n_inputs)
    idx = list(K)
    return ReducedSignature(K, _frozen(kr.B[:, idx]), _frozen(kr.D[:, idx]))


def recover_algebraic(kr: KronReducedSystem, delta, u=None):
    """Bus angles from rotor angles and inputs, pointwise in time.

    Parameters
    ----------
    delta : (T, n_gen) or (n_gen,) array
    u : array of matching leading shape, width ``N`` (state attacks only)
        or ``N + p`` (full input), optional
    """
    delta = np.asarray(delta, dtype=float)
    single = delta.ndim == 1
    delta = np.atleast_2d(delta)
    if delta.shape[1] != kr.n_gen:
        raise ValidationError(f"delta must have {kr.n_gen} columns")
    theta = delta @ kr.theta_from_delta.T
    if u is not None:
        u = np.atleast_2d(np.asarray(u, dtype=float))
        if u.shape[0] != delta.shape[0]:
            raise ValidationError(
                f"grid mismatch: {delta.shape[0]} angle samples vs {u.shape[0]} input samples")
        N = kr.n_state_channels
        if u.shape[1] not in (N, kr.n_inputs):
            raise ValidationError(f"input must have {N} or {kr.n_inputs} columns")
        theta = theta + u[:, :N] @ kr.theta_from_input[:, :N].T
    return theta[0] if single else theta
