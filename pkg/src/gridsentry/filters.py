"""Residual filters for attack detection and identification.

Every filter is run in the realization

    w' = F w + E y,    r = H w + R y,

driven by the measured outputs.  The detection filter is a Luenberger
observer of the reduced model.  An identification filter for a set ``K``
observes the state modulo the largest subspace the attack on ``K`` can
reach after the attack-driven part of the output has been used to cancel
its direct effect; its residual is blind to attacks on ``K`` and to
nothing else when ``K`` is identifiable.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import csv
from itertools import combinations
import json
import math
from pathlib import Path

import numpy as np

from .errors import DesignError, GeometricError, ValidationError
from .kron import KronReducedSystem, _check_channels
from . import subspace as ss

DEFAULT_EPSILON = 1e-6
DEFAULT_BETA = 0.5
HURWITZ_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class ResidualFilter:
    """Generic linear residual generator ``w' = F w + E y, r = H w + R y``."""

    F: np.ndarray
    E: np.ndarray
    H: np.ndarray
    R: np.ndarray
    w0: np.ndarray
    kr: KronReducedSystem | None = field(default=None, repr=False)
    name: str = "filter"
    margin: float = 0.0

    @property
    def n_state(self):
        return self.F.shape[0]

    @property
    def n_residual(self):
        return self.H.shape[0]

    def spectrum(self):
        return np.linalg.eigvals(self.F) if self.F.size else np.zeros(0)


@dataclass(frozen=True, eq=False)
class DetectionFilter(ResidualFilter):
    """Observer residual ``r = C w - y`` with ``A + G C`` Hurwitz."""

    G: np.ndarray | None = None
    x0_known: bool = True

    @property
    def A_cl(self):
        return self.F


def design_detection_filter(kr: KronReducedSystem, x0=None, beta=DEFAULT_BETA,
                            G=None, tol=ss.RANK_TOL) -> DetectionFilter:
    """Detection filter for the reduced model.

    Parameters
    ----------
    x0 : (2n,) array, optional
        Initial plant state.  Unknown (``None``) starts the filter at zero;
        the residual then decays at the filter's margin.
    G : (2n, p) array, optional
        Caller-supplied gain (e.g. a Kalman gain); must make ``A + G C``
        Hurwitz.
    """
    A, C = kr.A, kr.C
    if G is None:
        G = ss.stabilizing_gain(A, C, beta, tol)
    G = np.asarray(G, dtype=float)
    if G.shape != (kr.n_state, kr.n_out):
        raise ValidationError(f"gain must be {kr.n_state}x{kr.n_out}")
    F = A + G @ C
    margin = -float(np.linalg.eigvals(F).real.max())
    if margin <= HURWITZ_TOL:
        raise DesignError(f"A + G C is not Hurwitz (max real part {-margin:.3e})")
    known = x0 is not None
    w0 = np.zeros(kr.n_state) if x0 is None else np.asarray(x0, dtype=float).copy()
    return DetectionFilter(F, -G, C.copy(), -np.eye(kr.n_out), w0, kr, "detection",
                           margin, G, known)


@dataclass(frozen=True, eq=False)
class IdentificationFilter(ResidualFilter):
    """Residual generator whose output is blind exactly to attacks on ``K``."""

    K: tuple = ()
    V_K: np.ndarray | None = None
    Q_K: np.ndarray | None = None
    B_Z: np.ndarray | None = None
    B_bar: np.ndarray | None = None
    A_mod: np.ndarray | None = None
    S_star: ss.Subspace | None = None
    J_K: np.ndarray | None = None
    P_K: np.ndarray | None = None
    A_K: np.ndarray | None = None
    H_K: np.ndarray | None = None
    M_K: np.ndarray | None = None
    G_K: np.ndarray | None = None

    def structural_checks(self, tol=1e-8):
        """Residuals of the design identities; all should be ~0."""
        kr = self.kr
        QC = self.Q_K @ kr.C
        S = self.S_star.basis
        Acl = self.A_mod + self.J_K @ QC
        out = {
            "orthonormal_split": float(np.abs(
                np.vstack([self.V_K, self.Q_K]) @ np.vstack([self.V_K, self.Q_K]).T
                - np.eye(kr.n_out)).max()) if kr.n_out else 0.0,
            "P_kills_Bbar": float(np.abs(self.P_K @ self.B_bar).max()) if self.B_bar.size else 0.0,
            "invariance": float(np.abs(Acl @ S - S @ (S.T @ Acl @ S)).max()) if S.size else 0.0,
            "H_annihilates_S": float(np.abs(self.H_K @ QC @ S).max()) if S.size and self.H_K.size else 0.0,
            "HQC_equals_MP": float(np.abs(self.H_K @ QC - self.M_K @ self.P_K).max())
            if self.H_K.size else 0.0,
            "closed_loop_margin": self.margin,
        }
        out["ok"] = all(v <= tol for k, v in out.items()
                        if k not in ("closed_loop_margin", "ok")) and self.margin >= 0
        return out


def design_identification_filter(kr: KronReducedSystem, K, x0=None,
                                 beta=DEFAULT_BETA, G_K=None,
                                 tol=ss.RANK_TOL) -> IdentificationFilter:
    """Filter whose residual vanishes when the attack is supported on ``K``.

    Construction
    ------------
    1. ``V_K`` spans ``Im(D_K)``, ``Q_K`` its orthogonal complement.
    2. ``B_Z = B_K (V_K D_K)^+`` and ``B_bar = B_K (I - D_K^+ D_K)``.
    3. ``S*`` is the smallest ``(A', ker Q_K C)``-conditioned invariant
       subspace containing ``Im(B_bar)``, ``A' = A - B_Z V_K C``.
    4. ``J_K`` renders ``S*`` invariant under ``A' + J_K Q_K C``; ``P_K``
       has orthonormal rows spanning ``S*``'s orthogonal complement.
    5. ``H_K`` spans the annihilator of ``Q_K C S*``; ``M_K`` solves
       ``H_K Q_K C = M_K P_K``; ``G_K`` stabilizes ``A_K + G_K M_K``.
    """
    K = _check_channels(K, kr.n_inputs)
    sig = kr.signature(K)
    A, C = kr.A, kr.C
    n2, p = kr.n_state, kr.n_out
    B_K, D_K = sig.B_K, sig.D_K
    imD = ss.image(D_K, tol)
    V = imD.basis.T                      # r x p
    Q = imD.complement().basis.T         # (p - r) x p
    VD = V @ D_K
    B_Z = B_K @ np.linalg.pinv(VD, rcond=tol)
    B_bar = B_K @ (np.eye(len(K)) - np.linalg.pinv(D_K, rcond=tol) @ D_K)
    A_mod = A - B_Z @ V @ C
    QC = Q @ C
    S = ss.conditioned_invariant(A_mod, ss.kernel(QC, tol), ss.image(B_bar, tol))
    J = ss.solve_output_injection(A_mod, QC, S)
    P = S.complement().basis.T           # (n2 - dim S) x n2
    A_K = P @ (A_mod + J @ QC) @ P.T
    QCS = QC @ S.basis
    H = ss.image(QCS, tol).complement().basis.T if Q.shape[0] else np.zeros((0, 0))
    if H.size == 0:
        H = np.zeros((0, Q.shape[0]))
    HQC = H @ QC
    M = HQC @ P.T
    mismatch = float(np.abs(HQC - M @ P).max()) if HQC.size else 0.0
    if mismatch > 1e-8 * max(1.0, float(np.abs(HQC).max()) if HQC.size else 1.0):
        raise DesignError(
            f"H_K Q_K C does not factor through P_K (mismatch {mismatch:.3e}); "
            f"attack set {K} violates the identifiability assumption")
    if P.shape[0] == 0:
        G = np.zeros((0, H.shape[0]))
    elif G_K is not None:
        G = np.asarray(G_K, dtype=float)
    else:
        G = ss.stabilizing_gain(A_K, M, beta, tol)
    F = A_K + G @ M
    margin = -float(np.linalg.eigvals(F).real.max()) if F.size else math.inf
    if F.size and margin <= HURWITZ_TOL:
        raise DesignError(f"identification filter for {K} is not stable")
    E = P @ B_Z @ V - (P @ J + G @ H) @ Q
    x0 = np.zeros(n2) if x0 is None else np.asarray(x0, dtype=float)
    return IdentificationFilter(
        F, E, M, -H @ Q, P @ x0, kr, f"identification{list(K)}", margin,
        K, V, Q, B_Z, B_bar, A_mod, S, J, P, A_K, H, M, G)


# ---------------------------------------------------------------------------
# running filters
# ---------------------------------------------------------------------------

@dataclass
class ResidualTrace:
    """Residual samples with their energy and the threshold decision.

    The decision rule flags an attack when, after the warm-up window,
    ``energy > epsilon * horizon`` or ``max |r| > peak_tol``.
    """

    times: np.ndarray
    values: np.ndarray
    epsilon: float = DEFAULT_EPSILON
    peak_tol: float = 1e-7
    warmup: float = 0.0
    name: str = "residual"

    @property
    def _window(self):
        return self.times >= self.warmup

    @property
    def energy(self):
        m = self._window
        if m.sum() < 2:
            return 0.0
        sq = np.sum(self.values[m] ** 2, axis=1)
        return float(np.trapezoid(sq, self.times[m]))

    @property
    def total_energy(self):
        if len(self.times) < 2:
            return 0.0
        return float(np.trapezoid(np.sum(self.values ** 2, axis=1), self.times))

    @property
    def peak(self):
        m = self._window
        if not m.any() or self.values.shape[1] == 0:
            return 0.0
        return float(np.abs(self.values[m]).max())

    @property
    def horizon(self):
        return float(self.times[-1] - self.times[0]) if len(self.times) > 1 else 0.0

    @property
    def energy_threshold(self):
        return self.epsilon * self.horizon

    @property
    def attack_present(self):
        if len(self.times) == 0:
            return False
        return self.energy > self.energy_threshold or self.peak > self.peak_tol

    @property
    def decision(self):
        return "present" if self.attack_present else "absent"

    def to_dict(self):
        return {"name": self.name, "decision": self.decision, "energy": self.energy,
                "total_energy": self.total_energy, "peak": self.peak,
                "epsilon": self.epsilon, "energy_threshold": self.energy_threshold,
                "peak_tol": self.peak_tol, "warmup": self.warmup,
                "samples": int(len(self.times))}

    def to_csv(self, path):
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"r_{i + 1}" for i in range(self.values.shape[1])])
            for t, row in zip(self.times, self.values):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in row])

    def decision_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def _stage_values(times, y, stage_y):
    """Stage inputs (T, 4, p): recorded ones or linear interpolation."""
    if stage_y is not None:
        return np.asarray(stage_y)
    mid = 0.5 * (y[:-1] + y[1:])
    return np.stack([y[:-1], mid, mid, y[1:]], axis=1)


def _rk4_maps(F, E, h):
    """One RK4 step as ``w+ = Phi w + Gamma [y1; y2; y3; y4]``."""
    n, m = E.shape

    def step(w, ys):
        k1 = F @ w + E @ ys[0]
        k2 = F @ (w + 0.5 * h * k1) + E @ ys[1]
        k3 = F @ (w + 0.5 * h * k2) + E @ ys[2]
        k4 = F @ (w + h * k3) + E @ ys[3]
        return w + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)

    Phi = step(np.eye(n), [np.zeros((m, n))] * 4)
    Gam = []
    for i in range(4):
        ys = [np.zeros((m, m))] * 4
        ys[i] = np.eye(m)
        Gam.append(step(np.zeros((n, m)), ys))
    return Phi, np.hstack(Gam)


def _drive(F, E, H, R, w0, h, y, stage_y):
    """RK4 of ``w' = F w + E y`` on given stage inputs; residual on the grid."""
    T = len(y)
    n = F.shape[0]
    w = np.array(w0, dtype=float)
    states = np.empty((T, n))
    if T:
        Phi, Gam = _rk4_maps(F, E, h)
        drive = stage_y.reshape(T - 1, -1) @ Gam.T
        for k in range(T - 1):
            states[k] = w
            w = Phi @ w + drive[k]
        states[-1] = w
    return states @ H.T + y @ R.T


def _known_response(kr, trace):
    """Output contribution of the known input, integrated on its stages."""
    N = kr.n_state_channels
    Bp, Dp = kr.B[:, :N], kr.D[:, :N]
    stage = trace.stage_known
    h = trace.step
    T = len(trace.times)
    x = np.zeros(kr.n_state)
    y = np.empty((T, kr.n_out))
    sy = np.empty((T - 1, 4, kr.n_out))
    for k in range(T - 1):
        su = stage[k]
        xs = x
        ks = []
        for i, c in enumerate((None, 0.5, 0.5, 1.0)):
            if i:
                xs = x + (c * h) * ks[-1]
            sy[k, i] = kr.C @ xs + Dp @ su[i]
            ks.append(kr.A @ xs + Bp @ su[i])
        y[k] = sy[k, 0]
        x = x + (h / 6.0) * (ks[0] + 2 * ks[1] + 2 * ks[2] + ks[3])
    y[-1] = kr.C @ x + Dp @ trace.known[-1]
    return y, sy


def run_filter(filt: ResidualFilter, trace, times=None, epsilon=DEFAULT_EPSILON,
               peak_tol=1e-7, warmup=None) -> ResidualTrace:
    """Integrate a filter along measured outputs.

    Parameters
    ----------
    trace : sim.Trajectory or (T, p) array
        With a trajectory, the recorded stage outputs are used so the
        filter follows the plant's integration exactly, and any known input
        is removed from the outputs first.  A bare array needs ``times``;
        intermediate stage values are then interpolated linearly.
    warmup : float, optional
        Decisions ignore ``t < warmup``.  Defaults to ``ln(1/epsilon) /
        margin`` for a detection filter with unknown initial state and to
        zero otherwise.
    """
    stage_y = None
    if hasattr(trace, "outputs"):
        times = trace.times
        y = np.asarray(trace.outputs, dtype=float)
        stage_y = trace.stage_outputs
        if getattr(trace, "stage_known", None) is not None and filt.kr is not None:
            yk, syk = _known_response(filt.kr, trace)
            y = y - yk
            stage_y = stage_y - syk
    else:
        if times is None:
            raise ValidationError("times are required with a bare output array")
        y = np.atleast_2d(np.asarray(trace, dtype=float))
        times = np.asarray(times, dtype=float)
    if len(times) != len(y):
        raise ValidationError(f"grid mismatch: {len(times)} times vs {len(y)} samples")
    if y.size and y.shape[1] != filt.E.shape[1]:
        raise ValidationError(f"outputs have {y.shape[1]} channels, filter expects {filt.E.shape[1]}")
    if warmup is None:
        warmup = 0.0
        if isinstance(filt, DetectionFilter) and not filt.x0_known:
            warmup = math.log(1.0 / epsilon) / filt.margin
    if len(times) == 0:
        return ResidualTrace(np.zeros(0), np.zeros((0, filt.n_residual)), epsilon,
                             peak_tol, warmup, filt.name)
    if len(times) > 1:
        dt = np.diff(times)
        if np.ptp(dt) > 1e-9 * max(1.0, dt[0]) or dt[0] <= 0:
            raise ValidationError("outputs must be sampled on a uniform grid")
        h = float(dt[0])
    else:
        h = 0.0
    stage_y = _stage_values(times, y, stage_y) if len(times) > 1 else np.zeros((0, 4, y.shape[1]))
    if len(stage_y) != len(times) - 1:
        raise ValidationError("stage outputs do not match the grid")
    r = _drive(filt.F, filt.E, filt.H, filt.R, filt.w0, h, y, stage_y)
    return ResidualTrace(np.asarray(times), r, epsilon, peak_tol, warmup, filt.name)


# ---------------------------------------------------------------------------
# identification procedure
# ---------------------------------------------------------------------------

@dataclass
class IdentificationResult:
    """Outcome of the identification sweep.

    ``status`` is ``no_attack`` (detection filter silent), ``identified``,
    ``inconsistent`` (no candidate explains the data) or ``incomplete``
    (budget exhausted; ``estimate`` is then the partial intersection).
    """

    status: str
    estimate: tuple
    zero_sets: list
    checked: int
    total: int
    detection: dict | None = None
    residuals: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)
    info: dict = field(default_factory=dict)

    def to_dict(self):
        return {"status": self.status, "estimate": list(self.estimate),
                "zero_sets": [list(z) for z in self.zero_sets],
                "checked": self.checked, "total": self.total,
                "detection": self.detection,
                "residual_energy": {",".join(map(str, k)): v for k, v in self.residuals.items()},
                "design_failures": {",".join(map(str, k)): v for k, v in self.failures.items()},
                "info": self.info}


def identify(kr: KronReducedSystem, x0, trace, k_max, budget=None, candidates=None,
             epsilon=DEFAULT_EPSILON, peak_tol=1e-7, beta=DEFAULT_BETA, workers=None,
             skip_detection=False) -> IdentificationResult:
    """Estimate the attack set from a measured trace.

    A detection filter runs first; when it fires, an identification filter
    is designed and run for every candidate set of size ``k_max`` (drawn
    from ``candidates``, default all channels, lexicographic order) and the
    estimate is the intersection of the sets whose residual stays below
    threshold.
    """
    q = kr.n_inputs
    cands = tuple(range(q)) if candidates is None else tuple(int(c) for c in candidates)
    if not 1 <= k_max <= len(cands):
        raise ValidationError(f"k_max must be in 1..{len(cands)}")
    total = math.comb(len(cands), k_max)
    info = {"epsilon": epsilon, "peak_tol": peak_tol, "beta": beta, "k_max": k_max,
            "budget": budget, "order": "lexicographic"}
    det = None
    if not skip_detection:
        rt = run_filter(design_detection_filter(kr, x0, beta), trace, epsilon=epsilon,
                        peak_tol=peak_tol)
        det = rt.to_dict()
        if not rt.attack_present:
            return IdentificationResult("no_attack", (), [], 0, total, det, info=info)

    sets = list(combinations(cands, k_max))
    stopped = budget is not None and budget < len(sets)
    if stopped:
        sets = sets[:max(0, budget)]

    def test(Z):
        try:
            f = design_identification_filter(kr, Z, x0, beta)
        except (DesignError, GeometricError) as exc:
            return Z, None, str(exc)
        rt = run_filter(f, trace, epsilon=epsilon, peak_tol=peak_tol)
        return Z, rt, None

    if workers and workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(test, sets))
    else:
        results = [test(Z) for Z in sets]
    zero_sets, residuals, failures = [], {}, {}
    for Z, rt, err in results:
        if err is not None:
            failures[Z] = err
            continue
        residuals[Z] = rt.energy
        if not rt.attack_present:
            zero_sets.append(Z)
    if zero_sets:
        est = set(zero_sets[0])
        for Z in zero_sets[1:]:
            est &= set(Z)
        est = tuple(sorted(est))
    else:
        est = ()
    if stopped:
        status = "incomplete"
    elif not zero_sets:
        status = "inconsistent"
        info["reason"] = ("no candidate set explains the outputs: identifiability "
                          "assumption violated, k_max too small, or epsilon too small")
    else:
        status = "identified"
    return IdentificationResult(status, est, zero_sets, len(results), total, det,
                                residuals, failures, info)
