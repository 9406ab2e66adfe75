"""Fixed-step simulation of the reduced and descriptor models.

Integration is classical fourth-order Runge-Kutta with the input sampled
at the stage times.  Besides the grid samples every run keeps the inputs
and outputs seen at the four stages of each step; filters integrated on
those stage values reproduce the plant's arithmetic exactly, which is what
makes matched-initialization residuals vanish to rounding error.
"""

from __future__ import annotations

from dataclasses import dataclass
import csv
from pathlib import Path

import numpy as np

from .errors import SimulationError, ValidationError
from .kron import KronReducedSystem, kron_reduce
from .netmodel import DescriptorSystem

DEFAULT_STEP = 1e-3
DEFAULT_HORIZON = 10.0
BLOWUP = 1e150


@dataclass
class Trajectory:
    """Samples of one simulation run on a uniform grid.

    Attributes
    ----------
    times : (T+1,) array
    states : (T+1, 2n) reduced state [delta; omega]
    outputs : (T+1, p)
    inputs : (T+1, q) attack input at the grid points
    stage_inputs, stage_outputs : (T, 4, q) and (T, 4, p)
        Values at the Runge-Kutta stages of each step.
    known : (T+1, N) known input, or None
    stage_known : (T, 4, N) or None
    theta : (T+1, n_bus) recovered bus angles, or None
    """

    times: np.ndarray
    states: np.ndarray
    outputs: np.ndarray
    inputs: np.ndarray
    stage_inputs: np.ndarray | None = None
    stage_outputs: np.ndarray | None = None
    known: np.ndarray | None = None
    stage_known: np.ndarray | None = None
    theta: np.ndarray | None = None
    labels: tuple = ()

    def __post_init__(self):
        T = len(self.times)
        for name in ("states", "outputs", "inputs", "known", "theta"):
            a = getattr(self, name)
            if a is not None and len(a) != T:
                raise ValidationError(f"trajectory {name} has {len(a)} rows for {T} times")
        if T > 1:
            dt = np.diff(self.times)
            if np.any(dt <= 0) or np.ptp(dt) > 1e-9 * max(1.0, abs(dt[0])):
                raise ValidationError("trajectory grid must be uniform and increasing")

    @property
    def step(self):
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    @property
    def horizon(self):
        return float(self.times[-1]) if len(self.times) else 0.0

    def to_csv(self, path, include_theta=True):
        """Write ``t, x..., y...`` (and theta if recovered)."""
        n2 = self.states.shape[1]
        n = n2 // 2
        head = ["t"] + [f"delta{i + 1}" for i in range(n)] + [f"omega{i + 1}" for i in range(n)]
        blocks = [self.times[:, None], self.states]
        if include_theta and self.theta is not None:
            head += [f"theta{j + 1}" for j in range(self.theta.shape[1])]
            blocks.append(self.theta)
        head += [f"y{k + 1}" for k in range(self.outputs.shape[1])]
        blocks.append(self.outputs)
        data = np.hstack(blocks)
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(head)
            for row in data:
                w.writerow([repr(float(v)) for v in row])


def consistent_init(d: DescriptorSystem, x0, f0=None, known0=None):
    """Replace the bus angles of ``x0`` by the value the algebraic rows force.

    ``f0`` is the state attack at t = 0 (length N) and ``known0`` the known
    input at t = 0 (length N); both default to zero.
    """
    x0 = np.asarray(x0, dtype=float).copy()
    if x0.shape != (d.n_state,):
        raise ValidationError(f"x0 must have length {d.n_state}")
    kr = kron_reduce(d)
    part = d.partitions
    f = np.zeros(d.n_state)
    if f0 is not None:
        f = f + np.asarray(f0, dtype=float)
    if known0 is not None:
        f = f + np.asarray(known0, dtype=float)
    x0[part["theta"]] = kr.recover(x0[part["delta"]], f)
    return x0


def _stage_input(scenario, t, x, q):
    if scenario is None:
        return np.zeros(q)
    return scenario.input_vector(t, x, q)


def simulate_reduced(kr: KronReducedSystem, scenario=None, x0=None,
                     horizon=DEFAULT_HORIZON, h=DEFAULT_STEP, known_input=None,
                     recover=False):
    """Integrate the reduced model under a scenario.

    Parameters
    ----------
    scenario : object with ``input_vector(t, x, q)``, optional
        Typically an ``attacks.Scenario``; ``None`` means no attack.
    x0 : (2n,) array, optional
        Reduced initial state, zero by default.
    known_input : callable ``t -> (N,)``, optional
        Known power input entering like a state attack.
    recover : bool
        Also recover the bus angles at the grid points.
    """
    if not h > 0:
        raise ValidationError("step must be positive")
    if not horizon >= 0:
        raise ValidationError("horizon must be nonnegative")
    n_steps = int(round(horizon / h))
    if abs(n_steps * h - horizon) > 1e-9 * max(1.0, horizon):
        raise ValidationError(f"horizon {horizon} is not a multiple of the step {h}")
    n2, q, p = kr.n_state, kr.n_inputs, kr.n_out
    N = kr.n_state_channels
    A, B, C, D = kr.A, kr.B, kr.C, kr.D
    x = np.zeros(n2) if x0 is None else np.asarray(x0, dtype=float).copy()
    if x.shape != (n2,):
        raise ValidationError(f"reduced initial state must have length {n2}")

    times = np.arange(n_steps + 1) * h
    states = np.empty((n_steps + 1, n2))
    outputs = np.empty((n_steps + 1, p))
    inputs = np.empty((n_steps + 1, q))
    s_in = np.empty((n_steps, 4, q))
    s_out = np.empty((n_steps, 4, p))
    known = np.zeros((n_steps + 1, N)) if known_input is not None else None
    s_known = np.zeros((n_steps, 4, N)) if known_input is not None else None
    pad = np.zeros(q - N)

    def total(t, xs):
        u = _stage_input(scenario, t, xs, q)
        if known_input is None:
            return u, u, None
        P = np.asarray(known_input(t), dtype=float)
        return u, u + np.concatenate([P, pad]), P

    for k in range(n_steps):
        t = times[k]
        ks = []
        xs = x
        for i, (c, w) in enumerate(((0.0, None), (0.5, 0.5), (0.5, 0.5), (1.0, 1.0))):
            if i:
                xs = x + (w * h) * ks[-1]
            u, ut, P = total(t + c * h, xs)
            s_in[k, i] = u
            s_out[k, i] = C @ xs + D @ ut
            if P is not None:
                s_known[k, i] = P
            ks.append(A @ xs + B @ ut)
        states[k] = x
        inputs[k] = s_in[k, 0]
        outputs[k] = s_out[k, 0]
        if known is not None:
            known[k] = s_known[k, 0]
        x = x + (h / 6.0) * (ks[0] + 2 * ks[1] + 2 * ks[2] + ks[3])
        if not np.all(np.isfinite(x)) or np.abs(x).max() > BLOWUP:
            raise SimulationError(f"state diverged after t = {t:.6g}", last_time=float(t))
    u, ut, P = total(times[-1], x)
    states[-1] = x
    inputs[-1] = u
    outputs[-1] = C @ x + D @ ut
    if known is not None:
        known[-1] = P
    theta = None
    if recover:
        f = inputs[:, :N] if known is None else inputs[:, :N] + known
        theta = kr.recover(states[:, :kr.n_gen], f)
    return Trajectory(times, states, outputs, inputs, s_in, s_out, known, s_known, theta)


def algebraic_residual(d: DescriptorSystem, x, f=None):
    """Residual of the algebraic rows ``A_a x + f_theta`` at one instant."""
    st = d.partitions["theta"]
    r = d.A[st] @ np.asarray(x, dtype=float)
    if f is not None:
        r = r + np.asarray(f, dtype=float)[st]
    return r


def simulate_descriptor(d: DescriptorSystem, scenario=None, x0=None,
                        horizon=DEFAULT_HORIZON, h=DEFAULT_STEP, known_input=None,
                        tol=1e-8):
    """Simulate the descriptor model through its Kron reduction.

    ``x0`` is a full descriptor state and must satisfy the algebraic rows
    at t = 0 (see ``consistent_init``).  The returned trajectory carries the
    recovered bus angles.
    """
    kr = kron_reduce(d)
    N = d.n_state
    x0 = np.zeros(N) if x0 is None else np.asarray(x0, dtype=float)
    if x0.shape != (N,):
        raise ValidationError(f"descriptor initial state must have length {N}")
    part = d.partitions
    xr = np.concatenate([x0[part["delta"]], x0[part["omega"]]])
    u0 = _stage_input(scenario, 0.0, xr, d.n_inputs)[:N]
    if known_input is not None:
        u0 = u0 + np.asarray(known_input(0.0), dtype=float)
    res = algebraic_residual(d, x0, u0)
    scale = max(1.0, float(np.abs(x0).max()))
    if np.linalg.norm(res) > tol * scale:
        raise SimulationError(
            f"inconsistent initial state: algebraic residual {np.linalg.norm(res):.3e}",
            last_time=0.0)
    return simulate_reduced(kr, scenario, xr, horizon, h, known_input, recover=True)
