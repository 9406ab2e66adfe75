"""Attack signatures, attack modes and scenario constructors.

Channel numbering (0-based) follows the descriptor model: state channels
``delta_i = i``, ``omega_i = n + i``, ``theta_j = 2n + j`` and measurement
channel ``y_k = N + k``.  Channels may also be referred to by label
(``"omega1"``, ``"theta3"``, ``"y2"``; positional, 1-based) or, for the
physical constructors, by node name (``"g1"`` or ``"b7"`` as written in
the network file).
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math
from typing import Callable

import numpy as np

from .errors import DetectableAttackError, SimulationError, ValidationError
from .kron import KronReducedSystem, _check_channels, kron_reduce
from . import subspace as ss


def _reduced(system):
    if isinstance(system, KronReducedSystem):
        return system
    return kron_reduce(system)


def _descriptor(system):
    return system.descriptor if isinstance(system, KronReducedSystem) else system


# ---------------------------------------------------------------------------
# signatures
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AttackSignature:
    """Sorted set of attacked channels with their labels."""

    K: tuple
    labels: tuple = ()

    def __post_init__(self):
        if not self.K:
            raise ValidationError("attack signature needs at least one channel")
        K = tuple(int(k) for k in self.K)
        if len(set(K)) != len(K):
            raise ValidationError(f"duplicate channels in {K}")
        object.__setattr__(self, "K", K)
        if self.labels and len(self.labels) != len(K):
            raise ValidationError("one label per channel is required")

    @property
    def k(self):
        return len(self.K)

    @classmethod
    def of(cls, system, K):
        d = _descriptor(system)
        q = d.n_inputs
        K = _check_channels(K, q)
        labels = d.channel_labels
        return cls(K, tuple(labels[k] for k in K))

    def union(self, other):
        merged = dict(zip(self.K, self.labels or self.K))
        merged.update(zip(other.K, other.labels or other.K))
        K = tuple(sorted(merged))
        labels = tuple(merged[k] for k in K) if self.labels and other.labels else ()
        return AttackSignature(K, labels)

    def to_dict(self):
        return {"channels": list(self.K), "labels": list(self.labels)}


def resolve_channel(system, ref):
    """Channel index for an int, a channel label or a node name.

    Node names map to the physical channel a power change enters:
    ``"g<i>"`` to omega of that generator and ``"b<j>"`` to theta of
    that bus.
    """
    d = _descriptor(system)
    q = d.n_inputs
    if isinstance(ref, (int, np.integer)):
        if not 0 <= ref < q:
            raise ValidationError(f"channel {ref} out of range 0..{q - 1}")
        return int(ref)
    ref = str(ref)
    labels = d.channel_labels
    if ref in labels:
        return labels.index(ref)
    net = d.network
    if ref in net.gen_labels:
        return d.n_gen + net.gen_labels.index(ref)
    if ref in net.bus_labels:
        return 2 * d.n_gen + net.bus_labels.index(ref)
    raise ValidationError(f"unknown channel {ref!r}")


# ---------------------------------------------------------------------------
# modes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Term:
    """``Re(coef * tau**power * exp(s * tau))`` with ``tau = t - t_on``."""

    coef: tuple
    power: int = 0
    s: complex = 0.0

    def __post_init__(self):
        object.__setattr__(self, "coef", tuple(complex(c) for c in np.ravel(self.coef)))
        object.__setattr__(self, "s", complex(self.s))
        if self.power < 0:
            raise ValidationError("term power must be nonnegative")

    def value(self, tau):
        c = np.asarray(self.coef)
        return np.real(c * (tau ** self.power) * np.exp(self.s * tau))


_EXPR_NAMES = {name: getattr(np, name) for name in (
    "sin", "cos", "tan", "exp", "log", "sqrt", "abs", "tanh", "sinh", "cosh",
    "arctan", "heaviside", "sign", "pi", "where", "minimum", "maximum")}


@dataclass(frozen=True)
class AttackMode:
    """A time signal in R^k that vanishes outside ``[t_on, t_off]``.

    The signal is a finite sum of closed-form terms, or a numpy expression
    of ``t`` (absolute time) and ``tau`` (time since ``t_on``).
    """

    k: int
    terms: tuple = ()
    t_on: float = 0.0
    t_off: float = math.inf
    expr: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        for term in self.terms:
            if len(term.coef) != self.k:
                raise ValidationError(
                    f"term has {len(term.coef)} coefficients, mode has {self.k} channels")
        if not (self.t_off > self.t_on):
            raise ValidationError(f"empty support [{self.t_on}, {self.t_off}]")
        if self.expr is not None:
            self._eval_expr(self.t_on)

    def _eval_expr(self, t):
        env = dict(_EXPR_NAMES, t=t, tau=t - self.t_on)
        try:
            v = eval(self.expr, {"__builtins__": {}}, env)
        except Exception as exc:
            raise ValidationError(f"cannot evaluate mode expression {self.expr!r}: {exc}") from None
        return np.broadcast_to(np.asarray(v, dtype=float), (self.k,))

    def __call__(self, t):
        if t < self.t_on or t > self.t_off:
            return np.zeros(self.k)
        tau = t - self.t_on
        out = np.zeros(self.k)
        for term in self.terms:
            out += term.value(tau)
        if self.expr is not None:
            out += self._eval_expr(t)
        return out

    @property
    def is_zero(self):
        if self.expr is not None:
            return False
        return all(not any(term.coef) for term in self.terms)

    def scaled(self, c):
        return AttackMode(self.k, tuple(Term(np.asarray(t.coef) * c, t.power, t.s)
                                        for t in self.terms),
                          self.t_on, self.t_off,
                          None if self.expr is None else f"({c!r})*({self.expr})")

    @staticmethod
    def _amp(amplitude, k):
        a = np.atleast_1d(np.asarray(amplitude, dtype=complex))
        if a.size == 1:
            a = np.full(k, a[0])
        if a.size != k:
            raise ValidationError(f"amplitude has {a.size} entries, expected {k}")
        return a

    @classmethod
    def step(cls, amplitude, t_on=0.0, t_off=math.inf, k=None):
        k = k or np.size(amplitude)
        return cls(k, (Term(cls._amp(amplitude, k)),), t_on, t_off)

    @classmethod
    def ramp(cls, slope, t_on=0.0, t_off=math.inf, k=None):
        k = k or np.size(slope)
        return cls(k, (Term(cls._amp(slope, k), 1),), t_on, t_off)

    @classmethod
    def exponential(cls, amplitude, rate, t_on=0.0, t_off=math.inf, k=None):
        k = k or np.size(amplitude)
        return cls(k, (Term(cls._amp(amplitude, k), 0, rate),), t_on, t_off)

    @classmethod
    def sinusoid(cls, amplitude, freq, phase=0.0, t_on=0.0, t_off=math.inf, k=None):
        # a*sin(w tau + phi) = Re(-i a e^{i phi} e^{i w tau})
        k = k or np.size(amplitude)
        c = cls._amp(amplitude, k) * (-1j) * np.exp(1j * phase)
        return cls(k, (Term(c, 0, 1j * freq),), t_on, t_off)

    @classmethod
    def expression(cls, expr, k=1, t_on=0.0, t_off=math.inf):
        return cls(k, (), t_on, t_off, expr)

    @classmethod
    def from_dict(cls, data, k, t_on=0.0, t_off=math.inf):
        kind = data.get("kind")
        try:
            if kind == "step":
                return cls.step(data["amplitude"], t_on, t_off, k)
            if kind == "ramp":
                return cls.ramp(data["slope"], t_on, t_off, k)
            if kind == "exp":
                return cls.exponential(data["amplitude"], data["rate"], t_on, t_off, k)
            if kind == "sin":
                return cls.sinusoid(data["amplitude"], data["freq"],
                                    data.get("phase", 0.0), t_on, t_off, k)
            if kind == "expr":
                return cls.expression(data["expr"], k, t_on, t_off)
        except KeyError as exc:
            raise ValidationError(f"mode {kind!r}: missing field {exc}") from None
        raise ValidationError(f"unknown mode kind {kind!r}")

    def to_dict(self):
        return {
            "k": self.k, "t_on": self.t_on,
            "t_off": None if math.isinf(self.t_off) else self.t_off,
            "terms": [{"coef_re": [c.real for c in t.coef], "coef_im": [c.imag for c in t.coef],
                       "power": t.power, "s": [t.s.real, t.s.imag]} for t in self.terms],
            "expr": self.expr,
        }


# ---------------------------------------------------------------------------
# scenarios
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Scenario:
    """Attack channels plus an open-loop mode and/or a state feedback.

    ``feedback(t, x)`` receives the reduced state and returns a vector in
    R^k; it is evaluated at every integrator stage.
    """

    signature: AttackSignature
    mode: AttackMode | None = None
    feedback: Callable | None = field(default=None, compare=False)
    name: str = "attack"

    def __post_init__(self):
        if self.mode is None and self.feedback is None:
            raise ValidationError("scenario needs a mode or a feedback law")
        if self.mode is not None and self.mode.k != self.signature.k:
            raise ValidationError(
                f"mode has {self.mode.k} channels, signature has {self.signature.k}")

    @property
    def K(self):
        return self.signature.K

    def attack(self, t, x):
        v = np.zeros(self.signature.k)
        if self.mode is not None:
            v += self.mode(t)
        if self.feedback is not None:
            v += self.feedback(t, x)
        return v

    def input_vector(self, t, x, q):
        u = np.zeros(q)
        u[list(self.signature.K)] = self.attack(t, x)
        return u

    def to_dict(self):
        out = {"name": self.name, **self.signature.to_dict()}
        if self.mode is not None:
            out["mode"] = self.mode.to_dict()
        out["feedback"] = self.feedback is not None
        return out


def _require_nonzero(mode):
    if mode.is_zero:
        raise ValidationError("attack mode is identically zero on its support")


def power_input_change(system, target, mode: AttackMode):
    """Change of mechanical power at a generator or of load at a bus.

    ``target`` is ``"g<i>"`` (enters omega_i) or ``"b<j>"`` (enters the
    power balance at bus j), or an explicit omega/theta channel.
    """
    d = _descriptor(system)
    ch = resolve_channel(d, target)
    n = d.n_gen
    if not n <= ch < 2 * n + d.n_bus:
        raise ValidationError(f"{target!r} is not a generator or bus power channel")
    _require_nonzero(mode)
    sig = AttackSignature.of(d, [ch])
    return sig, mode


def sensor_attack(system, meas_index, mode: AttackMode):
    """Additive corruption of one or more measurements (0-based indices)."""
    d = _descriptor(system)
    idx = np.atleast_1d(meas_index).astype(int)
    for j in idx:
        if not 0 <= j < d.n_out:
            raise ValidationError(f"measurement index {j} out of range 0..{d.n_out - 1}")
    _require_nonzero(mode)
    order = np.argsort(idx)
    K = [d.n_state + int(j) for j in idx[order]]
    if mode.k != len(K):
        raise ValidationError(f"mode has {mode.k} channels for {len(K)} sensors")
    if len(K) > 1 and np.any(order != np.arange(len(K))):
        raise ValidationError("list sensor indices in increasing order")
    return AttackSignature.of(d, K), mode


def line_outage(system, a, b, t_on=0.0, flow=None):
    """Removal of the transmission line between buses ``a`` and ``b``.

    By default the attack is a state feedback ``f_a = w (theta_a - theta_b)``,
    ``f_b = -f_a``, where the angles are those of the network without the
    line, so the closed loop reproduces the post-outage network exactly.
    Passing ``flow(t)`` (a precomputed line flow) gives the open-loop mode
    instead.
    """
    d = _descriptor(system)
    net = d.network
    for ref in (a, b):
        if isinstance(ref, str) and ref in net.gen_labels:
            raise ValidationError("internal generator edges cannot be outaged")
    ia, ib = net.bus_index(a), net.bus_index(b)
    w = net.line_weight(ia, ib)
    th = 2 * d.n_gen
    K = sorted([th + ia, th + ib])
    sign = np.array([1.0, -1.0]) if th + ia < th + ib else np.array([-1.0, 1.0])
    sig = AttackSignature.of(d, K)
    if flow is not None:
        fb = lambda t, x: sign * float(flow(t)) if t >= t_on else np.zeros(2)
        return Scenario(sig, None, fb, name=f"line_outage({a},{b})")

    L_cut = np.array(d.laplacian.L_ll, copy=True)
    L_cut[ia, ia] -= w
    L_cut[ib, ib] -= w
    L_cut[ia, ib] += w
    L_cut[ib, ia] += w
    ev = np.linalg.eigvalsh(L_cut)
    if ev[0] <= 1e-10 * ev[-1]:
        raise ValidationError(
            f"removing {a}-{b} leaves buses without a path to any generator")
    T = -np.linalg.solve(L_cut, d.laplacian.L_lg)
    n = d.n_gen

    def fb(t, x):
        if t < t_on:
            return np.zeros(2)
        theta = T @ x[:n]
        return sign * (w * (theta[ia] - theta[ib]))

    return Scenario(sig, None, fb, name=f"line_outage({a},{b})")


# ---------------------------------------------------------------------------
# zero-dynamics synthesis
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SynthesizedAttack:
    """Initial state and mode that keep the output identically zero."""

    x0: np.ndarray
    mode: AttackMode
    zero: ss.InvariantZero
    signature: AttackSignature
    degenerate: bool = False
    check_residual: float | None = None

    @property
    def scenario(self):
        return Scenario(self.signature, self.mode, name="zero_dynamics")

    def to_dict(self):
        return {"x0": list(map(float, self.x0)), "mode": self.mode.to_dict(),
                "zero": self.zero.to_dict(), "signature": self.signature.to_dict(),
                "degenerate": self.degenerate, "check_residual": self.check_residual}


def _pick_zero(zeros):
    return max(zeros, key=lambda z: (z.s.real, -abs(z.s.imag)))


def synth_undetectable(kr: KronReducedSystem, K, horizon=10.0, h=1e-3,
                       check=True, check_tol=1e-6, tol=ss.RANK_TOL):
    """Initial state and input along a zero direction of the attack set.

    The pair ``x(t) = Re(x e^{st})``, ``u_K(t) = Re(g e^{st})`` produces an
    identically zero output, so ``y(x1 + x0, u_K) = y(x1, 0)`` for every
    ``x1``.  The pair is normalized to ``|x0| = 1``.  With ``check`` the
    claim is verified by simulation over ``horizon``.
    """
    sig = kr.signature(K)
    report = ss.invariant_zeros(kr.A, sig.B_K, kr.C, sig.D_K, tol=tol)
    if report.degenerate:
        zero = report.witness
    elif report.zeros:
        zero = _pick_zero(report.zeros)
    else:
        raise DetectableAttackError(
            f"attack set {sig.K} is dynamically detectable: no invariant zeros")
    x = np.asarray(zero.x, dtype=complex)
    g = np.asarray(zero.g, dtype=complex)
    if np.linalg.norm(x.real) < np.linalg.norm(x.imag):
        x, g = -1j * x, -1j * g
    scale = np.linalg.norm(x.real)
    if scale <= tol:
        raise DetectableAttackError("zero direction has no state component")
    x, g = x / scale, g / scale
    if abs(zero.s.imag) <= tol * max(1.0, abs(zero.s)):
        s = complex(zero.s.real)
        x, g = x.real.astype(complex), g.real.astype(complex)
    else:
        s = zero.s
    mode = AttackMode(len(sig.K), (Term(g, 0, s),))
    atk = SynthesizedAttack(x.real.copy(), mode, zero, AttackSignature.of(kr, sig.K),
                            report.degenerate)
    if check:
        from .sim import simulate_reduced
        traj = simulate_reduced(kr, atk.scenario, atk.x0, horizon, h)
        y_scale = max(1.0, float(np.abs(traj.inputs).max()))
        res = float(np.abs(traj.outputs).max()) / y_scale
        if not res <= check_tol:
            raise SimulationError(
                f"synthesized attack leaves output residual {res:.3e} > {check_tol:.1e}")
        atk = SynthesizedAttack(atk.x0, atk.mode, atk.zero, atk.signature,
                                atk.degenerate, res)
    return atk


# ---------------------------------------------------------------------------
# prototypical cyber attacks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AttackReport:
    """Feasibility verdict of a prototypical attack with its certificate."""

    kind: str
    feasible: bool
    certificate: dict
    scenario: Scenario | None = None
    x0: np.ndarray | None = None

    def to_dict(self):
        out = {"kind": self.kind, "feasible": self.feasible, "certificate": self.certificate}
        if self.scenario is not None:
            out["scenario"] = self.scenario.to_dict()
        if self.x0 is not None:
            out["x0"] = list(map(float, self.x0))
        return out


def _output_only(system, K):
    d = _descriptor(system)
    K = _check_channels(K, d.n_inputs)
    if any(k < d.n_state for k in K):
        raise ValidationError("stealth attacks use measurement channels only")
    return K


def stealth_attack(system, K, signal: AttackMode | None = None, tol=ss.RANK_TOL):
    """Output attack that stays inside the image of the measurement map.

    ``system`` is anything with ``C`` and ``D`` (descriptor or reduced).
    Feasible iff ``Im(D_K) and Im(C)`` intersect nontrivially; the attack
    is ``l(t) = g * a(t)`` with ``D_K g`` in that intersection and ``a`` a
    scalar signal (unit step by default).
    """
    K = _output_only(system, K)
    C = np.asarray(system.C)
    D_K = np.asarray(system.D)[:, list(K)]
    common = ss.intersect(ss.image(C, tol), ss.image(D_K, tol))
    cert = {"dim_intersection": common.dim, "rank_C": ss.image(C, tol).dim,
            "rank_D_K": ss.image(D_K, tol).dim}
    if common.dim == 0:
        return AttackReport("stealth", False, cert)
    v = common.basis[:, 0]
    g = np.linalg.lstsq(D_K, v, rcond=None)[0]
    x = -np.linalg.lstsq(C, D_K @ g, rcond=None)[0]
    cert["residual"] = float(np.linalg.norm(C @ x + D_K @ g))
    a = signal or AttackMode.step(1.0)
    if a.k != 1:
        raise ValidationError("stealth signal must be scalar")
    mode = AttackMode(len(K), tuple(Term(np.asarray(t.coef[0]) * g, t.power, t.s)
                                    for t in a.terms), a.t_on, a.t_off)
    cert["g"] = list(map(float, g))
    cert["x"] = list(map(float, x))
    return AttackReport("stealth", True, cert,
                        Scenario(AttackSignature.of(system, K), mode, name="stealth"))


def false_data_injection(kr: KronReducedSystem, K=None, tol=1e-9):
    """Output attack hiding an unstable mode of the reduced dynamics.

    A mode ``(lam, v)`` with ``Re(lam) > tol`` is hidden by
    ``l(t) = -Re(C v e^{lam t})`` restricted to the channels where ``C v``
    is nonzero (or to ``K`` if given, when ``C v`` lies in ``Im(D_K)``).
    """
    ev, vecs = np.linalg.eig(kr.A)
    max_re = float(ev.real.max())
    unstable = [i for i in np.argsort(-ev.real) if ev[i].real > tol]
    cert = {"max_real_eigenvalue": max_re, "tol": tol, "unstable_modes": len(unstable)}
    if not unstable:
        return AttackReport("false_data_injection", False, cert)
    N = kr.n_state_channels
    for i in unstable:
        lam, v = ev[i], vecs[:, i]
        cv = kr.C @ v
        if K is None:
            meas = np.flatnonzero(np.abs(cv) > tol * max(1.0, np.abs(cv).max()))
            KK = tuple(N + int(j) for j in meas)
        else:
            KK = _output_only(kr, K)
        D_K = kr.D[:, list(KK)]
        g = -np.linalg.lstsq(D_K, cv, rcond=None)[0] if KK else np.zeros(0)
        res = float(np.linalg.norm(cv + D_K @ g)) if KK else float(np.linalg.norm(cv))
        if res <= 1e-8 * max(1.0, np.linalg.norm(cv)) and KK:
            if np.linalg.norm(v.real) < np.linalg.norm(v.imag):
                v, g = -1j * v, -1j * g
            sc = np.linalg.norm(v.real)
            mode = AttackMode(len(KK), (Term(g / sc, 0, lam),))
            cert.update(eigenvalue=[lam.real, lam.imag], residual=res)
            return AttackReport("false_data_injection", True, cert,
                                Scenario(AttackSignature.of(kr, KK), mode, name="fdi"),
                                (v / sc).real)
    cert["reason"] = "no unstable mode output direction lies in Im(D_K)"
    return AttackReport("false_data_injection", False, cert)


def replay_attack(kr: KronReducedSystem, K, tol=ss.RANK_TOL):
    """Check the replay shape ``Im(C) in Im(D_K)`` with ``B_K != 0``.

    The pencil of such a signature is identically singular whenever
    ``B_K`` is nonzero; the certificate records the inclusion residual and
    the pencil verdict.
    """
    sig = kr.signature(K)
    img_C = ss.image(kr.C, tol)
    img_D = ss.image(sig.D_K, tol)
    leak = img_C.basis - img_D.projector() @ img_C.basis
    incl = float(np.linalg.norm(leak)) if img_C.dim else 0.0
    B_norm = float(np.linalg.norm(sig.B_K))
    included = incl <= 1e-8
    cert = {"inclusion_residual": incl, "B_K_norm": B_norm, "image_included": included}
    if not included:
        return AttackReport("replay", False, cert)
    report = ss.invariant_zeros(kr.A, sig.B_K, kr.C, sig.D_K, tol=tol)
    cert["degenerate_pencil"] = report.degenerate
    cert["finite_zeros"] = len(report.zeros)
    return AttackReport("replay", True, cert)


# ---------------------------------------------------------------------------
# scenario files
# ---------------------------------------------------------------------------

SCENARIO_TYPES = ("none", "power_input", "line_outage", "sensor", "custom")


def scenario_from_dict(data, system):
    """Scenario from the JSON schema.

    ``{"type": ..., "channels": [...], "mode": {"kind": ...}, "t_on", "t_off"}``.
    ``type`` is ``power_input`` (channels: one node name), ``line_outage``
    (two bus names), ``sensor`` (measurement indices, 0-based) or
    ``custom`` (any channel references).  ``none`` yields ``None``.
    """
    if not isinstance(data, dict):
        raise ValidationError("scenario must be a JSON object")
    kind = data.get("type", "custom")
    if kind not in SCENARIO_TYPES:
        raise ValidationError(f"unknown scenario type {kind!r}")
    if kind == "none":
        return None
    channels = data.get("channels")
    if not isinstance(channels, list) or not channels:
        raise ValidationError("scenario 'channels' must be a nonempty list")
    t_on = float(data.get("t_on", 0.0))
    t_off = data.get("t_off")
    t_off = math.inf if t_off is None else float(t_off)
    if kind == "line_outage":
        if len(channels) != 2:
            raise ValidationError("line_outage needs exactly two buses")
        return line_outage(system, channels[0], channels[1], t_on)
    if "mode" not in data:
        raise ValidationError("scenario needs a 'mode'")
    mode = AttackMode.from_dict(data["mode"], len(channels), t_on, t_off)
    if kind == "power_input":
        if len(channels) != 1:
            raise ValidationError("power_input takes one node")
        sig, mode = power_input_change(system, channels[0], mode)
    elif kind == "sensor":
        d = _descriptor(system)
        idx = [int(c) if not isinstance(c, str) else
               resolve_channel(d, c) - d.n_state for c in channels]
        sig, mode = sensor_attack(system, idx, mode)
    else:
        K = [resolve_channel(system, c) for c in channels]
        order = np.argsort(K)
        if np.any(order != np.arange(len(K))):
            raise ValidationError("list custom channels in increasing channel order")
        _require_nonzero(mode)
        sig = AttackSignature.of(system, K)
    return Scenario(sig, mode, name=data.get("name", kind))


def load_scenario(path, system):
    from .netmodel import _read_json
    return scenario_from_dict(_read_json(path), system)

