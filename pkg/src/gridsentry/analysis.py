"""Static and dynamic detectability / identifiability of attack sets.

Static tests look at single output samples: an attack set ``K`` is
statically undetectable when ``C x + D_K g = 0`` has a solution with
``g != 0``.  Dynamic tests look at whole output trajectories and reduce to
invariant zeros of ``(A, B_K, C, D_K)``.

Identifiability sweeps compare ``K`` against every competing set ``R``
with ``|R| <= |K|``.  Only the union ``K | R`` enters the test, so each
``R`` is represented by its part ``S = R - K`` outside ``K``; ``S`` empty
stands for every ``R`` inside ``K``.  Sets are visited by size, then in
lexicographic order, so truncated sweeps are reproducible.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations, islice
from math import comb

import numpy as np

from .errors import ValidationError
from .kron import _check_channels
from . import subspace as ss

STATIC = "static"
DYNAMIC = "dynamic"


@dataclass
class DetectabilityReport:
    """Verdict of one detectability or identifiability question.

    ``verdict`` is one of ``detectable``, ``undetectable``, ``degenerate``
    (undetectable through an identically singular pencil), ``identifiable``,
    ``unidentifiable`` or ``incomplete``.
    """

    regime: str
    verdict: str
    K: tuple
    witness: object = None
    competitor: tuple | None = None
    checked_sets: int = 0
    total_sets: int | None = None
    info: dict = field(default_factory=dict)

    @property
    def undetectable(self):
        return self.verdict in ("undetectable", "degenerate")

    @property
    def complete(self):
        return self.verdict != "incomplete"

    def to_dict(self):
        w = self.witness
        if isinstance(w, ss.InvariantZero):
            w = w.to_dict()
        elif isinstance(w, dict):
            w = {k: (list(map(float, v)) if isinstance(v, np.ndarray) else v)
                 for k, v in w.items()}
        return {
            "regime": self.regime, "verdict": self.verdict, "K": list(self.K),
            "witness": w,
            "competitor": None if self.competitor is None else list(self.competitor),
            "checked_sets": self.checked_sets, "total_sets": self.total_sets,
            "info": self.info,
        }


# ---------------------------------------------------------------------------
# static regime
# ---------------------------------------------------------------------------

def static_residual(y, C, tol=ss.RANK_TOL):
    """Component of ``y`` outside ``Im(C)``; rows of a 2-D ``y`` are samples."""
    y = np.asarray(y, dtype=float)
    C = np.asarray(C, dtype=float)
    if y.shape[-1] != C.shape[0]:
        raise ValidationError(f"sample length {y.shape[-1]} does not match {C.shape[0]} outputs")
    U = ss.image(C, tol).basis
    return y - (y @ U) @ U.T


def _annihilated(system, tol):
    """``W^T D`` with ``W`` an orthonormal basis of ``Im(C)^perp``."""
    W = ss.image(system.C, tol).complement().basis
    return W.T @ np.asarray(system.D)


def _static_witness(system, K, tol):
    C = np.asarray(system.C)
    D_K = np.asarray(system.D)[:, list(K)]
    n = C.shape[1]
    Z = ss.kernel(np.hstack([C, D_K]), tol).basis
    if Z.shape[1] == 0:
        return None
    Zg = Z[n:]
    if Zg.size == 0:
        return None
    _, sv, Vt = np.linalg.svd(Zg, full_matrices=False)
    if sv[0] <= tol:
        return None
    v = Z @ Vt[0]
    x, g = v[:n], v[n:]
    res = float(np.linalg.norm(C @ x + D_K @ g))
    return {"x": x, "g": g, "residual": res,
            "relative_residual": res / (np.linalg.norm(x) + np.linalg.norm(g))}


def static_undetectable(system, K, tol=ss.RANK_TOL) -> DetectabilityReport:
    """Static detectability of ``K`` for any object with ``C`` and ``D``.

    With a reduced system this is the reduced output map; with a
    descriptor system the full state (including bus angles) is free.
    """
    K = _check_channels(K, np.asarray(system.D).shape[1])
    w = _static_witness(system, K, tol)
    info = {"tol": tol}
    if w is None:
        return DetectabilityReport(STATIC, "detectable", K, info=info)
    return DetectabilityReport(STATIC, "undetectable", K, witness=w, info=info)


def _batched_deficient(Mred, sets, tol, scale):
    """Mask of sets whose columns of ``Mred`` are rank deficient."""
    sets = np.asarray(sets, dtype=int)
    if sets.shape[1] == 0:
        return np.zeros(len(sets), dtype=bool)
    cols = np.transpose(Mred[:, sets], (1, 0, 2))     # (n_sets, r, k)
    if cols.shape[1] < cols.shape[2]:
        return np.ones(len(sets), dtype=bool)
    sv = np.linalg.svd(cols, compute_uv=False)
    return sv[:, -1] <= tol * scale


def _chunks(it, size):
    while True:
        block = list(islice(it, size))
        if not block:
            return
        yield block


def static_sweep(system, sizes, channels=None, budget=None, tol=ss.RANK_TOL,
                 stop_first=True, chunk=20000):
    """Search for statically undetectable attack sets.

    Sets drawn from ``channels`` (default: all channels) are visited by
    size, then lexicographically, and tested in batches with one singular
    value decomposition per set.

    Returns
    -------
    DetectabilityReport
        ``undetectable`` with the first witness set in ``K``, ``detectable``
        if the sweep finished without one, ``incomplete`` if ``budget``
        ran out first.
    """
    D = np.asarray(system.D)
    q = D.shape[1]
    channels = tuple(range(q)) if channels is None else tuple(int(c) for c in channels)
    sizes = [sizes] if np.isscalar(sizes) else list(sizes)
    Mred = _annihilated(system, tol)
    scale = max(1.0, float(np.abs(D).max()))
    total = sum(comb(len(channels), k) for k in sizes)
    checked = 0
    found = []
    info = {"tol": tol, "sizes": sizes, "channels": len(channels), "budget": budget,
            "order": "size, then lexicographic"}
    for k in sizes:
        for block in _chunks(combinations(channels, k), chunk):
            if budget is not None and checked + len(block) > budget:
                block = block[:max(0, budget - checked)]
            if not block:
                break
            mask = _batched_deficient(Mred, block, tol, scale)
            hits = np.flatnonzero(mask)
            for i in hits:
                found.append(tuple(block[i]))
                if stop_first:
                    checked += int(i) + 1
                    K = found[0]
                    return DetectabilityReport(STATIC, "undetectable", K,
                                               witness=_static_witness(system, K, tol),
                                               checked_sets=checked, total_sets=total,
                                               info=info)
            checked += len(block)
            if budget is not None and checked >= budget:
                break
        if budget is not None and checked >= budget and checked < total:
            return DetectabilityReport(STATIC, "incomplete", (), checked_sets=checked,
                                       total_sets=total, info=info)
    if found:
        info["all_sets"] = [list(K) for K in found]
        K = found[0]
        return DetectabilityReport(STATIC, "undetectable", K,
                                   witness=_static_witness(system, K, tol),
                                   checked_sets=checked, total_sets=total, info=info)
    return DetectabilityReport(STATIC, "detectable", (), checked_sets=checked,
                               total_sets=total, info=info)


def _competitors(K, channels):
    rest = [c for c in channels if c not in set(K)]
    for r in range(1, len(K) + 1):
        yield from combinations(rest, r)


def _n_competitors(K, channels):
    rest = len([c for c in channels if c not in set(K)])
    return 1 + sum(comb(rest, r) for r in range(1, len(K) + 1))


def static_unidentifiable(system, K, budget=None, channels=None,
                          tol=ss.RANK_TOL) -> DetectabilityReport:
    """Static identifiability of ``K`` against all sets of size ``<= |K|``.

    ``K`` is unidentifiable when some union ``K | R`` is statically
    undetectable.  ``channels`` restricts the competing sets.
    """
    D = np.asarray(system.D)
    q = D.shape[1]
    K = _check_channels(K, q)
    channels = tuple(range(q)) if channels is None else tuple(int(c) for c in channels)
    total = _n_competitors(K, channels)
    info = {"tol": tol, "budget": budget, "competitors": "all R with |R| <= |K|, R != K",
            "order": "R inside K first, then |R - K| by size, lexicographic"}
    if budget is not None and budget < 1:
        return DetectabilityReport(STATIC, "incomplete", K, checked_sets=0,
                                   total_sets=total, info=info)
    base = static_undetectable(system, K, tol)
    if base.undetectable:
        info["reason"] = "K itself is statically undetectable"
        return DetectabilityReport(STATIC, "unidentifiable", K, base.witness, (),
                                   1, total, info)
    Mred = _annihilated(system, tol)
    # remove the directions already spanned by K's columns
    MK = Mred[:, list(K)]
    U = ss.image(MK, tol).basis
    Nred = Mred - U @ (U.T @ Mred)
    scale = max(1.0, float(np.abs(D).max()))
    checked = 1
    for block in _chunks(_competitors(K, channels), 20000):
        by_size = {}
        for S in block:
            by_size.setdefault(len(S), []).append(S)
        for r in sorted(by_size):
            group = by_size[r]
            if budget is not None and checked + len(group) > budget:
                group = group[:max(0, budget - checked)]
            mask = _batched_deficient(Nred, group, tol, scale) if group else []
            hits = np.flatnonzero(mask)
            if hits.size:
                S = group[hits[0]]
                checked += int(hits[0]) + 1
                U_ = tuple(sorted(set(K) | set(S)))
                return DetectabilityReport(STATIC, "unidentifiable", K,
                                           _static_witness(system, U_, tol), tuple(S),
                                           checked, total, info | {"union": list(U_)})
            checked += len(group)
            if budget is not None and checked >= budget and checked < total:
                return DetectabilityReport(STATIC, "incomplete", K, checked_sets=checked,
                                           total_sets=total, info=info)
    return DetectabilityReport(STATIC, "identifiable", K, checked_sets=checked,
                               total_sets=total, info=info)


# ---------------------------------------------------------------------------
# dynamic regime
# ---------------------------------------------------------------------------

def _zeros(kr, K, tol):
    sig = kr.signature(K)
    return ss.invariant_zeros(kr.A, sig.B_K, kr.C, sig.D_K, tol=tol)


def dynamic_undetectable(kr, K, tol=ss.RANK_TOL) -> DetectabilityReport:
    """Dynamic detectability of ``K`` through the invariant zeros of its signature."""
    K = _check_channels(K, kr.n_inputs)
    report = _zeros(kr, K, tol)
    info = {"tol": tol, "normal_rank": report.normal_rank}
    if report.degenerate:
        return DetectabilityReport(DYNAMIC, "degenerate", K, report.witness, info=info)
    if report.zeros:
        info["zeros"] = [[z.s.real, z.s.imag] for z in report.zeros]
        zero = max(report.zeros, key=lambda z: (z.s.real, -abs(z.s.imag)))
        return DetectabilityReport(DYNAMIC, "undetectable", K, zero, info=info)
    return DetectabilityReport(DYNAMIC, "detectable", K, info=info)


def dynamic_sweep(kr, sizes, channels=None, budget=None, tol=ss.RANK_TOL,
                  workers=None, stop_first=True):
    """Search for dynamically undetectable sets (see ``static_sweep``)."""
    q = kr.n_inputs
    channels = tuple(range(q)) if channels is None else tuple(int(c) for c in channels)
    sizes = [sizes] if np.isscalar(sizes) else list(sizes)
    sets = (S for k in sizes for S in combinations(channels, k))
    total = sum(comb(len(channels), k) for k in sizes)
    info = {"tol": tol, "sizes": sizes, "budget": budget,
            "order": "size, then lexicographic"}
    found, checked, stopped = _ordered_search(
        lambda S: dynamic_undetectable(kr, S, tol), sets, budget, workers, stop_first,
        lambda rep: rep.undetectable)
    if found:
        rep = found[0]
        if not stop_first:
            info["all_sets"] = [list(r.K) for r in found]
        return DetectabilityReport(DYNAMIC, rep.verdict, rep.K, rep.witness,
                                   checked_sets=checked, total_sets=total, info=info)
    verdict = "incomplete" if stopped else "detectable"
    return DetectabilityReport(DYNAMIC, verdict, (), checked_sets=checked,
                               total_sets=total, info=info)


def _ordered_search(test, items, budget, workers, stop_first, hit):
    """Evaluate ``test`` over ``items`` in order; results merge in input order.

    Returns ``(hits, n_checked, stopped_by_budget)``.
    """
    hits = []
    checked = 0
    block_size = max(1, 4 * (workers or 1))
    pool = ThreadPoolExecutor(workers) if workers and workers > 1 else None
    try:
        for block in _chunks(iter(items), block_size):
            if budget is not None:
                room = budget - checked
                if room <= 0:
                    return hits, checked, True
                block = block[:room]
            results = list(pool.map(test, block)) if pool else [test(b) for b in block]
            for res in results:
                checked += 1
                if hit(res):
                    hits.append(res)
                    if stop_first:
                        return hits, checked, False
        return hits, checked, False
    finally:
        if pool:
            pool.shutdown()


def dynamic_unidentifiable(kr, K, budget=None, channels=None, tol=ss.RANK_TOL,
                           workers=None) -> DetectabilityReport:
    """Dynamic identifiability of ``K`` against all sets of size ``<= |K|``.

    ``K`` is unidentifiable when the union signature ``K | R`` has an
    invariant zero or a degenerate pencil for some admissible ``R``.
    """
    q = kr.n_inputs
    K = _check_channels(K, q)
    channels = tuple(range(q)) if channels is None else tuple(int(c) for c in channels)
    total = _n_competitors(K, channels)
    info = {"tol": tol, "budget": budget, "competitors": "all R with |R| <= |K|, R != K",
            "order": "R inside K first, then |R - K| by size, lexicographic",
            "reduction": "union K | R tested for zeros"}
    if budget is not None and budget < 1:
        return DetectabilityReport(DYNAMIC, "incomplete", K, checked_sets=0,
                                   total_sets=total, info=info)
    base = dynamic_undetectable(kr, K, tol)
    if base.undetectable:
        info["reason"] = "K itself is dynamically undetectable"
        return DetectabilityReport(DYNAMIC, "unidentifiable", K, base.witness, (),
                                   1, total, info)

    def test(S):
        U = tuple(sorted(set(K) | set(S)))
        return S, dynamic_undetectable(kr, U, tol)

    sub_budget = None if budget is None else budget - 1
    found, checked, stopped = _ordered_search(
        test, _competitors(K, channels), sub_budget, workers, True,
        lambda res: res[1].undetectable)
    checked += 1
    if found:
        S, rep = found[0]
        return DetectabilityReport(DYNAMIC, "unidentifiable", K, rep.witness, tuple(S),
                                   checked, total, info | {"union": list(rep.K),
                                                           "union_verdict": rep.verdict})
    verdict = "incomplete" if stopped else "identifiable"
    return DetectabilityReport(DYNAMIC, verdict, K, checked_sets=checked,
                               total_sets=total, info=info)
