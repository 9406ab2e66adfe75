"""Command-line interface.

Exit codes: 0 completed, 1 error, 2 completed with an incomplete sweep.
Reports are JSON with sorted keys and embed every tolerance used, so
identical inputs produce identical files.
"""

from __future__ import annotations

import argparse
from dataclasses import dataclass
import json
import logging
import os
from pathlib import Path
import sys

import numpy as np

from .errors import GridSentryError
from .netmodel import DATA_DIR, build_descriptor, load_measurements, load_network
from .kron import kron_reduce
from . import analysis, attacks, filters, sim
from . import subspace as ss

log = logging.getLogger("gridsentry")

EXIT_OK, EXIT_ERROR, EXIT_INCOMPLETE = 0, 1, 2


@dataclass
class RunConfig:
    network: Path
    measurements: Path | None
    scenario: list
    attack_sets: list
    k_max: int | None
    budget: int | None
    horizon: float
    step: float
    tol: float
    epsilon: float
    seed: int
    out: Path | None
    workers: int | None

    def validate(self):
        for name in ("horizon", "step", "tol", "epsilon"):
            if not getattr(self, name) > 0:
                raise GridSentryError(f"--{name} must be positive")
        if self.k_max is not None and self.k_max < 1:
            raise GridSentryError("--k-max must be at least 1")
        if self.budget is not None and self.budget < 0:
            raise GridSentryError("--budget must be nonnegative")

    def settings(self):
        return {"tol": self.tol, "epsilon": self.epsilon, "horizon": self.horizon,
                "step": self.step, "seed": self.seed, "budget": self.budget,
                "k_max": self.k_max, "rank_tol_default": ss.RANK_TOL,
                "residual_tol_default": ss.RESIDUAL_TOL}


def _resolve_path(value):
    p = Path(value)
    if p.exists():
        return p
    for cand in (DATA_DIR / value, DATA_DIR / f"{value}.json"):
        if cand.exists():
            return cand
    raise GridSentryError(f"file not found: {value}")


def _model(cfg):
    net = load_network(cfg.network)
    if cfg.measurements is None:
        raise GridSentryError("--measurements is required")
    meas = load_measurements(cfg.measurements)
    d = build_descriptor(net, meas)
    return d, kron_reduce(d)


def _parse_set(d, text):
    refs = [t.strip() for t in text.split(",") if t.strip()]
    return tuple(sorted(attacks.resolve_channel(d, int(r) if r.lstrip("-").isdigit() else r)
                        for r in refs))


def _channels(d, which):
    if which == "outputs":
        return tuple(range(d.n_state, d.n_inputs))
    if which == "states":
        return tuple(range(d.n_state))
    return tuple(range(d.n_inputs))


def _write_json(cfg, name, payload):
    text = json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n"
    if cfg.out is not None:
        cfg.out.mkdir(parents=True, exist_ok=True)
        (cfg.out / name).write_text(text)
    sys.stdout.write(text)


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    raise TypeError(f"not serializable: {type(obj)}")


def _labels(d, K):
    return [d.channel_labels[k] for k in K]


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_analyze(cfg, args):
    d, kr = _model(cfg)
    regimes = ["static", "dynamic"] if args.regime == "both" else [args.regime]
    system = d if args.static_model == "descriptor" else kr
    universe = _channels(d, args.channels)
    exclude = set(_parse_set(d, args.exclude)) if args.exclude else set()
    universe = tuple(c for c in universe if c not in exclude)
    out = {"command": "analyze", "settings": cfg.settings(), "regimes": regimes,
           "static_model": args.static_model, "channels": args.channels,
           "excluded": sorted(exclude), "sets": [], "sweeps": []}
    incomplete = False
    for text in cfg.attack_sets:
        K = _parse_set(d, text)
        entry = {"K": list(K), "labels": _labels(d, K)}
        if "static" in regimes:
            entry["static_detectability"] = analysis.static_undetectable(system, K, cfg.tol).to_dict()
            rep = analysis.static_unidentifiable(system, K, cfg.budget, universe, cfg.tol)
            entry["static_identifiability"] = rep.to_dict()
            incomplete |= not rep.complete
        if "dynamic" in regimes:
            entry["dynamic_detectability"] = analysis.dynamic_undetectable(kr, K, cfg.tol).to_dict()
            rep = analysis.dynamic_unidentifiable(kr, K, cfg.budget, universe, cfg.tol,
                                                  cfg.workers)
            entry["dynamic_identifiability"] = rep.to_dict()
            incomplete |= not rep.complete
        out["sets"].append(entry)
    if cfg.k_max is not None:
        sizes = [cfg.k_max] if args.exact else list(range(1, cfg.k_max + 1))
        for regime in regimes:
            if regime == "static":
                rep = analysis.static_sweep(system, sizes, universe, cfg.budget, cfg.tol)
            else:
                rep = analysis.dynamic_sweep(kr, sizes, universe, cfg.budget, cfg.tol,
                                             cfg.workers)
            item = rep.to_dict()
            item["labels"] = _labels(d, rep.K)
            out["sweeps"].append(item)
            incomplete |= not rep.complete
    _write_json(cfg, "report.json", out)
    return EXIT_INCOMPLETE if incomplete else EXIT_OK


def cmd_zeros(cfg, args):
    d, kr = _model(cfg)
    if not cfg.attack_sets:
        raise GridSentryError("--attack-set is required")
    out = {"command": "zeros", "settings": cfg.settings(), "sets": []}
    for text in cfg.attack_sets:
        K = _parse_set(d, text)
        sig = kr.signature(K)
        rep = ss.invariant_zeros(kr.A, sig.B_K, kr.C, sig.D_K, tol=cfg.tol, seed=cfg.seed)
        item = rep.to_dict()
        item.update(K=list(K), labels=_labels(d, K),
                    verdict="degenerate pencil" if rep.degenerate else
                    ("zeros" if rep.zeros else "no zeros"))
        out["sets"].append(item)
    _write_json(cfg, "zeros.json", out)
    return EXIT_OK


def _scenario(cfg, d):
    if not cfg.scenario:
        return None
    scs = [attacks.load_scenario(_resolve_path(p), d) for p in cfg.scenario]
    scs = [s for s in scs if s is not None]
    if not scs:
        return None
    if len(scs) == 1:
        return scs[0]
    return _Combined(scs)


class _Combined:
    """Superposition of several scenarios."""

    def __init__(self, parts):
        self.parts = parts

    def input_vector(self, t, x, q):
        return sum(s.input_vector(t, x, q) for s in self.parts)


def _initial_state(cfg, args, kr):
    if args.x0 is None:
        return np.zeros(kr.n_state)
    if args.x0 == "random":
        rng = np.random.default_rng(cfg.seed)
        return 0.1 * rng.standard_normal(kr.n_state)
    vals = np.array([float(v) for v in args.x0.split(",")])
    if vals.shape != (kr.n_state,):
        raise GridSentryError(f"--x0 needs {kr.n_state} values (delta then omega)")
    return vals


def _trajectory(cfg, args, d, kr):
    sc = _scenario(cfg, d)
    x0 = _initial_state(cfg, args, kr)
    return sim.simulate_reduced(kr, sc, x0, cfg.horizon, cfg.step, recover=True), x0


def cmd_simulate(cfg, args):
    d, kr = _model(cfg)
    traj, _ = _trajectory(cfg, args, d, kr)
    target = (cfg.out or Path(".")) / "trajectory.csv"
    target.parent.mkdir(parents=True, exist_ok=True)
    traj.to_csv(target)
    _write_json(cfg, "simulate.json", {"command": "simulate", "settings": cfg.settings(),
                                       "samples": len(traj.times), "csv": str(target)})
    return EXIT_OK


def cmd_detect(cfg, args):
    d, kr = _model(cfg)
    traj, x0 = _trajectory(cfg, args, d, kr)
    f = filters.design_detection_filter(kr, x0, args.beta, tol=cfg.tol)
    rt = filters.run_filter(f, traj, epsilon=cfg.epsilon)
    target = (cfg.out or Path(".")) / "residual.csv"
    target.parent.mkdir(parents=True, exist_ok=True)
    rt.to_csv(target)
    out = {"command": "detect", "settings": cfg.settings(), "beta": args.beta,
           "filter_margin": f.margin, **rt.to_dict(), "csv": str(target)}
    _write_json(cfg, "decision.json", out)
    return EXIT_OK


def cmd_identify(cfg, args):
    d, kr = _model(cfg)
    if cfg.k_max is None:
        raise GridSentryError("--k-max is required")
    traj, x0 = _trajectory(cfg, args, d, kr)
    res = filters.identify(kr, x0, traj, cfg.k_max, cfg.budget, _channels(d, args.channels),
                           cfg.epsilon, beta=args.beta, workers=cfg.workers)
    out = {"command": "identify", "settings": cfg.settings(), **res.to_dict(),
           "labels": _labels(d, res.estimate)}
    _write_json(cfg, "identify.json", out)
    return EXIT_INCOMPLETE if res.status == "incomplete" else EXIT_OK


COMMANDS = {"analyze": cmd_analyze, "zeros": cmd_zeros, "simulate": cmd_simulate,
            "detect": cmd_detect, "identify": cmd_identify}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--network", required=True,
                        help="network JSON (path or bundled name such as ieee14)")
    common.add_argument("--measurements", help="measurement JSON (path or bundled name)")
    common.add_argument("--scenario", action="append", default=[],
                        help="scenario JSON; repeat to superpose")
    common.add_argument("--attack-set", action="append", default=[],
                        help="comma-separated channels (indices or labels); repeatable")
    common.add_argument("--k-max", type=int)
    common.add_argument("--budget", type=int)
    common.add_argument("--horizon", type=float, default=sim.DEFAULT_HORIZON)
    common.add_argument("--step", type=float, default=sim.DEFAULT_STEP)
    common.add_argument("--tol", type=float, default=ss.RANK_TOL)
    common.add_argument("--epsilon", type=float, default=filters.DEFAULT_EPSILON)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--workers", type=int, default=os.cpu_count(),
                        help="worker threads for sweeps (default: logical cores)")
    common.add_argument("--x0", help="reduced initial state: comma list or 'random'")
    common.add_argument("--beta", type=float, default=filters.DEFAULT_BETA,
                        help="filter stability margin")
    common.add_argument("--channels", choices=("outputs", "states", "all"), default="all",
                        help="candidate channels for sweeps and identification")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="gridsentry", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    a = sub.add_parser("analyze", parents=[common], help="detectability and identifiability")
    a.add_argument("--regime", choices=("static", "dynamic", "both"), default="both")
    a.add_argument("--static-model", choices=("reduced", "descriptor"), default="reduced",
                   help="output map used by static tests")
    a.add_argument("--exclude", help="channels left out of sweeps")
    a.add_argument("--exact", action="store_true",
                   help="sweep only sets of size --k-max instead of 1..k-max")
    sub.add_parser("zeros", parents=[common], help="invariant zeros of attack sets")
    sub.add_parser("simulate", parents=[common], help="trajectory CSV")
    sub.add_parser("detect", parents=[common], help="detection filter residual")
    sub.add_parser("identify", parents=[common], help="attack set identification")
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig(
            network=_resolve_path(args.network),
            measurements=_resolve_path(args.measurements) if args.measurements else None,
            scenario=args.scenario, attack_sets=args.attack_set, k_max=args.k_max,
            budget=args.budget, horizon=args.horizon, step=args.step, tol=args.tol,
            epsilon=args.epsilon, seed=args.seed, out=args.out, workers=args.workers)
        cfg.validate()
        return COMMANDS[args.command](cfg, args)
    except (GridSentryError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
