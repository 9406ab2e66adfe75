"""Network descriptions, Laplacian assembly and the descriptor model.

Node conventions
----------------
Internally generators are ``0..n_gen-1`` and buses ``0..n_bus-1``; the
first ``n_gen`` buses are the generator terminal buses, so generator ``i``
is wired to bus ``i``.  The descriptor state is ``x = [delta; omega;
theta]`` of size ``N = 2*n_gen + n_bus``.

Files name nodes ``"g<i>"`` / ``"b<j>"`` (1-based, any bus numbering).
The loader reorders buses so that terminal buses come first and keeps the
original labels in ``NetworkSpec.bus_labels``.
"""

from __future__ import annotations

from dataclasses import dataclass
import json
from pathlib import Path

import numpy as np
import scipy.sparse.csgraph as csgraph

from .errors import ModelError, ValidationError

DATA_DIR = Path(__file__).parent / "data"


def _frozen(a):
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class NetworkSpec:
    """Generators, buses and the admittance-weighted graph.

    Parameters
    ----------
    inertia, damping : sequences of length n_gen
        Generator inertia M_i and damping D_i (per unit).
    n_bus : int
        Number of buses; buses ``0..n_gen-1`` are the terminal buses.
    internal : sequence of length n_gen
        Weight of the internal edge between generator i and bus i.
    lines : sequence of (bus_a, bus_b, weight)
        Transmission lines between buses (0-based indices).
    """

    inertia: tuple
    damping: tuple
    n_bus: int
    internal: tuple
    lines: tuple
    bus_labels: tuple = ()
    gen_labels: tuple = ()
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "inertia", tuple(float(v) for v in self.inertia))
        object.__setattr__(self, "damping", tuple(float(v) for v in self.damping))
        object.__setattr__(self, "internal", tuple(float(v) for v in self.internal))
        object.__setattr__(self, "lines", tuple(
            (int(a), int(b), float(w)) for a, b, w in self.lines))
        if not self.bus_labels:
            object.__setattr__(self, "bus_labels",
                               tuple(f"b{j + 1}" for j in range(self.n_bus)))
        if not self.gen_labels:
            object.__setattr__(self, "gen_labels",
                               tuple(f"g{i + 1}" for i in range(self.n_gen)))
        self.validate()

    @property
    def n_gen(self):
        return len(self.inertia)

    @property
    def n_state(self):
        return 2 * self.n_gen + self.n_bus

    def validate(self):
        problems = []
        n, m = self.n_gen, self.n_bus
        if n < 1:
            problems.append("n_gen: at least one generator is required")
        if m < n:
            problems.append(f"n_bus: {m} buses cannot host {n} terminal buses")
        for field_name, values in (("inertia", self.inertia),
                                   ("damping", self.damping),
                                   ("internal", self.internal)):
            if len(values) != n:
                problems.append(f"{field_name}: expected {n} entries, got {len(values)}")
            for i, v in enumerate(values):
                if not np.isfinite(v) or v <= 0:
                    problems.append(f"{field_name}[{i}]: must be positive, got {v}")
        seen = set()
        for k, (a, b, w) in enumerate(self.lines):
            if not (0 <= a < m and 0 <= b < m):
                problems.append(f"lines[{k}]: bus index out of range ({a}, {b})")
                continue
            if a == b:
                problems.append(f"lines[{k}]: self-loop at bus {a}")
            if not np.isfinite(w) or w <= 0:
                problems.append(f"lines[{k}]: weight must be positive, got {w}")
            key = frozenset((a, b))
            if key in seen:
                problems.append(f"lines[{k}]: duplicate line {self.bus_labels[a]}-{self.bus_labels[b]}")
            seen.add(key)
        if len(self.bus_labels) != m or len(self.gen_labels) != n:
            problems.append("labels: label count does not match node count")
        if problems:
            raise ValidationError("invalid network: " + "; ".join(problems))

    def bus_index(self, ref):
        """Resolve a bus label (``"b7"``) or 0-based index."""
        return _resolve(ref, self.bus_labels, "bus")

    def gen_index(self, ref):
        return _resolve(ref, self.gen_labels, "generator")

    def line_weight(self, a, b):
        a, b = self.bus_index(a), self.bus_index(b)
        for u, v, w in self.lines:
            if {u, v} == {a, b}:
                return w
        raise ValidationError(f"no line between {self.bus_labels[a]} and {self.bus_labels[b]}")

    def without_line(self, a, b):
        """Copy of the network with one transmission line removed."""
        a, b = self.bus_index(a), self.bus_index(b)
        self.line_weight(a, b)
        kept = tuple(l for l in self.lines if {l[0], l[1]} != {a, b})
        return NetworkSpec(self.inertia, self.damping, self.n_bus, self.internal,
                           kept, self.bus_labels, self.gen_labels, self.name)

    def scaled(self, c):
        """Copy with every edge weight multiplied by ``c``."""
        return NetworkSpec(self.inertia, self.damping, self.n_bus,
                           tuple(c * w for w in self.internal),
                           tuple((a, b, c * w) for a, b, w in self.lines),
                           self.bus_labels, self.gen_labels, self.name)


def _resolve(ref, labels, kind):
    if isinstance(ref, (int, np.integer)):
        if not 0 <= ref < len(labels):
            raise ValidationError(f"{kind} index {ref} out of range")
        return int(ref)
    try:
        return labels.index(str(ref))
    except ValueError:
        raise ValidationError(f"unknown {kind} {ref!r}") from None


@dataclass(frozen=True)
class LaplacianBlocks:
    """Blocks of the admittance Laplacian, generators first."""

    L_gg: np.ndarray
    L_gl: np.ndarray
    L_lg: np.ndarray
    L_ll: np.ndarray

    def __post_init__(self):
        for name in ("L_gg", "L_gl", "L_lg", "L_ll"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))

    @property
    def full(self):
        return np.block([[self.L_gg, self.L_gl], [self.L_lg, self.L_ll]])


def assemble_laplacian(spec: NetworkSpec) -> LaplacianBlocks:
    """Weighted Laplacian of the generator/bus graph."""
    n, m = spec.n_gen, spec.n_bus
    L = np.zeros((n + m, n + m))

    def add(i, j, w):
        L[i, i] += w
        L[j, j] += w
        L[i, j] -= w
        L[j, i] -= w

    for i, w in enumerate(spec.internal):
        add(i, n + i, w)
    for a, b, w in spec.lines:
        add(n + a, n + b, w)
    ncomp, _ = csgraph.connected_components(np.abs(L) > 0, directed=False)
    if ncomp != 1:
        raise ModelError(f"network graph is disconnected ({ncomp} components)")
    return LaplacianBlocks(L[:n, :n], L[:n, n:], L[n:, :n], L[n:, n:])


# ---------------------------------------------------------------------------
# measurements
# ---------------------------------------------------------------------------

SELECTOR_KINDS = ("bus_injection", "line_injection", "branch_flow",
                  "rotor_angle", "bus_angle", "rotor_freq", "raw_row")


@dataclass(frozen=True)
class Selector:
    """One measured quantity, i.e. one row of C.

    ``bus_injection`` is the DC power-flow balance at a bus (a row of
    [L_lg 0 L_ll]); ``line_injection`` is the power a bus pushes into its
    transmission lines, which is what an injection meter reads at a
    generator terminal bus.  ``branch_flow`` is metered at the ``target[0]``
    end of the line.
    """

    kind: str
    target: object

    def __post_init__(self):
        if self.kind not in SELECTOR_KINDS:
            raise ValidationError(f"unknown measurement kind {self.kind!r}")
        if self.kind == "raw_row":
            object.__setattr__(self, "target", tuple(float(v) for v in self.target))
        elif self.kind == "branch_flow":
            a, b = self.target
            object.__setattr__(self, "target", (a, b))

    @property
    def label(self):
        if self.kind == "raw_row":
            return "raw"
        if self.kind == "branch_flow":
            return f"flow({self.target[0]}->{self.target[1]})"
        return f"{self.kind}({self.target})"

    def to_dict(self):
        if self.kind == "raw_row":
            return {"type": "raw_row", "row": list(self.target)}
        if self.kind == "branch_flow":
            return {"type": "branch_flow", "from": self.target[0], "to": self.target[1]}
        key = "gen" if self.kind in ("rotor_angle", "rotor_freq") else "bus"
        return {"type": self.kind, key: self.target}


@dataclass(frozen=True)
class MeasurementSpec:
    selectors: tuple

    def __post_init__(self):
        sel = tuple(self.selectors)
        if not sel:
            raise ValidationError("measurement set must contain at least one selector")
        object.__setattr__(self, "selectors", sel)

    def __len__(self):
        return len(self.selectors)

    def __iter__(self):
        return iter(self.selectors)

    @property
    def labels(self):
        return tuple(s.label for s in self.selectors)


def build_measurement_matrix(spec: NetworkSpec, meas: MeasurementSpec,
                             lap: LaplacianBlocks | None = None) -> np.ndarray:
    """Rows of C on the descriptor coordinates [delta; omega; theta]."""
    lap = assemble_laplacian(spec) if lap is None else lap
    n, m = spec.n_gen, spec.n_bus
    N = spec.n_state
    th = 2 * n
    rows = []
    for k, sel in enumerate(meas):
        row = np.zeros(N)
        if sel.kind == "bus_injection":
            j = spec.bus_index(sel.target)
            row[:n] = lap.L_lg[j]
            row[th:] = lap.L_ll[j]
        elif sel.kind == "line_injection":
            j = spec.bus_index(sel.target)
            for a, b, w in spec.lines:
                if j in (a, b):
                    other = b if a == j else a
                    row[th + j] += w
                    row[th + other] -= w
        elif sel.kind == "branch_flow":
            a, b = (spec.bus_index(v) for v in sel.target)
            w = spec.line_weight(a, b)
            row[th + a] = w
            row[th + b] = -w
        elif sel.kind == "rotor_angle":
            row[spec.gen_index(sel.target)] = 1.0
        elif sel.kind == "rotor_freq":
            row[n + spec.gen_index(sel.target)] = 1.0
        elif sel.kind == "bus_angle":
            row[th + spec.bus_index(sel.target)] = 1.0
        elif sel.kind == "raw_row":
            if len(sel.target) != N:
                raise ValidationError(
                    f"measurement {k}: raw row has {len(sel.target)} entries, expected {N}")
            row[:] = sel.target
        if not np.any(row):
            raise ValidationError(f"measurement {k} ({sel.label}) is identically zero")
        rows.append(row)
    return np.array(rows)


# ---------------------------------------------------------------------------
# descriptor system
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DescriptorSystem:
    """E x' = A x + B u, y = C x + D u with B = [F 0], D = [0 L].

    Attack channels are numbered ``0..N-1`` for the state entries
    (delta, omega, theta) followed by ``N..N+p-1`` for the measurements.
    """

    E: np.ndarray
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    network: NetworkSpec
    laplacian: LaplacianBlocks
    measurements: MeasurementSpec | None = None

    def __post_init__(self):
        for name in ("E", "A", "B", "C", "D"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))

    @property
    def n_gen(self):
        return self.network.n_gen

    @property
    def n_bus(self):
        return self.network.n_bus

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
    def M(self):
        return np.diag(self.network.inertia)

    @property
    def D_g(self):
        return np.diag(self.network.damping)

    @property
    def partitions(self):
        n, m = self.n_gen, self.n_bus
        return {"delta": slice(0, n), "omega": slice(n, 2 * n),
                "theta": slice(2 * n, 2 * n + m)}

    @property
    def channel_labels(self):
        return channel_labels(self.network, self.n_out)


def channel_labels(spec, p):
    n, m = spec.n_gen, spec.n_bus
    labels = [f"delta{i + 1}" for i in range(n)]
    labels += [f"omega{i + 1}" for i in range(n)]
    labels += [f"theta{j + 1}" for j in range(m)]
    labels += [f"y{k + 1}" for k in range(p)]
    return tuple(labels)


def build_descriptor(spec: NetworkSpec, meas: MeasurementSpec | None = None,
                     C: np.ndarray | None = None) -> DescriptorSystem:
    """Descriptor matrices of the linearized swing / DC power-flow model.

    Either a measurement spec or an explicit output matrix must be given.
    F and L are identities, so there are ``N + p`` attack channels.
    """
    lap = assemble_laplacian(spec)
    n, m = spec.n_gen, spec.n_bus
    N = spec.n_state
    if C is None:
        if meas is None:
            raise ValidationError("either a measurement spec or C is required")
        C = build_measurement_matrix(spec, meas, lap)
    C = np.atleast_2d(np.asarray(C, dtype=float))
    if C.shape[1] != N:
        raise ValidationError(f"C must have {N} columns, got {C.shape[1]}")
    p = C.shape[0]
    M = np.diag(spec.inertia)
    Dg = np.diag(spec.damping)
    E = np.zeros((N, N))
    E[:n, :n] = np.eye(n)
    E[n:2 * n, n:2 * n] = M
    Z = np.zeros
    A = -np.block([
        [Z((n, n)), -np.eye(n), Z((n, m))],
        [lap.L_gg, Dg, lap.L_gl],
        [lap.L_lg, Z((m, n)), lap.L_ll],
    ])
    B = np.hstack([np.eye(N), np.zeros((N, p))])
    D = np.hstack([np.zeros((p, N)), np.eye(p)])
    return DescriptorSystem(E, A, B, C, D, spec, lap, meas)


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

def _read_json(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(
            f"{path}: JSON parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc


def _parse_node(ref, n_gen, where):
    if isinstance(ref, int):
        # integer nodes count generators first, 1-based
        return ("g", ref) if ref <= n_gen else ("b", ref - n_gen)
    if isinstance(ref, str) and len(ref) > 1 and ref[0] in "gb" and ref[1:].isdigit():
        return (ref[0], int(ref[1:]))
    raise ValidationError(f"{where}: cannot parse node {ref!r} (use 'g<i>' or 'b<j>')")


def network_from_dict(data, name=""):
    """Build a NetworkSpec from the JSON network schema."""
    try:
        gens = data["generators"]
        n_bus = int(data["buses"])
        edges = data["edges"]
        internal = data.get("internal")
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"network: missing or malformed field {exc}") from exc
    n = len(gens)
    problems = []
    inertia, damping = [], []
    for i, g in enumerate(gens):
        try:
            inertia.append(float(g["inertia"]))
            damping.append(float(g["damping"]))
        except (KeyError, TypeError, ValueError):
            problems.append(f"generators[{i}]: needs numeric 'inertia' and 'damping'")
    if internal is None:
        internal = [[f"g{i + 1}", f"b{i + 1}"] for i in range(n)]
    terminal = {}
    for k, pair in enumerate(internal):
        try:
            g = _parse_node(pair[0], n, f"internal[{k}]")
            b = _parse_node(pair[1], n, f"internal[{k}]")
        except (IndexError, TypeError):
            problems.append(f"internal[{k}]: expected [gen, bus]")
            continue
        if g[0] != "g" or b[0] != "b":
            problems.append(f"internal[{k}]: expected [gen, bus], got {pair}")
            continue
        if g[1] in terminal:
            problems.append(f"internal[{k}]: generator g{g[1]} has two terminal buses")
        terminal[g[1]] = b[1]
    if sorted(terminal) != list(range(1, n + 1)):
        problems.append("internal: every generator needs exactly one terminal bus")
    if len(set(terminal.values())) != len(terminal):
        problems.append("internal: two generators share a terminal bus")
    if problems:
        raise ValidationError("network: " + "; ".join(problems))

    term_buses = [terminal[i] for i in range(1, n + 1)]
    others = [b for b in range(1, n_bus + 1) if b not in term_buses]
    order = term_buses + others
    if len(order) != n_bus or any(b > n_bus or b < 1 for b in term_buses):
        raise ValidationError("network: terminal bus outside 1..buses")
    pos = {b: k for k, b in enumerate(order)}
    internal_w = [None] * n
    lines = []
    for k, e in enumerate(edges):
        try:
            a, b, w = e
            a = _parse_node(a, n, f"edges[{k}]")
            b = _parse_node(b, n, f"edges[{k}]")
            w = float(w)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError(f"edges[{k}]: expected [node, node, weight]") from exc
        kinds = a[0] + b[0]
        if kinds == "bb":
            if not (1 <= a[1] <= n_bus and 1 <= b[1] <= n_bus):
                raise ValidationError(f"edges[{k}]: bus out of range")
            lines.append((pos[a[1]], pos[b[1]], w))
        elif kinds in ("gb", "bg"):
            g, bus = (a, b) if a[0] == "g" else (b, a)
            if terminal.get(g[1]) != bus[1]:
                raise ValidationError(
                    f"edges[{k}]: generator g{g[1]} may only connect to its terminal bus")
            internal_w[g[1] - 1] = w
        else:
            raise ValidationError(f"edges[{k}]: generator-generator edges are not allowed")
    missing = [f"g{i + 1}" for i, w in enumerate(internal_w) if w is None]
    if missing:
        raise ValidationError(f"edges: no internal edge weight for {', '.join(missing)}")
    gen_labels = tuple(g.get("name", f"g{i + 1}") if isinstance(g, dict) else f"g{i + 1}"
                       for i, g in enumerate(gens))
    return NetworkSpec(inertia, damping, n_bus, internal_w, lines,
                       tuple(f"b{b}" for b in order), gen_labels,
                       name or data.get("name", ""))


def network_to_dict(spec: NetworkSpec):
    edges = [[spec.gen_labels[i], spec.bus_labels[i], w] for i, w in enumerate(spec.internal)]
    edges += [[spec.bus_labels[a], spec.bus_labels[b], w] for a, b, w in spec.lines]
    return {
        "name": spec.name,
        "generators": [{"inertia": M, "damping": D, "name": g}
                       for M, D, g in zip(spec.inertia, spec.damping, spec.gen_labels)],
        "buses": spec.n_bus,
        "edges": edges,
        "internal": [[spec.gen_labels[i], spec.bus_labels[i]] for i in range(spec.n_gen)],
    }


def load_network(path) -> NetworkSpec:
    """Read and validate a network JSON file (see ``network_from_dict``)."""
    data = _read_json(path)
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: top level must be an object")
    return network_from_dict(data, name=data.get("name", Path(path).stem))


def measurements_from_list(items):
    sels = []
    for k, item in enumerate(items):
        if not isinstance(item, dict) or "type" not in item:
            raise ValidationError(f"measurements[{k}]: expected an object with 'type'")
        kind = item["type"]
        try:
            if kind in ("bus_injection", "line_injection", "bus_angle"):
                target = item["bus"]
            elif kind in ("rotor_angle", "rotor_freq"):
                target = item["gen"]
            elif kind == "branch_flow":
                target = (item["from"], item["to"])
            elif kind == "raw_row":
                target = item["row"]
            else:
                raise ValidationError(f"measurements[{k}]: unknown type {kind!r}")
        except KeyError as exc:
            raise ValidationError(f"measurements[{k}]: missing field {exc}") from None
        sels.append(Selector(kind, target))
    return MeasurementSpec(tuple(sels))


def load_measurements(path) -> MeasurementSpec:
    """Read a measurement file: a list of tagged selectors.

    A top-level object with a ``"measurements"`` list is accepted too.
    """
    data = _read_json(path)
    if isinstance(data, dict):
        data = data.get("measurements")
    if not isinstance(data, list):
        raise ValidationError(f"{path}: expected a list of selectors")
    return measurements_from_list(data)


def bundled(name):
    """Path of a data file shipped with the package (``ieee14.json`` ...)."""
    path = DATA_DIR / name
    if not path.exists():
        raise ValidationError(f"no bundled data file {name!r}")
    return path
