"""Target energy functions over ``{0,1}^Nx``.

Four kinds are supported: the periodic 2D Ising ferromagnet, the
Sherrington-Kirkpatrick spin glass, maximum independent set with an edge
penalty, and weighted max-cut.  Ising and SK read bits as spins
``s = 2x - 1``; MIS and max-cut use the bits directly.

``raw_energy`` evaluates each formula as written.  Single-flip updates go
through a compiled quadratic form (``const + h.x + sum_{i<j} Q_ij x_i x_j``),
which is an independent route to the same numbers.
"""
from __future__ import annotations

import hashlib
import io
import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, TextIO, Union

import numpy as np

from .rbm import MAX_ENUM_VISIBLE, all_configs

ISING2D = "ising2d"
SK = "sk"
MIS = "mis"
MAXCUT = "maxcut"
KINDS = (ISING2D, SK, MIS, MAXCUT)


class GsetParseError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


def _edge_arrays(edges, n: int, weighted: bool):
    arr = np.asarray(edges, dtype=np.float64).reshape(-1, 3 if weighted else 2)
    i = arr[:, 0].astype(np.int64)
    j = arr[:, 1].astype(np.int64)
    if not (np.array_equal(i, arr[:, 0]) and np.array_equal(j, arr[:, 1])):
        raise ValueError("edge endpoints must be integers")
    if np.any(i == j):
        raise ValueError("self-loops are not allowed")
    lo, hi = np.minimum(i, j), np.maximum(i, j)
    if lo.size and (lo.min() < 0 or hi.max() >= n):
        raise ValueError(f"edge endpoint out of range [0, {n})")
    keys = lo * n + hi
    if np.unique(keys).size != keys.size:
        raise ValueError("duplicate edges are not allowed")
    w = arr[:, 2].copy() if weighted else np.ones(lo.size)
    for a in (lo, hi, w):
        a.setflags(write=False)
    return lo, hi, w


def _as_bits(x, n: int) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x)
    single = arr.ndim == 1
    arr2 = arr[None, :] if single else arr
    if arr2.ndim != 2 or arr2.shape[1] != n:
        raise ValueError(f"configuration has shape {arr.shape}, expected (..., {n})")
    return arr2.astype(np.float64), single


@dataclass(frozen=True)
class IsingLattice:
    """``L x L`` ferromagnet; site ``(r, c)`` has index ``r*L + c``."""

    side: int
    coupling: float = 1.0
    periodic: bool = True

    def __post_init__(self):
        if self.side < 1:
            raise ValueError(f"lattice side must be positive, got {self.side}")
        if self.periodic and self.side < 3:
            # L=2 periodic double-counts every bond
            raise ValueError("periodic lattice needs side >= 3")

    @property
    def n(self) -> int:
        return self.side * self.side

    @cached_property
    def edges(self) -> np.ndarray:
        L = self.side
        out = []
        for r in range(L):
            for c in range(L):
                s = r * L + c
                if self.periodic or c + 1 < L:
                    out.append((s, r * L + (c + 1) % L))
                if self.periodic or r + 1 < L:
                    out.append((s, ((r + 1) % L) * L + c))
        e = np.sort(np.array(out, dtype=np.int64), axis=1)
        return e

    def raw_energy(self, x):
        xb, single = _as_bits(x, self.n)
        s = (2.0 * xb - 1.0).reshape(-1, self.side, self.side)
        if self.periodic:
            bonds = (s * np.roll(s, -1, axis=2)).sum(axis=(1, 2)) + (s * np.roll(s, -1, axis=1)).sum(axis=(1, 2))
        else:
            bonds = (s[:, :, :-1] * s[:, :, 1:]).sum(axis=(1, 2)) + (s[:, :-1, :] * s[:, 1:, :]).sum(axis=(1, 2))
        e = -self.coupling * bonds
        return float(e[0]) if single else e

    def quadratic_form(self):
        # s_i s_j = 4 x_i x_j - 2 x_i - 2 x_j + 1
        e = self.edges
        J = self.coupling
        lin = np.zeros(self.n)
        np.add.at(lin, e[:, 0], 2.0 * J)
        np.add.at(lin, e[:, 1], 2.0 * J)
        return -J * len(e), lin, e[:, 0], e[:, 1], np.full(len(e), -4.0 * J)

    def to_dict(self) -> dict:
        return {"side": self.side, "coupling": self.coupling, "periodic": self.periodic}


@dataclass(frozen=True, eq=False)
class SkCouplings:
    """Fully connected spin glass; ``couplings[i, j]`` used for ``i < j`` only."""

    n: int
    couplings: np.ndarray

    def __post_init__(self):
        J = np.triu(np.asarray(self.couplings, dtype=np.float64), k=1)
        if J.shape != (self.n, self.n):
            raise ValueError(f"couplings shape {J.shape} does not match n={self.n}")
        if not np.all(np.isfinite(J)):
            raise ValueError("couplings must be finite")
        J.setflags(write=False)
        object.__setattr__(self, "couplings", J)

    def raw_energy(self, x):
        xb, single = _as_bits(x, self.n)
        s = 2.0 * xb - 1.0
        e = -np.einsum("bi,ij,bj->b", s, self.couplings, s)
        return float(e[0]) if single else e

    def quadratic_form(self):
        iu, ju = np.triu_indices(self.n, k=1)
        J = self.couplings[iu, ju]
        lin = np.zeros(self.n)
        np.add.at(lin, iu, 2.0 * J)
        np.add.at(lin, ju, 2.0 * J)
        return -J.sum(), lin, iu, ju, -4.0 * J

    def to_dict(self) -> dict:
        iu, ju = np.triu_indices(self.n, k=1)
        return {"n": self.n, "couplings": [[int(a), int(b), float(self.couplings[a, b])] for a, b in zip(iu, ju)]}


@dataclass(frozen=True, eq=False)
class MisInstance:
    """Independent-set energy ``-sum x_i + penalty * sum_{(i,j) in E} x_i x_j``."""

    n: int
    edges: np.ndarray
    penalty: float = 2.0

    def __post_init__(self):
        if self.penalty <= 0:
            raise ValueError(f"penalty must be positive, got {self.penalty}")
        lo, hi, _ = _edge_arrays(self.edges, self.n, weighted=False)
        e = np.stack([lo, hi], axis=1) if lo.size else np.zeros((0, 2), dtype=np.int64)
        e.setflags(write=False)
        object.__setattr__(self, "edges", e)

    def raw_energy(self, x):
        xb, single = _as_bits(x, self.n)
        e = -xb.sum(axis=1) + self.penalty * (xb[:, self.edges[:, 0]] * xb[:, self.edges[:, 1]]).sum(axis=1)
        return float(e[0]) if single else e

    def quadratic_form(self):
        m = len(self.edges)
        return 0.0, -np.ones(self.n), self.edges[:, 0], self.edges[:, 1], np.full(m, float(self.penalty))

    def to_dict(self) -> dict:
        return {"n": self.n, "penalty": self.penalty, "edges": self.edges.tolist()}


@dataclass(frozen=True, eq=False)
class WeightedGraph:
    """Max-cut instance; energy ``-sum_{i<j} w_ij (x_i - x_j)^2``."""

    n: int
    i: np.ndarray
    j: np.ndarray
    w: np.ndarray

    @classmethod
    def from_edges(cls, n: int, edges: Iterable) -> "WeightedGraph":
        edges = list(edges)
        if n < 1:
            raise ValueError(f"node count must be positive, got {n}")
        lo, hi, w = _edge_arrays(edges if edges else np.zeros((0, 3)), n, weighted=True)
        return cls(n, lo, hi, w)

    @property
    def n_edges(self) -> int:
        return int(self.i.size)

    @property
    def density(self) -> float:
        return self.n_edges / (self.n * (self.n - 1) / 2)

    def edge_list(self) -> list[tuple[int, int, float]]:
        return [(int(a), int(b), float(c)) for a, b, c in zip(self.i, self.j, self.w)]

    def raw_energy(self, x):
        xb, single = _as_bits(x, self.n)
        d = xb[:, self.i] - xb[:, self.j]
        e = -(d * d * self.w).sum(axis=1)
        return float(e[0]) if single else e

    def quadratic_form(self):
        # (x_i - x_j)^2 = x_i + x_j - 2 x_i x_j on bits
        lin = np.zeros(self.n)
        np.add.at(lin, self.i, -self.w)
        np.add.at(lin, self.j, -self.w)
        return 0.0, lin, self.i, self.j, 2.0 * self.w

    def to_dict(self) -> dict:
        return {"n": self.n, "edges": [[a, b, c] for a, b, c in self.edge_list()]}

    def __eq__(self, other):
        if not isinstance(other, WeightedGraph):
            return NotImplemented
        return (self.n == other.n and np.array_equal(self.i, other.i) and np.array_equal(self.j, other.j)
                and np.array_equal(self.w, other.w))


Payload = Union[IsingLattice, SkCouplings, MisInstance, WeightedGraph]
_KIND_OF = {IsingLattice: ISING2D, SkCouplings: SK, MisInstance: MIS, WeightedGraph: MAXCUT}


@dataclass(frozen=True)
class CompiledQuadratic:
    """Bit-space quadratic form in CSR layout for O(degree) flip updates."""

    const: float
    linear: np.ndarray
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray

    @classmethod
    def build(cls, n, const, linear, ii, jj, q) -> "CompiledQuadratic":
        rows = np.concatenate([ii, jj]).astype(np.int64)
        cols = np.concatenate([jj, ii]).astype(np.int64)
        vals = np.concatenate([q, q]).astype(np.float64)
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(indptr, rows + 1, 1)
        return cls(float(const), np.ascontiguousarray(linear, dtype=np.float64), np.cumsum(indptr),
                   np.ascontiguousarray(cols), np.ascontiguousarray(vals))

    def local_field(self, x: np.ndarray, k: int) -> float:
        lo, hi = self.indptr[k], self.indptr[k + 1]
        return float(self.linear[k] + np.dot(self.data[lo:hi], x[self.indices[lo:hi]]))


@dataclass(frozen=True, eq=False)
class TargetModel:
    """A target energy with inverse temperature; ``beta * raw`` is the training energy."""

    payload: Payload
    beta: float = 1.0
    name: str = ""

    def __post_init__(self):
        if not (np.isfinite(self.beta) and self.beta > 0):
            raise ValueError(f"beta must be positive and finite, got {self.beta}")
        if type(self.payload) not in _KIND_OF:
            raise TypeError(f"unsupported payload type {type(self.payload).__name__}")

    @property
    def kind(self) -> str:
        return _KIND_OF[type(self.payload)]

    @property
    def n(self) -> int:
        return self.payload.n

    def with_beta(self, beta: float) -> "TargetModel":
        return TargetModel(self.payload, beta, self.name)

    @cached_property
    def compiled(self) -> CompiledQuadratic:
        return CompiledQuadratic.build(self.n, *self.payload.quadratic_form())

    def to_dict(self) -> dict:
        return {"kind": self.kind, "beta": self.beta, "name": self.name, **self.payload.to_dict()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def content_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()

    @classmethod
    def from_dict(cls, d: dict) -> "TargetModel":
        kind = d["kind"]
        if kind == ISING2D:
            payload = IsingLattice(int(d["side"]), float(d.get("coupling", 1.0)), bool(d.get("periodic", True)))
        elif kind == SK:
            n = int(d["n"])
            J = np.zeros((n, n))
            for a, b, v in d["couplings"]:
                J[int(a), int(b)] = float(v)
            payload = SkCouplings(n, J)
        elif kind == MIS:
            payload = MisInstance(int(d["n"]), np.asarray(d["edges"], dtype=np.int64).reshape(-1, 2),
                                  float(d.get("penalty", 2.0)))
        elif kind == MAXCUT:
            payload = WeightedGraph.from_edges(int(d["n"]), d["edges"])
        else:
            raise ValueError(f"unknown model kind {kind!r}; expected one of {KINDS}")
        return cls(payload, float(d.get("beta", 1.0)), str(d.get("name", "")))

    @classmethod
    def from_json(cls, text: str) -> "TargetModel":
        return cls.from_dict(json.loads(text))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "TargetModel":
        return cls.from_json(Path(path).read_text())


def raw_energy(model: TargetModel, x):
    return model.payload.raw_energy(x)


def effective_energy(model: TargetModel, x):
    """``beta * raw_energy``: the only place the inverse temperature is applied."""
    return model.beta * raw_energy(model, x)


def raw_energy_delta(model: TargetModel, x, k: int) -> float:
    n = model.n
    if not 0 <= k < n:
        raise IndexError(f"flip index {k} out of range [0, {n})")
    xv = np.asarray(x)
    if xv.shape != (n,):
        raise ValueError(f"configuration has shape {xv.shape}, expected ({n},)")
    xf = xv.astype(np.float64)
    return (1.0 - 2.0 * xf[k]) * model.compiled.local_field(xf, k)


def energy_delta(model: TargetModel, x, k: int) -> float:
    """Change in effective energy when bit ``k`` of ``x`` is flipped."""
    return model.beta * raw_energy_delta(model, x, k)


# -- instance generators ---------------------------------------------------

def sample_sk_couplings(n: int, rng: np.random.Generator) -> SkCouplings:
    """i.i.d. ``N(0, 1/n)`` couplings, filled in row-major upper-triangle order."""
    if n < 2:
        raise ValueError(f"SK model needs n >= 2, got {n}")
    iu, ju = np.triu_indices(n, k=1)
    J = np.zeros((n, n))
    J[iu, ju] = rng.normal(0.0, np.sqrt(1.0 / n), size=iu.size)
    return SkCouplings(n, J)


def random_regular_graph(n: int, degree: int, rng: np.random.Generator, max_restarts: int = 1000) -> np.ndarray:
    """Simple ``degree``-regular graph on ``n`` nodes, edges as sorted ``(i, j)`` rows.

    Configuration-model stub pairing: stubs are shuffled and paired, pairs
    that would form a self-loop or multi-edge are rejected and their stubs
    returned to the pool.  If the remaining stubs admit no valid pair the
    attempt restarts from scratch.
    """
    if degree < 0 or degree >= n or (n * degree) % 2:
        raise ValueError(f"no simple {degree}-regular graph on {n} nodes")
    for _ in range(max_restarts):
        edges: set[tuple[int, int]] = set()
        stubs = np.repeat(np.arange(n), degree)
        ok = True
        while stubs.size:
            stubs = rng.permutation(stubs)
            pairs = stubs.reshape(-1, 2)
            leftover = []
            for a, b in pairs:
                a, b = (int(a), int(b)) if a < b else (int(b), int(a))
                if a != b and (a, b) not in edges:
                    edges.add((a, b))
                else:
                    leftover.extend((a, b))
            if len(leftover) == stubs.size:
                if not _has_valid_pair(leftover, edges):
                    ok = False
                    break
            stubs = np.array(leftover, dtype=np.int64)
        if ok:
            return np.array(sorted(edges), dtype=np.int64).reshape(-1, 2)
    raise RuntimeError(f"failed to build a {degree}-regular graph on {n} nodes")


def _has_valid_pair(stubs: list[int], edges: set) -> bool:
    nodes = sorted(set(stubs))
    for p, a in enumerate(nodes):
        for b in nodes[p + 1:]:
            if (a, b) not in edges:
                return True
    return False


# -- Gset ------------------------------------------------------------------

def parse_gset(stream: Union[TextIO, str]) -> WeightedGraph:
    """Read a Gset edge list (``N M`` header, then ``i j w`` with 1-based nodes)."""
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    lines = stream.read().splitlines()
    # trailing blank lines are tolerated, nothing else is
    while lines and not lines[-1].strip():
        lines.pop()
    if not lines:
        raise GsetParseError(1, "empty input, expected header 'N M'")
    head = lines[0].split()
    if len(head) != 2:
        raise GsetParseError(1, f"expected header 'N M', got {lines[0]!r}")
    try:
        n, m = int(head[0]), int(head[1])
    except ValueError:
        raise GsetParseError(1, f"non-integer header {lines[0]!r}") from None
    if n < 1 or m < 0:
        raise GsetParseError(1, f"invalid header counts N={n} M={m}")
    edges = []
    seen: set[tuple[int, int]] = set()
    for lineno, line in enumerate(lines[1:], start=2):
        if lineno - 1 > m:
            raise GsetParseError(lineno, f"more edge lines than the {m} declared in the header")
        parts = line.split()
        if len(parts) != 3:
            raise GsetParseError(lineno, f"expected 'i j w', got {line!r}")
        try:
            a, b = int(parts[0]), int(parts[1])
            w = float(parts[2])
        except ValueError:
            raise GsetParseError(lineno, f"malformed edge {line!r}") from None
        for v in (a, b):
            if not 1 <= v <= n:
                raise GsetParseError(lineno, f"node {v} outside [1, {n}]")
        if a == b:
            raise GsetParseError(lineno, f"self-loop on node {a}")
        key = (min(a, b) - 1, max(a, b) - 1)
        if key in seen:
            raise GsetParseError(lineno, f"duplicate edge {a} {b}")
        seen.add(key)
        edges.append((key[0], key[1], w))
    if len(edges) != m:
        raise GsetParseError(len(lines) + 1, f"header declares {m} edges but {len(edges)} were read")
    return WeightedGraph.from_edges(n, edges)


def _fmt_weight(w: float) -> str:
    return str(int(w)) if float(w).is_integer() else repr(float(w))


def serialize_gset(graph: WeightedGraph) -> str:
    out = [f"{graph.n} {graph.n_edges}"]
    out.extend(f"{a + 1} {b + 1} {_fmt_weight(w)}" for a, b, w in graph.edge_list())
    return "\n".join(out) + "\n"


def load_gset(path) -> WeightedGraph:
    with open(path) as fh:
        return parse_gset(fh)


# -- exact enumeration (tests and desk-scale experiments) -------------------

def exact_distribution(model: TargetModel) -> tuple[np.ndarray, np.ndarray]:
    """All states (``all_configs`` order) and their Boltzmann probabilities."""
    if model.n > MAX_ENUM_VISIBLE:
        raise ValueError(f"enumeration is limited to Nx <= {MAX_ENUM_VISIBLE}, got {model.n}")
    states = all_configs(model.n)
    e = effective_energy(model, states)
    w = np.exp(-(e - e.min()))
    return states, w / w.sum()


def exact_samples(model: TargetModel, count: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` i.i.d. draws from the exact Boltzmann distribution."""
    states, p = exact_distribution(model)
    idx = rng.choice(len(states), size=count, p=p)
    return states[idx]
