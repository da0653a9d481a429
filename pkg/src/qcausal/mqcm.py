"""DAGs over laboratories and Markov quantum causal models.

An :class:`Mqcm` attaches to every laboratory a channel from its parent space
(the incoming source spaces, ordered by ``(source id, edge id)``) to its input
space. :func:`assemble` turns it into a process matrix in canonical order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .events import (
    ChannelMatrix,
    ChoiMap,
    apply_channel,
    channel_from_map,
    identity_channel,
    state_channel,
)
from .process import LocalLab, ProcessMatrix, reduced_process
from .tensor import CMatrix, double_ket, kron, permute_subsystems


@dataclass(frozen=True)
class Edge:
    """Directed edge; ``s_dim`` is the source-space dimension (``None`` = undeclared)."""

    source: str
    target: str
    id: str
    s_dim: int | None = 2
    t_dim: int | None = None

    @property
    def target_dim(self) -> int | None:
        return self.s_dim if self.t_dim is None else self.t_dim


class CycleError(ValueError):
    pass


@dataclass(frozen=True)
class CausalDag:
    vertices: tuple[str, ...]
    edges: tuple[Edge, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "vertices", tuple(str(v) for v in self.vertices))
        object.__setattr__(self, "edges", tuple(self.edges))
        if len(set(self.vertices)) != len(self.vertices):
            raise ValueError("duplicate vertices")
        ids = [e.id for e in self.edges]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate edge ids")
        for e in self.edges:
            if e.source not in self.vertices or e.target not in self.vertices:
                raise ValueError(f"edge {e.id} references an unknown vertex")
            if e.source == e.target:
                raise CycleError(f"self-loop on {e.source}")
        self.topological_order()

    @classmethod
    def from_pairs(cls, vertices: Sequence[str], pairs, s_dim: int | None = 2) -> "CausalDag":
        edges = [Edge(s, t, f"{s}->{t}", s_dim) for s, t in pairs]
        return cls(tuple(vertices), tuple(edges))

    def pairs(self) -> frozenset[tuple[str, str]]:
        return frozenset((e.source, e.target) for e in self.edges)

    def in_edges(self, v: str) -> list[Edge]:
        """Incoming edges in parent-space order."""
        return sorted((e for e in self.edges if e.target == v), key=lambda e: (e.source, e.id))

    def out_edges(self, v: str) -> list[Edge]:
        """Outgoing edges in output-factor order."""
        return sorted((e for e in self.edges if e.source == v), key=lambda e: (e.target, e.id))

    def parents(self, v: str) -> list[str]:
        return sorted({e.source for e in self.edges if e.target == v})

    def children(self, v: str) -> list[str]:
        return sorted({e.target for e in self.edges if e.source == v})

    def topological_order(self) -> list[str]:
        indeg = {v: 0 for v in self.vertices}
        for e in self.edges:
            indeg[e.target] += 1
        ready = [v for v in self.vertices if indeg[v] == 0]
        order = []
        while ready:
            v = ready.pop(0)
            order.append(v)
            for e in self.edges:
                if e.source == v:
                    indeg[e.target] -= 1
                    if indeg[e.target] == 0:
                        ready.append(e.target)
        if len(order) != len(self.vertices):
            raise CycleError("graph has a directed cycle")
        return order

    def with_edge(self, edge: Edge) -> "CausalDag":
        return CausalDag(self.vertices, self.edges + (edge,))

    def to_dict(self) -> dict:
        return {
            "vertices": list(self.vertices),
            "edges": [{"from": e.source, "to": e.target, "id": e.id,
                       "s_dim": e.s_dim, "t_dim": e.t_dim} for e in self.edges],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "CausalDag":
        edges = [Edge(str(e["from"]), str(e["to"]), str(e.get("id", f"{e['from']}->{e['to']}")),
                      e.get("s_dim", 2), e.get("t_dim")) for e in data.get("edges", [])]
        return cls(tuple(data["vertices"]), tuple(edges))

    def to_dot(self, name: str = "G") -> str:
        lines = [f"digraph {name} {{"]
        for v in self.vertices:
            lines.append(f'  "{v}";')
        for e in sorted(self.edges, key=lambda e: (e.source, e.target, e.id)):
            label = "declared-only" if e.s_dim is None else str(e.s_dim)
            lines.append(f'  "{e.source}" -> "{e.target}" [label="{label}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"


def all_dags(vertices: Sequence[str]) -> list[CausalDag]:
    """Every DAG on the labelled vertex set, with qubit edges."""
    vertices = tuple(vertices)
    pairs = [(a, b) for a in vertices for b in vertices if a != b]
    out = []
    for mask in range(1 << len(pairs)):
        chosen = [p for k, p in enumerate(pairs) if mask >> k & 1]
        if any((b, a) in chosen for a, b in chosen):
            continue
        try:
            out.append(CausalDag.from_pairs(vertices, chosen))
        except CycleError:
            continue
    return out


@dataclass(frozen=True, eq=False)
class Mqcm:
    """A DAG with one channel per laboratory, from its parent space to its input.

    ``sink_out_dims`` gives the output dimension of childless labs (default 1).
    Labs flagged in ``latent`` are ordinary labs that will be traced out.
    """

    dag: CausalDag
    channels: Mapping[str, ChannelMatrix]
    sink_out_dims: Mapping[str, int] = field(default_factory=dict)
    latent: frozenset[str] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "channels", dict(self.channels))
        object.__setattr__(self, "sink_out_dims", dict(self.sink_out_dims))
        object.__setattr__(self, "latent", frozenset(self.latent))
        for v in self.dag.vertices:
            if v not in self.channels:
                raise ValueError(f"no channel for lab {v}")
            t = self.channels[v]
            src = tuple(e.s_dim for e in self.dag.in_edges(v))
            if None in src:
                raise ValueError(f"edge into {v} has no declared source dimension")
            if math.prod(src) != t.d_source:
                raise ValueError(f"channel for {v} has source dims {t.source_dims}, "
                                 f"parent space is {src}")
            if self.dag.out_edges(v) and v in self.sink_out_dims:
                raise ValueError(f"lab {v} has children; its output is fixed by its edges")
        unknown = set(self.latent) - set(self.dag.vertices)
        if unknown:
            raise ValueError(f"unknown latent labs {sorted(unknown)}")

    def lab(self, v: str) -> LocalLab:
        outs = self.dag.out_edges(v)
        d_in = self.channels[v].d_target
        if outs:
            factors = tuple((e.id, e.s_dim) for e in outs)
            return LocalLab(v, d_in, math.prod(d for _, d in factors), factors, v in self.latent)
        return LocalLab(v, d_in, int(self.sink_out_dims.get(v, 1)), (), v in self.latent)

    def labs(self) -> list[LocalLab]:
        return [self.lab(v) for v in self.dag.vertices]


def _slot_order(labs: Sequence[LocalLab], in_slots: Mapping[str, list], out_slots: Mapping[str, list]):
    order = []
    for lab in labs:
        order.extend(in_slots[lab.id])
        order.extend(out_slots[lab.id])
    return order


def _arrange(factors: Sequence[tuple[CMatrix, list]], slots: list, labs: Sequence[LocalLab]):
    """Kronecker the factors and permute their labelled subsystems into ``slots`` order."""
    mats = [m for m, _ in factors]
    labels = [l for _, ls in factors for l in ls]
    big = kron(*mats)
    if sorted(map(repr, labels)) != sorted(map(repr, slots)):
        raise ValueError("subsystem bookkeeping mismatch")
    perm = [slots.index(l) for l in labels]
    big = permute_subsystems(big, perm) if labels else big
    dims = tuple(d for l in labs for d in (l.d_in, l.d_out))
    return ProcessMatrix(labs, big.with_dims(dims))


def assemble(m: Mqcm) -> ProcessMatrix:
    """Process matrix ``(x)_j T_j (x) 1`` on childless outputs, in canonical order."""
    labs = m.labs()
    factors = []
    for v in m.dag.vertices:
        t = m.channels[v]
        src = [("S", e.id) for e in m.dag.in_edges(v)]
        dims = tuple(e.s_dim for e in m.dag.in_edges(v)) + (t.d_target,)
        factors.append((t.matrix.with_dims(dims), src + [("I", v)]))
    for lab in labs:
        if not m.dag.out_edges(lab.id):
            factors.append((CMatrix(np.eye(lab.d_out)), [("O", lab.id)]))
    in_slots = {l.id: [("I", l.id)] for l in labs}
    out_slots = {l.id: ([("S", e.id) for e in m.dag.out_edges(l.id)] or [("O", l.id)])
                 for l in labs}
    return _arrange(factors, _slot_order(labs, in_slots, out_slots), labs)


def wires_process(dag: CausalDag, sink_out_dims: Mapping[str, int] | None = None) -> ProcessMatrix:
    """Identity wires ``|1>><<1|`` from every edge's source space to its target space."""
    sink_out_dims = dict(sink_out_dims or {})
    labs = []
    for v in dag.vertices:
        for e in dag.in_edges(v) + dag.out_edges(v):
            if e.s_dim is None or e.target_dim != e.s_dim:
                raise ValueError(f"edge {e.id} needs equal source and target dimensions")
        outs = dag.out_edges(v)
        d_in = math.prod(e.target_dim for e in dag.in_edges(v))
        if outs:
            factors = tuple((e.id, e.s_dim) for e in outs)
            labs.append(LocalLab(v, d_in, math.prod(d for _, d in factors), factors))
        else:
            labs.append(LocalLab(v, d_in, int(sink_out_dims.get(v, 1))))
    factors = []
    for e in dag.edges:
        w = double_ket(np.eye(e.s_dim))
        factors.append((CMatrix(np.outer(w, w.conj()), (e.s_dim, e.s_dim)),
                        [("S", e.id), ("T", e.id)]))
    for lab in labs:
        if not dag.out_edges(lab.id):
            factors.append((CMatrix(np.eye(lab.d_out)), [("O", lab.id)]))
    in_slots = {l.id: [("T", e.id) for e in dag.in_edges(l.id)] for l in labs}
    out_slots = {l.id: ([("S", e.id) for e in dag.out_edges(l.id)] or [("O", l.id)])
                 for l in labs}
    return _arrange(factors, _slot_order(labs, in_slots, out_slots), labs)


def markov_chain(rho1, channels: Sequence[ChannelMatrix], prefix: str = "L") -> Mqcm:
    """Line DAG ``L1 -> L2 -> ... -> Ln``; the last lab's output matches its input."""
    rho1 = rho1 if isinstance(rho1, CMatrix) else CMatrix(rho1)
    n = len(channels) + 1
    ids = [f"{prefix}{k + 1}" for k in range(n)]
    chans = {ids[0]: state_channel(rho1)}
    edges = []
    d_prev = rho1.size
    for k, t in enumerate(channels):
        if t.d_source != d_prev:
            raise ValueError(f"channel {k + 2} expects input {t.d_source}, chain carries {d_prev}")
        edges.append(Edge(ids[k], ids[k + 1], f"e{k + 1}", t.d_source))
        chans[ids[k + 1]] = t
        d_prev = t.d_target
    return Mqcm(CausalDag(tuple(ids), tuple(edges)), chans, {ids[-1]: d_prev})


def compose_chain(channels: Sequence[ChannelMatrix], k: int) -> ChannelMatrix:
    """Choi matrix of ``T_k o ... o T_2`` where ``channels[0]`` is ``T_2``."""
    n = len(channels) + 1
    if not 2 <= k <= n:
        raise IndexError(f"k must lie in [2, {n}]")
    used = channels[: k - 1]

    def run(rho):
        out = CMatrix(rho)
        for t in used:
            out = CMatrix(apply_channel(t, out).data)
        return out.data

    return channel_from_map(run, used[0].source_dims, used[-1].target_dims)


def extend_mechanism_to_event(m: Mqcm, lab: str, new_id: str | None = None):
    """Turn the mechanism into ``lab`` into an event of a new laboratory.

    The new lab receives the old parent space and emits into ``lab`` through an
    identity wire; the old parents now feed the new lab through identity wires.
    Returns ``(process, new_id)``. Fixing the new lab to
    ``mechanism_to_event(m.channels[lab])`` recovers ``assemble(m)``.
    """
    g = m.dag
    if lab not in g.vertices:
        raise KeyError(lab)
    new_id = new_id or f"{lab}~"
    if new_id in g.vertices:
        raise ValueError(f"lab id {new_id} already used")
    d_in = m.channels[lab].d_target
    verts = []
    for v in g.vertices:
        if v == lab:
            verts.append(new_id)
        verts.append(v)
    edges = [Edge(e.source, new_id if e.target == lab else e.target, e.id, e.s_dim, e.t_dim)
             for e in g.edges]
    link = f"{new_id}->{lab}"
    edges.append(Edge(new_id, lab, link, d_in))
    dag = CausalDag(tuple(verts), tuple(edges))
    chans = dict(m.channels)
    src = tuple(e.s_dim for e in g.in_edges(lab))
    chans[new_id] = identity_channel(src) if src else state_channel(np.ones((1, 1)))
    chans[lab] = identity_channel(d_in)
    ext = Mqcm(dag, chans, m.sink_out_dims, m.latent | {new_id})
    return assemble(ext), new_id


def markovian_explanation_check(m_ext: Mqcm, fixed: Mapping[str, ChoiMap],
                                w_target: ProcessMatrix, tol: float = 1e-10) -> bool:
    """True iff fixing the latent labs of ``m_ext`` reproduces ``w_target``."""
    if set(fixed) != set(m_ext.latent):
        raise ValueError("need exactly one CPTP map per latent lab")
    red = reduced_process(assemble(m_ext), fixed)
    if red.ids != w_target.ids or red.matrix.dims != w_target.matrix.dims:
        return False
    return bool(np.abs(red.matrix.data - w_target.matrix.data).max() <= tol)


# -- random models -----------------------------------------------------------


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator; identical streams on every platform."""
    return np.random.Generator(np.random.Philox(int(seed)))


def haar_isometry(d_in: int, d_out: int, rng: np.random.Generator) -> np.ndarray:
    """``d_out x d_in`` isometry with Haar-distributed columns."""
    z = rng.standard_normal((d_out, d_in)) + 1j * rng.standard_normal((d_out, d_in))
    q, r = np.linalg.qr(z)
    ph = np.diag(r) / np.abs(np.diag(r))
    return q * ph


def random_channel(source_dims: Sequence[int], d_target: int, rng) -> ChannelMatrix:
    """Channel induced by a Haar isometry into target (x) ancilla, ancilla traced out.

    The ancilla has dimension ``d_source * d_target`` so the induced
    distribution has full support on CPTP maps.
    """
    source_dims = tuple(source_dims)
    ds = math.prod(source_dims)
    anc = ds * d_target
    v = haar_isometry(ds, d_target * anc, rng).reshape(d_target, anc, ds)
    # T = sum_jl |j><l| (x) tr_anc(V|j><l|V^dag)
    t = np.einsum("tak,uaq->ktqu", v, v.conj()).reshape(ds * d_target, ds * d_target)
    return ChannelMatrix(source_dims, (d_target,), CMatrix((t + t.conj().T) / 2))


def random_state(d: int, rng) -> CMatrix:
    return random_channel((), d, rng).matrix.with_dims((d,))


def random_mqcm(g: CausalDag, seed: int, in_dims: Mapping[str, int] | None = None,
                sink_out_dims: Mapping[str, int] | None = None) -> Mqcm:
    """Random MQCM over ``g``; inputs default to qubits, sinks to ``d_out = d_in``."""
    rng = make_rng(seed)
    in_dims = dict(in_dims or {})
    chans = {}
    for v in g.vertices:
        src = tuple(e.s_dim for e in g.in_edges(v))
        chans[v] = random_channel(src, int(in_dims.get(v, 2)), rng)
    sinks = {v: chans[v].d_target for v in g.vertices if not g.out_edges(v)}
    sinks.update(sink_out_dims or {})
    return Mqcm(g, chans, sinks)
