"""The classical limit: diagonal operations in the pointer basis.

Pointer bases are the computational bases. A :class:`DiagonalEventFamily`
holds the kernel ``P(o, x | z, i)`` of a lab, where ``z`` is the input pointer
value, ``x`` the recorded outcome, ``o`` the output pointer value and ``i``
the intervention. Every family has an ``idle`` intervention and one
``do(x)`` intervention per outcome value.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .events import ChannelMatrix, ChoiMap, Instrument
from .mqcm import CausalDag, Edge, Mqcm, assemble
from .process import ProbTable, ProcessMatrix, contract_labs
from .tensor import CMatrix

IDLE = "idle"
KERNEL_TOL = 1e-12


def do_name(x: int) -> str:
    return f"do({x})"


def _check_stochastic(a: np.ndarray, what: str, tol: float = 1e-10):
    if np.any(a < -tol):
        raise ValueError(f"{what} has negative entries")
    if np.abs(a.sum(axis=-1) - 1.0).max(initial=0.0) > tol:
        raise ValueError(f"{what} rows do not sum to one")


@dataclass(frozen=True, eq=False)
class DiagonalEventFamily:
    """Factorised kernel ``P(o, x | z, i) = P(o | x) P(x | z, i)`` of one lab.

    ``emit`` has shape ``(n_x, d_out)`` and ``respond`` maps intervention
    names to arrays of shape ``(d_in, n_x)``.
    """

    lab: str
    emit: np.ndarray
    respond: Mapping[str, np.ndarray]

    def __post_init__(self):
        emit = np.asarray(self.emit, dtype=float)
        resp = {str(k): np.asarray(v, dtype=float) for k, v in self.respond.items()}
        if IDLE not in resp:
            raise ValueError("a family needs an 'idle' intervention")
        n_x = emit.shape[0]
        for x in range(n_x):
            name = do_name(x)
            if name not in resp:
                d_in = resp[IDLE].shape[0]
                r = np.zeros((d_in, n_x))
                r[:, x] = 1.0
                resp[name] = r
        _check_stochastic(emit, "emission kernel")
        for k, r in resp.items():
            if r.shape != (resp[IDLE].shape[0], n_x):
                raise ValueError(f"response kernel {k!r} has shape {r.shape}")
            _check_stochastic(r, f"response kernel {k!r}")
        object.__setattr__(self, "emit", emit)
        object.__setattr__(self, "respond", resp)

    @classmethod
    def from_kernel(cls, lab: str, interventions: Sequence[str], kernel) -> "DiagonalEventFamily":
        """Build from a full kernel of shape ``(n_i, d_in, n_x, d_out)``.

        Raises if the kernel does not factorise as ``P(o | x) P(x | z, i)``.
        """
        k = np.asarray(kernel, dtype=float)
        if k.min(initial=0.0) < -KERNEL_TOL:
            raise ValueError("kernel has negative entries")
        px = k.sum(axis=3)
        emit = np.zeros((k.shape[2], k.shape[3]))
        for x in range(k.shape[2]):
            mask = px[:, :, x] > KERNEL_TOL
            if not mask.any():
                emit[x, 0] = 1.0
                continue
            rows = k[:, :, x, :][mask] / px[:, :, x][mask][:, None]
            if np.abs(rows - rows[0]).max() > 1e-12:
                raise ValueError("kernel does not factorise as P(o|x) P(x|z,i)")
            emit[x] = rows[0]
        return cls(lab, emit, {name: px[a] for a, name in enumerate(interventions)})

    @property
    def interventions(self) -> tuple[str, ...]:
        return tuple(self.respond)

    @property
    def n_x(self) -> int:
        return self.emit.shape[0]

    @property
    def d_in(self) -> int:
        return self.respond[IDLE].shape[0]

    @property
    def d_out(self) -> int:
        return self.emit.shape[1]

    def kernel(self) -> np.ndarray:
        """``P(o, x | z, i)`` with shape ``(n_i, d_in, n_x, d_out)``."""
        r = np.array([self.respond[i] for i in self.interventions])
        return np.einsum("izx,xo->izxo", r, self.emit)

    def stack(self, intervention: str = IDLE) -> np.ndarray:
        """Event matrices of the instrument for one intervention, one per outcome."""
        return _diag_stack(self.kernel()[self.interventions.index(intervention)])


def _diag_stack(k: np.ndarray) -> np.ndarray:
    """Diagonal event matrices ``sum_{z,o} k[z, x, o] |z><z| (x) |o><o|`` for every ``x``."""
    d_in, n_x, d_out = k.shape
    out = np.zeros((n_x, d_in * d_out, d_in * d_out))
    idx = np.arange(d_in * d_out)
    for x in range(n_x):
        out[x, idx, idx] = k[:, x, :].reshape(-1)
    return out.astype(complex)


def diagonal_event(fam: DiagonalEventFamily, x: int, intervention: str = IDLE) -> ChoiMap:
    if not 0 <= x < fam.n_x:
        raise IndexError(f"outcome {x} out of range")
    if intervention not in fam.respond:
        raise KeyError(f"unknown intervention {intervention!r}")
    m = _diag_stack(fam.kernel()[fam.interventions.index(intervention)])[x]
    return ChoiMap(CMatrix(m, (fam.d_in, fam.d_out)), fam.lab)


def diagonal_instrument(fam: DiagonalEventFamily, intervention: str = IDLE) -> Instrument:
    return Instrument([diagonal_event(fam, x, intervention) for x in range(fam.n_x)], fam.lab)


def pointer_family(lab: str, card: int, out_dims: Sequence[int] = ()) -> DiagonalEventFamily:
    """Read the input pointer and copy the value to every output factor."""
    out_dims = tuple(out_dims)
    d_out = math.prod(out_dims)
    emit = np.zeros((card, d_out))
    for x in range(card):
        if any(x >= d for d in out_dims):
            raise ValueError("output factors are too small to carry the value")
        emit[x, np.ravel_multi_index((x,) * len(out_dims), out_dims) if out_dims else 0] = 1.0
    return DiagonalEventFamily(lab, emit, {IDLE: np.eye(card)})


def _as_process(w) -> ProcessMatrix:
    return assemble(w) if isinstance(w, Mqcm) else w


def _check_families(w: ProcessMatrix, fams: Mapping[str, DiagonalEventFamily]):
    for lab in w.labs:
        f = fams[lab.id]
        if (f.d_in, f.d_out) != (lab.d_in, lab.d_out):
            raise ValueError(f"family for {lab.id} acts on {(f.d_in, f.d_out)}, "
                             f"lab has {(lab.d_in, lab.d_out)}")


def classical_statistics(w, fams: Mapping[str, DiagonalEventFamily],
                         interventions: Mapping[str, str] | None = None) -> ProbTable:
    """``P(x_1..x_n | i_1..i_n)`` from diagonal instruments (idle by default)."""
    w = _as_process(w)
    _check_families(w, fams)
    interventions = dict(interventions or {})
    stacks = {}
    for k, lab in enumerate(w.labs):
        f = fams[lab.id]
        i = interventions.get(lab.id, IDLE)
        stacks[k] = _diag_stack(f.kernel()[f.interventions.index(i)])
    t, _ = contract_labs(w, stacks)
    p = np.asarray(t).real
    if p.min(initial=0.0) < -1e-9:
        raise ValueError("negative probability: invalid process or kernels")
    return ProbTable(w.ids, np.clip(p, 0.0, None))


def intervention_tables(w, fams: Mapping[str, DiagonalEventFamily]) -> dict[tuple, ProbTable]:
    """Tables for every tuple of interventions, from a single contraction."""
    w = _as_process(w)
    _check_families(w, fams)
    stacks, shapes, names = {}, [], []
    for k, lab in enumerate(w.labs):
        f = fams[lab.id]
        stacks[k] = np.concatenate([_diag_stack(ki) for ki in f.kernel()])
        shapes += [len(f.interventions), f.n_x]
        names.append(f.interventions)
    t, _ = contract_labs(w, stacks)
    p = np.clip(np.asarray(t).real, 0.0, None).reshape(shapes)
    n = len(w.labs)
    p = p.transpose([2 * k for k in range(n)] + [2 * k + 1 for k in range(n)])
    out = {}
    for combo in itertools.product(*(range(len(a)) for a in names)):
        key = tuple(names[k][c] for k, c in enumerate(combo))
        out[key] = ProbTable(w.ids, p[combo])
    return out


def extract_cpts(tables: Mapping[tuple, ProbTable], dag: CausalDag) -> dict[str, dict[str, np.ndarray]]:
    """``P(x_j | pa_j, i_j)`` by conditioning, with parents in sorted order.

    For each parent configuration the table with the largest parent
    probability (and the right ``i_j``) is used; configurations that never
    occur get a uniform distribution.
    """
    some = next(iter(tables.values()))
    labs = list(some.labs)
    cards = dict(zip(labs, some.probs.shape))
    cpts = {}
    for v in dag.vertices:
        j = labs.index(v)
        pa = dag.parents(v)
        pa_axes = [labs.index(p) for p in pa]
        names = sorted({key[j] for key in tables})
        cpts[v] = {}
        for name in names:
            best = np.zeros([cards[p] for p in pa])
            cpt = np.full([cards[p] for p in pa] + [cards[v]], 1.0 / cards[v])
            for key in sorted(tables):
                if key[j] != name:
                    continue
                p = tables[key].probs
                keep = pa_axes + [j]
                other = tuple(a for a in range(p.ndim) if a not in keep)
                joint = p.sum(axis=other) if other else p
                # sum over axes leaves the kept axes in increasing order
                order = sorted(keep)
                joint = np.moveaxis(joint, [order.index(a) for a in keep], list(range(len(keep))))
                ppa = joint.sum(axis=-1)
                better = ppa > np.maximum(best, 1e-300)
                if np.any(better):
                    cpt[better] = joint[better] / ppa[better][..., None]
                    best = np.where(better, ppa, best)
            cpts[v][name] = cpt
    return cpts


def markov_product(cpts: Mapping[str, Mapping[str, np.ndarray]], dag: CausalDag,
                   labs: Sequence[str], key: Sequence[str]) -> np.ndarray:
    """``prod_j P(x_j | pa_j, i_j)`` as a table over ``labs``."""
    cards = [cpts[v][key[labs.index(v)]].shape[-1] for v in labs]
    out = np.ones(cards)
    for v in dag.vertices:
        cpt = cpts[v][key[labs.index(v)]]
        axes = [labs.index(p) for p in dag.parents(v)] + [labs.index(v)]
        shape = [1] * len(labs)
        perm = np.argsort(axes)
        arr = cpt.transpose(perm)
        for a in axes:
            shape[a] = cards[a]
        out = out * arr.reshape(shape)
    return out


def verify_markov_factorization(tables: Mapping[tuple, ProbTable], dag: CausalDag,
                                tol: float = 1e-9):
    """Check ``P(x | i) = prod_j P(x_j | pa_j, i_j)`` for every intervention tuple.

    Returns ``(ok, cpts)`` with the conditioned CPTs.
    """
    cpts = extract_cpts(tables, dag)
    labs = list(next(iter(tables.values())).labs)
    ok = True
    for key, table in tables.items():
        prod = markov_product(cpts, dag, labs, key)
        if np.abs(prod - table.probs).max() > tol:
            ok = False
            break
    return ok, cpts


def dephase_process(w: ProcessMatrix) -> ProcessMatrix:
    """Keep only the diagonal of ``W`` in the pointer product basis."""
    return ProcessMatrix(w.labs, np.diag(np.diag(w.matrix.data)))


def conditional_independence_check(w, common: str, fams: Mapping[str, DiagonalEventFamily],
                                   pair: Sequence[str] | None = None, tol: float = 1e-9) -> bool:
    """``P(x_a, x_b | rest) = P(x_a | rest) P(x_b | rest)`` for all interventions.

    ``rest`` is every lab outside ``pair`` (so it includes ``common``); by
    default ``pair`` is the two labs other than ``common`` in a 3-lab process.
    """
    w = _as_process(w)
    if pair is None:
        pair = [l for l in w.ids if l != common]
        if len(pair) != 2:
            raise ValueError("give the pair explicitly for processes with more than 3 labs")
    if common in pair:
        raise ValueError("the common cause cannot be in the pair")
    a, b = (w.ids.index(x) for x in pair)
    for table in intervention_tables(w, fams).values():
        p = np.moveaxis(table.probs, [a, b], [0, 1])
        rest = p.sum(axis=(0, 1))
        pa = p.sum(axis=1)
        pb = p.sum(axis=0)
        lhs = p * rest[None, None]
        rhs = pa[:, None] * pb[None, :]
        if np.abs(lhs - rhs).max() > tol:
            return False
    return True


# -- classical causal models -------------------------------------------------


@dataclass(frozen=True, eq=False)
class ClassicalCausalModel:
    """Variables with cardinalities, a DAG and observational CPTs.

    ``cpts[v]`` has shape ``(card(p) for p in sorted parents) + (card(v),)``.
    Interventions are ``idle`` or ``do(x)``.
    """

    cards: Mapping[str, int]
    dag: CausalDag
    cpts: Mapping[str, np.ndarray]

    def __post_init__(self):
        object.__setattr__(self, "cards", {k: int(v) for k, v in self.cards.items()})
        object.__setattr__(self, "cpts", {k: np.asarray(v, dtype=float)
                                          for k, v in self.cpts.items()})
        if set(self.cards) != set(self.dag.vertices):
            raise ValueError("cardinalities must cover exactly the DAG vertices")
        for v in self.dag.vertices:
            shape = tuple(self.cards[p] for p in self.dag.parents(v)) + (self.cards[v],)
            if self.cpts[v].shape != shape:
                raise ValueError(f"CPT of {v} has shape {self.cpts[v].shape}, expected {shape}")
            _check_stochastic(self.cpts[v], f"CPT of {v}")

    @property
    def variables(self) -> tuple[str, ...]:
        return self.dag.vertices

    def joint(self, interventions: Mapping[str, str] | None = None) -> np.ndarray:
        """Joint distribution by enumeration, with ``do(x)`` cutting incoming edges."""
        interventions = dict(interventions or {})
        vs = self.variables
        p = np.zeros([self.cards[v] for v in vs])
        for xs in itertools.product(*(range(self.cards[v]) for v in vs)):
            val = dict(zip(vs, xs))
            prob = 1.0
            for v in vs:
                i = interventions.get(v, IDLE)
                if i == IDLE:
                    prob *= self.cpts[v][tuple(val[q] for q in self.dag.parents(v)) + (val[v],)]
                else:
                    prob *= float(do_name(val[v]) == i)
            p[xs] = prob
        return p


def embed_classical_model(c: ClassicalCausalModel) -> Mqcm:
    """MQCM with diagonal channels ``T_j = sum P(z | pa) |pa><pa| (x) |z><z|``.

    Each lab has input dimension ``card(X_j)`` and one output copy of that
    size per outgoing edge; childless labs have trivial output.
    """
    g = c.dag
    edges = tuple(Edge(e.source, e.target, e.id, c.cards[e.source]) for e in g.edges)
    g = CausalDag(g.vertices, edges)
    chans = {}
    for v in g.vertices:
        src = tuple(e.s_dim for e in g.in_edges(v))
        pars = [e.source for e in g.in_edges(v)]
        if pars != sorted(pars) or len(set(pars)) != len(pars):
            raise ValueError("classical DAGs need at most one edge per parent")
        cpt = c.cpts[v].reshape(math.prod(src), c.cards[v])
        # basis |pa> (x) |z>: the diagonal is the CPT in row-major order
        chans[v] = ChannelMatrix(src, (c.cards[v],), CMatrix(np.diag(cpt.reshape(-1))))
    return Mqcm(g, chans)


def pointer_families(m: Mqcm) -> dict[str, DiagonalEventFamily]:
    """Pointer families for every lab of an embedded classical model."""
    out = {}
    for lab in m.labs():
        dims = [d for _, d in lab.out_factors]
        out[lab.id] = pointer_family(lab.id, lab.d_in, dims)
    return out


def random_family(lab: str, d_in: int, out_dims, rng, n_x: int | None = None,
                  extra: int = 1) -> DiagonalEventFamily:
    """Random factorised kernel with ``idle``, ``do(x)`` and ``extra`` random interventions.

    The emission is a product over output factors, ``P(o|x) = prod_e P(s_e|x)``;
    a jointly random ``P(o|x)`` would correlate the children of a lab beyond
    what ``x`` explains.
    """
    out_dims = (out_dims,) if isinstance(out_dims, (int, np.integer)) else tuple(out_dims)
    n_x = d_in if n_x is None else n_x
    emit = np.ones((n_x, 1))
    for d in out_dims:
        e = rng.dirichlet(np.ones(d), size=n_x)
        emit = np.einsum("xa,xb->xab", emit, e).reshape(n_x, -1)
    resp = {IDLE: rng.dirichlet(np.ones(n_x), size=d_in)}
    for k in range(extra):
        resp[f"random{k}"] = rng.dirichlet(np.ones(n_x), size=d_in)
    return DiagonalEventFamily(lab, emit, resp)


def random_families(w: ProcessMatrix, rng, extra: int = 1) -> dict[str, DiagonalEventFamily]:
    """Random factorised families for every lab, split along declared output factors."""
    out = {}
    for lab in w.labs:
        dims = [d for _, d in lab.out_factors] or [lab.d_out]
        out[lab.id] = random_family(lab.id, lab.d_in, dims, rng, extra=extra)
    return out
