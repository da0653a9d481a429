"""Hilbert-Schmidt term analysis: compatibility, faithfulness and causal discovery.

A term type is a frozenset of subsystem labels on which an HS term acts
non-trivially. At lab level the labels are ``(lab_id, "I")`` and
``(lab_id, "O")``; at edge level outputs are split into ``("S", edge_id)``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .events import noisy_event
from .mqcm import CausalDag, CycleError, Edge, Mqcm, all_dags, random_mqcm
from .process import TERM_TOL, ProcessMatrix, influence_free, reduced_process
from .tensor import CMatrix, HSBasis, hs_coefficients, hs_reconstruct, type_maxima

TermType = frozenset


class NotFaithfulError(ValueError):
    """The process is not faithful to any DAG; ``diagnostics`` says why."""

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass(frozen=True, eq=False)
class HSDecomposition:
    """Real coefficients ``w_mu`` with ``m = sum_mu w_mu (x)_k s_{mu_k}``."""

    dims: tuple[int, ...]
    labels: tuple
    coefficients: np.ndarray
    norm: float
    bases: tuple = ()

    def coefficient(self, idx: Sequence[int]) -> float:
        return float(self.coefficients[tuple(idx)])

    def as_dict(self, tol: float = 0.0) -> dict[tuple[int, ...], float]:
        return {idx: float(c) for idx, c in np.ndenumerate(self.coefficients) if abs(c) > tol}

    def reconstruct(self) -> CMatrix:
        return hs_reconstruct(self.coefficients, self.dims, self.bases or None)

    def maxima(self) -> np.ndarray:
        return type_maxima(self.coefficients)

    def mask_to_type(self, mask: int) -> TermType:
        return frozenset(l for k, l in enumerate(self.labels) if mask >> k & 1)

    def type_to_mask(self, t: Iterable) -> int:
        return sum(1 << self.labels.index(l) for l in t)


def hs_decompose(m, bases: Sequence[HSBasis | None] | None = None,
                 tol: float = 1e-9) -> HSDecomposition:
    """Decompose a Hermitian matrix (or process matrix) in a product HS basis."""
    if isinstance(m, ProcessMatrix):
        labels = tuple(m.subsystem_labels())
        mat = m.matrix
    else:
        mat = m
        labels = tuple(range(mat.nsys))
    if not mat.is_hermitian(tol * max(1.0, mat.hs_norm())):
        raise ValueError("HS decomposition needs a Hermitian matrix")
    c = hs_coefficients(mat, bases)
    return HSDecomposition(mat.dims, labels, np.ascontiguousarray(c.real), mat.hs_norm(),
                           tuple(bases) if bases else ())


def present_types(dec, tol: float = TERM_TOL) -> set[TermType]:
    """Types with some coefficient above ``tol`` times the HS norm of the source."""
    if isinstance(dec, ProcessMatrix):
        dec = hs_decompose(dec)
    thr = tol * dec.norm
    maxima = dec.maxima()
    return {dec.mask_to_type(k) for k in np.flatnonzero(maxima > thr)}


def type_name(t: TermType) -> str:
    """Readable name such as ``A_O B_I``; the empty type is ``1``."""
    if not t:
        return "1"
    return " ".join(f"{a}_{b}" for a, b in sorted(t, key=lambda l: (str(l[0]), str(l[1]))))


def _dims_ok(d) -> bool:
    return d is None or d > 1


def is_implied(t: TermType, g: CausalDag, in_dims: Mapping[str, int] | None = None) -> bool:
    """Lab-level membership in the types implied by ``g``.

    ``I_j`` may appear freely; ``O_k`` only together with ``I_j`` of a child
    ``j`` reached through a non-trivial source space. Subsystems of dimension
    one carry no non-identity terms and are excluded.
    """
    in_dims = in_dims or {}
    for lab, side in t:
        if lab not in g.vertices:
            return False
        if side == "I":
            if not _dims_ok(in_dims.get(lab)):
                return False
        elif side == "O":
            if not any(_dims_ok(e.s_dim) and (e.target, "I") in t for e in g.out_edges(lab)):
                return False
        else:
            return False
    return True


def implied_types(g: CausalDag, in_dims: Mapping[str, int] | None = None,
                  granularity: str = "lab") -> set[TermType]:
    """Expansion of ``prod_j [1 + prod_{e in IN_j} (1 + S_e) I_j]``."""
    in_dims = in_dims or {}
    labs = [v for v in g.vertices if _dims_ok(in_dims.get(v))]
    out = set()
    for r in range(len(labs) + 1):
        for chosen in itertools.combinations(labs, r):
            srcs = [e for j in chosen for e in g.in_edges(j) if _dims_ok(e.s_dim)]
            for k in range(len(srcs) + 1):
                for es in itertools.combinations(srcs, k):
                    t = {(j, "I") for j in chosen}
                    if granularity == "edge":
                        t |= {("S", e.id) for e in es}
                    elif granularity == "lab":
                        t |= {(e.source, "O") for e in es}
                    else:
                        raise ValueError(f"unknown granularity {granularity!r}")
                    out.add(frozenset(t))
    return out


def _in_dims(w: ProcessMatrix) -> dict[str, int]:
    return {l.id: l.d_in for l in w.labs}


def _check_vertices(w: ProcessMatrix, g: CausalDag):
    if set(w.ids) != set(g.vertices):
        raise ValueError(f"DAG vertices {g.vertices} do not match labs {w.ids}")


def is_compatible(w: ProcessMatrix, g: CausalDag, tol: float = TERM_TOL,
                  present: set | None = None) -> bool:
    """No HS term of ``w`` is excluded by ``g``."""
    _check_vertices(w, g)
    present = present_types(w, tol) if present is None else present
    dims = _in_dims(w)
    return all(is_implied(t, g, dims) for t in present)


def is_faithful(w: ProcessMatrix, g: CausalDag, tol: float = TERM_TOL,
                present: set | None = None) -> bool:
    """``w`` has terms of exactly the types implied by ``g``."""
    _check_vertices(w, g)
    present = present_types(w, tol) if present is None else present
    return present == implied_types(g, _in_dims(w))


def _edge_maxima(w: ProcessMatrix, maxima: np.ndarray) -> dict[tuple[str, str], float]:
    out = {}
    for k, a in enumerate(w.labs):
        for j, b in enumerate(w.labs):
            if k != j:
                out[(a.id, b.id)] = float(maxima[(1 << (2 * k + 1)) | (1 << (2 * j))])
    return out


def _dag_from_pairs(w: ProcessMatrix, pairs) -> CausalDag:
    children = {}
    for a, b in pairs:
        children.setdefault(a, []).append(b)
    edges = []
    for a, b in sorted(pairs):
        s_dim = w.lab(a).d_out if len(children[a]) == 1 else None
        edges.append(Edge(a, b, f"{a}->{b}", s_dim))
    return CausalDag(w.ids, tuple(edges))


def discover_dag(w: ProcessMatrix, tol: float = TERM_TOL) -> CausalDag:
    """Read the DAG off the ``O_k I_j`` terms and certify it by faithfulness.

    Edges of a lab with several children carry ``s_dim=None``: the split of
    its output into source spaces cannot be seen at lab level.
    Raises :class:`NotFaithfulError` when no DAG fits.
    """
    dec = hs_decompose(w)
    thr = tol * dec.norm
    present = {dec.mask_to_type(k) for k in np.flatnonzero(dec.maxima() > thr)}
    weights = _edge_maxima(w, dec.maxima())
    pairs = sorted(p for p, v in weights.items() if v > thr)
    diag = {"edge_weights": {f"{a}->{b}": v for (a, b), v in sorted(weights.items())},
            "threshold": thr, "edges": [f"{a}->{b}" for a, b in pairs]}
    try:
        g = _dag_from_pairs(w, pairs)
    except CycleError:
        raise NotFaithfulError("not faithful to any DAG: edge terms form a cycle", diag) from None
    implied = implied_types(g, _in_dims(w))
    if present != implied:
        diag["excluded_present"] = sorted(type_name(t) for t in present - implied)
        diag["implied_missing"] = sorted(type_name(t) for t in implied - present)
        raise NotFaithfulError("not faithful to any DAG", diag)
    return g


def compatible_dags(w: ProcessMatrix, tol: float = TERM_TOL, max_labs: int = 4) -> list[CausalDag]:
    """All DAGs on the labs of ``w`` compatible with it (exhaustive, small n)."""
    if len(w.labs) > max_labs:
        raise ValueError(f"exhaustive DAG enumeration is limited to {max_labs} labs")
    present = present_types(w, tol)
    return [g for g in all_dags(w.ids) if is_compatible(w, g, present=present)]


def has_compatible_dag(w: ProcessMatrix, tol: float = TERM_TOL) -> bool:
    """Whether any DAG is compatible with ``w``.

    Adding edges never removes implied types, so it suffices to try the
    complete DAG of every total order.
    """
    present = present_types(w, tol)
    for order in itertools.permutations(w.ids):
        pairs = [(order[a], order[b]) for a in range(len(order)) for b in range(a + 1, len(order))]
        if is_compatible(w, CausalDag.from_pairs(w.ids, pairs), present=present):
            return True
    return False


def faithful_candidates(w: ProcessMatrix, measured: set | None = None,
                        tol: float = TERM_TOL, max_labs: int = 4) -> list[CausalDag]:
    """DAGs whose implied types agree with ``w`` on the measured types.

    With ``measured=None`` every type counts and at most one DAG is returned.
    Restricting to the types actually measured can leave several candidates;
    all of them are reported.
    """
    if len(w.labs) > max_labs:
        raise ValueError(f"exhaustive DAG enumeration is limited to {max_labs} labs")
    present = present_types(w, tol)
    dims = _in_dims(w)
    out = []
    for g in all_dags(w.ids):
        implied = implied_types(g, dims)
        if measured is None:
            ok = present == implied
        else:
            ok = (present & measured) == (implied & measured)
        if ok:
            out.append(g)
    return out


def screening_check(w: ProcessMatrix, lab: str, g: CausalDag, tol: float = TERM_TOL) -> bool:
    """Maximally noisy channels at every child of ``lab`` leave it influence-free."""
    fixed = {c: noisy_event(w.lab(c).d_in, w.lab(c).d_out) for c in g.children(lab)}
    red = reduced_process(w, fixed) if fixed else w
    return influence_free(red, lab, tol)


def sample_random_mqcm(g: CausalDag, seed: int, in_dims: Mapping[str, int] | None = None,
                       sink_out_dims: Mapping[str, int] | None = None) -> Mqcm:
    """Random MQCM over ``g`` drawn from a full-support distribution (Haar isometries)."""
    return random_mqcm(g, seed, in_dims, sink_out_dims)


def discovery_report(w: ProcessMatrix, tol: float = TERM_TOL,
                     declared: CausalDag | None = None) -> dict:
    """JSON-ready summary of the term analysis of ``w``."""
    present = present_types(w, tol)
    report = {"labs": list(w.ids),
              "present_types": sorted(type_name(t) for t in present)}
    try:
        g = discover_dag(w, tol)
        report.update(edges=[f"{e.source}->{e.target}" for e in g.edges], faithful=True,
                      implied_types=sorted(type_name(t) for t in implied_types(g, _in_dims(w))),
                      diagnostics={}, dot=g.to_dot())
    except NotFaithfulError as exc:
        report.update(edges=None, faithful=False, implied_types=None,
                      diagnostics={"reason": str(exc), **exc.diagnostics}, dot=None)
    if len(w.labs) <= 4:
        comp = [g for g in all_dags(w.ids) if is_compatible(w, g, present=present)]
        report["compatible_dags"] = [
            {"edges": sorted(f"{a}->{b}" for a, b in g.pairs()),
             "faithful": is_faithful(w, g, present=present)} for g in comp]
    report["has_compatible_dag"] = has_compatible_dag(w, tol)
    if declared is not None:
        report["declared"] = {
            "edges": sorted(f"{a}->{b}" for a, b in declared.pairs()),
            "compatible": is_compatible(w, declared, present=present),
            "faithful": is_faithful(w, declared, present=present),
        }
    return report
