"""Process-matrix tomography with informationally complete product instruments.

Each lab measures its input with an IC POVM ``{F_a}`` and prepares one of
``d_out**2`` spanning states ``rho_b`` chosen uniformly at random, giving the
instrument ``M_ab = F_a (x) rho_b^T / N_prep``. Reconstruction is linear
inversion, done lab by lab with pseudo-inverses.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .discovery import (
    NotFaithfulError,
    discover_dag,
    implied_types,
    type_name,
)
from .events import Instrument
from .mqcm import CausalDag, Edge, make_rng
from .process import LocalLab, ProbTable, ProcessMatrix, contract_labs
from .tensor import CMatrix, hs_basis, min_eigenvalue, type_ids


def density_form(w: ProcessMatrix) -> CMatrix:
    """``W / d_O``: unit trace, so the process reads as a state."""
    return w.matrix / w.d_out


def _pairs(d: int):
    return [(j, k) for j in range(d) for k in range(j + 1, d)]


def ic_povm(d: int) -> list[np.ndarray]:
    """IC POVM on a ``d``-dimensional space.

    Projectors onto ``|j>`` and ``(|j> +- |k>)/sqrt2``, ``(|j> +- i|k>)/sqrt2``
    with weight ``1/(2d-1)``; for ``d = 2`` this is the six Pauli eigenstates
    with weight ``1/3``.
    """
    if d == 1:
        return [np.ones((1, 1), dtype=complex)]
    vecs = [np.eye(d, dtype=complex)[j] for j in range(d)]
    for j, k in _pairs(d):
        for phase in (1, -1, 1j, -1j):
            v = np.zeros(d, dtype=complex)
            v[j], v[k] = 1, phase
            vecs.append(v / math.sqrt(2))
    w = 1.0 / (2 * d - 1)
    return [w * np.outer(v, v.conj()) for v in vecs]


def spanning_states(d: int) -> list[np.ndarray]:
    """``d**2`` pure states spanning the operators: ``|j>``, ``(|j>+|k>)/sqrt2``, ``(|j>+i|k>)/sqrt2``."""
    vecs = [np.eye(d, dtype=complex)[j] for j in range(d)]
    for phase in (1, 1j):
        for j, k in _pairs(d):
            v = np.zeros(d, dtype=complex)
            v[j], v[k] = 1, phase
            vecs.append(v / math.sqrt(2))
    return [np.outer(v, v.conj()) for v in vecs]


def lab_instrument(lab: LocalLab) -> Instrument:
    povm = ic_povm(lab.d_in)
    preps = spanning_states(lab.d_out)
    maps = [CMatrix(np.kron(f, r.T) / len(preps), (lab.d_in, lab.d_out))
            for f in povm for r in preps]
    return Instrument(maps, lab.id)


@dataclass(frozen=True, eq=False)
class TomographyDesign:
    """Per-lab instruments and the per-lab linear maps ``X -> (tr M_x X)_x``."""

    labs: tuple[LocalLab, ...]
    instruments: tuple[Instrument, ...]
    maps: tuple[np.ndarray, ...]
    inverses: tuple[np.ndarray, ...]

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(j) for j in self.instruments)

    def flattening_matrix(self) -> np.ndarray:
        """Full design matrix, acting on the vectorised lab tensor of ``W`` (small cases)."""
        out = np.ones((1, 1))
        for a in self.maps:
            out = np.kron(out, a)
        return out


def build_design(labs: Sequence[LocalLab]) -> TomographyDesign:
    labs = tuple(labs)
    insts, maps, invs = [], [], []
    for lab in labs:
        j = lab_instrument(lab)
        s = j.stack()
        d = lab.dim
        # row x: tr[M_x X] = sum_ab X[a, b] M_x[b, a]
        a = s.transpose(0, 2, 1).reshape(len(j), d * d)
        if np.linalg.matrix_rank(a) != d * d:
            raise RuntimeError(f"design for lab {lab.id} is not informationally complete")
        insts.append(j)
        maps.append(a)
        invs.append(np.linalg.pinv(a))
    return TomographyDesign(labs, tuple(insts), tuple(maps), tuple(invs))


def _check(w: ProcessMatrix, design: TomographyDesign):
    if tuple((l.id, l.d_in, l.d_out) for l in w.labs) != tuple(
            (l.id, l.d_in, l.d_out) for l in design.labs):
        raise ValueError("design does not match the process's laboratories")


def exact_statistics(w: ProcessMatrix, design: TomographyDesign) -> np.ndarray:
    _check(w, design)
    t, _ = contract_labs(w, {k: j.stack() for k, j in enumerate(design.instruments)})
    return np.asarray(t).real


def simulate_statistics(w: ProcessMatrix, design: TomographyDesign,
                        shots: int | None = None, seed: int = 0) -> ProbTable:
    """Exact outcome probabilities, or relative frequencies of ``shots`` runs."""
    p = exact_statistics(w, design)
    if shots is None:
        return ProbTable(w.ids, p)
    p = np.clip(p, 0.0, None)
    counts = make_rng(seed).multinomial(int(shots), (p / p.sum()).ravel())
    return ProbTable(w.ids, counts.reshape(p.shape) / shots)


def _apply_per_lab(mats: Sequence[np.ndarray], t: np.ndarray) -> np.ndarray:
    for m in mats:
        # the current axis is always the leading one; results go to the back
        t = np.tensordot(t, m, axes=([0], [1]))
    return t


def reconstruct(table: ProbTable, design: TomographyDesign) -> ProcessMatrix:
    """Least-squares estimate of ``W``; PSD is reported, not enforced."""
    p = np.asarray(table.probs, dtype=float)
    if p.shape != design.shape:
        raise ValueError(f"table shape {p.shape} does not match design {design.shape}")
    x = _apply_per_lab(design.inverses, p.astype(complex))
    ds = [l.dim for l in design.labs]
    n = len(ds)
    x = x.reshape([d for dd in ds for d in (dd, dd)])
    x = x.transpose([2 * k for k in range(n)] + [2 * k + 1 for k in range(n)])
    dim = math.prod(ds)
    x = x.reshape(dim, dim)
    return ProcessMatrix(design.labs, (x + x.conj().T) / 2)


def coefficient_functionals(design: TomographyDesign) -> list[np.ndarray]:
    """Per lab, rows mapping probabilities to HS coefficients of that lab's factor.

    The lab basis is ``s_mu (x) s_nu`` on ``I (x) O``, flattened as ``mu * d_O**2 + nu``.
    """
    out = []
    for lab, inv in zip(design.labs, design.inverses):
        bi, bo = hs_basis(lab.d_in).elements, hs_basis(lab.d_out).elements
        sig = np.einsum("mab,ncd->mnacbd", bi, bo).reshape(
            len(bi) * len(bo), lab.dim, lab.dim)
        # c_mu = tr(X s_mu) / D = sum_ab X[a, b] s_mu[b, a] / D
        s = sig.transpose(0, 2, 1).reshape(len(sig), -1) / lab.dim
        out.append(s @ inv)
    return out


def coefficient_estimates(table: ProbTable, design: TomographyDesign, shots: int):
    """HS coefficients of the estimate and their multinomial standard errors.

    Both arrays have one axis per subsystem in canonical order.
    """
    h = coefficient_functionals(design)
    p = np.asarray(table.probs, dtype=float)
    c = _apply_per_lab(h, p.astype(complex)).real
    second = _apply_per_lab([np.abs(m) ** 2 for m in h], p)
    var = np.clip(second - c ** 2, 0.0, None) / shots
    shape = [d * d for l in design.labs for d in (l.d_in, l.d_out)]
    return c.reshape(shape), np.sqrt(var).reshape(shape)


@dataclass
class TomographicDiscovery:
    dag: CausalDag | None
    estimate: ProcessMatrix
    faithful: bool
    low_confidence: bool
    min_eigenvalue: float
    edge_z: dict[str, float]
    present_types: list[str]
    diagnostics: dict


Z_PRESENT = 5.0
Z_AMBIGUOUS = (3.0, 10.0)


def _z_types(z: np.ndarray, labels, threshold: float):
    ids = type_ids(z.shape)
    zmax = np.zeros(1 << z.ndim)
    np.maximum.at(zmax, ids.ravel(), z.ravel())
    zmax[0] = np.inf
    present = {frozenset(l for k, l in enumerate(labels) if m >> k & 1)
               for m in np.flatnonzero(zmax > threshold)}
    return present, zmax


def tomographic_discovery(w_true: ProcessMatrix, shots: int | None = None, seed: int = 0,
                          z_threshold: float = Z_PRESENT) -> TomographicDiscovery:
    """Simulate IC tomography, reconstruct, and run discovery on the estimate.

    With exact statistics the coefficient-presence tolerance of
    :func:`discover_dag` is used. With finite shots a term is present when its
    z-score exceeds ``z_threshold``. The DAG read off the edge terms is
    returned if no excluded type is significant; edge z-scores in the
    ambiguous band, or implied types not resolved from the noise, mark the
    result as low confidence.
    """
    design = build_design(w_true.labs)
    table = simulate_statistics(w_true, design, shots, seed)
    est = reconstruct(table, design)
    eig = min_eigenvalue(est.matrix)
    if shots is None:
        try:
            g = discover_dag(est)
            return TomographicDiscovery(g, est, True, False, eig, {}, [], {})
        except NotFaithfulError as exc:
            return TomographicDiscovery(None, est, False, True, eig, {}, [], exc.diagnostics)
    c, se = coefficient_estimates(table, design, shots)
    # a coefficient with zero standard error is known exactly
    exact = np.where(np.abs(c) > 1e-12, np.inf, 0.0)
    z = np.where(se > 0, np.abs(c) / np.where(se > 0, se, 1.0), exact)
    labels = est.subsystem_labels()
    present, zmax = _z_types(z, labels, z_threshold)
    edge_z = {}
    for k, a in enumerate(est.labs):
        for j, b in enumerate(est.labs):
            if k != j:
                edge_z[f"{a.id}->{b.id}"] = float(zmax[(1 << (2 * k + 1)) | (1 << (2 * j))])
    pairs = [tuple(e.split("->")) for e, v in edge_z.items() if v > z_threshold]
    lo, hi = Z_AMBIGUOUS
    ambiguous = sorted(e for e, v in edge_z.items() if lo <= v <= hi)
    diag = {"ambiguous_edges": ambiguous, "z_threshold": z_threshold}
    dag = None
    faithful = compatible = False
    children = {}
    for a, b in pairs:
        children.setdefault(a, []).append(b)
    edges = tuple(Edge(a, b, f"{a}->{b}", est.lab(a).d_out if len(children[a]) == 1 else None)
                  for a, b in sorted(pairs))
    try:
        dag = CausalDag(est.ids, edges)
    except ValueError:
        diag["reason"] = "edge terms form a cycle"
    else:
        implied = implied_types(dag, {l.id: l.d_in for l in est.labs})
        compatible = not (present - implied)
        faithful = present == implied
        diag["excluded_present"] = sorted(type_name(t) for t in present - implied)
        diag["implied_unresolved"] = sorted(type_name(t) for t in implied - present)
    return TomographicDiscovery(
        dag=dag if compatible else None, estimate=est, faithful=faithful,
        low_confidence=bool(ambiguous) or not faithful, min_eigenvalue=eig,
        edge_z=edge_z, present_types=sorted(type_name(t) for t in present), diagnostics=diag)
