"""Mixtures of causal structures and quantum-controlled causal structures.

A controlled structure coherently superposes pure branch processes
``|w^(G)>``, each tagged by a control state prepared in lab ``C`` and read
out, together with a final register, in lab ``D``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .discovery import is_compatible
from .events import ChoiMap, choi_from_unitary
from .mqcm import CausalDag
from .process import LocalLab, ProcessMatrix, born_probability, check_process
from .tensor import CMatrix, permute_vector


def mixture(ps: Sequence[float], ws: Sequence[ProcessMatrix]) -> ProcessMatrix:
    """Convex combination ``sum_G p(G) W^(G)``."""
    ps = np.asarray(ps, dtype=float)
    if len(ps) != len(ws) or not ws:
        raise ValueError("need one probability per process")
    if np.any(ps < 0) or abs(ps.sum() - 1.0) > 1e-12:
        raise ValueError("weights must be a probability distribution")
    profile = [(l.id, l.d_in, l.d_out) for l in ws[0].labs]
    for w in ws[1:]:
        if [(l.id, l.d_in, l.d_out) for l in w.labs] != profile:
            raise ValueError("processes act on different laboratories")
    m = sum(p * w.matrix.data for p, w in zip(ps, ws))
    return ProcessMatrix(ws[0].labs, m)


def _pure_vector(branch, size: int) -> np.ndarray:
    a = np.asarray(branch.data if isinstance(branch, CMatrix) else branch, dtype=complex)
    if a.ndim == 1:
        if a.size != size:
            raise ValueError(f"branch vector has size {a.size}, expected {size}")
        return a
    if a.shape != (size, size):
        raise ValueError(f"branch matrix has shape {a.shape}, expected {(size, size)}")
    vals, vecs = np.linalg.eigh((a + a.conj().T) / 2)
    if np.abs(vals[:-1]).max(initial=0.0) > 1e-9 * max(1.0, vals[-1]):
        raise ValueError("branch process is not rank one")
    return vecs[:, -1] * math.sqrt(max(vals[-1], 0.0))


@dataclass(frozen=True, eq=False)
class Branch:
    name: str
    vector: np.ndarray
    dag: CausalDag | None = None


@dataclass(frozen=True, eq=False)
class ControlledStructure:
    """Pure branch processes on ``labs`` plus a final register of size ``register_dim``.

    Branch vectors live on the canonical spaces of ``labs`` followed by the
    register. The control lab ``C`` has trivial input and the readout lab
    ``D`` receives the control and the register.
    """

    labs: tuple[LocalLab, ...]
    branches: tuple[Branch, ...]
    register_dim: int = 1
    control: str = "C"
    readout: str = "D"

    def __post_init__(self):
        object.__setattr__(self, "labs", tuple(self.labs))
        size = math.prod(l.dim for l in self.labs) * self.register_dim
        fixed = tuple(Branch(b.name, _pure_vector(b.vector, size), b.dag) for b in self.branches)
        if not fixed:
            raise ValueError("need at least one branch")
        object.__setattr__(self, "branches", fixed)
        ids = {l.id for l in self.labs}
        if self.control in ids or self.readout in ids:
            raise ValueError("control and readout ids clash with branch labs")
        for b in fixed:
            w = self.branch_process(b)
            if not check_process(w).ok:
                raise ValueError(f"branch {b.name} is not a valid process")
            if b.dag is not None and not is_compatible(w, b.dag):
                raise ValueError(f"branch {b.name} does not factorise over its DAG")

    def branch_process(self, b: Branch) -> ProcessMatrix:
        """Branch process on ``labs`` with the register delivered to the readout lab."""
        labs = list(self.labs) + [LocalLab(self.readout, self.register_dim, 1)]
        return ProcessMatrix(labs, np.outer(b.vector, b.vector.conj()))

    def all_labs(self) -> list[LocalLab]:
        k = len(self.branches)
        return list(self.labs) + [LocalLab(self.control, 1, k),
                                  LocalLab(self.readout, k * self.register_dim, 1)]


def controlled_process(cs: ControlledStructure) -> ProcessMatrix:
    """``|w> = sum_G |G>^{C_O} |G>^{D} |w^(G)>`` as a rank-one process matrix."""
    k = len(cs.branches)
    base = [d for l in cs.labs for d in (l.d_in, l.d_out)]
    total = np.zeros(math.prod(base) * cs.register_dim * k * k, dtype=complex)
    for g, b in enumerate(cs.branches):
        tag = np.zeros(k)
        tag[g] = 1.0
        # factor order: lab spaces, register, C_O, D control
        total += np.kron(np.kron(b.vector, tag), tag)
    n = len(base)
    dims = base + [cs.register_dim, k, k]
    # canonical: lab spaces, C_O, D control, register
    perm = list(range(n)) + [n + 2, n, n + 1]
    v = permute_vector(total, dims, perm)
    return ProcessMatrix(cs.all_labs(), np.outer(v, v.conj()))


def _switch_vectors(psi: np.ndarray, d: int):
    wire = np.eye(d)
    ab = np.einsum("a,ob,sr->aobsr", psi, wire, wire)  # A_I A_O B_I B_O R
    # B first: B_I = psi, B_O -> A_I, A_O -> R
    ba = np.einsum("b,sa,or->aobsr", psi, wire, wire)
    return ab.reshape(-1), ba.reshape(-1)


def quantum_switch(input_state, d: int | None = None) -> ProcessMatrix:
    """Switch of labs ``A`` and ``B`` controlled by ``C``, read out at ``D``.

    ``D`` receives the control qubit followed by the target system.
    """
    a = np.asarray(input_state.data if isinstance(input_state, CMatrix) else input_state,
                   dtype=complex)
    if a.ndim == 2:
        a = _pure_vector(a, a.shape[0])
    if abs(np.linalg.norm(a) - 1.0) > 1e-9:
        raise ValueError("input state must be a normalised pure state")
    d = a.size if d is None else d
    if a.size != d:
        raise ValueError("input state does not match the system dimension")
    labs = (LocalLab("A", d, d), LocalLab("B", d, d))
    ab, ba = _switch_vectors(a, d)
    cs = ControlledStructure(
        labs,
        (Branch("A->B", ab, CausalDag.from_pairs("ABD", [("A", "B"), ("B", "D")], d)),
         Branch("B->A", ba, CausalDag.from_pairs("ABD", [("B", "A"), ("A", "D")], d))),
        register_dim=d)
    return controlled_process(cs)


def control_preparation(state) -> ChoiMap:
    """Event of the control lab preparing ``state`` (event form ``rho^T``)."""
    v = np.asarray(state, dtype=complex)
    rho = np.outer(v, v.conj()) if v.ndim == 1 else v
    return ChoiMap(CMatrix(rho.T, (1, rho.shape[0])))


def readout_effect(effect) -> ChoiMap:
    """Event of the readout lab applying POVM element ``effect`` (trivial output)."""
    e = np.asarray(effect, dtype=complex)
    return ChoiMap(CMatrix(e, (e.shape[0], 1)))


def switch_probabilities(u_a, u_b, psi, control=None) -> dict[str, float]:
    """``P(+)`` and ``P(-)`` of measuring the control in the ``|+-> `` basis.

    The target is discarded; the control is prepared in ``control``
    (``|+>`` by default).
    """
    psi = np.asarray(psi, dtype=complex)
    d = psi.size
    control = np.array([1, 1]) / math.sqrt(2) if control is None else np.asarray(control)
    w = quantum_switch(psi)
    ev = {"A": choi_from_unitary(u_a), "B": choi_from_unitary(u_b),
          "C": control_preparation(control)}
    out = {}
    for name, sign in (("+", 1), ("-", -1)):
        v = np.array([1, sign]) / math.sqrt(2)
        ev["D"] = readout_effect(np.kron(np.outer(v, v.conj()), np.eye(d)))
        out[name] = born_probability(w, ev)
    return out
