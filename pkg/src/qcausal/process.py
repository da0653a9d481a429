"""Process matrices and the generalised Born rule.

A :class:`ProcessMatrix` lives on ``I_1 O_1 I_2 O_2 ... I_n O_n`` (the
canonical order) and assigns ``tr[(x)_j M_j . W]`` to events ``M_j`` in the
event Choi convention.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .events import ChoiMap, Instrument, identity_event, noisy_event, validate_instrument
from .tensor import (
    PSD_TOL,
    CMatrix,
    hs_basis,
    hs_coefficients,
    type_maxima,
)

PROB_TOL = 1e-9
TERM_TOL = 1e-7


@dataclass(frozen=True)
class LocalLab:
    """A laboratory with input and output dimensions.

    ``out_factors`` lists ``(edge_id, dim)`` pairs in the order the output space
    factorises into outgoing source spaces; it may be empty.
    """

    id: str
    d_in: int
    d_out: int
    out_factors: tuple[tuple[str, int], ...] = ()
    latent: bool = False

    def __post_init__(self):
        if isinstance(self.out_factors, Mapping):
            object.__setattr__(self, "out_factors", tuple(self.out_factors.items()))
        object.__setattr__(self, "out_factors",
                           tuple((str(e), int(d)) for e, d in self.out_factors))
        if self.d_in < 1 or self.d_out < 1:
            raise ValueError(f"lab {self.id}: dimensions must be positive")
        if self.out_factors and math.prod(d for _, d in self.out_factors) != self.d_out:
            raise ValueError(f"lab {self.id}: output factors do not multiply to d_out")

    @property
    def dim(self) -> int:
        return self.d_in * self.d_out


@dataclass(frozen=True, eq=False)
class ProcessMatrix:
    labs: tuple[LocalLab, ...]
    matrix: CMatrix

    def __init__(self, labs: Sequence[LocalLab], matrix):
        labs = tuple(labs)
        ids = [l.id for l in labs]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate lab ids {ids}")
        dims = tuple(d for l in labs for d in (l.d_in, l.d_out))
        if not isinstance(matrix, CMatrix):
            matrix = CMatrix(matrix)
        object.__setattr__(self, "labs", labs)
        object.__setattr__(self, "matrix", matrix.with_dims(dims))

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(l.id for l in self.labs)

    @property
    def d_out(self) -> int:
        return math.prod(l.d_out for l in self.labs)

    def index(self, lab: str) -> int:
        try:
            return self.ids.index(lab)
        except ValueError:
            raise KeyError(f"unknown lab {lab!r}") from None

    def lab(self, lab: str) -> LocalLab:
        return self.labs[self.index(lab)]

    def subsystem_labels(self) -> list[tuple[str, str]]:
        return [(l.id, side) for l in self.labs for side in ("I", "O")]

    def lab_tensor(self) -> np.ndarray:
        """Array with one row then one column axis per lab (input and output merged)."""
        ds = tuple(l.dim for l in self.labs)
        return self.matrix.data.reshape(ds + ds)


@dataclass(frozen=True, eq=False)
class ProbTable:
    """Joint outcome probabilities, one array axis per laboratory."""

    labs: tuple[str, ...]
    probs: np.ndarray

    def total(self) -> float:
        return float(self.probs.sum())

    def marginal(self, lab: str) -> "ProbTable":
        k = self.labs.index(lab)
        axes = tuple(i for i in range(len(self.labs)) if i != k)
        return ProbTable((lab,), self.probs.sum(axis=axes))

    def as_dict(self) -> dict[tuple[int, ...], float]:
        return {idx: float(p) for idx, p in np.ndenumerate(self.probs)}

    def to_csv(self) -> str:
        lines = [",".join(list(self.labs) + ["probability"])]
        for idx, p in np.ndenumerate(self.probs):
            lines.append(",".join([str(i) for i in idx] + [repr(float(p))]))
        return "\n".join(lines) + "\n"


@dataclass
class ProcessReport:
    """Numeric residuals of the process-matrix validity conditions."""

    hermitian_residual: float
    min_eigenvalue: float
    trace_residual: float
    normalization_residual: float
    tol: float = PSD_TOL
    checks: dict[str, bool] = field(default_factory=dict)

    def __post_init__(self):
        self.checks = {
            "hermitian": self.hermitian_residual <= self.tol,
            "psd": self.min_eigenvalue >= -self.tol,
            "trace": self.trace_residual <= self.tol,
            "normalization": self.normalization_residual <= self.tol,
        }

    @property
    def ok(self) -> bool:
        return all(self.checks.values())


def contract_labs(w: ProcessMatrix, stacks: Mapping[int, np.ndarray]):
    """Contract some labs of ``w`` against stacks of event matrices.

    ``stacks[j]`` has shape ``(K_j, D_j, D_j)`` with ``D_j = d_in*d_out``.
    Returns ``(tensor, open_labs)`` where the tensor has the row axes of the
    open labs, then their column axes, then one outcome axis per contracted
    lab in increasing lab order.
    """
    t = w.lab_tensor()
    open_labs = list(range(len(w.labs)))
    for j in sorted(stacks):
        s = np.asarray(stacks[j])
        p = open_labs.index(j)
        r = len(open_labs)
        # tr[M W] = sum_{rc} M[r, c] W[c, r]
        t = np.tensordot(t, s, axes=([p, r + p], [2, 1]))
        open_labs.pop(p)
    return t, open_labs


def born_tensor(w: ProcessMatrix, stacks: Sequence[np.ndarray]) -> np.ndarray:
    """Real array of ``tr[(x)_j M_{x_j} W]`` over all outcome tuples."""
    if len(stacks) != len(w.labs):
        raise ValueError("need one stack of events per lab")
    for lab, s in zip(w.labs, stacks):
        if s.shape[1:] != (lab.dim, lab.dim):
            raise ValueError(f"events for lab {lab.id} have shape {s.shape[1:]}, "
                             f"expected {(lab.dim, lab.dim)}")
    t, _ = contract_labs(w, dict(enumerate(stacks)))
    if np.abs(t.imag).max(initial=0.0) > 1e-8 * max(1.0, np.abs(t.real).max(initial=0.0)):
        raise ValueError("Born rule gave complex values; inputs are not Hermitian")
    return t.real


def _clamp(p: np.ndarray, tol: float = PROB_TOL) -> np.ndarray:
    if p.size and p.min() < -tol:
        raise ValueError(f"negative probability {p.min():.3e}: invalid process or events")
    if p.size and p.max() > 1 + tol:
        raise ValueError(f"probability {p.max():.6f} exceeds 1: invalid process or events")
    return np.clip(p, 0.0, 1.0)


def _per_lab(w: ProcessMatrix, items):
    if isinstance(items, Mapping):
        missing = set(w.ids) - set(items)
        extra = set(items) - set(w.ids)
        if missing or extra:
            raise KeyError(f"missing labs {sorted(missing)}, unknown labs {sorted(extra)}")
        return [items[i] for i in w.ids]
    items = list(items)
    if len(items) != len(w.labs):
        raise ValueError("need exactly one entry per lab")
    return items


def born_probability(w: ProcessMatrix, events) -> float:
    """Generalised Born rule for one event per lab (mapping or sequence)."""
    events = _per_lab(w, events)
    stacks = [e.matrix.data[None] for e in events]
    return float(_clamp(born_tensor(w, stacks)).reshape(()))


def outcome_distribution(w: ProcessMatrix, instruments) -> ProbTable:
    instruments = _per_lab(w, instruments)
    for lab, j in zip(w.labs, instruments):
        if not validate_instrument(j):
            raise ValueError(f"instrument for lab {lab.id} is not valid")
    p = _clamp(born_tensor(w, [j.stack() for j in instruments]))
    return ProbTable(w.ids, p)


def marginal_distribution(w: ProcessMatrix, instruments, target_lab: str) -> ProbTable:
    w.index(target_lab)
    return outcome_distribution(w, instruments).marginal(target_lab)


def spanning_events(d_in: int, d_out: int) -> np.ndarray:
    """CPTP event matrices whose affine span is every trace-preserving event.

    The maximally noisy channel, plus that channel nudged along each
    ``s_mu (x) s_nu`` direction with ``nu >= 1`` (traceless on the output).
    """
    base = np.eye(d_in * d_out, dtype=complex) / d_out
    bi, bo = hs_basis(d_in).elements, hs_basis(d_out).elements
    out = [base]
    for s in bi:
        for t in bo[1:]:
            x = np.kron(s, t)
            eps = 0.5 / (d_out * np.linalg.norm(x, 2))
            out.append(base + eps * x)
    return np.array(out)


def normalization_residual(w: ProcessMatrix) -> float:
    """``max |P - 1|`` of the Born rule over products of spanning CPTP events."""
    stacks = [spanning_events(l.d_in, l.d_out) for l in w.labs]
    t, _ = contract_labs(w, dict(enumerate(stacks)))
    return float(np.abs(np.asarray(t) - 1.0).max())


def check_process(w: ProcessMatrix, tol: float = PSD_TOL) -> ProcessReport:
    a = w.matrix.data
    herm = float(np.abs(a - a.conj().T).max(initial=0.0))
    eig = float(np.linalg.eigvalsh((a + a.conj().T) / 2)[0])
    return ProcessReport(
        hermitian_residual=herm,
        min_eigenvalue=eig,
        trace_residual=abs(w.matrix.trace() - w.d_out),
        normalization_residual=normalization_residual(w),
        tol=tol,
    )


def is_valid_process(w: ProcessMatrix, tol: float = PSD_TOL) -> bool:
    return check_process(w, tol).ok


def type_bit(w: ProcessMatrix, lab: str, side: str) -> int:
    return 1 << (2 * w.index(lab) + (0 if side == "I" else 1))


def term_maxima(w: ProcessMatrix) -> np.ndarray:
    """Largest HS coefficient magnitude for every subsystem bitmask of ``w``."""
    return type_maxima(hs_coefficients(w.matrix).real)


def influence_free(w: ProcessMatrix, lab: str, tol: float = TERM_TOL) -> bool:
    """No HS term of ``w`` is non-trivial on the lab's output.

    ``tol`` is relative to the Hilbert-Schmidt norm of ``w``.
    """
    bit = type_bit(w, lab, "O")
    maxima = term_maxima(w)
    ids = np.arange(maxima.size)
    return bool(maxima[(ids & bit) != 0].max(initial=0.0) <= tol * w.matrix.hs_norm())


def direct_cause(w: ProcessMatrix, cause: str, effect: str, tol: float = TERM_TOL) -> bool:
    """Parenthood criterion: ``w`` has a term of type exactly ``O_cause I_effect``.

    Exact for processes faithful to some DAG; for other processes this only
    detects the HS signature of a direct link.
    """
    if cause == effect:
        return False
    bits = type_bit(w, cause, "O") | type_bit(w, effect, "I")
    return bool(term_maxima(w)[bits] > tol * w.matrix.hs_norm())


def reduced_process(w: ProcessMatrix, fixed: Mapping[str, ChoiMap]) -> ProcessMatrix:
    """Fix CPTP maps in some labs and keep the process seen by the others."""
    stacks = {}
    for lab_id, m in fixed.items():
        j = w.index(lab_id)
        lab = w.labs[j]
        if m.matrix.dims != (lab.d_in, lab.d_out):
            raise ValueError(f"map for lab {lab_id} has dims {m.matrix.dims}")
        if not m.is_trace_preserving():
            raise ValueError(f"map for lab {lab_id} is not trace preserving")
        stacks[j] = m.matrix.data[None]
    t, open_labs = contract_labs(w, stacks)
    labs = [w.labs[j] for j in open_labs]
    d = math.prod(l.dim for l in labs)
    return ProcessMatrix(labs, CMatrix(np.asarray(t).reshape(d, d)))


# -- signalling search -------------------------------------------------------


def probe_bases(d: int) -> list[np.ndarray]:
    """Orthonormal bases used by the signalling search (columns are states).

    For ``d = 2`` these are the X, Y and Z eigenbases; in general the
    eigenbases of the non-identity HS basis elements, without repeats.
    """
    if d == 1:
        return [np.ones((1, 1), dtype=complex)]
    bases = []
    for s in hs_basis(d).elements[1:]:
        _, vecs = np.linalg.eigh(s)
        if not any(_same_basis(vecs, b) for b in bases):
            bases.append(vecs)
    return bases


def _same_basis(a: np.ndarray, b: np.ndarray) -> bool:
    overlap = np.abs(a.conj().T @ b) ** 2
    return bool(np.allclose(np.sort(overlap, axis=1)[:, -1], 1.0))


def probe_channels(d_in: int, d_out: int) -> list[tuple[str, np.ndarray]]:
    """Named CPTP events: prepare a basis state, identity, measure-and-reprepare."""
    out = []
    if d_in == d_out and d_in > 1:
        out.append(("identity", identity_event(d_in).matrix.data))
    for b, vecs in enumerate(probe_bases(d_out)):
        for k in range(vecs.shape[1]):
            s = np.outer(vecs[:, k], vecs[:, k].conj())
            out.append((f"prepare[b{b},{k}]", np.kron(np.eye(d_in), s.T)))
    if d_in == d_out and d_in > 1:
        for b, vecs in enumerate(probe_bases(d_in)):
            m = sum(np.kron(p, p.T) for p in
                    (np.outer(vecs[:, k], vecs[:, k].conj()) for k in range(d_in)))
            out.append((f"measure-reprepare[b{b}]", m))
    if not out:
        out.append(("discard", noisy_event(d_in, d_out).matrix.data))
    return out


def probe_measurements(d_in: int, d_out: int) -> list[tuple[str, np.ndarray]]:
    """Named instruments measuring in a probe basis and preparing the mixed state."""
    out = []
    for b, vecs in enumerate(probe_bases(d_in)):
        maps = [np.kron(np.outer(vecs[:, k], vecs[:, k].conj()), np.eye(d_out) / d_out)
                for k in range(vecs.shape[1])]
        out.append((f"measure[b{b}]", np.array(maps)))
    return out


@dataclass
class SignallingWitness:
    """Instruments realising a difference in the effect lab's marginal."""

    from_lab: str
    to_lab: str
    instrument: Instrument
    alternative: Instrument
    measurement: Instrument
    others: dict[str, Instrument]
    probabilities: np.ndarray
    alternative_probabilities: np.ndarray
    labels: dict[str, str]

    @property
    def gap(self) -> float:
        return float(np.abs(self.probabilities - self.alternative_probabilities).max())


def signalling_witness(w: ProcessMatrix, from_lab: str, to_lab: str,
                       search_budget: int = 10_000, min_gap: float = 1e-6):
    """Search a fixed family of instruments for signalling from one lab to another.

    Sound but not complete: a returned witness always signals, ``None`` only
    means nothing was found within the family and budget. The marginal at
    ``to_lab`` depends only on the channels (outcome-summed instruments) used
    elsewhere, so the other labs range over :func:`probe_channels`.
    """
    if from_lab == to_lab:
        raise ValueError("labs must be distinct")
    h, k = w.index(from_lab), w.index(to_lab)
    others = [j for j in range(len(w.labs)) if j not in (h, k)]
    fam = {j: probe_channels(w.labs[j].d_in, w.labs[j].d_out) for j in others}
    h_fam = probe_channels(w.labs[h].d_in, w.labs[h].d_out)
    k_fam = probe_measurements(w.labs[k].d_in, w.labs[k].d_out)
    h_stack = np.array([m for _, m in h_fam])
    evaluated = 0
    for choice in itertools.product(*(range(len(fam[j])) for j in others)):
        if evaluated >= search_budget:
            break
        evaluated += 1
        stacks = {j: fam[j][c][1][None] for j, c in zip(others, choice)}
        stacks[h] = h_stack
        for kname, kstack in k_fam:
            stacks[k] = kstack
            t, _ = contract_labs(w, stacks)
            # axes: one per contracted lab in increasing order; pull out h and k
            order = sorted(stacks)
            t = np.asarray(t).real.reshape([stacks[j].shape[0] for j in order])
            t = np.moveaxis(t, [order.index(h), order.index(k)], [0, 1]).reshape(
                len(h_fam), kstack.shape[0])
            spread = t.max(axis=0) - t.min(axis=0)
            y = int(np.argmax(spread))
            if spread[y] > min_gap:
                a, b = int(np.argmax(t[:, y])), int(np.argmin(t[:, y]))
                labels = {w.labs[j].id: fam[j][c][0] for j, c in zip(others, choice)}
                labels[from_lab] = f"{h_fam[a][0]} vs {h_fam[b][0]}"
                labels[to_lab] = kname
                lab_h, lab_k = w.labs[h], w.labs[k]
                dims_h = (lab_h.d_in, lab_h.d_out)
                return SignallingWitness(
                    from_lab=from_lab,
                    to_lab=to_lab,
                    instrument=Instrument([CMatrix(h_fam[a][1], dims_h)], from_lab),
                    alternative=Instrument([CMatrix(h_fam[b][1], dims_h)], from_lab),
                    measurement=Instrument([CMatrix(m, (lab_k.d_in, lab_k.d_out))
                                            for m in kstack], to_lab),
                    others={w.labs[j].id: Instrument(
                        [CMatrix(fam[j][c][1], (w.labs[j].d_in, w.labs[j].d_out))],
                        w.labs[j].id) for j, c in zip(others, choice)},
                    probabilities=t[a].copy(),
                    alternative_probabilities=t[b].copy(),
                    labels=labels,
                )
    return None
