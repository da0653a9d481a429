"""Local quantum events, mechanisms and instruments.

Two Choi conventions coexist:

* events (operations inside a laboratory) use
  ``M = sum_jl |l><j| (x) [M(|j><l|)]^T``, the transpose of the usual Choi
  matrix;
* mechanisms (channels between laboratories) use the usual Choi matrix
  ``T = sum_jl |j><l| (x) T(|j><l|)``.

The two are related by a full transposition in the computational basis.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .tensor import (
    PSD_TOL,
    CMatrix,
    double_ket,
    identity,
    is_psd,
    kron,
    partial_trace,
    partial_transpose,
)

UNITARY_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class ChoiMap:
    """A CP map from a lab's input to its output, in the event convention."""

    matrix: CMatrix
    lab: str | None = None

    def __post_init__(self):
        if self.matrix.nsys != 2:
            raise ValueError(f"event matrix needs dims [d_in, d_out], got {self.matrix.dims}")
        if not is_psd(self.matrix, PSD_TOL):
            raise ValueError("event matrix is not positive semidefinite")

    @property
    def d_in(self) -> int:
        return self.matrix.dims[0]

    @property
    def d_out(self) -> int:
        return self.matrix.dims[1]

    def is_trace_preserving(self, tol: float = 1e-9) -> bool:
        red = partial_trace(self.matrix, [0])
        return bool(np.abs(red.data - np.eye(self.d_in)).max() <= tol)

    def on_lab(self, lab: str | None) -> "ChoiMap":
        return ChoiMap(self.matrix, lab)


@dataclass(frozen=True, eq=False)
class ChannelMatrix:
    """A CPTP map between (products of) spaces, in the mechanism convention."""

    source_dims: tuple[int, ...]
    target_dims: tuple[int, ...]
    matrix: CMatrix

    def __init__(self, source_dims, target_dims, matrix, tol: float = 1e-9):
        source_dims = tuple(int(d) for d in source_dims)
        target_dims = tuple(int(d) for d in target_dims)
        if not isinstance(matrix, CMatrix):
            matrix = CMatrix(matrix)
        matrix = matrix.with_dims(source_dims + target_dims)
        if not is_psd(matrix, tol):
            raise ValueError("channel matrix is not positive semidefinite")
        ns = len(source_dims)
        red = partial_trace(matrix, range(ns))
        if np.abs(red.data - np.eye(red.size)).max(initial=0.0) > tol:
            raise ValueError("channel is not trace preserving")
        object.__setattr__(self, "source_dims", source_dims)
        object.__setattr__(self, "target_dims", target_dims)
        object.__setattr__(self, "matrix", matrix)

    @property
    def d_source(self) -> int:
        return math.prod(self.source_dims)

    @property
    def d_target(self) -> int:
        return math.prod(self.target_dims)


@dataclass(frozen=True, eq=False)
class Instrument:
    """Outcome-indexed CP maps on one laboratory."""

    maps: tuple[ChoiMap, ...]
    lab: str | None = None

    def __init__(self, maps: Sequence[ChoiMap | CMatrix], lab: str | None = None):
        maps = tuple(m if isinstance(m, ChoiMap) else ChoiMap(m) for m in maps)
        if not maps:
            raise ValueError("an instrument needs at least one map")
        dims = {m.matrix.dims for m in maps}
        if len(dims) != 1:
            raise ValueError(f"instrument maps act on different spaces: {dims}")
        object.__setattr__(self, "maps", tuple(m.on_lab(lab) for m in maps))
        object.__setattr__(self, "lab", lab)

    def __len__(self) -> int:
        return len(self.maps)

    def __iter__(self):
        return iter(self.maps)

    @property
    def dims(self) -> tuple[int, int]:
        return self.maps[0].matrix.dims

    def stack(self) -> np.ndarray:
        return np.array([m.matrix.data for m in self.maps])

    def total(self) -> CMatrix:
        return CMatrix(self.stack().sum(axis=0), self.dims)


def choi_from_kraus(kraus: Sequence, d_in: int, d_out: int, lab: str | None = None) -> ChoiMap:
    """Event matrix of ``rho -> sum_k K rho K^dag``."""
    ks = [np.asarray(k.data if isinstance(k, CMatrix) else k, dtype=complex) for k in kraus]
    for k in ks:
        if k.shape != (d_out, d_in):
            raise ValueError(f"Kraus operator has shape {k.shape}, expected {(d_out, d_in)}")
    m = np.zeros((d_in * d_out, d_in * d_out), dtype=complex)
    for j in range(d_in):
        for l in range(d_in):
            e = np.zeros((d_in, d_in), dtype=complex)
            e[j, l] = 1.0
            out = sum(k @ e @ k.conj().T for k in ks)
            # |l><j| (x) out^T
            m += np.kron(e.T, out.T)
    return ChoiMap(CMatrix(m, (d_in, d_out)), lab)


def _check_unitary(u: np.ndarray):
    if u.ndim != 2 or u.shape[0] != u.shape[1]:
        raise ValueError("unitary must be square")
    if np.abs(u.conj().T @ u - np.eye(u.shape[0])).max() > UNITARY_TOL:
        raise ValueError("matrix is not unitary")


def choi_from_unitary(u, lab: str | None = None) -> ChoiMap:
    """Event ``|U*>><<U*|`` of a unitary applied inside a lab."""
    u = np.asarray(u.data if isinstance(u, CMatrix) else u, dtype=complex)
    _check_unitary(u)
    v = double_ket(u.conj())
    d = u.shape[0]
    return ChoiMap(CMatrix(np.outer(v, v.conj()), (d, d)), lab)


def unitary_channel(u) -> ChannelMatrix:
    """Mechanism ``|U>><<U|`` carrying a system through ``U``."""
    u = np.asarray(u.data if isinstance(u, CMatrix) else u, dtype=complex)
    _check_unitary(u)
    v = double_ket(u)
    d = u.shape[0]
    return ChannelMatrix((d,), (d,), CMatrix(np.outer(v, v.conj())))


def identity_channel(dims: Sequence[int] | int) -> ChannelMatrix:
    """Identity wire ``|1>><<1|`` on a (possibly composite) system."""
    if isinstance(dims, int):
        dims = (dims,)
    d = math.prod(dims)
    v = double_ket(np.eye(d))
    return ChannelMatrix(dims, dims, CMatrix(np.outer(v, v.conj())))


def state_channel(rho) -> ChannelMatrix:
    """A mechanism from the trivial space: sends the fixed state ``rho``."""
    rho = rho if isinstance(rho, CMatrix) else CMatrix(rho)
    return ChannelMatrix((), rho.dims, rho)


def depolarizing_channel(d_in: int, d_out: int | None = None) -> ChannelMatrix:
    d_out = d_in if d_out is None else d_out
    return ChannelMatrix((d_in,), (d_out,), identity(d_in * d_out) / d_out)


def _check_state_vector(psi) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex).reshape(-1)
    if abs(np.linalg.norm(psi) - 1.0) > 1e-9:
        raise ValueError("state vector is not normalised")
    return psi


def projective_reprepare(psi, lab: str | None = None) -> ChoiMap:
    """Find the system in ``|psi>`` and re-prepare it in the same state."""
    psi = _check_state_vector(psi)
    p = np.outer(psi, psi.conj())
    d = psi.size
    return ChoiMap(CMatrix(np.kron(p, p.T), (d, d)), lab)


def _check_density(rho: CMatrix, tol: float = 1e-9):
    if not is_psd(rho, tol) or abs(rho.trace() - 1) > tol:
        raise ValueError("not a density matrix")


def measure_prepare_instrument(povm: Sequence, rho, lab: str | None = None) -> Instrument:
    """Instrument ``{E_x (x) rho^T}``: measure a POVM, then prepare ``rho``."""
    els = [e if isinstance(e, CMatrix) else CMatrix(e) for e in povm]
    rho = rho if isinstance(rho, CMatrix) else CMatrix(rho)
    d_in = els[0].size
    for e in els:
        if e.size != d_in or not is_psd(e):
            raise ValueError("POVM element is not positive or has the wrong size")
    if np.abs(sum(e.data for e in els) - np.eye(d_in)).max() > 1e-9:
        raise ValueError("POVM elements do not sum to the identity")
    _check_density(rho)
    rt = CMatrix(rho.data.T)
    return Instrument([ChoiMap(kron(CMatrix(e.data), rt), lab) for e in els], lab)


def apply_event(m: ChoiMap, rho) -> CMatrix:
    """Output (possibly subnormalised) of an event: ``[tr_in(rho (x) 1 . M)]^T``."""
    rho = rho if isinstance(rho, CMatrix) else CMatrix(rho)
    if rho.size != m.d_in:
        raise ValueError(f"state has size {rho.size}, event expects {m.d_in}")
    prod = kron(CMatrix(rho.data), identity(m.d_out)) @ m.matrix.with_dims((m.d_in, m.d_out))
    return partial_trace(prod, [1]).transpose()


def apply_channel(t: ChannelMatrix, rho) -> CMatrix:
    """Output ``tr_src[rho . T^{T_src}]`` of a mechanism."""
    rho = rho if isinstance(rho, CMatrix) else CMatrix(rho)
    if rho.size != t.d_source:
        raise ValueError(f"state has size {rho.size}, channel expects {t.d_source}")
    tm = t.matrix.with_dims((t.d_source, t.d_target))
    tpt = partial_transpose(tm, [0])
    prod = kron(CMatrix(rho.data), identity(t.d_target)) @ tpt
    return partial_trace(prod, [1]).with_dims(t.target_dims or (1,))


def channel_from_map(fn, source_dims: Sequence[int], target_dims: Sequence[int]) -> ChannelMatrix:
    """Mechanism Choi matrix of a linear map given as a Python callable."""
    ds, dt = math.prod(source_dims), math.prod(target_dims)
    m = np.zeros((ds * dt, ds * dt), dtype=complex)
    for j in range(ds):
        for l in range(ds):
            e = np.zeros((ds, ds), dtype=complex)
            e[j, l] = 1.0
            out = np.asarray(fn(e), dtype=complex).reshape(dt, dt)
            m += np.kron(e, out)
    return ChannelMatrix(source_dims, target_dims, CMatrix(m))


def event_to_mechanism(m: ChoiMap) -> ChannelMatrix:
    """Reinterpret a CPTP event as a connecting mechanism (full transpose)."""
    if not m.is_trace_preserving():
        raise ValueError("only trace-preserving events can become mechanisms")
    return ChannelMatrix((m.d_in,), (m.d_out,), m.matrix.transpose())


def mechanism_to_event(t: ChannelMatrix, lab: str | None = None) -> ChoiMap:
    return ChoiMap(t.matrix.transpose().with_dims((t.d_source, t.d_target)), lab)


def identity_event(d: int, lab: str | None = None) -> ChoiMap:
    return mechanism_to_event(identity_channel(d), lab)


def noisy_event(d_in: int, d_out: int, lab: str | None = None) -> ChoiMap:
    """Maximally noisy channel ``1/d_out``: discard input, prepare the mixed state."""
    return ChoiMap(identity((d_in, d_out)) / d_out, lab)


def validate_instrument(j: Instrument, tol: float = 1e-9) -> bool:
    if any(not is_psd(m.matrix, tol) for m in j.maps):
        return False
    d_in, d_out = j.dims
    red = partial_trace(j.total(), [0])
    return bool(np.abs(red.data - np.eye(d_in)).max() <= tol)
