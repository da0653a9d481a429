"""Dense operator algebra over tensor-product spaces.

Every operator in the package is a :class:`CMatrix`: a square complex matrix
together with the ordered list of subsystem dimensions it acts on. Transposes
are always taken in the computational basis.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

PSD_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class CMatrix:
    """Immutable square complex matrix on a product of subsystems."""

    data: np.ndarray
    dims: tuple[int, ...]

    def __init__(self, data, dims: Sequence[int] | None = None):
        arr = np.array(data, dtype=complex)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {arr.shape}")
        if dims is None:
            dims = (arr.shape[0],)
        dims = tuple(int(d) for d in dims)
        if any(d < 1 for d in dims):
            raise ValueError(f"subsystem dimensions must be positive: {dims}")
        if math.prod(dims) != arr.shape[0]:
            raise ValueError(f"dims {dims} do not match matrix size {arr.shape[0]}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("matrix has non-finite entries")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "dims", dims)

    @property
    def size(self) -> int:
        return self.data.shape[0]

    @property
    def nsys(self) -> int:
        return len(self.dims)

    def trace(self) -> complex:
        return complex(np.trace(self.data))

    def dag(self) -> "CMatrix":
        return CMatrix(self.data.conj().T, self.dims)

    def transpose(self) -> "CMatrix":
        return CMatrix(self.data.T, self.dims)

    def tensor(self) -> np.ndarray:
        """View as an array with one row axis then one column axis per subsystem."""
        return self.data.reshape(self.dims + self.dims)

    def with_dims(self, dims: Sequence[int]) -> "CMatrix":
        """Same entries, regrouped subsystem dimensions."""
        return CMatrix(self.data, dims)

    def hs_norm(self) -> float:
        return float(np.linalg.norm(self.data))

    def is_hermitian(self, tol: float = PSD_TOL) -> bool:
        return bool(np.abs(self.data - self.data.conj().T).max(initial=0.0) <= tol)

    def allclose(self, other: "CMatrix", atol: float = 1e-10) -> bool:
        return self.data.shape == other.data.shape and bool(
            np.abs(self.data - other.data).max(initial=0.0) <= atol)

    def _other(self, other) -> np.ndarray:
        if isinstance(other, CMatrix):
            if other.data.shape != self.data.shape:
                raise ValueError("shape mismatch")
            return other.data
        return np.asarray(other)

    def __add__(self, other):
        return CMatrix(self.data + self._other(other), self.dims)

    def __sub__(self, other):
        return CMatrix(self.data - self._other(other), self.dims)

    def __neg__(self):
        return CMatrix(-self.data, self.dims)

    def __mul__(self, scalar):
        if isinstance(scalar, CMatrix):
            return NotImplemented
        return CMatrix(self.data * scalar, self.dims)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return CMatrix(self.data / scalar, self.dims)

    def __matmul__(self, other: "CMatrix") -> "CMatrix":
        return CMatrix(self.data @ self._other(other), self.dims)

    def __repr__(self) -> str:
        return f"CMatrix(dims={self.dims})"


def identity(dims: Sequence[int] | int) -> CMatrix:
    if isinstance(dims, int):
        dims = (dims,)
    return CMatrix(np.eye(math.prod(dims)), dims)


def ket(index: int, d: int) -> np.ndarray:
    v = np.zeros(d, dtype=complex)
    v[index] = 1.0
    return v


def proj(psi) -> CMatrix:
    """Rank-one projector ``|psi><psi|`` (no normalisation is applied)."""
    psi = np.asarray(psi, dtype=complex).reshape(-1)
    return CMatrix(np.outer(psi, psi.conj()))


def double_ket(u) -> np.ndarray:
    """``|U>> = sum_j |j> (x) U|j>`` as a vector on input (x) output."""
    u = np.asarray(u.data if isinstance(u, CMatrix) else u, dtype=complex)
    return u.T.reshape(-1)


def kron(*ms: CMatrix) -> CMatrix:
    """Kronecker product; dims are concatenated in argument order."""
    if not ms:
        return CMatrix(np.ones((1, 1)), ())
    data = ms[0].data
    dims = ms[0].dims
    for m in ms[1:]:
        data = np.kron(data, m.data)
        dims = dims + m.dims
    return CMatrix(data, dims)


def _check_indices(m: CMatrix, idx: Iterable[int]) -> list[int]:
    out = sorted(set(int(i) for i in idx))
    for i in out:
        if not 0 <= i < m.nsys:
            raise IndexError(f"subsystem {i} out of range for dims {m.dims}")
    return out


def partial_trace(m: CMatrix, keep: Iterable[int]) -> CMatrix:
    """Trace out every subsystem not listed in ``keep``.

    Kept subsystems stay in their original order. An empty ``keep`` gives the
    full trace as a 1x1 matrix.
    """
    keep = _check_indices(m, keep)
    n = m.nsys
    t = m.tensor()
    row = list(range(n))
    col = [n + i for i in range(n)]
    for i in range(n):
        if i not in keep:
            col[i] = row[i]
    out = [row[i] for i in keep] + [col[i] for i in keep]
    res = np.einsum(t, row + col, out)
    kd = tuple(m.dims[i] for i in keep)
    d = math.prod(kd)
    return CMatrix(np.asarray(res).reshape(d, d), kd)


def partial_transpose(m: CMatrix, subsystems: Iterable[int]) -> CMatrix:
    subs = _check_indices(m, subsystems)
    n = m.nsys
    axes = list(range(2 * n))
    for i in subs:
        axes[i], axes[n + i] = n + i, i
    return CMatrix(m.tensor().transpose(axes).reshape(m.data.shape), m.dims)


def permute_subsystems(m: CMatrix, perm: Sequence[int]) -> CMatrix:
    """Reorder tensor factors so that factor ``k`` lands at position ``perm[k]``."""
    n = m.nsys
    perm = [int(p) for p in perm]
    if sorted(perm) != list(range(n)):
        raise ValueError(f"{perm} is not a permutation of {n} subsystems")
    inv = [0] * n
    for k, p in enumerate(perm):
        inv[p] = k
    axes = inv + [n + k for k in inv]
    dims = tuple(m.dims[k] for k in inv)
    return CMatrix(m.tensor().transpose(axes).reshape(m.data.shape), dims)


def permute_vector(v: np.ndarray, dims: Sequence[int], perm: Sequence[int]) -> np.ndarray:
    """Vector counterpart of :func:`permute_subsystems`."""
    n = len(dims)
    inv = [0] * n
    for k, p in enumerate(perm):
        inv[p] = k
    return np.asarray(v).reshape(tuple(dims)).transpose(inv).reshape(-1)


@dataclass(frozen=True, eq=False)
class HSBasis:
    """Orthogonal Hermitian operator basis with ``tr(s_mu s_nu) = d delta``.

    ``elements`` has shape ``(d**2, d, d)``; element 0 is the identity.
    """

    dim: int
    elements: np.ndarray

    def __len__(self) -> int:
        return self.elements.shape[0]

    def element(self, mu: int) -> CMatrix:
        return CMatrix(self.elements[mu])

    def rotated(self, u: np.ndarray) -> "HSBasis":
        """Basis conjugated by a unitary; still satisfies every basis property."""
        u = np.asarray(u, dtype=complex)
        els = np.einsum("ij,mjk,lk->mil", u, self.elements, u.conj())
        els.setflags(write=False)
        return HSBasis(self.dim, els)


@lru_cache(maxsize=None)
def hs_basis(d: int) -> HSBasis:
    """Generalised Gell-Mann basis rescaled so that ``tr(s_mu s_nu) = d delta``.

    Order: identity, symmetric off-diagonal, antisymmetric off-diagonal, then
    diagonal elements. For ``d = 2`` this is ``(1, X, Y, Z)``.
    """
    if d < 1:
        raise ValueError("dimension must be positive")
    els = [np.eye(d, dtype=complex)]
    pairs = [(j, k) for j in range(d) for k in range(j + 1, d)]
    scale = math.sqrt(d / 2)
    for j, k in pairs:
        s = np.zeros((d, d), dtype=complex)
        s[j, k] = s[k, j] = 1.0
        els.append(scale * s)
    for j, k in pairs:
        s = np.zeros((d, d), dtype=complex)
        s[j, k] = -1j
        s[k, j] = 1j
        els.append(scale * s)
    for l in range(1, d):
        diag = np.zeros(d)
        diag[:l] = 1.0
        diag[l] = -l
        els.append(scale * math.sqrt(2 / (l * (l + 1))) * np.diag(diag).astype(complex))
    arr = np.array(els)
    arr.setflags(write=False)
    return HSBasis(d, arr)


def is_psd(m: CMatrix, tol: float = PSD_TOL) -> bool:
    """Hermitian within ``tol`` and smallest eigenvalue at least ``-tol``."""
    return min_eigenvalue(m, tol) >= -tol


def min_eigenvalue(m: CMatrix, tol: float = PSD_TOL) -> float:
    """Smallest eigenvalue of the Hermitian part; ``-inf`` if not Hermitian."""
    a = m.data if isinstance(m, CMatrix) else np.asarray(m)
    if np.abs(a - a.conj().T).max(initial=0.0) > tol:
        return -np.inf
    return float(np.linalg.eigvalsh((a + a.conj().T) / 2)[0])


def _bases_for(dims: Sequence[int], bases) -> list[np.ndarray]:
    if bases is None:
        return [hs_basis(d).elements for d in dims]
    out = []
    for d, b in zip(dims, bases):
        b = hs_basis(d) if b is None else b
        if b.dim != d:
            raise ValueError(f"basis of dimension {b.dim} for a subsystem of dimension {d}")
        out.append(b.elements)
    return out


def hs_coefficients(m: CMatrix, bases: Sequence[HSBasis | None] | None = None) -> np.ndarray:
    """Coefficients ``tr(m . (x)_k s_{mu_k}) / prod(dims)`` as an array.

    The result has one axis of length ``d_k**2`` per subsystem. It is complex
    in general and real for Hermitian ``m``.
    """
    dims = m.dims
    t = m.tensor()
    rem = len(dims)
    for b in _bases_for(dims, bases):
        # the current subsystem is always the leading row axis and the column
        # axis ``rem``; its coefficient axis is appended at the end
        t = np.tensordot(t, b, axes=([0, rem], [2, 1]))
        rem -= 1
    return t / math.prod(dims)


def hs_reconstruct(coeffs: np.ndarray, dims: Sequence[int],
                   bases: Sequence[HSBasis | None] | None = None) -> CMatrix:
    dims = tuple(dims)
    t = np.asarray(coeffs, dtype=complex)
    for b in _bases_for(dims, bases):
        t = np.tensordot(t, b, axes=([0], [0]))
    n = len(dims)
    axes = [2 * k for k in range(n)] + [2 * k + 1 for k in range(n)]
    d = math.prod(dims)
    return CMatrix(t.transpose(axes).reshape(d, d), dims)


def type_ids(shape: Sequence[int]) -> np.ndarray:
    """Bitmask of non-identity subsystems for every multi-index of ``shape``."""
    ids = np.zeros(tuple(shape), dtype=np.int64)
    for k, n in enumerate(shape):
        sl = [None] * len(shape)
        sl[k] = slice(None)
        ids = ids + ((np.arange(n) > 0).astype(np.int64) << k)[tuple(sl)]
    return ids


def type_maxima(coeffs: np.ndarray) -> np.ndarray:
    """Largest ``|coefficient|`` per term type, indexed by subsystem bitmask."""
    ids = type_ids(coeffs.shape)
    out = np.zeros(1 << coeffs.ndim)
    np.maximum.at(out, ids.ravel(), np.abs(coeffs).ravel())
    return out
