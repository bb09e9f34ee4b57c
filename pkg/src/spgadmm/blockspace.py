"""Block-structured vectors and dense linear maps.

Every space in the solver is a Cartesian product of real coordinate
spaces.  A :class:`BlockVector` is a flat float64 array together with the
list of block dimensions; a :class:`LinearMap` is a dense matrix together
with the block dimensions of its domain and codomain.  Both are immutable.
"""

from __future__ import annotations

from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg as sla

from .errors import DimensionError, PSDViolationError

__all__ = [
    "BlockVector",
    "LinearMap",
    "apply",
    "gram_norm",
    "spectral_max",
    "spectral_min",
    "quad_forms",
]

# direct eigensolve at or below this dimension, power iteration above
_DIRECT_EIG_DIM = 512
_SYM_TOL = 1e-12
_PSD_TOL = 1e-10
_GRAM_CLAMP = 1e-12


def _as_dims(dims: Iterable[int]) -> tuple[int, ...]:
    dims = tuple(int(d) for d in dims)
    if not dims or any(d <= 0 for d in dims):
        raise DimensionError(f"block dimensions must be positive, got {dims}")
    return dims


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


class BlockVector:
    """Element of ``R^{d_1} x ... x R^{d_m}`` stored as one flat array."""

    __slots__ = ("data", "dims")

    def __init__(self, data, dims: Sequence[int] | None = None):
        data = np.asarray(data, dtype=np.float64).ravel()
        dims = _as_dims(dims if dims is not None else (data.size,))
        if sum(dims) != data.size:
            raise DimensionError(
                f"vector of length {data.size} does not match block dims {dims}"
            )
        object.__setattr__(self, "data", _frozen(data))
        object.__setattr__(self, "dims", dims)

    def __setattr__(self, name, value):
        raise AttributeError("BlockVector is immutable")

    @classmethod
    def from_blocks(cls, blocks: Sequence) -> "BlockVector":
        arrays = [np.atleast_1d(np.asarray(b, dtype=np.float64)).ravel() for b in blocks]
        return cls(np.concatenate(arrays), [a.size for a in arrays])

    @classmethod
    def zeros(cls, dims: Sequence[int]) -> "BlockVector":
        dims = _as_dims(dims)
        return cls(np.zeros(sum(dims)), dims)

    @property
    def blocks(self) -> list[np.ndarray]:
        edges = np.cumsum((0,) + self.dims)
        return [self.data[a:b] for a, b in zip(edges[:-1], edges[1:])]

    @property
    def size(self) -> int:
        return self.data.size

    def _check(self, other: "BlockVector") -> None:
        if not isinstance(other, BlockVector):
            raise TypeError(f"expected BlockVector, got {type(other).__name__}")
        if other.dims != self.dims:
            raise DimensionError(f"block dims differ: {self.dims} vs {other.dims}")

    def __add__(self, other: "BlockVector") -> "BlockVector":
        self._check(other)
        return BlockVector(self.data + other.data, self.dims)

    def __sub__(self, other: "BlockVector") -> "BlockVector":
        self._check(other)
        return BlockVector(self.data - other.data, self.dims)

    def __mul__(self, scalar: float) -> "BlockVector":
        if not np.isscalar(scalar):
            return NotImplemented
        return BlockVector(float(scalar) * self.data, self.dims)

    __rmul__ = __mul__

    def __neg__(self) -> "BlockVector":
        return BlockVector(-self.data, self.dims)

    def __eq__(self, other) -> bool:
        if not isinstance(other, BlockVector):
            return NotImplemented
        return self.dims == other.dims and np.array_equal(self.data, other.data)

    __hash__ = None

    def dot(self, other: "BlockVector") -> float:
        self._check(other)
        return float(self.data @ other.data)

    def norm(self) -> float:
        return float(np.linalg.norm(self.data))

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)

    def __repr__(self) -> str:
        return f"BlockVector(dims={self.dims}, data={self.data!r})"


class LinearMap:
    """Dense linear operator between block spaces.

    Parameters
    ----------
    matrix : array_like, shape (sum(codomain_dims), sum(domain_dims))
    domain_dims, codomain_dims : sequence of int, optional
        Block structure; a single block is assumed when omitted.
    self_adjoint : bool
        Require a symmetric representation.  Tiny asymmetry from rounding
        is removed by symmetrisation.
    psd : bool
        Require self-adjoint positive semidefinite; checked eagerly with
        tolerance ``-1e-10 * ||G||`` on the smallest eigenvalue.
    """

    def __init__(
        self,
        matrix,
        domain_dims: Sequence[int] | None = None,
        codomain_dims: Sequence[int] | None = None,
        *,
        self_adjoint: bool = False,
        psd: bool = False,
    ):
        m = np.array(matrix, dtype=np.float64, ndmin=2)
        if m.ndim != 2:
            raise DimensionError(f"expected a 2-d matrix, got shape {m.shape}")
        domain_dims = _as_dims(domain_dims if domain_dims is not None else (m.shape[1],))
        if codomain_dims is None:
            codomain_dims = domain_dims if (self_adjoint or psd) else (m.shape[0],)
        codomain_dims = _as_dims(codomain_dims)
        if m.shape != (sum(codomain_dims), sum(domain_dims)):
            raise DimensionError(
                f"matrix shape {m.shape} does not match dims "
                f"{codomain_dims} <- {domain_dims}"
            )
        self_adjoint = self_adjoint or psd
        if self_adjoint:
            if codomain_dims != domain_dims:
                raise DimensionError("self-adjoint map needs equal domain and codomain")
            scale = 1.0 + float(np.max(np.abs(m), initial=0.0))
            asym = float(np.max(np.abs(m - m.T), initial=0.0))
            if asym > _SYM_TOL * scale:
                raise PSDViolationError(f"matrix is not symmetric (max asymmetry {asym:.3e})")
            m = 0.5 * (m + m.T)
        object.__setattr__(self, "matrix", _frozen(m))
        object.__setattr__(self, "domain_dims", domain_dims)
        object.__setattr__(self, "codomain_dims", codomain_dims)
        object.__setattr__(self, "self_adjoint", self_adjoint)
        object.__setattr__(self, "psd", psd)
        if psd:
            lo = spectral_min(self)
            if lo < -_PSD_TOL * max(self.norm, 1e-300) and lo < 0:
                raise PSDViolationError(f"operator is not PSD (min eigenvalue {lo:.3e})")

    def __setattr__(self, name, value):
        raise AttributeError("LinearMap is immutable")

    # -- constructors -----------------------------------------------------

    @classmethod
    def identity(cls, dims: Sequence[int], scale: float = 1.0) -> "LinearMap":
        dims = _as_dims(dims)
        return cls(scale * np.eye(sum(dims)), dims, dims, psd=scale >= 0, self_adjoint=True)

    @classmethod
    def zeros(cls, domain_dims: Sequence[int], codomain_dims: Sequence[int] | None = None) -> "LinearMap":
        domain_dims = _as_dims(domain_dims)
        codomain_dims = _as_dims(codomain_dims) if codomain_dims is not None else domain_dims
        square = codomain_dims == domain_dims
        return cls(
            np.zeros((sum(codomain_dims), sum(domain_dims))),
            domain_dims,
            codomain_dims,
            psd=square,
        )

    @classmethod
    def diag(cls, values, dims: Sequence[int] | None = None) -> "LinearMap":
        values = np.asarray(values, dtype=np.float64).ravel()
        return cls(np.diag(values), dims, dims, psd=bool(np.all(values >= 0)), self_adjoint=True)

    @classmethod
    def block_diag(cls, *maps: "LinearMap", psd: bool | None = None) -> "LinearMap":
        """Block-diagonal map acting on the product of the maps' domains."""
        dom = sum((mp.domain_dims for mp in maps), ())
        cod = sum((mp.codomain_dims for mp in maps), ())
        if psd is None:
            psd = all(mp.psd for mp in maps)
        return cls(sla.block_diag(*(mp.matrix for mp in maps)), dom, cod, psd=psd)

    # -- algebra ----------------------------------------------------------

    @cached_property
    def adjoint(self) -> "LinearMap":
        if self.self_adjoint:
            return self
        return LinearMap(self.matrix.T, self.codomain_dims, self.domain_dims)

    @cached_property
    def norm(self) -> float:
        """Induced 2-norm (largest singular value)."""
        if self.matrix.size == 0:
            return 0.0
        if self.psd:
            return spectral_max(self)
        return float(np.linalg.norm(self.matrix, 2))

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def apply(self, v):
        """Return ``M v``; accepts a :class:`BlockVector` or a flat array."""
        if isinstance(v, BlockVector):
            if v.dims != self.domain_dims:
                raise DimensionError(f"vector dims {v.dims} != domain dims {self.domain_dims}")
            return BlockVector(self.matrix @ v.data, self.codomain_dims)
        v = np.asarray(v, dtype=np.float64)
        if v.shape[0] != self.matrix.shape[1]:
            raise DimensionError(f"vector length {v.shape[0]} != domain size {self.matrix.shape[1]}")
        return self.matrix @ v

    def adjoint_apply(self, w):
        """Return ``M* w``."""
        return self.adjoint.apply(w)

    __call__ = apply

    def _binary(self, other: "LinearMap", sign: float) -> "LinearMap":
        if not isinstance(other, LinearMap):
            return NotImplemented
        if (other.domain_dims, other.codomain_dims) != (self.domain_dims, self.codomain_dims):
            raise DimensionError("cannot combine maps with different block dims")
        psd = self.psd and other.psd and sign > 0
        return LinearMap(
            self.matrix + sign * other.matrix,
            self.domain_dims,
            self.codomain_dims,
            self_adjoint=self.self_adjoint and other.self_adjoint,
            psd=psd,
        )

    def __add__(self, other: "LinearMap") -> "LinearMap":
        return self._binary(other, 1.0)

    def __sub__(self, other: "LinearMap") -> "LinearMap":
        return self._binary(other, -1.0)

    def __mul__(self, scalar: float) -> "LinearMap":
        if not np.isscalar(scalar):
            return NotImplemented
        scalar = float(scalar)
        return LinearMap(
            scalar * self.matrix,
            self.domain_dims,
            self.codomain_dims,
            self_adjoint=self.self_adjoint,
            psd=self.psd and scalar >= 0,
        )

    __rmul__ = __mul__

    def __matmul__(self, other: "LinearMap") -> "LinearMap":
        if not isinstance(other, LinearMap):
            return NotImplemented
        if other.codomain_dims != self.domain_dims:
            raise DimensionError("composition with non-conforming dims")
        return LinearMap(self.matrix @ other.matrix, other.domain_dims, self.codomain_dims)

    def gram(self) -> "LinearMap":
        """``M M*`` as a PSD map on the codomain."""
        return LinearMap(self.matrix @ self.matrix.T, self.codomain_dims, psd=True)

    def __eq__(self, other) -> bool:
        if not isinstance(other, LinearMap):
            return NotImplemented
        return (
            self.domain_dims == other.domain_dims
            and self.codomain_dims == other.codomain_dims
            and np.array_equal(self.matrix, other.matrix)
        )

    __hash__ = None

    def __repr__(self) -> str:
        flag = " psd" if self.psd else (" self-adjoint" if self.self_adjoint else "")
        return f"LinearMap({self.codomain_dims} <- {self.domain_dims}{flag})"


def apply(map: LinearMap, v):
    return map.apply(v)


def _require_symmetric(map: LinearMap) -> np.ndarray:
    if not map.self_adjoint:
        m = map.matrix
        if m.shape[0] != m.shape[1] or not np.allclose(m, m.T, rtol=0, atol=_SYM_TOL * (1 + np.abs(m).max())):
            raise PSDViolationError("spectral bounds need a self-adjoint map")
        return 0.5 * (m + m.T)
    return map.matrix


def _power_iteration(m: np.ndarray, tol: float = 1e-13, maxiter: int = 20000) -> float | None:
    v = np.ones(m.shape[0]) / np.sqrt(m.shape[0])
    lam = 0.0
    for _ in range(maxiter):
        w = m @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return None
        v = w / nw
        lam_new = float(v @ (m @ v))
        if abs(lam_new - lam) <= tol * abs(lam_new):
            return lam_new
        lam = lam_new
    return None


def spectral_max(map: LinearMap) -> float:
    """Largest eigenvalue of a self-adjoint map."""
    m = _require_symmetric(map)
    n = m.shape[0]
    if n > _DIRECT_EIG_DIM and map.psd:
        lam = _power_iteration(m)
        if lam is not None:
            return lam
    if n > _DIRECT_EIG_DIM:
        return float(sla.eigh(m, eigvals_only=True, subset_by_index=[n - 1, n - 1])[0])
    return float(np.linalg.eigvalsh(m)[-1])


def spectral_min(map: LinearMap) -> float:
    """Smallest eigenvalue of a self-adjoint map."""
    m = _require_symmetric(map)
    n = m.shape[0]
    if n > _DIRECT_EIG_DIM:
        return float(sla.eigh(m, eigvals_only=True, subset_by_index=[0, 0])[0])
    return float(np.linalg.eigvalsh(m)[0])


def gram_norm(G: LinearMap, v) -> float:
    """``sqrt(<v, G v>)`` for a PSD map, clamping rounding-level negatives."""
    if not G.psd:
        raise PSDViolationError("gram_norm needs a map flagged PSD")
    data = v.data if isinstance(v, BlockVector) else np.asarray(v, dtype=np.float64)
    if isinstance(v, BlockVector) and v.dims != G.domain_dims:
        raise DimensionError(f"vector dims {v.dims} != operator dims {G.domain_dims}")
    ip = float(data @ (G.matrix @ data))
    if ip < 0.0:
        if ip >= -_GRAM_CLAMP * float(data @ data) * G.norm:
            return 0.0
        raise PSDViolationError(f"<v, Gv> = {ip:.3e} is negative beyond rounding")
    return float(np.sqrt(ip))


def quad_forms(matrix: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """``<v_i, G v_i>`` for every row ``v_i`` of ``rows``."""
    rows = np.atleast_2d(rows)
    return np.einsum("ij,ij->i", rows @ matrix, rows)
