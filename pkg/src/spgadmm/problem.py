"""Two-block composite problems and their KKT residual.

    min  f(y) + g(z)   s.t.  A* y + B* z = c

``A : X -> Y`` and ``B : X -> Z`` are stored as dense matrices of shape
``(dim Y, dim X)`` and ``(dim Z, dim X)``, so ``A* y`` is ``A.T @ y``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .blockspace import BlockVector, LinearMap
from .errors import DimensionError, ParseError, ValidationError
from .functions import (
    BoxIndicator,
    ConvexFunctionOracle,
    L1Norm,
    ZeroPart,
    nonsmooth_from_dict,
)

__all__ = [
    "ProblemInstance",
    "KnownSolution",
    "IterateTriple",
    "InstanceDims",
    "FAMILIES",
    "kkt_residual",
    "kkt_residual_norm",
    "generate_with_known_kkt",
    "save_instance",
    "load_instance",
    "dumps_instance",
    "loads_instance",
]

FAMILIES = ("lasso", "box-qp", "random-plq")
FORMAT_VERSION = 1


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    f: ConvexFunctionOracle
    g: ConvexFunctionOracle
    A: LinearMap
    B: LinearMap
    c: np.ndarray
    x_dims: tuple[int, ...] = field(default=None)

    def __post_init__(self):
        c = np.asarray(self.c, dtype=np.float64).ravel().copy()
        c.setflags(write=False)
        object.__setattr__(self, "c", c)
        x_dims = tuple(self.x_dims) if self.x_dims is not None else self.A.domain_dims
        object.__setattr__(self, "x_dims", x_dims)
        if self.A.codomain_dims != self.f.dims:
            raise ValidationError(f"A: codomain dims {self.A.codomain_dims} != y dims {self.f.dims}")
        if self.B.codomain_dims != self.g.dims:
            raise ValidationError(f"B: codomain dims {self.B.codomain_dims} != z dims {self.g.dims}")
        if sum(self.A.domain_dims) != sum(x_dims) or sum(self.B.domain_dims) != sum(x_dims):
            raise ValidationError("A, B: domain must be X")
        if c.size != sum(x_dims):
            raise ValidationError(f"c: length {c.size} != dim X = {sum(x_dims)}")

    @property
    def y_dims(self) -> tuple[int, ...]:
        return self.f.dims

    @property
    def z_dims(self) -> tuple[int, ...]:
        return self.g.dims

    @property
    def u_dims(self) -> tuple[int, ...]:
        return self.y_dims + self.z_dims + self.x_dims

    @property
    def ny(self) -> int:
        return sum(self.y_dims)

    @property
    def nz(self) -> int:
        return sum(self.z_dims)

    @property
    def nx(self) -> int:
        return sum(self.x_dims)

    def constraint(self, y, z) -> np.ndarray:
        """``A* y + B* z - c``."""
        return self.A.matrix.T @ y + self.B.matrix.T @ z - self.c

    def __eq__(self, other) -> bool:
        if not isinstance(other, ProblemInstance):
            return NotImplemented
        return (
            self.f == other.f
            and self.g == other.g
            and self.A == other.A
            and self.B == other.B
            and np.array_equal(self.c, other.c)
            and self.x_dims == other.x_dims
        )


def _vec(v) -> np.ndarray:
    if isinstance(v, BlockVector):
        return v.data
    return np.asarray(v, dtype=np.float64).ravel()


@dataclass(frozen=True, eq=False)
class IterateTriple:
    """``u = (y, z, x)`` as flat arrays."""

    y: np.ndarray
    z: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        for name in ("y", "z", "x"):
            object.__setattr__(self, name, _vec(getattr(self, name)).copy())

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.y, self.z, self.x])

    @classmethod
    def from_stacked(cls, u, inst: ProblemInstance) -> "IterateTriple":
        u = _vec(u)
        ny, nz = inst.ny, inst.nz
        return cls(u[:ny], u[ny : ny + nz], u[ny + nz :])

    @classmethod
    def zeros(cls, inst: ProblemInstance) -> "IterateTriple":
        return cls(np.zeros(inst.ny), np.zeros(inst.nz), np.zeros(inst.nx))

    def check(self, inst: ProblemInstance) -> None:
        if (self.y.size, self.z.size, self.x.size) != (inst.ny, inst.nz, inst.nx):
            raise DimensionError(
                f"iterate sizes {(self.y.size, self.z.size, self.x.size)} do not match "
                f"instance {(inst.ny, inst.nz, inst.nx)}"
            )

    def __eq__(self, other) -> bool:
        if not isinstance(other, IterateTriple):
            return NotImplemented
        return all(np.array_equal(getattr(self, n), getattr(other, n)) for n in ("y", "z", "x"))


class KnownSolution(IterateTriple):
    """A KKT point ``(y_bar, z_bar, x_bar)``."""

    def memberships(self, inst: ProblemInstance) -> tuple[float, float, float]:
        """Distances for ``A x in df(y)``, ``B x in dg(z)`` and the feasibility norm."""
        d_f = inst.f.subgradient_witness(self.y, inst.A.matrix @ self.x).distance
        d_g = inst.g.subgradient_witness(self.z, inst.B.matrix @ self.x).distance
        feas = float(np.linalg.norm(inst.constraint(self.y, self.z)))
        return d_f, d_g, feas


def kkt_residual(inst: ProblemInstance, u: IterateTriple) -> BlockVector:
    """``R(u) = (y - Prox_f(y + Ax), z - Prox_g(z + Bx), A*y + B*z - c)``."""
    u.check(inst)
    r_y = u.y - inst.f.prox(u.y + inst.A.matrix @ u.x, 1.0)
    r_z = u.z - inst.g.prox(u.z + inst.B.matrix @ u.x, 1.0)
    r_x = inst.constraint(u.y, u.z)
    return BlockVector(np.concatenate([r_y, r_z, r_x]), inst.u_dims)


def kkt_residual_norm(inst: ProblemInstance, y, z, x) -> tuple[float, float]:
    """``(||R(u)||, ||A*y + B*z - c||)`` without building a BlockVector."""
    r_y = y - inst.f.prox(y + inst.A.matrix @ x, 1.0)
    r_z = z - inst.g.prox(z + inst.B.matrix @ x, 1.0)
    r_x = inst.constraint(y, z)
    prim = float(r_x @ r_x)
    return math.sqrt(float(r_y @ r_y) + float(r_z @ r_z) + prim), math.sqrt(prim)


# -- generators ---------------------------------------------------------------


@dataclass(frozen=True)
class InstanceDims:
    """Block dimensions of Y and Z and of the multiplier space X."""

    y: tuple[int, ...] = (50, 150)
    z: tuple[int, ...] = (50, 100)
    x: int = 100

    def __post_init__(self):
        object.__setattr__(self, "y", tuple(int(d) for d in self.y))
        object.__setattr__(self, "z", tuple(int(d) for d in self.z))
        object.__setattr__(self, "x", int(self.x))
        if not self.y or not self.z or min(self.y + self.z) <= 0 or self.x <= 0:
            raise ValueError("all block dimensions must be positive")


def _psd_block(rng, n: int, floor: float) -> np.ndarray:
    w = rng.standard_normal((n, n))
    return w @ w.T / n + floor * np.eye(n)


def _orthonormal(rng, n: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def _block_diag(*blocks) -> np.ndarray:
    n = sum(b.shape[0] for b in blocks)
    out = np.zeros((n, n))
    i = 0
    for b in blocks:
        k = b.shape[0]
        out[i : i + k, i : i + k] = b
        i += k
    return out


def _side(rng, dims, nx, basis, kind, decoupled, lam):
    """Draw (coupling matrix, Q, nonsmooth part, point, subgradient) for one side.

    The first block of the coupling matrix has orthogonal rows and the first
    block of Q is diagonal, so every exact subproblem solve reduces to a
    coordinatewise prox on that block.
    """
    n1, n = dims[0], sum(dims)
    nr = n - n1
    if kind != "zero" and n1 > nx:
        raise ValueError(f"nonsmooth block of size {n1} needs dim X >= {n1} (got {nx})")
    K = np.empty((n, nx))
    if kind == "zero":
        K[:] = rng.standard_normal((n, nx)) / math.sqrt(nx)
    else:
        K[:n1] = rng.uniform(0.5, 1.5, n1)[:, None] * basis[:, :n1].T
        if decoupled:
            comp = basis[:, n1:]
            K[n1:] = rng.standard_normal((nr, comp.shape[1])) / math.sqrt(max(comp.shape[1], 1)) @ comp.T
        else:
            K[n1:] = rng.standard_normal((nr, nx)) / math.sqrt(nx)
    if kind == "zero":
        Q = _psd_block(rng, n, 0.5)
    else:
        Q = _block_diag(np.diag(rng.uniform(0.1, 0.5, n1)), _psd_block(rng, nr, 0.5) if nr else np.zeros((0, 0)))

    point = rng.standard_normal(n)
    sub = np.zeros(n)
    if kind == "l1":
        head = np.sign(rng.standard_normal(n1)) * rng.uniform(0.5, 1.5, n1)
        zero = rng.random(n1) < 0.4
        head[zero] = 0.0
        point[:n1] = head
        sub[:n1] = np.where(zero, rng.uniform(-0.9 * lam, 0.9 * lam, n1), lam * np.sign(head))
        part = L1Norm(lam)
    elif kind == "box":
        lo = -rng.uniform(0.5, 2.0, n1)
        hi = rng.uniform(0.5, 2.0, n1)
        state = rng.integers(0, 3, n1)
        inner = lo / 2 + rng.random(n1) * (hi - lo) / 2
        point[:n1] = np.where(state == 0, lo, np.where(state == 1, hi, inner))
        mag = rng.uniform(0.2, 1.0, n1)
        sub[:n1] = np.where(state == 0, -mag, np.where(state == 1, mag, 0.0))
        part = BoxIndicator(lo, hi)
    else:
        part = ZeroPart()
    return K, Q, part, point, sub


def generate_with_known_kkt(
    seed: int, dims: InstanceDims | None = None, family: str = "lasso"
) -> tuple[ProblemInstance, KnownSolution]:
    """Random instance of ``family`` together with an exact KKT point.

    The point and a valid subgradient are drawn first; the linear terms
    ``q_f``, ``q_g`` and the right-hand side ``c`` are then chosen so that
    the KKT system holds by construction.
    """
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}; choose from {FAMILIES}")
    dims = dims if dims is not None else InstanceDims()
    rng = np.random.default_rng(seed)
    nx = dims.x
    basis_y = _orthonormal(rng, nx)
    basis_z = _orthonormal(rng, nx)

    if family == "lasso":
        f_kind, g_kind, f_dec, g_dec = "l1", "zero", True, True
    elif family == "box-qp":
        f_kind, g_kind, f_dec, g_dec = "box", "zero", False, True
    else:
        f_kind = ("l1", "box")[rng.integers(2)]
        g_kind = ("zero", "l1", "box")[rng.integers(3)] if dims.z[0] <= nx else "zero"
        f_dec, g_dec = bool(rng.integers(2)), bool(rng.integers(2))
    lam_f = float(rng.uniform(0.3, 1.0))
    lam_g = float(rng.uniform(0.3, 1.0))

    A, Qf, f1, y_bar, s_f = _side(rng, dims.y, nx, basis_y, f_kind, f_dec, lam_f)
    B, Qg, g1, z_bar, s_g = _side(rng, dims.z, nx, basis_z, g_kind, g_dec, lam_g)
    x_bar = rng.standard_normal(nx)

    q_f = Qf @ y_bar + s_f - A @ x_bar
    q_g = Qg @ z_bar + s_g - B @ x_bar
    A_map = LinearMap(A, (nx,), dims.y)
    B_map = LinearMap(B, (nx,), dims.z)
    c = A_map.matrix.T @ y_bar + B_map.matrix.T @ z_bar

    f = ConvexFunctionOracle(f1, LinearMap(Qf, dims.y, psd=True), q_f, 0.0)
    g = ConvexFunctionOracle(g1, LinearMap(Qg, dims.z, psd=True), q_g, 0.0)
    inst = ProblemInstance(f, g, A_map, B_map, c, (nx,))
    return inst, KnownSolution(y_bar, z_bar, x_bar)


# -- serialization ------------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if not math.isfinite(x):
        raise ValueError("non-finite floats cannot be serialized")
    return format(x, ".17g")


def _dump(obj, indent: int = 0) -> str:
    pad = "  " * (indent + 1)
    if isinstance(obj, dict):
        items = [f'{pad}{json.dumps(k)}: {_dump(v, indent + 1)}' for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + "  " * indent + "}"
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, (list, tuple)):
        if obj and isinstance(obj[0], (list, tuple, np.ndarray)):
            rows = [pad + _dump(r, indent + 1) for r in obj]
            return "[\n" + ",\n".join(rows) + "\n" + "  " * indent + "]"
        return "[" + ", ".join(_fmt(v) for v in obj) + "]"
    if isinstance(obj, str):
        return json.dumps(obj)
    if obj is None:
        return "null"
    return _fmt(obj)


def _fn_dict(fn: ConvexFunctionOracle) -> dict:
    return {"nonsmooth": fn.nonsmooth.to_dict(), "Q": fn.Q.matrix, "q": fn.q, "r": fn.r}


def dumps_instance(inst: ProblemInstance, solution: KnownSolution | None = None) -> str:
    doc = {
        "version": FORMAT_VERSION,
        "x_dims": list(inst.x_dims),
        "y_dims": list(inst.y_dims),
        "z_dims": list(inst.z_dims),
        "A": inst.A.matrix,
        "B": inst.B.matrix,
        "c": inst.c,
        "f": _fn_dict(inst.f),
        "g": _fn_dict(inst.g),
    }
    if solution is not None:
        doc["known_solution"] = {"y": solution.y, "z": solution.z, "x": solution.x}
    return _dump(doc) + "\n"


def save_instance(path, inst: ProblemInstance, solution: KnownSolution | None = None) -> None:
    Path(path).write_text(dumps_instance(inst, solution), encoding="utf-8")


def _field(doc: dict, name: str, ctx: str = ""):
    if not isinstance(doc, dict) or name not in doc:
        raise ParseError(f"missing field {ctx}{name!r}")
    return doc[name]


def _array(value, name: str, ndim: int) -> np.ndarray:
    try:
        arr = np.array(value, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"field {name!r}: {exc}") from None
    if arr.ndim != ndim:
        if ndim == 2 and arr.size == 0:
            return arr.reshape(0, 0)
        raise ValidationError(f"field {name!r}: expected {ndim}-d array, got shape {arr.shape}")
    return arr


def _dims(value, name: str) -> tuple[int, ...]:
    if not isinstance(value, list) or not value or not all(isinstance(d, int) and d > 0 for d in value):
        raise ValidationError(f"field {name!r}: expected a non-empty list of positive integers")
    return tuple(value)


def _load_fn(doc: dict, name: str, dims: tuple[int, ...]) -> ConvexFunctionOracle:
    d = _field(doc, name)
    try:
        part = nonsmooth_from_dict(_field(d, "nonsmooth", f"{name}."))
    except (KeyError, ValueError) as exc:
        raise ValidationError(f"field '{name}.nonsmooth': {exc}") from None
    Q = _array(_field(d, "Q", f"{name}."), f"{name}.Q", 2)
    q = _array(_field(d, "q", f"{name}."), f"{name}.q", 1)
    n = sum(dims)
    if Q.shape != (n, n):
        raise ValidationError(f"field '{name}.Q': shape {Q.shape} != {(n, n)}")
    if q.size != n:
        raise ValidationError(f"field '{name}.q': length {q.size} != {n}")
    try:
        return ConvexFunctionOracle(part, LinearMap(Q, dims, psd=True), q, float(_field(d, "r", f"{name}.")))
    except (ValueError, DimensionError) as exc:
        raise ValidationError(f"field {name!r}: {exc}") from None


def loads_instance(text: str) -> tuple[ProblemInstance, KnownSolution | None]:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ParseError("top level must be a JSON object")
    version = _field(doc, "version")
    if version != FORMAT_VERSION:
        raise ValidationError(f"field 'version': unsupported value {version!r}")
    x_dims = _dims(_field(doc, "x_dims"), "x_dims")
    y_dims = _dims(_field(doc, "y_dims"), "y_dims")
    z_dims = _dims(_field(doc, "z_dims"), "z_dims")
    nx, ny, nz = sum(x_dims), sum(y_dims), sum(z_dims)
    A = _array(_field(doc, "A"), "A", 2)
    B = _array(_field(doc, "B"), "B", 2)
    c = _array(_field(doc, "c"), "c", 1)
    if A.shape != (ny, nx):
        raise ValidationError(f"field 'A': shape {A.shape} != {(ny, nx)}")
    if B.shape != (nz, nx):
        raise ValidationError(f"field 'B': shape {B.shape} != {(nz, nx)}")
    if c.size != nx:
        raise ValidationError(f"field 'c': length {c.size} != dim X = {nx}")
    f = _load_fn(doc, "f", y_dims)
    g = _load_fn(doc, "g", z_dims)
    inst = ProblemInstance(f, g, LinearMap(A, x_dims, y_dims), LinearMap(B, x_dims, z_dims), c, x_dims)
    sol = None
    if doc.get("known_solution") is not None:
        ks = doc["known_solution"]
        parts = {k: _array(_field(ks, k, "known_solution."), f"known_solution.{k}", 1) for k in ("y", "z", "x")}
        for k, n in (("y", ny), ("z", nz), ("x", nx)):
            if parts[k].size != n:
                raise ValidationError(f"field 'known_solution.{k}': length {parts[k].size} != {n}")
        sol = KnownSolution(parts["y"], parts["z"], parts["x"])
    return inst, sol


def load_instance(path) -> tuple[ProblemInstance, KnownSolution | None]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path}: not UTF-8 ({exc})") from None
    return loads_instance(text)
