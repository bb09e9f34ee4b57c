"""Convex "nonsmooth + quadratic" function oracles.

A :class:`ConvexFunctionOracle` represents

    f(y) = theta(y_1) + 1/2 <y, Q y> - <q, y> + r

where ``theta`` is zero, a weighted l1 norm, or the indicator of a box, and
acts on the first block ``y_1`` only.  The oracle supplies exact proximal
maps, closed-form subdifferential distances and the monotonicity operator
``Sigma = Q``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg as sla

from .blockspace import BlockVector, LinearMap
from .errors import ConfigurationError, DimensionError, DomainError

__all__ = [
    "NonsmoothPart",
    "ZeroPart",
    "L1Norm",
    "BoxIndicator",
    "ConvexFunctionOracle",
    "MonotonicityOperator",
    "Membership",
    "prox",
    "subgradient_witness",
    "monotonicity_operator",
    "nonsmooth_from_dict",
    "MEMBERSHIP_TOL",
]

MEMBERSHIP_TOL = 1e-9


class NonsmoothPart:
    """Separable closed convex function on the first block."""

    kind = "abstract"

    def value(self, w: np.ndarray) -> float:
        raise NotImplementedError

    def prox(self, v: np.ndarray, step) -> np.ndarray:
        """Coordinatewise ``argmin_w theta(w) + sum_i (w_i - v_i)^2 / (2 step_i)``."""
        raise NotImplementedError

    def subdiff_distance(self, w: np.ndarray, g: np.ndarray) -> np.ndarray:
        """Per-coordinate distance from ``g`` to ``d theta(w)``."""
        raise NotImplementedError

    def check_domain(self, w: np.ndarray) -> None:
        pass

    def to_dict(self) -> dict:
        return {"kind": self.kind}

    @property
    def is_zero(self) -> bool:
        return False


class ZeroPart(NonsmoothPart):
    kind = "zero"

    def value(self, w):
        return 0.0

    def prox(self, v, step):
        return np.array(v, dtype=np.float64)

    def subdiff_distance(self, w, g):
        return np.abs(g)

    @property
    def is_zero(self) -> bool:
        return True

    def __eq__(self, other):
        return isinstance(other, ZeroPart)


@dataclass(frozen=True, eq=False)
class L1Norm(NonsmoothPart):
    """``weight * ||w||_1`` with ``weight > 0``."""

    weight: float
    kind = "l1"

    def __post_init__(self):
        if not self.weight > 0:
            raise ValueError(f"l1 weight must be positive, got {self.weight}")

    def value(self, w):
        return self.weight * float(np.sum(np.abs(w)))

    def prox(self, v, step):
        v = np.asarray(v, dtype=np.float64)
        return np.sign(v) * np.maximum(np.abs(v) - self.weight * np.asarray(step), 0.0)

    def subdiff_distance(self, w, g):
        lam = self.weight
        at_zero = w == 0.0
        return np.where(at_zero, np.maximum(np.abs(g) - lam, 0.0), np.abs(g - lam * np.sign(w)))

    def to_dict(self):
        return {"kind": self.kind, "weight": float(self.weight)}

    def __eq__(self, other):
        return isinstance(other, L1Norm) and self.weight == other.weight


class BoxIndicator(NonsmoothPart):
    """Indicator of ``{w : lo <= w <= hi}`` with finite per-coordinate bounds."""

    kind = "box"

    def __init__(self, lo, hi):
        lo = np.atleast_1d(np.asarray(lo, dtype=np.float64)).copy()
        hi = np.atleast_1d(np.asarray(hi, dtype=np.float64)).copy()
        lo, hi = np.broadcast_arrays(lo, hi)
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("box bounds must be finite")
        if np.any(lo > hi):
            raise ValueError("box bounds need lo <= hi")
        self.lo = np.array(lo)
        self.hi = np.array(hi)
        self.lo.setflags(write=False)
        self.hi.setflags(write=False)

    def value(self, w):
        try:
            self.check_domain(w)
        except DomainError:
            return np.inf
        return 0.0

    def prox(self, v, step):
        return np.clip(np.asarray(v, dtype=np.float64), self.lo, self.hi)

    def check_domain(self, w):
        if np.any(w < self.lo) or np.any(w > self.hi):
            raise DomainError("point lies outside the box")

    def subdiff_distance(self, w, g):
        self.check_domain(w)
        at_lo = w == self.lo
        at_hi = w == self.hi
        # normal cone: (-inf, 0] at lo, [0, inf) at hi, R when lo == hi
        d = np.abs(g)
        d = np.where(at_lo, np.maximum(g, 0.0), d)
        d = np.where(at_hi, np.maximum(-g, 0.0), d)
        return np.where(at_lo & at_hi, 0.0, d)

    def to_dict(self):
        return {"kind": self.kind, "lo": self.lo.tolist(), "hi": self.hi.tolist()}

    def __eq__(self, other):
        return (
            isinstance(other, BoxIndicator)
            and np.array_equal(self.lo, other.lo)
            and np.array_equal(self.hi, other.hi)
        )


def nonsmooth_from_dict(d: dict) -> NonsmoothPart:
    kind = d.get("kind")
    if kind == "zero":
        return ZeroPart()
    if kind == "l1":
        return L1Norm(float(d["weight"]))
    if kind == "box":
        return BoxIndicator(d["lo"], d["hi"])
    raise ValueError(f"unknown nonsmooth kind {kind!r}")


@dataclass(frozen=True)
class Membership:
    verdict: bool
    distance: float

    def __bool__(self) -> bool:
        return self.verdict


@dataclass(frozen=True)
class MonotonicityOperator:
    """PSD ``Sigma`` with ``<xi' - xi, y' - y> >= ||y' - y||_Sigma^2``."""

    sigma: LinearMap


class ConvexFunctionOracle:
    """``theta(y_1) + 1/2 <y, Qy> - <q, y> + r`` on a block space.

    With a nonzero ``theta`` the quadratic must not couple the first block
    to itself or to the others except through a diagonal, so that every
    proximal map stays exact.
    """

    def __init__(self, nonsmooth: NonsmoothPart | None, Q: LinearMap, q=None, r: float = 0.0):
        if not Q.psd:
            raise ConfigurationError("quadratic part Q must be flagged PSD")
        self.nonsmooth = nonsmooth if nonsmooth is not None else ZeroPart()
        self.Q = Q
        self.dims = Q.domain_dims
        n = sum(self.dims)
        self.q = np.zeros(n) if q is None else np.asarray(q, dtype=np.float64).ravel().copy()
        if self.q.size != n:
            raise DimensionError(f"linear term has length {self.q.size}, expected {n}")
        self.q.setflags(write=False)
        self.r = float(r)
        self.n1 = self.dims[0]
        if isinstance(self.nonsmooth, BoxIndicator):
            if self.nonsmooth.lo.size == 1 and self.n1 > 1:
                self.nonsmooth = BoxIndicator(
                    np.full(self.n1, self.nonsmooth.lo[0]), np.full(self.n1, self.nonsmooth.hi[0])
                )
            if self.nonsmooth.lo.size != self.n1:
                raise DimensionError("box bounds must match the first block")
        if not self.nonsmooth.is_zero:
            qm = Q.matrix
            q11 = qm[: self.n1, : self.n1]
            off = q11 - np.diag(np.diag(q11))
            scale = 1e-12 * (1.0 + np.abs(qm).max())
            if np.abs(off).max(initial=0.0) > scale or np.abs(qm[: self.n1, self.n1 :]).max(initial=0.0) > scale:
                raise ConfigurationError(
                    "exact prox needs Q diagonal on the nonsmooth block and uncoupled from the rest"
                )

    @property
    def size(self) -> int:
        return sum(self.dims)

    def __call__(self, y) -> float:
        y = np.asarray(y, dtype=np.float64)
        val = self.nonsmooth.value(y[: self.n1])
        return float(val + 0.5 * y @ (self.Q.matrix @ y) - self.q @ y + self.r)

    def gradient_smooth(self, y: np.ndarray) -> np.ndarray:
        return self.Q.matrix @ y - self.q

    @lru_cache(maxsize=8)
    def _prox_factors(self, t: float):
        qm = self.Q.matrix
        n1 = self.n1 if not self.nonsmooth.is_zero else 0
        d1 = 1.0 / t + np.diag(qm)[:n1]
        rest = qm[n1:, n1:] + np.eye(self.size - n1) / t
        fac = sla.cho_factor(rest) if rest.size else None
        return n1, d1, fac

    def prox(self, v, t: float = 1.0):
        """``argmin_w f(w) + ||w - v||^2 / (2t)``."""
        if not t > 0:
            raise ValueError(f"prox step must be positive, got {t}")
        is_bv = isinstance(v, BlockVector)
        if is_bv and v.dims != self.dims:
            raise DimensionError(f"vector dims {v.dims} != function dims {self.dims}")
        data = v.data if is_bv else np.asarray(v, dtype=np.float64)
        if data.size != self.size:
            raise DimensionError(f"vector length {data.size} != {self.size}")
        n1, d1, fac = self._prox_factors(float(t))
        rhs = self.q + data / t
        out = np.empty(self.size)
        if n1:
            out[:n1] = self.nonsmooth.prox(rhs[:n1] / d1, 1.0 / d1)
        if fac is not None:
            out[n1:] = sla.cho_solve(fac, rhs[n1:])
        return BlockVector(out, self.dims) if is_bv else out

    def subgradient_witness(self, y, candidate) -> Membership:
        """Distance from ``candidate`` to the subdifferential at ``y``."""
        y = y.data if isinstance(y, BlockVector) else np.asarray(y, dtype=np.float64)
        g = candidate.data if isinstance(candidate, BlockVector) else np.asarray(candidate, dtype=np.float64)
        if y.size != self.size or g.size != self.size:
            raise DimensionError("point and candidate must match the function's dims")
        self.nonsmooth.check_domain(y[: self.n1])
        resid = g - self.gradient_smooth(y)
        d1 = self.nonsmooth.subdiff_distance(y[: self.n1], resid[: self.n1])
        dist = float(np.sqrt(np.sum(d1**2) + np.sum(resid[self.n1 :] ** 2)))
        return Membership(dist <= MEMBERSHIP_TOL, dist)

    def monotonicity_operator(self) -> MonotonicityOperator:
        return MonotonicityOperator(self.Q)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ConvexFunctionOracle):
            return NotImplemented
        return (
            self.nonsmooth == other.nonsmooth
            and self.Q == other.Q
            and np.array_equal(self.q, other.q)
            and self.r == other.r
        )

    __hash__ = object.__hash__

    def __repr__(self) -> str:
        return f"ConvexFunctionOracle({self.nonsmooth.kind} + quadratic, dims={self.dims})"


def prox(fn: ConvexFunctionOracle, v, t: float = 1.0):
    return fn.prox(v, t)


def subgradient_witness(fn: ConvexFunctionOracle, y, candidate) -> Membership:
    return fn.subgradient_witness(y, candidate)


def monotonicity_operator(fn: ConvexFunctionOracle) -> MonotonicityOperator:
    return fn.monotonicity_operator()
