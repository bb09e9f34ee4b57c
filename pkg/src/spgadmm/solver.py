"""Semi-proximal generalized ADMM iteration.

Each step performs

    y+ = argmin f(y) - <Ax, y> + sigma/2 ||A*y + B*z - c||^2 + 1/2 ||y - y_k||_S^2
    z+ = argmin g(z) - <Bx, z> + sigma/2 ||rho r~ + B*(z - z_k)||^2 + 1/2 ||z - z_k||_T^2
    x+ = x - sigma (rho r~ + B*(z+ - z_k))

with ``r~ = A*y+ + B*z_k - c``.  Both subproblems are strongly convex
quadratics plus a separable nonsmooth term on the first block, and are
solved exactly.
"""

from __future__ import annotations

import logging
import math
import time
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from .blockspace import LinearMap, spectral_max, spectral_min
from .errors import ConfigurationError, DecompositionError, DimensionError, DomainError
from .functions import ConvexFunctionOracle
from .problem import IterateTriple, ProblemInstance, kkt_residual_norm

__all__ = [
    "STRATEGIES",
    "SolverConfig",
    "ProximalTermPair",
    "SolveTrace",
    "build_proximal_terms",
    "sgs_operator",
    "y_update",
    "z_update",
    "x_update",
    "solve",
    "is_exactly_solvable",
    "MAJORIZATION_FACTOR",
]

log = logging.getLogger(__name__)

STRATEGIES = ("zero", "majorized", "sgs", "explicit")
MAJORIZATION_FACTOR = 1.01
PD_TOL = 1e-10
# relative size of off-diagonal couplings that still count as zero
COUPLING_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class SolverConfig:
    sigma: float = 1.0
    rho: float = 1.6
    tol_kkt: float = 1e-8
    max_iters: int = 10000
    prox_strategy: str = "majorized"
    S: LinearMap | None = None
    T: LinearMap | None = None

    def __post_init__(self):
        if not (isinstance(self.sigma, (int, float)) and math.isfinite(self.sigma) and self.sigma > 0):
            raise DomainError(f"sigma must be a positive real, got {self.sigma}")
        if not (0.0 < self.rho < 2.0):
            raise DomainError(f"rho must lie in the open interval (0,2), got {self.rho}")
        if not self.tol_kkt > 0:
            raise DomainError(f"tol_kkt must be positive, got {self.tol_kkt}")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise DomainError(f"max_iters must be a positive integer, got {self.max_iters}")
        if self.prox_strategy not in STRATEGIES:
            raise ConfigurationError(f"unknown prox strategy {self.prox_strategy!r}; choose from {STRATEGIES}")
        if self.prox_strategy == "explicit" and (self.S is None or self.T is None):
            raise ConfigurationError("explicit strategy needs both S and T")

    def replace(self, **changes) -> "SolverConfig":
        kw = {k: getattr(self, k) for k in self.__dataclass_fields__}
        kw.update(changes)
        return SolverConfig(**kw)

    def to_dict(self) -> dict:
        return {
            "sigma": self.sigma,
            "rho": self.rho,
            "tol_kkt": self.tol_kkt,
            "max_iters": int(self.max_iters),
            "prox_strategy": self.prox_strategy,
        }


@dataclass(frozen=True, eq=False)
class ProximalTermPair:
    """Semi-proximal operators ``S`` on Y and ``T`` on Z.

    ``eta_y`` / ``eta_z`` are set by the majorized strategy, where
    ``S + sigma AA* + Q_f = eta_y I``.
    """

    S: LinearMap
    T: LinearMap
    strategy: str = "explicit"
    eta_y: float | None = None
    eta_z: float | None = None


@dataclass(eq=False)
class SolveTrace:
    """Iterates ``u^0 .. u^K`` with their residuals.

    Row ``k`` of ``ys``, ``zs``, ``xs`` holds ``u^k``.
    """

    ys: np.ndarray
    zs: np.ndarray
    xs: np.ndarray
    kkt: np.ndarray
    primal: np.ndarray
    times: np.ndarray
    status: str
    config: SolverConfig
    terms: ProximalTermPair
    message: str = ""

    @property
    def iterations(self) -> int:
        """Number of completed steps ``K``."""
        return len(self.kkt) - 1

    @property
    def ks(self) -> np.ndarray:
        return np.arange(len(self.kkt))

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    def u(self, k: int) -> IterateTriple:
        return IterateTriple(self.ys[k], self.zs[k], self.xs[k])

    @property
    def final(self) -> IterateTriple:
        return self.u(-1)

    def head(self, n_steps: int) -> "SolveTrace":
        """The first ``n_steps`` steps (``n_steps + 1`` iterates)."""
        n = min(n_steps + 1, len(self.kkt))
        status = self.status if n == len(self.kkt) else "truncated"
        return SolveTrace(
            self.ys[:n], self.zs[:n], self.xs[:n], self.kkt[:n], self.primal[:n],
            self.times[:n], status, self.config, self.terms, self.message,
        )


# -- proximal terms -----------------------------------------------------------


def _block_slices(partition: Sequence[int]) -> list[slice]:
    out, i = [], 0
    for d in partition:
        out.append(slice(i, i + d))
        i += d
    return out


def sgs_operator(Q: LinearMap, partition: Sequence[int] | None = None) -> LinearMap:
    """``U D^{-1} U*`` for ``Q = U + D + U*`` split along ``partition``.

    ``D`` is the block diagonal and ``U`` the strictly block upper part.
    """
    partition = tuple(partition) if partition is not None else Q.domain_dims
    q = Q.matrix
    if sum(partition) != q.shape[0]:
        raise DimensionError(f"partition {partition} does not cover dimension {q.shape[0]}")
    sl = _block_slices(partition)
    U = np.zeros_like(q)
    for i, si in enumerate(sl):
        for sj in sl[i + 1 :]:
            U[si, sj] = q[si, sj]
    # D^{-1} U* blockwise
    DinvUt = np.empty_like(q)
    for s in sl:
        try:
            fac = sla.cho_factor(q[s, s])
        except np.linalg.LinAlgError:
            raise DecompositionError("block-diagonal part of Q is not positive definite") from None
        DinvUt[s] = sla.cho_solve(fac, U.T[s])
    return LinearMap(U @ DinvUt, partition, psd=True)


def _side_operator(sigma: float, K: LinearMap, fn: ConvexFunctionOracle) -> np.ndarray:
    """``sigma K K* + Q`` as a dense matrix."""
    k = K.matrix
    return sigma * (k @ k.T) + fn.Q.matrix


def _check_pd(name: str, mat: np.ndarray) -> None:
    lam = float(np.linalg.eigvalsh(mat)[0]) if mat.size else 1.0
    scale = max(1.0, float(np.abs(mat).max(initial=0.0)))
    if lam <= PD_TOL * scale:
        raise ConfigurationError(f"{name} is not positive definite (min eigenvalue {lam:.3e})")


def build_proximal_terms(inst: ProblemInstance, config: SolverConfig) -> ProximalTermPair:
    sigma = config.sigma
    Py = _side_operator(sigma, inst.A, inst.f)
    Pz = _side_operator(sigma, inst.B, inst.g)
    strategy = config.prox_strategy
    eta_y = eta_z = None
    if strategy == "zero":
        S = LinearMap.zeros(inst.y_dims)
        T = LinearMap.zeros(inst.z_dims)
    elif strategy == "majorized":
        eta_y = MAJORIZATION_FACTOR * spectral_max(LinearMap(Py, inst.y_dims, self_adjoint=True))
        eta_z = MAJORIZATION_FACTOR * spectral_max(LinearMap(Pz, inst.z_dims, self_adjoint=True))
        S = LinearMap(eta_y * np.eye(inst.ny) - Py, inst.y_dims, psd=True)
        T = LinearMap(eta_z * np.eye(inst.nz) - Pz, inst.z_dims, psd=True)
    elif strategy == "sgs":
        S = sgs_operator(LinearMap(Py, inst.y_dims, self_adjoint=True), inst.y_dims)
        T = sgs_operator(LinearMap(Pz, inst.z_dims, self_adjoint=True), inst.z_dims)
    else:
        S, T = config.S, config.T
        if S.domain_dims != inst.y_dims or S.codomain_dims != inst.y_dims:
            raise DimensionError(f"S dims {S.domain_dims} do not match Y dims {inst.y_dims}")
        if T.domain_dims != inst.z_dims or T.codomain_dims != inst.z_dims:
            raise DimensionError(f"T dims {T.domain_dims} do not match Z dims {inst.z_dims}")
        if not (S.psd and T.psd):
            raise ConfigurationError("explicit S and T must be flagged PSD")
    _check_pd("Sigma_f + S + sigma AA*", Py + S.matrix)
    _check_pd("Sigma_g + T + sigma BB*", Pz + T.matrix)
    return ProximalTermPair(S, T, strategy, eta_y, eta_z)


# -- exact subproblem solvers ---------------------------------------------------


class _BlockSolver:
    """Exact minimizer of ``theta(w_1) + 1/2 <w, K w> - <b, w>``."""

    def solve(self, b: np.ndarray, w_prev: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class _ScaledIdentitySolver(_BlockSolver):
    def __init__(self, fn: ConvexFunctionOracle, eta: float):
        self.fn, self.eta = fn, eta
        self.n1 = 0 if fn.nonsmooth.is_zero else fn.n1

    def solve(self, b, w_prev):
        w = b / self.eta
        if self.n1:
            w[: self.n1] = self.fn.nonsmooth.prox(w[: self.n1], 1.0 / self.eta)
        return w


class _SchurSolver(_BlockSolver):
    """Eliminates the smooth blocks; needs a diagonal Schur complement on block 1."""

    def __init__(self, fn: ConvexFunctionOracle, K: np.ndarray):
        self.fn = fn
        n1 = 0 if fn.nonsmooth.is_zero else fn.n1
        self.n1 = n1
        rest = K[n1:, n1:]
        try:
            self.fac = sla.cho_factor(rest) if rest.size else None
        except np.linalg.LinAlgError:
            raise ConfigurationError("subproblem Hessian is not positive definite") from None
        if n1:
            self.K1r = K[:n1, n1:]
            self.G = sla.cho_solve(self.fac, K[n1:, :n1]) if self.fac is not None else np.zeros((0, n1))
            schur = K[:n1, :n1] - self.K1r @ self.G
            off = schur - np.diag(np.diag(schur))
            scale = COUPLING_TOL * (1.0 + np.abs(K).max())
            if np.abs(off).max(initial=0.0) > scale:
                raise ConfigurationError(
                    "subproblem is not exactly solvable: the nonsmooth block is coupled; "
                    "use the majorized or sgs strategy"
                )
            self.d = np.diag(schur).copy()
            if np.any(self.d <= 0):
                raise ConfigurationError("subproblem Hessian is not positive definite on the nonsmooth block")

    def solve(self, b, w_prev):
        n1 = self.n1
        t = sla.cho_solve(self.fac, b[n1:]) if self.fac is not None else b[n1:]
        if not n1:
            return t
        bt = b[:n1] - self.K1r @ t
        w1 = self.fn.nonsmooth.prox(bt / self.d, 1.0 / self.d)
        return np.concatenate([w1, t - self.G @ w1])


class _SweepSolver(_BlockSolver):
    """Symmetric Gauss-Seidel sweep m -> ... -> 2 -> 1 -> 2 -> ... -> m.

    Minimizes the objective without the semi-proximal term block by block,
    starting from the previous iterate.
    """

    def __init__(self, fn: ConvexFunctionOracle, P: np.ndarray, partition: Sequence[int]):
        self.fn = fn
        self.P = P
        self.sl = _block_slices(partition)
        self.facs = []
        self.smooth1 = fn.nonsmooth.is_zero
        for i, s in enumerate(self.sl):
            blk = P[s, s]
            if i == 0 and not self.smooth1:
                off = blk - np.diag(np.diag(blk))
                if np.abs(off).max(initial=0.0) > COUPLING_TOL * (1.0 + np.abs(P).max()):
                    raise ConfigurationError(
                        "sgs needs a diagonal first block when the nonsmooth part is nonzero"
                    )
                self.d1 = np.diag(blk).copy()
                if np.any(self.d1 <= 0):
                    raise ConfigurationError("first diagonal block is not positive definite")
                self.facs.append(None)
                continue
            try:
                self.facs.append(sla.cho_factor(blk))
            except np.linalg.LinAlgError:
                raise DecompositionError("block-diagonal part is not positive definite") from None

    def _block(self, i, w, b):
        s = self.sl[i]
        rhs = b[s] - self.P[s] @ w + self.P[s, s] @ w[s]
        if i == 0 and not self.smooth1:
            w[s] = self.fn.nonsmooth.prox(rhs / self.d1, 1.0 / self.d1)
        else:
            w[s] = sla.cho_solve(self.facs[i], rhs)

    def solve(self, b, w_prev):
        w = np.array(w_prev, dtype=np.float64)
        m = len(self.sl)
        for i in range(m - 1, 0, -1):
            self._block(i, w, b)
        for i in range(m):
            self._block(i, w, b)
        return w


class _Stepper:
    """Factorizations shared by every step of one (instance, config, terms)."""

    def __init__(self, inst: ProblemInstance, config: SolverConfig, terms: ProximalTermPair):
        self.inst, self.config, self.terms = inst, config, terms
        sigma = config.sigma
        self.A = inst.A.matrix
        self.B = inst.B.matrix
        self.Py = _side_operator(sigma, inst.A, inst.f)
        self.Pz = _side_operator(sigma, inst.B, inst.g)
        self.S = terms.S.matrix
        self.T = terms.T.matrix
        self.S_zero = not np.any(self.S)
        self.T_zero = not np.any(self.T)
        self.y_solver = self._make(inst.f, self.Py, self.S, terms.eta_y, inst.y_dims, terms.strategy)
        self.z_solver = self._make(inst.g, self.Pz, self.T, terms.eta_z, inst.z_dims, terms.strategy)

    @staticmethod
    def _make(fn, P, S, eta, dims, strategy):
        if strategy == "majorized" and eta is not None:
            return _ScaledIdentitySolver(fn, eta)
        if strategy == "sgs":
            return _SweepSolver(fn, P, dims)
        return _SchurSolver(fn, P + S)

    def y_step(self, y, z, x):
        inst, sigma = self.inst, self.config.sigma
        b = inst.f.q + self.A @ x - sigma * (self.A @ (self.B.T @ z - inst.c))
        if self.terms.strategy != "sgs" and not self.S_zero:
            b = b + self.S @ y
        return self.y_solver.solve(b, y)

    def z_step(self, y_new, z, x):
        inst, cfg = self.inst, self.config
        Btz = self.B.T @ z
        r_tilde = self.A.T @ y_new + Btz - inst.c
        b = inst.g.q + self.B @ x - cfg.sigma * (self.B @ (cfg.rho * r_tilde - Btz))
        if self.terms.strategy != "sgs" and not self.T_zero:
            b = b + self.T @ z
        return self.z_solver.solve(b, z)

    def x_step(self, y_new, z, z_new, x):
        return x_update(self.config, y_new, z, z_new, x, self.inst)


_STEPPERS: "OrderedDict[tuple[int, int, int], tuple]" = OrderedDict()
_STEPPER_CACHE_SIZE = 8


def _stepper(inst, config, terms) -> _Stepper:
    key = (id(inst), id(config), id(terms))
    hit = _STEPPERS.get(key)
    # the stored objects keep their ids alive, so a hit is never stale
    if hit is not None and hit[0] is inst and hit[1] is config and hit[2] is terms:
        _STEPPERS.move_to_end(key)
        return hit[3]
    st = _Stepper(inst, config, terms)
    _STEPPERS[key] = (inst, config, terms, st)
    while len(_STEPPERS) > _STEPPER_CACHE_SIZE:
        _STEPPERS.popitem(last=False)
    return st


def is_exactly_solvable(inst: ProblemInstance, config: SolverConfig) -> bool:
    """Whether both subproblems admit an exact solve under ``config``."""
    try:
        _stepper(inst, config, build_proximal_terms(inst, config))
    except (ConfigurationError, DecompositionError):
        return False
    return True


def _arr(v) -> np.ndarray:
    return np.asarray(getattr(v, "data", v), dtype=np.float64)


def y_update(inst, config, terms, y, z, x) -> np.ndarray:
    """Exact minimizer of the y-subproblem."""
    return _stepper(inst, config, terms).y_step(_arr(y), _arr(z), _arr(x))


def z_update(inst, config, terms, y_new, z, x) -> np.ndarray:
    """Exact minimizer of the relaxed z-subproblem."""
    return _stepper(inst, config, terms).z_step(_arr(y_new), _arr(z), _arr(x))


def x_update(config, y_new, z, z_new, x, inst) -> np.ndarray:
    """``x - sigma (rho (A*y+ + B*z - c) + B*(z+ - z))``."""
    Bt = inst.B.matrix.T
    y_new, z, z_new, x = _arr(y_new), _arr(z), _arr(z_new), _arr(x)
    r_tilde = inst.A.matrix.T @ y_new + Bt @ z - inst.c
    return x - config.sigma * (config.rho * r_tilde + Bt @ (z_new - z))


def solve(
    inst: ProblemInstance,
    config: SolverConfig | None = None,
    start: IterateTriple | None = None,
    terms: ProximalTermPair | None = None,
) -> SolveTrace:
    """Run the iteration from ``start`` (zeros by default) and record every iterate."""
    config = config if config is not None else SolverConfig()
    terms = terms if terms is not None else build_proximal_terms(inst, config)
    stepper = _stepper(inst, config, terms)
    u0 = start if start is not None else IterateTriple.zeros(inst)
    u0.check(inst)
    n = int(config.max_iters) + 1
    ys = np.empty((n, inst.ny))
    zs = np.empty((n, inst.nz))
    xs = np.empty((n, inst.nx))
    kkt = np.empty(n)
    primal = np.empty(n)
    times = np.empty(n)
    y, z, x = u0.y, u0.z, u0.x
    status, message = "max_iters", ""
    t0 = time.perf_counter()
    k = 0
    while True:
        ys[k], zs[k], xs[k] = y, z, x
        kkt[k], primal[k] = kkt_residual_norm(inst, y, z, x)
        times[k] = time.perf_counter() - t0
        if not math.isfinite(kkt[k]):
            status, message = "error", f"non-finite residual at iteration {k}"
            break
        if kkt[k] <= config.tol_kkt:
            status = "converged"
            break
        if k == n - 1:
            break
        try:
            y_new = stepper.y_step(y, z, x)
            z_new = stepper.z_step(y_new, z, x)
            x = stepper.x_step(y_new, z, z_new, x)
        except (ValueError, np.linalg.LinAlgError) as exc:
            status, message = "error", f"iteration {k}: {exc}"
            break
        y, z = y_new, z_new
        k += 1
    m = k + 1
    log.info("solve finished: status=%s iterations=%d residual=%.3e", status, k, kkt[k])
    return SolveTrace(
        ys[:m].copy(), zs[:m].copy(), xs[:m].copy(), kkt[:m].copy(), primal[:m].copy(),
        times[:m].copy(), status, config, terms, message,
    )
