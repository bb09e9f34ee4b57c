"""Convergence certificates evaluated along a solve trace.

Every check returns a :class:`SlackSeries`, which holds one slack per
transition ``k -> k+1`` together with the scale ``1 + max(|lhs|, |rhs|)``
used for the relative tolerance.  Distances to the solution set are
replaced by distances to the single known KKT point ``u_bar``, which is an
upper bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .blockspace import LinearMap, gram_norm, quad_forms, spectral_max, spectral_min
from .errors import DimensionError, DomainError, InsufficientDataError
from .problem import IterateTriple, KnownSolution, ProblemInstance
from .solver import ProximalTermPair, SolverConfig, SolveTrace

__all__ = [
    "GOLDEN",
    "CERT_TOL",
    "IDENTITY_TOL",
    "VANISH_TOL",
    "MIN_RATE_ITERS",
    "RateConstants",
    "CertificateOperators",
    "SlackSeries",
    "Lemma1Slacks",
    "RateReport",
    "ConvergenceReport",
    "CertificateTable",
    "rate_constants",
    "implied_rate",
    "build_certificate_operators",
    "phi",
    "t_term",
    "phi_series",
    "t_series",
    "check_lemma1",
    "check_lemma2",
    "check_lemma3",
    "check_contraction",
    "check_rate",
    "rate_from_series",
    "check_global_convergence",
    "pd_equivalence",
    "certify",
]

GOLDEN = (1.0 + math.sqrt(5.0)) / 2.0
CERT_TOL = 1e-8
IDENTITY_TOL = 1e-10
VANISH_TOL = 1e-5
PD_TOL = 1e-10
MIN_RATE_ITERS = 20
SURROGATE_LABEL = "upper bound (distance to the known KKT point)"


# -- constants ----------------------------------------------------------------


@dataclass(frozen=True)
class RateConstants:
    rho: float
    sigma: float
    l_rho: float
    h_rho: float
    m_rho: float
    n_rho: float
    o_rho: float
    k1: float
    k2: float
    k3: float
    k4: float
    lambda_AA: float
    # 4 * k3, the constant the residual bound actually supports
    k3_safe: float = float("nan")
    k5: float | None = None
    k6: float | None = None
    vartheta: float | None = None

    @property
    def k4_safe(self) -> float:
        return max(self.k1, self.k2, self.k3_safe)


def _check_rho(rho: float) -> None:
    if not (0.0 < rho < 2.0):
        raise DomainError(f"rho must lie in the open interval (0,2), got {rho}")


def _op_norm(op) -> float:
    if op is None:
        return 0.0
    if isinstance(op, LinearMap):
        return op.norm
    m = np.asarray(op, dtype=np.float64)
    return float(np.linalg.norm(m, 2)) if m.size else 0.0


def implied_rate(rho: float, m_rho: float, n_rho: float, k4: float, kappa: float, lambda_mbar: float):
    """``(k5, k6, vartheta)`` for a calmness modulus ``kappa``."""
    if not (kappa > 0 and lambda_mbar > 0 and k4 > 0):
        raise DomainError("kappa, lambda_max(M_bar) and k4 must be positive")
    k5 = min(1.0, m_rho, 0.5 * n_rho) / k4 * rho / (2.0 - rho) / kappa**2 / lambda_mbar
    k6 = rho / (rho + (2.0 - rho) * k5)
    return k5, k6, 1.0 / (1.0 + k5 * k6)


def rate_constants(rho, sigma, S=None, T=None, A=None, kappa=None, lambda_mbar=None) -> RateConstants:
    """Constants of the rate analysis.

    ``S``, ``T`` and ``A`` may be :class:`LinearMap` objects or arrays;
    ``A`` is the ``(dim Y, dim X)`` matrix so that ``lambda_max(AA*)`` is the
    squared spectral norm.  ``k5``, ``k6`` and ``vartheta`` are filled in
    only when both ``kappa`` and ``lambda_mbar`` are given.
    """
    _check_rho(rho)
    if not sigma > 0:
        raise DomainError(f"sigma must be positive, got {sigma}")
    if rho <= GOLDEN:
        l = 1.0 / rho
        h = 1.0 - min(rho, 1.0 / rho)
    else:
        l = (2.0 - rho) / (rho - 1.0)
        h = 2.0 - rho
    m = (2.0 * min(rho, 1.0 / rho) - min(1.0, rho * rho)) * l / rho
    n = (2.0 - rho) * (2.0 * (2.0 - rho) - h) / rho
    o = (2.0 - rho) * (2.0 - rho * l)
    lam = _op_norm(A) ** 2
    k1 = 3.0 * _op_norm(S)
    k2 = max(_op_norm(T), (3.0 * lam * sigma + 2.0 * (1.0 - rho) ** 2 / sigma) / rho**2)
    lead = 1.5 * (1.0 - rho) ** 2 * sigma * lam / rho**2
    k3 = lead + 1.0 / (sigma * rho**2)
    k3_safe = 4.0 * k3
    k4 = max(k1, k2, k3)
    k5 = k6 = vt = None
    if kappa is not None and lambda_mbar is not None:
        k5, k6, vt = implied_rate(rho, m, n, k4, kappa, lambda_mbar)
    return RateConstants(rho, sigma, l, h, m, n, o, k1, k2, k3, k4, lam, k3_safe, k5, k6, vt)


# -- operators ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CertificateOperators:
    """Dense operators on ``U = Y x Z x X`` and everything the checks need."""

    inst: ProblemInstance
    config: SolverConfig
    terms: ProximalTermPair
    sigma_f: LinearMap
    sigma_g: LinearMap
    constants: RateConstants
    M_rho: LinearMap
    M: LinearMap
    H: LinearMap
    H0: LinearMap
    M_bar: LinearMap
    H_bar: LinearMap
    epsilon_adjoint: LinearMap
    lambda_mbar: float

    @property
    def rho(self) -> float:
        return self.config.rho

    @property
    def sigma(self) -> float:
        return self.config.sigma


def build_certificate_operators(
    inst: ProblemInstance,
    config: SolverConfig,
    terms: ProximalTermPair,
    sigma_f: LinearMap | None = None,
    sigma_g: LinearMap | None = None,
    *,
    safe_k3: bool = False,
    h_sigma_weight: float = 0.5,
) -> CertificateOperators:
    """Assemble ``M_rho``, ``M``, ``H``, ``H0``, ``M_bar``, ``H_bar`` and ``eps*``.

    ``sigma_f`` / ``sigma_g`` default to the Hessians of the quadratic parts.
    With ``safe_k3`` the scale of ``H0`` uses ``k3_safe`` in place of ``k3``.

    ``h_sigma_weight`` multiplies ``Sigma_f`` and ``Sigma_g`` inside ``H``.
    The descent estimate only delivers half of each, so the default is 0.5;
    with 1.0 the contraction check can fail by a few percent.
    """
    sigma_f = sigma_f if sigma_f is not None else inst.f.monotonicity_operator().sigma
    sigma_g = sigma_g if sigma_g is not None else inst.g.monotonicity_operator().sigma
    if sigma_f.domain_dims != inst.y_dims or sigma_g.domain_dims != inst.z_dims:
        raise DimensionError("Sigma_f / Sigma_g do not match the instance's Y / Z")
    rho, sigma = config.rho, config.sigma
    A, B = inst.A.matrix, inst.B.matrix
    ny, nz, nx = inst.ny, inst.nz, inst.nx
    S, T = terms.S.matrix, terms.T.matrix
    consts = rate_constants(rho, sigma, terms.S, terms.T, A)
    c = (1.0 - rho) / rho

    m_rho = np.block([[T + sigma_g.matrix + sigma / rho * (B @ B.T), c * B], [c * B.T, np.eye(nx) / (sigma * rho)]])
    E = np.hstack([A.T, B.T, np.zeros((nx, nx))])
    EtE = E.T @ E
    SF = S + sigma_f.matrix
    M = np.zeros((ny + nz + nx,) * 2)
    M[:ny, :ny] = SF
    M[ny:, ny:] = m_rho
    M += 0.25 * consts.o_rho * sigma * EtE
    H = np.zeros_like(M)
    H[:ny, :ny] = S + h_sigma_weight * sigma_f.matrix
    H[ny : ny + nz, ny : ny + nz] = T + h_sigma_weight * sigma_g.matrix + 0.5 * consts.n_rho * sigma * (B @ B.T)
    H[ny + nz :, ny + nz :] = consts.m_rho / (2.0 * sigma) * np.eye(nx)
    H += 0.125 * consts.o_rho * sigma * EtE
    k4 = consts.k4_safe if safe_k3 else consts.k4
    H0 = np.zeros_like(M)
    H0[:ny, :ny] = k4 * S
    H0[ny : ny + nz, ny : ny + nz] = k4 * (T + sigma * (B @ B.T))
    H0[ny + nz :, ny + nz :] = k4 / (2.0 * sigma) * np.eye(nx)

    u_dims = inst.u_dims
    zx_dims = inst.z_dims + inst.x_dims
    scale = rho / (2.0 - rho)
    M_map = LinearMap(M, u_dims, psd=True)
    M_bar = LinearMap(scale * M, u_dims, psd=True)
    lam_mbar = spectral_max(M_bar)
    return CertificateOperators(
        inst=inst,
        config=config,
        terms=terms,
        sigma_f=sigma_f,
        sigma_g=sigma_g,
        constants=consts,
        M_rho=LinearMap(m_rho, zx_dims, psd=True),
        M=M_map,
        H=LinearMap(H, u_dims, psd=True),
        H0=LinearMap(H0, u_dims, psd=True),
        M_bar=M_bar,
        H_bar=LinearMap(scale * H, u_dims, psd=True),
        epsilon_adjoint=LinearMap(E, u_dims, inst.x_dims),
        lambda_mbar=lam_mbar,
    )


# -- slack containers -----------------------------------------------------------


@dataclass(frozen=True)
class SlackSeries:
    """Slacks indexed by ``k`` (the step ``k -> k+1``).

    For inequalities a slack ``>= -tol * scale`` passes; for identities
    (``identity=True``) the slack is ``|lhs - rhs|`` and must be
    ``<= tol * scale``.
    """

    k: np.ndarray
    slack: np.ndarray
    scale: np.ndarray
    identity: bool = False
    name: str = ""

    @property
    def relative(self) -> np.ndarray:
        return self.slack / self.scale

    def worst(self) -> float:
        """Smallest relative slack (largest relative error for identities)."""
        if self.k.size == 0:
            return 0.0
        rel = self.relative
        return float(rel.max() if self.identity else rel.min())

    def violations(self, tol: float | None = None) -> np.ndarray:
        tol = (IDENTITY_TOL if self.identity else CERT_TOL) if tol is None else tol
        bad = self.slack > tol * self.scale if self.identity else self.slack < -tol * self.scale
        return self.k[bad]

    def passes(self, tol: float | None = None) -> bool:
        return self.violations(tol).size == 0


def _series(name, k, lhs, rhs, identity=False) -> SlackSeries:
    scale = 1.0 + np.maximum(np.abs(lhs), np.abs(rhs))
    slack = np.abs(lhs - rhs) if identity else lhs - rhs
    return SlackSeries(np.asarray(k), slack, scale, identity, name)


@dataclass(frozen=True)
class Lemma1Slacks:
    a: SlackSeries
    b: SlackSeries
    c: SlackSeries

    def passes(self) -> bool:
        return self.a.passes() and self.b.passes(CERT_TOL) and self.c.passes()


# -- vectorized pieces ------------------------------------------------------------


class _Arrays:
    """Error vectors and differences for a whole trace."""

    def __init__(self, trace: SolveTrace, ubar: IterateTriple, ops: CertificateOperators):
        inst = ops.inst
        if trace.ys.shape[1] != inst.ny or trace.zs.shape[1] != inst.nz or trace.xs.shape[1] != inst.nx:
            raise DimensionError("trace does not match the certificate operators' instance")
        self.A, self.B = inst.A.matrix, inst.B.matrix
        self.ye = trace.ys - ubar.y
        self.ze = trace.zs - ubar.z
        self.xe = trace.xs - ubar.x
        self.dy = np.diff(trace.ys, axis=0)
        self.dz = np.diff(trace.zs, axis=0)
        self.dx = np.diff(trace.xs, axis=0)
        # z^{k} - z^{k-1} for k = 0..K with z^{-1} := z^0
        self.dz_prev = np.vstack([np.zeros((1, inst.nz)), self.dz])
        self.Btze = self.ze @ self.B
        self.r = self.ye @ self.A + self.Btze
        self.K = len(trace.kkt) - 1
        self.kkt = trace.kkt


def _w(ops, arr) -> np.ndarray:
    return arr.xe + ops.sigma * (1.0 - ops.rho) * arr.Btze


def _phi_all(ops, arr) -> np.ndarray:
    rho, sigma = ops.rho, ops.sigma
    S, T = ops.terms.S.matrix, ops.terms.T.matrix
    w = _w(ops, arr)
    return (
        np.einsum("ij,ij->i", w, w) / (sigma * rho)
        + quad_forms(S, arr.ye)
        + quad_forms(T, arr.ze)
        + sigma * (2.0 - rho) * np.einsum("ij,ij->i", arr.Btze, arr.Btze)
        + (2.0 - rho) / rho * quad_forms(T, arr.dz_prev)
    )


def _t_all(ops, arr) -> np.ndarray:
    """``t_{k+1}`` for ``k = 0..K-1``."""
    rho, sigma = ops.rho, ops.sigma
    S, T = ops.terms.S.matrix, ops.terms.T.matrix
    Btdz = arr.dz @ arr.B
    return (
        2.0 * quad_forms(ops.sigma_f.matrix, arr.ye[1:])
        + 2.0 * quad_forms(ops.sigma_g.matrix, arr.ze[1:])
        + quad_forms(S, arr.dy)
        + quad_forms(T, arr.dz)
        + sigma * (2.0 - rho) ** 2 / rho * np.einsum("ij,ij->i", Btdz, Btdz)
    )


def _stack(trace_or_arrays) -> np.ndarray:
    return np.hstack([trace_or_arrays.ye, trace_or_arrays.ze, trace_or_arrays.xe])


def phi_series(trace: SolveTrace, ubar: IterateTriple, ops: CertificateOperators) -> np.ndarray:
    """``phi_k`` for every recorded ``k``."""
    return _phi_all(ops, _Arrays(trace, ubar, ops))


def t_series(trace: SolveTrace, ubar: IterateTriple, ops: CertificateOperators) -> np.ndarray:
    """``t_{k+1}`` for ``k = 0..K-1``."""
    return _t_all(ops, _Arrays(trace, ubar, ops))


def phi(u_k: IterateTriple, u_bar: IterateTriple, z_prev, ops: CertificateOperators) -> float:
    """``phi_k`` at a single iterate; ``z_prev`` is ``z^{k-1}``."""
    rho, sigma = ops.rho, ops.sigma
    B = ops.inst.B.matrix
    S, T = ops.terms.S, ops.terms.T
    ye, ze, xe = u_k.y - u_bar.y, u_k.z - u_bar.z, u_k.x - u_bar.x
    Btze = B.T @ ze
    w = xe + sigma * (1.0 - rho) * Btze
    dz = u_k.z - np.asarray(z_prev, dtype=np.float64)
    return (
        float(w @ w) / (sigma * rho)
        + gram_norm(S, ye) ** 2
        + gram_norm(T, ze) ** 2
        + sigma * (2.0 - rho) * float(Btze @ Btze)
        + (2.0 - rho) / rho * gram_norm(T, dz) ** 2
    )


def t_term(u_next: IterateTriple, u_k: IterateTriple, u_bar: IterateTriple, ops: CertificateOperators) -> float:
    """``t_{k+1}`` from ``u^{k+1}`` and ``u^k``."""
    rho, sigma = ops.rho, ops.sigma
    B = ops.inst.B.matrix
    Btdz = B.T @ (u_next.z - u_k.z)
    return (
        2.0 * gram_norm(ops.sigma_f, u_next.y - u_bar.y) ** 2
        + 2.0 * gram_norm(ops.sigma_g, u_next.z - u_bar.z) ** 2
        + gram_norm(ops.terms.S, u_next.y - u_k.y) ** 2
        + gram_norm(ops.terms.T, u_next.z - u_k.z) ** 2
        + sigma * (2.0 - rho) ** 2 / rho * float(Btdz @ Btdz)
    )


# -- checks --------------------------------------------------------------------


def check_lemma1(trace: SolveTrace, ubar: IterateTriple, ops: CertificateOperators, *, sharp: bool = False) -> Lemma1Slacks:
    """Slacks of the three step relations for ``k >= 1``.

    ``a``: monotonicity of the z-step, ``lhs - rhs >= 0``.
    ``b``: the multiplier identity, stored as ``|lhs - rhs|``.
    ``c``: the cross-term bound, ``rhs - lhs >= 0``.  With ``sharp`` the
    quadratic term enters the left side with a plus sign, which is the
    tightest form and gives ``c = a / (sigma rho)`` up to rounding.
    """
    arr = _Arrays(trace, ubar, ops)
    rho, sigma = ops.rho, ops.sigma
    T = ops.terms.T.matrix
    K = arr.K
    ks = np.arange(1, K)
    if ks.size == 0:
        empty = _series("", ks, np.zeros(0), np.zeros(0))
        return Lemma1Slacks(empty, SlackSeries(ks, np.zeros(0), np.ones(0), True), empty)
    Btdz = arr.dz @ arr.B                      # row k: B*(z^{k+1} - z^k)
    dzT = quad_forms(T, arr.dz)                # ||z^{k+1} - z^k||_T^2
    dzT_prev = quad_forms(T, arr.dz_prev[:-1])  # ||z^k - z^{k-1}||_T^2
    sel = ks  # row index k selects the step k -> k+1

    lhs_a = np.einsum("ij,ij->i", Btdz, arr.dx)[sel]
    rhs_a = 0.5 * (dzT - dzT_prev)[sel]

    w = _w(ops, arr)
    r1 = arr.r[1:]
    ww = np.einsum("ij,ij->i", w, w)
    lhs_b = (np.einsum("ij,ij->i", w[1:], r1) + 0.5 * sigma * rho * np.einsum("ij,ij->i", r1, r1))[sel]
    rhs_b = ((ww[:-1] - ww[1:]) / (2.0 * sigma * rho))[sel]

    Atye1 = arr.ye[1:] @ arr.A
    sq = np.einsum("ij,ij->i", Btdz, Btdz)
    sign = 1.0 if sharp else -1.0
    lhs_c = (np.einsum("ij,ij->i", Btdz, Atye1) + sign * (2.0 - rho) / (2.0 * rho) * sq)[sel]
    bz = np.einsum("ij,ij->i", arr.Btze, arr.Btze)
    rhs_c = (0.5 * (bz[:-1] - bz[1:]) + 0.5 / (sigma * rho) * (dzT_prev - dzT))[sel]
    return Lemma1Slacks(
        _series("lemma1_a", ks, lhs_a, rhs_a),
        _series("lemma1_b", ks, lhs_b, rhs_b, identity=True),
        _series("lemma1_c", ks, rhs_c, lhs_c),
    )


def check_lemma2(trace: SolveTrace, ubar: IterateTriple, ops: CertificateOperators) -> SlackSeries:
    """``(phi_k - phi_{k+1}) - (t_{k+1} + (2-rho) sigma ||A*y_e + B*z_e||^2)`` for ``k >= 1``."""
    arr = _Arrays(trace, ubar, ops)
    ph = _phi_all(ops, arr)
    t = _t_all(ops, arr)
    r1 = arr.r[1:]
    ks = np.arange(1, arr.K)
    lhs = (ph[:-1] - ph[1:])[ks]
    rhs = (t + (2.0 - ops.rho) * ops.sigma * np.einsum("ij,ij->i", r1, r1))[ks]
    return _series("lemma2", ks, lhs, rhs)


def check_lemma3(trace: SolveTrace, ops: CertificateOperators, H0: LinearMap | None = None) -> SlackSeries:
    """``||u^{k+1} - u^k||_{H0}^2 - ||R(u^{k+1})||^2`` for ``k >= 0``."""
    H0 = H0 if H0 is not None else ops.H0
    du = np.hstack([np.diff(trace.ys, axis=0), np.diff(trace.zs, axis=0), np.diff(trace.xs, axis=0)])
    ks = np.arange(du.shape[0])
    lhs = quad_forms(H0.matrix, du) if ks.size else np.zeros(0)
    rhs = trace.kkt[1:] ** 2
    return _series("lemma3", ks, lhs, rhs)


def check_contraction(trace: SolveTrace, ubar: IterateTriple, ops: CertificateOperators) -> SlackSeries:
    """Descent of ``||u_e||_M^2 + (2-rho)/rho ||dz||_T^2`` by at least ``||du||_H^2``, ``k >= 1``."""
    arr = _Arrays(trace, ubar, ops)
    rho = ops.rho
    T = ops.terms.T.matrix
    ue = _stack(arr)
    lyap = quad_forms(ops.M.matrix, ue) + (2.0 - rho) / rho * quad_forms(T, arr.dz_prev)
    du = np.hstack([arr.dy, arr.dz, arr.dx])
    ks = np.arange(1, arr.K)
    step = quad_forms(ops.H.matrix, du) if du.size else np.zeros(0)
    lhs = lyap[:-1][ks]
    rhs = (lyap[1:] + step)[ks]
    return _series("contraction", ks, lhs, rhs)


def _dist_sq(trace, ubar, ops) -> tuple[np.ndarray, np.ndarray]:
    arr = _Arrays(trace, ubar, ops)
    ue = _stack(arr)
    d2 = quad_forms(ops.M_bar.matrix, ue) + quad_forms(ops.terms.T.matrix, arr.dz_prev)
    return np.maximum(d2, 0.0), np.sqrt(np.einsum("ij,ij->i", ue, ue))


# -- rate ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RateReport:
    d2: np.ndarray
    ratios: np.ndarray
    tail_start: int
    max_tail_ratio: float
    slope: float
    intercept: float
    r2: float
    kappa_emp: float
    implied_vartheta: float | None
    degenerate: bool = False
    label: str = SURROGATE_LABEL

    @property
    def contracting(self) -> bool:
        return not self.degenerate and self.max_tail_ratio < 1.0

    def summary(self) -> str:
        if self.degenerate:
            return "degenerate: distance to the known KKT point is zero; ratio undefined"
        vt = "n/a" if self.implied_vartheta is None else f"{self.implied_vartheta:.17g}"
        return "\n".join(
            [
                f"distance: {self.label}",
                f"max_tail_ratio: {self.max_tail_ratio:.17g}",
                f"tail_start: {self.tail_start}",
                f"log_d2_slope: {self.slope:.17g}",
                f"log_d2_r2: {self.r2:.17g}",
                f"kappa_emp: {self.kappa_emp:.17g}",
                f"implied_vartheta: {vt}",
            ]
        )


def _ratios(d2: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(d2[:-1] > 0, d2[1:] / np.where(d2[:-1] > 0, d2[:-1], 1.0), np.nan)


def rate_from_series(
    d2, dist, kkt, constants: RateConstants | None = None, lambda_mbar: float | None = None
) -> RateReport:
    """Rate report from ``d2_k``, ``||u^k - u_bar||`` and ``||R(u^k)||``.

    The tail is the last half of the ratios; the least-squares fit of
    ``log d2_k`` against ``k`` uses the iterates of the same tail.
    """
    d2 = np.asarray(d2, dtype=np.float64)
    dist = np.asarray(dist, dtype=np.float64)
    kkt = np.asarray(kkt, dtype=np.float64)
    n_steps = d2.size - 1
    if d2.size and d2[0] == 0.0:
        nan = float("nan")
        return RateReport(d2, np.full(max(n_steps, 0), nan), 0, nan, nan, nan, nan, nan, None, True)
    if n_steps < MIN_RATE_ITERS:
        raise InsufficientDataError(f"insufficient data: {n_steps} iterations, need at least {MIN_RATE_ITERS}")
    ratios = _ratios(d2)
    start = n_steps // 2
    tail = ratios[start:]
    tail = tail[np.isfinite(tail)]
    max_tail = float(tail.max()) if tail.size else float("nan")

    ks = np.arange(start, n_steps + 1)
    vals = d2[start:]
    keep = vals > 0
    slope = intercept = r2 = float("nan")
    if keep.sum() >= 2:
        x, y = ks[keep].astype(float), np.log(vals[keep])
        slope, intercept = np.polyfit(x, y, 1)
        resid = y - (slope * x + intercept)
        ss_tot = float(np.sum((y - y.mean()) ** 2))
        r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
        slope, intercept = float(slope), float(intercept)

    pos = kkt > 0
    kappa = float(np.max(dist[pos] / kkt[pos])) if pos.any() else float("nan")
    vt = None
    if constants is not None and lambda_mbar is not None and kappa > 0 and math.isfinite(kappa):
        vt = implied_rate(constants.rho, constants.m_rho, constants.n_rho, constants.k4, kappa, lambda_mbar)[2]
    return RateReport(d2, ratios, start, max_tail, slope, intercept, r2, kappa, vt)


def check_rate(trace: SolveTrace, ubar: IterateTriple, ops: CertificateOperators) -> RateReport:
    """Empirical contraction of ``d2_k = ||u^k - u_bar||_{M_bar}^2 + ||z^k - z^{k-1}||_T^2``."""
    d2, dist = _dist_sq(trace, ubar, ops)
    return rate_from_series(d2, dist, trace.kkt, ops.constants, ops.lambda_mbar)


# -- global convergence -----------------------------------------------------------


@dataclass(frozen=True)
class ConvergenceReport:
    quantities: dict
    threshold: float = VANISH_TOL

    @property
    def above(self) -> list[str]:
        return [k for k, v in self.quantities.items() if not v <= self.threshold]

    @property
    def all_below(self) -> bool:
        return not self.above


def check_global_convergence(trace: SolveTrace, ubar: IterateTriple, ops: CertificateOperators) -> ConvergenceReport:
    """The six vanishing quantities at the final step."""
    inst = ops.inst
    S, T = ops.terms.S, ops.terms.T
    y, z = trace.ys[-1], trace.zs[-1]
    if len(trace.kkt) > 1:
        dy, dz = y - trace.ys[-2], z - trace.zs[-2]
    else:
        dy, dz = np.zeros_like(y), np.zeros_like(z)
    ye, ze = y - ubar.y, z - ubar.z
    Btdz = inst.B.matrix.T @ dz
    q = {
        "feasibility": float(np.linalg.norm(inst.A.matrix.T @ ye + inst.B.matrix.T @ ze)),
        "dz_sigmaBB": math.sqrt(ops.sigma * float(Btdz @ Btdz)),
        "dz_T": gram_norm(T, dz),
        "ze_Sigma_g": gram_norm(ops.sigma_g, ze),
        "dy_S": gram_norm(S, dy),
        "ye_Sigma_f": gram_norm(ops.sigma_f, ye),
    }
    return ConvergenceReport(q)


# -- positive definiteness ------------------------------------------------------------


def _is_pd(mat: np.ndarray) -> bool:
    if mat.size == 0:
        return True
    scale = max(1.0, float(np.linalg.norm(mat, 2)))
    return float(np.linalg.eigvalsh(0.5 * (mat + mat.T))[0]) > PD_TOL * scale


def pd_equivalence(
    inst: ProblemInstance,
    terms: ProximalTermPair,
    sigma_f: LinearMap | None,
    sigma_g: LinearMap | None,
    config: SolverConfig,
) -> tuple[bool, bool, bool]:
    """``(hypothesis, M > 0, H > 0)``; the three agree for every ``rho`` in (0,2)."""
    ops = build_certificate_operators(inst, config, terms, sigma_f, sigma_g)
    A, B = inst.A.matrix, inst.B.matrix
    sig = config.sigma
    hyp = _is_pd(ops.sigma_f.matrix + terms.S.matrix + sig * A @ A.T) and _is_pd(
        ops.sigma_g.matrix + terms.T.matrix + sig * B @ B.T
    )
    return hyp, _is_pd(ops.M.matrix), _is_pd(ops.H.matrix)


# -- full table -------------------------------------------------------------------


CERT_COLUMNS = (
    "phi",
    "t",
    "lemma1_slack_a",
    "lemma1_slack_b",
    "lemma1_slack_c",
    "lemma2_slack",
    "lemma3_slack",
    "contraction_slack",
    "distM_singleton",
    "ratio",
    "dist_singleton",
)


@dataclass(frozen=True)
class CertificateTable:
    """Per-iterate certificate columns aligned with ``k = 0..K``.

    Slacks of the step ``k -> k+1`` are stored on row ``k + 1``; ``t`` on
    row ``k`` is ``t_k``.  Undefined entries are NaN.
    """

    columns: dict
    lemma1: Lemma1Slacks
    lemma2: SlackSeries
    lemma3: SlackSeries
    contraction: SlackSeries
    rate: RateReport | None

    def series(self) -> list[SlackSeries]:
        return [self.lemma1.a, self.lemma1.b, self.lemma1.c, self.lemma2, self.lemma3, self.contraction]

    def violations(self) -> dict:
        out = {}
        for s in self.series():
            bad = s.violations(CERT_TOL)
            if bad.size:
                out[s.name] = bad
        return out

    @property
    def ok(self) -> bool:
        return not self.violations()


def certify(trace: SolveTrace, ubar: IterateTriple, ops: CertificateOperators) -> CertificateTable:
    """Evaluate every check and lay the results out per iterate."""
    n = len(trace.kkt)
    arr = _Arrays(trace, ubar, ops)
    cols = {name: np.full(n, np.nan) for name in CERT_COLUMNS}
    cols["phi"] = _phi_all(ops, arr)
    cols["t"][1:] = _t_all(ops, arr)
    l1 = check_lemma1(trace, ubar, ops)
    l2 = check_lemma2(trace, ubar, ops)
    l3 = check_lemma3(trace, ops)
    ct = check_contraction(trace, ubar, ops)
    for name, s in (
        ("lemma1_slack_a", l1.a),
        ("lemma1_slack_b", l1.b),
        ("lemma1_slack_c", l1.c),
        ("lemma2_slack", l2),
        ("lemma3_slack", l3),
        ("contraction_slack", ct),
    ):
        cols[name][s.k + 1] = s.slack
    d2, dist = _dist_sq(trace, ubar, ops)
    cols["distM_singleton"] = d2
    cols["ratio"][1:] = _ratios(d2)
    cols["dist_singleton"] = dist
    try:
        rate = rate_from_series(d2, dist, trace.kkt, ops.constants, ops.lambda_mbar)
    except InsufficientDataError:
        rate = None
    return CertificateTable(cols, l1, l2, l3, ct, rate)
