"""Acceptance suite: one PASS/FAIL line per criterion on stdout."""

import time

import numpy as np
import pytest

from spgadmm.blockspace import LinearMap
from spgadmm.certificates import (
    build_certificate_operators,
    check_contraction,
    check_global_convergence,
    check_lemma1,
    check_lemma2,
    check_lemma3,
    check_rate,
    pd_equivalence,
    rate_constants,
)
from spgadmm.functions import BoxIndicator, L1Norm
from spgadmm.problem import (
    FAMILIES,
    InstanceDims,
    ProblemInstance,
    dumps_instance,
    generate_with_known_kkt,
    kkt_residual_norm,
    loads_instance,
)
from spgadmm.solver import (
    ProximalTermPair,
    SolverConfig,
    build_proximal_terms,
    is_exactly_solvable,
    solve,
    y_update,
)

from conftest import quadratic
from oracles import classic_admm, soft, sweep_oracle

INEQ_TOL = 1e-8
IDENTITY_TOL = 1e-10
ADMM_TOL = 1e-10
SGS_TOL = 1e-10
KKT_TOL = 1e-6
MAX_ITERS = 10000
VANISH_TOL = 1e-5
R2_MIN = 0.9
PD_THRESHOLD = 1e-10
THETA_TOL = 1e-12
PROX_TOL = 1e-12
KKT_POINT_TOL = 1e-9

SEEDS = range(10)
RHOS = (0.5, 1.0, 1.6, 1.9)
STRATEGIES = ("zero", "majorized", "sgs")
CERT_STEPS = 200
DIMS = InstanceDims()


def report(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'} {detail}")


def info(capsys, text):
    with capsys.disabled():
        print(f"\nINFO {text}")


@pytest.fixture(scope="module")
def instances():
    return {(fam, s): generate_with_known_kkt(s, DIMS, fam) for fam in FAMILIES for s in SEEDS}


@pytest.fixture(scope="module")
def sweep(instances):
    """Every (family, seed, rho, strategy) run, solved to the stop rule and certified."""
    runs = []
    skipped = 0
    t0 = time.perf_counter()
    for (fam, seed), (inst, sol) in instances.items():
        for rho in RHOS:
            for strategy in STRATEGIES:
                cfg = SolverConfig(rho=rho, prox_strategy=strategy, max_iters=MAX_ITERS)
                if not is_exactly_solvable(inst, cfg):
                    skipped += 1
                    continue
                trace = solve(inst, cfg)
                ops = build_certificate_operators(inst, cfg, trace.terms)
                head = trace.head(CERT_STEPS)
                full_sigma_h = build_certificate_operators(inst, cfg, trace.terms, h_sigma_weight=1.0)
                runs.append(
                    {
                        "family": fam, "seed": seed, "rho": rho, "strategy": strategy,
                        "trace": trace,
                        "lemma1": check_lemma1(head, sol, ops),
                        "lemma2": check_lemma2(head, sol, ops),
                        "lemma3": check_lemma3(head, ops),
                        "contraction": check_contraction(head, sol, ops),
                        "full_sigma_h": check_contraction(head, sol, full_sigma_h).worst(),
                        "rate": check_rate(trace, sol, ops) if trace.iterations >= 20 else None,
                        "vanishing": check_global_convergence(trace, sol, ops),
                    }
                )
    return {"runs": runs, "skipped": skipped, "seconds": time.perf_counter() - t0}


def test_criterion_1_inequality_suite(sweep, capsys):
    worst = {"lemma1_a": np.inf, "lemma1_c": np.inf, "lemma2": np.inf, "lemma3": np.inf, "contraction": np.inf}
    worst_identity = 0.0
    failures = []
    for r in sweep["runs"]:
        l1 = r["lemma1"]
        series = {"lemma1_a": l1.a, "lemma1_c": l1.c, "lemma2": r["lemma2"], "lemma3": r["lemma3"],
                  "contraction": r["contraction"]}
        for name, s in series.items():
            if s.k.size:
                worst[name] = min(worst[name], s.worst())
            if np.any(s.slack < -INEQ_TOL * s.scale):
                failures.append((name, r["family"], r["seed"], r["rho"], r["strategy"]))
        if l1.b.k.size:
            worst_identity = max(worst_identity, l1.b.worst())
        if np.any(l1.b.slack > IDENTITY_TOL * l1.b.scale):
            failures.append(("multiplier identity", r["family"], r["seed"], r["rho"], r["strategy"]))
    ok = not failures
    detail = (f"runs={len(sweep['runs'])} skipped_not_exact={sweep['skipped']} "
              f"worst_rel_slack={min(worst.values()):.2e} worst_identity_rel_err={worst_identity:.2e} "
              f"sweep_seconds={sweep['seconds']:.1f}")
    report(capsys, 1, ok, detail)
    bad_h = [r for r in sweep["runs"] if r["full_sigma_h"] < -INEQ_TOL]
    info(capsys, f"contraction with full Sigma weight in H: {len(bad_h)} of {len(sweep['runs'])} runs violate, "
                 f"worst rel slack {min(r['full_sigma_h'] for r in sweep['runs']):.2e}")
    assert ok, failures[:10]
    assert sweep["seconds"] < 300


def test_criterion_2_classic_admm(capsys):
    worst = 0.0
    for seed in range(5):
        inst, _ = generate_with_known_kkt(seed, DIMS, "lasso")
        cfg = SolverConfig(sigma=1.0, rho=1.0, prox_strategy="zero", max_iters=50, tol_kkt=1e-300)
        trace = solve(inst, cfg)
        assert trace.iterations == 50
        assert not trace.terms.S.matrix.any() and not trace.terms.T.matrix.any()
        for k, (y, z, x) in enumerate(classic_admm(inst, 1.0, 50)):
            gap = max(np.abs(trace.ys[k] - y).max(), np.abs(trace.zs[k] - z).max(), np.abs(trace.xs[k] - x).max())
            worst = max(worst, gap)
    ok = worst <= ADMM_TOL
    report(capsys, 2, ok, f"max_componentwise_gap={worst:.2e} tol={ADMM_TOL:g}")
    assert ok


def test_criterion_3_sgs_equivalence(capsys):
    rng = np.random.default_rng(3)
    worst = 0.0
    for parts in [(40, 60, 50), (30, 50, 40, 60)]:
        inst, _ = generate_with_known_kkt(5, InstanceDims(parts, (50, 100), 100), "box-qp")
        cfg = SolverConfig(rho=1.6, prox_strategy="sgs")
        terms = build_proximal_terms(inst, cfg)
        one_shot = SolverConfig(rho=1.6, prox_strategy="explicit", S=terms.S, T=terms.T)
        terms_os = build_proximal_terms(inst, one_shot)
        for _ in range(20):
            y, z, x = rng.standard_normal(inst.ny), rng.standard_normal(inst.nz), rng.standard_normal(inst.nx)
            ref = sweep_oracle(inst, cfg, y, z, x)
            worst = max(worst, np.abs(y_update(inst, one_shot, terms_os, y, z, x) - ref).max(),
                        np.abs(y_update(inst, cfg, terms, y, z, x) - ref).max())
    ok = worst <= SGS_TOL
    report(capsys, 3, ok, f"max_gap={worst:.2e} tol={SGS_TOL:g}")
    assert ok


def test_criterion_4_global_convergence(sweep, capsys):
    failures = []
    worst_vanish = 0.0
    max_iters = 0
    for r in sweep["runs"]:
        tr = r["trace"]
        max_iters = max(max_iters, tr.iterations)
        reached = tr.kkt.min() <= KKT_TOL and tr.iterations <= MAX_ITERS
        vals = r["vanishing"].quantities
        worst_vanish = max(worst_vanish, max(vals.values()))
        if not reached or max(vals.values()) > VANISH_TOL:
            failures.append((r["family"], r["seed"], r["rho"], r["strategy"], tr.status))
    ok = not failures
    report(capsys, 4, ok, f"runs={len(sweep['runs'])} max_iterations={max_iters} "
                          f"worst_vanishing_quantity={worst_vanish:.2e}")
    assert ok, failures[:10]


def test_criterion_5_linear_rate(sweep, capsys):
    bad_tail = []
    best = {fam: None for fam in FAMILIES}
    thetas = []
    for r in sweep["runs"]:
        rep = r["rate"]
        if not r["trace"].converged or rep is None or rep.degenerate:
            continue
        if not rep.max_tail_ratio < 1:
            bad_tail.append((r["family"], r["seed"], r["rho"], r["strategy"], rep.max_tail_ratio))
        if rep.slope < 0 and (best[r["family"]] is None or rep.r2 > best[r["family"]]):
            best[r["family"]] = rep.r2
        if rep.implied_vartheta is not None:
            thetas.append(rep.implied_vartheta)
    fit_ok = all(v is not None and v >= R2_MIN for v in best.values())
    ok = not bad_tail and fit_ok
    r2 = " ".join(f"{fam}:{v:.6f}" for fam, v in best.items())
    report(capsys, 5, ok, f"tail_ratio_failures={len(bad_tail)} best_R2_with_negative_slope[{r2}]")
    if thetas:
        info(capsys, f"implied vartheta from empirical kappa: min={min(thetas):.10f} max={max(thetas):.10f}")
    assert ok, bad_tail[:10]


def _pd_oracle(mat):
    lam = np.linalg.eigvalsh(0.5 * (mat + mat.T))[0]
    return lam > PD_THRESHOLD * max(1.0, np.linalg.norm(mat, 2))


def test_criterion_6_pd_equivalence(capsys):
    rng = np.random.default_rng(6)
    disagree = []
    counts = {True: 0, False: 0}

    def low_rank(n, rank):
        w = rng.standard_normal((n, rank))
        return w @ w.T

    for i in range(50):
        ny, nz, nx = (int(v) for v in rng.integers(2, 7, 3))
        A = rng.standard_normal((ny, nx))
        B = rng.standard_normal((nz, nx))
        if i % 5 == 0:
            A = np.zeros((ny, nx))
        if i % 4 == 0:
            B[1] = B[0]
        qf = low_rank(ny, int(rng.integers(0, ny + 1)))
        qg = low_rank(nz, int(rng.integers(0, nz + 1)))
        S = low_rank(ny, int(rng.integers(0, ny + 1)))
        T = low_rank(nz, int(rng.integers(0, nz + 1)))
        if i % 3 == 0:
            S = np.zeros((ny, ny))
        inst = ProblemInstance(quadratic(qf), quadratic(qg), LinearMap(A), LinearMap(B), np.zeros(nx))
        sigma, rho = float(10 ** rng.uniform(-1, 1)), float(rng.uniform(0.05, 1.95))
        cfg = SolverConfig(sigma=sigma, rho=rho)
        terms = ProximalTermPair(LinearMap(S, psd=True), LinearMap(T, psd=True))
        res = pd_equivalence(inst, terms, None, None, cfg)
        oracle = _pd_oracle(qf + S + sigma * A @ A.T) and _pd_oracle(qg + T + sigma * B @ B.T)
        counts[oracle] += 1
        if len(set(res)) != 1 or res[0] != oracle:
            disagree.append((i, res, oracle))
    ok = not disagree and counts[True] > 0 and counts[False] > 0
    report(capsys, 6, ok, f"triples=50 pd={counts[True]} degenerate={counts[False]} disagreements={len(disagree)}")
    assert ok, disagree


def test_criterion_7_constants(capsys):
    grid_fail = []
    for j in range(1, 40):
        rho = 0.05 * j
        c = rate_constants(rho, 1.0)
        checks = (c.l_rho > 0, 0 < rho * c.l_rho < 2, c.m_rho > 0, c.n_rho > 0, c.o_rho > 0,
                  0 <= c.h_rho < 2 * (2 - rho))
        if not all(checks):
            grid_fail.append(rho)
    rng = np.random.default_rng(7)
    worst = 0.0
    A = rng.standard_normal((8, 10))
    for _ in range(20):
        rho, kappa = float(rng.uniform(0.01, 1.99)), float(10 ** rng.uniform(-1, 2))
        c = rate_constants(rho, 1.0, A=A, kappa=kappa, lambda_mbar=float(10 ** rng.uniform(-1, 2)))
        worst = max(worst, abs(c.k5 * c.k6 - (1 - c.k6) * rho / (2 - rho)))
        assert 0 < c.vartheta < 1
    ok = not grid_fail and worst <= THETA_TOL
    report(capsys, 7, ok, f"grid_points=39 grid_failures={len(grid_fail)} max_identity_err={worst:.2e}")
    assert ok


def test_criterion_8_oracles(instances, capsys):
    rng = np.random.default_rng(8)
    closed = 0.0
    for _ in range(200):
        v, t, lam = rng.standard_normal(20) * 3, rng.uniform(0.1, 2), rng.uniform(0.1, 2)
        closed = max(closed, np.abs(L1Norm(lam).prox(v, t) - soft(v, lam * t)).max())
        lo = -rng.uniform(0, 1, 20)
        hi = rng.uniform(0, 1, 20)
        closed = max(closed, np.abs(BoxIndicator(lo, hi).prox(v, t) - np.minimum(np.maximum(v, lo), hi)).max())
    expansive = 0
    fns = [inst.f for (fam, s), (inst, _) in instances.items() if s < 2] + [
        inst.g for (fam, s), (inst, _) in instances.items() if s < 2
    ]
    for i in range(1000):
        fn = fns[i % len(fns)]
        t = float(10 ** rng.uniform(-1, 1))
        a, b = rng.standard_normal(fn.size) * 3, rng.standard_normal(fn.size) * 3
        if np.linalg.norm(fn.prox(a, t) - fn.prox(b, t)) > np.linalg.norm(a - b) * (1 + 1e-12):
            expansive += 1
    kkt_worst = 0.0
    round_trip_fail = 0
    for (fam, s), (inst, sol) in instances.items():
        kkt_worst = max(kkt_worst, kkt_residual_norm(inst, sol.y, sol.z, sol.x)[0])
        inst2, sol2 = loads_instance(dumps_instance(inst, sol))
        if not (inst2 == inst and np.array_equal(sol2.stacked(), sol.stacked())):
            round_trip_fail += 1
    ok = closed <= PROX_TOL and expansive == 0 and kkt_worst <= KKT_POINT_TOL and round_trip_fail == 0
    report(capsys, 8, ok, f"closed_form_err={closed:.1e} expansive_pairs={expansive}/1000 "
                          f"max_R(ubar)={kkt_worst:.2e} round_trip_failures={round_trip_fail}/{len(instances)}")
    assert ok


def test_k3_scale_at_small_sigma(capsys):
    # reported alongside the criteria: the unscaled k3 is not enough at small sigma
    inst, sol = generate_with_known_kkt(0, DIMS, "lasso")
    lines = []
    for sigma in (0.01, 0.1, 1.0):
        cfg = SolverConfig(sigma=sigma, rho=1.0, prox_strategy="zero", max_iters=CERT_STEPS)
        trace = solve(inst, cfg)
        plain = check_lemma3(trace, build_certificate_operators(inst, cfg, trace.terms)).worst()
        safe = check_lemma3(trace, build_certificate_operators(inst, cfg, trace.terms, safe_k3=True)).worst()
        lines.append(f"sigma={sigma:g}: k3 {plain:.2e}, 4*k3 {safe:.2e}")
        assert safe >= -INEQ_TOL
    info(capsys, "residual bound worst rel slack, " + "; ".join(lines))
