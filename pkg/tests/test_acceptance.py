"""Acceptance suite: one test per criterion, each logging a PASS/FAIL line.

The lines are printed in the terminal summary (see conftest.py) and also to
stdout, so ``pytest -s`` shows them inline.
"""

import math
from decimal import Decimal, localcontext

import numpy as np
import pytest
from numpy.polynomial.hermite import hermgauss

from mvstop import cli
from mvstop.basis import HERMITE_SUP, hermite_functions, make_basis
from mvstop.experiment import DEFAULT_CONFIG
from mvstop.model import RewardSpec, ShimizuYamadaParams, sy_model, sy_reward
from mvstop.oracle import solve_grid
from mvstop.particles import (TEST, chaos_rate, euler_rate, simulate_limit_euler,
                              simulate_particles)
from mvstop.regression import (concentration_experiment, perturbation_constants,
                               perturbation_suite)
from mvstop.stopping import estimate_bounds, evaluate_lower, prmc_backward

BENCH = ShimizuYamadaParams(a=1.0, sigma=0.2, x0=1.0, rate=0.05, strike=0.1, horizon=1.0)
J = 10
STEPS = 10 * J


def _record(log, k, ok, detail):
    line = f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    log.append(line)
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def oracle():
    sol = solve_grid(BENCH, sy_reward(BENCH, J), check_convergence=True)
    assert sol.convergence_gap <= 1e-4
    return sol


@pytest.fixture(scope="module")
def basis():
    return make_basis({"kind": "poly_reward", "degree": 2}, sy_reward(BENCH, J))


def test_criterion_01_chaos_rate(acceptance_log):
    rc = DEFAULT_CONFIG["rates"]
    rep = chaos_rate(BENCH, rc["n_list"], p=2, n_steps=rc["n_steps"], seeds=range(20))
    ok = -0.65 <= rep.slope <= -0.35 and rep.r_squared >= 0.9
    _record(acceptance_log, 1, ok, f"chaos slope={rep.slope:.4f} R2={rep.r_squared:.4f} "
            f"(target [-0.65,-0.35], R2>=0.9)")


def test_criterion_02_euler_rate(acceptance_log):
    deltas = [2.0 ** -k for k in range(3, 9)]
    rep = euler_rate(BENCH, deltas, n_particles=256, seeds=range(20))
    ok = 0.35 <= rep.slope <= 0.65 and rep.r_squared >= 0.9
    _record(acceptance_log, 2, ok, f"Euler slope={rep.slope:.4f} R2={rep.r_squared:.4f} "
            f"(target [0.35,0.65], R2>=0.9)")


def test_criterion_03_pinv_bound(acceptance_log):
    checks = perturbation_suite(1000, seed=0, rho=0.5)
    cond = sum(c.condition_holds for c in checks)
    bad = sum(c.violated for c in checks)
    _record(acceptance_log, 3, cond == 1000 and bad == 0,
            f"{bad} violations in {len(checks)} instances ({cond} satisfy the condition)")


def test_criterion_04_constants(acceptance_log):
    c1, c2 = perturbation_constants(1.0, 1.0, 0.25, 0.25)
    # hand substitution in 40-digit decimal: lambda = 1, eps = rho = 1/4
    with localcontext() as ctx:
        ctx.prec = 40
        top = Decimal(1) + Decimal("0.25")
        ref1 = 1 / Decimal("0.25") + (2 * top + top.sqrt()) / Decimal("0.0625")
        ref2 = ref1 + top.sqrt() / Decimal("0.75")
    e1, e2 = abs(c1 / float(ref1) - 1), abs(c2 / float(ref2) - 1)
    _record(acceptance_log, 4, e1 <= 1e-9 and e2 <= 1e-9,
            f"c1={c1:.10f} c2={c2:.10f} rel.err=({e1:.1e}, {e2:.1e})")


def test_criterion_05_concentration(acceptance_log):
    C = 0.1
    rep = concentration_experiment(d=5, N=2000, M=1.0, delta=0.05, abs_const=C,
                                   n_trials=500, seed=0)
    _record(acceptance_log, 5, rep.exceedance_rate <= 0.05,
            f"exceedance={rep.exceedance_rate:.4f} (<=0.05) with abs_const C={C}, "
            f"eps={rep.epsilon:.5f}, max deviation={rep.max_deviation:.5f}")


def test_criterion_06_hermite(acceptance_log):
    nodes, weights = hermgauss(200)
    w = np.exp(np.log(weights) + nodes ** 2)
    psi = hermite_functions(10, nodes)
    orth = float(np.max(np.abs(psi.T @ (w[:, None] * psi) - np.eye(10))))
    x = np.linspace(-30, 30, 600_001)
    sup = float(np.max(np.abs(hermite_functions(60, x))))
    p0 = abs(hermite_functions(1, [0.0])[0, 0] - math.pi ** -0.25)
    ok = orth <= 1e-8 and sup <= 0.8161 and p0 <= 1e-12 and HERMITE_SUP <= 0.8161
    _record(acceptance_log, 6, ok, f"orthonormality err={orth:.1e}, sup={sup:.6f} (<=0.8161), "
            f"|psi0(0)-pi^-1/4|={p0:.1e}")


def test_criterion_07_oracle_sandwich(acceptance_log, oracle, basis):
    model = sy_model(BENCH)
    rw = sy_reward(BENCH, J)
    train = simulate_particles(model, 2000, STEPS, J, seed=0)
    policy = prmc_backward(train, rw, basis)
    b = estimate_bounds(policy, model, rw, 5000, 100, seed=0)
    v0 = oracle.v0
    ok = (b.lower <= v0 + 3 * b.lower_se and b.upper >= v0 - 3 * b.upper_se
          and b.upper + 3 * b.upper_se >= b.lower - 3 * b.lower_se)
    _record(acceptance_log, 7, ok, f"bounds {b.cell()} vs V0={v0:.6f} "
            f"(oracle self-convergence gap {oracle.convergence_gap:.1e})")


@pytest.fixture(scope="module")
def seed_sweep(basis):
    """Per seed: PRMC lower bounds at each N_tr and RMC lower bounds at 50 and 1000,
    all scored on the seed's one shared particle test set."""
    model = sy_model(BENCH)
    rw = sy_reward(BENCH, J)
    prmc = {n: [] for n in (50, 200, 1000, 4000)}
    rmc = {n: [] for n in (50, 1000)}
    for seed in range(20):
        test = simulate_particles(model, 5000, STEPS, J, seed, purpose=TEST)
        for n in prmc:
            pol = prmc_backward(simulate_particles(model, n, STEPS, J, seed), rw, basis)
            prmc[n].append(evaluate_lower(pol, model, rw, 0, seed, test_paths=test)[0])
        for n in rmc:
            pol = prmc_backward(simulate_limit_euler(BENCH, n, STEPS, J, seed), rw, basis)
            rmc[n].append(evaluate_lower(pol, model, rw, 0, seed, test_paths=test)[0])
    return prmc, rmc


def test_criterion_08_convergence_in_ntr(acceptance_log, oracle, seed_sweep):
    prmc, _ = seed_sweep
    sizes = sorted(prmc)
    med = [float(np.median(np.abs(np.array(prmc[n]) - oracle.v0))) for n in sizes]
    tol = 0.1 * max(med)
    rises = [b - a for a, b in zip(med, med[1:]) if b > a]
    ok = len(rises) == 0 or (len(rises) == 1 and rises[0] <= tol)
    detail = ", ".join(f"{n}:{m:.5f}" for n, m in zip(sizes, med))
    _record(acceptance_log, 8, ok, f"median |lower-V0| by N_tr {detail}")


def test_criterion_09_rmc_prmc_gap(acceptance_log, seed_sweep):
    prmc, rmc = seed_sweep
    gap = {n: float(np.median(np.abs(np.array(rmc[n]) - np.array(prmc[n])))) for n in rmc}
    _record(acceptance_log, 9, gap[1000] <= 0.5 * gap[50],
            f"median |RMC-PRMC| gap N_tr=50: {gap[50]:.6f}, N_tr=1000: {gap[1000]:.6f}")


def test_criterion_10_determinism(acceptance_log, tmp_path):
    outs = []
    for workers in (1, 8):
        out = tmp_path / f"w{workers}"
        assert cli.main(["table", "--seed", "3", "--workers", str(workers),
                         "--out", str(out)]) == 0
        outs.append((out / "table.csv").read_bytes())
    _record(acceptance_log, 10, outs[0] == outs[1],
            f"table.csv at 1 and 8 workers byte-identical ({len(outs[0])} bytes)")


def test_criterion_11_degenerate_suites(acceptance_log, basis):
    # single exercise date: no regression, lower is the mean reward
    model = sy_model(BENCH)
    rw1 = sy_reward(BENCH, 1)
    pol1 = prmc_backward(simulate_particles(model, 50, 10, 1, seed=0), rw1, basis)
    test = simulate_particles(model, 5000, 10, 1, seed=1, purpose=TEST)
    b1 = estimate_bounds(pol1, model, rw1, 5000, 100, seed=1, test_paths=test)
    mean_g = float(rw1(1, test.at_dates()[:, 1]).mean())
    collapse = (abs(b1.lower - mean_g) <= 1e-14
                and abs(b1.upper - b1.lower) <= 3 * math.hypot(b1.lower_se, b1.upper_se))
    # zero volatility: every state is x0, bitwise
    flat = ShimizuYamadaParams(sigma=0.0)
    still = simulate_particles(sy_model(flat), 100, 50, 5, seed=0)
    frozen = bool(np.all(still.states == flat.x0))
    # constant reward with no discounting
    c = 0.37
    rwc = RewardSpec(J, lambda j, x: np.full(x.shape[0], c))
    polc = prmc_backward(simulate_particles(model, 200, STEPS, J, seed=0), rwc,
                         make_basis({"kind": "poly_reward", "degree": 2})(1))
    bc = estimate_bounds(polc, model, rwc, 1000, 20, seed=2)
    const = (abs(bc.lower - c) <= 1e-12 and abs(bc.upper - c) <= 1e-12
             and bc.lower_se <= 1e-12 and bc.upper_se <= 1e-12)
    _record(acceptance_log, 11, collapse and frozen and const,
            f"J=1 collapse {b1.cell()} mean g1={mean_g:.6f}: {collapse}; "
            f"sigma=0 frozen: {frozen}; constant reward {bc.cell()}: {const}")
