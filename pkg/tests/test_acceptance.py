"""Acceptance gate: one test per criterion, each printing a PASS line.

Criteria 7 and 8 execute real discovery/ablation training runs (marked
`slow`); on a two-core machine expect the full module to take around an
hour.  Everything else completes in seconds.
"""

import concurrent.futures as cf
import multiprocessing as mp
import time

import numpy as np
import pytest
import torch

from lyasearch import dynamics as dyn
from lyasearch import expr as ex
from lyasearch.certifier import certify
from lyasearch.falsifier import FalsifierSettings, shgo_minimize, verify_candidate
from lyasearch.presets import desk_config_for
from lyasearch.reward import reward_from_risk, lyapunov_risk
from lyasearch.trainer import risk_surrogate_loss, train

FAST_FALSIFY = FalsifierSettings(shgo_points=512, shgo_iterations=2,
                                 n_local=300, n_random=300)


def report(criterion, ok, detail=""):
    print(f"ACCEPTANCE {criterion}: {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, f"criterion {criterion} failed: {detail}"


# ---------------------------------------------------------------------------
# 1. expression-core property batteries, under 30 seconds

def test_criterion_1_expression_core_properties(rng):
    t0 = time.monotonic()
    # exact prefix round trip over 1000 random trees
    for _ in range(1000):
        n = int(rng.integers(1, 5))
        e = ex.random_expr(rng, n, max_depth=8, constants=True)
        assert ex.parse_prefix(ex.to_prefix(e), n) == e

    # symbolic vs central finite differences, rel err < 1e-6
    h = 1e-5
    for _ in range(50):
        n = int(rng.integers(1, 4))
        e = ex.random_expr(rng, n, max_depth=4, constants=False)
        pts = rng.uniform(-1.0, 1.0, size=(10, n))
        for i in range(1, n + 1):
            d = ex.diff(e, i)
            hi, lo = pts.copy(), pts.copy()
            hi[:, i - 1] += h
            lo[:, i - 1] -= h
            fd = (ex.eval_batch(e, hi) - ex.eval_batch(e, lo)) / (2 * h)
            an = ex.eval_batch(d, pts)
            assert (np.abs(an - fd) / (1.0 + np.abs(an))).max() < 1e-6

    # simplify preserves evaluation to 1e-12 relative
    for _ in range(100):
        n = int(rng.integers(1, 4))
        e = ex.random_expr(rng, n, max_depth=6, constants=True)
        s = ex.simplify(e)
        pts = rng.uniform(-1.5, 1.5, size=(100, n))
        a, b = ex.eval_batch(e, pts), ex.eval_batch(s, pts)
        finite = np.isfinite(a)
        assert np.all(np.abs(a[finite] - b[finite]) <= 1e-12 * (1 + np.abs(a[finite])))

    elapsed = time.monotonic() - t0
    report(1, elapsed < 30.0,
           f"(round-trip, gradient, simplify batteries in {elapsed:.1f}s)")


# ---------------------------------------------------------------------------
# 2. Lie-derivative closed-form fixtures

def test_criterion_2_lie_derivative_fixtures(rng, pendulum, trig_3d,
                                             pendulum_energy, trig_textbook_v):
    pts = dyn.sample_domain(pendulum.domain, 1000, rng)
    got = ex.eval_batch(ex.lie_derivative(pendulum_energy, pendulum), pts)
    want = -0.2 * pts[:, 1] ** 2
    ok1 = np.all(np.abs(got - want) <= 1e-9 * (1 + np.abs(want)))

    pts3 = dyn.sample_domain(trig_3d.domain, 1000, rng)
    got3 = ex.eval_batch(ex.lie_derivative(trig_textbook_v, trig_3d), pts3)
    want3 = -2 * pts3[:, 1] ** 2 - pts3[:, 2] * np.sin(2 * pts3[:, 2])
    ok2 = np.all(np.abs(got3 - want3) <= 1e-9 * (1 + np.abs(want3)))
    report(2, ok1 and ok2,
           "(pendulum energy -> -0.2 x2^2; 3-D trig -> -2x2^2 - x3 sin(2x3))")


# ---------------------------------------------------------------------------
# 3. reward contract, exact

def test_criterion_3_reward_contract(rng, van_der_pol):
    ok = reward_from_risk(0.0, True) == 1.0
    ok &= reward_from_risk(1.0, True) == 0.5
    # missing-variable candidate scores exactly 0
    missing = ex.mul(ex.var(1), ex.var(1))
    from lyasearch.reward import reward

    X = dyn.sample_domain(van_der_pol.domain, 20, rng)
    ok &= reward(missing, van_der_pol, X,
                 valid=ex.depends_on_all_vars(missing, 2)) == 0.0
    # range check over random candidates
    for _ in range(50):
        V = ex.random_expr(rng, 2, max_depth=5)
        r = reward_from_risk(lyapunov_risk(V, van_der_pol, X), True)
        ok &= 0.0 <= r <= 1.0
    report(3, ok, "(1/(1+risk) mapping, zeros for invalid, [0,1] bounds)")


# ---------------------------------------------------------------------------
# 4. risk-seeking gradient estimator vs finite differences

def test_criterion_4_risk_seeking_estimator():
    torch.manual_seed(1)
    theta = torch.randn(2, 3, dtype=torch.float64, requires_grad=True)
    seqs = [(0, 1), (1, 2), (2, 0), (0, 0), (1, 1), (2, 2)]
    rewards = np.array([0.95, 0.8, 0.55, 0.4, 0.2, 0.05])
    alpha = 0.4

    def totals(t):
        logp = torch.log_softmax(t, dim=-1)
        return torch.stack([logp[0, a] + logp[1, b] for a, b in seqs])

    loss, thresh = risk_surrogate_loss(totals(theta), rewards, alpha)
    grad = torch.autograd.grad(loss, theta)[0]
    worst = 0.0
    h = 1e-6
    for i in range(2):
        for j in range(3):
            tp = theta.detach().clone()
            tp[i, j] += h
            tm = theta.detach().clone()
            tm[i, j] -= h
            lp, _ = risk_surrogate_loss(totals(tp), rewards, alpha)
            lm, _ = risk_surrogate_loss(totals(tm), rewards, alpha)
            fd = (lp.item() - lm.item()) / (2 * h)
            worst = max(worst, abs(fd - grad[i, j].item()) / (1 + abs(fd)))
    ok = worst < 1e-3

    # below-threshold candidates contribute exactly zero
    base = torch.tensor([-1.0, -2.0, -3.0], dtype=torch.float64,
                        requires_grad=True)
    loss2, t2 = risk_surrogate_loss(base, np.array([0.9, 0.8, 0.1]), 0.5)
    g2 = torch.autograd.grad(loss2, base)[0]
    ok &= t2 == 0.8 and g2[2].item() == 0.0
    report(4, ok, f"(toy-policy FD rel err {worst:.2e}; indicator zeroing exact)")


# ---------------------------------------------------------------------------
# 5. falsifier oracle suite

def test_criterion_5_falsifier_oracles(rng, van_der_pol, quad2):
    # multimodal fixtures with dense-grid oracles
    ok = True
    for n, per_dim in ((2, 1000), (4, 32), (6, 10)):
        gen = np.random.default_rng(n)
        centers = gen.uniform(-0.6, 0.6, size=(4, n))
        depths = np.array([1.0, 1.4, 1.9, 2.5])
        sig2 = 0.05

        def f(pts):
            d2 = ((pts[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
            return -(depths * np.exp(-d2 / (2 * sig2))).sum(axis=1)

        def g(pts):
            d2 = ((pts[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
            w = depths * np.exp(-d2 / (2 * sig2)) / sig2
            return (w[:, :, None] * (pts[:, None, :] - centers[None, :, :])).sum(1)

        domain = dyn.Domain.cube(1.0, n)
        axes = [np.linspace(-1, 1, per_dim)] * n
        grid = np.stack(np.meshgrid(*axes), -1).reshape(-1, n)
        oracle = f(grid).min()
        _, val = shgo_minimize((f, g), domain, n_starts=2048, iterations=3,
                               seed=n)
        ok &= val <= oracle + 1e-4

    # the sampled-candidate scenario: (x1+x2)^2 + x2 is falsified with
    # genuine counterexamples
    V_bad = dyn.parse_infix("(x1 + x2)*(x1 + x2) + x2", 2)
    rep = verify_candidate(V_bad, van_der_pol, 0.05, rng, settings=FAST_FALSIFY)
    ok &= rep.verdict == "violated" and rep.counterexamples.shape[0] > 0
    L = ex.lie_derivative(V_bad, van_der_pol)
    vv = ex.eval_batch(V_bad, rep.counterexamples)
    lv = ex.eval_batch(L, rep.counterexamples)
    ok &= bool(np.all((vv <= 0.0) | (lv >= 0.0)))

    # and the true certificate is not falsified
    rep2 = verify_candidate(quad2, van_der_pol, 0.05, rng, settings=FAST_FALSIFY)
    ok &= rep2.verdict == "numerically-valid"
    report(5, ok, "(grid-oracle minima to 1e-4 up to 6-D; counterexamples re-check)")


# ---------------------------------------------------------------------------
# 6. certifier soundness

def test_criterion_6_certifier_soundness(rng, van_der_pol, saddle, quad2):
    t0 = time.monotonic()
    cert = certify(quad2, van_der_pol, eps=1e-3, delta=1e-12)
    vdp_time = time.monotonic() - t0
    ok = cert.certified and vdp_time <= 10.0

    cert2 = certify(quad2, saddle, eps=1e-3, delta=1e-12)
    ok &= cert2.verdict == "counterexample"

    # zero false certificates against 10^6-point grid oracles
    fixtures = [
        (quad2, van_der_pol),
        (dyn.parse_infix("(x1 + x2)*(x1 + x2) + x2", 2), van_der_pol),
        (quad2, saddle),
        (dyn.parse_infix("x1*x1 - x2*x2", 2), van_der_pol),
        (dyn.parse_infix("9*x1*x1 + 2*x2*x2", 2), dyn.benchmark("poly_2d")),
        (dyn.parse_infix("x1*x1 + x2*x2 - 1.2*x1*x1*x1", 2), van_der_pol),
        (dyn.parse_infix("2*(1 - cos(x1)) + x2*x2", 2), dyn.benchmark("pendulum")),
    ]
    for V, system in fixtures:
        c = certify(V, system, budget_seconds=10)
        if not c.certified:
            continue
        L = ex.lie_derivative(V, system)
        axes = [np.linspace(a, b, 1000) for a, b in
                zip(system.domain.lower, system.domain.upper)]
        pts = np.stack(np.meshgrid(*axes), -1).reshape(-1, system.dim)
        pts = pts[np.linalg.norm(pts, axis=1) > c.eps]
        ok &= ex.eval_batch(V, pts).min() > c.delta
        ok &= ex.eval_batch(L, pts).max() < c.delta
    report(6, ok, f"(Van der Pol certified in {vdp_time:.2f}s; saddle rejected;"
                  " no false certificates on the fixture suite)")


# ---------------------------------------------------------------------------
# 7. end-to-end rediscovery at desk scale (slow)

REDISCOVERY_SYSTEMS = ("van_der_pol", "poly_2d", "pendulum", "trig_3d")
SEEDS = (0, 1, 2, 3, 4)
RUN_LIMIT_S = 1800.0


def _discover(job):
    system_name, seed = job
    torch.set_num_threads(1)
    cfg = desk_config_for(system_name, seed=seed, wall_clock=RUN_LIMIT_S - 120)
    t0 = time.monotonic()
    out = train(dyn.benchmark(system_name), cfg, log=lambda *_: None)
    elapsed = time.monotonic() - t0
    found = out.found and elapsed <= RUN_LIMIT_S
    expr_str = ex.to_infix(out.expression) if out.found else None
    return system_name, seed, found, elapsed, expr_str


@pytest.mark.slow
def test_criterion_7_end_to_end_rediscovery():
    jobs = [(s, k) for s in REDISCOVERY_SYSTEMS for k in SEEDS]
    results = {}
    ctx = mp.get_context("spawn")
    with cf.ProcessPoolExecutor(max_workers=2, mp_context=ctx) as pool:
        for system, seed, found, elapsed, expr_str in pool.map(_discover, jobs):
            results.setdefault(system, []).append((seed, found, elapsed, expr_str))
            print(f"  {system} seed {seed}: "
                  f"{'found ' + expr_str if found else 'not found'}"
                  f" ({elapsed:.0f}s)")
    ok = True
    detail = []
    for system in REDISCOVERY_SYSTEMS:
        hits = sum(1 for _, found, _, _ in results[system] if found)
        detail.append(f"{system} {hits}/5")
        ok &= hits >= 3
    report(7, ok, "(" + ", ".join(detail) + ")")


# ---------------------------------------------------------------------------
# 8. directional ablations (slow)

def _ablation_alpha(job):
    alpha, seed = job
    torch.set_num_threads(1)
    cfg = desk_config_for("trig_3d", seed=seed, epochs=10, wall_clock=600,
                          alpha=alpha, gp_refine=False, expert_guidance=False,
                          verify_top_m=2)
    out = train(dyn.benchmark("trig_3d"), cfg, log=lambda *_: None)
    end = out.records[-1].best_reward if out.records else 0.0
    if out.found:
        end = 1.0
    return alpha, seed, end


@pytest.mark.slow
def test_criterion_8_ablations():
    # (a) risk-seeking quantile: alpha = 0.1 beats vanilla alpha = 1 on the
    # 3-D trig system, averaged over 3 seeds (best-reward trajectory endpoint)
    jobs = [(a, s) for a in (0.1, 1.0) for s in (0, 1, 2)]
    ctx = mp.get_context("spawn")
    ends = {0.1: [], 1.0: []}
    with cf.ProcessPoolExecutor(max_workers=2, mp_context=ctx) as pool:
        for alpha, seed, end in pool.map(_ablation_alpha, jobs):
            ends[alpha].append(end)
            print(f"  alpha={alpha} seed={seed}: endpoint {end:.4f}")
    mean_01 = float(np.mean(ends[0.1]))
    mean_10 = float(np.mean(ends[1.0]))
    ok_a = mean_01 > mean_10

    # (b) GP-only fails to certify within the budget the full pipeline
    # succeeds under, on the 2-D suite
    torch.set_num_threads(2)
    full_cfg = desk_config_for("van_der_pol", seed=0, epochs=40, wall_clock=900)
    full = train(dyn.benchmark("van_der_pol"), full_cfg, log=lambda *_: None)
    gp_cfg = desk_config_for("van_der_pol", seed=0, epochs=40, wall_clock=900,
                             gp_only=True, expert_guidance=False)
    gp_only = train(dyn.benchmark("van_der_pol"), gp_cfg, log=lambda *_: None)
    ok_b = full.found and not gp_only.found
    report(8, ok_a and ok_b,
           f"(alpha endpoints {mean_01:.3f} vs {mean_10:.3f}; "
           f"full found={full.found}, gp-only found={gp_only.found})")


# ---------------------------------------------------------------------------
# 9. exclusions

def test_criterion_9_out_of_gate_items():
    # Wall-clock parity with the reference hardware, success rates of the
    # 6-D/8-D/9-D/10-D systems (hour-scale searches offered as an optional
    # extended suite), SMT-solver timing studies, and external baseline
    # comparisons are explicitly outside this gate.
    report(9, True, "(runtime parity and hour-scale suites excluded by design)")
