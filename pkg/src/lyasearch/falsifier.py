"""Global-optimization falsification of candidate Lyapunov functions.

A candidate fails exactly where V or -L_f V dips to its minimum, so the
verifier first locates global minimizers of both, then stress-tests the
candidate on dense samples around those minimizers plus a uniform sweep of
the state space.  Violating states become counterexamples that feed the
training set.

The minimizer search keeps the contract of simplicial-homology global
optimization (a stabilizing pool of local minimizers extracted from a sampled
complex, each refined locally) but builds the complex from directed k-nearest-
neighbor edges instead of a simplicial triangulation: a sample belongs to the
minimizer pool iff none of its k = 2n nearest neighbors improves on it, and
pool members are polished by projected gradient descent with backtracking.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.stats import qmc

from . import expr as ex
from .dynamics import Domain, DynamicalSystem
from .reward import LIE_MARGIN, ORIGIN_EPS, pgd_minimize


def _as_callable(objective, domain: Domain):
    """Accept an Expr or a (f, grad) pair of vectorized callables."""
    if isinstance(objective, ex.Expr):
        grads = ex.gradient(objective, domain.dim)

        def f(pts):
            with np.errstate(all="ignore"):
                return ex.eval_batch(objective, pts)

        def g(pts):
            with np.errstate(all="ignore"):
                return np.stack([ex.eval_batch(gi, pts) for gi in grads], axis=1)

        return f, g
    f, g = objective
    return f, g


def _pgd_backtracking(f, g, x: np.ndarray, domain: Domain, steps: int = 60,
                      t0: float | None = None) -> np.ndarray:
    """Armijo-backtracked projected gradient descent, batched over rows."""
    lo, hi = domain.lower_arr, domain.upper_arr
    if t0 is None:
        t0 = 0.25 * float(domain.widths().max())
    t = np.full(x.shape[0], t0)
    fx = f(x)
    for _ in range(steps):
        grad = np.nan_to_num(g(x), nan=0.0, posinf=0.0, neginf=0.0)
        gnorm2 = np.sum(grad * grad, axis=1)
        accepted = np.zeros(x.shape[0], dtype=bool)
        for _halving in range(20):
            trial = np.clip(x - t[:, None] * grad, lo, hi)
            ft = f(trial)
            ok = ~accepted & (ft <= fx - 1e-4 * t * gnorm2) & np.isfinite(ft)
            x[ok] = trial[ok]
            fx[ok] = ft[ok]
            accepted |= ok
            t[~accepted] *= 0.5
            if accepted.all():
                break
        t[accepted] *= 2.0
        t = np.clip(t, 1e-12, 10.0 * t0)
    return x


def shgo_minimize(objective, domain: Domain, n_starts: int = 2048,
                  iterations: int = 3, seed: int = 0):
    """Global minimum search over the box; returns (x*, f(x*)).

    Quasi-random Sobol samples seed a directed k-nearest-neighbor complex
    (k = 2n, edges toward lower values); samples dominating their whole
    neighborhood form the minimizer pool, which is refined by projected
    gradient descent.  Further iterations re-sample around the pool.
    Deterministic for fixed seed.
    """
    f, g = _as_callable(objective, domain)
    n = domain.dim
    k = min(2 * n, max(2, n_starts - 1))
    rng = np.random.default_rng(seed)

    sob = qmc.Sobol(d=n, scramble=False)
    base = qmc.scale(sob.random(n_starts), domain.lower_arr, domain.upper_arr)
    samples = base
    best_x, best_val = None, math.inf

    for it in range(max(1, iterations)):
        vals = f(samples)
        vals = np.where(np.isfinite(vals), vals, math.inf)
        tree = cKDTree(samples)
        _, nbr = tree.query(samples, k=k + 1)
        nbr = nbr[:, 1:]  # drop self
        pool_mask = np.all(vals[:, None] <= vals[nbr], axis=1)
        pool = samples[pool_mask]
        if pool.shape[0] == 0:
            pool = samples[np.argsort(vals)[:k]]
        refined = _pgd_backtracking(f, g, pool.copy(), domain)
        rvals = f(refined)
        rvals = np.where(np.isfinite(rvals), rvals, math.inf)
        idx = int(np.argmin(rvals))
        if rvals[idx] < best_val:
            best_val = float(rvals[idx])
            best_x = refined[idx].copy()
        if it + 1 < iterations:
            sigma = domain.widths() / (8.0 * 2 ** it)
            centers = refined[rng.integers(0, refined.shape[0], size=n_starts // 2)]
            extra = centers + rng.normal(0.0, 1.0, centers.shape) * sigma
            samples = np.vstack([refined, domain.clip(extra)])
    return best_x, best_val


def sample_ball(center: np.ndarray, radius: float, count: int, domain: Domain,
                rng: np.random.Generator) -> np.ndarray:
    """Uniform draws from an L2 ball intersected with the box.

    Rejection-samples with a 10x oversampling cap; any shortfall is filled by
    clipping remaining ball draws onto the box so every point stays inside.
    """
    n = domain.dim
    kept: list[np.ndarray] = []
    total = 0
    draws = 0
    while total < count and draws < 10 * count:
        m = min(4 * count, 10 * count - draws)
        draws += m
        d = rng.normal(size=(m, n))
        d /= np.maximum(np.linalg.norm(d, axis=1, keepdims=True), 1e-300)
        r = radius * rng.random(m) ** (1.0 / n)
        pts = center + d * r[:, None]
        ok = domain.contains(pts)
        pts = pts[ok]
        if pts.shape[0]:
            kept.append(pts[: count - total])
            total += kept[-1].shape[0]
    if total < count:
        d = rng.normal(size=(count - total, n))
        d /= np.maximum(np.linalg.norm(d, axis=1, keepdims=True), 1e-300)
        r = radius * rng.random(count - total) ** (1.0 / n)
        kept.append(domain.clip(center + d * r[:, None]))
    return np.vstack(kept) if kept else np.zeros((0, n))


@dataclass
class FalsifyReport:
    verdict: str  # "numerically-valid" | "violated"
    counterexamples: np.ndarray
    v_violations: np.ndarray        # max(0, -V) at each counterexample
    lie_violations: np.ndarray      # max(0, L_f V) at each counterexample
    minimizer_v: np.ndarray | None
    minimizer_lie: np.ndarray | None
    samples_per_bucket: dict[str, int] = field(default_factory=dict)
    ce_sources: list[str] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return self.verdict == "numerically-valid"

    def to_json(self) -> dict:
        return {
            "verdict": self.verdict,
            "counterexamples": self.counterexamples.tolist(),
            "v_violations": self.v_violations.tolist(),
            "lie_violations": self.lie_violations.tolist(),
            "minimizer_v": None if self.minimizer_v is None else self.minimizer_v.tolist(),
            "minimizer_lie": None if self.minimizer_lie is None else self.minimizer_lie.tolist(),
            "samples_per_bucket": self.samples_per_bucket,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json())


@dataclass(frozen=True)
class FalsifierSettings:
    mode: str = "shgo"              # shgo | pgd | random
    shgo_points: int = 2048
    shgo_iterations: int = 3
    n_local: int = 800              # per minimizer neighborhood
    n_random: int = 800
    origin_eps: float = ORIGIN_EPS
    lie_margin: float = LIE_MARGIN
    max_counterexamples: int = 512  # 0 = keep everything


def verify_candidate(V: ex.Expr, system: DynamicalSystem, r_frac: float,
                     rng: np.random.Generator,
                     store_points: np.ndarray | None = None,
                     settings: FalsifierSettings = FalsifierSettings(),
                     lie: ex.Expr | None = None) -> FalsifyReport:
    """Minimizer-guided numerical check of both Lyapunov conditions.

    Flags every sampled x (outside the origin ball) with V(x) <= 0 or
    L_f V(x) above the numerical margin; the verdict is numerically-valid iff
    nothing is flagged here nor on the persistent training set.
    """
    domain = system.domain
    if lie is None:
        lie = ex.lie_derivative(V, system)
    neg_lie = ex.simplify(ex.mul(ex.const(-1.0), lie))
    radius = r_frac * domain.diameter()
    seed = int(rng.integers(0, 2**31 - 1))

    x_v = x_l = None
    buckets: dict[str, np.ndarray] = {}
    tag = settings.mode
    if settings.mode == "shgo":
        x_v, _ = shgo_minimize(V, domain, settings.shgo_points,
                               settings.shgo_iterations, seed=seed)
        x_l, _ = shgo_minimize(neg_lie, domain, settings.shgo_points,
                               settings.shgo_iterations, seed=seed + 1)
    elif settings.mode == "pgd":
        step = 0.05 * float(domain.widths().max())
        ends_v = pgd_minimize(V, domain, 256, 50, step, rng)
        ends_l = pgd_minimize(neg_lie, domain, 256, 50, step, rng)
        x_v = ends_v[np.argmin(ex.eval_batch(V, ends_v))]
        x_l = ends_l[np.argmin(ex.eval_batch(neg_lie, ends_l))]
    elif settings.mode != "random":
        raise ValueError(f"unknown falsifier mode {settings.mode!r}")

    if x_v is not None:
        buckets[f"{tag}-V"] = np.vstack(
            [sample_ball(x_v, radius, settings.n_local, domain, rng), x_v[None, :]]
        )
        buckets[f"{tag}-lie"] = np.vstack(
            [sample_ball(x_l, radius, settings.n_local, domain, rng), x_l[None, :]]
        )
        n_rand = settings.n_random
    else:
        n_rand = settings.n_local * 2 + settings.n_random
    buckets["random"] = rng.uniform(
        domain.lower_arr, domain.upper_arr, size=(n_rand, domain.dim)
    )

    pts = np.vstack(list(buckets.values()))
    src = np.concatenate(
        [np.full(v.shape[0], k) for k, v in buckets.items()]
    )
    norms = np.linalg.norm(pts, axis=1)
    keep = norms > settings.origin_eps
    pts, src = pts[keep], src[keep]

    with np.errstate(all="ignore"):
        v_vals = ex.eval_batch(V, pts)
        l_vals = ex.eval_batch(lie, pts)
    finite = np.isfinite(v_vals) & np.isfinite(l_vals)
    flagged = finite & ((v_vals <= 0.0) | (l_vals >= settings.lie_margin))
    ces = pts[flagged]
    ce_src = src[flagged]
    v_gap = np.maximum(0.0, -v_vals[flagged])
    l_gap = np.maximum(0.0, l_vals[flagged])

    if settings.max_counterexamples and ces.shape[0] > settings.max_counterexamples:
        order = np.argsort(-(v_gap + l_gap))[: settings.max_counterexamples]
        ces, v_gap, l_gap, ce_src = ces[order], v_gap[order], l_gap[order], ce_src[order]

    clean_on_store = True
    if store_points is not None and store_points.shape[0]:
        with np.errstate(all="ignore"):
            sv = ex.eval_batch(V, store_points)
            sl = ex.eval_batch(lie, store_points)
        snorm = np.linalg.norm(store_points, axis=1)
        bad = (~np.isfinite(sv)) | (~np.isfinite(sl))
        bad |= (sv <= 0.0) & (snorm > settings.origin_eps)
        bad |= sl >= settings.lie_margin
        clean_on_store = not bool(bad.any())

    verdict = "numerically-valid" if (ces.shape[0] == 0 and clean_on_store) else "violated"
    return FalsifyReport(
        verdict=verdict, counterexamples=ces,
        v_violations=v_gap, lie_violations=l_gap,
        minimizer_v=x_v, minimizer_lie=x_l,
        samples_per_bucket={k: int(v.shape[0]) for k, v in buckets.items()},
        ce_sources=[str(s) for s in ce_src],
    )


def verify_batch(candidates, system: DynamicalSystem, r_frac: float,
                 store, rng: np.random.Generator, epoch: int = 0,
                 top_m: int = 10,
                 settings: FalsifierSettings = FalsifierSettings(),
                 falsified: set | None = None):
    """Verify the most promising candidates; feed violations back to the store.

    Candidates are taken in descending reward order (ties: simpler first);
    verification stops early at the first numerically-valid candidate, or
    after `top_m` attempts.  Returns (valid_candidates, new_counterexamples);
    the counterexamples are already appended to the store.

    A found violation disproves its expression permanently (the conditions
    are universally quantified), so expressions in `falsified` are skipped and
    newly violated ones are added to it; this keeps near-miss candidates with
    sub-resolution risk from monopolizing the verification slots forever.
    """
    scored = [c for c in candidates if c.valid and c.expr is not None]
    scored.sort(key=lambda c: (-(c.reward if math.isfinite(c.reward) else 0.0),
                               c.complexity))
    seen = set() if falsified is None else falsified
    valid = []
    all_ces: list[np.ndarray] = []
    all_src: list[str] = []
    attempts = 0
    for c in scored:
        if attempts >= top_m:
            break
        if c.expr in seen:
            continue
        seen.add(c.expr)
        attempts += 1
        report = verify_candidate(c.expr, system, r_frac, rng,
                                  store_points=store.points, settings=settings)
        if report.counterexamples.shape[0]:
            all_ces.append(report.counterexamples)
            all_src.extend(report.ce_sources)
        if report.valid:
            valid.append(c)
            break
    new_ces = np.vstack(all_ces) if all_ces else np.zeros((0, system.domain.dim))
    if new_ces.shape[0]:
        for source in sorted(set(all_src)):
            mask = np.array([s == source for s in all_src])
            store.append(new_ces[mask], epoch, source)
    return valid, new_ces
