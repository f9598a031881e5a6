"""Lyapunov risk, bounded reward, and the PGD sharpening pass.

The risk of a candidate V over a point set X is the averaged hinge penalty
    (1/N) sum_i [ max(0, L_f V(x_i)) + max(0, -V(x_i)) ]
computed with the exact symbolic Lie derivative.  Rewards map risk through
1/(1+risk) into [0, 1]; candidates that are incomplete, miss a state variable,
or evaluate non-finitely score exactly 0.

Before scoring a batch, projected gradient descent hunts for near-minimizers
of each valid candidate's V and -L_f V; violating points join a temporary
copy of the training set for the duration of the batch, keeping the reward
signal sharp without permanently growing the store.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import expr as ex
from .dynamics import Domain, DynamicalSystem

# treat Lie-derivative values below this as "not a violation": semidefinite
# certificates sit exactly on 0 along invariant sets and float noise must not
# flag them
LIE_MARGIN = 1e-12
ORIGIN_EPS = 1e-3


class CounterexampleStore:
    """Growing training set of states where Lyapunov conditions failed.

    Points are kept inside the domain box; growth is append-only (the PGD
    pre-pass never writes here, its points are batch-temporary).
    """

    def __init__(self, domain: Domain):
        self.domain = domain
        self._points = np.zeros((0, domain.dim))
        self.log: list[tuple[int, str, int]] = []  # (epoch, source, count)

    @property
    def points(self) -> np.ndarray:
        return self._points

    def __len__(self) -> int:
        return self._points.shape[0]

    def append(self, points: np.ndarray, epoch: int, source: str):
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if pts.shape[0] == 0:
            return
        if pts.shape[1] != self.domain.dim:
            raise ValueError("point dimension mismatch")
        inside = self.domain.contains(pts, atol=1e-12)
        if not inside.all():
            raise ValueError("counterexamples must lie inside the domain box")
        self._points = np.vstack([self._points, pts])
        self.log.append((epoch, source, pts.shape[0]))

    def save(self, path):
        np.savez(path, points=self._points,
                 log=np.array(self.log, dtype=object), allow_pickle=True)

    @classmethod
    def load(cls, path, domain: Domain) -> "CounterexampleStore":
        data = np.load(path, allow_pickle=True)
        store = cls(domain)
        pts = data["points"]
        if pts.size:
            store._points = pts
        store.log = [tuple(row) for row in data["log"]]
        return store


def lyapunov_risk(V: ex.Expr, system: DynamicalSystem, X: np.ndarray,
                  lie: ex.Expr | None = None) -> float:
    """Averaged hinge violation of the two Lyapunov conditions over X.

    Non-finite evaluations anywhere make the risk +inf.
    """
    X = np.atleast_2d(X)
    if X.shape[0] == 0:
        raise ValueError("risk needs a non-empty point set")
    if lie is None:
        lie = ex.lie_derivative(V, system)
    v_vals = ex.eval_batch(V, X)
    l_vals = ex.eval_batch(lie, X)
    if not (np.isfinite(v_vals).all() and np.isfinite(l_vals).all()):
        return math.inf
    return float(np.mean(np.maximum(0.0, l_vals) + np.maximum(0.0, -v_vals)))


def reward_from_risk(risk: float, valid: bool) -> float:
    if not valid or not math.isfinite(risk):
        return 0.0
    return 1.0 / (1.0 + risk)


def reward(V: ex.Expr | None, system: DynamicalSystem, X: np.ndarray,
           valid: bool) -> float:
    """Bounded reward in [0, 1]; exactly 0 for invalid candidates."""
    if not valid or V is None:
        return 0.0
    return reward_from_risk(lyapunov_risk(V, system, X), True)


@dataclass(frozen=True)
class PGDSettings:
    starts: int = 256
    steps: int = 50
    step_frac: float = 0.05  # of the widest box side
    temp_keep: int = 8       # worst violating end points kept per candidate
                             # per objective for the temporary scoring set

    def step_size(self, domain: Domain) -> float:
        return self.step_frac * float(domain.widths().max())


def pgd_minimize(e: ex.Expr, domain: Domain, starts: int, steps: int,
                 step_size: float, rng: np.random.Generator) -> np.ndarray:
    """Box-projected gradient descent from uniform starts; returns end points."""
    n = domain.dim
    grads = ex.gradient(e, n)
    x = rng.uniform(domain.lower_arr, domain.upper_arr, size=(starts, n))
    lo, hi = domain.lower_arr, domain.upper_arr
    for _ in range(steps):
        g = np.stack([ex.eval_batch(gi, x) for gi in grads], axis=1)
        g = np.nan_to_num(g, nan=0.0, posinf=0.0, neginf=0.0)
        x = np.clip(x - step_size * g, lo, hi)
    return x


def _violations(V: ex.Expr, lie: ex.Expr, points: np.ndarray,
                origin_eps: float = ORIGIN_EPS,
                lie_margin: float = LIE_MARGIN,
                keep: int = 0) -> np.ndarray:
    """Subset of `points` where a Lyapunov condition fails.

    V <= 0 counts only outside the origin ball (V(0) = 0 by construction);
    the Lie condition uses a tiny positive margin so that exact-zero values
    on invariant sets of semidefinite certificates are not flagged.  With
    `keep` > 0 only the worst `keep` violations (by hinge magnitude) return.
    """
    with np.errstate(all="ignore"):
        v_vals = ex.eval_batch(V, points)
        l_vals = ex.eval_batch(lie, points)
    norms = np.linalg.norm(points, axis=1)
    bad_v = (v_vals <= 0.0) & (norms > origin_eps)
    bad_l = l_vals >= lie_margin
    mask = (bad_v | bad_l) & np.isfinite(v_vals) & np.isfinite(l_vals)
    out = points[mask]
    if keep and out.shape[0] > keep:
        severity = np.maximum(0.0, -v_vals[mask]) + np.maximum(0.0, l_vals[mask])
        out = out[np.argsort(-severity)[:keep]]
    return out


def score_batch(candidates, system: DynamicalSystem, store: CounterexampleStore,
                pgd: PGDSettings, rng: np.random.Generator,
                use_pgd: bool = True) -> np.ndarray:
    """Fill in rewards for a candidate batch; the store itself is untouched.

    PGD runs once per distinct valid expression (batches repeat candidates
    heavily once the policy sharpens); all violating end points are pooled
    into one temporary training set used to score every candidate.
    """
    X = store.points
    if X.shape[0] == 0:
        raise ValueError("store must hold at least the initial random points")
    step = pgd.step_size(system.domain)

    unique: dict = {}
    for c in candidates:
        if c.valid and c.expr is not None:
            key = c.expr
            if key not in unique:
                unique[key] = ex.lie_derivative(c.expr, system)

    temp: list[np.ndarray] = []
    if use_pgd:
        for V, lie in unique.items():
            neg_lie = ex.simplify(ex.mul(ex.const(-1.0), lie))
            ends_v = pgd_minimize(V, system.domain, pgd.starts, pgd.steps, step, rng)
            ends_l = pgd_minimize(neg_lie, system.domain, pgd.starts, pgd.steps, step, rng)
            for ends in (ends_v, ends_l):
                bad = _violations(V, lie, ends, keep=pgd.temp_keep)
                if bad.shape[0]:
                    temp.append(bad)
    X_scored = np.vstack([X] + temp) if temp else X

    risk_cache: dict = {}
    rewards = np.zeros(len(candidates))
    for i, c in enumerate(candidates):
        if not c.valid or c.expr is None:
            c.reward = 0.0
            continue
        if c.expr not in risk_cache:
            risk_cache[c.expr] = lyapunov_risk(c.expr, system, X_scored,
                                               lie=unique[c.expr])
        c.reward = reward_from_risk(risk_cache[c.expr], True)
        rewards[i] = c.reward
    return rewards
