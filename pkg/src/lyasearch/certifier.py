"""Sound certification of Lyapunov conditions by interval branch-and-bound.

`certify` proves V(x) > delta and L_f V(x) < delta (or < -delta in strict
mode) over the state-space box minus a small origin ball, by recursively
bisecting the box and bounding both expressions with outward-rounded interval
arithmetic.  A `certified` verdict means every leaf box was discharged either
as lying inside the excluded ball or by proven bounds; budget exhaustion is
reported as such and never as a false certificate.

The default Lie-condition threshold is +delta rather than -delta: valid
certificates routinely have Lie derivatives that merely touch zero on
invariant sets (negative *semi*definite), where a strictly negative margin is
unprovable; the +delta reading mirrors how delta-precision SMT checks behave
in practice.  Strict mode is available for genuinely strict certificates.

Plain interval evaluation suffers badly from expression dependency (the same
variable occurring in several subterms), so bounding internally rewrites both
expressions into a collected polynomial over atoms (variables and sin/cos
subterms).  Collection cancels the large opposing products a Lie derivative
always contains; even powers, common-factor extraction, and a second-order
Taylor rule for single-variable terms recover the sharp bounds needed near
the zero sets of semidefinite Lie derivatives.  Every coefficient is itself
an interval, widened outward after each float operation, so the rewriting
preserves soundness.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from decimal import Decimal
from fractions import Fraction

import numpy as np

from . import expr as ex
from .dynamics import DynamicalSystem

_TWO_PI = 2.0 * math.pi
_HALF_PI = 0.5 * math.pi


def _widen(lo: np.ndarray, hi: np.ndarray):
    """Four outward ulps; covers exactly-rounded float arithmetic with margin."""
    for _ in range(4):
        lo = np.nextafter(lo, -np.inf)
        hi = np.nextafter(hi, np.inf)
    return lo, hi


def _widen_sum(lo: np.ndarray, hi: np.ndarray):
    # float addition that rounds to exactly 0 IS exact (no underflow in +),
    # so zero sums stay exact; this is what lets opposing Lie-derivative
    # terms cancel to a true 0 instead of a pair of stray denormals
    wlo, whi = _widen(lo, hi)
    return np.where(lo == 0.0, lo, wlo), np.where(hi == 0.0, hi, whi)


def _iadd(a, b):
    return _widen_sum(a[0] + b[0], a[1] + b[1])


def _isub(a, b):
    return _widen_sum(a[0] - b[1], a[1] - b[0])


def _imul(a, b):
    p1, p2, p3, p4 = a[0] * b[0], a[0] * b[1], a[1] * b[0], a[1] * b[1]
    lo = np.minimum(np.minimum(p1, p2), np.minimum(p3, p4))
    hi = np.maximum(np.maximum(p1, p2), np.maximum(p3, p4))
    return _widen(lo, hi)


def _isquare(a):
    lo, hi = a
    mag_lo = np.where(lo > 0, lo, np.where(hi < 0, -hi, 0.0))
    mag_hi = np.maximum(np.abs(lo), np.abs(hi))
    return _widen(mag_lo * mag_lo, mag_hi * mag_hi)


def _ipow(a, p: int):
    if p == 1:
        return a
    lo, hi = a
    if p % 2 == 0:
        mag_lo = np.where(lo > 0, lo, np.where(hi < 0, -hi, 0.0))
        mag_hi = np.maximum(np.abs(lo), np.abs(hi))
        return _widen(mag_lo**p, mag_hi**p)
    return _widen(lo**p, hi**p)


def _contains_extremum(lo, hi, offset: float):
    """Whether [lo, hi] contains offset + 2*pi*k for some integer k.

    The test is padded outward so float division can only over-report,
    which keeps the resulting +-1 bounds sound.
    """
    pad = 4.0 * np.spacing(np.maximum(np.abs(lo), np.abs(hi)) + 1.0)
    k_lo = np.ceil((lo - pad - offset) / _TWO_PI)
    k_hi = np.floor((hi + pad - offset) / _TWO_PI)
    return k_lo <= k_hi


def _isin(a):
    lo, hi = a
    s_lo, s_hi = np.sin(lo), np.sin(hi)
    out_lo = np.minimum(s_lo, s_hi)
    out_hi = np.maximum(s_lo, s_hi)
    out_hi = np.where(_contains_extremum(lo, hi, _HALF_PI), 1.0, out_hi)
    out_lo = np.where(_contains_extremum(lo, hi, -_HALF_PI), -1.0, out_lo)
    lo2, hi2 = _widen(out_lo, out_hi)
    return np.maximum(lo2, -1.0), np.minimum(hi2, 1.0)


def _icos(a):
    lo, hi = a
    c_lo, c_hi = np.cos(lo), np.cos(hi)
    out_lo = np.minimum(c_lo, c_hi)
    out_hi = np.maximum(c_lo, c_hi)
    out_hi = np.where(_contains_extremum(lo, hi, 0.0), 1.0, out_hi)
    out_lo = np.where(_contains_extremum(lo, hi, math.pi), -1.0, out_lo)
    lo2, hi2 = _widen(out_lo, out_hi)
    return np.maximum(lo2, -1.0), np.minimum(hi2, 1.0)


def interval_eval(e: ex.Expr, box_lo: np.ndarray, box_hi: np.ndarray):
    """Natural interval extension over a batch of boxes.

    box_lo/box_hi have shape (B, n); the result is a pair of (B,) arrays
    enclosing the true range of e on every box.  x*x with structurally equal
    factors is evaluated as a square to avoid the sign-loss of naive
    multiplication.
    """
    box_lo = np.atleast_2d(np.asarray(box_lo, dtype=np.float64))
    box_hi = np.atleast_2d(np.asarray(box_hi, dtype=np.float64))
    B = box_lo.shape[0]

    def rec(node: ex.Expr):
        if node.op == "var":
            return box_lo[:, node.index - 1].copy(), box_hi[:, node.index - 1].copy()
        if node.op == "const":
            v = np.full(B, node.value)
            return v.copy(), v.copy()
        if node.op == "add":
            return _iadd(rec(node.children[0]), rec(node.children[1]))
        if node.op == "sub":
            return _isub(rec(node.children[0]), rec(node.children[1]))
        if node.op == "mul":
            a, b = node.children
            if a == b:
                return _isquare(rec(a))
            return _imul(rec(a), rec(b))
        if node.op == "sin":
            return _isin(rec(node.children[0]))
        return _icos(rec(node.children[0]))

    return rec(e)


# ---------------------------------------------------------------------------
# collected polynomial-over-atoms form

_EXPAND_CAP = 512


def _coeff(v: float):
    return (np.float64(v), np.float64(v))


def _frac_to_coeff(f: Fraction):
    """Tightest float interval enclosing an exact rational coefficient."""
    lo = hi = np.float64(f)
    if Fraction(float(lo)) > f:
        lo = np.nextafter(lo, -np.inf)
    if Fraction(float(hi)) < f:
        hi = np.nextafter(hi, np.inf)
    return (lo, hi)


def _atom_key(atom: ex.Expr):
    return tuple(ex.to_prefix(atom))


def _mono_mul(m1, m2):
    powers: dict = {}
    for atom, p in m1 + m2:
        powers[atom] = powers.get(atom, 0) + p
    return tuple(sorted(powers.items(), key=lambda ap: _atom_key(ap[0])))


def expand_poly(e: ex.Expr, cap: int = _EXPAND_CAP):
    """Collect e into {monomial: coefficient interval}; None if it blows up.

    Monomials are sorted tuples of (atom, power) where an atom is a variable
    or a sin/cos subterm.  Coefficients are carried as exact rationals during
    collection (every float is a rational, and rational arithmetic never
    rounds), so the opposing products inside a Lie derivative cancel to a
    true zero; only the final conversion back to floats widens outward.
    """

    def rec(node: ex.Expr):
        if node.op == "const":
            if not math.isfinite(node.value):
                return None
            return {(): Fraction(node.value)}
        if node.op in ("var", "sin", "cos"):
            return {((node, 1),): Fraction(1)}
        left = rec(node.children[0])
        if left is None:
            return None
        right = rec(node.children[1])
        if right is None:
            return None
        if node.op in ("add", "sub"):
            out = dict(left)
            for mono, c in right.items():
                c2 = c if node.op == "add" else -c
                out[mono] = out[mono] + c2 if mono in out else c2
            return out
        out = {}
        for m1, c1 in left.items():
            for m2, c2 in right.items():
                mono = _mono_mul(m1, m2)
                c = c1 * c2
                out[mono] = out[mono] + c if mono in out else c
                if len(out) > cap:
                    return None
        return out

    poly = rec(e)
    if poly is None:
        return None
    return {m: _frac_to_coeff(c) for m, c in poly.items() if c != 0}


def _mono_expr(mono) -> ex.Expr:
    out = None
    for atom, p in mono:
        for _ in range(p):
            out = atom if out is None else ex.mul(out, atom)
    return out if out is not None else ex.const(1.0)


def _quad_scale(A, Blo, Bhi, C2, h):
    # magnitude of every intermediate in the quadratic formulas; the error
    # margin must scale with this, not with the (possibly cancelled) result
    return (np.abs(A) + np.maximum(np.abs(Blo), np.abs(Bhi)) * h
            + 0.5 * np.abs(C2) * h * h + 1e-300)


def _quad_lower(Alo, Blo, Bhi, C2lo, h):
    """min over s in [-h, h] of Alo + min(Blo*s, Bhi*s) + 0.5*C2lo*s^2."""

    def piece_min(bcoef, s_lo, s_hi):
        v1 = bcoef * s_lo + 0.5 * C2lo * s_lo**2
        v2 = bcoef * s_hi + 0.5 * C2lo * s_hi**2
        best = np.minimum(v1, v2)
        safe = np.where(C2lo > 0, C2lo, 1.0)
        s_star = np.clip(-bcoef / safe, s_lo, s_hi)
        v3 = bcoef * s_star + 0.5 * C2lo * s_star**2
        return np.where(C2lo > 0, np.minimum(best, v3), best)

    m = np.minimum(piece_min(Bhi, -h, np.zeros_like(h)),
                   piece_min(Blo, np.zeros_like(h), h))
    return Alo + m - 16.0 * np.spacing(_quad_scale(Alo, Blo, Bhi, C2lo, h))


def _quad_upper(Ahi, Blo, Bhi, C2hi, h):
    """max over s in [-h, h] of Ahi + max(Blo*s, Bhi*s) + 0.5*C2hi*s^2."""

    def piece_max(bcoef, s_lo, s_hi):
        v1 = bcoef * s_lo + 0.5 * C2hi * s_lo**2
        v2 = bcoef * s_hi + 0.5 * C2hi * s_hi**2
        best = np.maximum(v1, v2)
        safe = np.where(C2hi < 0, C2hi, -1.0)
        s_star = np.clip(-bcoef / safe, s_lo, s_hi)
        v3 = bcoef * s_star + 0.5 * C2hi * s_star**2
        return np.where(C2hi < 0, np.maximum(best, v3), best)

    m = np.maximum(piece_max(Blo, -h, np.zeros_like(h)),
                   piece_max(Bhi, np.zeros_like(h), h))
    return Ahi + m + 16.0 * np.spacing(_quad_scale(Ahi, Blo, Bhi, C2hi, h))


class _Monomial:
    """One collected term with cached derivative data for tight bounding."""

    __slots__ = ("mono", "coeff", "expr", "univar", "d1", "d2")

    def __init__(self, mono, coeff):
        self.mono = mono
        self.coeff = coeff
        self.expr = _mono_expr(mono)
        fv = self.expr.free_vars
        self.univar = next(iter(fv)) if len(fv) == 1 else None
        if self.univar is not None:
            self.d1 = ex.diff(self.expr, self.univar)
            self.d2 = ex.diff(self.d1, self.univar)
        else:
            self.d1 = self.d2 = None

    def bound(self, box_lo, box_hi):
        lo, hi = interval_eval(self.expr, box_lo, box_hi)
        if self.univar is not None and self.mono:
            v = self.univar - 1
            a, b = box_lo[:, v], box_hi[:, v]
            m = 0.5 * (a + b)
            h = np.maximum(m - a, b - m)
            h = np.nextafter(np.nextafter(h, np.inf), np.inf)
            mid = m[:, None]
            Alo, Ahi = interval_eval(self.expr, np.repeat(mid, box_lo.shape[1], 1),
                                     np.repeat(mid, box_lo.shape[1], 1))
            Blo, Bhi = interval_eval(self.d1, np.repeat(mid, box_lo.shape[1], 1),
                                     np.repeat(mid, box_lo.shape[1], 1))
            C2lo, C2hi = interval_eval(self.d2, box_lo, box_hi)
            t_lo = _quad_lower(Alo, Blo, Bhi, C2lo, h)
            t_hi = _quad_upper(Ahi, Blo, Bhi, C2hi, h)
            lo = np.maximum(lo, t_lo)
            hi = np.minimum(hi, t_hi)
        c = (np.full_like(lo, self.coeff[0]), np.full_like(hi, self.coeff[1]))
        return _imul(c, (lo, hi))


def _common_factor(monos):
    """Greatest monomial dividing every term; () if any term is constant."""
    if not monos or any(len(m) == 0 for m in monos):
        return ()
    common: dict | None = None
    for mono in monos:
        powers = dict(mono)
        if common is None:
            common = powers
        else:
            common = {a: min(p, powers[a]) for a, p in common.items() if a in powers}
        if not common:
            return ()
    return tuple(sorted(common.items(), key=lambda ap: _atom_key(ap[0])))


def _mono_divide(mono, factor):
    fac = dict(factor)
    out = []
    for atom, p in mono:
        q = p - fac.get(atom, 0)
        if q > 0:
            out.append((atom, q))
    return tuple(out)


class BoundedExpr:
    """Range bounder for one expression, prepared once and reused per box batch."""

    def __init__(self, e: ex.Expr, cap: int = _EXPAND_CAP):
        self.expr = e
        poly = expand_poly(e, cap)
        self.terms = None
        self.factored = None
        self.residue = None
        if poly is not None:
            order = sorted(poly.items(), key=lambda mc: _atom_key(_mono_expr(mc[0])))
            self.terms = [_Monomial(m, c) for m, c in order]
            # near-cancelled coefficients would wreck the common factor; keep
            # their (negligible) interval contribution in a separate residue
            major = [(m, c) for m, c in order
                     if max(abs(c[0]), abs(c[1])) > 1e-100]
            minor = [(m, c) for m, c in order
                     if max(abs(c[0]), abs(c[1])) <= 1e-100]
            gcd = _common_factor([m for m, _ in major])
            if gcd and major:
                self.factored = (
                    _Monomial(gcd, _coeff(1.0)),
                    [_Monomial(_mono_divide(m, gcd), c) for m, c in major],
                )
                self.residue = [_Monomial(m, c) for m, c in minor]

    def bounds(self, box_lo: np.ndarray, box_hi: np.ndarray):
        """Enclosure of the expression's range over each box in the batch."""
        lo, hi = interval_eval(self.expr, box_lo, box_hi)
        if self.terms is not None:
            B = box_lo.shape[0]
            t_lo, t_hi = np.zeros(B), np.zeros(B)
            for term in self.terms:
                blo, bhi = term.bound(box_lo, box_hi)
                t_lo, t_hi = _iadd((t_lo, t_hi), (blo, bhi))
            lo, hi = np.maximum(lo, t_lo), np.minimum(hi, t_hi)
        if self.factored is not None:
            gcd, quotient = self.factored
            g_lo, g_hi = gcd.bound(box_lo, box_hi)
            B = box_lo.shape[0]
            q_lo, q_hi = np.zeros(B), np.zeros(B)
            for term in quotient:
                blo, bhi = term.bound(box_lo, box_hi)
                q_lo, q_hi = _iadd((q_lo, q_hi), (blo, bhi))
            f_lo, f_hi = _imul((g_lo, g_hi), (q_lo, q_hi))
            for term in self.residue:
                blo, bhi = term.bound(box_lo, box_hi)
                f_lo, f_hi = _iadd((f_lo, f_hi), (blo, bhi))
            lo, hi = np.maximum(lo, f_lo), np.minimum(hi, f_hi)
        return lo, hi


# ---------------------------------------------------------------------------
# branch-and-bound certification

@dataclass
class Certificate:
    verdict: str                      # certified | counterexample | budget-exhausted
    counterexample: np.ndarray | None
    boxes_examined: int
    max_depth: int
    eps: float
    delta: float
    strict: bool
    elapsed: float
    note: str = ""

    @property
    def certified(self) -> bool:
        return self.verdict == "certified"

    def to_json(self) -> dict:
        return {
            "verdict": self.verdict,
            "counterexample": None if self.counterexample is None
            else self.counterexample.tolist(),
            "boxes_examined": self.boxes_examined,
            "max_depth": self.max_depth,
            "eps": self.eps,
            "delta": self.delta,
            "strict": self.strict,
            "elapsed_seconds": self.elapsed,
            "note": self.note,
        }


def certify(V: ex.Expr, system: DynamicalSystem, eps: float = 1e-3,
            delta: float = 1e-12, budget_boxes: int = 2_000_000,
            budget_seconds: float = 60.0, strict: bool = False,
            batch: int = 2048, lie: ex.Expr | None = None) -> Certificate:
    """Branch-and-bound proof of the Lyapunov conditions on the box minus
    the eps-ball.

    A box is discharged when it lies inside the excluded ball or when the
    interval bounds prove V > delta and L_f V below the Lie threshold
    (+delta by default, -delta in strict mode).  When bounds admit a
    violation and the box midpoint confirms one outside the ball, that
    midpoint is returned as a counterexample.  Exhausting the box or time
    budget is reported as budget-exhausted, never as certified.
    """
    if eps <= 0 or delta <= 0:
        raise ValueError("eps and delta must be positive")
    t0 = time.monotonic()
    domain = system.domain
    if lie is None:
        lie = ex.lie_derivative(V, system)
    BV = BoundedExpr(V)
    BL = BoundedExpr(lie)
    lie_thresh = -delta if strict else delta
    eps2 = eps * eps

    lo = domain.lower_arr[None, :].copy()
    hi = domain.upper_arr[None, :].copy()
    depth = np.zeros(1, dtype=np.int64)
    boxes_examined = 0
    max_depth = 0

    while lo.shape[0]:
        if boxes_examined > budget_boxes or (
            budget_seconds and time.monotonic() - t0 > budget_seconds
        ):
            return Certificate("budget-exhausted", None, boxes_examined,
                               max_depth, eps, delta, strict,
                               time.monotonic() - t0,
                               note=f"{lo.shape[0]} boxes unresolved")
        take = min(batch, lo.shape[0])
        blo, bhi = lo[-take:], hi[-take:]
        bdepth = depth[-take:]
        lo, hi, depth = lo[:-take], hi[:-take], depth[:-take]
        boxes_examined += take
        max_depth = max(max_depth, int(bdepth.max()))

        far_corner = np.sum(np.maximum(blo**2, bhi**2), axis=1)
        in_ball = far_corner <= eps2

        v_lo, _ = BV.bounds(blo, bhi)
        l_lo, l_hi = BL.bounds(blo, bhi)
        proven = (v_lo > delta) & (l_hi < lie_thresh)
        open_mask = ~(in_ball | proven)
        if not open_mask.any():
            continue

        olo, ohi, odepth = blo[open_mask], bhi[open_mask], bdepth[open_mask]
        mid = 0.5 * (olo + ohi)
        mnorm2 = np.sum(mid * mid, axis=1)
        with np.errstate(all="ignore"):
            vm = ex.eval_batch(V, mid)
            lm = ex.eval_batch(lie, mid)
        confirmed = (mnorm2 > eps2) & ((vm <= delta) | (lm >= lie_thresh))
        confirmed &= np.isfinite(vm) & np.isfinite(lm)
        if confirmed.any():
            i = int(np.argmax(confirmed))
            return Certificate("counterexample", mid[i].copy(), boxes_examined,
                               max_depth, eps, delta, strict,
                               time.monotonic() - t0)

        widths = ohi - olo
        split_dim = np.argmax(widths, axis=1)
        stuck = widths[np.arange(olo.shape[0]), split_dim] <= 1e-14
        if stuck.any():
            return Certificate("budget-exhausted", None, boxes_examined,
                               max_depth, eps, delta, strict,
                               time.monotonic() - t0,
                               note="box too narrow to split further")
        rows = np.arange(olo.shape[0])
        cut = mid[rows, split_dim]
        left_hi = ohi.copy()
        left_hi[rows, split_dim] = cut
        right_lo = olo.copy()
        right_lo[rows, split_dim] = cut
        lo = np.vstack([lo, olo, right_lo])
        hi = np.vstack([hi, left_hi, ohi])
        depth = np.concatenate([depth, odepth + 1, odepth + 1])

    return Certificate("certified", None, boxes_examined, max_depth,
                       eps, delta, strict, time.monotonic() - t0)


# ---------------------------------------------------------------------------
# SMT-LIB 2 export

def _smt_num(v: float) -> str:
    if v < 0:
        return f"(- {_smt_num(-v)})"
    d = Decimal(repr(v))
    s = format(d, "f")
    if "." not in s:
        s += ".0"
    return s


def _smt_expr(e: ex.Expr) -> str:
    if e.op == "var":
        return f"x{e.index}"
    if e.op == "const":
        return _smt_num(e.value)
    if e.op == "sin":
        return f"(sin {_smt_expr(e.children[0])})"
    if e.op == "cos":
        return f"(cos {_smt_expr(e.children[0])})"
    sym = {"add": "+", "sub": "-", "mul": "*"}[e.op]
    return f"({sym} {_smt_expr(e.children[0])} {_smt_expr(e.children[1])})"


def export_smtlib(V: ex.Expr, system: DynamicalSystem, eps: float = 1e-3,
                  delta: float = 1e-12) -> str:
    """SMT-LIB2 script asserting the NEGATION of the Lyapunov conditions.

    `unsat` from a solver over nonlinear real arithmetic therefore certifies
    V > delta and L_f V < -delta on the box minus the eps-ball.  Output text
    is deterministic for fixed inputs.
    """
    n = system.dim
    lie = ex.lie_derivative(V, system)
    lines = [
        "; Lyapunov condition check (negated): unsat == certified",
        f"; system: {system.name}",
        "(set-logic QF_NRA)",
    ]
    for i in range(1, n + 1):
        lines.append(f"(declare-fun x{i} () Real)")
    box = []
    for i, (a, b) in enumerate(zip(system.domain.lower, system.domain.upper), 1):
        box.append(f"(>= x{i} {_smt_num(a)})")
        box.append(f"(<= x{i} {_smt_num(b)})")
    lines.append(f"(assert (and {' '.join(box)}))")
    norm2 = " ".join(f"(* x{i} x{i})" for i in range(1, n + 1))
    norm2 = f"(+ {norm2})" if n > 1 else norm2
    lines.append(f"(assert (>= {norm2} (* {_smt_num(eps)} {_smt_num(eps)})))")
    lines.append(
        "(assert (or "
        f"(<= {_smt_expr(V)} {_smt_num(delta)}) "
        f"(>= {_smt_expr(lie)} (- {_smt_num(delta)}))))"
    )
    lines.append("(check-sat)")
    lines.append("(exit)")
    return "\n".join(lines) + "\n"
