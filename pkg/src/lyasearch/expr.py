"""Immutable symbolic expression trees over the library {+, -, *, sin, cos, x_i, const}.

An expression is a binary tree: internal nodes are operators, leaves are state
variables or numeric constants.  The pre-order traversal (parent, then left
child, then right child) linearizes a tree into one token per node and is
bijective with arity-complete trees, so `parse_prefix(to_prefix(e)) == e`.

Everything here is pure and immutable: trees can be shared freely across
threads, and `eval_batch` may run concurrently on one tree.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import (
    DanglingTokens,
    DimensionMismatch,
    IncompleteSequence,
    NonFiniteAtOrigin,
    UnknownToken,
)

# op name -> arity
ARITY = {"add": 2, "sub": 2, "mul": 2, "sin": 1, "cos": 1, "var": 0, "const": 0}

BINARY_SYMBOLS = {"+": "add", "-": "sub", "*": "mul"}
UNARY_SYMBOLS = {"sin": "sin", "cos": "cos"}
OP_SYMBOL = {"add": "+", "sub": "-", "mul": "*", "sin": "sin", "cos": "cos"}


class Expr:
    """One node of an immutable expression tree.

    `complexity` is the node count (equals the length of the prefix traversal);
    `free_vars` is the frozenset of 1-based variable indices appearing below.
    """

    __slots__ = ("op", "children", "index", "value", "complexity", "free_vars", "_hash")

    def __init__(self, op, children=(), index=0, value=0.0):
        arity = ARITY[op]
        if len(children) != arity:
            raise ValueError(f"{op} expects {arity} children, got {len(children)}")
        object.__setattr__(self, "op", op)
        object.__setattr__(self, "children", tuple(children))
        object.__setattr__(self, "index", index)
        object.__setattr__(self, "value", value)
        object.__setattr__(
            self, "complexity", 1 + sum(c.complexity for c in children)
        )
        if op == "var":
            fv = frozenset((index,))
        else:
            fv = frozenset().union(*(c.free_vars for c in children)) if children else frozenset()
        object.__setattr__(self, "free_vars", fv)
        object.__setattr__(
            self,
            "_hash",
            hash((op, index, value, tuple(c._hash for c in children))),
        )

    def __setattr__(self, name, value):
        raise AttributeError("Expr is immutable")

    def __hash__(self):
        return self._hash

    def __eq__(self, other):
        if self is other:
            return True
        if not isinstance(other, Expr):
            return NotImplemented
        if self._hash != other._hash:
            return False
        return (
            self.op == other.op
            and self.index == other.index
            and self.value == other.value
            and self.children == other.children
        )

    def __repr__(self):
        return f"Expr({to_infix(self)})"


def var(i: int) -> Expr:
    if i < 1:
        raise ValueError("variable indices are 1-based")
    return Expr("var", index=i)


def const(v: float) -> Expr:
    return Expr("const", value=float(v))


def add(a: Expr, b: Expr) -> Expr:
    return Expr("add", (a, b))


def sub(a: Expr, b: Expr) -> Expr:
    return Expr("sub", (a, b))


def mul(a: Expr, b: Expr) -> Expr:
    return Expr("mul", (a, b))


def sin(a: Expr) -> Expr:
    return Expr("sin", (a,))


def cos(a: Expr) -> Expr:
    return Expr("cos", (a,))


def _const_symbol(v: float) -> str:
    if v == int(v) and abs(v) < 1e16:
        return str(int(v))
    return repr(v)


def node_symbol(e: Expr) -> str:
    if e.op == "var":
        return f"x{e.index}"
    if e.op == "const":
        return _const_symbol(e.value)
    return OP_SYMBOL[e.op]


def to_prefix(e: Expr) -> list[str]:
    """Pre-order traversal, one symbol per node."""
    out = []
    stack = [e]
    while stack:
        node = stack.pop()
        out.append(node_symbol(node))
        stack.extend(reversed(node.children))
    return out


def symbol_arity(sym: str) -> int:
    """Arity of a prefix symbol; raises UnknownToken for anything unrecognized."""
    if sym in BINARY_SYMBOLS:
        return 2
    if sym in UNARY_SYMBOLS:
        return 1
    return 0


def _leaf_from_symbol(sym: str, n: int) -> Expr:
    if sym.startswith("x") and sym[1:].isdigit():
        i = int(sym[1:])
        if i < 1 or i > n:
            raise DimensionMismatch(f"variable {sym} outside dimension {n}")
        return var(i)
    try:
        return const(float(sym))
    except ValueError:
        raise UnknownToken(f"unknown token {sym!r}") from None


def parse_prefix(tokens: list[str], n: int) -> Expr:
    """Decode a pre-order token sequence into the unique tree it denotes.

    Maintains the running arity balance: starting from 1, each token adds
    (arity - 1).  The balance must reach 0 exactly at the final token.
    """
    if not tokens:
        raise IncompleteSequence("empty token sequence")
    pos = 0

    def build() -> Expr:
        nonlocal pos
        if pos >= len(tokens):
            raise IncompleteSequence(
                f"sequence ended with operators still open: {tokens}"
            )
        sym = tokens[pos]
        pos += 1
        if sym in BINARY_SYMBOLS:
            a = build()
            b = build()
            return Expr(BINARY_SYMBOLS[sym], (a, b))
        if sym in UNARY_SYMBOLS:
            return Expr(UNARY_SYMBOLS[sym], (build(),))
        return _leaf_from_symbol(sym, n)

    result = build()
    if pos != len(tokens):
        raise DanglingTokens(f"{len(tokens) - pos} token(s) left after a complete tree")
    return result


def prefix_complete(arities: list[int]) -> bool:
    """Arity-balance scan: True iff the balance hits 0 exactly at the end."""
    c = 1
    for k, a in enumerate(arities):
        c += a - 1
        if c == 0:
            return k == len(arities) - 1
    return False


def eval_batch(e: Expr, points: np.ndarray) -> np.ndarray:
    """Evaluate on an (N, n) matrix of states, returning an (N,) float64 vector.

    Overflow and invalid operations propagate as inf/nan rather than raising;
    downstream scoring maps non-finite values to reward 0.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise DimensionMismatch(f"expected an (N, n) matrix, got shape {points.shape}")
    n = points.shape[1]
    if e.free_vars and max(e.free_vars) > n:
        raise DimensionMismatch(
            f"expression uses x{max(e.free_vars)} but points have dimension {n}"
        )

    def rec(node: Expr) -> np.ndarray:
        if node.op == "var":
            return points[:, node.index - 1]
        if node.op == "const":
            return np.full(points.shape[0], node.value)
        if node.op == "add":
            return rec(node.children[0]) + rec(node.children[1])
        if node.op == "sub":
            return rec(node.children[0]) - rec(node.children[1])
        if node.op == "mul":
            return rec(node.children[0]) * rec(node.children[1])
        if node.op == "sin":
            return np.sin(rec(node.children[0]))
        return np.cos(rec(node.children[0]))

    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        return rec(e)


def eval_point(e: Expr, point) -> float:
    return float(eval_batch(e, np.asarray(point, dtype=np.float64).reshape(1, -1))[0])


def _fold(op: str, vals: list[float]) -> float:
    if op == "add":
        return vals[0] + vals[1]
    if op == "sub":
        return vals[0] - vals[1]
    if op == "mul":
        return vals[0] * vals[1]
    if op == "sin":
        return math.sin(vals[0])
    return math.cos(vals[0])


def _is_const(e: Expr, v=None) -> bool:
    return e.op == "const" and (v is None or e.value == v)


def simplify(e: Expr) -> Expr:
    """Conservative cleanup: constant folding, +0 / *1 elimination, 0*g -> 0.

    No trigonometric rewriting; the result evaluates identically to the input
    at any finite point.
    """
    if not e.children:
        return e
    kids = [simplify(c) for c in e.children]
    if all(k.op == "const" for k in kids):
        try:
            return const(_fold(e.op, [k.value for k in kids]))
        except OverflowError:
            return const(math.inf)
    if e.op == "add":
        if _is_const(kids[0], 0.0):
            return kids[1]
        if _is_const(kids[1], 0.0):
            return kids[0]
    elif e.op == "sub":
        if _is_const(kids[1], 0.0):
            return kids[0]
    elif e.op == "mul":
        if _is_const(kids[0], 0.0) or _is_const(kids[1], 0.0):
            return const(0.0)
        if _is_const(kids[0], 1.0):
            return kids[1]
        if _is_const(kids[1], 1.0):
            return kids[0]
    return Expr(e.op, tuple(kids), e.index, e.value)


def diff(e: Expr, i: int) -> Expr:
    """Symbolic partial derivative with respect to x_i, simplified."""
    return simplify(_diff(e, i))


def _diff(e: Expr, i: int) -> Expr:
    if e.op == "const":
        return const(0.0)
    if e.op == "var":
        return const(1.0) if e.index == i else const(0.0)
    if e.op == "add":
        return add(_diff(e.children[0], i), _diff(e.children[1], i))
    if e.op == "sub":
        return sub(_diff(e.children[0], i), _diff(e.children[1], i))
    if e.op == "mul":
        a, b = e.children
        return add(mul(_diff(a, i), b), mul(a, _diff(b, i)))
    if e.op == "sin":
        (a,) = e.children
        return mul(cos(a), _diff(a, i))
    (a,) = e.children
    return mul(mul(const(-1.0), sin(a)), _diff(a, i))


def gradient(e: Expr, n: int) -> list[Expr]:
    return [diff(e, i) for i in range(1, n + 1)]


def lie_derivative(V: Expr, system) -> Expr:
    """L_f V = sum_i dV/dx_i * f_i along the vector field of `system`."""
    n = system.dim
    if V.free_vars and max(V.free_vars) > n:
        raise DimensionMismatch(
            f"V uses x{max(V.free_vars)} but the system has dimension {n}"
        )
    total = None
    for i in range(1, n + 1):
        term = mul(diff(V, i), system.components[i - 1])
        total = term if total is None else add(total, term)
    return simplify(total)


def subtract_origin(e: Expr, n: int) -> Expr:
    """Shift an expression so it evaluates to exactly 0 at the origin."""
    c = eval_point(e, np.zeros(max(n, max(e.free_vars, default=1))))
    if not math.isfinite(c):
        raise NonFiniteAtOrigin(f"value at origin is {c}")
    return simplify(sub(e, const(c)))


def free_vars(e: Expr) -> frozenset[int]:
    return e.free_vars


def complexity(e: Expr) -> int:
    return e.complexity


def eval_with_error(e: Expr, points: np.ndarray):
    """Evaluate together with a first-order bound on accumulated rounding.

    Returns (values, errs) where |computed - exact| <= errs up to the usual
    first-order model: each operation contributes half an ulp of its result,
    children's errors propagate through the derivative magnitudes.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    eps = np.finfo(np.float64).eps

    def rec(node: Expr):
        if node.op == "var":
            v = points[:, node.index - 1]
            return v, np.zeros_like(v)
        if node.op == "const":
            v = np.full(points.shape[0], node.value)
            return v, np.zeros_like(v)
        if node.op in ("add", "sub"):
            va, ea = rec(node.children[0])
            vb, eb = rec(node.children[1])
            v = va + vb if node.op == "add" else va - vb
            return v, ea + eb + eps * np.abs(v)
        if node.op == "mul":
            va, ea = rec(node.children[0])
            vb, eb = rec(node.children[1])
            v = va * vb
            return v, np.abs(vb) * ea + np.abs(va) * eb + eps * np.abs(v)
        va, ea = rec(node.children[0])
        v = np.sin(va) if node.op == "sin" else np.cos(va)
        return v, ea + eps

    with np.errstate(over="ignore", invalid="ignore"):
        return rec(e)


_PROBE_RNG = np.random.default_rng(0x5EED)
_PROBE_BASE = _PROBE_RNG.normal(0.0, 0.7, size=(8, 32))


def depends_on_all_vars(e: Expr, n: int) -> bool:
    """True iff e genuinely responds to every state variable x_1..x_n.

    Structural presence is not enough: variation like (x2 - x2)*x1 or
    x1 + x2 - x2 - x1 mentions every variable while being the zero function
    (exactly, or up to float rounding noise), and such degenerates score a
    perfect reward (zero hinge risk) without being Lyapunov functions.  The
    probe evaluates at fixed random points with a per-point rounding-error
    bound: values or per-variable central differences that sit inside their
    own noise envelope count as zero.
    """
    if e.free_vars != frozenset(range(1, n + 1)):
        return False
    base = _PROBE_BASE[:, :n].copy()
    vals, errs = eval_with_error(e, base)
    if not np.isfinite(vals).all():
        return True  # overflow: leave the verdict to reward scoring
    if np.all(np.abs(vals) <= 16.0 * errs):
        return False  # numerically the zero function
    eps = np.finfo(np.float64).eps
    for i in range(n):
        hi = base.copy()
        lo = base.copy()
        hi[:, i] += 0.37
        lo[:, i] -= 0.37
        v_hi, e_hi = eval_with_error(e, hi)
        v_lo, e_lo = eval_with_error(e, lo)
        d = v_hi - v_lo
        if not np.isfinite(d).all():
            continue
        noise = e_hi + e_lo + eps * np.abs(d)
        if np.all(np.abs(d) <= 16.0 * noise):
            return False
    return True


# ---------------------------------------------------------------------------
# tree surgery (used by genetic-programming variation and tests)

def iter_nodes(e: Expr):
    """Yield nodes in pre-order; positions index into this sequence."""
    stack = [e]
    while stack:
        node = stack.pop()
        yield node
        stack.extend(reversed(node.children))


def subtree_at(e: Expr, pos: int) -> Expr:
    for k, node in enumerate(iter_nodes(e)):
        if k == pos:
            return node
    raise IndexError(pos)


def replace_subtree(e: Expr, pos: int, replacement: Expr) -> Expr:
    """Rebuild the tree with the node at pre-order position `pos` swapped out."""

    counter = [0]

    def rec(node: Expr) -> Expr:
        k = counter[0]
        counter[0] += 1
        if k == pos:
            # advance the counter past the replaced subtree
            counter[0] += node.complexity - 1
            return replacement
        if not node.children:
            return node
        kids = []
        changed = False
        for c in node.children:
            if counter[0] <= pos < counter[0] + c.complexity:
                nc = rec(c)
                changed = True
            else:
                counter[0] += c.complexity
                nc = c
            kids.append(nc)
        if not changed:
            return node
        return Expr(node.op, tuple(kids), node.index, node.value)

    if pos < 0 or pos >= e.complexity:
        raise IndexError(pos)
    return rec(e)


def random_expr(rng: np.random.Generator, n: int, max_depth: int,
                constants: bool = False) -> Expr:
    """Random arity-complete tree, used by GP mutation and property tests."""
    ops = ["add", "sub", "mul", "sin", "cos"]
    if max_depth <= 0 or rng.random() < 0.3:
        if constants and rng.random() < 0.25:
            return const(float(rng.integers(1, 10)))
        return var(int(rng.integers(1, n + 1)))
    op = ops[rng.integers(0, len(ops))]
    if ARITY[op] == 1:
        return Expr(op, (random_expr(rng, n, max_depth - 1, constants),))
    return Expr(op, (random_expr(rng, n, max_depth - 1, constants),
                     random_expr(rng, n, max_depth - 1, constants)))


# ---------------------------------------------------------------------------
# rendering

_PREC = {"add": 1, "sub": 1, "mul": 2}


def to_infix(e: Expr) -> str:
    """Readable infix form, parseable back by `dynamics.parse_infix`."""

    def rec(node: Expr, ctx: int) -> str:
        if node.op == "var":
            return f"x{node.index}"
        if node.op == "const":
            s = _const_symbol(node.value)
            return f"({s})" if node.value < 0 and ctx > 0 else s
        if node.op in ("sin", "cos"):
            return f"{node.op}({rec(node.children[0], 0)})"
        prec = _PREC[node.op]
        a = rec(node.children[0], prec)
        # subtraction does not right-associate; multiplication does
        b = rec(node.children[1], prec + (1 if node.op == "sub" else 0))
        s = f"{a} {OP_SYMBOL[node.op]} {b}" if prec == 1 else f"{a}{OP_SYMBOL[node.op]}{b}"
        return f"({s})" if prec < ctx else s

    return rec(e, 0)
