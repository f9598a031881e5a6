"""Dynamical systems: representation, token encoding, sampling, benchmarks.

A system is a vector field f over a box-shaped state space with its
equilibrium at the origin.  For the sequence encoder, a system is flattened
into a token stream: each component's prefix traversal wrapped in SOS/EOS
separators, with numeric coefficients split into digit tokens (integers as
base-10 digit runs, reals as 4-significant-digit mantissas plus a power-of-ten
exponent token, negatives with a leading minus token).
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field

import numpy as np

from . import expr as ex
from .errors import DimensionMismatch, ParseError, UnknownBenchmark

SOS = "SOS"
EOS = "EOS"

_EXP_RE = re.compile(r"^10\^(-?\d+)$")
_VAR_RE = re.compile(r"^x(\d+)$")


@dataclass(frozen=True)
class Domain:
    """Axis-aligned box containing the origin strictly in its interior."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        if len(self.lower) != len(self.upper):
            raise ValueError("lower/upper length mismatch")
        for lo, hi in zip(self.lower, self.upper):
            if not lo < 0.0 < hi:
                raise ValueError("origin must lie strictly inside the box")

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def lower_arr(self) -> np.ndarray:
        return np.asarray(self.lower, dtype=np.float64)

    @property
    def upper_arr(self) -> np.ndarray:
        return np.asarray(self.upper, dtype=np.float64)

    def widths(self) -> np.ndarray:
        return self.upper_arr - self.lower_arr

    def diameter(self) -> float:
        return float(np.linalg.norm(self.widths()))

    def contains(self, points: np.ndarray, atol: float = 0.0) -> np.ndarray:
        pts = np.atleast_2d(points)
        return np.all(
            (pts >= self.lower_arr - atol) & (pts <= self.upper_arr + atol), axis=1
        )

    def clip(self, points: np.ndarray) -> np.ndarray:
        return np.clip(points, self.lower_arr, self.upper_arr)

    @staticmethod
    def symmetric(half_widths) -> "Domain":
        hw = tuple(float(h) for h in half_widths)
        return Domain(tuple(-h for h in hw), hw)

    @staticmethod
    def cube(half_width: float, dim: int) -> "Domain":
        return Domain.symmetric((half_width,) * dim)


@dataclass(frozen=True)
class DynamicalSystem:
    """Autonomous system dx/dt = f(x) with equilibrium at the origin."""

    name: str
    components: tuple[ex.Expr, ...]
    domain: Domain
    var_names: tuple[str, ...] = ()
    note: str = ""

    def __post_init__(self):
        n = self.dim
        if self.domain.dim != n:
            raise DimensionMismatch("domain dimension != number of components")
        if not self.var_names:
            object.__setattr__(self, "var_names", tuple(f"x{i}" for i in range(1, n + 1)))
        if len(self.var_names) != n:
            raise DimensionMismatch("var_names length != dimension")
        origin = np.zeros((1, n))
        f0 = np.array([ex.eval_batch(f, origin)[0] for f in self.components])
        if not np.all(np.abs(f0) <= 1e-9):
            raise ValueError(f"{self.name}: f(0) = {f0} is not the equilibrium")

    @property
    def dim(self) -> int:
        return len(self.components)

    def eval_field(self, points: np.ndarray) -> np.ndarray:
        """Stack of component values, shape (N, n)."""
        pts = np.atleast_2d(points)
        return np.stack([ex.eval_batch(f, pts) for f in self.components], axis=1)


def sample_domain(domain: Domain, count: int, rng: np.random.Generator) -> np.ndarray:
    """I.i.d. uniform points in the box, shape (count, n)."""
    if count < 1:
        raise ValueError("count must be >= 1")
    return rng.uniform(domain.lower_arr, domain.upper_arr, size=(count, domain.dim))


# ---------------------------------------------------------------------------
# numeric sub-encoding

def encode_number(v: float) -> list[str]:
    """Tokenize one coefficient.

    Integers become base-10 digit runs (123 -> ['1','2','3']); other reals use
    scientific notation rounded to 4 significant digits (3.14 -> ['3','1','4',
    '0','10^0']).  Negative values carry a leading '-' token.
    """
    if not math.isfinite(v):
        raise ValueError(f"cannot encode non-finite coefficient {v}")
    if v < 0:
        return ["-"] + encode_number(-v)
    if v == int(v) and abs(v) < 1e15:
        return list(str(int(v)))
    mantissa, exp = f"{v:.3e}".split("e")
    digits = mantissa.replace(".", "")
    return list(digits) + [f"10^{int(exp)}"]


def decode_number(digits: list[str], exp_token: str | None) -> float:
    if exp_token is None:
        return float("".join(digits))
    m = _EXP_RE.match(exp_token)
    if not m:
        raise ParseError(f"bad exponent token {exp_token!r}")
    d = "".join(digits)
    return float(f"{d[0]}.{d[1:]}e{m.group(1)}")


# ---------------------------------------------------------------------------
# system tokenization

def _expr_tokens(e: ex.Expr) -> list[str]:
    out: list[str] = []
    stack = [e]
    while stack:
        node = stack.pop()
        if node.op == "const":
            out.extend(encode_number(node.value))
        else:
            out.append(ex.node_symbol(node))
        stack.extend(reversed(node.children))
    return out


def tokenize_system(system: DynamicalSystem) -> list[str]:
    """Flat token stream: [SOS, <prefix of f_i>, EOS] for each component."""
    tokens: list[str] = []
    for f in system.components:
        tokens.append(SOS)
        tokens.extend(_expr_tokens(f))
        tokens.append(EOS)
    return tokens


def _is_digit(tok: str) -> bool:
    return len(tok) == 1 and tok.isdigit()


def _number_alternatives(tokens: list[str], pos: int):
    """Yield (value, next_pos) readings of a number starting at a digit."""
    run = 0
    while pos + run < len(tokens) and _is_digit(tokens[pos + run]):
        run += 1
    # scientific: exactly 4 mantissa digits followed by an exponent token
    if run >= 4 and pos + 4 < len(tokens) and _EXP_RE.match(tokens[pos + 4]):
        yield decode_number(tokens[pos : pos + 4], tokens[pos + 4]), pos + 5
    # integer readings, longest first
    for length in range(run, 0, -1):
        yield decode_number(tokens[pos : pos + length], None), pos + length


def _component_alternatives(tokens: list[str], pos: int, n: int):
    """Backtracking prefix parser aware of multi-token numbers.

    '-' is ambiguous: a leading sign of a numeric literal (as in the encoder
    output) or binary subtraction.  Both readings are explored; the caller
    keeps the one that consumes the component exactly.
    """
    if pos >= len(tokens):
        return
    sym = tokens[pos]
    if sym == "-" and pos + 1 < len(tokens) and _is_digit(tokens[pos + 1]):
        for value, nxt in _number_alternatives(tokens, pos + 1):
            yield ex.const(-value), nxt
    if sym in ex.BINARY_SYMBOLS:
        for a, p1 in _component_alternatives(tokens, pos + 1, n):
            for b, p2 in _component_alternatives(tokens, p1, n):
                yield ex.Expr(ex.BINARY_SYMBOLS[sym], (a, b)), p2
        return
    if sym in ex.UNARY_SYMBOLS:
        for a, p1 in _component_alternatives(tokens, pos + 1, n):
            yield ex.Expr(ex.UNARY_SYMBOLS[sym], (a,)), p1
        return
    m = _VAR_RE.match(sym)
    if m:
        i = int(m.group(1))
        if i < 1 or i > n:
            raise DimensionMismatch(f"variable {sym} outside dimension {n}")
        yield ex.var(i), pos + 1
        return
    if _is_digit(sym):
        for value, nxt in _number_alternatives(tokens, pos):
            yield ex.const(value), nxt


def parse_component_tokens(tokens: list[str], n: int) -> ex.Expr:
    for e, nxt in _component_alternatives(tokens, 0, n):
        if nxt == len(tokens):
            return e
    raise ParseError(f"cannot decode component tokens {tokens}")


def detokenize_system(tokens: list[str], n: int) -> list[ex.Expr]:
    """Inverse of tokenize_system (numerically exact for encodable coefficients)."""
    components = []
    current: list[str] | None = None
    for tok in tokens:
        if tok == SOS:
            if current is not None:
                raise ParseError("nested SOS")
            current = []
        elif tok == EOS:
            if current is None:
                raise ParseError("EOS without SOS")
            components.append(parse_component_tokens(current, n))
            current = None
        elif current is not None:
            current.append(tok)
        else:
            raise ParseError(f"token {tok!r} outside SOS/EOS")
    if current is not None:
        raise ParseError("missing final EOS")
    return components


# ---------------------------------------------------------------------------
# infix parsing (system files, CLI expressions)

_INFIX_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[+\-*()]))"
)


def _lex_infix(text: str) -> list[tuple[str, str]]:
    out = []
    pos = 0
    while pos < len(text):
        m = _INFIX_TOKEN.match(text, pos)
        if not m:
            if text[pos:].strip() == "":
                break
            raise ParseError(f"bad character {text[pos]!r} in expression")
        pos = m.end()
        kind = m.lastgroup
        out.append((kind, m.group(kind)))
    return out


def parse_infix(text: str, var_names) -> ex.Expr:
    """Parse '+', '-', '*' (with unary minus), sin, cos, literals, parentheses.

    `var_names` is either a dimension (names default to x1..xn) or an ordered
    sequence of names mapped to indices 1..n.
    """
    if isinstance(var_names, int):
        var_names = [f"x{i}" for i in range(1, var_names + 1)]
    index_of = {name: i + 1 for i, name in enumerate(var_names)}
    toks = _lex_infix(text)
    pos = 0

    def peek():
        return toks[pos] if pos < len(toks) else (None, None)

    def take(expected=None):
        nonlocal pos
        if pos >= len(toks):
            raise ParseError("unexpected end of expression")
        kind, val = toks[pos]
        if expected is not None and val != expected:
            raise ParseError(f"expected {expected!r}, found {val!r}")
        pos += 1
        return kind, val

    def parse_expr() -> ex.Expr:
        node = parse_term()
        while peek()[1] in ("+", "-"):
            _, op = take()
            rhs = parse_term()
            node = ex.add(node, rhs) if op == "+" else ex.sub(node, rhs)
        return node

    def parse_term() -> ex.Expr:
        node = parse_factor()
        while peek()[1] == "*":
            take()
            node = ex.mul(node, parse_factor())
        return node

    def parse_factor() -> ex.Expr:
        if peek()[1] == "-":
            take()
            inner = parse_factor()
            if inner.op == "const":
                return ex.const(-inner.value)
            return ex.mul(ex.const(-1.0), inner)
        return parse_atom()

    def parse_atom() -> ex.Expr:
        kind, val = take()
        if kind == "num":
            return ex.const(float(val))
        if kind == "name":
            if val in ("sin", "cos"):
                take("(")
                inner = parse_expr()
                take(")")
                return ex.Expr(val, (inner,))
            if val in index_of:
                return ex.var(index_of[val])
            raise ParseError(f"unknown name {val!r}")
        if val == "(":
            inner = parse_expr()
            take(")")
            return inner
        raise ParseError(f"unexpected token {val!r}")

    node = parse_expr()
    if pos != len(toks):
        raise ParseError(f"trailing tokens after expression: {toks[pos:]}")
    return node


# ---------------------------------------------------------------------------
# system definition files

def system_to_json(system: DynamicalSystem) -> dict:
    return {
        "name": system.name,
        "dim": system.dim,
        "variables": list(system.var_names),
        "equations": [ex.to_infix(f) for f in system.components],
        "equations_prefix": [ex.to_prefix(f) for f in system.components],
        "domain": {
            "lower": list(system.domain.lower),
            "upper": list(system.domain.upper),
        },
    }


def system_from_json(data: dict) -> DynamicalSystem:
    try:
        dim = int(data["dim"])
        var_names = tuple(data.get("variables") or (f"x{i}" for i in range(1, dim + 1)))
        domain = Domain(
            tuple(float(v) for v in data["domain"]["lower"]),
            tuple(float(v) for v in data["domain"]["upper"]),
        )
        raw_eqs = data.get("equations") or data.get("equations_prefix")
        if raw_eqs is None or len(raw_eqs) != dim:
            raise ParseError("equations missing or wrong count")
        components = []
        for eq in raw_eqs:
            if isinstance(eq, str):
                components.append(parse_infix(eq, list(var_names)))
            else:
                components.append(ex.parse_prefix([str(t) for t in eq], dim))
    except (KeyError, TypeError, ValueError) as err:
        raise ParseError(f"bad system definition: {err}") from err
    return DynamicalSystem(
        name=str(data.get("name", "custom")),
        components=tuple(components),
        domain=domain,
        var_names=var_names,
    )


def load_system_file(path) -> DynamicalSystem:
    with open(path, "r", encoding="utf-8") as fh:
        return system_from_json(json.load(fh))


# ---------------------------------------------------------------------------
# benchmark registry

def _x(i):
    return ex.var(i)


def _c(v):
    return ex.const(v)


def _neg(e):
    return ex.mul(_c(-1.0), e)


def _lin(*pairs):
    """Sum of coeff*expr terms."""
    total = None
    for coeff, e in pairs:
        term = e if coeff == 1.0 else ex.mul(_c(coeff), e)
        total = term if total is None else ex.add(total, term)
    return total


def _pow(e, k):
    out = e
    for _ in range(k - 1):
        out = ex.mul(out, e)
    return out


def _van_der_pol():
    f1 = _x(2)
    f2 = ex.sub(_neg(_x(1)), ex.mul(ex.sub(_c(1.0), ex.mul(_x(1), _x(1))), _x(2)))
    return DynamicalSystem("van_der_pol", (f1, f2), Domain.cube(1.0, 2),
                           note="oscillator with nonlinear damping, unit damping strength")


def _poly_2d():
    f1 = _lin((-5.0, _pow(_x(1), 3)), (-2.0, ex.mul(_x(1), _pow(_x(2), 2))))
    f2 = _lin((-9.0, _pow(_x(1), 4)), (3.0, ex.mul(_pow(_x(1), 3), _x(2))),
              (-4.0, _pow(_x(2), 3)))
    return DynamicalSystem("poly_2d", (f1, f2), Domain.cube(1.0, 2))


def _poly_3d():
    f1 = _lin((-3.0, _pow(_x(1), 3)), (3.0, ex.mul(_x(1), _x(3))), (-9.0, _x(1)))
    f2 = _lin((-1.0, _pow(_x(1), 3)), (-5.0, _x(2)), (5.0, _pow(_x(3), 2)))
    f3 = _lin((-9.0, _pow(_x(3), 3)))
    return DynamicalSystem("poly_3d", (f1, f2, f3), Domain.cube(1.0, 3))


def _poly_3d_ii():
    f1 = _lin((-8.0, ex.mul(_x(1), _pow(_x(2), 2))), (-10.0, _pow(_x(2), 4)))
    f2 = _lin((-8.0, _pow(_x(2), 3)), (3.0, _pow(_x(2), 2)), (-8.0, _x(2)))
    f3 = _lin((-1.0, _x(3)))
    return DynamicalSystem("poly_3d_ii", (f1, f2, f3), Domain.cube(1.0, 3))


def _coupled_linear_chain(name, dim, couplings):
    """Stable 2-D linear subsystems coupled by small quadratic gains.

    couplings: {component_index (1-based): (coeff, source_variable)}
    """
    comps = []
    for i in range(1, dim + 1):
        if i % 2 == 1:
            f = _lin((-1.0, _x(i)), (0.5, _x(i + 1)))
        else:
            f = _lin((-0.5, _x(i - 1)), (-1.0, _x(i)))
        if i in couplings:
            coeff, src = couplings[i]
            f = ex.add(f, ex.mul(_c(coeff), ex.mul(_x(src), _x(src))))
        comps.append(f)
    return DynamicalSystem(name, tuple(comps), Domain.cube(1.0, dim))


def _poly_6d():
    return _coupled_linear_chain(
        "poly_6d", 6, {1: (-0.1, 5), 3: (-0.1, 1), 6: (0.1, 2)})


def _poly_8d():
    return _coupled_linear_chain(
        "poly_8d", 8, {1: (-0.1, 5), 3: (-0.1, 1), 5: (0.1, 7), 8: (-0.1, 4)})


def _poly_10d():
    return _coupled_linear_chain(
        "poly_10d", 10, {1: (-0.1, 5), 3: (-0.1, 1), 5: (0.1, 9), 10: (-0.1, 4)})


def _pendulum():
    f1 = _x(2)
    f2 = ex.sub(_neg(ex.sin(_x(1))), ex.mul(_c(0.1), _x(2)))
    return DynamicalSystem(
        "pendulum", (f1, f2), Domain.symmetric((math.pi, 6.0)),
        note="unit gravity/length/mass, friction coefficient 0.1")


def _pendulum_damped():
    # exact tree shape matters: this system is the token-encoding showcase
    f1 = _x(2)
    f2 = ex.add(ex.mul(_c(-9.81), ex.sin(_x(1))), ex.mul(_c(-0.2), _x(2)))
    return DynamicalSystem(
        "pendulum_damped", (f1, f2), Domain.symmetric((math.pi, 6.0)),
        note="physical-gravity pendulum used to illustrate dynamics tokenization")


def _trig_3d():
    def h(i):
        return ex.mul(ex.sin(_x(i)), ex.cos(_x(i)))

    f1 = _x(2)
    f2 = ex.sub(ex.sub(_neg(h(1)), _x(2)), h(3))
    f3 = ex.sub(_x(2), _x(3))
    return DynamicalSystem("trig_3d", (f1, f2, f3), Domain.cube(1.5, 3))


def _lossless_power_3bus():
    # states: delta_1..3 (x1..x3), omega_1..3 (x4..x6); inertia 2, damping 1,
    # unit proportional frequency control, unit susceptance between all pairs.
    # The center-of-inertia weight 1/3 is stored as 0.3333 so every
    # coefficient survives the 4-significant-digit token encoding; the
    # energy-style storage function is unaffected (the weighted term cancels).
    omega_mean = _lin((0.3333, _x(4)), (0.3333, _x(5)), (0.3333, _x(6)))
    comps = []
    for i in range(1, 4):
        comps.append(ex.sub(_x(3 + i), omega_mean))
    for i in range(1, 4):
        others = [j for j in range(1, 4) if j != i]
        coupling = _lin(*[(0.5, ex.sin(ex.sub(_x(i), _x(j)))) for j in others])
        comps.append(ex.sub(_neg(_x(3 + i)), coupling))
    return DynamicalSystem(
        "lossless_power_3bus", tuple(comps),
        Domain.symmetric((0.75, 0.75, 0.75, 1.2, 1.2, 1.2)),
        var_names=("delta1", "delta2", "delta3", "omega1", "omega2", "omega3"),
        note="frequency dynamics in center-of-inertia coordinates, lossless lines")


def _lossy_power_2bus():
    # states: delta_1, delta_2 (x1, x2), omega_1, omega_2 (x3, x4).
    # Unit net injections exactly cancel the conductance term at the origin,
    # so the equilibrium sits at 0 despite the lossy cosine coupling.
    comps = [
        ex.sub(_x(3), ex.mul(_c(0.5), ex.add(_x(3), _x(4)))),
        ex.sub(_x(4), ex.mul(_c(0.5), ex.add(_x(3), _x(4)))),
    ]
    for i, j, w in ((1, 2, 3), (2, 1, 4)):
        angle = ex.sub(_x(i), _x(j))
        comps.append(
            ex.mul(
                _c(0.5),
                ex.sub(
                    ex.sub(
                        ex.sub(_c(1.0), ex.mul(_c(2.0), _x(w))),
                        ex.sin(angle),
                    ),
                    ex.cos(angle),
                ),
            )
        )
    return DynamicalSystem(
        "lossy_power_2bus", tuple(comps),
        Domain.symmetric((0.75, 0.75, 2.0, 2.0)),
        var_names=("delta1", "delta2", "omega1", "omega2"),
        note="center-of-inertia coordinates; lossy lines with unit conductance")


def _quadrotor():
    # angular-rotation subsystem under the stabilizing feedback, with
    # inertia (2, 2, 5), gains (5, 20, 4), unit lever/rotor inertia, and the
    # gyroscopic perturbation sin(x2)cos(x4) substituted in closed loop.
    omega = ex.mul(ex.sin(_x(2)), ex.cos(_x(4)))
    f1 = _x(2)
    f2 = _lin((-1.5, ex.mul(_x(4), _x(6))), (-0.5, ex.mul(_x(4), omega)),
              (-1.0, _x(1)), (-2.5, _x(2)))
    f3 = _x(4)
    f4 = _lin((1.5, ex.mul(_x(2), _x(6))), (0.5, ex.mul(_x(2), omega)),
              (-1.0, _x(3)), (-10.0, _x(4)))
    f5 = _x(6)
    f6 = _lin((-1.0, _x(5)), (-0.8, _x(6)))
    return DynamicalSystem("quadrotor", (f1, f2, f3, f4, f5, f6), Domain.cube(3.0, 6))


def _synthetic_9d():
    def h(i):
        return ex.mul(ex.sin(_x(i)), ex.cos(_x(i)))

    comps = [
        _lin((-1.0, _x(1)), (0.5, _x(2)), (-0.1, _pow(_x(5), 2))),
        _lin((-0.5, _x(1)), (-1.0, _x(2)), (0.1, _x(8))),
        _lin((-1.0, _x(3)), (0.5, _x(4)), (-0.1, _pow(_x(1), 2))),
        _lin((-0.5, _x(3)), (-1.0, _x(4))),
        _lin((-1.0, _x(5)), (0.5, _x(6))),
        _lin((-0.5, _x(5)), (-1.0, _x(6)), (0.1, _pow(_x(2), 2))),
        _x(8),
        ex.sub(ex.sub(ex.sub(_neg(h(7)), _x(8)), h(9)), ex.mul(_c(0.1), _x(2))),
        ex.sub(_x(8), _x(9)),
    ]
    return DynamicalSystem("synthetic_9d", tuple(comps), Domain.cube(1.5, 9))


_BUILDERS = {
    "van_der_pol": _van_der_pol,
    "poly_2d": _poly_2d,
    "poly_3d": _poly_3d,
    "poly_3d_ii": _poly_3d_ii,
    "poly_6d": _poly_6d,
    "poly_8d": _poly_8d,
    "poly_10d": _poly_10d,
    "pendulum": _pendulum,
    "trig_3d": _trig_3d,
    "lossless_power_3bus": _lossless_power_3bus,
    "quadrotor": _quadrotor,
    "lossy_power_2bus": _lossy_power_2bus,
    "synthetic_9d": _synthetic_9d,
    "pendulum_damped": _pendulum_damped,
}

# the benchmark suite proper, grouped into one family per source system
# (the two 3-D polynomial variants share a family); pendulum_damped is a
# tokenization demo, not part of the suite
BENCHMARK_FAMILIES: tuple[tuple[str, tuple[str, ...]], ...] = (
    ("van_der_pol", ("van_der_pol",)),
    ("poly_2d", ("poly_2d",)),
    ("poly_3d", ("poly_3d", "poly_3d_ii")),
    ("poly_6d", ("poly_6d",)),
    ("poly_8d", ("poly_8d",)),
    ("poly_10d", ("poly_10d",)),
    ("pendulum", ("pendulum",)),
    ("trig_3d", ("trig_3d",)),
    ("lossless_power_3bus", ("lossless_power_3bus",)),
    ("quadrotor", ("quadrotor",)),
    ("lossy_power_2bus", ("lossy_power_2bus",)),
    ("synthetic_9d", ("synthetic_9d",)),
)

EXTRA_SYSTEMS = ("pendulum_damped",)

_CACHE: dict[str, DynamicalSystem] = {}


def benchmark(name: str) -> DynamicalSystem:
    if name not in _BUILDERS:
        raise UnknownBenchmark(
            f"unknown benchmark {name!r}; known: {', '.join(sorted(_BUILDERS))}"
        )
    if name not in _CACHE:
        _CACHE[name] = _BUILDERS[name]()
    return _CACHE[name]


def benchmark_names(include_extras: bool = False) -> list[str]:
    names = [n for _, group in BENCHMARK_FAMILIES for n in group]
    if include_extras:
        names.extend(EXTRA_SYSTEMS)
    return names


def resolve_system(ref: str) -> DynamicalSystem:
    """Benchmark name or path to a JSON system definition."""
    if ref in _BUILDERS:
        return benchmark(ref)
    if ref.endswith(".json"):
        return load_system_file(ref)
    raise UnknownBenchmark(f"{ref!r} is neither a benchmark nor a .json file")
