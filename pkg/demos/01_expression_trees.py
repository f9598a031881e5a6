"""Symbolic expression trees: the currency every other component trades in.

Builds a few expressions, shows the prefix-traversal encoding and its exact
round trip, evaluates batches, and takes symbolic derivatives up to the Lie
derivative along a vector field.
"""

import numpy as np

from lyasearch import expr as ex
from lyasearch import dynamics as dyn

# the pendulum energy function, 2(1 - cos x1) + x2^2
V = ex.add(ex.mul(ex.const(2.0), ex.sub(ex.const(1.0), ex.cos(ex.var(1)))),
           ex.mul(ex.var(2), ex.var(2)))
print("infix:  ", ex.to_infix(V))
print("prefix: ", ex.to_prefix(V))
print("tokens =", ex.complexity(V), " free vars =", sorted(ex.free_vars(V)))

# prefix decoding is exact: the traversal determines the tree
assert ex.parse_prefix(ex.to_prefix(V), 2) == V
print("prefix round trip: exact\n")

# batched evaluation on a few states
pts = np.array([[0.0, 0.0], [np.pi / 2, 1.0], [np.pi, 0.5]])
print("V at", pts.tolist(), "->", ex.eval_batch(V, pts))

# symbolic differentiation
print("\ndV/dx1 =", ex.to_infix(ex.diff(V, 1)))
print("dV/dx2 =", ex.to_infix(ex.diff(V, 2)))

# Lie derivative along the pendulum field: collapses to -0.2 x2^2
pend = dyn.benchmark("pendulum")
L = ex.lie_derivative(V, pend)
print("\nL_f V  =", ex.to_infix(L))
sample = dyn.sample_domain(pend.domain, 5, np.random.default_rng(0))
print("L_f V =", ex.eval_batch(L, sample))
print("-0.2*x2^2 =", -0.2 * sample[:, 1] ** 2)

# origin subtraction: how constant terms arise without constant tokens
raw = dyn.parse_infix("x2*x2 - (cos(x1) + cos(x1))", 2)
shifted = ex.subtract_origin(raw, 2)
print("\nraw candidate:    ", ex.to_infix(raw))
print("after origin shift:", ex.to_infix(shifted))
print("value at origin:   ", ex.eval_point(shifted, [0.0, 0.0]))
