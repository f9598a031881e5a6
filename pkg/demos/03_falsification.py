"""Global-optimization falsification: hunting states that break a candidate.

The verifier locates the global minimizers of V and of -L_f V (the places a
candidate is most likely to fail), stress-samples their neighborhoods plus a
uniform sweep, and returns every violating state as a counterexample.
"""

import numpy as np

from lyasearch import dynamics as dyn
from lyasearch import expr as ex
from lyasearch.falsifier import shgo_minimize, verify_candidate

vdp = dyn.benchmark("van_der_pol")
rng = np.random.default_rng(7)

# a classic mid-training candidate: positive *semi*definite plus a tilt,
# so it dips negative for small x2 < 0
V_bad = dyn.parse_infix("(x1 + x2)*(x1 + x2) + x2", 2)
report = verify_candidate(V_bad, vdp, r_frac=0.05, rng=rng)
print("candidate:", ex.to_infix(V_bad))
print("verdict:  ", report.verdict)
print("V-minimizer found by the global search:", report.minimizer_v)
print("counterexamples:", report.counterexamples.shape[0])
print("worst V violation:", report.v_violations.max())

# the genuine certificate passes the same gauntlet
V_good = dyn.parse_infix("x1*x1 + x2*x2", 2)
report = verify_candidate(V_good, vdp, r_frac=0.05, rng=rng)
print("\ncandidate:", ex.to_infix(V_good))
print("verdict:  ", report.verdict)

# the minimizer search on its own: a multimodal landscape
bumpy = dyn.parse_infix(
    "(x1*x1 - 0.25)*(x1*x1 - 0.25) + (x2*x2 - 0.25)*(x2*x2 - 0.25)"
    " + 0.1*x1 + 0.05*x2", 2)
x_star, value = shgo_minimize(bumpy, vdp.domain, n_starts=2048, iterations=3)
print("\nmultimodal objective: global minimizer", x_star, "value", value)
print("(four wells near (+-0.5, +-0.5); the tilt makes (-0.5, -0.5) deepest)")
