"""The benchmark registry and the dynamics token encoding fed to the policy.

Every system is flattened into SOS/EOS-delimited prefix traversals with
numeric coefficients split into digit tokens; the encoding decodes back to
numerically identical components.
"""

import numpy as np

from lyasearch import dynamics as dyn
from lyasearch import expr as ex

print("benchmark families:")
for family, names in dyn.BENCHMARK_FAMILIES:
    print(f"  {family}: " + ", ".join(f"{n} ({dyn.benchmark(n).dim}-D)"
                                      for n in names))

# the tokenization showcase: physical-gravity damped pendulum
demo = dyn.benchmark("pendulum_damped")
print("\n", demo.name, "equations:")
for name, f in zip(demo.var_names, demo.components):
    print(f"   d{name}/dt =", ex.to_infix(f))
tokens = dyn.tokenize_system(demo)
print("token stream:", " ".join(tokens))

# numbers: integers as digit runs, reals as 4-significant-digit scientific
for v in (123, 3.14, 0.2, -9.81):
    print(f"encode({v}) -> {dyn.encode_number(v)}")

# decoding returns numerically identical dynamics
back = dyn.detokenize_system(tokens, demo.dim)
pts = dyn.sample_domain(demo.domain, 3, np.random.default_rng(1))
print("\noriginal f2:", ex.eval_batch(demo.components[1], pts))
print("decoded  f2:", ex.eval_batch(back[1], pts))

# custom systems come in through a small JSON format
import json

spec = {
    "name": "rotation_with_drag",
    "dim": 2,
    "variables": ["x1", "x2"],
    "equations": ["x2 - 0.5*x1", "-x1 - 0.5*x2"],
    "domain": {"lower": [-2, -2], "upper": [2, 2]},
}
system = dyn.system_from_json(json.loads(json.dumps(spec)))
print("\nloaded custom system:", system.name, "dim", system.dim)
