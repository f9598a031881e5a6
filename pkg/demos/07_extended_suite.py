"""Optional extended suite: the higher-dimensional benchmark searches.

These are hour-scale runs (the certificates have 20+ tokens, e.g. the sum of
six squares for the coupled 6-D system), offered for completeness; they are
not part of the package's acceptance gate.  Pick a system and let it run.

    python demos/07_extended_suite.py poly_6d 0
"""

import sys

from lyasearch import dynamics as dyn
from lyasearch import expr as ex
from lyasearch.presets import desk_config
from lyasearch.trainer import train

system_name = sys.argv[1] if len(sys.argv) > 1 else "poly_6d"
seed = int(sys.argv[2]) if len(sys.argv) > 2 else 0

system = dyn.benchmark(system_name)
# sum-of-squares certificates need 4n - 1 tokens; leave a little headroom
cfg = desk_config(k_max=4 * system.dim + 3, seed=seed, Q=768,
                  epochs=2000, wall_clock=4 * 3600.0, verify_top_m=6)

print(f"searching {system_name} ({system.dim}-D), k_max={cfg.k_max}; "
      "expect an hour or more at desk scale")
outcome = train(system, cfg)
if outcome.found:
    print("certified:", ex.to_infix(outcome.expression))
else:
    print("exhausted; best:", ex.to_infix(outcome.best_expression),
          outcome.best_reward)
