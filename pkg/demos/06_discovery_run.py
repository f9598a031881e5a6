"""End-to-end discovery on the Van der Pol oscillator at desk scale.

Runs the full loop (sample, GP-refine, falsify, risk-seeking + expert
guidance updates, certify) until an interval-certified Lyapunov function
comes out.  Typically a couple of minutes on a laptop-class CPU.
"""

from lyasearch import dynamics as dyn
from lyasearch import expr as ex
from lyasearch import policy as pol
from lyasearch.falsifier import FalsifierSettings
from lyasearch.gp import GPConfig
from lyasearch.reward import PGDSettings
from lyasearch.trainer import TrainRunConfig, train

cfg = TrainRunConfig(
    Q=384, k_max=10, epochs=120, wall_clock=600, lr=1e-3, seed=0,
    init_points=400, verify_top_m=12, grad_steps=2,
    arch=pol.ArchConfig(embed_dim=64, num_heads=2, dyn_layers=1,
                        tree_layers=1, dec_layers=2, latent_p=64,
                        latent_k=64, ffn_dim=128),
    gp=GPConfig(generations=4, max_subtree_depth=2),
    pgd=PGDSettings(starts=64, steps=25),
    falsifier=FalsifierSettings(shgo_points=512, shgo_iterations=2,
                                n_local=300, n_random=300,
                                max_counterexamples=64),
)

outcome = train(dyn.benchmark("van_der_pol"), cfg)

print()
if outcome.found:
    print("certified Lyapunov function:", ex.to_infix(outcome.expression))
    print("certificate:", outcome.certificate.to_json())
else:
    print("search exhausted; best candidate:",
          ex.to_infix(outcome.best_expression), outcome.best_reward)
print(f"epochs: {outcome.epochs_run}, wall time {outcome.elapsed:.0f}s")
