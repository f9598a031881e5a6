"""Candidate generation: the autoregressive policy and GP refinement.

An untrained policy already emits grammatically complete expressions thanks
to the arity/budget masks; genetic programming then refines a batch under
the Lyapunov-risk reward.
"""

import numpy as np
import torch

from lyasearch import dynamics as dyn
from lyasearch import expr as ex
from lyasearch import policy as pol
from lyasearch.gp import GPConfig, elite_set, evolve
from lyasearch.reward import CounterexampleStore, PGDSettings, score_batch

vdp = dyn.benchmark("van_der_pol")
torch.manual_seed(0)

arch = pol.ArchConfig(embed_dim=64, num_heads=2, dyn_layers=1, tree_layers=1,
                      dec_layers=2, latent_p=64, latent_k=64, ffn_dim=128)
net = pol.PolicyNet(pol.Vocab(vdp.dim), arch)

# hierarchical tree state: what the decoder is told about the next slot
print("after [+, x1] the next slot has (parent, sibling) =",
      pol.tree_state(["+", "x1"]))

gen = torch.Generator().manual_seed(42)
cands = pol.sample_candidates(vdp, net, Q=64, k_max=10, gen=gen)
valid = [c for c in cands if c.valid]
print(f"\nsampled 64 candidates, {len(valid)} pass the validity gate")
for c in valid[:5]:
    print(f"  logp={c.total_logprob:7.2f}  {ex.to_infix(c.expr)}")

# score the batch: risk over a training set, sharpened by a PGD pre-pass
rng = np.random.default_rng(0)
store = CounterexampleStore(vdp.domain)
store.append(dyn.sample_domain(vdp.domain, 200, rng), 0, "random")
score_batch(cands, vdp, store, PGDSettings(starts=64, steps=20), rng)
best = max(cands, key=lambda c: c.reward)
print(f"\nbest sampled reward {best.reward:.4f}: {ex.to_infix(best.expr)}")

# GP refinement of the same batch
seeds = [c.expr_raw for c in cands if c.expr_raw is not None]
population, fitness = evolve(seeds, vdp, store.points,
                             GPConfig(generations=6, k_max=10), rng)
print(f"\nGP refined the batch; best fitness {fitness.max():.4f}")
for e, f in elite_set(population, fitness, 0.1, quota_base=64)[:5]:
    print(f"  fitness={f:.4f}  {ex.to_infix(e)}")
