"""Ready-made run configurations for CPU-scale experiments.

The dataclass defaults in TrainRunConfig mirror the reference large-scale
settings (batch 500, complexity budget 30, 128-wide transformer).  The desk
presets below trade those for configurations that discover the easy
benchmark certificates in minutes on a couple of CPU cores: a narrower
transformer, and a complexity budget just above the known solution length.
A tight budget also caps the depth of nested near-zero-amplitude candidates,
whose reward otherwise approaches 1 and starves structured candidates of
gradient signal.
"""

from __future__ import annotations

from .falsifier import FalsifierSettings
from .gp import GPConfig
from .policy import ArchConfig
from .reward import PGDSettings
from .trainer import CertifySettings, TrainRunConfig

DESK_ARCH = ArchConfig(embed_dim=64, num_heads=2, dyn_layers=1, tree_layers=1,
                       dec_layers=2, latent_p=64, latent_k=64, ffn_dim=128)


def desk_config(k_max: int = 10, seed: int = 0, epochs: int = 300,
                wall_clock: float = 1500.0, **overrides) -> TrainRunConfig:
    base = dict(
        Q=512, k_max=k_max, epochs=epochs, wall_clock=wall_clock,
        lr=1e-3, seed=seed, init_points=400, verify_top_m=8, grad_steps=2,
        arch=DESK_ARCH,
        gp=GPConfig(generations=4, max_subtree_depth=2),
        pgd=PGDSettings(starts=64, steps=25, temp_keep=8),
        falsifier=FalsifierSettings(shgo_points=512, shgo_iterations=2,
                                    n_local=256, n_random=256,
                                    max_counterexamples=32),
        certify=CertifySettings(budget_seconds=15.0, max_per_epoch=3),
    )
    base.update(overrides)
    return TrainRunConfig(**base)


# complexity budgets sit just above each target certificate's token count
# (poly_2d's certificate needs an integer weight on x1^2, reachable without
# constant tokens as x1*x1 + x1*x1 + x2*x2 in 11 tokens)
DESK_KMAX = {
    "van_der_pol": 10,
    "poly_2d": 12,
    "pendulum": 9,
    "trig_3d": 16,   # sin(x1)*sin(x1) + x2*x2 + sin(x3)*sin(x3) is 15 tokens
}


def desk_config_for(system_name: str, seed: int = 0, **overrides) -> TrainRunConfig:
    k_max = DESK_KMAX.get(system_name, 14)
    return desk_config(k_max=k_max, seed=seed, **overrides)
