"""End-to-end training loop for analytical Lyapunov function discovery.

Each epoch: sample a batch of candidates from the policy, refine it with
genetic programming, verify the most promising members of the union batch,
and stop as soon as one candidate survives both the numerical falsifier and
the interval certifier.  Otherwise score the union with the PGD-sharpened
Lyapunov-risk reward, take one risk-seeking policy-gradient step (top
reward-quantile only) and one expert-guidance step toward the GP elite set,
fold new counterexamples into the training set, and continue.
"""

from __future__ import annotations

import dataclasses
import json
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from . import expr as ex
from . import policy as pol
from .certifier import Certificate, certify
from .dynamics import DynamicalSystem, sample_domain, tokenize_system
from .errors import VocabularyMismatch
from .falsifier import FalsifierSettings, verify_batch
from .gp import GPConfig, elite_set, evolve
from .reward import CounterexampleStore, PGDSettings, score_batch


@dataclass(frozen=True)
class CertifySettings:
    eps: float = 1e-3
    delta: float = 1e-12
    budget_boxes: int = 2_000_000
    budget_seconds: float = 60.0
    strict: bool = False
    max_per_epoch: int = 3


@dataclass(frozen=True)
class TrainRunConfig:
    """Every knob of one discovery run; serializable for reproducibility."""

    alpha: float = 0.1
    Q: int = 500
    k_max: int = 30
    radius_frac: float = 0.05
    epochs: int = 200
    wall_clock: float = 7200.0
    lr: float = 1e-4
    seed: int = 0
    init_points: int = 1000
    constants: bool = False
    entropy_coeff: float = 0.0
    gp_refine: bool = True
    expert_guidance: bool = True
    gp_only: bool = False
    verify_top_m: int = 10
    grad_steps: int = 1            # repeats of the per-epoch update pair
    checkpoint_every: int = 0
    gp: GPConfig = field(default_factory=GPConfig)
    pgd: PGDSettings = field(default_factory=PGDSettings)
    arch: pol.ArchConfig = field(default_factory=pol.ArchConfig)
    falsifier: FalsifierSettings = field(default_factory=FalsifierSettings)
    certify: CertifySettings = field(default_factory=CertifySettings)

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must be in (0, 1]")
        if self.Q < 1:
            raise ValueError("Q must be >= 1")
        if self.gp_only and not self.gp_refine:
            raise ValueError("gp_only requires gp_refine")

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_json(cls, data: dict) -> "TrainRunConfig":
        data = dict(data)
        for key, typ in (("gp", GPConfig), ("pgd", PGDSettings),
                         ("arch", pol.ArchConfig),
                         ("falsifier", FalsifierSettings),
                         ("certify", CertifySettings)):
            if key in data and isinstance(data[key], dict):
                data[key] = typ(**data[key])
        return cls(**data)


@dataclass
class EpochRecord:
    epoch: int
    best_reward: float
    quantile: float
    counterexamples_added: int
    verified: int
    wall_time: float

    def to_json(self, with_timing: bool = False) -> dict:
        d = {
            "epoch": self.epoch,
            "best_reward": self.best_reward,
            "quantile": self.quantile,
            "counterexamples_added": self.counterexamples_added,
            "verified": self.verified,
        }
        if with_timing:
            d["wall_time"] = self.wall_time
        return d


@dataclass
class TrainOutcome:
    found: bool
    expression: ex.Expr | None
    certificate: Certificate | None
    best_expression: ex.Expr | None
    best_reward: float
    epochs_run: int
    elapsed: float
    records: list[EpochRecord]

    def to_json(self) -> dict:
        return {
            "found": self.found,
            "expression": None if self.expression is None else {
                "infix": ex.to_infix(self.expression),
                "prefix": ex.to_prefix(self.expression),
            },
            "certificate": None if self.certificate is None
            else self.certificate.to_json(),
            "best_expression": None if self.best_expression is None else {
                "infix": ex.to_infix(self.best_expression),
                "prefix": ex.to_prefix(self.best_expression),
            },
            "best_reward": self.best_reward,
            "epochs_run": self.epochs_run,
            "elapsed_seconds": self.elapsed,
        }


# ---------------------------------------------------------------------------
# gradient estimators

def risk_quantile(rewards, alpha: float) -> float:
    """Lower empirical (1-alpha)-quantile: the ceil((1-alpha)N)-th smallest,
    clamped to the minimum so the above-threshold set is never empty."""
    r = np.sort(np.asarray(rewards, dtype=np.float64))
    if r.size == 0:
        raise ValueError("empty rewards")
    idx = max(1, math.ceil((1.0 - alpha) * r.size))
    return float(r[idx - 1])


def risk_surrogate_loss(logp_totals: torch.Tensor, rewards: np.ndarray,
                        alpha: float):
    """Surrogate whose gradient is the risk-seeking Monte Carlo estimator.

        (1/(alpha N)) * sum_i (R~ - R_i) * 1[R_i >= R~] * log p_i

    Candidates below the threshold contribute exactly zero (they are never
    touched); returns (loss or None when every weight is zero, threshold).
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    thresh = risk_quantile(rewards, alpha)
    weights = np.where(rewards >= thresh, thresh - rewards, 0.0)
    weights /= alpha * rewards.size
    nz = np.nonzero(weights)[0]
    if nz.size == 0:
        return None, thresh
    w = torch.tensor(weights[nz], dtype=torch.float64)
    return (w * logp_totals[nz]).sum(), thresh


def risk_seeking_grad(policy: pol.PolicyNet, candidates, alpha: float,
                      dyn_tokens: list[str], k_max: int,
                      constants: bool = False, grammar_mask: bool = True,
                      entropy_coeff: float = 0.0):
    """Gradient of the risk-seeking objective for a scored candidate batch.

    Log-probabilities of the above-threshold candidates are recomputed under
    the sampling masks by teacher forcing (this also covers GP-refined
    members that were never sampled).  Returns (grads, threshold).
    """
    rewards = np.array([c.reward for c in candidates], dtype=np.float64)
    thresh = risk_quantile(rewards, alpha)
    weights = np.where(rewards >= thresh, thresh - rewards, 0.0)
    weights /= alpha * rewards.size
    nz = np.nonzero(weights)[0]
    if nz.size == 0 and entropy_coeff == 0.0:
        return {n: torch.zeros_like(p) for n, p in policy.named_parameters()}, thresh

    latent = policy.encode_dynamics(dyn_tokens)
    seqs = [list(candidates[i].token_ids) for i in nz]
    loss = torch.zeros((), dtype=torch.float64)
    if seqs:
        logps = pol.logprob_batch(policy, seqs, latent, k_max,
                                  constants=constants, grammar_mask=grammar_mask)
        totals = torch.stack([lp.sum() for lp in logps])
        w = torch.tensor(weights[nz], dtype=torch.float64)
        loss = loss + (w * totals).sum()
    if entropy_coeff != 0.0:
        sel = [c for c in candidates if c.reward >= thresh][:64]
        ent = _mean_step_entropy(policy, sel, latent, k_max, constants, grammar_mask)
        loss = loss - entropy_coeff * ent
    return pol.collect_gradient(policy, loss), thresh


def _mean_step_entropy(policy, candidates, latent, k_max, constants, grammar_mask):
    seqs = [list(c.token_ids) for c in candidates if c.token_ids]
    if not seqs:
        return torch.zeros((), dtype=torch.float64)
    ents = []
    logps = pol.logprob_batch(policy, seqs, latent, k_max, constants=constants,
                              grammar_mask=grammar_mask, return_entropy=ents)
    del logps
    return torch.stack(ents).mean() if ents else torch.zeros((), dtype=torch.float64)


def expert_guidance_loss(logps: list[torch.Tensor], rewards) -> torch.Tensor:
    """Reward-weighted, complexity-normalized cross entropy on elite tokens."""
    terms = []
    for lp, r in zip(logps, rewards):
        if r != 0.0:
            terms.append(-(r / lp.shape[0]) * lp.sum())
    if not terms:
        return torch.zeros((), dtype=torch.float64)
    return torch.stack(terms).sum() / len(logps)


def expert_guidance_grad(policy: pol.PolicyNet, elites, dyn_tokens, k_max,
                         constants: bool = False, grammar_mask: bool = True):
    """Gradient of the guidance loss for (tokens_ids, reward) elite pairs."""
    if not elites:
        return {n: torch.zeros_like(p) for n, p in policy.named_parameters()}
    if all(r == 0.0 for _, r in elites):
        return {n: torch.zeros_like(p) for n, p in policy.named_parameters()}
    latent = policy.encode_dynamics(dyn_tokens)
    logps = pol.logprob_batch(policy, [list(t) for t, _ in elites], latent,
                              k_max, constants=constants,
                              grammar_mask=grammar_mask)
    loss = expert_guidance_loss(logps, [r for _, r in elites])
    return pol.collect_gradient(policy, loss)


# ---------------------------------------------------------------------------
# the loop

def _gp_candidates(population, fitness, dim, vocab):
    out = []
    for e, fit in zip(population, fitness):
        tokens = ex.to_prefix(e)
        try:
            ids = vocab.encode_candidate_tokens(tokens)
        except VocabularyMismatch:
            continue
        c = pol.make_candidate(tokens, ids, [], dim, complete=True, source="gp")
        out.append(c)
    return out


def train(system: DynamicalSystem, cfg: TrainRunConfig,
          out_dir=None, log=print) -> TrainOutcome:
    """Run the discovery loop until a certified Lyapunov function is found or
    the epoch/wall-clock budget runs out.  Failures are outcomes, not errors.
    """
    t0 = time.monotonic()
    torch.manual_seed(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    ss = np.random.SeedSequence(cfg.seed)
    rng_init, rng_pgd, rng_fal, rng_gp = [np.random.default_rng(s)
                                          for s in ss.spawn(4)]

    vocab = pol.Vocab(system.dim)
    policy = pol.PolicyNet(vocab, cfg.arch)
    optimizer = torch.optim.Adam(policy.parameters(), lr=cfg.lr)
    dyn_tokens = tokenize_system(system)

    gp_cfg = replace(cfg.gp, k_max=cfg.k_max, constants=cfg.constants)
    fal = replace(cfg.falsifier)

    store = CounterexampleStore(system.domain)
    store.append(sample_domain(system.domain, cfg.init_points, rng_init),
                 epoch=0, source="random")

    records: list[EpochRecord] = []
    best_expr, best_reward = None, -1.0
    certify_cache: dict = {}
    dead_exprs: set = set()  # falsified or already certify-attempted
    gp_population: list[ex.Expr] | None = None

    epochs_path = timing_path = None
    if out_dir is not None:
        import os

        os.makedirs(out_dir, exist_ok=True)
        epochs_path = os.path.join(out_dir, "epochs.jsonl")
        timing_path = os.path.join(out_dir, "timings.jsonl")
        open(epochs_path, "w").close()
        open(timing_path, "w").close()

    def finish(found, expr=None, cert=None, epochs_run=0):
        return TrainOutcome(found, expr, cert, best_expr, best_reward,
                            epochs_run, time.monotonic() - t0, records)

    for epoch in range(1, cfg.epochs + 1):
        if time.monotonic() - t0 > cfg.wall_clock:
            log(f"[{system.name}] wall-clock cap reached at epoch {epoch - 1}")
            return finish(False, epochs_run=epoch - 1)
        e_t0 = time.monotonic()

        with torch.no_grad():
            latent = policy.encode_dynamics(dyn_tokens)
        if cfg.gp_only and gp_population is not None:
            policy_cands = []
            seed_exprs = gp_population
        else:
            policy_cands = pol.sample_candidates(
                system, policy, cfg.Q, cfg.k_max, gen,
                constants=cfg.constants, latent=latent)
            seed_exprs = [c.expr_raw for c in policy_cands if c.expr_raw is not None]

        gp_cands = []
        elites = []
        if cfg.gp_refine and seed_exprs:
            population, fitness = evolve(seed_exprs, system, store.points,
                                         gp_cfg, rng_gp)
            gp_population = population
            gp_cands = _gp_candidates(population, fitness, system.dim, vocab)
            if cfg.expert_guidance:
                for e, fit in elite_set(population, fitness, gp_cfg.elite_frac,
                                        quota_base=cfg.Q):
                    try:
                        ids = vocab.encode_candidate_tokens(ex.to_prefix(e))
                        elites.append((ids, fit))
                    except VocabularyMismatch:
                        continue

        union = policy_cands + gp_cands
        if not union:
            records.append(EpochRecord(epoch, 0.0, 0.0, 0, 0,
                                       time.monotonic() - e_t0))
            continue

        # provisional rewards over the current training set order the
        # verification queue; the full PGD-sharpened scoring follows the
        # falsifier so new counterexamples already count
        score_batch(union, system, store, cfg.pgd, rng_pgd, use_pgd=False)
        before = len(store)
        valid_set, _ = verify_batch(union, system, cfg.radius_frac, store,
                                    rng_fal, epoch=epoch,
                                    top_m=cfg.verify_top_m, settings=fal,
                                    falsified=dead_exprs)

        certified = None
        tried = 0
        for cand in valid_set:
            if tried >= cfg.certify.max_per_epoch:
                break
            if cand.expr in certify_cache:
                continue
            tried += 1
            cert = certify(cand.expr, system, cfg.certify.eps,
                           cfg.certify.delta, cfg.certify.budget_boxes,
                           cfg.certify.budget_seconds, cfg.certify.strict)
            certify_cache[cand.expr] = cert.verdict
            if cert.certified:
                certified = (cand, cert)
                break
            if cert.verdict == "counterexample":
                store.append(cert.counterexample[None, :], epoch, "certifier")

        rewards = score_batch(union, system, store, cfg.pgd, rng_pgd,
                              use_pgd=True)
        quantile = risk_quantile(rewards, cfg.alpha)
        i_best = int(np.argmax(rewards))
        if rewards[i_best] > best_reward:
            best_reward = float(rewards[i_best])
            best_expr = union[i_best].expr

        if certified is not None:
            cand, cert = certified
            best_expr, best_reward = cand.expr, float(cand.reward)
            records.append(EpochRecord(epoch, float(rewards.max()), quantile,
                                       len(store) - before, len(valid_set),
                                       time.monotonic() - e_t0))
            _write_records(records[-1:], epochs_path, timing_path)
            log(f"[{system.name}] epoch {epoch}: certified "
                f"{ex.to_infix(cand.expr)}")
            return finish(True, cand.expr, cert, epochs_run=epoch)

        if not cfg.gp_only:
            for _ in range(max(1, cfg.grad_steps)):
                grads, _ = risk_seeking_grad(policy, union, cfg.alpha, dyn_tokens,
                                             cfg.k_max, constants=cfg.constants,
                                             entropy_coeff=cfg.entropy_coeff)
                pol.apply_gradient(policy, optimizer, grads)
                if cfg.expert_guidance and elites:
                    grads = expert_guidance_grad(policy, elites, dyn_tokens,
                                                 cfg.k_max, constants=cfg.constants)
                    pol.apply_gradient(policy, optimizer, grads)

        rec = EpochRecord(epoch, float(rewards.max()), quantile,
                          len(store) - before, len(valid_set),
                          time.monotonic() - e_t0)
        records.append(rec)
        _write_records([rec], epochs_path, timing_path)
        log(f"[{system.name}] epoch {epoch}: best={rec.best_reward:.4f} "
            f"q={quantile:.4f} ce+={rec.counterexamples_added} "
            f"({rec.wall_time:.1f}s)")

        if out_dir and cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
            import os

            pol.save_checkpoint(os.path.join(out_dir, f"checkpoint_{epoch}.pt"),
                                policy, optimizer, extra={"epoch": epoch})

    return finish(False, epochs_run=cfg.epochs)


def _write_records(records, epochs_path, timing_path):
    if epochs_path is None:
        return
    with open(epochs_path, "a", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_json(with_timing=False), sort_keys=True) + "\n")
    with open(timing_path, "a", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps({"epoch": r.epoch, "wall_time": r.wall_time}) + "\n")
