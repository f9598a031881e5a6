"""Conditional autoregressive generator for candidate Lyapunov expressions.

A sequence encoder turns the tokenized dynamics into a latent vector, a second
encoder summarizes the hierarchical state of the partially built expression
(parent and sibling of the slot being filled, plus the tokens so far), and a
decoder emits a distribution over the symbolic library for every slot.  The
two latents are exposed to the decoder as a two-slot cross-attention memory;
an alignment mask keeps slot t's generation conditioned on the tree state of
slot t only, which makes one teacher-forced pass reproduce the step-by-step
sampling computation exactly.

Everything runs in float64 so that recomputed log-probabilities match the
values recorded during sampling to tight tolerances.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from . import expr as ex
from .dynamics import DynamicalSystem, tokenize_system
from .errors import (
    AllMasked,
    IllegalSequence,
    NonFiniteAtOrigin,
    NonFiniteGradient,
    VocabularyMismatch,
)

OPS = ("+", "-", "*", "sin", "cos")
CONST_TOKENS = tuple(str(d) for d in range(1, 10))


@dataclass(frozen=True)
class ArchConfig:
    """Transformer sizes; defaults follow the reference architecture."""

    embed_dim: int = 128
    num_heads: int = 2
    dyn_layers: int = 2
    tree_layers: int = 3
    dec_layers: int = 6
    latent_p: int = 128
    latent_k: int = 128
    ffn_dim: int = 256
    max_len: int = 4096


class Vocab:
    """Token tables for a system of dimension `dim`.

    The decoder library is {+, -, *, sin, cos, x_1..x_n, 1..9}; integer
    constants are always part of the vocabulary (refined expressions may
    contain them) while a per-run mask decides whether the policy may sample
    them.  The encoder side adds the digit/exponent/separator tokens used by
    the dynamics encoding.
    """

    def __init__(self, dim: int, max_exp: int = 12):
        self.dim = dim
        self.dec_tokens = list(OPS) + [f"x{i}" for i in range(1, dim + 1)] + list(CONST_TOKENS)
        self.dec_index = {t: i for i, t in enumerate(self.dec_tokens)}
        self.arities = np.array([ex.symbol_arity(t) for t in self.dec_tokens])
        enc_extra = ["0"] + [f"10^{k}" for k in range(-max_exp, max_exp + 1)]
        enc_extra += ["SOS", "EOS"]
        self.enc_tokens = self.dec_tokens + [t for t in enc_extra if t not in self.dec_index]
        self.enc_index = {t: i for i, t in enumerate(self.enc_tokens)}

    @property
    def size(self) -> int:
        return len(self.dec_tokens)

    @property
    def enc_size(self) -> int:
        return len(self.enc_tokens)

    def encode_dynamics_tokens(self, tokens: list[str]) -> list[int]:
        try:
            return [self.enc_index[t] for t in tokens]
        except KeyError as err:
            raise VocabularyMismatch(f"token {err.args[0]!r} not in encoder vocabulary") from None

    def encode_candidate_tokens(self, tokens) -> list[int]:
        try:
            return [self.dec_index[t] for t in tokens]
        except KeyError as err:
            raise VocabularyMismatch(f"token {err.args[0]!r} not in decoder vocabulary") from None

    def const_ids(self) -> list[int]:
        return [self.dec_index[t] for t in CONST_TOKENS]


def tree_state(partial_tokens: list[str]):
    """(parent, sibling) of the next slot of a partial prefix traversal.

    Returns token symbols, or None where the slot has no parent/sibling.
    """
    stack: list[list] = []  # [token, arity, filled, first_child_root]
    parent = sibling = None
    for tok in partial_tokens:
        arity = ex.symbol_arity(tok)
        if arity > 0:
            stack.append([tok, arity, 0, None])
            continue
        root = tok
        while stack:
            top = stack[-1]
            top[2] += 1
            if top[2] == 1:
                top[3] = root
            if top[2] < top[1]:
                break
            root = top[0]
            stack.pop()
    if not stack:
        if partial_tokens:
            raise IllegalSequence("prefix already complete; no next slot")
        return None, None
    top = stack[-1]
    parent = top[0]
    sibling = top[3] if top[2] >= 1 else None
    return parent, sibling


class _SlotTracker:
    """Incremental arity-balance + parent/sibling bookkeeping for one rollout."""

    __slots__ = ("balance", "stack", "length")

    def __init__(self):
        self.balance = 1
        self.length = 0
        self.stack: list[list] = []

    def slot_parent_sibling(self):
        if not self.stack:
            return None, None
        top = self.stack[-1]
        return top[0], (top[3] if top[2] >= 1 else None)

    def push(self, token_id: int, arity: int):
        self.length += 1
        self.balance += arity - 1
        if arity > 0:
            self.stack.append([token_id, arity, 0, None])
            return
        root = token_id
        while self.stack:
            top = self.stack[-1]
            top[2] += 1
            if top[2] == 1:
                top[3] = root
            if top[2] < top[1]:
                return
            root = top[0]
            self.stack.pop()

    @property
    def done(self) -> bool:
        return self.balance == 0


def _positional_encoding(max_len: int, d: int) -> torch.Tensor:
    pos = torch.arange(max_len, dtype=torch.float64).unsqueeze(1)
    div = torch.exp(torch.arange(0, d, 2, dtype=torch.float64) * (-math.log(10000.0) / d))
    pe = torch.zeros(max_len, d, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(pos * div)
    pe[:, 1::2] = torch.cos(pos * div)
    return pe


def _encoder(arch: ArchConfig, layers: int) -> nn.TransformerEncoder:
    layer = nn.TransformerEncoderLayer(
        d_model=arch.embed_dim, nhead=arch.num_heads,
        dim_feedforward=arch.ffn_dim, dropout=0.0, batch_first=True,
    )
    return nn.TransformerEncoder(layer, num_layers=layers)


class PolicyNet(nn.Module):
    """Encoder-decoder policy over the symbolic library of one system."""

    def __init__(self, vocab: Vocab, arch: ArchConfig | None = None):
        super().__init__()
        self.vocab = vocab
        self.arch = arch or ArchConfig()
        a = self.arch
        V = vocab.size
        self.bos_id = V          # decoder-input start marker
        self.empty_id = V        # absent parent/sibling marker

        self.dyn_emb = nn.Embedding(vocab.enc_size, a.embed_dim)
        self.dyn_encoder = _encoder(a, a.dyn_layers)
        self.f_proj = nn.Linear(a.embed_dim, a.latent_p)

        self.tree_tok_emb = nn.Embedding(V + 1, a.embed_dim)
        self.parent_emb = nn.Embedding(V + 1, a.embed_dim)
        self.sibling_emb = nn.Embedding(V + 1, a.embed_dim)
        self.tree_encoder = _encoder(a, a.tree_layers)
        self.w_proj = nn.Linear(a.embed_dim, a.latent_k)

        self.mem_f = nn.Linear(a.latent_p, a.embed_dim)
        self.mem_w = nn.Linear(a.latent_k, a.embed_dim)
        self.dec_tok_emb = nn.Embedding(V + 1, a.embed_dim)
        dec_layer = nn.TransformerDecoderLayer(
            d_model=a.embed_dim, nhead=a.num_heads,
            dim_feedforward=a.ffn_dim, dropout=0.0, batch_first=True,
        )
        self.decoder = nn.TransformerDecoder(dec_layer, num_layers=a.dec_layers)
        self.head = nn.Linear(a.embed_dim, V)

        self.register_buffer("pe", _positional_encoding(a.max_len, a.embed_dim))
        self.double()

    # -- dynamics conditioning ------------------------------------------------

    def encode_dynamics(self, dyn_tokens: list[str]) -> torch.Tensor:
        """Latent vector for a tokenized system; deterministic given parameters."""
        ids = torch.tensor(
            [self.vocab.encode_dynamics_tokens(dyn_tokens)], dtype=torch.long
        )
        h = self.dyn_emb(ids) + self.pe[: ids.shape[1]].unsqueeze(0)
        h = self.dyn_encoder(h)
        return self.f_proj(h.mean(dim=1)).squeeze(0)

    # -- decoding -------------------------------------------------------------

    def slot_logits(self, latent, prev_ids, parents, siblings):
        """Logits for every slot of a (shifted) batch of sequences.

        prev_ids[:, j] is the token placed before slot j (BOS marker at j=0);
        parents/siblings describe slot j itself.  All tensors (B, T).
        """
        B, T = prev_ids.shape
        pe = self.pe[:T].unsqueeze(0)
        causal = torch.triu(
            torch.full((T, T), float("-inf"), dtype=torch.float64), diagonal=1
        )

        tree_in = (
            self.tree_tok_emb(prev_ids)
            + self.parent_emb(parents)
            + self.sibling_emb(siblings)
            + pe
        )
        W = self.w_proj(self.tree_encoder(tree_in, mask=causal))  # (B, T, k)

        mem = torch.cat(
            [self.mem_f(latent).expand(B, 1, -1), self.mem_w(W)], dim=1
        )  # (B, 1+T, d)
        mem_mask = torch.full((T, 1 + T), float("-inf"), dtype=torch.float64)
        mem_mask[:, 0] = 0.0
        idx = torch.arange(T)
        mem_mask[idx, 1 + idx] = 0.0

        tgt = self.dec_tok_emb(prev_ids) + pe
        out = self.decoder(tgt, mem, tgt_mask=causal, memory_mask=mem_mask)
        return self.head(out)

    def legal_mask(self, balance: int, length: int, k_max: int,
                   constants: bool, grammar: bool) -> np.ndarray:
        """Boolean legality per vocabulary token for one slot."""
        legal = np.ones(self.vocab.size, dtype=bool)
        if grammar:
            budget = k_max - length - 1
            legal &= (balance - 1 + self.vocab.arities) <= budget
        if not constants:
            legal[self.vocab.const_ids()] = False
        return legal


def _require_finite(t: torch.Tensor, what: str):
    if not torch.isfinite(t).all():
        raise NonFiniteGradient(f"non-finite values in {what}")


@dataclass
class Candidate:
    """One sampled expression with its generation record."""

    tokens: tuple[str, ...]
    token_ids: tuple[int, ...]
    logprobs: np.ndarray            # per-token, under the sampling masks
    expr_raw: ex.Expr | None        # as generated (None if incomplete)
    expr: ex.Expr | None            # after origin subtraction
    valid: bool
    reward: float = float("nan")
    source: str = "policy"

    @property
    def total_logprob(self) -> float:
        return float(self.logprobs.sum())

    @property
    def complexity(self) -> int:
        return len(self.tokens)


def make_candidate(tokens, token_ids, logprobs, dim, complete, source="policy") -> Candidate:
    """Parse, origin-shift and validity-check a finished token sequence.

    Valid means: complete, responds to every state variable (not merely
    mentioning it), and finite at the origin.
    """
    expr_raw = expr_shifted = None
    valid = False
    if complete:
        expr_raw = ex.parse_prefix(list(tokens), dim)
        try:
            expr_shifted = ex.subtract_origin(expr_raw, dim)
            valid = ex.depends_on_all_vars(expr_raw, dim)
        except NonFiniteAtOrigin:
            expr_shifted = None
            valid = False
    return Candidate(
        tokens=tuple(tokens), token_ids=tuple(token_ids),
        logprobs=np.asarray(logprobs, dtype=np.float64),
        expr_raw=expr_raw, expr=expr_shifted, valid=valid, source=source,
    )


def next_token_dist(policy: PolicyNet, latent: torch.Tensor,
                    partial_tokens: list[str], mask: np.ndarray) -> np.ndarray:
    """Probability vector over the library for the next slot of one rollout."""
    if not mask.any():
        raise AllMasked("mask admits no token")
    tracker = _SlotTracker()
    for tok in partial_tokens:
        tid = policy.vocab.dec_index[tok]
        tracker.push(tid, ex.symbol_arity(tok))
    prev, parents, siblings = _shifted_arrays(policy, [policy.vocab.encode_candidate_tokens(partial_tokens)])
    with torch.no_grad():
        logits = policy.slot_logits(latent, prev, parents, siblings)[0, -1]
        logits = logits.masked_fill(~torch.from_numpy(mask), float("-inf"))
        return torch.softmax(logits, dim=-1).numpy()


def _shifted_arrays(policy: PolicyNet, id_seqs: list[list[int]], upto: int | None = None):
    """Build (prev_ids, parents, siblings) tensors for slots 0..T-1.

    T is max(len)+... the number of slots = len(seq) for teacher forcing, or
    len(seq)+1 when sampling the next token (`upto` handles padding length).
    """
    T = upto if upto is not None else max(len(s) + 1 for s in id_seqs)
    B = len(id_seqs)
    prev = np.full((B, T), policy.bos_id, dtype=np.int64)
    par = np.full((B, T), policy.empty_id, dtype=np.int64)
    sib = np.full((B, T), policy.empty_id, dtype=np.int64)
    for b, seq in enumerate(id_seqs):
        tr = _SlotTracker()
        for j in range(min(len(seq) + 1, T)):
            p, s = tr.slot_parent_sibling()
            if p is not None:
                par[b, j] = p
            if s is not None:
                sib[b, j] = s
            if j > 0:
                prev[b, j] = seq[j - 1]
            if j < len(seq):
                tid = seq[j]
                tr.push(tid, int(policy.vocab.arities[tid]))
    return (torch.from_numpy(prev), torch.from_numpy(par), torch.from_numpy(sib))


def sample_candidates(
    system: DynamicalSystem,
    policy: PolicyNet,
    Q: int,
    k_max: int,
    gen: torch.Generator,
    constants: bool = False,
    grammar_mask: bool = True,
    latent: torch.Tensor | None = None,
) -> list[Candidate]:
    """Sample Q rollouts token by token under the legality masks.

    Generation of a rollout ends when its arity balance reaches zero, or at
    k_max tokens (the rollout is then marked invalid).  Per-token
    log-probabilities are recorded under the same masks used for sampling.
    """
    if Q < 1 or k_max < 1:
        raise ValueError("Q and k_max must be >= 1")
    vocab = policy.vocab
    dim = system.dim
    if latent is None:
        with torch.no_grad():
            latent = policy.encode_dynamics(tokenize_system(system))

    trackers = [_SlotTracker() for _ in range(Q)]
    seqs: list[list[int]] = [[] for _ in range(Q)]
    logps: list[list[float]] = [[] for _ in range(Q)]
    active = list(range(Q))

    with torch.no_grad():
        for step in range(k_max):
            if not active:
                break
            id_seqs = [seqs[i] for i in active]
            prev, par, sib = _shifted_arrays(policy, id_seqs, upto=step + 1)
            logits = policy.slot_logits(latent, prev, par, sib)[:, -1, :]
            masks = np.stack([
                policy.legal_mask(trackers[i].balance, step, k_max, constants, grammar_mask)
                for i in active
            ])
            if not masks.any(axis=1).all():
                raise AllMasked("a rollout has no legal continuation")
            logits = logits.masked_fill(~torch.from_numpy(masks), float("-inf"))
            logprob = torch.log_softmax(logits, dim=-1)
            picks = torch.multinomial(torch.exp(logprob), 1, generator=gen).squeeze(1)
            still = []
            for row, i in enumerate(active):
                tid = int(picks[row])
                seqs[i].append(tid)
                logps[i].append(float(logprob[row, tid]))
                trackers[i].push(tid, int(vocab.arities[tid]))
                if not trackers[i].done:
                    still.append(i)
            active = still

    out = []
    for i in range(Q):
        tokens = [vocab.dec_tokens[t] for t in seqs[i]]
        out.append(
            make_candidate(tokens, seqs[i], logps[i], dim, trackers[i].done)
        )
    return out


def logprob_batch(
    policy: PolicyNet,
    token_id_seqs: list[list[int]],
    latent: torch.Tensor,
    k_max: int,
    constants: bool = False,
    grammar_mask: bool = True,
    return_entropy: list | None = None,
) -> list[torch.Tensor]:
    """Teacher-forced per-token log-probabilities (differentiable).

    Replays the sampling-time masks; a token that would have been illegal
    under them raises IllegalSequence.  When `return_entropy` is a list, the
    mean per-slot entropy of each sequence's masked distributions is appended
    to it (differentiable, used by the optional entropy regularizer).
    """
    if not token_id_seqs:
        return []
    T = max(len(s) for s in token_id_seqs)
    prev, par, sib = _shifted_arrays(policy, token_id_seqs, upto=T)
    logits = policy.slot_logits(latent, prev, par, sib)  # (B, T, V)

    B = len(token_id_seqs)
    mask = np.zeros((B, T, policy.vocab.size), dtype=bool)
    for b, seq in enumerate(token_id_seqs):
        tr = _SlotTracker()
        for j, tid in enumerate(seq):
            m = policy.legal_mask(tr.balance, j, k_max, constants, grammar_mask)
            if not m[tid]:
                raise IllegalSequence(
                    f"token {policy.vocab.dec_tokens[tid]!r} illegal at slot {j}"
                )
            mask[b, j] = m
            tr.push(tid, int(policy.vocab.arities[tid]))
        mask[b, len(seq):] = True  # padding slots: unmasked, never gathered
    logits = logits.masked_fill(~torch.from_numpy(mask), float("-inf"))
    logprob = torch.log_softmax(logits, dim=-1)
    out = []
    for b, seq in enumerate(token_id_seqs):
        idx = torch.tensor(seq, dtype=torch.long)
        out.append(logprob[b, torch.arange(len(seq)), idx])
        if return_entropy is not None:
            lp = logprob[b, : len(seq)]
            p = torch.exp(lp)
            ent = -(p * torch.where(torch.isinf(lp), torch.zeros_like(lp), lp)).sum(-1)
            return_entropy.append(ent.mean())
    return out


def collect_gradient(policy: PolicyNet, loss: torch.Tensor) -> dict[str, torch.Tensor]:
    """Gradient of a scalar loss with respect to the policy parameters."""
    policy.zero_grad(set_to_none=True)
    loss.backward()
    grads = {}
    for name, p in policy.named_parameters():
        grads[name] = (
            p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)
        )
    policy.zero_grad(set_to_none=True)
    return grads


def apply_gradient(policy: PolicyNet, optimizer, grads: dict[str, torch.Tensor]):
    """One optimizer step along the provided gradient; rejects non-finite input."""
    for name, g in grads.items():
        _require_finite(g, f"gradient of {name}")
    for name, p in policy.named_parameters():
        p.grad = grads[name].clone()
    optimizer.step()
    policy.zero_grad(set_to_none=True)
    for _, p in policy.named_parameters():
        _require_finite(p.data, "updated parameters")
    return policy


def save_checkpoint(path, policy: PolicyNet, optimizer=None, extra: dict | None = None):
    payload = {
        "arch": asdict(policy.arch),
        "dim": policy.vocab.dim,
        "state_dict": policy.state_dict(),
        "extra": extra or {},
    }
    if optimizer is not None:
        payload["optimizer"] = optimizer.state_dict()
    torch.save(payload, path)


def load_checkpoint(path):
    payload = torch.load(path, map_location="cpu", weights_only=True)
    arch = ArchConfig(**payload["arch"])
    policy = PolicyNet(Vocab(payload["dim"]), arch)
    policy.load_state_dict(payload["state_dict"])
    return policy, payload
