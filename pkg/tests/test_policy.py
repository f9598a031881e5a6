import numpy as np
import pytest
import torch

from lyasearch import dynamics as dyn
from lyasearch import expr as ex
from lyasearch import policy as pol
from lyasearch.errors import (
    AllMasked,
    IllegalSequence,
    NonFiniteGradient,
    VocabularyMismatch,
)


class TestTreeState:
    def test_second_child_slot(self):
        assert pol.tree_state(["+", "x1"]) == ("+", "x1")

    def test_unary_child_slot(self):
        assert pol.tree_state(["sin"]) == ("sin", None)

    def test_root_slot(self):
        assert pol.tree_state([]) == (None, None)

    def test_subtree_sibling_is_its_root(self):
        # after [+, *, x1, x1] the next slot's sibling is the completed
        # product's root
        assert pol.tree_state(["+", "*", "x1", "x1"]) == ("+", "*")

    def test_complete_prefix_rejected(self):
        with pytest.raises(IllegalSequence):
            pol.tree_state(["x1"])


class TestEncodeDynamics:
    def test_deterministic(self, tiny_policy, van_der_pol):
        toks = dyn.tokenize_system(van_der_pol)
        with torch.no_grad():
            a = tiny_policy.encode_dynamics(toks)
            b = tiny_policy.encode_dynamics(toks)
        assert torch.equal(a, b)

    def test_distinct_systems_distinct_latents(self, tiny_policy, van_der_pol, pendulum):
        with torch.no_grad():
            a = tiny_policy.encode_dynamics(dyn.tokenize_system(van_der_pol))
            b = tiny_policy.encode_dynamics(dyn.tokenize_system(pendulum))
        assert not torch.equal(a, b)

    def test_latent_dimension(self, tiny_policy, van_der_pol):
        with torch.no_grad():
            a = tiny_policy.encode_dynamics(dyn.tokenize_system(van_der_pol))
        assert a.shape == (tiny_policy.arch.latent_p,)

    def test_vocabulary_mismatch(self, tiny_policy):
        with pytest.raises(VocabularyMismatch):
            tiny_policy.encode_dynamics(["SOS", "10^40", "EOS"])


class TestNextTokenDist:
    def test_probability_vector(self, tiny_policy, van_der_pol):
        with torch.no_grad():
            latent = tiny_policy.encode_dynamics(dyn.tokenize_system(van_der_pol))
        mask = np.ones(tiny_policy.vocab.size, dtype=bool)
        psi = pol.next_token_dist(tiny_policy, latent, [], mask)
        assert np.all(psi >= 0)
        assert abs(psi.sum() - 1.0) <= 1e-9

    def test_masked_tokens_exactly_zero(self, tiny_policy, van_der_pol):
        with torch.no_grad():
            latent = tiny_policy.encode_dynamics(dyn.tokenize_system(van_der_pol))
        mask = np.ones(tiny_policy.vocab.size, dtype=bool)
        mask[tiny_policy.vocab.const_ids()] = False
        psi = pol.next_token_dist(tiny_policy, latent, [], mask)
        assert np.all(psi[tiny_policy.vocab.const_ids()] == 0.0)
        assert abs(psi.sum() - 1.0) <= 1e-9

    def test_normalized_over_random_states(self, tiny_policy, van_der_pol, rng):
        with torch.no_grad():
            latent = tiny_policy.encode_dynamics(dyn.tokenize_system(van_der_pol))
        gen = torch.Generator().manual_seed(5)
        cands = pol.sample_candidates(van_der_pol, tiny_policy, 100, 9, gen)
        for c in cands:
            cut = int(rng.integers(0, max(1, len(c.tokens))))
            partial = list(c.tokens[:cut])
            if pol.tree_state(partial) == (None, None) and partial:
                continue
            try:
                mask = np.ones(tiny_policy.vocab.size, dtype=bool)
                psi = pol.next_token_dist(tiny_policy, latent, partial, mask)
            except IllegalSequence:
                continue
            assert abs(psi.sum() - 1.0) <= 1e-9

    def test_all_masked(self, tiny_policy, van_der_pol):
        with torch.no_grad():
            latent = tiny_policy.encode_dynamics(dyn.tokenize_system(van_der_pol))
        with pytest.raises(AllMasked):
            pol.next_token_dist(tiny_policy, latent, [],
                                np.zeros(tiny_policy.vocab.size, dtype=bool))


class TestSampling:
    def test_batch_size(self, tiny_policy, van_der_pol):
        gen = torch.Generator().manual_seed(0)
        cands = pol.sample_candidates(van_der_pol, tiny_policy, 50, 10, gen)
        assert len(cands) == 50

    def test_kmax_one_gives_variable_leaves(self, tiny_policy, van_der_pol):
        gen = torch.Generator().manual_seed(1)
        cands = pol.sample_candidates(van_der_pol, tiny_policy, 20, 1, gen)
        assert all(len(c.tokens) == 1 and c.tokens[0] in ("x1", "x2")
                   for c in cands)

    def test_bitwise_determinism(self, tiny_policy, van_der_pol):
        a = pol.sample_candidates(van_der_pol, tiny_policy, 40, 10,
                                  torch.Generator().manual_seed(42))
        b = pol.sample_candidates(van_der_pol, tiny_policy, 40, 10,
                                  torch.Generator().manual_seed(42))
        assert [c.tokens for c in a] == [c.tokens for c in b]
        assert all(np.array_equal(x.logprobs, y.logprobs) for x, y in zip(a, b))

    def test_grammar_holds(self, tiny_policy, van_der_pol):
        gen = torch.Generator().manual_seed(2)
        cands = pol.sample_candidates(van_der_pol, tiny_policy, 100, 12, gen)
        for c in cands:
            assert ex.prefix_complete([ex.symbol_arity(t) for t in c.tokens])

    def test_origin_shift_applied(self, tiny_policy, van_der_pol):
        gen = torch.Generator().manual_seed(3)
        cands = pol.sample_candidates(van_der_pol, tiny_policy, 60, 10, gen)
        for c in cands:
            if c.expr is not None:
                assert abs(ex.eval_point(c.expr, [0.0, 0.0])) < 1e-12

    def test_total_logprob_is_sum(self, tiny_policy, van_der_pol):
        gen = torch.Generator().manual_seed(4)
        cands = pol.sample_candidates(van_der_pol, tiny_policy, 10, 8, gen)
        for c in cands:
            assert c.total_logprob == pytest.approx(c.logprobs.sum())

    def test_constants_masked_by_default(self, tiny_policy, van_der_pol):
        gen = torch.Generator().manual_seed(5)
        cands = pol.sample_candidates(van_der_pol, tiny_policy, 200, 10, gen)
        const_syms = set(pol.CONST_TOKENS)
        assert all(not (set(c.tokens) & const_syms) for c in cands)

    def test_constants_enabled_flag(self, tiny_policy, van_der_pol):
        gen = torch.Generator().manual_seed(6)
        cands = pol.sample_candidates(van_der_pol, tiny_policy, 300, 10, gen,
                                      constants=True)
        const_syms = set(pol.CONST_TOKENS)
        assert any(set(c.tokens) & const_syms for c in cands)


class TestLogprob:
    def test_matches_sampling_records(self, tiny_policy, van_der_pol):
        gen = torch.Generator().manual_seed(7)
        cands = pol.sample_candidates(van_der_pol, tiny_policy, 30, 10, gen)
        with torch.no_grad():
            latent = tiny_policy.encode_dynamics(dyn.tokenize_system(van_der_pol))
            lps = pol.logprob_batch(tiny_policy, [list(c.token_ids) for c in cands],
                                    latent, 10)
        for c, lp in zip(cands, lps):
            assert np.abs(lp.numpy() - c.logprobs).max() <= 1e-9

    def test_forced_vocabulary_gives_zero_logprob(self, tiny_arch):
        # 1-D system with k_max = 1: only x1 is legal at the single slot
        torch.manual_seed(0)
        net = pol.PolicyNet(pol.Vocab(1), tiny_arch)
        rot = dyn.DynamicalSystem("oned", (ex.mul(ex.const(-1.0), ex.var(1)),),
                                  dyn.Domain.cube(1.0, 1))
        with torch.no_grad():
            latent = net.encode_dynamics(dyn.tokenize_system(rot))
            lps = pol.logprob_batch(net, [[net.vocab.dec_index["x1"]]], latent, 1)
        assert lps[0].numpy().tolist() == [0.0]

    def test_longer_sequence_total_is_sum(self, tiny_policy, van_der_pol):
        gen = torch.Generator().manual_seed(8)
        cands = pol.sample_candidates(van_der_pol, tiny_policy, 5, 12, gen)
        with torch.no_grad():
            latent = tiny_policy.encode_dynamics(dyn.tokenize_system(van_der_pol))
            lps = pol.logprob_batch(tiny_policy, [list(c.token_ids) for c in cands],
                                    latent, 12)
        for lp, c in zip(lps, cands):
            assert lp.sum().item() == pytest.approx(c.total_logprob, abs=1e-9)

    def test_illegal_sequence_rejected(self, tiny_policy, van_der_pol):
        with torch.no_grad():
            latent = tiny_policy.encode_dynamics(dyn.tokenize_system(van_der_pol))
        plus = tiny_policy.vocab.dec_index["+"]
        with pytest.raises(IllegalSequence):
            # '+' at the final slot can never finish within k_max = 1
            pol.logprob_batch(tiny_policy, [[plus]], latent, 1)


class TestGradients:
    def test_zero_gradient_is_identity(self, tiny_policy):
        opt = torch.optim.Adam(tiny_policy.parameters(), lr=1e-3)
        before = {n: p.detach().clone() for n, p in tiny_policy.named_parameters()}
        grads = {n: torch.zeros_like(p) for n, p in tiny_policy.named_parameters()}
        pol.apply_gradient(tiny_policy, opt, grads)
        for n, p in tiny_policy.named_parameters():
            assert torch.equal(p, before[n])

    def test_nan_gradient_rejected(self, tiny_policy):
        opt = torch.optim.Adam(tiny_policy.parameters(), lr=1e-3)
        grads = {n: torch.zeros_like(p) for n, p in tiny_policy.named_parameters()}
        bad = next(iter(grads))
        grads[bad][...] = float("nan")
        with pytest.raises(NonFiniteGradient):
            pol.apply_gradient(tiny_policy, opt, grads)

    def test_quadratic_probe_decreases(self, tiny_policy):
        opt = torch.optim.Adam(tiny_policy.parameters(), lr=1e-2)
        target = {n: p.detach().clone() + 0.1 for n, p in
                  tiny_policy.named_parameters()}

        def probe():
            return sum(((p - target[n]) ** 2).sum()
                       for n, p in tiny_policy.named_parameters())

        values = [probe().item()]
        for _ in range(10):
            loss = probe()
            grads = pol.collect_gradient(tiny_policy, loss)
            pol.apply_gradient(tiny_policy, opt, grads)
            values.append(probe().item())
        assert values[-1] < values[0]
        assert all(b <= a + 1e-9 for a, b in zip(values, values[1:]))

    def test_guidance_loss_gradient_matches_finite_differences(
            self, tiny_policy, van_der_pol):
        # Finite-difference check of the expert-guidance loss on a random
        # 10-parameter slice (step 1e-4, rel err < 1e-3)
        from lyasearch.trainer import expert_guidance_loss

        gen = torch.Generator().manual_seed(11)
        cands = [c for c in pol.sample_candidates(van_der_pol, tiny_policy,
                                                  20, 8, gen)
                 if c.expr is not None][:3]
        seqs = [list(c.token_ids) for c in cands]
        rewards = [0.9, 0.5, 0.7]
        toks = dyn.tokenize_system(van_der_pol)

        def loss_fn():
            latent = tiny_policy.encode_dynamics(toks)
            lps = pol.logprob_batch(tiny_policy, seqs, latent, 8)
            return expert_guidance_loss(lps, rewards)

        grads = pol.collect_gradient(tiny_policy, loss_fn())
        rng = np.random.default_rng(0)
        names = [n for n, p in tiny_policy.named_parameters() if p.numel() > 4]
        params = dict(tiny_policy.named_parameters())
        checked = 0
        h = 1e-4
        for k in range(10):
            name = names[int(rng.integers(0, len(names)))]
            p = params[name]
            flat = int(rng.integers(0, p.numel()))
            with torch.no_grad():
                orig = p.view(-1)[flat].item()
                p.view(-1)[flat] = orig + h
                up = loss_fn().item()
                p.view(-1)[flat] = orig - h
                dn = loss_fn().item()
                p.view(-1)[flat] = orig
            fd = (up - dn) / (2 * h)
            an = grads[name].view(-1)[flat].item()
            if abs(fd) < 1e-10 and abs(an) < 1e-10:
                continue
            assert abs(an - fd) / max(abs(fd), abs(an)) < 1e-3, (name, flat)
            checked += 1
        assert checked >= 5


class TestCheckpoint:
    def test_round_trip_exact(self, tiny_policy, tmp_path):
        path = tmp_path / "ck.pt"
        opt = torch.optim.Adam(tiny_policy.parameters(), lr=1e-3)
        pol.save_checkpoint(path, tiny_policy, opt, extra={"epoch": 3})
        net2, payload = pol.load_checkpoint(path)
        assert payload["extra"]["epoch"] == 3
        assert payload["arch"] == __import__("dataclasses").asdict(tiny_policy.arch)
        for (n1, p1), (n2, p2) in zip(tiny_policy.named_parameters(),
                                      net2.named_parameters()):
            assert n1 == n2 and torch.equal(p1, p2)
