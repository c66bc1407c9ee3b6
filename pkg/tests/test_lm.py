import math

import numpy as np
import pytest

from capora.lm import (
    BOS_ID,
    EOS_ID,
    DecodeConfig,
    DivergenceError,
    LstmState,
    ModelConfig,
    ModelParams,
    batch_nll,
    embed_bag,
    generate_caption,
    greedy_rollout,
    init_params,
    lstm_step,
    make_batch,
    param_shapes,
    sequence_nll,
)

SMALL = ModelConfig(vocab_size=5, atom_vocab_size=3, word_embed_dim=3, atom_embed_dim=2, hidden_dim=4)


def random_params(config, seed, scale=1.0):
    rng = np.random.default_rng(seed)
    return init_params(config, 0).map(lambda _, v: rng.normal(0.0, scale, size=v.shape))


def zero_params(config):
    return init_params(config, 0).map(lambda _, v: np.zeros_like(v))


def transcribed_step(P, h, c, w, phi):
    """The gate equations written out one line each, no shared helpers."""
    x = P["E_w"][w]
    f = 1.0 / (1.0 + np.exp(-(P["W_f"] @ x + P["U_f"] @ h + P["A_f"] @ phi + P["b_f"])))
    i = 1.0 / (1.0 + np.exp(-(P["W_i"] @ x + P["U_i"] @ h + P["A_i"] @ phi + P["b_i"])))
    o = 1.0 / (1.0 + np.exp(-(P["W_o"] @ x + P["U_o"] @ h + P["A_o"] @ phi + P["b_o"])))
    c_tilde = np.tanh(P["W_c"] @ x + P["U_c"] @ h + P["A_c"] @ phi + P["b_c"])
    c_new = f * c + i * c_tilde
    h_new = o * c_new
    logits = P["U_p"] @ np.tanh(P["W_p"] @ h_new + P["b_p"]) + P["d"]
    p = np.exp(logits - logits.max())
    return f, i, o, c_tilde, h_new, c_new, p / p.sum()


class TestInit:
    def test_deterministic(self):
        assert init_params(SMALL, 3).equal(init_params(SMALL, 3))

    def test_seeds_differ(self):
        assert not init_params(SMALL, 3).equal(init_params(SMALL, 4))

    def test_ranges(self):
        p = init_params(ModelConfig(50, 10, 8, 8, 16), 0)
        for name in p.names():
            if name == "b_f":
                assert np.all(p[name] == 1.0)
            elif name.startswith("b_") or name == "d":
                assert np.all(p[name] == 0.0)
            else:
                assert np.abs(p[name]).max() <= 0.05

    def test_shapes(self):
        p = init_params(SMALL, 0)
        assert {k: v.shape for k, v in p.tensors.items()} == param_shapes(SMALL)
        assert p.names()[:2] == ["E_w", "E_a"]

    def test_bad_config(self):
        with pytest.raises(ValueError):
            ModelConfig(0, 1)


class TestEmbedBag:
    p = random_params(SMALL, 1)

    def test_empty(self):
        assert np.array_equal(embed_bag([], self.p), np.zeros(2))

    def test_single(self):
        assert np.array_equal(embed_bag([1], self.p), self.p["E_a"][1])

    def test_commutative_and_additive(self):
        assert np.array_equal(embed_bag([0, 2], self.p), embed_bag([2, 0], self.p))
        np.testing.assert_allclose(embed_bag([0, 1, 2], self.p),
                                   embed_bag([0], self.p) + embed_bag([1, 2], self.p), rtol=0, atol=1e-15)

    def test_unknown_atom(self):
        with pytest.raises(KeyError):
            embed_bag([3], self.p)


class TestLstmStep:
    def test_zero_params(self):
        tr = lstm_step(zero_params(SMALL), LstmState.zeros(4), 2, np.zeros(2))
        for gate in (tr.f, tr.i, tr.o):
            assert np.all(gate == 0.5)
        np.testing.assert_allclose(tr.p, np.full(5, 0.2), rtol=0, atol=1e-15)

    def test_matches_transcription(self):
        rng = np.random.default_rng(0)
        worst = 0.0
        for trial in range(100):
            P = random_params(SMALL, trial)
            h, c = rng.normal(size=4), rng.normal(size=4)
            w = int(rng.integers(5))
            phi = rng.normal(size=2)
            tr = lstm_step(P, LstmState(h, c), w, phi)
            ref = transcribed_step(P, h, c, w, phi)
            for got, want in zip((tr.f, tr.i, tr.o, tr.c_tilde, tr.h, tr.c, tr.p), ref):
                worst = max(worst, float(np.abs(got - want).max()))
        assert worst <= 1e-12

    def test_ranges(self):
        P = random_params(SMALL, 2, scale=0.5)
        tr = lstm_step(P, LstmState(np.ones(4), -np.ones(4)), 1, np.ones(2))
        for gate in (tr.f, tr.i, tr.o):
            assert np.all((gate > 0) & (gate < 1))
        assert np.all(np.abs(tr.c_tilde) < 1)
        assert abs(tr.p.sum() - 1.0) <= 1e-12

    def test_bad_word(self):
        with pytest.raises(IndexError):
            lstm_step(zero_params(SMALL), LstmState.zeros(4), 5, np.zeros(2))

    def test_non_finite(self):
        P = zero_params(SMALL)
        with pytest.raises(DivergenceError), np.errstate(invalid="ignore"):
            lstm_step(P, LstmState(np.zeros(4), np.full(4, np.inf)), 0, np.zeros(2))


class TestSequenceNll:
    def test_zero_params_uniform(self):
        caption = [BOS_ID, 3, 4, 2, EOS_ID]
        assert sequence_nll(zero_params(SMALL), caption, [0]) == pytest.approx(4 * math.log(5), abs=1e-12)

    def test_chained_steps(self):
        P = random_params(SMALL, 5)
        caption, bag = [BOS_ID, 3, EOS_ID], [0, 2]
        phi = embed_bag(bag, P)
        state, total = LstmState.zeros(4), 0.0
        for prev, nxt in zip(caption, caption[1:]):
            tr = lstm_step(P, state, prev, phi)
            total -= math.log(tr.p[nxt])
            state = tr.state
        assert sequence_nll(P, caption, bag) == pytest.approx(total, rel=1e-12)

    def test_bag_order_invariant_and_nonnegative(self):
        P = random_params(SMALL, 6)
        a = sequence_nll(P, [0, 2, 3, 1], [2, 0, 1])
        assert a == sequence_nll(P, [0, 2, 3, 1], [0, 1, 2]) and a >= 0

    def test_padding_does_not_change_nll(self):
        P = random_params(SMALL, 7)
        examples = [([0, 3, 1], [1]), ([0, 2, 2, 4, 3, 1], [0, 2])]
        together = batch_nll(P, examples)
        alone = [sequence_nll(P, ids, bag) for ids, bag in examples]
        np.testing.assert_allclose(together, alone, rtol=1e-13)

    def test_errors(self):
        with pytest.raises(ValueError):
            sequence_nll(zero_params(SMALL), [0], [])
        with pytest.raises(IndexError):
            sequence_nll(zero_params(SMALL), [0, 9, 1], [])

    def test_make_batch_mask(self):
        b = make_batch([([0, 3, 1], []), ([0, 1], [2])], 3)
        assert b.mask.tolist() == [[1, 1], [1, 0]]
        assert b.bags.tolist() == [[0, 0, 0], [0, 0, 1]]


class TestGenerate:
    def test_width_one_is_greedy(self):
        cfg = ModelConfig(12, 4, 4, 3, 6)
        for seed in range(20):
            P = random_params(cfg, seed)
            bag = [seed % 4]
            assert generate_caption(P, bag, DecodeConfig(1, 15)) == greedy_rollout(P, bag, 15)

    @pytest.mark.parametrize("width", [1, 3, 5])
    def test_max_len(self, width):
        P = random_params(ModelConfig(9, 2, 3, 3, 4), 1)
        P.tensors["d"][EOS_ID] = -50.0
        out = generate_caption(P, [], DecodeConfig(width, 7))
        assert len(out) == 7 and BOS_ID not in out and EOS_ID not in out

    def test_beam_finds_better_than_greedy(self):
        cfg = ModelConfig(10, 2, 4, 3, 6)
        better = 0
        for seed in range(30):
            P = random_params(cfg, seed, scale=1.5)
            g = generate_caption(P, [0], DecodeConfig(1, 6))
            b = generate_caption(P, [0], DecodeConfig(5, 6))
            nll_g = sequence_nll(P, [BOS_ID, *g, EOS_ID], [0]) if len(g) < 6 else math.inf
            nll_b = sequence_nll(P, [BOS_ID, *b, EOS_ID], [0]) if len(b) < 6 else math.inf
            assert nll_b <= nll_g + 1e-9
            better += nll_b < nll_g - 1e-9
        assert better > 0

    def test_deterministic(self):
        P = random_params(ModelConfig(10, 2, 4, 3, 6), 3)
        assert generate_caption(P, [1]) == generate_caption(P, [1])

    def test_bad_decode_config(self):
        with pytest.raises(ValueError):
            DecodeConfig(beam_width=0)

    def test_ties_prefer_lower_index(self):
        P = zero_params(ModelConfig(6, 1, 2, 2, 2))
        P.tensors["d"][:] = [0.0, -9.0, 0.0, 0.0, 0.0, 0.0]
        assert generate_caption(P, [], DecodeConfig(1, 3)) == [2, 2, 2]


def test_params_equal_and_copy():
    p = init_params(SMALL, 0)
    q = p.copy()
    q.tensors["E_w"][0, 0] += 1.0
    assert not p.equal(q) and isinstance(q, ModelParams)
