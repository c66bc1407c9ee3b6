import json
import math

import numpy as np
import pytest

from capora.lm import DivergenceError, ModelConfig, init_params
from capora.trainer import (
    AdadeltaState,
    SearchSpace,
    TrainConfig,
    adadelta_step,
    check_gradients,
    compute_gradients,
    global_norm,
    gradcheck_problem,
    gradient_check,
    random_search,
    relative_error,
    sample_trials,
    train_model,
    validation_nll,
)

TINY = ModelConfig(vocab_size=7, atom_vocab_size=3, word_embed_dim=5, atom_embed_dim=5, hidden_dim=4)


def scalar_params(value=0.0):
    cfg = ModelConfig(1, 1, 1, 1, 1)
    return init_params(cfg, 0).map(lambda _, v: np.full_like(v, value))


def synthetic_examples(n, seed, V=12, A=4):
    """Captions whose second word is determined by the bag, so atoms carry signal."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        a = int(rng.integers(A))
        body = [3 + a, 3 + A + int(rng.integers(V - 3 - A))]
        out.append(([0, *body, 1], [a]))
    return out


class TestGradients:
    def test_duplicate_example_is_mean(self):
        params, batch = gradcheck_problem(TINY, 1)
        l1, g1 = compute_gradients(params, batch[:1])
        l2, g2 = compute_gradients(params, [batch[0], batch[0]])
        assert l1 == pytest.approx(l2, rel=1e-14)
        for k in g1:
            np.testing.assert_allclose(g1[k], g2[k], rtol=1e-12, atol=1e-15)

    def test_empty_batch(self):
        with pytest.raises(ValueError):
            compute_gradients(init_params(TINY, 0), [])

    def test_non_finite_names_tensor(self):
        params = init_params(TINY, 0)
        params.tensors["U_p"][0, 0] = np.inf
        with pytest.raises(DivergenceError), np.errstate(all="ignore"):
            compute_gradients(params, [([0, 3, 1], [0])])

    def test_gradient_check_spec_model(self):
        report = gradient_check(TINY, seed=0)
        assert report.max_rel_error <= 1e-4
        assert report.n_coordinates == init_params(TINY, 0).n_params()
        assert report.tensor in init_params(TINY, 0).names()
        assert set(report.per_tensor) == set(init_params(TINY, 0).names())

    @pytest.mark.parametrize("seed", [1, 2, 3, 7, 11])
    def test_gradient_check_seeds(self, seed):
        assert gradient_check(TINY, seed=seed).max_rel_error <= 1e-4

    def test_gradient_check_with_dropout_off_in_eval(self):
        cfg = ModelConfig(7, 3, 5, 5, 4, dropout=True)
        assert gradient_check(cfg, seed=0).max_rel_error <= 1e-4

    def test_sign_flip_detected(self):
        params, batch = gradcheck_problem(TINY, 0)
        _, grads = compute_gradients(params, batch)
        name, idx = "W_o", (1, 2)
        assert abs(grads[name][idx]) > 1e-4
        grads[name][idx] *= -1.0
        report = check_gradients(params, batch, grads)
        assert report.max_rel_error >= 1e-1
        assert (report.tensor, report.index) == (name, idx)
        json.dumps(report.to_json())

    def test_relative_error_floor(self):
        assert relative_error(0.0, 1e-9) == pytest.approx(1e-3)
        assert relative_error(2.0, 1.0) == 0.5


class TestAdadelta:
    def test_zero_gradient(self):
        p = init_params(TINY, 0)
        new, _ = adadelta_step(AdadeltaState.zeros_like(p), p, {k: np.zeros_like(v) for k, v in p.tensors.items()})
        assert new.equal(p)

    def test_hand_value(self):
        p = scalar_params()
        new, state = adadelta_step(AdadeltaState.zeros_like(p), p, {k: np.ones_like(v) for k, v in p.tensors.items()},
                                   rho=0.95, eps=1e-6)
        expected = -math.sqrt(1e-6) / math.sqrt(0.05 + 1e-6)
        assert expected == pytest.approx(-4.4721e-3, abs=1e-7)
        assert new["E_w"][0, 0] == pytest.approx(expected, rel=1e-14)
        assert state.sq_grad["E_w"][0, 0] == pytest.approx(0.05)
        assert state.sq_update["E_w"][0, 0] == pytest.approx(0.05 * expected ** 2)

    def test_scale_invariance_steady_state(self):
        rng = np.random.default_rng(0)
        stream = rng.normal(size=(1000, 1))
        deltas = []
        for scale in (1.0, 10.0):
            p = scalar_params()
            st = AdadeltaState.zeros_like(p)
            for g in stream:
                grads = {k: np.full_like(v, scale * g[0]) for k, v in p.tensors.items()}
                before = p["d"][0]
                p, st = adadelta_step(st, p, grads)
            deltas.append(p["d"][0] - before)
        assert deltas[1] == pytest.approx(deltas[0], rel=1e-2)

    def test_weight_decay_zero_is_plain(self):
        p = init_params(TINY, 1)
        g = {k: np.full_like(v, 0.3) for k, v in p.tensors.items()}
        a, _ = adadelta_step(AdadeltaState.zeros_like(p), p, g, weight_decay=0.0)
        b, _ = adadelta_step(AdadeltaState.zeros_like(p), p, g)
        assert a.equal(b)

    def test_weight_decay_folds_into_gradient(self):
        p = scalar_params(2.0)
        g = {k: np.full_like(v, 0.5) for k, v in p.tensors.items()}
        a, _ = adadelta_step(AdadeltaState.zeros_like(p), p, g, weight_decay=0.1)
        g2 = {k: np.full_like(v, 0.7) for k, v in p.tensors.items()}
        b, _ = adadelta_step(AdadeltaState.zeros_like(p), p, g2)
        assert a.equal(b)

    def test_state_nonnegative(self):
        p = init_params(TINY, 0)
        st = AdadeltaState.zeros_like(p)
        rng = np.random.default_rng(1)
        for _ in range(5):
            p, st = adadelta_step(st, p, {k: rng.normal(size=v.shape) for k, v in p.tensors.items()})
        assert all(np.all(v >= 0) for v in [*st.sq_grad.values(), *st.sq_update.values()])


SMALL = ModelConfig(vocab_size=12, atom_vocab_size=4, word_embed_dim=8, atom_embed_dim=8, hidden_dim=8)


class TestTrainModel:
    train = synthetic_examples(64, 0)
    valid = synthetic_examples(16, 1)

    def test_patience_one_constant_validation(self):
        cfg = TrainConfig(minibatch=16, patience=1, max_updates=1000)
        res = train_model(self.train, self.valid, SMALL, cfg, valid_fn=lambda p: 3.0)
        # first evaluation (update 4) improves on inf, the next window does not
        assert res.log.stop_reason == "early_stopping"
        assert res.log.best_update == 4 and res.log.updates == 8
        assert res.log.valid_history == [(4, 3.0), (8, 3.0)]

    def test_deterministic(self):
        cfg = TrainConfig(minibatch=16, patience=20, max_updates=40, seed=5)
        a = train_model(self.train, self.valid, SMALL, cfg)
        b = train_model(self.train, self.valid, SMALL, cfg)
        assert a.params.equal(b.params) and a.log.entries == b.log.entries

    def test_dropout_deterministic(self):
        cfg = TrainConfig(minibatch=16, patience=20, max_updates=20, seed=5)
        dcfg = ModelConfig(12, 4, 8, 8, 8, dropout=True)
        a = train_model(self.train, self.valid, dcfg, cfg)
        b = train_model(self.train, self.valid, dcfg, cfg)
        assert a.params.equal(b.params)

    def test_returns_best_checkpoint(self):
        cfg = TrainConfig(minibatch=16, patience=1000, max_updates=60, seed=2)
        res = train_model(self.train, self.valid, SMALL, cfg)
        best = min(v for _, v in res.log.valid_history)
        assert validation_nll(res.params, self.valid) == best == res.log.best_valid_nll
        history = [v for _, v in res.log.valid_history]
        assert history[-1] > best or res.log.best_update == res.log.updates

    def test_objective_decreases_and_atoms_help(self):
        cfg = TrainConfig(minibatch=16, patience=1000, max_updates=1000, seed=0)
        res = train_model(self.train, self.valid, SMALL, cfg)
        nll = res.log.train_nll
        assert np.mean(nll[-20:]) < np.mean(nll[:20])
        no_atoms = [(ids, []) for ids, _ in self.train]
        base = train_model(no_atoms, [(ids, []) for ids, _ in self.valid], SMALL, cfg)
        assert res.log.best_valid_nll < base.log.best_valid_nll - 0.5

    def test_early_stop_bound(self):
        cfg = TrainConfig(minibatch=16, patience=12, max_updates=2000, seed=1)
        res = train_model(self.train, self.valid, SMALL, cfg)
        assert res.log.updates <= res.log.best_update + cfg.patience + 4

    def test_divergence_aborts_with_log(self):
        init = init_params(SMALL, 0)
        init.tensors["d"][:] = np.nan
        with pytest.raises(DivergenceError) as exc:
            train_model(self.train, self.valid, SMALL, TrainConfig(minibatch=16), init=init)
        assert exc.value.log is not None and exc.value.log.stop_reason == "divergence"

    def test_clipping_logged(self):
        cfg = TrainConfig(minibatch=16, patience=5, max_updates=5, clip_norm=1e-3)
        res = train_model(self.train, self.valid, SMALL, cfg)
        assert res.log.clipped_updates == 5 and res.log.summary()["clip_norm"] == 1e-3

    def test_log_jsonl(self, tmp_path):
        cfg = TrainConfig(minibatch=16, patience=5, max_updates=8)
        res = train_model(self.train, self.valid, SMALL, cfg)
        p = tmp_path / "log.jsonl"
        res.log.write_jsonl(p)
        rows = [json.loads(line) for line in p.read_text().splitlines()]
        assert sum("train_nll" in r for r in rows) == 8 and any("valid_nll" in r for r in rows)

    def test_empty_inputs(self):
        with pytest.raises(ValueError):
            train_model([], self.valid, SMALL)
        with pytest.raises(ValueError):
            train_model(self.train, [], SMALL)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(patience=0)
        with pytest.raises(ValueError):
            TrainConfig(weight_decay=-1.0)


class TestRandomSearch:
    space = SearchSpace(atom_embed_dim=(2, 6), word_embed_dim=(2, 6), hidden_dim=(2, 6))

    def test_samples_in_range(self):
        trials = sample_trials(SearchSpace(), 200, SMALL, TrainConfig(), seed=3)
        for m, t in trials:
            for dim in (m.atom_embed_dim, m.word_embed_dim, m.hidden_dim):
                assert 128 <= dim <= 1024
            assert 1e-6 <= t.weight_decay <= 1e-2
        assert {m.dropout for m, _ in trials} == {True, False}
        assert len({t.seed for _, t in trials}) == 200

    def test_single_trial(self):
        res = random_search(self.space, 1, synthetic_examples(16, 0), synthetic_examples(4, 1), SMALL,
                            TrainConfig(minibatch=8, max_updates=4, patience=4))
        assert res.best is res.trials[0]

    def test_best_not_worse_than_median(self):
        res = random_search(self.space, 5, synthetic_examples(32, 0), synthetic_examples(8, 1), SMALL,
                            TrainConfig(minibatch=8, max_updates=12, patience=12), seed=4)
        assert res.best.valid_nll <= float(np.median([t.valid_nll for t in res.trials]))
        json.dumps(res.best.describe())

    def test_bad_space(self):
        with pytest.raises(ValueError):
            SearchSpace(hidden_dim=(10, 5))


def test_global_norm():
    assert global_norm({"a": np.array([3.0]), "b": np.array([[4.0]])}) == 5.0
