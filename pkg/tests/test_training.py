import numpy as np
import pytest

from gpoolnet.embeddings import EmbeddingTable
from gpoolnet.errors import ConfigError
from gpoolnet.model import TINY_CHANNELS, ModelSpec, build
from gpoolnet.text2graph import ConversionConfig, convert
from gpoolnet.training import AdamState, TrainConfig, adam_step, evaluate, lr_at, predict, train
from helpers import CAPACITY_TRAIN, TINY_WIDTHS


def spec_for(graphs, arch="gcn_gpool_net", channels=TINY_CHANNELS):
    return ModelSpec(arch, 2, graphs[0].features.shape[1], channels)


class TestSchedule:
    def test_default_values(self):
        cfg = TrainConfig()
        assert lr_at(0, cfg) == 0.001
        assert lr_at(30, cfg) == 0.0001
        assert lr_at(50, cfg) == 0.00001 and lr_at(59, cfg) == 0.00001
        assert lr_at(29, cfg) == 0.001 and lr_at(49, cfg) == lr_at(30, cfg)

    def test_piecewise_non_increasing(self):
        cfg = TrainConfig()
        rates = [lr_at(e, cfg) for e in range(cfg.epochs)]
        assert all(a >= b for a, b in zip(rates, rates[1:]))
        assert sum(a != b for a, b in zip(rates, rates[1:])) == len(cfg.decay_epochs)

    @pytest.mark.parametrize("epoch", [-1, 60])
    def test_out_of_range(self, epoch):
        with pytest.raises(ValueError):
            lr_at(epoch, TrainConfig())

    def test_decay_past_end_rejected(self):
        with pytest.raises(ConfigError):
            TrainConfig(epochs=20)


class TestAdam:
    def test_zero_gradient_is_fixed_point(self):
        p = {"w": np.array([1.0, -2.0, 3.0])}
        before = p["w"].copy()
        state = AdamState()
        for _ in range(5):
            adam_step(p, {"w": np.zeros(3)}, state, 0.001)
        np.testing.assert_array_equal(p["w"], before)
        assert state.t == 5

    def test_first_step_hand_computed(self):
        lr, eps = 0.001, 1e-8
        for g in (0.5, -3.0, 1e-3):
            p = {"w": np.array([2.0])}
            adam_step(p, {"w": np.array([g])}, AdamState(), lr, eps=eps)
            # bias correction makes m_hat = g and v_hat = g^2 on step 1
            assert p["w"][0] == pytest.approx(2.0 - lr * g / (abs(g) + eps), abs=1e-15)

    def test_quadratic_decreases(self):
        p = {"x": np.array([3.0])}
        state = AdamState()
        losses = [float(p["x"][0] ** 2)]
        for _ in range(2):
            adam_step(p, {"x": 2 * p["x"]}, state, 1e-3)
            losses.append(float(p["x"][0] ** 2))
        assert losses[0] > losses[1] > losses[2]

    def test_nan_aborts(self):
        p = {"w": np.ones(2)}
        with pytest.raises(FloatingPointError, match="w"):
            adam_step(p, {"w": np.array([1.0, np.nan])}, AdamState(), 0.001)
        np.testing.assert_array_equal(p["w"], 1.0)

    def test_shape_mismatch(self):
        with pytest.raises(ConfigError):
            adam_step({"w": np.ones(2)}, {"w": np.ones(3)}, AdamState(), 0.001)


class TestTrain:
    def test_single_sample_one_step(self, tiny_corpus):
        graphs, _, _ = tiny_corpus
        res = train(graphs[:1], spec_for(graphs), TrainConfig(epochs=1, decay_epochs=()))
        assert res.step == 1 and res.optimizer.t == 1 and len(res.log) == 1

    def test_partial_batch_kept(self, tiny_corpus):
        graphs, _, _ = tiny_corpus
        res = train(graphs, spec_for(graphs), TrainConfig(epochs=2, decay_epochs=(), batch_size=8))
        assert res.step == 2 * 3

    def test_same_seed_same_curve(self, tiny_corpus):
        graphs, _, _ = tiny_corpus
        cfg = TrainConfig(epochs=3, decay_epochs=(1,), batch_size=4, seed=5)
        a = train(graphs, spec_for(graphs, "hconv_gpool_net"), cfg)
        b = train(graphs, spec_for(graphs, "hconv_gpool_net"), cfg)
        assert a.log == b.log
        for k, t in a.params.named().items():
            assert t.value.tobytes() == b.params.named()[k].value.tobytes()

    def test_dimension_mismatch(self, tiny_corpus):
        graphs, _, _ = tiny_corpus
        spec = ModelSpec("gcn_net", 2, graphs[0].features.shape[1] + 1, TINY_CHANNELS)
        with pytest.raises(ConfigError):
            train(graphs, spec, TrainConfig(epochs=1, decay_epochs=()))

    def test_empty_dataset(self, tiny_corpus):
        graphs, _, _ = tiny_corpus
        with pytest.raises(ConfigError):
            train([], spec_for(graphs), TrainConfig(epochs=1, decay_epochs=()))

    def test_overfit_then_evaluate(self, tiny_corpus):
        graphs, _, _ = tiny_corpus
        spec = spec_for(graphs, "gcn_gpool_net", TINY_WIDTHS)
        res = train(graphs, spec, TrainConfig(**CAPACITY_TRAIN))
        assert evaluate(graphs, res.params, spec) <= 0.01


class TestEvaluate:
    def test_empty_is_nan(self, tiny_corpus):
        graphs, _, _ = tiny_corpus
        spec = spec_for(graphs)
        assert np.isnan(evaluate([], build(spec, 0), spec))

    def test_all_correct_is_zero(self, tiny_corpus):
        graphs, _, _ = tiny_corpus
        spec = spec_for(graphs)
        params = build(spec, 0)
        preds = predict(graphs, params, spec)
        for g, y in zip(graphs, preds):
            g.label = int(y)
        assert evaluate(graphs, params, spec) == 0.0

    def test_random_labels_near_half(self):
        rng = np.random.default_rng(0)
        vocab = [f"v{i}" for i in range(40)]
        table = EmbeddingTable(6, {w: rng.normal(size=6) for w in vocab})
        cfg = ConversionConfig(window=3, max_nodes=12, term_tags=None, stopwords=frozenset())
        graphs = [
            convert(" ".join(rng.choice(vocab, size=10)), int(rng.integers(2)), table, cfg)
            for _ in range(600)
        ]
        spec = ModelSpec("gcn_gpool_net", 2, 18, TINY_CHANNELS)
        err = evaluate(graphs, build(spec, 0), spec)
        assert 0.4 <= err <= 0.6
