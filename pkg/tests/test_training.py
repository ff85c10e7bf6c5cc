import math

import numpy as np
import pytest

from ecechain import autograd as ag
from ecechain.autograd import Tensor
from ecechain.data import ConfigError, augment_reciprocal
from ecechain.evaluation import FilterIndex, evaluate_queries, report_json
from ecechain.graph import build_ece_batch, build_index, draw_seeds
from ecechain.model import is_decayed
from ecechain.synthetic import periodic_dataset
from ecechain.training import Adamax, TrainConfig, fit, load_checkpoint, lr_schedule, save_checkpoint

from conftest import make_vocabs

TINY = dict(d=8, heads=2, n_encoder=1, n_mixer=1, k=3, ff_hidden=8, mix_hidden=8, batch_size=64,
            max_epochs=2, patience=5, precision="float64")


def one_param(value):
    return {"w": Tensor(np.array(value, dtype=np.float64), requires_grad=True)}


class TestAdamax:
    def test_zero_gradient_no_decay(self):
        params = one_param([1.0, -2.0])
        opt = Adamax(params, weight_decay=0.0)
        params["w"].grad = np.zeros(2)
        opt.step(0.1)
        np.testing.assert_array_equal(params["w"].data, [1.0, -2.0])

    def test_first_step_is_sign(self):
        params = one_param([1.0, 1.0, 1.0])
        opt = Adamax(params)
        params["w"].grad = np.array([3.0, -0.5, 1e-3])
        opt.step(0.01)
        np.testing.assert_allclose(params["w"].data, 1.0 - 0.01 * np.array([1, -1, 1]), atol=1e-7)

    def test_hand_rolled_trace_on_square(self):
        lr, b1, b2, eps = 0.05, 0.9, 0.999, 1e-8
        theta, m, u = 1.3, 0.0, 0.0
        trace = []
        for t in range(1, 6):
            g = 2.0 * theta
            m = b1 * m + (1.0 - b1) * g
            u = max(b2 * u, abs(g))
            theta = theta - lr * m / ((1.0 - b1 ** t) * (u + eps))
            trace.append(theta)

        params = one_param(1.3)
        opt = Adamax(params, b1, b2, eps)
        got = []
        for _ in range(5):
            opt.zero_grad()
            ag.backward(params["w"] * params["w"], [params["w"]])
            opt.step(lr)
            got.append(float(params["w"].data))
        np.testing.assert_allclose(got, trace, rtol=0, atol=1e-12)

    def test_decay_with_zero_lr(self):
        params = one_param([0.7, -0.3])
        opt = Adamax(params, weight_decay=0.5, decay_filter=lambda name: True)
        params["w"].grad = np.array([1.0, 1.0])
        opt.step(0.0)
        np.testing.assert_array_equal(params["w"].data, [0.7, -0.3])

    def test_decoupled_decay(self):
        params = one_param([2.0])
        opt = Adamax(params, weight_decay=0.1, decay_filter=lambda name: True)
        params["w"].grad = np.zeros(1)
        opt.step(0.5)
        assert params["w"].data[0] == pytest.approx(2.0 - 0.5 * 0.1 * 2.0)

    def test_coupled_decay_enters_gradient(self):
        params = one_param([2.0])
        opt = Adamax(params, weight_decay=0.1, decay_filter=lambda name: True, coupled=True)
        params["w"].grad = np.zeros(1)
        opt.step(0.5)
        assert params["w"].data[0] == pytest.approx(1.5, abs=1e-7)

    def test_decay_filter(self):
        assert is_decayed("encoder.0.wq") and is_decayed("embed.semantic") and is_decayed("mixer.1.ch_w1")
        for name in ("encoder.0.ln1_gain", "encoder.0.bq", "encoder.1.ff_b2", "mixer.0.pa_b1", "mixer.0.ln2_bias"):
            assert not is_decayed(name)

    def test_missing_grad(self):
        opt = Adamax(one_param([1.0]))
        with pytest.raises(ag.ContractError):
            opt.step(0.1)


class TestSchedule:
    def test_endpoints(self):
        assert lr_schedule(0, 100, 0.01, 0.1) == 0.0
        assert lr_schedule(10, 100, 0.01, 0.1) == 0.01

    def test_closed_form(self):
        total, base, frac = 37, 0.02, 0.1
        warm = 4  # ceil(3.7)
        for step in (0, 1, 2, 3, 4, 5, 10, 20, 30, 36):
            expected = base * step / warm if step < warm else base * (total - step) / (total - warm)
            assert lr_schedule(step, total, base, frac) == expected

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            lr_schedule(100, 100, 0.01, 0.1)


class TestConfig:
    def test_defaults(self):
        c = TrainConfig()
        assert (c.d, c.n_encoder, c.n_mixer, c.k, c.batch_size, c.lr, c.weight_decay, c.max_epochs) == \
            (320, 3, 6, 50, 512, 0.01, 0.01, 300)
        assert (c.warmup_fraction, c.lam, c.gamma) == (0.1, 1.0, 1.0)

    @pytest.mark.parametrize("bad", [dict(warmup_fraction=0.0), dict(lam=-1.0), dict(gamma=1.5),
                                     dict(d=10, heads=4), dict(batch_size=0), dict(protocol="x")])
    def test_rejects(self, bad):
        with pytest.raises(ConfigError):
            TrainConfig(**bad)

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="bogus"):
            TrainConfig.from_dict({"bogus": 1})

    def test_eval_mask_auto(self):
        assert TrainConfig(gamma=1.0).mask_eval_queries
        assert not TrainConfig(gamma=0.5).mask_eval_queries
        assert TrainConfig(gamma=0.0, eval_query_mask="always").mask_eval_queries


def test_epoch_resampling_differs():
    vocabs = make_vocabs(121, 1, 5)
    index = build_index(np.array([[0, 0, i + 1, i % 5] for i in range(120)]), vocabs)
    rng = np.random.default_rng(0)
    q = np.array([[0, 0, 1, 4]])
    first = build_ece_batch(q, index, 10, True, seeds=draw_seeds(rng, 1))
    second = build_ece_batch(q, index, 10, True, seeds=draw_seeds(rng, 1))
    assert set(first.nb_entity[0]) != set(second.nb_entity[0])


@pytest.fixture(scope="module")
def periodic():
    return periodic_dataset()


def test_fit_is_deterministic_in_float64(periodic):
    split, vocabs = periodic
    runs = [fit(TrainConfig(**TINY), split, vocabs) for _ in range(2)]
    strip = lambda h: [{k: v for k, v in row.items() if k != "seconds"} for row in h]
    assert strip(runs[0].history) == strip(runs[1].history)
    for name, arr in runs[0].checkpoint.params.items():
        assert arr.tobytes() == runs[1].checkpoint.params[name].tobytes()


def test_fit_writes_metrics_log(periodic, tmp_path):
    split, vocabs = periodic
    fit(TrainConfig(**TINY), split, vocabs, metrics_log=tmp_path / "m.tsv")
    lines = (tmp_path / "m.tsv").read_text().splitlines()
    assert lines[0].startswith("epoch\tstep\ttrain_loss")
    assert len(lines) == 3


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_fit_surfaces_batch_of_numeric_failure(periodic):
    split, vocabs = periodic
    with pytest.raises(ag.NumericError, match=r"epoch 1, batch 0"):
        fit(TrainConfig(**{**TINY, "embed_std": 1e200}), split, vocabs)


def test_checkpoint_round_trip(periodic, tmp_path):
    split, vocabs = periodic
    result = fit(TrainConfig(**TINY), split, vocabs)
    path = save_checkpoint(result.checkpoint, tmp_path / "c.npz")
    loaded = load_checkpoint(path)
    assert loaded.config == result.checkpoint.config
    for name, arr in result.checkpoint.params.items():
        assert loaded.params[name].dtype == arr.dtype
        assert loaded.params[name].tobytes() == arr.tobytes()
    assert loaded.optimizer["t"] == result.checkpoint.optimizer["t"]

    queries = augment_reciprocal(split.test, vocabs)
    filters = FilterIndex(split.all_quadruples(), vocabs)

    def report(model, index):
        rep, _ = evaluate_queries(model, queries, index, filters=filters, seed=3)
        return report_json(rep, protocol="filtered", split="test", tie_policy="mean")

    assert report(result.model, build_index(split.train, vocabs)) == report(loaded.build_model(), loaded.neighbor_index())


def test_float32_checkpoint_keeps_precision(periodic, tmp_path):
    split, vocabs = periodic
    result = fit(TrainConfig(**{**TINY, "precision": "float32", "max_epochs": 1}), split, vocabs)
    loaded = load_checkpoint(save_checkpoint(result.checkpoint, tmp_path / "c.npz"))
    assert all(a.dtype == np.float32 for a in loaded.params.values())
    assert math.isfinite(result.best_mrr)
