import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import integrate

from ecechain import autograd as ag
from ecechain.autograd import Tensor

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def param(rng, *shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)


class TestPrimitives:
    def test_matmul_identity(self, rng):
        x = rng.normal(size=(3, 5))
        np.testing.assert_array_equal(ag.matmul(Tensor(np.eye(3)), Tensor(x)).data, x)

    def test_transpose_involution(self, rng):
        m = Tensor(rng.normal(size=(4, 7)))
        np.testing.assert_array_equal(ag.transpose(ag.transpose(m)).data, m.data)

    def test_mean_over_identical_rows(self):
        row = np.array([1.5, -2.0, 3.25])
        np.testing.assert_array_equal(ag.mean_over_rows(Tensor(np.tile(row, (3, 1)))).data, row)

    def test_matmul_shape_error_names_both_shapes(self):
        with pytest.raises(ag.ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
            ag.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))

    def test_add_shape_error(self):
        with pytest.raises(ag.ShapeError):
            ag.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4,))))

    def test_embedding_lookup_out_of_range(self):
        with pytest.raises(IndexError):
            ag.embedding_lookup(Tensor(np.zeros((4, 2))), [0, 4])

    def test_concat_rows(self, rng):
        a, b = rng.normal(size=(2, 3)), rng.normal(size=(1, 3))
        np.testing.assert_array_equal(ag.concat_rows([Tensor(a), Tensor(b)]).data, np.vstack([a, b]))

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_raises(self):
        with pytest.raises(ag.NumericError):
            ag.scale(Tensor(np.array([1e308])), 10.0)

    def test_fill_rows(self):
        vals = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
        fill = Tensor(np.array([9.0, 9.0]))
        out = ag.fill_rows(vals, [3, 0], 4, fill).data
        np.testing.assert_array_equal(out, [[3, 4], [9, 9], [9, 9], [1, 2]])


class TestSoftmax:
    def test_symmetric(self):
        np.testing.assert_array_equal(ag.softmax(Tensor(np.zeros(2))).data, [0.5, 0.5])

    def test_no_overflow(self):
        out = ag.softmax(Tensor(np.array([1000.0, 0.0]))).data
        assert out[0] == pytest.approx(1.0) and out[1] < 1e-300

    def test_high_precision_oracle(self, rng):
        x = rng.normal(scale=3.0, size=7)
        mpmath.mp.dps = 50
        exps = [mpmath.e ** mpmath.mpf(float(v)) for v in x]
        total = mpmath.fsum(exps)
        oracle = np.array([float(e / total) for e in exps])
        np.testing.assert_allclose(ag.softmax(Tensor(x)).data, oracle, rtol=0, atol=1e-12)

    @given(arrays(np.float64, (5, 6), elements=finite))
    @settings(max_examples=60, deadline=None)
    def test_rows_sum_to_one(self, x):
        p = ag.softmax(Tensor(x)).data
        assert (p >= 0).all()
        np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-6)

    def test_mask_excludes_entries(self):
        p = ag.softmax(Tensor(np.array([1.0, 5.0, 2.0])), mask=np.array([True, False, True])).data
        assert p[1] == 0.0
        assert p.sum() == pytest.approx(1.0)


class TestLayerNorm:
    def unit(self, n):
        return Tensor(np.ones(n)), Tensor(np.zeros(n))

    def test_constant_row_is_zero(self):
        out = ag.layer_norm(Tensor(np.full((1, 3), 7.0)), *self.unit(3)).data
        np.testing.assert_array_equal(out, np.zeros((1, 3)))

    def test_one_two_three(self):
        out = ag.layer_norm(Tensor(np.array([1.0, 2.0, 3.0])), *self.unit(3)).data
        assert abs(out.mean()) <= 1e-6
        assert out.var() == pytest.approx(1.0, abs=1e-4)

    def test_two_pass_oracle(self, rng):
        row = rng.normal(size=9)
        gain, bias = rng.normal(size=9), rng.normal(size=9)
        mu = sum(row) / len(row)
        var = sum((v - mu) ** 2 for v in row) / len(row)
        oracle = np.array([(v - mu) / math.sqrt(var + 1e-5) for v in row]) * gain + bias
        out = ag.layer_norm(Tensor(row), Tensor(gain), Tensor(bias)).data
        np.testing.assert_allclose(out, oracle, rtol=0, atol=1e-10)

    @given(arrays(np.float64, (4, 8), elements=st.floats(-100, 100)), st.floats(-1e3, 1e3))
    @settings(max_examples=60, deadline=None)
    def test_shift_invariance(self, x, c):
        g, b = self.unit(8)
        np.testing.assert_allclose(ag.layer_norm(Tensor(x + c), g, b).data,
                                   ag.layer_norm(Tensor(x), g, b).data, atol=1e-6)


class TestGelu:
    def test_zero(self):
        assert ag.gelu(Tensor(np.array(0.0))).data == 0.0

    def test_asymptote(self):
        assert abs(ag.gelu(Tensor(np.array(10.0))).data - 10.0) <= 1e-6

    def test_quadrature_oracle(self):
        phi, _ = integrate.quad(lambda t: math.exp(-t * t / 2) / math.sqrt(2 * math.pi), -np.inf, 1.0,
                                epsabs=1e-14, epsrel=1e-14)
        assert ag.gelu(Tensor(np.array(1.0))).data == pytest.approx(1.0 * phi, abs=1e-8)


class TestCrossEntropy:
    def test_uniform(self):
        for n in (2, 7, 100):
            assert ag.cross_entropy(Tensor(np.zeros(n)), 3 % n).item() == pytest.approx(math.log(n), abs=1e-9)

    def test_confident(self):
        logits = np.zeros(5)
        logits[2] = 1e4
        assert ag.cross_entropy(Tensor(logits), 2).item() == pytest.approx(0.0, abs=1e-12)

    def test_compositional_oracle(self, rng):
        logits = rng.normal(scale=2.0, size=11)
        mpmath.mp.dps = 50
        exps = [mpmath.e ** mpmath.mpf(float(v)) for v in logits]
        oracle = -float(mpmath.log(exps[4] / mpmath.fsum(exps)))
        assert ag.cross_entropy(Tensor(logits), 4).item() == pytest.approx(oracle, abs=1e-10)

    def test_target_out_of_range(self):
        with pytest.raises(IndexError):
            ag.cross_entropy(Tensor(np.zeros(3)), 3)

    @given(arrays(np.float64, 9, elements=finite), st.floats(-1e3, 1e3), st.integers(0, 8))
    @settings(max_examples=60, deadline=None)
    def test_shift_invariance(self, x, c, t):
        a = ag.cross_entropy(Tensor(x + c), t).item()
        b = ag.cross_entropy(Tensor(x), t).item()
        assert a == pytest.approx(b, abs=1e-9)
        assert a >= 0


class TestBackward:
    def test_non_scalar_rejected(self):
        with pytest.raises(ag.ContractError):
            ag.backward(Tensor(np.ones(3), requires_grad=True))

    def test_unused_param_gets_zero(self, rng):
        a, b = param(rng, 3), param(rng, 2)
        ag.backward(ag.sum(a * a), [a, b])
        np.testing.assert_array_equal(b.grad, np.zeros(2))
        np.testing.assert_allclose(a.grad, 2 * a.data)

    def test_shared_subexpression_accumulates(self, rng):
        x = param(rng, 4)
        y = x * x
        ag.backward(ag.sum(y + y))
        np.testing.assert_allclose(x.grad, 4 * x.data)

    def test_quadratic_grad_check(self):
        x = Tensor(np.array(3.0), requires_grad=True)
        rep = ag.grad_check(lambda: x * x, {"x": x})
        assert rep.max_rel_error <= 1e-8


OPS = {
    "matmul": lambda p: ag.sum(ag.matmul(p["a"], p["b"])),
    "batched_matmul": lambda p: ag.sum(ag.gelu(ag.matmul(p["c"], p["b"]))),
    "add_broadcast": lambda p: ag.sum(ag.gelu(p["a"] + p["v"])),
    "mul": lambda p: ag.sum(p["a"] * p["a2"]),
    "transpose": lambda p: ag.sum(ag.gelu(ag.transpose(p["a"]) @ p["a"])),
    "softmax": lambda p: ag.sum(ag.softmax(p["a"]) * p["a2"]),
    "log_softmax": lambda p: ag.sum(ag.log_softmax(p["a"]) * p["a2"]),
    "layer_norm": lambda p: ag.sum(ag.layer_norm(p["a"], p["g"], p["v"]) * p["a2"]),
    "gelu": lambda p: ag.sum(ag.gelu(p["a"])),
    "cross_entropy": lambda p: ag.cross_entropy(p["a"], [0, 3, 2]),
    "embedding": lambda p: ag.sum(ag.gelu(ag.embedding_lookup(p["a"], [[0, 2], [2, 1]]))),
    "concat_mean": lambda p: ag.sum(ag.gelu(ag.mean_over_rows(ag.concat_rows([p["a"], p["a2"]])))),
    "index": lambda p: ag.sum(ag.gelu(ag.index(p["c"], (..., 0, slice(None))))),
    "fill_rows": lambda p: ag.sum(ag.gelu(ag.fill_rows(p["a"], [1, 3, 4], 6, p["v"]))),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_every_op_passes_grad_check(name):
    rng = np.random.default_rng(7)
    params = {
        "a": param(rng, 3, 4), "a2": param(rng, 3, 4), "b": param(rng, 4, 2),
        "c": param(rng, 2, 3, 4), "v": param(rng, 4), "g": param(rng, 4),
    }
    rep = ag.grad_check(lambda: OPS[name](params), params, delta=1e-5)
    assert rep.passed, rep.per_param


def test_grad_check_requires_float64():
    x = Tensor(np.ones(2, dtype=np.float32), requires_grad=True)
    with pytest.raises(ag.ContractError):
        ag.grad_check(lambda: ag.sum(x), {"x": x})


def test_float32_is_preserved(rng):
    x = Tensor(rng.normal(size=(3, 4)).astype(np.float32))
    g = Tensor(np.ones(4, dtype=np.float32))
    out = ag.layer_norm(ag.gelu(ag.scale(x, 2.0)), g, g)
    assert out.dtype == np.float32
    assert ag.softmax(out).dtype == np.float32
